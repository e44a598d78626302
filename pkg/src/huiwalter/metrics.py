"""Evaluation metrics: balanced accuracy, accuracy, Rand index, trace MAE.

Only the evaluation harness calls the label-consuming functions here; the
estimators never import this module.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, InputError
from .model import ParamVector


def balanced_accuracy(alpha: float, beta: float) -> float:
    """Mean of sensitivity (1 - beta) and specificity (1 - alpha)."""
    for name, v in (("alpha", alpha), ("beta", beta)):
        if not 0.0 <= v <= 1.0:
            raise DomainError(f"{name}={v!r} outside [0, 1]")
    return ((1.0 - beta) + (1.0 - alpha)) / 2.0


def accuracy(labels, predictions) -> float:
    a = np.asarray(labels)
    b = np.asarray(predictions)
    if a.shape != b.shape or a.ndim != 1:
        raise InputError("labels and predictions must be 1-d sequences of equal length")
    if a.size < 1:
        raise InputError("accuracy needs at least one observation")
    return float(np.mean(a == b))


def _pairs(x: np.ndarray) -> int:
    x = x.astype(np.int64)
    return int(np.sum(x * (x - 1) // 2))


def rand_index(labels_a, labels_b) -> float:
    """Fraction of point pairs on which two partitions agree.

    Uses the confusion matrix: with n_ij the overlap counts and a_i, b_j its
    margins, agreeing pairs are C(N,2) + 2 sum C(n_ij,2) - sum C(a_i,2) - sum C(b_j,2).
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.ndim != 1 or a.shape != b.shape:
        raise InputError("partitions must be 1-d and of equal length")
    n = a.size
    if n < 2:
        raise InputError("the Rand index needs at least two points")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    kb = int(ib.max()) + 1
    joint = np.bincount(ia * kb + ib, minlength=(int(ia.max()) + 1) * kb)
    total = n * (n - 1) // 2
    agree = total + 2 * _pairs(joint) - _pairs(np.bincount(ia)) - _pairs(np.bincount(ib))
    return agree / total


def mae_tail(rows, truth: ParamVector, tail: int = 200) -> dict[str, float]:
    """Per-parameter mean |estimate - truth| over the last ``tail`` ok rows."""
    if tail < 1:
        raise InputError("tail must be positive")
    ok = [r for r in rows if r.ok]
    if len(ok) < tail:
        raise InputError(f"need {tail} ok rows, got {len(ok)}")
    est = np.array([r.theta + r.alpha + r.beta for r in ok[-tail:]], dtype=float)
    ref = truth.as_array()
    if est.shape[1] != ref.size:
        raise InputError("trace and truth have different parameter counts")
    mae = np.mean(np.abs(est - ref), axis=0)
    return dict(zip(truth.names(), mae.tolist()))


@dataclass
class TestScores:
    balanced_accuracy: float
    accuracy: float
    rand_index: float

    __test__ = False


@dataclass
class EvalReport:
    tests: list[TestScores]
    mae: dict[str, float]
    tail: int = 200

    def to_dict(self) -> dict:
        return {"tests": [asdict(t) for t in self.tests], "mae": dict(self.mae), "tail": self.tail}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls([TestScores(**t) for t in data["tests"]], dict(data["mae"]), int(data.get("tail", 200)))

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def evaluate(rows, truth: ParamVector, labels: Sequence[int], predictions, tail: int = 200) -> EvalReport:
    """Score the final trace estimates against labeled predictions.

    ``predictions`` has one row per event and one column per test.  Balanced
    accuracy comes from the last ok row's error rates; accuracy and Rand index
    compare each test's predictions to ``labels``.
    """
    preds = np.asarray(predictions)
    labels = np.asarray(labels)
    if preds.ndim != 2 or preds.shape[0] != labels.size:
        raise InputError("predictions must be an (events, tests) array matching the labels")
    if preds.shape[1] != truth.n_tests:
        raise InputError(f"truth has {truth.n_tests} tests, predictions have {preds.shape[1]}")
    mae = mae_tail(rows, truth, tail)
    last = [r for r in rows if r.ok][-1]
    if len(last.alpha) != preds.shape[1]:
        raise InputError("trace arity does not match the predictions")
    scores = [
        TestScores(
            balanced_accuracy=balanced_accuracy(last.alpha[j], last.beta[j]),
            accuracy=accuracy(labels, preds[:, j]),
            rand_index=rand_index(labels, preds[:, j]),
        )
        for j in range(preds.shape[1])
    ]
    return EvalReport(scores, mae, tail)


__all__ = [
    "EvalReport",
    "TestScores",
    "accuracy",
    "balanced_accuracy",
    "evaluate",
    "mae_tail",
    "rand_index",
]
