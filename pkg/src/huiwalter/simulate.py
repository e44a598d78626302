"""Synthetic prediction streams and tables with known parameters."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import ParamVector, cell_probability_matrix
from .stream import StreamEvent
from .tables import ContingencyTable


@dataclass(frozen=True)
class PopulationSpec:
    id: str
    theta: float
    weight: float = 1.0
    mean: tuple[float, ...] | None = None
    cov: tuple[tuple[float, ...], ...] | None = None


@dataclass(frozen=True)
class ClassifierSpec:
    alpha: float
    beta: float


@dataclass(frozen=True)
class Drift:
    step: int
    theta: tuple[float, ...]


@dataclass(frozen=True)
class ScenarioSpec:
    populations: tuple[PopulationSpec, ...]
    tests: tuple[ClassifierSpec, ...]
    n_events: int = 1000
    drift: Drift | None = None
    seed: int = 0
    # emit events without population ids (features must be given)
    latent: bool = False

    def __post_init__(self):
        errors = self.validation_errors()
        if errors:
            raise ConfigError("invalid scenario: " + "; ".join(errors))

    def validation_errors(self) -> list[str]:
        errs = []
        if len(self.populations) < 1:
            errs.append("populations: at least one required")
        if len(self.tests) < 2:
            errs.append("tests: at least two required")
        ids = [p.id for p in self.populations]
        if len(set(ids)) != len(ids):
            errs.append("populations: duplicate ids")
        for p in self.populations:
            if not 0.0 <= p.theta <= 1.0:
                errs.append(f"populations[{p.id}].theta: outside [0, 1]")
            if not p.weight > 0:
                errs.append(f"populations[{p.id}].weight: must be positive")
        dims = {len(p.mean) for p in self.populations if p.mean is not None}
        if len(dims) > 1:
            errs.append("populations.mean: feature dimensions differ")
        if self.latent and any(p.mean is None for p in self.populations):
            errs.append("latent: every population needs a feature mean")
        for j, t in enumerate(self.tests):
            if not 0.0 <= t.alpha <= 1.0:
                errs.append(f"tests[{j}].alpha: outside [0, 1]")
            if not 0.0 <= t.beta <= 1.0:
                errs.append(f"tests[{j}].beta: outside [0, 1]")
            if t.alpha + t.beta >= 1.0:
                errs.append(f"tests[{j}]: alpha + beta must be below 1")
        if self.n_events < 0:
            errs.append("n_events: must be non-negative")
        if self.drift is not None:
            if len(self.drift.theta) != len(self.populations):
                errs.append("drift.theta: one value per population required")
            if any(not 0.0 <= v <= 1.0 for v in self.drift.theta):
                errs.append("drift.theta: outside [0, 1]")
        return errs

    @property
    def weights(self) -> np.ndarray:
        w = np.array([p.weight for p in self.populations], dtype=float)
        return w / w.sum()

    def params(self, after_drift: bool = False) -> ParamVector:
        theta = tuple(p.theta for p in self.populations)
        if after_drift and self.drift is not None:
            theta = tuple(self.drift.theta)
        return ParamVector(theta, tuple(t.alpha for t in self.tests), tuple(t.beta for t in self.tests))

    def sorted_params(self, after_drift: bool = False) -> ParamVector:
        """Parameters with populations in sorted-id order (the table convention)."""
        p = self.params(after_drift)
        order = np.argsort([q.id for q in self.populations], kind="stable")
        return ParamVector(tuple(p.theta[i] for i in order), p.alpha, p.beta)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        try:
            pops = tuple(
                PopulationSpec(
                    id=str(p["id"]),
                    theta=float(p["theta"]),
                    weight=float(p.get("weight", 1.0)),
                    mean=tuple(float(v) for v in p["mean"]) if p.get("mean") is not None else None,
                    cov=tuple(tuple(float(v) for v in row) for row in p["cov"]) if p.get("cov") is not None else None,
                )
                for p in data["populations"]
            )
            tests = tuple(ClassifierSpec(float(t["alpha"]), float(t["beta"])) for t in data["tests"])
            drift = data.get("drift")
            if drift is not None:
                drift = Drift(int(drift["step"]), tuple(float(v) for v in drift["theta"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed scenario: {exc!r}") from None
        return cls(
            populations=pops,
            tests=tests,
            n_events=int(data.get("n_events", 1000)),
            drift=drift,
            seed=int(data.get("seed", 0)),
            latent=bool(data.get("latent", False)),
        )

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"scenario is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "populations": [
                {"id": p.id, "theta": p.theta, "weight": p.weight, "mean": list(p.mean) if p.mean else None,
                 "cov": [list(r) for r in p.cov] if p.cov else None}
                for p in self.populations
            ],
            "tests": [{"alpha": t.alpha, "beta": t.beta} for t in self.tests],
            "n_events": self.n_events,
            "drift": {"step": self.drift.step, "theta": list(self.drift.theta)} if self.drift else None,
            "seed": self.seed,
            "latent": self.latent,
        }


def generate(spec: ScenarioSpec) -> list[StreamEvent]:
    """Draw ``spec.n_events`` labeled events from the conditional-independence model."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_events
    n_tests = len(spec.tests)
    pops = rng.choice(len(spec.populations), size=n, p=spec.weights)
    theta = np.array([p.theta for p in spec.populations])
    theta_t = np.broadcast_to(theta, (n, theta.size)).copy()
    if spec.drift is not None:
        theta_t[spec.drift.step :] = spec.drift.theta
    labels = rng.random(n) < theta_t[np.arange(n), pops]
    alpha = np.array([t.alpha for t in spec.tests])
    beta = np.array([t.beta for t in spec.tests])
    p_pos = np.where(labels[:, None], 1.0 - beta[None, :], alpha[None, :])
    preds = rng.random((n, n_tests)) < p_pos

    features = [None] * n
    if any(p.mean is not None for p in spec.populations):
        dim = len(next(p.mean for p in spec.populations if p.mean is not None))
        feats = np.zeros((n, dim))
        for j, p in enumerate(spec.populations):
            rows = np.flatnonzero(pops == j)
            mean = np.zeros(dim) if p.mean is None else np.array(p.mean)
            cov = np.eye(dim) if p.cov is None else np.array(p.cov)
            feats[rows] = rng.multivariate_normal(mean, cov, size=rows.size, method="cholesky")
        features = [tuple(row) for row in feats.tolist()]

    return [
        StreamEvent(
            id=str(k),
            preds=tuple(int(v) for v in preds[k]),
            features=features[k],
            population=None if spec.latent else spec.populations[pops[k]].id,
            label=int(labels[k]),
        )
        for k in range(n)
    ]


def expected_table(spec: ScenarioSpec, n_per_population: float) -> ContingencyTable:
    """Noiseless table: each population's cells are ``n * cell_probabilities``.

    Populations are listed in sorted-id order, matching :func:`tables.tabulate`.
    """
    params = spec.sorted_params()
    probs = cell_probability_matrix(params)
    ids = sorted(p.id for p in spec.populations)
    return ContingencyTable(len(spec.tests), ids, probs * float(n_per_population))


def sample_table(spec: ScenarioSpec, n_per_population: int, seed: int) -> ContingencyTable:
    """Multinomial draw of ``n_per_population`` events per population."""
    rng = np.random.default_rng(seed)
    probs = cell_probability_matrix(spec.sorted_params())
    ids = sorted(p.id for p in spec.populations)
    counts = np.stack([rng.multinomial(n_per_population, row / row.sum()) for row in probs])
    return ContingencyTable(len(spec.tests), ids, counts)


def scenario(theta, alpha, beta, n_events: int = 1000, seed: int = 0, weights=None, means=None, latent=False) -> ScenarioSpec:
    """Shorthand for building a :class:`ScenarioSpec` from parameter lists."""
    k = len(theta)
    weights = weights or [1.0] * k
    means = means or [None] * k
    ids = [chr(ord("A") + i) for i in range(k)]
    return ScenarioSpec(
        populations=tuple(
            PopulationSpec(ids[i], theta[i], weights[i], tuple(means[i]) if means[i] is not None else None) for i in range(k)
        ),
        tests=tuple(ClassifierSpec(a, b) for a, b in zip(alpha, beta)),
        n_events=n_events,
        seed=seed,
        latent=latent,
    )
