"""Gaussian-mixture latent populations (full covariances) fit by EM."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .errors import DegenerateDataError, HuiWalterError, InputError

MONOTONE_TOL = 1e-9


@dataclass
class MixtureModel:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, d)
    covariances: np.ndarray  # (k, d, d)
    log_likelihood: float = float("nan")
    n_iter: int = 0
    converged: bool = False
    history: list[float] = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def permuted(self, perm) -> "MixtureModel":
        """Component i of the result is component ``perm[i]`` of this model."""
        perm = list(perm)
        return MixtureModel(
            self.weights[perm].copy(),
            self.means[perm].copy(),
            self.covariances[perm].copy(),
            self.log_likelihood,
            self.n_iter,
            self.converged,
            list(self.history),
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "dim": self.dim,
                "weights": self.weights.tolist(),
                "means": self.means.tolist(),
                "covariances": self.covariances.tolist(),
                "log_likelihood": self.log_likelihood,
                "n_iter": self.n_iter,
                "converged": self.converged,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MixtureModel":
        data = json.loads(text)
        model = cls(
            np.array(data["weights"], dtype=float),
            np.array(data["means"], dtype=float).reshape(data["k"], data["dim"]),
            np.array(data["covariances"], dtype=float).reshape(data["k"], data["dim"], data["dim"]),
            data.get("log_likelihood", float("nan")),
            data.get("n_iter", 0),
            data.get("converged", False),
        )
        return model


@dataclass(frozen=True)
class Assignment:
    labels: np.ndarray
    responsibilities: np.ndarray


def _as_data(data) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] < 1:
        raise InputError("data must be an (observations, features) matrix")
    if not np.all(np.isfinite(x)):
        raise InputError("features must be finite")
    return x


def _log_densities(x: np.ndarray, model: MixtureModel) -> np.ndarray:
    """log(weight_j) + log N(x | mean_j, cov_j), shape (n, k)."""
    n, d = x.shape
    out = np.empty((n, model.k))
    for j in range(model.k):
        chol = linalg.cholesky(model.covariances[j], lower=True)
        inv = linalg.solve_triangular(chol, np.eye(d), lower=True)
        diff = x - model.means[j]
        # einsum keeps each row's arithmetic independent of the batch size
        z = np.einsum("ij,nj->ni", inv, diff)
        maha = np.einsum("ni,ni->n", z, z)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        out[:, j] = math.log(model.weights[j]) - 0.5 * (d * math.log(2 * math.pi) + logdet + maha)
    return out


def assign(model: MixtureModel, data) -> Assignment:
    """Posterior class probabilities; hard labels break ties toward the lower index."""
    x = _as_data(data)
    if x.shape[1] != model.dim:
        raise InputError(f"data has {x.shape[1]} features, model expects {model.dim}")
    logp = _log_densities(x, model)
    resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    resp /= resp.sum(axis=1, keepdims=True)
    return Assignment(labels=np.argmax(resp, axis=1), responsibilities=resp)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centers)[None]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total == 0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.array(centers)


def _m_step(x, resp, ridge):
    n, d = x.shape
    nk = resp.sum(axis=0)
    weights = nk / n
    means = (resp.T @ x) / nk[:, None]
    covs = np.empty((resp.shape[1], d, d))
    for j in range(resp.shape[1]):
        diff = x - means[j]
        cov = (resp[:, j, None] * diff).T @ diff / nk[j]
        covs[j] = 0.5 * (cov + cov.T) + (ridge / nk[j]) * np.eye(d)
    return weights, means, covs


def _objective(x, model, ridge):
    """Log-likelihood minus the ridge penalty that the M-step maximizes exactly."""
    logp = _log_densities(x, model)
    ll = float(logsumexp(logp, axis=1).sum())
    penalty = 0.0
    if ridge > 0:
        penalty = 0.5 * ridge * sum(np.trace(np.linalg.inv(c)) for c in model.covariances)
    return ll - penalty, ll, logp


def _run_em(x, model, ridge, max_iter, tol):
    obj, ll, logp = _objective(x, model, ridge)
    history = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        if np.any(resp.sum(axis=0) < 1e-8):
            break
        model = MixtureModel(*_m_step(x, resp, ridge))
        new_obj, ll, logp = _objective(x, model, ridge)
        if new_obj < history[-1] - MONOTONE_TOL * max(1.0, abs(history[-1])):
            raise HuiWalterError(f"EM objective decreased from {history[-1]!r} to {new_obj!r}")
        history.append(new_obj)
        if abs(new_obj - history[-2]) <= tol * max(1.0, abs(new_obj)):
            converged = True
            break
    model.log_likelihood = ll
    model.n_iter = it
    model.converged = converged
    model.history = history
    return model


def em_fit(
    data,
    k: int = 2,
    max_iter: int = 200,
    tol: float = 1e-6,
    restarts: int = 8,
    reg: float = 1e-6,
    seed: int = 0,
    init: MixtureModel | None = None,
) -> MixtureModel:
    """Fit a k-component full-covariance Gaussian mixture.

    Covariances are regularized by a ridge of ``reg * trace(cov(data)) / d``
    per observation, so EM maximizes a penalized likelihood and the
    penalized objective is checked to be non-decreasing at every iteration.
    ``init`` adds a warm-start candidate on top of the seeded restarts.
    """
    x = _as_data(data)
    n, d = x.shape
    if k < 1:
        raise InputError("k must be positive")
    if k > n:
        raise InputError(f"k={k} exceeds the number of observations {n}")
    if n < 10 * k:
        raise InputError(f"need at least {10 * k} observations for k={k}, got {n}")
    if np.all(x == x[0]):
        raise DegenerateDataError("all observations are identical")
    scale = np.trace(np.atleast_2d(np.cov(x, rowvar=False, bias=True))) / d
    ridge = reg * scale * n / k

    rng = np.random.default_rng(seed)
    candidates = []
    if init is not None:
        if init.k != k or init.dim != d:
            raise InputError("warm-start model does not match k and feature dimension")
        candidates.append(init)
    for _ in range(max(restarts, 0 if init is not None else 1)):
        centers = _kmeanspp(x, k, rng)
        labels = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
        resp = np.eye(k)[labels]
        if np.any(resp.sum(axis=0) == 0):
            continue
        candidates.append(MixtureModel(*_m_step(x, resp, ridge)))

    best = None
    for start in candidates:
        try:
            fitted = _run_em(x, start, ridge, max_iter, tol)
        except (np.linalg.LinAlgError, linalg.LinAlgError):
            continue
        if best is None or fitted.history[-1] > best.history[-1]:
            best = fitted
    if best is None:
        raise DegenerateDataError("every EM restart collapsed")
    return best


def match_labels(previous: MixtureModel, current: MixtureModel) -> list[int]:
    """Permutation of ``current`` that best lines its means up with ``previous``.

    ``perm[i]`` is the component of ``current`` matched to component i of
    ``previous``; ``current.permuted(perm)`` applies it.  Exhaustive search for
    k <= 4, greedy nearest pairs beyond.
    """
    if previous.k != current.k or previous.dim != current.dim:
        raise InputError("models differ in k or feature dimension")
    k = previous.k
    cost = ((previous.means[:, None, :] - current.means[None, :, :]) ** 2).sum(axis=2)
    if k <= 4:
        best = min(itertools.permutations(range(k)), key=lambda p: (sum(cost[i, p[i]] for i in range(k)), p))
        return list(best)
    perm = [-1] * k
    used = set()
    for flat in np.argsort(cost, axis=None, kind="stable"):
        i, j = divmod(int(flat), k)
        if perm[i] == -1 and j not in used:
            perm[i] = j
            used.add(j)
    return perm
