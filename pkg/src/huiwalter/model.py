"""Conditional-independence latent class model and its likelihood.

Each population i has prevalence theta_i.  Test t has false-positive rate
alpha_t and false-negative rate beta_t, shared by all populations.  A joint
outcome pattern has probability

    theta_i * prod_t s_t + (1 - theta_i) * prod_t r_t

with s_t = 1 - beta_t (positive) or beta_t (negative) and r_t = alpha_t
(positive) or 1 - alpha_t (negative).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .errors import DomainError, InputError, NonIdentifiableError, SingularInformationError
from .tables import ContingencyTable, pattern_bits

EPS = 1e-9


@dataclass(frozen=True)
class ParamVector:
    theta: tuple[float, ...]
    alpha: tuple[float, ...]
    beta: tuple[float, ...]

    def __post_init__(self):
        for name in ("theta", "alpha", "beta"):
            values = tuple(float(v) for v in getattr(self, name))
            object.__setattr__(self, name, values)
            for v in values:
                if not (0.0 <= v <= 1.0):
                    raise DomainError(f"{name} value {v!r} outside [0, 1]")
        if len(self.alpha) != len(self.beta):
            raise InputError("alpha and beta must have one entry per test")

    @property
    def n_populations(self) -> int:
        return len(self.theta)

    @property
    def n_tests(self) -> int:
        return len(self.alpha)

    def as_array(self) -> np.ndarray:
        return np.array(self.theta + self.alpha + self.beta)

    @classmethod
    def from_array(cls, x, n_populations: int, n_tests: int) -> "ParamVector":
        x = np.asarray(x, dtype=float)
        if x.size != n_populations + 2 * n_tests:
            raise InputError("parameter vector has the wrong length")
        m, n = n_populations, n_tests
        return cls(tuple(x[:m]), tuple(x[m : m + n]), tuple(x[m + n :]))

    def names(self) -> list[str]:
        return param_names(self.n_populations, self.n_tests)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names(), self.as_array().tolist()))

    def relabeled(self) -> "ParamVector":
        """Swap the roles of the two latent classes.

        theta -> 1 - theta, alpha -> 1 - beta, beta -> 1 - alpha.  Cell
        probabilities, and hence the likelihood of any table, are unchanged.
        """
        return ParamVector(
            tuple(1.0 - t for t in self.theta),
            tuple(1.0 - b for b in self.beta),
            tuple(1.0 - a for a in self.alpha),
        )

    def complemented(self) -> "ParamVector":
        """theta -> 1 - theta with alpha and beta exchanged.

        Equivalent to negating every test outcome: the cell probabilities of
        the result are those of ``self`` read in bit-flipped order.
        """
        return ParamVector(tuple(1.0 - t for t in self.theta), self.beta, self.alpha)

    def youden(self) -> np.ndarray:
        return 1.0 - np.array(self.alpha) - np.array(self.beta)

    def satisfies_convention(self) -> bool:
        return bool(np.all(self.youden() > 0))

    def canonical(self) -> "ParamVector":
        """Orient the latent classes so the tests are, jointly, better than chance."""
        return self.relabeled() if self.youden().sum() < 0 else self


def param_names(n_populations: int, n_tests: int) -> list[str]:
    return (
        [f"theta_{i + 1}" for i in range(n_populations)]
        + [f"alpha_{t + 1}" for t in range(n_tests)]
        + [f"beta_{t + 1}" for t in range(n_tests)]
    )


def _cell_matrix(theta, alpha, beta, bits) -> np.ndarray:
    sens = np.where(bits, 1.0 - beta, beta).prod(axis=1)
    fpr = np.where(bits, alpha, 1.0 - alpha).prod(axis=1)
    return theta[:, None] * sens[None, :] + (1.0 - theta)[:, None] * fpr[None, :]


def cell_probability_matrix(params: ParamVector) -> np.ndarray:
    """Cell probabilities for every population, shape ``(m, 2**n_tests)``."""
    bits = pattern_bits(params.n_tests)
    return _cell_matrix(np.array(params.theta), np.array(params.alpha), np.array(params.beta), bits)


def cell_probabilities(params: ParamVector, population: int = 0) -> np.ndarray:
    if params.n_tests < 2:
        raise InputError("at least two tests are required")
    if not 0 <= population < params.n_populations:
        raise InputError(f"population index {population} out of range")
    return cell_probability_matrix(params)[population]


def _loglik_from_probs(counts: np.ndarray, probs: np.ndarray) -> float:
    counts = counts.astype(np.float64)
    pos = counts > 0
    if np.any(probs[pos] <= 0.0):
        return -math.inf
    return float(np.sum(counts[pos] * np.log(probs[pos])))


def log_likelihood(params: ParamVector, table: ContingencyTable) -> float:
    """Product-multinomial log-likelihood (multinomial coefficients dropped)."""
    if params.n_populations != table.n_populations or params.n_tests != table.n_tests:
        raise InputError("parameter arity does not match the table")
    return _loglik_from_probs(table.counts, cell_probability_matrix(params))


@dataclass
class MLEResult:
    params: ParamVector
    log_likelihood: float
    converged: bool
    # best log-likelihood seen after each restart (non-decreasing)
    history: list[float] = field(default_factory=list)


def _objective(table: ContingencyTable):
    m, n = table.n_populations, table.n_tests
    bits = pattern_bits(n)
    counts = table.counts.astype(np.float64)
    pos = counts > 0
    weight = counts[pos]
    scale = 1.0 / max(float(counts.sum()), 1.0)

    def negloglik(x):
        x = np.clip(x, EPS, 1.0 - EPS)
        probs = _cell_matrix(x[:m], x[m : m + n], x[m + n :], bits)
        return -scale * float(np.sum(weight * np.log(probs[pos])))

    return negloglik


def mle_fit(table: ContingencyTable, restarts: int = 16, seed: int = 0) -> MLEResult:
    """Maximum-likelihood fit by multi-start Nelder-Mead inside the unit hypercube.

    Starts come from a scrambled Sobol sequence seeded by ``seed``.  Each
    start is polished by re-running the simplex from its own optimum until the
    objective stops moving.
    """
    if table.n_tests < 2:
        raise InputError("at least two tests are required")
    if table.n_populations < 2:
        raise NonIdentifiableError("a single population cannot identify prevalence and error rates")
    if np.any(table.totals() == 0):
        raise InputError("every population needs at least one observation")

    m, n = table.n_populations, table.n_tests
    dim = m + 2 * n
    f = _objective(table)
    bounds = [(EPS, 1.0 - EPS)] * dim
    restarts = max(restarts, 1)
    sobol = qmc.Sobol(dim, scramble=True, seed=seed).random_base2(math.ceil(math.log2(restarts)))
    starts = 0.05 + 0.9 * sobol[:restarts]
    options = {"xatol": 1e-10, "fatol": 1e-15, "maxiter": 40_000, "maxfev": 80_000, "adaptive": True}

    baseline = f(np.full(dim, 0.5))
    best_x, best_f = None, math.inf
    history = []
    for x0 in starts:
        x, fx = x0, f(x0)
        for _ in range(20):
            res = optimize.minimize(f, x, method="Nelder-Mead", bounds=bounds, options=options)
            improved = fx - res.fun
            x, fx = res.x, res.fun
            if improved < 1e-13:
                break
        if fx < best_f:
            best_x, best_f = np.clip(x, EPS, 1.0 - EPS), fx
        history.append(-best_f)

    # the objective is scaled to per-observation units; ignore rounding-level gains
    converged = best_f < baseline - 1e-12
    if not converged:
        warnings.warn("no restart improved on the uniform starting point", RuntimeWarning, stacklevel=2)
    params = ParamVector.from_array(best_x, m, n).canonical()
    scale = max(float(table.counts.astype(np.float64).sum()), 1.0)
    return MLEResult(
        params=params,
        log_likelihood=log_likelihood(params, table),
        converged=converged,
        history=[h * scale for h in history],
    )


@dataclass
class InformationSummary:
    information: np.ndarray
    covariance: np.ndarray
    standard_errors: np.ndarray
    names: list[str]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.standard_errors.tolist()))


def observed_information(params: ParamVector, table: ContingencyTable, rel_step: float = 1e-4) -> InformationSummary:
    """Finite-difference Hessian of the negative log-likelihood and its inverse."""
    x0 = params.as_array()
    if np.any(x0 <= 0.0) or np.any(x0 >= 1.0):
        raise DomainError("observed information needs parameters strictly inside (0, 1)")
    m, n = params.n_populations, params.n_tests
    bits = pattern_bits(n)
    counts = table.counts.astype(np.float64)

    def nll(x):
        probs = _cell_matrix(x[:m], x[m : m + n], x[m + n :], bits)
        return -_loglik_from_probs(counts, probs)

    dim = x0.size
    h = rel_step * np.minimum(x0, 1.0 - x0)
    hess = np.empty((dim, dim))
    f0 = nll(x0)
    for i in range(dim):
        ei = np.zeros(dim)
        ei[i] = h[i]
        hess[i, i] = (nll(x0 + ei) - 2.0 * f0 + nll(x0 - ei)) / h[i] ** 2
        for j in range(i + 1, dim):
            ej = np.zeros(dim)
            ej[j] = h[j]
            val = (nll(x0 + ei + ej) - nll(x0 + ei - ej) - nll(x0 - ei + ej) + nll(x0 - ei - ej)) / (4.0 * h[i] * h[j])
            hess[i, j] = hess[j, i] = val
    if not np.all(np.isfinite(hess)):
        raise SingularInformationError("information matrix has non-finite entries")
    if np.linalg.cond(hess) > 1e12:
        raise SingularInformationError("information matrix is singular")
    cov = np.linalg.inv(hess)
    cov = 0.5 * (cov + cov.T)
    diag = np.diag(cov)
    se = np.sqrt(np.where(diag >= 0, diag, np.nan))
    return InformationSummary(hess, cov, se, param_names(m, n))


def refine_mle(table: ContingencyTable, start: ParamVector) -> tuple[ParamVector, float]:
    """Local likelihood maximization inside the unit hypercube from ``start``.

    Used when a closed-form root lands just outside the hypercube; the
    constrained optimum then sits on the boundary next to it.
    """
    m, n = table.n_populations, table.n_tests
    f = _objective(table)
    x0 = np.clip(start.as_array(), EPS, 1.0 - EPS)
    res = optimize.minimize(f, x0, method="L-BFGS-B", bounds=[(0.0, 1.0)] * x0.size)
    x = res.x if res.fun <= f(x0) else x0
    params = ParamVector.from_array(np.clip(x, 0.0, 1.0), m, n).canonical()
    return params, log_likelihood(params, table)
