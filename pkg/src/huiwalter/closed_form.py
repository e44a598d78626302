"""Closed-form estimates for two tests observed in two populations.

With proportions x_i = g_i/n_i (test 1 positive), y_i = e_i/n_i (test 2
positive) and z_i = a_i/n_i (both positive), the six parameters are the
roots of a quadratic whose discriminant is

    F^2 = (x1 y2 - x2 y1 + z1 - z2)^2 - 4 (x1 - x2)(z1 y2 - z2 y1).

The two signs of F give the two labelings of the latent classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ComplexDiscriminantError,
    DegenerateDenominatorError,
    EmptyPopulationError,
    ImplausibleSolutionError,
    InputError,
    ZeroDiscriminantError,
)
from .model import ParamVector, log_likelihood
from .tables import ContingencyTable

EPS_F = 1e-9
PLAUSIBLE_TOL = 1e-9


@dataclass(frozen=True)
class ClosedFormResult:
    params: ParamVector
    f_value: float
    candidate_count: int
    plausible: bool = True


@dataclass(frozen=True)
class _Proportions:
    x1: float
    x2: float
    y1: float
    y2: float
    z1: float
    z2: float
    d1: float
    d2: float


def _proportions(table: ContingencyTable) -> _Proportions:
    if table.n_tests != 2 or table.n_populations != 2:
        raise InputError("the closed form needs exactly two tests and two populations")
    counts = table.counts.astype(np.float64)
    n = counts.sum(axis=1)
    if np.any(n <= 0):
        raise EmptyPopulationError("both populations need at least one observation")
    (a1, b1, c1, d1), (a2, b2, c2, d2) = counts
    n1, n2 = n
    return _Proportions(
        x1=(a1 + b1) / n1, x2=(a2 + b2) / n2,
        y1=(a1 + c1) / n1, y2=(a2 + c2) / n2,
        z1=a1 / n1, z2=a2 / n2,
        d1=d1 / n1, d2=d2 / n2,
    )


def _radicand(p: _Proportions) -> float:
    return (p.x1 * p.y2 - p.x2 * p.y1 + p.z1 - p.z2) ** 2 - 4.0 * (p.x1 - p.x2) * (p.z1 * p.y2 - p.z2 * p.y1)


def discriminant(table: ContingencyTable, eps: float = EPS_F) -> float:
    """Return |F|; raise when it is complex or numerically zero."""
    rad = _radicand(_proportions(table))
    if rad < -(eps**2):
        raise ComplexDiscriminantError(f"discriminant is complex (radicand {rad:.3g})")
    magnitude = math.sqrt(max(rad, 0.0))
    if magnitude < eps:
        raise ZeroDiscriminantError("discriminant is zero; the populations are indistinguishable")
    return magnitude


def _estimates(p: _Proportions, F: float) -> np.ndarray:
    """(theta1, theta2, alpha1, alpha2, beta1, beta2) for one signed root F."""
    dx = p.x1 - p.x2
    dy = p.y1 - p.y2
    dz = p.z1 - p.z2
    h1, h2 = 1.0 - p.x1, 1.0 - p.x2
    f1, f2 = 1.0 - p.y1, 1.0 - p.y2
    alpha1 = ((p.x2 * p.y1 - p.x1 * p.y2) + dz - F) / (2.0 * dy)
    alpha2 = ((p.x1 * p.y2 - p.x2 * p.y1) + dz - F) / (2.0 * dx)
    beta1 = ((h1 * f2 - f1 * h2) + p.d2 - p.d1 - F) / (2.0 * dy)
    beta2 = ((f1 * h2 - h1 * f2) + p.d2 - p.d1 - F) / (2.0 * dx)
    theta1 = 0.5 + (p.x1 * dy + p.y1 * dx - dz) / (2.0 * F)
    theta2 = 0.5 + (p.x2 * dy + p.y2 * dx - dz) / (2.0 * F)
    return np.array([theta1, theta2, alpha1, alpha2, beta1, beta2])


def estimate_closed_form(table: ContingencyTable, eps: float = EPS_F, tol: float = PLAUSIBLE_TOL) -> ClosedFormResult:
    """Evaluate both roots and keep the most likely plausible one.

    A root is plausible when all six estimates fall in [-tol, 1 + tol] and,
    once clamped to [0, 1] and oriented, every test beats chance
    (alpha_t + beta_t < 1).  Plausible roots are ranked by log-likelihood on
    ``table``.
    """
    props = _proportions(table)
    magnitude = discriminant(table, eps)
    if abs(props.x1 - props.x2) < eps or abs(props.y1 - props.y2) < eps:
        raise DegenerateDenominatorError("a test has identical positive rates in both populations")

    raw = []
    plausible = []
    for F in (magnitude, -magnitude):
        est = _estimates(props, F)
        raw.append(est)
        if not np.all(np.isfinite(est)) or np.any(est < -tol) or np.any(est > 1.0 + tol):
            continue
        est = np.clip(est, 0.0, 1.0)
        params = ParamVector((est[0], est[1]), (est[2], est[3]), (est[4], est[5]))
        oriented = params.canonical()
        if not oriented.satisfies_convention():
            # one test would have to be worse than chance
            continue
        plausible.append((log_likelihood(oriented, table), oriented is params, oriented, F))
    if not plausible:
        raise ImplausibleSolutionError(
            "no root of the closed form lies inside the unit hypercube",
            candidates=raw,
            f_values=(magnitude, -magnitude),
        )
    # The two roots are relabelings of one another, so their likelihoods
    # usually tie up to rounding; on a tie keep the root that needed no relabeling.
    top = max(c[0] for c in plausible)
    tied = [c for c in plausible if c[0] >= top - 1e-9 * max(1.0, abs(top))]
    best = max(tied, key=lambda c: c[1])
    return ClosedFormResult(params=best[2], f_value=best[3], candidate_count=len(plausible))
