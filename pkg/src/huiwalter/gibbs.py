"""Gibbs sampling for prevalence and test error rates with Beta priors.

Each sweep imputes, per population and outcome cell, how many of the cell's
observations are truly positive, then draws prevalences, sensitivities and
specificities from their conjugate Beta full conditionals.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import ConfigError, HuiWalterError, InputError, InsufficientSamplesError
from .model import ParamVector, param_names
from .tables import ContingencyTable, pattern_bits

CLIP = 1e-12


@dataclass(frozen=True)
class GibbsConfig:
    iterations: int = 20_000
    burn_in: int = 5_000
    thinning: int = 1
    chains: int = 4
    prior_sensitivity: tuple[float, float] = (1.0, 1.0)
    prior_specificity: tuple[float, float] = (1.0, 1.0)
    prior_prevalence: tuple[float, float] = (1.0, 1.0)
    seed: int = 0
    # "chain": orient each chain as a whole; "sample": orient every draw
    relabel: str = "chain"

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ConfigError("need 0 <= burn_in < iterations")
        if self.thinning < 1 or self.chains < 1:
            raise ConfigError("thinning and chains must be positive")
        for prior in (self.prior_sensitivity, self.prior_specificity, self.prior_prevalence):
            if len(prior) != 2 or min(prior) <= 0:
                raise ConfigError(f"Beta prior hyperparameters must be positive, got {prior}")
        if self.relabel not in ("chain", "sample"):
            raise ConfigError(f"unknown relabel mode {self.relabel!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def retained_per_chain(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thinning))


@dataclass(frozen=True)
class ParamSummary:
    mean: float
    sd: float
    ci_low: float
    ci_high: float
    rhat: float


@dataclass
class PosteriorSummary:
    params: dict[str, ParamSummary]
    n_samples: int

    def means(self, n_populations: int, n_tests: int) -> ParamVector:
        names = param_names(n_populations, n_tests)
        return ParamVector.from_array([self.params[k].mean for k in names], n_populations, n_tests)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "params": {k: vars(v).copy() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PosteriorSummary":
        return cls({k: ParamSummary(**v) for k, v in data["params"].items()}, data["n_samples"])


@dataclass
class GibbsResult:
    summary: PosteriorSummary
    samples: np.ndarray  # (chains, draws, params)
    names: list[str]
    weakly_identified: bool = False
    flipped_chains: list[int] = field(default_factory=list)

    @property
    def n_populations(self) -> int:
        return sum(n.startswith("theta_") for n in self.names)

    @property
    def n_tests(self) -> int:
        return sum(n.startswith("alpha_") for n in self.names)

    def means(self) -> ParamVector:
        return self.summary.means(self.n_populations, self.n_tests)

    def dump_csv(self, fh=None) -> str | None:
        """Write retained draws as ``chain,iter,param,value`` rows."""
        buf = io.StringIO() if fh is None else fh
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["chain", "iter", "param", "value"])
        for c in range(self.samples.shape[0]):
            for k in range(self.samples.shape[1]):
                for j, name in enumerate(self.names):
                    writer.writerow([c, k, name, repr(float(self.samples[c, k, j]))])
        return buf.getvalue() if fh is None else None


@numba.njit(cache=True)
def _run_chain(rng, counts, bits, iterations, burn_in, thinning, priors, theta0, sens0, spec0):
    m, n_cells = counts.shape
    n_tests = bits.shape[1]
    n_keep = (iterations - burn_in + thinning - 1) // thinning
    out = np.empty((n_keep, m + 2 * n_tests))
    theta = theta0.copy()
    sens = sens0.copy()
    spec = spec0.copy()
    ps = np.empty(n_cells)
    pr = np.empty(n_cells)
    tp_pos = np.empty(n_tests)
    tp_neg = np.empty(n_tests)
    tn_pos = np.empty(n_tests)
    tn_neg = np.empty(n_tests)
    keep = 0
    for it in range(iterations):
        for c in range(n_cells):
            s = 1.0
            r = 1.0
            for t in range(n_tests):
                if bits[c, t]:
                    s *= sens[t]
                    r *= 1.0 - spec[t]
                else:
                    s *= 1.0 - sens[t]
                    r *= spec[t]
            ps[c] = s
            pr[c] = r
        tp_pos[:] = 0.0
        tp_neg[:] = 0.0
        tn_pos[:] = 0.0
        tn_neg[:] = 0.0
        for i in range(m):
            pos_total = 0.0
            n_total = 0.0
            for c in range(n_cells):
                n_ic = counts[i, c]
                if n_ic == 0:
                    continue
                num = theta[i] * ps[c]
                q = num / (num + (1.0 - theta[i]) * pr[c])
                y = float(rng.binomial(n_ic, q))
                neg = n_ic - y
                pos_total += y
                n_total += n_ic
                for t in range(n_tests):
                    if bits[c, t]:
                        tp_pos[t] += y
                        tn_pos[t] += neg
                    else:
                        tp_neg[t] += y
                        tn_neg[t] += neg
            theta[i] = min(max(rng.beta(priors[0, 0] + pos_total, priors[0, 1] + n_total - pos_total), 1e-12), 1.0 - 1e-12)
        for t in range(n_tests):
            sens[t] = min(max(rng.beta(priors[1, 0] + tp_pos[t], priors[1, 1] + tp_neg[t]), 1e-12), 1.0 - 1e-12)
            spec[t] = min(max(rng.beta(priors[2, 0] + tn_neg[t], priors[2, 1] + tn_pos[t]), 1e-12), 1.0 - 1e-12)
        if it >= burn_in and (it - burn_in) % thinning == 0:
            for i in range(m):
                out[keep, i] = theta[i]
            for t in range(n_tests):
                out[keep, m + t] = 1.0 - spec[t]
                out[keep, m + n_tests + t] = 1.0 - sens[t]
            keep += 1
    return out


def _chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chain,))))


def _relabel(draws: np.ndarray, m: int, n: int) -> np.ndarray:
    out = np.empty_like(draws)
    out[..., :m] = 1.0 - draws[..., :m]
    out[..., m : m + n] = 1.0 - draws[..., m + n :]
    out[..., m + n :] = 1.0 - draws[..., m : m + n]
    return out


def _integer_counts(table: ContingencyTable) -> np.ndarray:
    if table.is_integer:
        return table.counts.astype(np.int64)
    return np.rint(table.counts).astype(np.int64)


def gibbs_fit(table: ContingencyTable, config: GibbsConfig | None = None) -> GibbsResult:
    """Run ``config.chains`` independent chains and summarize the pooled draws.

    Real-valued (expected) tables are rounded to integer counts.  Chain c
    draws from its own generator derived from ``(seed, c)``, so results do
    not depend on the order chains are run.
    """
    config = config or GibbsConfig()
    if table.n_tests < 2:
        raise InputError("at least two tests are required")
    m, n = table.n_populations, table.n_tests
    counts = _integer_counts(table)
    bits = pattern_bits(n).astype(np.uint8)
    priors = np.array([config.prior_prevalence, config.prior_sensitivity, config.prior_specificity], dtype=float)

    chains = []
    for c in range(config.chains):
        rng = _chain_rng(config.seed, c)
        theta0 = rng.uniform(0.2, 0.8, size=m)
        sens0 = rng.uniform(0.6, 0.95, size=n)
        spec0 = rng.uniform(0.6, 0.95, size=n)
        draws = _run_chain(rng, counts, bits, config.iterations, config.burn_in, config.thinning, priors, theta0, sens0, spec0)
        if not np.all(np.isfinite(draws)):
            raise HuiWalterError("sampler produced non-finite draws")
        chains.append(draws)
    samples = np.stack(chains)

    flipped = []
    youden = 1.0 - samples[..., m : m + n] - samples[..., m + n :]
    if config.relabel == "sample":
        wrong = youden.sum(axis=-1) < 0
        samples = np.where(wrong[..., None], _relabel(samples, m, n), samples)
    else:
        for c in range(samples.shape[0]):
            if youden[c].sum(axis=-1).mean() < 0:
                samples[c] = _relabel(samples[c], m, n)
                flipped.append(c)

    names = param_names(m, n)
    return GibbsResult(
        summary=summarize(samples, names),
        samples=samples,
        names=names,
        weakly_identified=m < 2,
        flipped_chains=flipped,
    )


def split_rhat(chains: np.ndarray) -> float:
    """Potential scale reduction on split chains, ``chains`` shaped (chains, draws)."""
    chains = np.asarray(chains, dtype=float)
    half = chains.shape[1] // 2
    if half < 2:
        return float("nan")
    parts = np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)
    n = parts.shape[1]
    within = parts.var(axis=1, ddof=1).mean()
    between = n * parts.mean(axis=1).var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else float("inf")
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def summarize(samples: np.ndarray, names: list[str] | None = None) -> PosteriorSummary:
    """Mean, SD, equal-tailed 95% interval and split R-hat per parameter.

    ``samples`` is shaped (chains, draws, params); a 2-D array is treated as
    a single chain.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[None]
    n_chains, n_draws, n_params = samples.shape
    if n_chains * n_draws < 100:
        raise InsufficientSamplesError(f"need at least 100 draws, got {n_chains * n_draws}")
    names = names or [f"p{j}" for j in range(n_params)]
    out = {}
    for j, name in enumerate(names):
        flat = samples[:, :, j].ravel()
        lo, hi = np.quantile(flat, [0.025, 0.975])
        out[name] = ParamSummary(
            mean=float(flat.mean()),
            sd=float(flat.std(ddof=1)),
            ci_low=float(lo),
            ci_high=float(hi),
            rhat=split_rhat(samples[:, :, j]),
        )
    return PosteriorSummary(out, n_chains * n_draws)
