"""Online estimation over a stream of unlabeled classifier predictions.

For every incoming event the engine appends it to its history, places it in
a population (given, or inferred by a Gaussian mixture refit on the whole
history), updates the contingency table and, once past the warm-up, emits a
row of parameter estimates.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import stats

from .closed_form import estimate_closed_form
from .errors import (
    ConfigError,
    DegenerateWindowError,
    HuiWalterError,
    ImplausibleSolutionError,
    InputError,
    NoSolutionError,
    ProtocolError,
)
from .gibbs import GibbsConfig, GibbsResult, gibbs_fit
from .latent import MixtureModel, assign, em_fit, match_labels
from .model import EPS, ParamVector, log_likelihood, observed_information, refine_mle
from .tables import ContingencyTable

STATUSES = ("ok", "no-solution", "implausible", "warming-up")


@dataclass(frozen=True)
class StreamEvent:
    id: str
    preds: tuple[int, ...]
    features: tuple[float, ...] | None = None
    population: str | None = None
    label: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "preds", tuple(int(p) for p in self.preds))
        if any(p not in (0, 1) for p in self.preds):
            raise InputError(f"event {self.id}: predictions must be 0/1")
        if self.features is not None:
            object.__setattr__(self, "features", tuple(float(v) for v in self.features))
        if self.population is not None:
            object.__setattr__(self, "population", str(self.population))
        elif not self.features:
            raise InputError(f"event {self.id}: features are required when population is absent")
        if self.label is not None and self.label not in (0, 1):
            raise InputError(f"event {self.id}: label must be 0/1")

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "features": list(self.features) if self.features is not None else None,
                "preds": list(self.preds),
                "population": self.population,
                "label": self.label,
            }
        )

    @classmethod
    def from_dict(cls, data: dict) -> "StreamEvent":
        if "preds" not in data:
            raise InputError("event has no 'preds' field")
        return cls(
            id=str(data.get("id", "")),
            preds=tuple(data["preds"]),
            features=tuple(data["features"]) if data.get("features") is not None else None,
            population=data.get("population"),
            label=data.get("label"),
        )

    def without_label(self) -> "StreamEvent":
        return replace(self, label=None)


def read_jsonl(fh) -> list[StreamEvent]:
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    events = []
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            data = json.loads(line)
            if not isinstance(data, dict):
                raise InputError("expected a JSON object")
            events.append(StreamEvent.from_dict(data))
        except (json.JSONDecodeError, InputError, TypeError, ValueError) as exc:
            raise InputError(str(exc), line=lineno) from None
    return events


def write_jsonl(events: Iterable[StreamEvent], fh) -> None:
    for ev in events:
        fh.write(ev.to_json() + "\n")


@dataclass(frozen=True)
class TraceRow:
    t: int
    status: str
    theta: tuple[float, ...] | None = None
    alpha: tuple[float, ...] | None = None
    beta: tuple[float, ...] | None = None
    f_value: float | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def params(self) -> ParamVector:
        return ParamVector(self.theta, self.alpha, self.beta)


@dataclass(frozen=True)
class EngineConfig:
    warm_up: int = 250
    refit_period: int = 1
    estimator: str = "closed-form"
    gibbs_period: int = 500
    gibbs: GibbsConfig = field(default_factory=lambda: GibbsConfig(iterations=4000, burn_in=1000, chains=2))
    k_populations: int = 2
    populations: tuple[str, ...] | None = None
    em_restarts: int = 2
    history_cap: int | None = None
    seed: int = 0
    # "refine": maximize the likelihood inside the hypercube when both
    # closed-form roots fall outside it; "skip": report the row as implausible
    on_implausible: str = "refine"

    def __post_init__(self):
        if self.warm_up < 1:
            raise ConfigError("warm_up must be at least 1")
        if self.refit_period < 1 or self.gibbs_period < 1:
            raise ConfigError("periods must be at least 1")
        if self.estimator not in ("closed-form", "gibbs-periodic"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.k_populations < 2:
            raise ConfigError("at least two populations are needed")
        if self.on_implausible not in ("refine", "skip"):
            raise ConfigError(f"unknown on_implausible policy {self.on_implausible!r}")
        if self.history_cap is not None and self.history_cap < 1:
            raise ConfigError("history_cap must be positive")
        if self.populations is not None:
            object.__setattr__(self, "populations", tuple(str(p) for p in self.populations))
            if len(self.populations) != self.k_populations:
                raise ConfigError("populations must list k_populations ids")


class OnlineEngine:
    """Single-consumer online estimator; feed events with :meth:`update`."""

    def __init__(self, config: EngineConfig | None = None):
        self.config = config or EngineConfig()
        self.t = 0
        self.n_tests: int | None = None
        self.latent: bool | None = None
        self.history: list[StreamEvent] = []
        self.table: ContingencyTable | None = None
        self.model: MixtureModel | None = None
        self.last_gibbs: GibbsResult | None = None
        self._last_gibbs_row: TraceRow | None = None

    def _start(self, event: StreamEvent) -> None:
        self.n_tests = len(event.preds)
        if self.n_tests < 2:
            raise ProtocolError("at least two tests are required")
        self.latent = event.population is None
        cfg = self.config
        if self.latent:
            pops = [str(j) for j in range(cfg.k_populations)]
        else:
            pops = list(cfg.populations or ())
        self.table = ContingencyTable(self.n_tests, pops)

    def _check(self, event: StreamEvent) -> None:
        if len(event.preds) != self.n_tests:
            raise ProtocolError(f"event {event.id}: {len(event.preds)} predictions, stream has {self.n_tests}")
        if (event.population is None) != self.latent:
            raise ProtocolError(f"event {event.id}: cannot mix natural and latent populations")
        if self.latent and (self.history and len(event.features) != len(self.history[0].features)):
            raise ProtocolError(f"event {event.id}: feature dimension changed")

    def update(self, event: StreamEvent) -> TraceRow:
        if self.t == 0:
            self._start(event)
        self._check(event)
        self.t += 1
        self.history.append(event)
        cap = self.config.history_cap
        if cap is not None and len(self.history) > cap:
            del self.history[0]

        if self.latent:
            failed = self._update_latent()
            if failed is not None and self.t > self.config.warm_up:
                return TraceRow(self.t, "no-solution")
        else:
            pop = event.population
            if pop not in self.table.populations:
                if len(self.table.populations) >= self.config.k_populations:
                    raise ProtocolError(f"event {event.id}: more than {self.config.k_populations} populations")
                self.table.add_population(pop)
            self.table.increment(pop, event.preds)

        if self.t <= self.config.warm_up:
            return TraceRow(self.t, "warming-up")
        return self._estimate()

    def _update_latent(self) -> Exception | None:
        cfg = self.config
        x = np.array([ev.features for ev in self.history])
        if self.t % cfg.refit_period == 0 or self.model is None:
            try:
                fitted = em_fit(x, cfg.k_populations, restarts=cfg.em_restarts, seed=cfg.seed, init=self.model)
            except HuiWalterError as exc:
                return exc
            if self.model is not None:
                fitted = fitted.permuted(match_labels(self.model, fitted))
            self.model = fitted
            labels = assign(self.model, x).labels
            self.table = ContingencyTable(self.n_tests, self.table.populations)
            for ev, lab in zip(self.history, labels):
                self.table.increment(str(lab), ev.preds)
        else:
            lab = assign(self.model, x[-1:]).labels[0]
            self.table.increment(str(lab), self.history[-1].preds)
        return None

    def _estimate(self) -> TraceRow:
        table = self.table
        if table.n_populations < self.config.k_populations:
            return TraceRow(self.t, "no-solution")
        if self.config.estimator == "closed-form":
            try:
                res = estimate_closed_form(table)
            except ImplausibleSolutionError as exc:
                if self.config.on_implausible == "skip":
                    return TraceRow(self.t, exc.status)
                return self._refine(exc)
            except NoSolutionError as exc:
                return TraceRow(self.t, exc.status)
            except HuiWalterError:
                return TraceRow(self.t, "no-solution")
            p = res.params
            return TraceRow(self.t, "ok", p.theta, p.alpha, p.beta, res.f_value)

        due = self._last_gibbs_row is None or (self.t - self.config.warm_up - 1) % self.config.gibbs_period == 0
        if due:
            gcfg = replace(self.config.gibbs, seed=(self.config.seed + self.t) % 2**64)
            try:
                self.last_gibbs = gibbs_fit(table, gcfg)
            except HuiWalterError:
                return TraceRow(self.t, "no-solution")
            p = self.last_gibbs.means()
            self._last_gibbs_row = TraceRow(self.t, "ok", p.theta, p.alpha, p.beta, None)
        return replace(self._last_gibbs_row, t=self.t)

    def _refine(self, exc: ImplausibleSolutionError) -> TraceRow:
        """Constrained maximum near the more likely clamped closed-form root."""
        m, n = self.table.n_populations, self.n_tests
        best = None
        for raw, f in zip(exc.candidates, exc.f_values):
            if not np.all(np.isfinite(raw)):
                continue
            start = ParamVector.from_array(np.clip(raw, EPS, 1.0 - EPS), m, n)
            ll = log_likelihood(start, self.table)
            if best is None or ll > best[0]:
                best = (ll, start, f)
        if best is None:
            return TraceRow(self.t, exc.status)
        p, _ = refine_mle(self.table, best[1])
        if not p.satisfies_convention():
            return TraceRow(self.t, exc.status)
        return TraceRow(self.t, "ok", p.theta, p.alpha, p.beta, best[2])


def process(events: Iterable[StreamEvent], config: EngineConfig | None = None) -> list[TraceRow]:
    engine = OnlineEngine(config)
    return [engine.update(ev) for ev in events]


def iter_process(events: Iterable[StreamEvent], config: EngineConfig | None = None) -> Iterator[TraceRow]:
    engine = OnlineEngine(config)
    for ev in events:
        yield engine.update(ev)


def trace_header(n_populations: int, n_tests: int) -> list[str]:
    return (
        ["t", "status"]
        + [f"theta_{i + 1}" for i in range(n_populations)]
        + [f"alpha_{j + 1}" for j in range(n_tests)]
        + [f"beta_{j + 1}" for j in range(n_tests)]
        + ["f_value"]
    )


def write_trace(rows: Sequence[TraceRow], fh, n_populations: int, n_tests: int) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(trace_header(n_populations, n_tests))
    for row in rows:
        if row.ok:
            values = [repr(float(v)) for v in (*row.theta, *row.alpha, *row.beta)]
        else:
            values = [""] * (n_populations + 2 * n_tests)
        f = "" if row.f_value is None else repr(float(row.f_value))
        writer.writerow([row.t, row.status, *values, f])


def read_trace(fh) -> tuple[list[TraceRow], int, int]:
    """Parse a trace CSV; returns rows and the (populations, tests) arity."""
    if isinstance(fh, str):
        fh = io.StringIO(fh)
    reader = csv.reader(fh)
    header = next(reader, None)
    if not header or header[:2] != ["t", "status"] or header[-1] != "f_value":
        raise InputError("not a trace file", line=1)
    m = sum(h.startswith("theta_") for h in header)
    n = sum(h.startswith("alpha_") for h in header)
    if header != trace_header(m, n):
        raise InputError("unexpected trace columns", line=1)
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise InputError("wrong number of fields", line=lineno)
        try:
            t = int(rec[0])
            status = rec[1]
            if status not in STATUSES:
                raise ValueError(f"unknown status {status!r}")
            f = float(rec[-1]) if rec[-1] else None
            if status == "ok":
                vals = [float(v) for v in rec[2:-1]]
                rows.append(TraceRow(t, status, tuple(vals[:m]), tuple(vals[m : m + n]), tuple(vals[m + n :]), f))
            else:
                rows.append(TraceRow(t, status, f_value=f))
        except ValueError as exc:
            raise InputError(str(exc), line=lineno) from None
    return rows, m, n


@dataclass(frozen=True)
class DriftResult:
    z: float
    p_value: float
    window_mean: float
    standard_error: float
    se_source: str = "increments"


def _information_se(row: TraceRow, table: ContingencyTable) -> np.ndarray | None:
    m = table.n_populations
    x = np.clip(row.params().as_array(), 1e-3, 1.0 - 1e-3)
    try:
        se = observed_information(ParamVector.from_array(x, m, table.n_tests), table).standard_errors[:m]
    except HuiWalterError:
        return None
    return se if np.all(np.isfinite(se) & (se > 0)) else None


def prior_drift_test(
    rows: Sequence[TraceRow],
    theta_train: Sequence[float],
    window: int = 200,
    table: ContingencyTable | None = None,
) -> list[DriftResult]:
    """Two-sided z-test of each population's recent prevalence estimate against ``theta_train``.

    Trace rows are running estimates, so consecutive values are strongly
    dependent and their spread understates the estimator's error.  When the
    table behind the last row is supplied, the standard error comes from the
    observed information at that row's estimate.  Otherwise, or if the
    information is singular, it is taken from the window's per-event increments
    ``t * theta_t - (t - 1) * theta_{t-1}``: their empirical SD estimates the
    per-observation influence, and dividing by sqrt(t) at the window end gives
    the standard error of the current estimate.
    """
    ok = [r for r in rows if r.ok]
    if len(ok) < window:
        raise InputError(f"need {window} ok rows, got {len(ok)}")
    if window < 3:
        raise InputError("window must hold at least 3 rows")
    tail = ok[-window:]
    if len(theta_train) != len(tail[-1].theta):
        raise InputError(f"theta_train has {len(theta_train)} values, trace has {len(tail[-1].theta)} populations")
    info_se = _information_se(tail[-1], table) if table is not None else None
    results = []
    for i, ref in enumerate(theta_train):
        t = np.array([r.t for r in tail], dtype=float)
        est = np.array([r.theta[i] for r in tail])
        if np.ptp(est) == 0:
            raise DegenerateWindowError("estimates do not vary over the window")
        if info_se is not None:
            se, source = float(info_se[i]), "information"
        else:
            consecutive = np.diff(t) == 1
            increments = (t[1:] * est[1:] - t[:-1] * est[:-1])[consecutive]
            if increments.size < 2:
                raise DegenerateWindowError("window has too few consecutive rows")
            sd = float(np.std(increments, ddof=1))
            if sd == 0:
                raise DegenerateWindowError("increments do not vary over the window")
            se, source = sd / math.sqrt(t[-1]), "increments"
        mean = float(est.mean())
        z = (mean - float(ref)) / se
        p = float(2.0 * stats.norm.sf(abs(z)))
        results.append(DriftResult(z=z, p_value=p, window_mean=mean, standard_error=se, se_source=source))
    return results
