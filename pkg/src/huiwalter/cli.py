"""Command-line interface: tabulate, estimate, stream, simulate, evaluate.

Exit codes: 0 success, 2 input or validation error, 3 the estimator found no
usable solution, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .closed_form import estimate_closed_form
from .errors import (
    ConfigError,
    HuiWalterError,
    InputError,
    NoLabelsError,
    NonIdentifiableError,
    NoSolutionError,
    SingularInformationError,
)
from .gibbs import GibbsConfig, PosteriorSummary, gibbs_fit
from .latent import assign, em_fit
from .metrics import EvalReport, evaluate
from .model import ParamVector, cell_probability_matrix, mle_fit, observed_information, param_names
from .simulate import ScenarioSpec, generate
from .stream import EngineConfig, OnlineEngine, prior_drift_test, read_jsonl, read_trace, write_jsonl, write_trace
from .tables import ContingencyTable, goodness_of_fit, independence_tests

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_SOLUTION = 3
EXIT_INTERNAL = 4
DEFAULT_SEED = 0


def _clean(value):
    """Replace non-finite floats by None so reports are strict JSON."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


@dataclass
class Report:
    command: str
    status: str = "ok"
    estimates: dict[str, float] | None = None
    posterior: PosteriorSummary | None = None
    standard_errors: dict[str, float | None] | None = None
    g_tests: list[dict] = field(default_factory=list)
    goodness_of_fit: dict | None = None
    drift: list[dict] | None = None
    evaluation: EvalReport | None = None
    trace: dict | None = None
    warnings: list[str] = field(default_factory=list)
    error: dict | None = None
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _clean(
            {
                "command": self.command,
                "status": self.status,
                "estimates": self.estimates,
                "posterior": self.posterior.to_dict() if self.posterior is not None else None,
                "standard_errors": self.standard_errors,
                "g_tests": self.g_tests,
                "goodness_of_fit": self.goodness_of_fit,
                "drift": self.drift,
                "evaluation": self.evaluation.to_dict() if self.evaluation is not None else None,
                "trace": self.trace,
                "warnings": self.warnings,
                "error": self.error,
                "metadata": self.metadata,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "Report":
        data = dict(data)
        if data.get("posterior") is not None:
            data["posterior"] = PosteriorSummary.from_dict(data["posterior"])
        if data.get("evaluation") is not None:
            data["evaluation"] = EvalReport.from_dict(data["evaluation"])
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "Report":
        return cls.from_dict(json.loads(text))

    def params(self) -> ParamVector | None:
        if self.estimates is None:
            return None
        m = sum(k.startswith("theta_") for k in self.estimates)
        n = sum(k.startswith("alpha_") for k in self.estimates)
        names = param_names(m, n)
        return ParamVector.from_array([self.estimates[k] for k in names], m, n)


def _versions() -> dict:
    import numba
    import scipy

    return {
        "huiwalter": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _read_input(path: str) -> tuple[str, str]:
    raw = Path(path).read_bytes()
    try:
        return raw.decode("utf-8"), _digest(raw)
    except UnicodeDecodeError:
        raise InputError(f"{path}: not UTF-8 text") from None


def _check_inputs(*paths: str) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise InputError(f"input file not found: {p}")


def _check_outputs(*paths: str) -> None:
    for p in paths:
        if p is None or p == "-":
            continue
        parent = Path(p).resolve().parent
        if not parent.is_dir():
            raise InputError(f"output directory does not exist: {parent}")


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# tabulate


def _read_predictions(text: str, pred_cols, feature_cols, population_col):
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header:
        raise InputError("missing header", line=1)
    header = [h.strip() for h in header]
    if pred_cols is None:
        pred_cols = [h for h in header if h.startswith("pred")]
    if feature_cols is None:
        feature_cols = [h for h in header if h.startswith("x")]
    wanted = list(pred_cols) + list(feature_cols) + ([population_col] if population_col else [])
    missing = [c for c in wanted if c not in header]
    if missing:
        raise InputError(f"missing column(s) {', '.join(missing)}", line=1)
    if len(pred_cols) < 2:
        raise InputError("need at least two prediction columns", line=1)
    pi = [header.index(c) for c in pred_cols]
    fi = [header.index(c) for c in feature_cols]
    popi = header.index(population_col) if population_col else None
    preds, feats, pops = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise InputError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        values = [row[i].strip() for i in pi]
        if any(v not in ("0", "1") for v in values):
            raise InputError(f"prediction values must be 0 or 1, got {values}", line=lineno)
        preds.append(tuple(int(v) for v in values))
        if fi:
            try:
                feats.append(tuple(float(row[i]) for i in fi))
            except ValueError:
                raise InputError("feature values must be numeric", line=lineno) from None
        if popi is not None:
            pops.append(row[popi].strip())
    return preds, feats, pops


def cmd_tabulate(args) -> int:
    _check_inputs(args.predictions)
    _check_outputs(args.out, args.assignments)
    text, _ = _read_input(args.predictions)
    pred_cols = args.pred_columns.split(",") if args.pred_columns else None
    feat_cols = args.feature_columns.split(",") if args.feature_columns else None
    latent = args.population == "latent"
    preds, feats, pops = _read_predictions(text, pred_cols, feat_cols if latent else [], None if latent else args.population)
    n_tests = len(preds[0]) if preds else len(pred_cols or [None, None])
    if latent:
        if not feats or not feats[0]:
            raise InputError("latent mode needs numeric feature columns (prefix 'x' or --feature-columns)")
        model = em_fit(np.array(feats), k=args.k, restarts=args.restarts, seed=args.seed)
        labels = assign(model, np.array(feats)).labels
        pops = [str(int(lab)) for lab in labels]
        table = ContingencyTable(n_tests, [str(j) for j in range(args.k)])
        assignments = args.assignments
        if assignments is None and args.out not in (None, "-"):
            assignments = str(Path(args.out).with_suffix("")) + ".assignments.csv"
        if assignments is not None:
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["row", "population"])
            writer.writerows(enumerate(pops))
            _write_text(assignments, buf.getvalue())
    else:
        table = ContingencyTable(n_tests, sorted(set(pops)))
    for pop, outcome in zip(pops, preds):
        table.increment(pop, outcome)
    _write_text(args.out, table.to_csv())
    return EXIT_OK


# estimate


def _fit_diagnostics(report: Report, params: ParamVector, table: ContingencyTable) -> None:
    expected = cell_probability_matrix(params) * table.totals().astype(float)[:, None]
    gof = goodness_of_fit(table, expected, params.n_populations + 2 * params.n_tests)
    report.goodness_of_fit = {"statistic": gof.statistic, "df": gof.df, "p_value": gof.p_value}
    if gof.df > 0 and gof.p_value < 0.05:
        report.warnings.append(
            f"conditional independence rejected at 5% (model fit G={gof.statistic:.4g}, df={gof.df}, p={gof.p_value:.3g})"
        )


def _error_entry(exc: BaseException) -> dict:
    return {"type": type(exc).__name__, "message": str(exc)}


def run_estimate(table: ContingencyTable, method: str, seed: int, gibbs_config: GibbsConfig, restarts: int) -> Report:
    report = Report(command="estimate", metadata={"method": method, "seed": seed})
    report.g_tests = independence_tests(table)
    try:
        if method == "closed":
            res = estimate_closed_form(table)
            params = res.params
            report.metadata["f_value"] = res.f_value
        elif method == "gibbs":
            res = gibbs_fit(table, gibbs_config)
            params = res.means()
            report.posterior = res.summary
            if res.weakly_identified:
                report.warnings.append("posterior is weakly identified (chains disagree on orientation)")
        else:
            res = mle_fit(table, restarts=restarts, seed=seed)
            params = res.params
            if not res.converged:
                report.warnings.append("optimizer did not improve on the uniform start")
            try:
                info = observed_information(params, table)
                report.standard_errors = info.as_dict()
            except (SingularInformationError, HuiWalterError) as exc:
                report.warnings.append(f"standard errors unavailable: {exc}")
    except NoSolutionError as exc:
        report.status = exc.status
        report.error = _error_entry(exc)
        return report
    except NonIdentifiableError as exc:
        report.status = "no-solution"
        report.error = _error_entry(exc)
        return report
    report.estimates = params.as_dict()
    _fit_diagnostics(report, params, table)
    return report


def _gibbs_config(args) -> GibbsConfig:
    return GibbsConfig(
        iterations=args.iterations,
        burn_in=args.burn_in,
        thinning=args.thinning,
        chains=args.chains,
        seed=args.seed,
    )


def cmd_estimate(args) -> int:
    _check_inputs(args.table)
    _check_outputs(args.report)
    text, digest = _read_input(args.table)
    table = ContingencyTable.from_csv(text)
    cfg = _gibbs_config(args)
    start = time.perf_counter()
    report = run_estimate(table, args.method, args.seed, cfg, args.restarts)
    report.metadata.update(
        input_sha256={"table": digest},
        populations=list(table.populations),
        versions=_versions(),
        timing={"seconds": time.perf_counter() - start},
    )
    _write_text(args.report, report.to_json())
    return EXIT_OK if report.status == "ok" else EXIT_NO_SOLUTION


# stream


def cmd_stream(args) -> int:
    _check_inputs(args.events)
    _check_outputs(args.trace, args.report)
    text, digest = _read_input(args.events)
    events = read_jsonl(text)
    start = time.perf_counter()

    natural = bool(events) and events[0].population is not None
    k = args.k
    populations = None
    if natural:
        # sorted ids so estimates line up with tables and scenario truth
        populations = tuple(sorted({ev.population for ev in events if ev.population is not None}))
        k = len(populations)
        if k < 2:
            raise InputError("a natural-population stream needs at least two population ids")
    config = EngineConfig(
        warm_up=args.warm_up,
        refit_period=args.refit_period,
        estimator=args.estimator,
        gibbs_period=args.gibbs_period,
        gibbs=GibbsConfig(iterations=args.iterations, burn_in=args.burn_in, chains=args.chains, seed=args.seed),
        k_populations=k,
        populations=populations,
        em_restarts=args.restarts,
        seed=args.seed,
        on_implausible=args.on_implausible,
    )
    engine = OnlineEngine(config)
    rows = [engine.update(ev) for ev in events]
    n_tests = engine.n_tests or 2
    buf = io.StringIO()
    write_trace(rows, buf, k, n_tests)
    _write_text(args.trace, buf.getvalue())

    report = Report(command="stream", metadata={"seed": args.seed, "estimator": args.estimator})
    counts = {}
    for r in rows:
        counts[r.status] = counts.get(r.status, 0) + 1
    report.trace = {"rows": len(rows), "status_counts": counts}
    ok = [r for r in rows if r.ok]
    if ok:
        report.estimates = ok[-1].params().as_dict()
    report.status = rows[-1].status if rows else "warming-up"
    if args.theta_train is not None:
        if len(args.theta_train) != k:
            raise InputError(f"--theta-train needs {k} values, got {len(args.theta_train)}")
        try:
            report.drift = [
                {"population": i + 1, "z": d.z, "p_value": d.p_value, "window_mean": d.window_mean,
                 "standard_error": d.standard_error, "se_source": d.se_source, "theta_train": args.theta_train[i]}
                for i, d in enumerate(prior_drift_test(rows, args.theta_train, args.drift_window, table=engine.table))
            ]
            if any(d["p_value"] < 0.05 for d in report.drift):
                report.warnings.append("prevalence drift detected at 5%")
        except InputError as exc:
            report.drift = []
            report.warnings.append(f"drift test skipped: {exc}")
    report.metadata.update(
        input_sha256={"events": digest},
        populations=list(engine.table.populations) if engine.table is not None else [],
        versions=_versions(),
        timing={"seconds": time.perf_counter() - start},
    )
    if args.report is not None:
        _write_text(args.report, report.to_json())
    return EXIT_OK


# simulate


def cmd_simulate(args) -> int:
    _check_inputs(args.scenario)
    _check_outputs(args.out)
    text, _ = _read_input(args.scenario)
    spec = ScenarioSpec.from_json(text)
    if args.seed is not None:
        spec = ScenarioSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    buf = io.StringIO()
    write_jsonl(generate(spec), buf)
    _write_text(args.out, buf.getvalue())
    return EXIT_OK


# evaluate


def cmd_evaluate(args) -> int:
    _check_inputs(args.trace, args.truth, args.events)
    _check_outputs(args.out)
    trace_text, trace_digest = _read_input(args.trace)
    truth_text, truth_digest = _read_input(args.truth)
    events_text, events_digest = _read_input(args.events)
    start = time.perf_counter()
    rows, m, n = read_trace(trace_text)
    spec = ScenarioSpec.from_json(truth_text)
    truth = spec.sorted_params(after_drift=spec.drift is not None)
    if (truth.n_populations, truth.n_tests) != (m, n):
        raise InputError(
            f"truth has {truth.n_populations} populations and {truth.n_tests} tests; "
            f"trace has {m} and {n}"
        )
    events = read_jsonl(events_text)
    if not events or any(ev.label is None for ev in events):
        raise NoLabelsError("evaluation needs a label on every event")
    labels = [ev.label for ev in events]
    preds = [ev.preds for ev in events]
    ev_report = evaluate(rows, truth, labels, preds, tail=args.tail)
    report = Report(command="evaluate", evaluation=ev_report)
    report.metadata.update(
        input_sha256={"trace": trace_digest, "truth": truth_digest, "events": events_digest},
        truth=truth.as_dict(),
        versions=_versions(),
        timing={"seconds": time.perf_counter() - start},
    )
    _write_text(args.out, report.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="huiwalter", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tabulate", help="cross-tabulate a predictions CSV into a table CSV")
    p.add_argument("predictions")
    p.add_argument("--population", default="population",
                   help="population column name, or 'latent' to infer populations from features")
    p.add_argument("--pred-columns", help="comma-separated prediction columns (default: columns starting with 'pred')")
    p.add_argument("--feature-columns", help="comma-separated feature columns (default: columns starting with 'x')")
    p.add_argument("-k", "--k", type=int, default=2, help="number of latent populations")
    p.add_argument("--restarts", type=int, default=8)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", "-o", default="-")
    p.add_argument("--assignments", help="where to write latent assignments (row,population)")
    p.set_defaults(func=cmd_tabulate)

    def gibbs_flags(q, iterations, burn_in, chains):
        q.add_argument("--iterations", type=int, default=iterations)
        q.add_argument("--burn-in", type=int, default=burn_in)
        q.add_argument("--thinning", type=int, default=1)
        q.add_argument("--chains", type=int, default=chains)

    p = sub.add_parser("estimate", help="estimate error rates and prevalences from a table CSV")
    p.add_argument("table")
    p.add_argument("--method", choices=("closed", "gibbs", "mle"), default="closed")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--restarts", type=int, default=16, help="MLE restarts")
    gibbs_flags(p, 20_000, 5_000, 4)
    p.add_argument("--report", "-o", default="-")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("stream", help="run the online estimator over a JSONL event stream")
    p.add_argument("events")
    p.add_argument("--trace", default="-")
    p.add_argument("--report")
    p.add_argument("--warm-up", type=int, default=250)
    p.add_argument("--refit-period", type=int, default=1)
    p.add_argument("--estimator", choices=("closed-form", "gibbs-periodic"), default="closed-form")
    p.add_argument("--gibbs-period", type=int, default=500)
    gibbs_flags(p, 4000, 1000, 2)
    p.add_argument("-k", "--k", type=int, default=2, help="latent populations (ignored for natural populations)")
    p.add_argument("--restarts", type=int, default=2, help="EM restarts per refit")
    p.add_argument("--on-implausible", choices=("refine", "skip"), default="refine")
    p.add_argument("--theta-train", type=_float_list, help="training prevalences, one per population")
    p.add_argument("--drift-window", type=int, default=200)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("simulate", help="generate a labeled JSONL stream from a scenario JSON")
    p.add_argument("scenario")
    p.add_argument("--out", "-o", default="-")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score a trace against the scenario truth and labeled events")
    p.add_argument("trace")
    p.add_argument("--truth", required=True, help="scenario JSON")
    p.add_argument("--events", required=True, help="labeled events JSONL")
    p.add_argument("--tail", type=int, default=200)
    p.add_argument("--out", "-o", default="-")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (InputError, ConfigError, OSError) as exc:
        print(f"huiwalter {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NoSolutionError, NonIdentifiableError) as exc:
        print(f"huiwalter {args.command}: no solution: {exc}", file=sys.stderr)
        return EXIT_NO_SOLUTION
    except Exception as exc:  # noqa: BLE001
        print(f"huiwalter {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
