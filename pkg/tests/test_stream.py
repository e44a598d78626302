import io

import numpy as np
import pytest

from huiwalter.closed_form import estimate_closed_form
from huiwalter.gibbs import GibbsConfig
from huiwalter.errors import ConfigError, DegenerateWindowError, ImplausibleSolutionError, InputError, ProtocolError
from huiwalter.model import EPS, ParamVector, log_likelihood
from huiwalter.simulate import generate, scenario
from huiwalter.stream import (
    EngineConfig,
    OnlineEngine,
    StreamEvent,
    TraceRow,
    iter_process,
    prior_drift_test,
    process,
    read_jsonl,
    read_trace,
    write_jsonl,
    write_trace,
)
from huiwalter.tables import ContingencyTable, pattern_bits, tabulate

THETA = (0.11, 0.51)
ALPHA = (0.18, 0.23)
BETA = (0.06, 0.09)
NATURAL = EngineConfig(populations=("A", "B"))


def events_for(seed, n=2000, theta=THETA, **kw):
    return generate(scenario(theta, ALPHA, BETA, n_events=n, seed=seed, **kw))


def events_from_table(rows, pops=("A", "B")):
    bits = pattern_bits(2)
    out = []
    for pop, row in zip(pops, rows):
        for c, k in enumerate(row):
            out += [StreamEvent(f"{pop}-{c}-{i}", tuple(int(b) for b in bits[c]), population=pop) for i in range(k)]
    return out


@pytest.fixture(scope="module")
def trace():
    return process(events_for(0), NATURAL)


class TestEngine:
    def test_short_stream_all_warming_up(self):
        rows = process(events_for(1, n=100))
        assert len(rows) == 100
        assert all(r.status == "warming-up" for r in rows)
        assert [r.t for r in rows] == list(range(1, 101))

    def test_one_row_per_event(self, trace):
        assert len(trace) == 2000
        assert [r.t for r in trace] == list(range(1, 2001))
        assert all(r.status == "warming-up" for r in trace[:250])
        assert all(r.status != "warming-up" for r in trace[250:])

    def test_table_tracks_events(self):
        engine = OnlineEngine(NATURAL)
        for i, ev in enumerate(events_for(2, n=400), start=1):
            engine.update(ev)
            assert engine.table.totals().sum() == i

    def test_final_row_matches_batch(self, trace):
        events = events_for(0)
        table = tabulate(((ev.population, ev.preds) for ev in events), populations=["A", "B"])
        batch = estimate_closed_form(table).params
        last = trace[-1]
        assert last.ok
        assert last.params() == batch

    def test_ok_rows_valid(self, trace):
        for r in trace:
            if r.ok:
                x = r.params().as_array()
                assert np.all((x >= 0) & (x <= 1))
                assert r.params().satisfies_convention()

    def test_replay_determinism(self, trace):
        again = process(events_for(0), NATURAL)
        assert again == trace

    def test_iter_matches_batch(self):
        events = events_for(3, n=600)
        assert list(iter_process(events, NATURAL)) == process(events, NATURAL)

    def test_labels_are_not_used(self):
        events = events_for(4, n=800)
        stripped = [ev.without_label() for ev in events]
        flipped = [StreamEvent(ev.id, ev.preds, ev.features, ev.population, 1 - ev.label) for ev in events]
        base = process(events, NATURAL)
        assert process(stripped, NATURAL) == base
        assert process(flipped, NATURAL) == base

    def test_populations_in_arrival_order(self):
        events = [StreamEvent("0", (1, 0), population="x"), StreamEvent("1", (0, 0), population="y")]
        engine = OnlineEngine(EngineConfig(warm_up=5))
        for ev in events:
            engine.update(ev)
        assert engine.table.populations == ["x", "y"]

    def test_single_population_is_no_solution(self):
        events = [StreamEvent(str(i), (i % 2, (i // 2) % 2), population="A") for i in range(20)]
        rows = process(events, EngineConfig(warm_up=10))
        assert all(r.status == "no-solution" for r in rows[10:])


class TestProtocol:
    def test_arity_change(self):
        engine = OnlineEngine()
        engine.update(StreamEvent("a", (1, 0), population="A"))
        with pytest.raises(ProtocolError):
            engine.update(StreamEvent("b", (1, 0, 1), population="A"))

    def test_mixed_modes(self):
        engine = OnlineEngine()
        engine.update(StreamEvent("a", (1, 0), population="A"))
        with pytest.raises(ProtocolError):
            engine.update(StreamEvent("b", (1, 0), features=(0.0, 1.0)))

    def test_too_many_populations(self):
        engine = OnlineEngine()
        for i, pop in enumerate("AB"):
            engine.update(StreamEvent(str(i), (1, 0), population=pop))
        with pytest.raises(ProtocolError):
            engine.update(StreamEvent("c", (1, 0), population="C"))

    def test_single_test(self):
        with pytest.raises(ProtocolError):
            OnlineEngine().update(StreamEvent("a", (1,), population="A"))

    def test_feature_dimension_change(self):
        engine = OnlineEngine()
        engine.update(StreamEvent("a", (1, 0), features=(0.0, 1.0)))
        with pytest.raises(ProtocolError):
            engine.update(StreamEvent("b", (1, 0), features=(0.0, 1.0, 2.0)))

    @pytest.mark.parametrize(
        "kwargs",
        [{"warm_up": 0}, {"refit_period": 0}, {"estimator": "mle"}, {"k_populations": 1}, {"on_implausible": "drop"},
         {"populations": ("A",)}],
    )
    def test_bad_config(self, kwargs):
        with pytest.raises(ConfigError):
            EngineConfig(**kwargs)

    def test_bad_event(self):
        with pytest.raises(InputError):
            StreamEvent("a", (1, 2), population="A")
        with pytest.raises(InputError):
            StreamEvent("a", (1, 0))


class TestImplausible:
    ROWS = [[26, 20, 16, 9], [10, 2, 3, 1]]

    def final_row(self, policy):
        events = events_from_table(self.ROWS)
        cfg = EngineConfig(warm_up=len(events) - 1, populations=("A", "B"), on_implausible=policy)
        return process(events, cfg)[-1]

    def test_skip(self):
        assert self.final_row("skip").status == "implausible"

    def test_refine_stays_in_cube(self):
        row = self.final_row("refine")
        assert row.ok
        p = row.params()
        x = p.as_array()
        assert np.all((x >= 0) & (x <= 1))
        assert p.satisfies_convention()

    def test_refine_beats_clamped_roots(self):
        table = ContingencyTable(2, ["A", "B"], self.ROWS)
        with pytest.raises(ImplausibleSolutionError) as info:
            estimate_closed_form(table)
        refined = log_likelihood(self.final_row("refine").params(), table)
        for raw in info.value.candidates:
            clamped = ParamVector.from_array(np.clip(raw, EPS, 1 - EPS), 2, 2)
            assert refined >= log_likelihood(clamped, table) - 1e-9


class TestLatent:
    def test_smoke(self):
        events = events_for(5, n=500, means=[(0.0, 0.0), (6.0, 6.0)], latent=True)
        rows = process(events, EngineConfig(refit_period=50, em_restarts=1))
        assert len(rows) == 500
        ok = [r for r in rows if r.ok]
        assert len(ok) > 200
        # the recovered clusters carry the two prevalences in some order
        assert sorted(ok[-1].theta) == pytest.approx(sorted(THETA), abs=0.12)

    def test_replay(self):
        events = events_for(6, n=320, means=[(0.0, 0.0), (6.0, 6.0)], latent=True)
        cfg = EngineConfig(refit_period=40, em_restarts=1, seed=3)
        assert process(events, cfg) == process(events, cfg)


class TestGibbsPeriodic:
    def test_rows_hold_between_fits(self):
        events = events_for(7, n=400)
        cfg = EngineConfig(
            warm_up=250,
            estimator="gibbs-periodic",
            gibbs_period=100,
            populations=("A", "B"),
            gibbs=GibbsConfig(iterations=1500, burn_in=500, chains=2),
        )
        rows = process(events, cfg)[250:]
        assert all(r.ok for r in rows)
        assert rows[0].params() == rows[99].params()
        assert rows[100].params() != rows[99].params()
        assert all(r.f_value is None for r in rows)


class TestFiles:
    def test_jsonl_round_trip(self):
        events = events_for(8, n=50) + events_for(8, n=5, means=[(0.0, 1.0), (2.0, 3.0)], latent=True)
        buf = io.StringIO()
        write_jsonl(events, buf)
        assert read_jsonl(buf.getvalue()) == events

    def test_jsonl_errors_carry_line(self):
        text = '{"id": "a", "preds": [1, 0], "population": "A"}\n\n{"id": "b", "preds": [1, 3], "population": "A"}\n'
        with pytest.raises(InputError) as info:
            read_jsonl(text)
        assert info.value.line == 3
        with pytest.raises(InputError) as info:
            read_jsonl('{"id": "a", "preds": [1, 0], "population": "A"}\nnot json\n')
        assert info.value.line == 2
        with pytest.raises(InputError) as info:
            read_jsonl('[1, 0]\n')
        assert info.value.line == 1

    def test_trace_round_trip(self, trace):
        buf = io.StringIO()
        write_trace(trace, buf, 2, 2)
        text = buf.getvalue()
        assert text.splitlines()[0] == "t,status,theta_1,theta_2,alpha_1,alpha_2,beta_1,beta_2,f_value"
        rows, m, n = read_trace(text)
        assert (m, n) == (2, 2)
        assert rows == trace

    def test_trace_errors(self):
        with pytest.raises(InputError) as info:
            read_trace("a,b\n")
        assert info.value.line == 1
        header = "t,status,theta_1,theta_2,alpha_1,alpha_2,beta_1,beta_2,f_value\n"
        with pytest.raises(InputError) as info:
            read_trace(header + "1,warming-up,,,,,,,\n2,bogus,,,,,,,\n")
        assert info.value.line == 3
        with pytest.raises(InputError) as info:
            read_trace(header + "1,ok,0.1\n")
        assert info.value.line == 2


def constant_rows(value, n=200):
    return [TraceRow(t, "ok", (value, value), (0.1, 0.1), (0.1, 0.1), 0.2) for t in range(1, n + 1)]


def run(events):
    engine = OnlineEngine(NATURAL)
    rows = [engine.update(ev) for ev in events]
    return rows, engine.table


class TestDrift:
    def test_constant_window(self):
        with pytest.raises(DegenerateWindowError):
            prior_drift_test(constant_rows(0.3), (0.3, 0.3))

    def test_too_few_rows(self):
        with pytest.raises(InputError):
            prior_drift_test(constant_rows(0.3, n=50), (0.3, 0.3))

    def test_arity(self, trace):
        with pytest.raises(InputError):
            prior_drift_test(trace, (0.1, 0.5, 0.3))

    def test_standard_error_sources(self):
        rows, table = run(events_for(0))
        with_table = prior_drift_test(rows, THETA, table=table)
        without = prior_drift_test(rows, THETA)
        assert {d.se_source for d in with_table} == {"information"}
        assert {d.se_source for d in without} == {"increments"}
        for a, b in zip(with_table, without):
            assert a.window_mean == b.window_mean
            # both estimate the same sampling error
            assert 0.5 < a.standard_error / b.standard_error < 2.0

    def test_power(self):
        shifted = tuple(t + 0.2 for t in THETA)
        for seed in range(3):
            rows, table = run(events_for(seed, theta=shifted))
            for res in prior_drift_test(rows, THETA, window=200, table=table) + prior_drift_test(rows, THETA):
                assert res.p_value < 0.01

    @pytest.mark.slow
    def test_null_calibration(self):
        rejections = np.zeros(2)
        for seed in range(50):
            rows, table = run(events_for(seed))
            rejections += [r.p_value < 0.05 for r in prior_drift_test(rows, THETA, window=200, table=table)]
        print("null rejection rates", rejections / 50)
        assert np.all(rejections <= 5)
