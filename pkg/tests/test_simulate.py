import math

import numpy as np
import pytest

from huiwalter.closed_form import estimate_closed_form
from huiwalter.errors import ConfigError
from huiwalter.model import cell_probabilities
from huiwalter.simulate import Drift, ScenarioSpec, expected_table, generate, sample_table, scenario
from huiwalter.tables import g_test, tabulate


class TestGenerate:
    def test_perfect_tests(self):
        events = generate(scenario((0.3, 0.6), (0.0, 0.0), (0.0, 0.0), n_events=500, seed=1))
        assert all(ev.preds == (ev.label, ev.label) for ev in events)

    def test_all_positive(self):
        n = 20000
        events = generate(scenario((1.0,), (0.1, 0.2), (0.25, 0.05), n_events=n, seed=2))
        assert all(ev.label == 1 for ev in events)
        preds = np.array([ev.preds for ev in events])
        assert np.all(np.abs(preds.mean(axis=0) - np.array([0.75, 0.95])) <= 3 / math.sqrt(n))

    def test_frequencies_match_model(self):
        n = 100_000
        spec = scenario((0.25,), (0.05, 0.10), (0.20, 0.30), n_events=n, seed=3)
        table = tabulate((ev.population, ev.preds) for ev in generate(spec))
        freq = table.cells("A") / n
        assert np.all(np.abs(freq - cell_probabilities(spec.params())) <= 4 / math.sqrt(n))
        assert np.all(np.abs(freq - [0.14375, 0.09375, 0.10625, 0.65625]) <= 4 / math.sqrt(n))

    def test_prevalence(self):
        n = 40_000
        events = generate(scenario((0.2, 0.7), (0.1, 0.1), (0.1, 0.1), n_events=n, seed=4))
        for pop, theta in (("A", 0.2), ("B", 0.7)):
            labels = [ev.label for ev in events if ev.population == pop]
            assert abs(np.mean(labels) - theta) <= 3 / math.sqrt(len(labels))

    def test_conditional_independence(self):
        # within a true label the two predictions are independent draws
        passes = {0: 0, 1: 0}
        for seed in range(50):
            events = generate(scenario((0.4,), (0.1, 0.2), (0.15, 0.25), n_events=4000, seed=seed))
            for lab in passes:
                t = tabulate(("A", ev.preds) for ev in events if ev.label == lab)
                passes[lab] += g_test(t.pairwise("A")).p_value >= 0.05
        assert min(passes.values()) >= 45

    def test_deterministic(self):
        spec = scenario((0.3, 0.6), (0.1, 0.2), (0.1, 0.2), n_events=300, seed=7)
        assert generate(spec) == generate(spec)
        other = scenario((0.3, 0.6), (0.1, 0.2), (0.1, 0.2), n_events=300, seed=8)
        assert generate(spec) != generate(other)

    def test_drift(self):
        spec = ScenarioSpec.from_dict({
            "populations": [{"id": "A", "theta": 0.0}, {"id": "B", "theta": 0.0}],
            "tests": [{"alpha": 0.0, "beta": 0.0}, {"alpha": 0.0, "beta": 0.0}],
            "n_events": 400,
            "drift": {"step": 200, "theta": [1.0, 1.0]},
        })
        labels = [ev.label for ev in generate(spec)]
        assert labels == [0] * 200 + [1] * 200

    def test_latent_features(self):
        spec = scenario((0.2, 0.8), (0.1, 0.1), (0.1, 0.1), n_events=100, seed=0, means=[(0, 0), (5, 5)], latent=True)
        events = generate(spec)
        assert all(ev.population is None and len(ev.features) == 2 for ev in events)

    def test_empty(self):
        assert generate(scenario((0.5, 0.5), (0.1, 0.1), (0.1, 0.1), n_events=0)) == []


class TestSpec:
    def test_error_rates_must_beat_chance(self):
        with pytest.raises(ConfigError, match=r"tests\[1\]"):
            scenario((0.5,), (0.1, 0.6), (0.1, 0.5))

    def test_lists_offending_fields(self):
        with pytest.raises(ConfigError) as info:
            ScenarioSpec.from_dict({
                "populations": [{"id": "A", "theta": 1.5}, {"id": "A", "theta": 0.2, "weight": 0}],
                "tests": [{"alpha": 0.1, "beta": 0.1}],
            })
        msg = str(info.value)
        for field in ("populations[A].theta", "duplicate ids", "weight", "tests: at least two"):
            assert field in msg

    def test_malformed(self):
        with pytest.raises(ConfigError):
            ScenarioSpec.from_json("{not json")
        with pytest.raises(ConfigError):
            ScenarioSpec.from_dict({"tests": []})

    def test_round_trip(self):
        spec = ScenarioSpec.from_dict({
            "populations": [{"id": "A", "theta": 0.2, "weight": 2.0, "mean": [0, 1]}, {"id": "B", "theta": 0.6, "mean": [3, 3]}],
            "tests": [{"alpha": 0.1, "beta": 0.2}, {"alpha": 0.05, "beta": 0.3}],
            "n_events": 50,
            "drift": {"step": 10, "theta": [0.3, 0.5]},
            "seed": 9,
        })
        assert ScenarioSpec.from_dict(spec.to_dict()) == spec
        assert spec.drift == Drift(10, (0.3, 0.5))
        assert spec.weights.tolist() == pytest.approx([2 / 3, 1 / 3])


class TestTables:
    def test_expected_perfect(self):
        t = expected_table(scenario((0.3,), (0.0, 0.0), (0.0, 0.0)), 100)
        assert t.cells("A") == pytest.approx([30, 0, 0, 70], abs=1e-12)

    def test_expected_sums(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.uniform(0, 0.45, 3)
            b = rng.uniform(0, 0.45, 3)
            t = expected_table(scenario(tuple(rng.uniform(0, 1, 2)), tuple(a), tuple(b)), 1234.5)
            assert np.allclose(t.totals(), 1234.5, atol=1e-9, rtol=0)

    def test_expected_inversion(self):
        spec = scenario((0.25, 0.70), (0.05, 0.10), (0.20, 0.30))
        res = estimate_closed_form(expected_table(spec, 1e6))
        assert np.max(np.abs(res.params.as_array() - spec.params().as_array())) < 1e-6

    def test_sorted_population_order(self):
        spec = ScenarioSpec.from_dict({
            "populations": [{"id": "zeta", "theta": 0.9}, {"id": "alpha", "theta": 0.1}],
            "tests": [{"alpha": 0.1, "beta": 0.1}, {"alpha": 0.1, "beta": 0.1}],
        })
        t = expected_table(spec, 100)
        assert t.populations == ["alpha", "zeta"]
        assert spec.sorted_params().theta == (0.1, 0.9)

    def test_sample_table(self):
        spec = scenario((0.25, 0.70), (0.05, 0.10), (0.20, 0.30))
        t = sample_table(spec, 5000, seed=1)
        assert t.totals().tolist() == [5000, 5000]
        assert t == sample_table(spec, 5000, seed=1)
