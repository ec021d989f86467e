import json

import numpy as np
import pandas as pd
import pytest

from reluopt.services.benchmark_service import (
    BenchmarkName,
    evaluate,
    generate,
    get_benchmark,
    latin_hypercube,
)


class TestBenchmarkFunctions:
    """Known values of the benchmark functions."""

    def test_himmelblau_minimum_is_exact(self):
        assert evaluate(get_benchmark("himmelblau"), 3.0, 2.0) == 0.0

    def test_ackley_minimum_is_exact(self):
        assert evaluate(get_benchmark("ackley"), 0.0, 0.0) == 0.0

    def test_peaks_minimum(self):
        f = get_benchmark(BenchmarkName.PEAKS)
        (x, y), value = f.global_minimum
        assert evaluate(f, x, y) == pytest.approx(value, abs=1e-2)

    def test_all_himmelblau_minima(self):
        f = get_benchmark("himmelblau")
        assert len(f.known_minima) == 4
        for (x, y), value in f.known_minima:
            assert abs(evaluate(f, x, y) - value) < 1e-2

    def test_domains(self):
        assert get_benchmark("peaks").input_bounds.tolist() == [[-2.0, 2.0], [-2.0, 2.0]]
        assert get_benchmark("ackley").input_bounds.tolist() == [[-3.5, 3.5], [-3.5, 3.5]]
        assert get_benchmark("himmelblau").input_bounds.tolist() == [[-5.0, 5.0], [-5.0, 5.0]]

    def test_evaluate_broadcasts(self):
        f = get_benchmark("himmelblau")
        values = evaluate(f, np.array([3.0, 0.0]), np.array([2.0, 0.0]))
        assert values.tolist() == [0.0, 170.0]

    def test_lookup_by_member_or_name(self):
        for member in BenchmarkName:
            assert get_benchmark(member).name is member
            assert get_benchmark(member.value.upper()) is get_benchmark(member)
        assert get_benchmark(get_benchmark("ackley").name).name == BenchmarkName.ACKLEY

    def test_unknown_benchmark(self):
        with pytest.raises(ValueError, match="unknown benchmark"):
            get_benchmark("rosenbrock")


class TestDataGeneration:
    """Latin hypercube sampling, splitting and normalization."""

    @pytest.fixture
    def dataset(self):
        return generate(get_benchmark("peaks"), n_samples=1000, seed=5)

    def test_latin_hypercube_strata(self):
        bounds = np.array([[-2.0, 2.0], [0.0, 10.0]])
        points = latin_hypercube(bounds, 200, np.random.default_rng(1))
        for j, (lo, hi) in enumerate(bounds):
            strata = np.floor((points[:, j] - lo) / (hi - lo) * 200).astype(int)
            assert sorted(strata.tolist()) == list(range(200))

    def test_split_sizes(self, dataset):
        assert dataset.n_samples == 1000
        assert len(dataset.test_idx) == 300
        assert len(dataset.train_idx) == 700
        assert set(dataset.train_idx).isdisjoint(dataset.test_idx)

    def test_targets_match_function(self, dataset):
        f = get_benchmark("peaks")
        assert np.array_equal(dataset.targets, f(dataset.inputs[:, 0], dataset.inputs[:, 1]))

    def test_normalization_statistics(self, dataset):
        z = dataset.normalize_inputs(dataset.inputs)
        assert np.all(np.abs(z.mean(axis=0)) <= 1e-8)
        assert np.allclose(z.std(axis=0), 1.0)
        assert np.allclose(dataset.denormalize_inputs(z), dataset.inputs)
        t = dataset.normalize_targets(dataset.targets)
        assert abs(t.mean()) <= 1e-8

    def test_train_statistics(self):
        data = generate(get_benchmark("ackley"), n_samples=500, seed=2, stats_from="train")
        x_train, _ = data.split("train")
        assert np.all(np.abs(data.normalize_inputs(x_train).mean(axis=0)) <= 1e-8)
        assert data.normalization()["stats_from"] == "train"

    def test_same_seed_same_data(self):
        a = generate(get_benchmark("himmelblau"), n_samples=100, seed=9)
        b = generate(get_benchmark("himmelblau"), n_samples=100, seed=9)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.test_idx, b.test_idx)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            generate(get_benchmark("peaks"), n_samples=5)

    def test_csv_export(self, dataset, tmp_path):
        sidecar = dataset.to_csv(tmp_path / "peaks.csv")
        frame = pd.read_csv(tmp_path / "peaks.csv", float_precision="round_trip")
        assert list(frame.columns) == ["x1", "x2", "target"]
        assert np.array_equal(frame["x1"].to_numpy(), dataset.inputs[:, 0])
        meta = json.loads(sidecar.read_text())
        assert meta["function"] == "peaks"
        assert meta["seed"] == 5
        assert len(meta["test_idx"]) == 300
