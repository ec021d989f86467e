import numpy as np
import pytest

from reluopt.models.network import ActivationKind, random_network
from reluopt.services.bound_tightening import obbt
from reluopt.services.bounds_engine import Provenance, check_soundness, classify, ia_bounds
from reluopt.services.region_explorer import enumerate_regions


class TestBoundTightening:
    """LP-based tightening of interval bounds."""

    @pytest.fixture
    def net(self):
        return random_network([8, 8, 8], seed=21)

    @pytest.fixture
    def ia(self, net):
        return ia_bounds(net)

    def test_never_looser_than_ia(self, net, ia):
        report = obbt(net, ia)
        for lo_t, hi_t, lo, hi in zip(report.bounds.lower, report.bounds.upper, ia.lower, ia.upper):
            assert np.all(lo_t >= lo - 1e-9)
            assert np.all(hi_t <= hi + 1e-9)

    def test_first_layer_matches_ia(self, net, ia):
        report = obbt(net, ia)
        lo, hi = report.bounds.layer(1)
        assert np.allclose(lo, ia.lower[0], atol=1e-8)
        assert np.allclose(hi, ia.upper[0], atol=1e-8)

    def test_deeper_layers_tighten(self, net, ia):
        report = obbt(net, ia)
        assert report.bounds.mean_hidden_width() <= ia.mean_hidden_width()
        assert classify(report.bounds).stable_count >= classify(ia).stable_count
        assert report.newly_stable == classify(report.bounds).stable_count - classify(ia).stable_count

    @pytest.mark.parametrize("activation", [ActivationKind.relu(), ActivationKind.clipped(2.0)])
    def test_tightened_bounds_are_sound(self, activation):
        net = random_network([8, 8, 8], seed=5, activation=activation)
        report = obbt(net, ia_bounds(net))
        assert check_soundness(net, report.bounds, n_samples=20_000, seed=3)["violations"] == 0

    def test_lp_count_and_provenance(self, net, ia):
        report = obbt(net, ia)
        assert report.lp_count == 2 * net.n_hidden
        assert report.completed
        assert report.bounds.provenance == Provenance.OBBT

        scaled = obbt(net, ia_bounds(net, provenance=Provenance.SCALED_IA))
        assert scaled.bounds.provenance == Provenance.SCALED_OBBT

    def test_second_pass_is_not_looser(self, net, ia):
        once = obbt(net, ia)
        twice = obbt(net, ia, passes=2)
        assert twice.passes == 2
        for a, b in zip(twice.bounds.upper, once.bounds.upper):
            assert np.all(a <= b + 1e-9)

    def test_exhausted_budget_keeps_bounds_valid(self, net, ia):
        report = obbt(net, ia, time_budget=0.0)
        assert not report.completed
        assert report.to_dict()["completed"] is False
        for lo_t, lo in zip(report.bounds.lower, ia.lower):
            assert np.all(lo_t >= lo - 1e-9)

    def test_parallel_matches_sequential(self, net, ia):
        sequential = obbt(net, ia)
        parallel = obbt(net, ia, parallel=True)
        for a, b in zip(sequential.bounds.lower, parallel.bounds.lower):
            assert np.array_equal(a, b)

    def test_second_pass_changes_widths_little(self, net, ia):
        once = obbt(net, ia).bounds.mean_hidden_width()
        twice = obbt(net, ia, passes=2).bounds.mean_hidden_width()
        assert twice <= once + 1e-9
        assert (once - twice) / once < 0.01

    def test_some_network_gains_stable_neurons(self):
        gains = []
        for seed in range(6):
            net = random_network([8, 8, 8], seed=seed)
            gains.append(obbt(net, ia_bounds(net)).newly_stable)
        assert min(gains) >= 0
        assert max(gains) > 0


class TestRegionOracle:
    """Tightened bounds against exact pre-activation ranges of a two-layer net."""

    @pytest.fixture
    def net(self):
        return random_network([6, 6], seed=11)

    @pytest.fixture
    def exact_ranges(self, net):
        # Pre-activations are affine on every linear region, so their extremes sit on region vertices
        vertices = np.vstack([region.vertices for region in enumerate_regions(net).regions])
        pre, _ = net.forward_trace(vertices)
        return [(p.min(axis=0), p.max(axis=0)) for p in pre[:-1]]

    def test_bounds_contain_exact_ranges(self, net, exact_ranges):
        report = obbt(net, ia_bounds(net))
        for k, (lo, hi) in enumerate(exact_ranges, start=1):
            lower, upper = report.bounds.layer(k)
            assert np.all(lower <= lo + 1e-9)
            assert np.all(upper >= hi - 1e-9)

    def test_first_layer_is_exact(self, net, exact_ranges):
        lower, upper = obbt(net, ia_bounds(net)).bounds.layer(1)
        lo, hi = exact_ranges[0]
        assert np.allclose(lower, lo, atol=1e-7)
        assert np.allclose(upper, hi, atol=1e-7)

    def test_second_layer_between_exact_and_ia(self, net, exact_ranges):
        ia = ia_bounds(net)
        lower, upper = obbt(net, ia).bounds.layer(2)
        lo, hi = exact_ranges[1]
        assert np.all(upper - lower <= ia.upper[1] - ia.lower[1] + 1e-9)
        assert np.all(upper - lower >= hi - lo - 1e-9)
