"""Tests for the discrete linking sum and the normalized linking cost."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from src.core import linking, rope_sim
from src.models import CostBounds, Polyline3, Pose6
from src.utils.exceptions import SingularConfigurationError, ValidationError
from tests.fixtures import circle, hopf_pair, unlinked_pair, wavy_pair


class TestGaussLink:
    def test_hopf_link_midpoint(self):
        a, b = hopf_pair(256)
        result = linking.gauss_link(a, b, rule="midpoint")
        assert result.value == pytest.approx(-1.0, abs=1e-3)
        assert (result.m1, result.m2) == (256, 256)

    def test_hopf_link_vertex(self):
        a, b = hopf_pair(256)
        assert linking.gauss_link(a, b, rule="vertex").value == pytest.approx(-1.0, abs=0.05)

    def test_unlinked(self):
        a, b = unlinked_pair(128)
        assert abs(linking.gauss_link(a, b, rule="midpoint").value) < 1e-3

    def test_symmetric_in_arguments(self):
        a, b = hopf_pair(64)
        assert linking.gauss_link(a, b).value == pytest.approx(linking.gauss_link(b, a).value, abs=1e-12)

    def test_reversal_negates_midpoint_value(self):
        a, b = hopf_pair(64)
        forward = linking.gauss_link(a, b, rule="midpoint").value
        backward = linking.gauss_link(a.reversed(), b, rule="midpoint").value
        assert backward == pytest.approx(-forward, abs=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_default_rule_reversal_on_irregular_pair(self, seed):
        a, b = wavy_pair(seed, count=40)
        b = Polyline3(b.vertices[:37] + np.random.default_rng(seed).normal(0.0, 0.01, (37, 3)), closed=True)
        forward = linking.gauss_link(a, b).value
        assert linking.gauss_link(a.reversed(), b).value == pytest.approx(-forward, rel=1e-12)
        assert linking.gauss_link(a, b.reversed()).value == pytest.approx(-forward, rel=1e-12)
        assert linking.gauss_link(a.reversed(), b.reversed()).value == pytest.approx(forward, rel=1e-12)

    def test_default_rule_reversal_with_open_curve(self):
        a, b = wavy_pair(7)
        arc = Polyline3(b.vertices[:200])
        forward = linking.gauss_link(a, arc).value
        assert abs(forward) > 0.1
        assert linking.gauss_link(a, arc.reversed()).value == pytest.approx(-forward, rel=1e-12)

    def test_vertex_rule_is_not_antisymmetric(self):
        a, b = wavy_pair(3, count=40)
        forward = linking.gauss_link(a, b, rule="vertex").value
        assert linking.gauss_link(a.reversed(), b, rule="vertex").value != pytest.approx(-forward, rel=1e-9)

    def test_far_field_decay(self):
        a = Polyline3(np.array([[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]])).subdivide(8)
        base = Polyline3(np.array([[0.0, -0.5, 0.0], [0.0, 0.5, 0.0]])).subdivide(8)
        direction = np.array([0.3, 0.4, 0.866])
        values = [abs(linking.gauss_link(a, Polyline3(base.vertices + d * direction)).value)
                  for d in (2.0, 4.0, 8.0, 16.0, 32.0)]
        assert values[0] > 0
        assert all(far < near for near, far in zip(values, values[1:]))

    def test_distant_circles(self):
        a, b = circle(64), circle(64, center=(10.0, 0.0, 0.0), plane="xz")
        assert abs(linking.gauss_link(a, b).value) < 1e-4

    def test_two_vertex_curve_is_finite(self):
        segment = Polyline3(np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]]))
        assert np.isfinite(linking.gauss_link(segment, circle(32)).value)
        other = Polyline3(np.array([[0.0, -1.0, 0.0], [0.0, 1.0, 0.0]]))
        assert np.isfinite(linking.gauss_link(segment, other).value)

    def test_rigid_motion_invariance(self):
        a, b = hopf_pair(64)
        pose = Pose6(np.array([0.3, -1.2, 2.0]), Rotation.from_euler("XYZ", [0.4, -0.7, 1.3]))
        moved = linking.gauss_link(a.transformed(pose), b.transformed(pose)).value
        assert moved == pytest.approx(linking.gauss_link(a, b).value, abs=1e-9)

    def test_singular_configuration(self):
        a = circle(16)
        b = Polyline3(np.vstack([a.vertices[:1], [[0.0, 0.0, 1.0], [0.0, 0.5, 1.0]]]), closed=True)
        with pytest.raises(SingularConfigurationError) as info:
            linking.gauss_link(a, b)
        assert info.value.min_distance == pytest.approx(0.0)

    def test_jitter_resolves_singular_configuration(self):
        a = circle(16)
        b = Polyline3(np.vstack([a.vertices[:1], [[0.0, 0.0, 1.0], [0.0, 0.5, 1.0]]]), closed=True)
        result = linking.link_with_jitter(a, b, seed=3)
        assert np.isfinite(result.value)

    def test_unknown_rule(self):
        a, b = hopf_pair(16)
        with pytest.raises(ValidationError):
            linking.gauss_link(a, b, rule="simpson")


class TestCrossingOracle:
    def test_hopf_link(self):
        a, b = hopf_pair(64)
        assert linking.crossing_link(a, b) == -1.0
        assert linking.crossing_link(a, b.reversed()) == 1.0

    def test_unlinked(self):
        a, b = unlinked_pair(64)
        assert linking.crossing_link(a, b) == 0.0

    def test_agrees_with_gauss_sum(self):
        a, b = hopf_pair(128)
        assert round(linking.gauss_link(a, b, rule="midpoint").value) == linking.crossing_link(a, b)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_pairs_agree(self, seed):
        linked = seed % 3 != 0
        a, b = wavy_pair(100 + seed, linked=linked)
        crossing = linking.crossing_link(a, b)
        assert abs(crossing) == (1.0 if linked else 0.0)
        assert linking.gauss_link(a, b).value == pytest.approx(crossing, abs=1e-3)


class TestRefinement:
    def test_levels_double_vertices(self):
        a, b = hopf_pair(32)
        results = linking.refine_convergence(a, b, levels=2)
        assert [r.m1 for r in results] == [32, 64, 128]
        assert [r.m2 for r in results] == [32, 64, 128]

    def test_differences_shrink(self):
        a, b = hopf_pair(32)
        deltas = linking.successive_differences(linking.refine_convergence(a, b, levels=3))
        assert len(deltas) == 3
        assert all(finer < coarser for coarser, finer in zip(deltas, deltas[1:]))

    def test_converged_pair_stays_put(self):
        a, b = unlinked_pair(64)
        deltas = linking.successive_differences(linking.refine_convergence(a, b, levels=2))
        assert all(delta < 1e-3 for delta in deltas)


class TestCost:
    bounds = CostBounds(-0.5, 1.5)

    def test_endpoints(self):
        assert linking.c_link_from_value(1.5, self.bounds) == pytest.approx(0.0)
        assert linking.c_link_from_value(-0.5, self.bounds) == pytest.approx(1.0)
        assert linking.c_link_from_value(0.5, self.bounds) == pytest.approx(0.5)

    def test_clamped(self):
        assert linking.c_link_from_value(9.0, self.bounds) == 0.0
        assert linking.c_link_from_value(-9.0, self.bounds) == 1.0

    def test_array_input(self):
        costs = linking.c_link_from_value(np.array([-1.0, 0.5, 2.0]), self.bounds)
        np.testing.assert_allclose(costs, [1.0, 0.5, 0.0])

    def test_exact_cost(self):
        a, b = hopf_pair(64)
        value = linking.gauss_link(a, b).value
        assert linking.c_link_exact(a, b, CostBounds(-2.0, 0.0)) == pytest.approx(-value / 2.0)


class TestStrapCurves:
    def test_virtual_closure_point(self):
        positions = np.array([[0.0, 0.0, 1.0], [0.5, 0.0, 0.5], [1.0, 0.0, 1.0]])
        curve = linking.virtual_closure(positions, drop=0.25)
        assert curve.closed
        np.testing.assert_allclose(curve.vertices[-1], [0.5, 0.0, 0.75])

    def test_strap_curve_vertex_count(self, world):
        curve = linking.strap_curve(world.rope.positions, world.scene.closure_drop)
        assert curve.count == 2 * world.rope.count
        np.testing.assert_allclose(curve.vertices[0], world.rope.positions[0])

    def test_table_world_is_unlinked(self, cfg):
        world = rope_sim.table_world(cfg, "H1", "M1")
        assert abs(linking.world_link(world)) < 0.1
