import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cylflow.geometry import (
    Circle,
    ClusterParams,
    NodeTag,
    PointAtInfinityError,
    Pointset,
    RoundedSquare,
    Square,
    TransformParams,
    boundary_curve,
    boundary_radius,
    cluster_phi,
    compress_radius,
    decompress_radius,
    generate_pointset,
    physical_coords,
)

T2 = TransformParams(ell=2.0)


class TestCompression:
    def test_boundary_fixed_point(self):
        assert compress_radius(1.0, T2) == 0.0

    def test_infinity_limit(self):
        assert compress_radius(np.inf, T2) == 2.0

    def test_midpoint(self):
        assert compress_radius(2.0, T2) == pytest.approx(1.0, abs=1e-15)

    def test_inside_obstacle_rejected(self):
        with pytest.raises(ValueError):
            compress_radius(0.99, T2)

    def test_decompress_examples(self):
        assert decompress_radius(0.0, T2) == 1.0
        assert decompress_radius(1.0, T2) == 2.0
        assert decompress_radius(1.9, T2) == pytest.approx(20.0, rel=1e-14)

    def test_point_at_infinity_signalled(self):
        with pytest.raises(PointAtInfinityError):
            decompress_radius(2.0, T2)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            decompress_radius(-0.1, T2)
        with pytest.raises(ValueError):
            decompress_radius(2.1, T2)

    def test_round_trip_bulk(self):
        rng = np.random.default_rng(1)
        xi = rng.uniform(0.0, 2.0 - 1e-6, size=10_000)
        back = compress_radius(decompress_radius(xi, T2), T2)
        assert np.max(np.abs(back - xi)) < 1e-12

    @given(st.floats(min_value=0.0, max_value=2.0 - 1e-6))
    def test_round_trip_pointwise(self, xi):
        assert compress_radius(decompress_radius(xi, T2), T2) == pytest.approx(xi, abs=1e-12)

    @given(
        st.floats(min_value=1.0, max_value=1e3),
        st.floats(min_value=1e-6, max_value=1e5),
    )
    def test_strictly_increasing(self, r, dr):
        # dr/r^2 stays far above the float resolution of the map
        assert compress_radius(r + dr, T2) > compress_radius(r, T2)

    def test_ell_validation(self):
        with pytest.raises(ValueError):
            TransformParams(ell=0.5)


class TestPhysicalCoords:
    def test_rear_stagnation(self):
        assert physical_coords(0.0, 0.0, T2) == pytest.approx((1.0, 0.0))

    def test_front_stagnation(self):
        x, y = physical_coords(0.0, np.pi, T2)
        assert x == pytest.approx(-1.0)
        assert y == pytest.approx(0.0, abs=1e-15)

    def test_top_point(self):
        x, y = physical_coords(1.0, np.pi / 2, T2)
        assert x == pytest.approx(0.0, abs=1e-15)
        assert y == pytest.approx(2.0)

    def test_far_edge_signals(self):
        with pytest.raises(PointAtInfinityError):
            physical_coords(2.0, 0.5, T2)


class TestBoundaryCurve:
    def test_circle_is_flat(self):
        phi = np.linspace(0, np.pi, 50)
        assert np.all(boundary_curve(Circle(), phi, T2) == 0.0)

    def test_rounded_alpha1_matches_circle(self):
        phi = np.linspace(0, np.pi, 50)
        assert np.max(np.abs(boundary_curve(RoundedSquare(1), phi, T2))) < 1e-15

    def test_square_axis_point(self):
        assert boundary_curve(Square(), 0.0, T2) == 0.0

    def test_square_corner(self):
        expected = 2.0 * (1.0 - math.sqrt(2.0) / 2.0)
        assert boundary_curve(Square(), np.pi / 4, T2) == pytest.approx(expected, rel=1e-14)

    def test_high_alpha_converges_to_square(self):
        phi = np.linspace(0, np.pi, 721)
        gap = np.abs(boundary_curve(RoundedSquare(50), phi, T2) - boundary_curve(Square(), phi, T2))
        assert np.max(gap) < 0.01 * T2.ell

    def test_boundary_radius_consistency(self):
        # r_gamma and xi_gamma describe the same curve through the map
        phi = np.linspace(0, np.pi, 101)
        for shape in (Circle(), RoundedSquare(3), Square()):
            xi_g = boundary_curve(shape, phi, T2)
            r_g = boundary_radius(shape, phi)
            assert np.max(np.abs(xi_g - 2.0 * (1.0 - 1.0 / r_g))) < 1e-12

    def test_alpha_validation(self):
        with pytest.raises(ValueError):
            RoundedSquare(0)


class TestClusterPhi:
    def test_centre_exact(self):
        phi = cluster_phi(21, ClusterParams(lam=0.1))
        assert phi[10] == np.pi / 4

    def test_endpoints_exact(self):
        phi = cluster_phi(21, ClusterParams(lam=0.1))
        assert phi[0] == 0.0
        assert phi[-1] == np.pi / 2

    def test_spacing_finest_at_corner(self):
        # direct evaluation of the sinh formula: the smallest gap straddles pi/4
        phi = cluster_phi(21, ClusterParams(lam=0.1))
        gaps = np.diff(phi)
        assert np.argmin(gaps) in (9, 10)
        assert gaps[0] > 3.0 * gaps.min()
        assert np.all(gaps > 0)

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            cluster_phi(2, ClusterParams(lam=0.1))

    def test_lambda_validation(self):
        with pytest.raises(ValueError):
            ClusterParams(lam=0.0)


class TestPointset:
    def test_tiny_circle_counts(self):
        ps = generate_pointset(Circle(), 1.0, T2)
        assert ps.n == 12
        assert ps.n_far == 4
        assert ps.n_cylinder == 4
        assert ps.n_axis == 2
        assert ps.n_interior == 2
        assert ps.n == ps.n_interior + ps.n_boundary

    def test_production_circle_count(self):
        ps = generate_pointset(Circle(), 0.05, T2)
        assert 2400 <= ps.n <= 2700

    def test_ordering_single_pass(self):
        ps = generate_pointset(Circle(), 0.2, T2)
        assert np.all(np.diff(ps.tag.astype(int)) >= 0)

    def test_far_equals_cylinder_count(self):
        for h in (0.3, 0.2, 0.1):
            ps = generate_pointset(Circle(), h, T2)
            assert ps.n_far == ps.n_cylinder

    def test_tags_match_coordinates(self):
        ps = generate_pointset(Circle(), 0.2, T2)
        far = ps.indices(NodeTag.FAR)
        cyl = ps.indices(NodeTag.CYLINDER)
        axis = ps.indices(NodeTag.AXIS)
        assert np.all(ps.xi[far] == 2.0)
        assert np.all(ps.xi[cyl] == 0.0)
        assert np.all((ps.phi[axis] == 0.0) | (ps.phi[axis] == np.pi))
        assert np.all(ps.xi[axis] > 0.0)
        assert np.all(ps.xi[axis] < 2.0)

    def test_rounded_nodes_feasible(self):
        # direct evaluation of the transformed surface equation
        ps = generate_pointset(RoundedSquare(3), 0.1, T2)
        xi_g = boundary_curve(RoundedSquare(3), ps.phi, T2)
        assert np.all(ps.xi >= xi_g - 1e-12)
        cyl = ps.indices(NodeTag.CYLINDER)
        assert np.max(np.abs(ps.xi[cyl] - xi_g[cyl])) <= 1e-12

    def test_square_has_clustered_columns(self):
        ps = generate_pointset(Square(), 0.1, T2, ClusterParams(lam=0.1))
        phis = np.unique(ps.phi)
        gaps = np.diff(phis)
        # clustering makes the gap distribution strongly non-uniform
        assert gaps.max() > 3.0 * gaps.min()
        corner = np.pi / 4
        assert corner in phis

    def test_duplicate_nodes_rejected(self):
        xi = np.array([0.5, 0.5])
        phi = np.array([1.0, 1.0])
        tag = np.array([NodeTag.INTERIOR, NodeTag.INTERIOR], dtype=np.int8)
        with pytest.raises(ValueError):
            Pointset(xi=xi, phi=phi, tag=tag)

    def test_spacing_validation(self):
        with pytest.raises(ValueError):
            generate_pointset(Circle(), 2.5, T2)
