import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from cylflow.geometry import Circle, ClusterParams, Square, TransformParams, boundary_curve, generate_pointset
from cylflow.pum import (
    Cover,
    CoverageError,
    build_cover,
    cover_from_patches,
    shepard_weight_derivatives,
    shepard_weights,
    wendland_c2,
)

T2 = TransformParams(ell=2.0)


@pytest.fixture(scope="module")
def circle_cover():
    ps = generate_pointset(Circle(), 0.1, T2)
    return ps, build_cover(ps, Circle(), 0.3, 0.1)


def _covered_points(cover, n, seed=0):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(0, 2, n), rng.uniform(0, np.pi, n)])
    return pts[[cover.covering(q).size > 0 for q in pts]]


class TestWendland:
    def test_value_at_origin(self):
        assert wendland_c2(0.0) == 1.0

    def test_support_edge(self):
        assert wendland_c2(1.0) == 0.0
        assert wendland_c2(1.5) == 0.0

    def test_half_radius(self):
        assert wendland_c2(0.5) == pytest.approx(0.5**4 * 3.0)

    @given(st.floats(min_value=0.0, max_value=2.0))
    def test_nonnegative_and_bounded(self, r):
        v = wendland_c2(r)
        assert 0.0 <= v <= 1.0


class TestBuildCover:
    def test_full_cover_and_overlap_bound(self):
        # exhaustive membership check on the production circle grid
        ps = generate_pointset(Circle(), 0.05, T2)
        cover = build_cover(ps, Circle(), 0.25, 0.05)
        assert all(lst.size > 0 for lst in cover.node_to_patches)
        assert cover.k_max <= 9

    def test_single_patch_cover(self):
        ps = generate_pointset(Circle(), 0.5, T2)
        cover = cover_from_patches(ps, [((1.0, np.pi / 2), (3.0, 3.0))])
        assert cover.n_patches == 1
        assert cover.k_max == 1
        assert all(lst.tolist() == [0] for lst in cover.node_to_patches)

    def test_uncovered_node_reported(self):
        ps = generate_pointset(Circle(), 0.5, T2)
        with pytest.raises(CoverageError, match="node"):
            cover_from_patches(ps, [((0.0, 0.0), (0.6, 0.6))])

    def test_radius_spacing_precondition(self):
        ps = generate_pointset(Circle(), 0.2, T2)
        with pytest.raises(ValueError):
            build_cover(ps, Circle(), 0.09, 0.2)

    def test_members_strictly_inside(self, circle_cover):
        ps, cover = circle_cover
        for p in cover.patches:
            d = ps.points[p.members] - np.asarray(p.center)
            rho = np.hypot(d[:, 0] / p.semiaxes[0], d[:, 1] / p.semiaxes[1])
            assert np.all(rho < 1.0)

    def test_node_to_patches_sorted_and_consistent(self, circle_cover):
        ps, cover = circle_cover
        assert cover.k_max == max(len(lst) for lst in cover.node_to_patches)
        for i, lst in enumerate(cover.node_to_patches):
            assert np.all(np.diff(lst) > 0)
            for j in lst:
                assert i in cover.patches[j].members

    def test_square_boundary_row_balance(self):
        # per-patch membership of the boundary-tracking row stays within 3x
        ps = generate_pointset(Square(), 0.05, T2, ClusterParams(lam=0.1))
        cover = build_cover(ps, Square(), 0.25, 0.05, ClusterParams(lam=0.1))
        counts = []
        for p in cover.patches:
            xi_g = float(boundary_curve(Square(), p.center[1], T2))
            if abs(p.center[0] - xi_g) < 1e-9:
                counts.append(p.members.size)
        assert len(counts) > 5
        assert max(counts) <= 3 * min(counts)


class TestShepardWeights:
    def test_partition_of_unity(self, circle_cover):
        _, cover = circle_cover
        pts = _covered_points(cover, 1000)
        assert len(pts) > 900
        for q in pts:
            w = shepard_weights(q, cover)
            assert abs(sum(w.values()) - 1.0) < 1e-13

    def test_patch_centre_weight_is_one(self):
        ps = generate_pointset(Circle(), 0.5, T2)
        cover = cover_from_patches(ps, [((1.0, 1.5), (3.5, 3.5))])
        w = shepard_weights((1.0, 1.5), cover)
        assert w == {0: 1.0}

    def test_two_patch_example(self):
        # centres offset so the bumps at q evaluate to exactly 0.3 and 0.1
        r_a = brentq(lambda r: wendland_c2(r) - 0.3, 0.0, 1.0)
        r_b = brentq(lambda r: wendland_c2(r) - 0.1, 0.0, 1.0)
        ps = generate_pointset(Circle(), 0.5, T2)
        q = (1.0, 1.5)
        patches = [((1.0 - 2.5 * r_a, 1.5), (2.5, 4.0)), ((1.0 - 2.5 * r_b, 1.5), (2.5, 4.0))]
        cover = cover_from_patches(ps, patches)
        w = shepard_weights(q, cover)
        assert w[0] == pytest.approx(0.75, rel=1e-12)
        assert w[1] == pytest.approx(0.25, rel=1e-12)

    def test_uncovered_point_raises(self, circle_cover):
        _, cover = circle_cover
        with pytest.raises(CoverageError):
            shepard_weights((50.0, 50.0), cover)

    def test_compact_support(self, circle_cover):
        _, cover = circle_cover
        q = np.array([1.0, 1.5])
        w = shepard_weights(q, cover)
        for j, p in enumerate(cover.patches):
            d = q - np.asarray(p.center)
            rho = np.hypot(d[0] / p.semiaxes[0], d[1] / p.semiaxes[1])
            if rho >= 1.0:
                assert j not in w


class TestShepardDerivatives:
    def test_single_patch_derivatives_vanish(self):
        ps = generate_pointset(Circle(), 0.5, T2)
        cover = cover_from_patches(ps, [((1.0, 1.5), (3.5, 3.5))])
        table = shepard_weight_derivatives((0.7, 1.1), cover)
        w, *derivs = table[0]
        assert w == 1.0
        assert all(d == 0.0 for d in derivs)

    def test_derivative_sums_vanish(self, circle_cover):
        _, cover = circle_cover
        pts = _covered_points(cover, 300, seed=3)
        sums = np.zeros(6)
        worst = np.zeros(6)
        for q in pts:
            table = shepard_weight_derivatives(q, cover)
            vals = np.array(list(table.values()))
            s = np.abs(vals.sum(axis=0))
            s[0] = abs(s[0] - 1.0)
            worst = np.maximum(worst, s)
        assert worst[0] < 1e-13
        assert np.all(worst[1:3] < 1e-10)
        assert np.all(worst[3:] < 1e-10)

    def test_first_derivatives_match_finite_differences(self, circle_cover):
        _, cover = circle_cover
        rng = np.random.default_rng(7)
        pts = _covered_points(cover, 40, seed=11)
        step = 1e-6
        for q in pts[:25]:
            table = shepard_weight_derivatives(q, cover)
            for k, axis in ((1, 0), (2, 1)):
                dq = np.zeros(2)
                dq[axis] = step
                wp = shepard_weights(q + dq, cover)
                wm = shepard_weights(q - dq, cover)
                for j, vals in table.items():
                    fd = (wp.get(j, 0.0) - wm.get(j, 0.0)) / (2 * step)
                    assert vals[k] == pytest.approx(fd, rel=1e-6, abs=1e-7)

    def test_second_derivatives_match_finite_differences(self, circle_cover):
        # hierarchy: second analytic derivatives against differences of the
        # (already validated) first analytic derivatives
        _, cover = circle_cover
        pts = _covered_points(cover, 40, seed=13)
        step = 1e-6

        def first(q):
            return shepard_weight_derivatives(q, cover)

        for q in pts[:20]:
            table = first(q)
            ex = first(q + np.array([step, 0.0]))
            wx = first(q - np.array([step, 0.0]))
            ey = first(q + np.array([0.0, step]))
            wy = first(q - np.array([0.0, step]))
            for j, vals in table.items():
                fd_11 = (ex[j][1] - wx[j][1]) / (2 * step)
                fd_22 = (ey[j][2] - wy[j][2]) / (2 * step)
                fd_12 = (ey[j][1] - wy[j][1]) / (2 * step)
                assert vals[3] == pytest.approx(fd_11, rel=1e-5, abs=1e-5)
                assert vals[4] == pytest.approx(fd_22, rel=1e-5, abs=1e-5)
                assert vals[5] == pytest.approx(fd_12, rel=1e-5, abs=1e-5)
