import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conicfit import conic
from conicfit.conic import ConicClass
from conicfit.core import FitError
from conicfit.pipeline import generic_fit
from conicfit.selftest import angle_between, random_exact_case

coord = st.floats(-50, 50, allow_nan=False)


def _n(g):
    g = np.asarray(g, dtype=float)
    return g / np.linalg.norm(g)


def test_design_vector_examples():
    assert np.array_equal(conic.design_vector((0, 0)), [0, 0, 0, 0, 0, 1])
    assert np.array_equal(conic.design_vector((2, 3)), [4, 6, 9, 2, 3, 1])
    assert np.array_equal(conic.design_vector((-1, 1)), [1, -1, 1, -1, 1, 1])


def test_design_gradient_examples():
    dx, dy = conic.design_gradient((0, 0))
    assert np.array_equal(dx, [0, 0, 0, 1, 0, 0]) and np.array_equal(dy, [0, 0, 0, 0, 1, 0])
    dx, dy = conic.design_gradient((1, 2))
    assert np.array_equal(dx, [2, 2, 0, 1, 0, 0]) and np.array_equal(dy, [0, 1, 4, 0, 1, 0])


@given(coord, coord)
def test_design_gradient_central_difference(x, y):
    h = 1e-5
    dx, dy = conic.design_gradient((x, y))
    fx = (conic.design_vector((x + h, y)) - conic.design_vector((x - h, y))) / (2 * h)
    fy = (conic.design_vector((x, y + h)) - conic.design_vector((x, y - h))) / (2 * h)
    scale = 1 + abs(x) + abs(y)
    assert np.allclose(fx, dx, atol=1e-8 * scale)
    assert np.allclose(fy, dy, atol=1e-8 * scale)


def test_constraint_single_points():
    assert np.array_equal(conic.build_constraint_cn([(0, 0)]), np.diag([0, 0, 0, 1, 1, 0]))
    c = conic.build_constraint_cn([(1, 0)])
    expect = np.zeros((6, 6))
    expect[0, 0], expect[0, 3], expect[3, 0], expect[3, 3] = 4, 2, 2, 1
    expect[1, 1], expect[1, 4], expect[4, 1], expect[4, 4] = 1, 1, 1, 1
    assert np.array_equal(c, expect)


@given(st.lists(st.tuples(coord, coord), min_size=1, max_size=20))
def test_constraint_last_row_column_zero(pts):
    c = conic.build_constraint_cn(pts)
    assert not np.any(c[5]) and not np.any(c[:, 5])


def test_constraint_rank_check():
    with pytest.raises(FitError, match="degenerate point configuration"):
        conic.build_constraint_cn([(1, 0), (2, 0), (3, 0)], check_rank=True)


def test_curvature_correct_examples(rng):
    g = rng.normal(size=6)
    assert np.array_equal(conic.curvature_correct(g, 0.0), g)
    out = conic.curvature_correct([1, 0, 1, 0, 0, -1], 0.01)
    assert out[5] == pytest.approx(-0.98) and np.array_equal(out[:5], [1, 0, 1, 0, 0])
    c = conic.build_constraint_cn(rng.normal(size=(10, 2)))
    h = conic.curvature_correct(g, 0.3)
    assert h @ c @ h == pytest.approx(g @ c @ g, rel=1e-14)


@given(coord, coord)
def test_laplacian_identity(x, y):
    d = conic.design_vector((x, y))
    assert np.array_equal(2 * conic.LAPLACE_L @ d, [2, 0, 2, 0, 0, 0])


def test_laplacian_annihilates_constraint(rng):
    c = conic.build_constraint_cn(rng.normal(size=(25, 2)), rng.uniform(0.1, 1, 25))
    assert np.array_equal(conic.LAPLACE_L @ c, np.zeros((6, 6)))
    assert np.array_equal(c @ conic.LAPLACE_L.T, np.zeros((6, 6)))


def test_quadric_form(rng):
    for g in rng.normal(size=(50, 6)):
        assert g @ conic.QUADRIC_Q @ g == pytest.approx(4 * g[0] * g[2] - g[1] ** 2, abs=1e-12)


def test_classify_examples():
    assert conic.classify(_n([1, 0, 1, 0, 0, -1])) is ConicClass.ELLIPSE
    assert conic.classify(_n([0, 1, 0, 0, 0, -1])) is ConicClass.HYPERBOLA
    assert conic.classify(_n([1, 0, 0, 0, -1, 0])) is ConicClass.PARABOLA
    # line pair x^2 - y^2 = 0
    assert conic.classify(_n([1, 0, -1, 0, 0, 0])) is ConicClass.DEGENERATE


def test_frame_for_ellipse():
    fr = conic.elliptical_frame([0.25, 0, 1, 0, 0, -1])
    assert np.allclose(fr.center, [0, 0])
    assert np.allclose(np.abs(fr.f_par), [math.sqrt(3), 0])
    assert math.cosh(fr.eta0) == pytest.approx(2 / math.sqrt(3))
    assert np.array_equal(fr.f_perp, [-fr.f_par[1], fr.f_par[0]])


def test_frame_circle_fallback():
    fr = conic.elliptical_frame([1, 0, 1, -2, -4, 4])
    assert fr.circular and np.allclose(fr.center, [1, 2])


def test_frame_rejects_parabola():
    with pytest.raises(FitError, match="no elliptical frame"):
        conic.elliptical_frame(_n([1, 0, 0, 0, -1, 0]))


def test_frame_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(40):
        _, g = random_exact_case(rng)
        fr = conic.elliptical_frame(g)
        pts = fr.sample(100)
        scale = 1 + np.abs(pts).max()
        z = conic.algebraic_distance(g, pts)
        assert np.max(np.abs(z)) < 1e-8 * np.linalg.norm(g) * scale ** 2


def test_nearest_point_examples():
    circle = conic.elliptical_frame([1, 0, 1, 0, 0, -1])
    assert np.allclose(conic.nearest_point(circle, np.array([2.0, 0.0])), [1, 0])
    ell = conic.elliptical_frame([0.25, 0, 1, 0, 0, -1])
    assert np.allclose(conic.nearest_point(ell, np.array([0.0, 2.0])), [0, 1], atol=1e-12)
    with pytest.raises(FitError, match="ambiguous projection"):
        conic.nearest_point(circle, np.array([0.0, 0.0]))
    with pytest.raises(FitError, match="ambiguous projection"):
        conic.nearest_point(ell, np.array([0.0, 0.0]))


def test_nearest_point_against_dense_search():
    rng = np.random.default_rng(11)
    for _ in range(12):
        _, g = random_exact_case(rng)
        fr = conic.elliptical_frame(g)
        dense = fr.sample(200_000) if fr.kind is ConicClass.ELLIPSE else None
        if dense is None:
            eta = np.linspace(-4, 4, 100_000)
            dense = np.concatenate([fr.from_coords(eta, np.full_like(eta, t)) for t in
                                    (fr.theta0, np.pi - fr.theta0, -fr.theta0, np.pi + fr.theta0)])
        on = fr.sample(20)
        for p in on + rng.normal(scale=0.01, size=on.shape):
            q = conic.nearest_point(fr, p)
            assert abs(conic.algebraic_distance(g, q[None])[0]) < 1e-10 * (1 + np.abs(q).max()) ** 2
            best = np.min(np.hypot(*(dense - p).T))
            assert np.hypot(*(q - p)) <= 1.1 * best + 1e-12


def test_nearest_point_idempotent():
    rng = np.random.default_rng(5)
    for _ in range(20):
        pts, g = random_exact_case(rng)
        fr = conic.elliptical_frame(g)
        p = pts + rng.normal(scale=0.05, size=pts.shape)
        once = conic.nearest_point(fr, p)
        assert np.allclose(conic.nearest_point(fr, once), once, atol=1e-10)


def test_optimal_weights_on_circle():
    t = np.linspace(0, 2 * np.pi, 16, endpoint=False)
    pts = np.column_stack([np.cos(t), np.sin(t)])
    g = _n([1, 0, 1, 0, 0, -1])
    w = conic.optimal_weights(pts, g)
    assert np.allclose(w, 1 / (16 * 4 * g[0] ** 2), rtol=1e-12)


def test_optimal_weights_flat_side_vs_tip():
    g = np.array([1.0, 0, 100.0, 0, 0, -1])
    pts = np.array([[1.0, 0.0], [0.0, 0.1]])
    w = conic.optimal_weights(pts, g)
    # |grad Z|^2 is (2x)^2 at the tip and (200 y)^2 on the flat side
    assert w[0] / w[1] == pytest.approx((200 * 0.1) ** 2 / 2 ** 2, rel=1e-10)


def test_weight_scale_homogeneity():
    rng = np.random.default_rng(9)
    pts, g = random_exact_case(rng, 20)
    noisy = pts + rng.normal(scale=0.01, size=pts.shape)
    w1 = conic.optimal_weights(noisy, g)
    w2 = conic.optimal_weights(noisy, 3 * g)
    assert np.allclose(w2, w1 / 9, rtol=1e-12)
    a = generic_fit(noisy, "optimal", w1).g0
    b = generic_fit(noisy, "optimal", w2).g0
    assert angle_between(a, b) < 1e-10


def test_sampson_equals_optimal_on_curve():
    rng = np.random.default_rng(2)
    pts, g = random_exact_case(rng, 20)
    assert np.allclose(conic.sampson_weights(pts, g), conic.optimal_weights(pts, g), rtol=1e-12)


def test_sampson_on_noisy_circle_point():
    g = _n([1, 0, 1, 0, 0, -1])
    delta = 0.05
    pts = np.array([[1 + delta, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    ws = conic.sampson_weights(pts, g)
    wo = conic.optimal_weights(pts, g)
    assert ws[0] == pytest.approx(1 / (3 * 4 * (1 + delta) ** 2 * g[0] ** 2), rel=1e-12)
    assert ws[0] / wo[0] == pytest.approx((1 + delta) ** -2, rel=1e-12)


def test_weight_floor():
    g = np.array([1.0, 0, 1, 0, 0, -1])
    w = conic.sampson_weights([(0, 0), (1, 0), (0, 1)], g)
    assert np.isfinite(w).all() and w[0] == pytest.approx(1e8 * w[1])


def test_euclidean_invariance():
    rng = np.random.default_rng(21)
    pts, _ = random_exact_case(rng, 30)
    pts = pts + rng.normal(scale=0.01, size=pts.shape)
    rot, shift = 0.7, np.array([3.0, -2.0])
    c, s = math.cos(rot), math.sin(rot)
    moved = pts @ np.array([[c, -s], [s, c]]).T + shift
    g = generic_fit(pts).g0
    h = generic_fit(moved).g0
    assert angle_between(conic.transform_conic(g, rot, shift), h) < 1e-8


def test_conic_center_examples():
    assert np.allclose(conic.conic_center(_n([1, 0, 1, -2, -4, 4])), [1, 2])
    assert np.allclose(conic.conic_center([1, 0, 1, 0, 0, -1]), [0, 0])
    with pytest.raises(FitError, match="parameter singular"):
        conic.conic_center([1, 0, 0, 0, -1, 0])


def test_normal_offset():
    g = np.array([1.0, 0, 1, 0, 0, -1])
    assert conic.normal_offset(g, (1.1, 0), (1, 0)) == pytest.approx(-0.1)
    assert conic.normal_offset(g, (0, 0.9), (0, 1)) == pytest.approx(0.1)
