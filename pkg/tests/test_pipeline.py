import numpy as np
import pytest

from conicfit import conic
from conicfit.conic import ConicClass
from conicfit.core import FitError, coefficient_covariance
from conicfit.pipeline import BandField, band_value, fit_with_reweight, generic_fit
from conicfit.selftest import angle_between
from conicfit.synth import CurveSpec, NoiseSpec, add_noise

CURVE = CurveSpec()


def _noisy(seed=1, trial=0, n=20, sigma=0.001):
    return add_noise(CURVE.sample(n), NoiseSpec(sigma, seed), trial)


def test_exact_quadrant_recovery():
    fit = generic_fit(CURVE.sample(20))
    assert angle_between(fit.g0, CURVE.true_conic()) < 1e-8
    assert fit.sigma2_hat < 1e-16


def test_underdetermined():
    with pytest.raises(FitError, match="underdetermined"):
        generic_fit(CURVE.sample(5))


def test_weighting_needs_weights():
    with pytest.raises(FitError, match="needs weights"):
        generic_fit(CURVE.sample(20), "optimal")
    with pytest.raises(FitError, match="unknown weighting"):
        generic_fit(CURVE.sample(20), "magic")


@pytest.mark.parametrize("trial", range(5))
def test_normalization_and_covariance_structure(trial):
    fit = generic_fit(_noisy(trial=trial))
    c = fit.constraint
    assert fit.g0 @ c @ fit.g0 == pytest.approx(1.0, abs=1e-10)
    assert fit.g0_raw @ c @ fit.g0_raw == pytest.approx(1.0, abs=1e-10)
    assert np.array_equal(fit.v0, fit.v0.T)
    assert np.linalg.eigvalsh(fit.v0)[0] >= -1e-12 * np.abs(fit.v0).max()
    assert np.linalg.norm(fit.v0 @ c @ fit.g0_raw) < 1e-8 * np.linalg.norm(fit.v0) * np.linalg.norm(c)


def test_permutation_bit_identical():
    pts = _noisy()
    perm = np.random.default_rng(0).permutation(len(pts))
    a, b = generic_fit(pts), generic_fit(pts[perm])
    assert np.array_equal(a.g0, b.g0)
    assert np.array_equal(a.lambdas, b.lambdas)
    assert np.array_equal(a.v0, b.v0)


def test_deterministic():
    pts = _noisy(trial=3)
    a, b = fit_with_reweight(pts)[1], fit_with_reweight(pts)[1]
    assert np.array_equal(a.g0, b.g0) and np.array_equal(a.v0, b.v0)


def test_all_eigenvectors_corrected():
    fit = generic_fit(_noisy())
    assert np.allclose(fit.eigvecs, conic.curvature_correct(fit.eigvecs_raw, fit.sigma2_hat),
                       rtol=0, atol=1e-15)
    off = generic_fit(_noisy(), curvature_correction=False)
    assert np.array_equal(off.g0, off.g0_raw)


def test_corrected_curvature_residual_is_rescaling():
    for trial in range(5):
        fit = generic_fit(_noisy(trial=trial))
        lg = conic.LAPLACE_L.T @ fit.g0_raw
        v = (np.eye(6) - fit.y0 @ fit.scatter) @ lg
        g = fit.g0_raw
        perp = v - (v @ g) / (g @ g) * g
        assert np.linalg.norm(perp) < 1e-8 * np.linalg.norm(lg)


def test_exact_data_reweight_is_stable():
    t = np.linspace(0.3, 2.5, 15)
    circle = np.column_stack([np.cos(t), np.sin(t)])
    prelim, final = fit_with_reweight(circle)
    assert np.allclose(final.g0, prelim.g0, atol=1e-10)
    pts = CURVE.sample(20)
    prelim, final = fit_with_reweight(pts)
    assert angle_between(final.g0, prelim.g0) < 1e-10


def test_reweight_passes_structural():
    pts = _noisy()
    one = fit_with_reweight(pts, passes=1)[1]
    w = conic.optimal_weights(pts, generic_fit(pts).g0)
    assert np.array_equal(one.g0, generic_fit(pts, "optimal", w).g0)
    with pytest.raises(FitError, match="passes"):
        fit_with_reweight(pts, passes=0)


def test_reweight_fallback_warning():
    x = np.linspace(-1, 1, 12)
    pts = np.column_stack([x, x ** 2])
    prelim, final = fit_with_reweight(pts)
    assert prelim.conic_class is ConicClass.PARABOLA
    assert any("reweighting skipped" in w for w in final.warnings)


def test_sampson_path_uses_measured_gradients():
    pts = _noisy()
    prelim, final = fit_with_reweight(pts, sampson=True, passes=1)
    w = conic.sampson_weights(pts, prelim.g0)
    assert final.weighting == "sampson"
    assert np.allclose(final.weights, w)


def test_optimal_covariance_matches_explicit_on_exact_data():
    pts = CURVE.sample(20)
    g = generic_fit(pts).g0_raw
    w = conic.optimal_weights(pts, g)
    fit = generic_fit(pts, "optimal", w, noise_sigma=1e-3)
    explicit = coefficient_covariance(fit.y0, fit.sigma2, fit.n, designs=conic.design_matrix(pts),
                                      gradients=conic.design_gradients(pts), weights=w,
                                      g0=fit.g0_raw)
    raw = fit.sigma2 * fit.y0 / fit.n
    assert np.allclose(explicit, raw, rtol=1e-10, atol=1e-10 * np.abs(raw).max())


def test_optimal_covariance_close_to_explicit_on_noisy_data():
    pts = _noisy(trial=2)
    prelim, fit = fit_with_reweight(pts)
    explicit = coefficient_covariance(fit.y0, fit.sigma2, fit.n, designs=conic.design_matrix(pts),
                                      gradients=conic.design_gradients(pts), weights=fit.weights,
                                      g0=fit.g0_raw)
    raw = fit.sigma2 * fit.y0 / fit.n
    big = np.abs(raw) >= 0.01 * np.abs(raw).max()
    assert np.allclose(explicit[big], raw[big], rtol=0.05)


def test_known_noise_replaces_estimate():
    pts = _noisy()
    est = generic_fit(pts)
    known = generic_fit(pts, noise_sigma=0.002)
    assert known.sigma2 == pytest.approx(4e-6) and known.sigma2_hat == est.sigma2_hat
    assert known.g0[5] == pytest.approx(est.g0_raw[5] + 4e-6 * (est.g0_raw[0] + est.g0_raw[2]))
    with pytest.raises(FitError, match="noise_sigma"):
        generic_fit(pts, noise_sigma=-1.0)


def test_band_value_properties():
    fit = generic_fit(_noisy())
    fld = fit.band()
    frame = conic.elliptical_frame(fit.g0)
    on = frame.sample(7)
    assert np.allclose(fld(on), 0.0, atol=1e-6)
    p = np.array([0.5, 0.05])
    assert band_value(BandField(2 * fit.g0, 4 * fit.v0), p) == pytest.approx(band_value(fld, p),
                                                                              rel=1e-12)
    with pytest.raises(FitError, match="degenerate variance direction"):
        band_value(BandField(fit.g0, np.zeros((6, 6))), p)


def test_single_fig2_trial_is_ellipse_and_covers_truth():
    tp = CURVE.parameters(50)
    covered = 0
    for seed in range(40):
        fit = fit_with_reweight(_noisy(seed=seed), noise_sigma=0.001)[1]
        assert fit.conic_class is ConicClass.ELLIPSE
        z = fit.band()(CURVE.point_at(tp))
        covered += bool(np.all(np.abs(z) < 2))
    # per trial the band tests 50 correlated points; most trials see all inside
    assert covered >= 0.6 * 40
