import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sscuq.depth import gaussian_cdf_interval, kl_loss
from sscuq.grids import DepthEstimate, GroundTruthDepth
from sscuq.rng import normals, uniforms

# erf oracle: P(|Z| <= 1) = erf(1/sqrt(2))
ONE_SIGMA_MASS = 0.682689492137086


def test_cdf_half_mass_below_mean():
    assert gaussian_cdf_interval(-math.inf, 5.0, 5.0, 2.0) == pytest.approx(0.5, abs=1e-15)


def test_cdf_one_sigma_interval():
    got = gaussian_cdf_interval(4.0, 6.0, 5.0, 1.0)
    assert got == pytest.approx(ONE_SIGMA_MASS, abs=1e-12)


def test_cdf_zero_width_interval():
    assert gaussian_cdf_interval(3.0, 3.0, 5.0, 1.0) == 0.0


def test_cdf_whole_line():
    assert gaussian_cdf_interval(-math.inf, math.inf, 0.0, 1.0) == 1.0


def test_cdf_rejects_bad_sigma():
    with pytest.raises(ValueError):
        gaussian_cdf_interval(0.0, 1.0, 0.0, 0.0)


def test_cdf_rejects_reversed_interval():
    with pytest.raises(ValueError):
        gaussian_cdf_interval(1.0, 0.0, 0.0, 1.0)


def test_cdf_far_tail_accuracy():
    # 8..9 sigma tail: difference of the survival function, no cancellation
    from scipy.stats import norm

    got = gaussian_cdf_interval(8.0, 9.0, 0.0, 1.0)
    want = norm.sf(8.0) - norm.sf(9.0)
    assert got == pytest.approx(want, rel=1e-10)
    assert got > 0


@given(
    st.floats(-50, 50),
    st.floats(-50, 50),
    st.floats(-10, 10),
    st.floats(0.01, 20),
)
@settings(max_examples=200, deadline=None)
def test_cdf_monotone_and_bounded(a, b, mean, sigma):
    lo, hi = min(a, b), max(a, b)
    p = gaussian_cdf_interval(lo, hi, mean, sigma)
    assert 0.0 <= p <= 1.0
    wider = gaussian_cdf_interval(lo - 1.0, hi + 1.0, mean, sigma)
    assert wider >= p - 1e-15


@given(
    st.floats(-20, 20),
    st.floats(0.1, 10),
    st.floats(-30, 30),
    st.floats(0, 30),
    st.floats(0, 30),
)
@settings(max_examples=200, deadline=None)
def test_cdf_additive_over_adjacent_intervals(mean, sigma, start, len1, len2):
    mid = start + len1
    end = mid + len2
    whole = gaussian_cdf_interval(start, end, mean, sigma)
    parts = gaussian_cdf_interval(start, mid, mean, sigma) + gaussian_cdf_interval(
        mid, end, mean, sigma
    )
    assert abs(whole - parts) <= 1e-12


# ---------------------------------------------------------------------------
# loss


def _maps(depth, mean, sigma, valid=None):
    depth = np.asarray(depth, dtype=np.float64)
    if valid is None:
        valid = np.ones(depth.shape, bool)
    gt = GroundTruthDepth(depth, valid)
    est = DepthEstimate(np.asarray(mean, np.float64), np.asarray(sigma, np.float64), valid)
    return gt, est


def test_loss_zero_residual_unit_sigma():
    d = np.full((3, 3), 4.0)
    gt, est = _maps(d, d, np.ones_like(d))
    rep = kl_loss(gt, est)
    assert rep.loss == 0.0
    assert np.all(rep.grad_mean == 0.0)
    assert np.allclose(rep.grad_sigma, 1.0 / 9.0)


def test_loss_single_pixel_unit_residual():
    gt, est = _maps([[5.0]], [[4.0]], [[1.0]])
    assert kl_loss(gt, est).loss == pytest.approx(0.5)


def test_loss_single_pixel_log_term():
    gt, est = _maps([[5.0]], [[5.0]], [[math.e]])
    assert kl_loss(gt, est).loss == pytest.approx(1.0)


def test_loss_requires_matching_shapes():
    gt = GroundTruthDepth(np.ones((2, 2)), np.ones((2, 2), bool))
    est = DepthEstimate(np.ones((3, 3)), np.ones((3, 3)), np.ones((3, 3), bool))
    with pytest.raises(ValueError):
        kl_loss(gt, est)


def test_loss_requires_a_valid_pixel():
    gt, est = _maps([[1.0]], [[1.0]], [[1.0]], valid=np.zeros((1, 1), bool))
    with pytest.raises(ValueError):
        kl_loss(gt, est)


def test_loss_masked_mean_matches_manual():
    valid = np.array([[True, False], [True, True]])
    d = np.array([[2.0, 9.0], [3.0, 4.0]])
    mu = np.array([[2.5, 1.0], [3.0, 3.0]])
    sg = np.array([[0.5, 1.0], [2.0, 1.5]])
    gt, est = _maps(d, mu, sg, valid)
    per_pixel = (d - mu) ** 2 / (2 * sg**2) + np.log(sg)
    assert kl_loss(gt, est).loss == pytest.approx(per_pixel[valid].mean())


def _random_instance(seed, shape=(4, 4)):
    n = shape[0] * shape[1]
    d = 1.0 + 9.0 * uniforms(seed, np.arange(n)).reshape(shape)
    mu = d + 0.8 * normals(seed + 1, np.arange(n)).reshape(shape)
    mu = np.abs(mu) + 0.1
    sg = 0.5 + 1.5 * uniforms(seed + 2, np.arange(n)).reshape(shape)
    return _maps(d, mu, sg)


def _fd_gradients(gt, est, h=1e-5):
    grad_mean = np.zeros(est.shape)
    grad_sigma = np.zeros(est.shape)
    for i in range(est.shape[0]):
        for j in range(est.shape[1]):
            for target, out in ((est.mean, grad_mean), (est.sigma, grad_sigma)):
                hi = np.array(target)
                lo = np.array(target)
                hi[i, j] += h
                lo[i, j] -= h
                if target is est.mean:
                    up = DepthEstimate(hi, est.sigma, est.valid_mask)
                    dn = DepthEstimate(lo, est.sigma, est.valid_mask)
                else:
                    up = DepthEstimate(est.mean, hi, est.valid_mask)
                    dn = DepthEstimate(est.mean, lo, est.valid_mask)
                out[i, j] = (kl_loss(gt, up).loss - kl_loss(gt, dn).loss) / (2 * h)
    return grad_mean, grad_sigma


def test_gradients_match_finite_differences():
    for seed in range(5):
        gt, est = _random_instance(100 + 10 * seed)
        rep = kl_loss(gt, est)
        fd_mean, fd_sigma = _fd_gradients(gt, est)
        assert np.allclose(rep.grad_mean, fd_mean, rtol=1e-5, atol=1e-10)
        assert np.allclose(rep.grad_sigma, fd_sigma, rtol=1e-5, atol=1e-10)


def test_per_pixel_loss_minimized_at_absolute_residual():
    # scan sigma for a fixed residual; the minimum sits at |d - mean|
    d, mu = 5.0, 3.5
    resid = abs(d - mu)
    sigmas = np.linspace(0.3, 4.0, 400)
    losses = (d - mu) ** 2 / (2 * sigmas**2) + np.log(sigmas)
    best = sigmas[np.argmin(losses)]
    assert best == pytest.approx(resid, abs=sigmas[1] - sigmas[0])
