from __future__ import annotations

import math

import numpy as np
import pytest

from sepspike import estimators
from sepspike.errors import (
    BelowEdge,
    DivergentSum,
    InsufficientResamples,
    MissingBases,
    MissingVectors,
    NotIsotropicBase,
)
from sepspike.sampling import SampleDraw, draw
from sepspike.spectra import PopulationSpectrum, SeparableModel, spiked_to


def synthetic(eigs, p=100, n=100, left=None, right=None):
    return SampleDraw(np.asarray(eigs, dtype=float), left, right, p, n)


def test_scan_limit():
    assert estimators.scan_limit(150, 200) == 15
    assert estimators.scan_limit(5, 5) == 1


def test_calibration_quantile_and_coverage():
    cal = estimators.calibrate_omega(100, 150, N=200, epsilon=0.1, seed=3)
    assert cal.statistics.size == 200
    assert np.all(cal.statistics >= 1.0)
    assert cal.coverage >= 0.9
    # inverted-cdf: the 180th smallest statistic
    assert cal.omega == pytest.approx(np.sort(cal.statistics)[179] - 1.0)
    assert cal.in_consistency_window


def test_calibration_is_seeded():
    a = estimators.calibrate_omega(50, 60, N=100, seed=1).omega
    b = estimators.calibrate_omega(50, 60, N=100, seed=1).omega
    c = estimators.calibrate_omega(50, 60, N=100, seed=2).omega
    assert a == b and a != c


def test_calibration_argument_checks():
    with pytest.raises(InsufficientResamples):
        estimators.calibrate_omega(50, 60, N=99)
    with pytest.raises(ValueError):
        estimators.calibrate_omega(50, 60, N=100, epsilon=0.5)


def test_ratio_count_on_synthetic_spectrum():
    eigs = [9.0, 6.0, 4.1, 4.0, 3.95, 3.9] + [3.0] * 94
    res = estimators.estimate_counts(synthetic(eigs), omega=0.1, vectors=False)
    assert res.q == 2
    assert res.ratios[0] == pytest.approx(0.5)
    assert not res.saturated["q"]


def test_ratio_count_null_is_zero():
    eigs = np.linspace(4.0, 3.0, 100)
    assert estimators.estimate_counts(synthetic(eigs), omega=0.05, vectors=False).q == 0


def test_ratio_count_saturates():
    eigs = 2.0 ** -np.arange(100.0)
    res = estimators.estimate_counts(synthetic(eigs), omega=0.5, vectors=False)
    assert res.q == estimators.scan_limit(100, 100)
    assert res.saturated["q"]


def test_overlap_counts_use_population_bases():
    p = n = 50
    s = synthetic([9.0, 8.0, 7.0] + [1.0] * 47, p, n, np.eye(p), np.eye(n))
    # two population directions lie in the top-K sample span, the rest are orthogonal to it
    cols = [0, 1] + list(range(20, 50)) + list(range(2, 20))
    res = estimators.estimate_counts(s, 0.5, np.eye(p)[:, cols], np.eye(n)[:, cols], c=0.2)
    assert (res.q_a, res.q_b) == (2, 2)
    np.testing.assert_allclose(res.max_overlap_a[:3], [1.0, 1.0, 0.0])


def test_overlap_counts_need_vectors_and_bases():
    s = synthetic([2.0, 1.0, 0.5], 3, 3)
    with pytest.raises(MissingVectors):
        estimators.estimate_counts(s, 0.1)
    s = synthetic([2.0, 1.0, 0.5], 3, 3, np.eye(3), np.eye(3))
    with pytest.raises(MissingBases):
        estimators.estimate_counts(s, 0.1)


def test_counts_recover_well_separated_spikes():
    model = spiked_to(SeparableModel.null(150, 200), [8.0], [7.0])
    cal = estimators.calibrate_omega(150, 200, N=200, seed=0)
    d = draw(model, seed=0)
    res = estimators.estimate_counts(d, cal, model.ordered_basis_a(), model.ordered_basis_b())
    assert res.as_tuple() == (2, 1, 1)


def test_adaptive_estimator_closed_form_on_synthetic_spectrum():
    n = 4
    rest = np.array([1.0, 2.0, 3.0])
    eigs = np.r_[10.0, rest]
    s = synthetic(eigs, 4, n)
    expected = -1.0 / (np.sum(1.0 / (rest - 10.0)) / n)
    assert estimators.adaptive_spikes(s, [1], 1)[0] == pytest.approx(expected)


def test_adaptive_estimator_pads_q2_with_zeros():
    s = synthetic([10.0, 2.0], p=2, n=4)
    expected = -1.0 / ((1 / (2 - 10) + 2 / (0 - 10)) / 4)
    assert estimators.adaptive_spikes(s, [1], 1)[0] == pytest.approx(expected)


def test_adaptive_estimator_b_side_uses_q1():
    s = synthetic([10.0, 2.0], p=4, n=2)
    expected = -1.0 / ((1 / (2 - 10) + 2 / (0 - 10)) / 2)
    assert estimators.adaptive_spikes(s, [1], 1, side="b")[0] == pytest.approx(expected)


def test_adaptive_estimator_divergent_sum():
    s = synthetic([5.0, 5.0, 1.0], p=3, n=3)
    with pytest.raises(DivergentSum):
        estimators.adaptive_spikes(s, [2], 0)


def test_adaptive_estimator_is_close_to_truth():
    model = spiked_to(SeparableModel.null(300, 400), [8.0], [3.0])
    vals = [estimators.adaptive_spikes(draw(model, seed=0, rep=i, vectors=False), [1], 2)[0] for i in range(30)]
    assert np.mean(vals) == pytest.approx(8.0, abs=0.4)


def test_isotropic_shrinkage_unit_values():
    d_hat = estimators.d_hat_isotropic(4.5, 1.0)
    assert d_hat == pytest.approx(2.0, abs=1e-14)
    assert estimators.rho_hat_isotropic(d_hat, 1.0) == pytest.approx(1.0, abs=1e-14)


def test_d_hat_inverts_the_outlier_map():
    for d in (0.5, 1.0, 2.0):
        for ell in (2.0, 3.0, 5.0):
            theta = (1 + ell) * (1 + d / ell)
            assert estimators.d_hat_isotropic(theta, d) == pytest.approx(ell, rel=1e-12)


def test_b_side_d_hat_inverts_the_b_outlier_map():
    d = 0.5
    for ell in (3.0, 5.0):
        theta = d * (1 + ell) * (1 + (1 / d) / ell)
        assert estimators.d_hat_isotropic(theta, d, side="b") == pytest.approx(ell, rel=1e-12)


def test_shrinkage_clipping_and_below_edge():
    assert estimators.rho_hat_isotropic(0.5, 1.0) == 0.0
    assert estimators.rho_hat_isotropic(0.5, 1.0, clip=False) == pytest.approx((0.25 - 1) / 1.5)
    with pytest.raises(BelowEdge):
        estimators.d_hat_isotropic(3.9, 1.0)


def test_shrink_builds_matrix_with_shrunk_directions():
    model = spiked_to(SeparableModel.null(100, 100), [6.0])
    d = draw(model, seed=0)
    res = estimators.shrink(d, [1], model=model)
    assert res.eigenvalues[0] == pytest.approx(1 + res.rho_hat[0])
    assert np.all(res.eigenvalues[1:] == 1.0)
    mat = res.matrix()
    xi = d.left_vectors[:, 0]
    assert xi @ mat @ xi == pytest.approx(1 + res.rho_hat[0])
    assert np.trace(mat) == pytest.approx(100 + res.rho_hat[0])


def test_shrink_requires_isotropic_base():
    base = SeparableModel(PopulationSpectrum.from_values([2.0] * 10 + [1.0] * 10), PopulationSpectrum.identity(20))
    model = spiked_to(base, [8.0])
    d = draw(model, seed=0)
    with pytest.raises(NotIsotropicBase):
        estimators.shrink(d, [1], model=model)


def test_prial_endpoints():
    base = np.array([4.0, 5.0, 6.0])
    assert estimators.prial(np.zeros(3), base)[0] == pytest.approx(100.0)
    assert estimators.prial(base, base)[0] == pytest.approx(0.0)
    assert estimators.prial(2 * base, base)[0] == pytest.approx(-100.0)


def test_prial_standard_error_matches_delta_method():
    rng = np.random.default_rng(0)
    b = rng.uniform(5, 6, 400)
    e = 0.5 * b + rng.normal(0, 0.1, 400)
    value, se = estimators.prial(e, b)
    r = e.mean() / b.mean()
    assert value == pytest.approx(100 * (1 - r))
    assert se == pytest.approx(100 * np.std(e - r * b, ddof=1) / (b.mean() * math.sqrt(400)))


def test_oracle_losses():
    model = spiked_to(SeparableModel.null(40, 40), [5.0])
    d = draw(model, seed=1)
    orc = estimators.oracle_rho(d, model, 1)
    overlap = d.left_vectors[0, 0] ** 2
    assert orc[0] == pytest.approx(1 + 4.0 * overlap)
    est = np.ones(40)
    est[0] = orc[0]
    loss, base = estimators.frobenius_losses(d, est, orc)
    assert loss == pytest.approx(0.0)
    full = np.ones(40)
    full[0] = orc[0]
    assert base == pytest.approx(np.sum((d.q1_spectrum - full) ** 2))
