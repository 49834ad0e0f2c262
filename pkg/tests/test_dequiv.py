from __future__ import annotations

import math

import numpy as np
import pytest

from sepspike import dequiv
from sepspike.errors import BelowEdge, InvalidPoint, OutOfWindow, QuantileOutOfRange
from sepspike.spectra import PopulationSpectrum, SeparableModel

ASPECTS = [0.25, 0.5, 1.0, 2.0]


def mp_model(d: float, n: int = 400) -> SeparableModel:
    return SeparableModel.null(int(round(d * n)), n)


def two_level(p: int = 300, n: int = 600) -> SeparableModel:
    a = np.r_[np.full(p // 2, 2.5), np.ones(p - p // 2)]
    b = np.r_[np.full(n // 3, 0.5), np.full(n - n // 3, 1.5)]
    return SeparableModel(PopulationSpectrum.from_values(a), PopulationSpectrum.from_values(b))


def defining_residual(model: SeparableModel, z: complex, m1: complex, m2: complex) -> float:
    d = model.aspect
    a, b = model.spec_a.values, model.spec_b.values
    r1 = m1 + d / z * np.mean(a / (1 + a * m2))
    r2 = m2 + 1 / z * np.mean(b / (1 + b * m1))
    return max(abs(r1), abs(r2))


@pytest.mark.parametrize("d", ASPECTS)
def test_mp_edge_and_transform_at_edge(d):
    edge = dequiv.find_edge(mp_model(d))
    assert edge.lambda_plus == pytest.approx((1 + math.sqrt(d)) ** 2, abs=1e-10)
    assert edge.m2_at_edge == pytest.approx(-1 / (1 + math.sqrt(d)), abs=1e-10)
    assert edge.threshold_a == pytest.approx(1 + math.sqrt(d), abs=1e-10)
    assert edge.threshold_b == pytest.approx(1 + 1 / math.sqrt(d), abs=1e-10)


def test_mp_curvature_matches_closed_form():
    # z(m) = -1/m + d/(1+m) has z'' = -2/m^3 + 2d/(1+m)^3
    d = 0.5
    edge = dequiv.find_edge(mp_model(d))
    m = edge.m2_at_edge
    assert edge.curvature == pytest.approx(-2 / m**3 + 2 * d / (1 + m) ** 3, rel=1e-5)


def test_edge_of_b_isotropic_model_matches_silverstein_inverse():
    # with B = I the edge is the minimum of z(m) = -1/m + d * mean(a / (1 + a m)) on (-1/max a, 0)
    p, n = 200, 400
    a = np.r_[np.full(100, 3.0), np.full(100, 1.0)]
    model = SeparableModel(PopulationSpectrum.from_values(a), PopulationSpectrum.identity(n))
    ms = np.linspace(-1 / 3 + 1e-6, -1e-6, 400_001)
    zs = -1 / ms + (p / n) * (0.5 * 3 / (1 + 3 * ms) + 0.5 / (1 + ms))
    assert dequiv.find_edge(model).lambda_plus == pytest.approx(zs.min(), rel=1e-8)


def test_edge_transposition_symmetry():
    # Q1 of (A, B, p, n) and Q2 of (B, A, n, p) share non-zero eigenvalues up to the factor p/n
    model = two_level(300, 600)
    swapped = SeparableModel(model.spec_b, model.spec_a)
    lam = dequiv.find_edge(model).lambda_plus
    lam_sw = dequiv.find_edge(swapped).lambda_plus
    assert lam == pytest.approx(model.aspect * lam_sw, rel=1e-9)


def test_edge_equations_vanish_at_edge():
    model = two_level()
    edge = dequiv.find_edge(model)
    f, fm = dequiv.edge_equations(model, edge.lambda_plus, edge.m2_at_edge)
    assert abs(f) < 1e-9
    assert abs(fm) < 1e-6


@pytest.mark.parametrize("z", [2 + 0.5j, 0.3 + 1e-3j, 6 + 1e-2j, -1 + 1j])
def test_solve_at_satisfies_defining_system(z):
    model = two_level()
    sol = dequiv.solve_at(model, z)
    assert sol.m1.imag > 0 and sol.m2.imag > 0
    assert defining_residual(model, z, sol.m1, sol.m2) < 1e-9


def test_solve_at_mp_matches_closed_form():
    d, z = 0.5, 1.7 + 0.01j
    sol = dequiv.solve_at(mp_model(d), z)
    # p-normalised Stieltjes transform of the MP law
    root = np.sqrt((z - (1 + math.sqrt(d)) ** 2) * (z - (1 - math.sqrt(d)) ** 2))
    cands = [(1 - d - z + s * root) / (2 * d * z) for s in (1, -1)]
    m = next(c for c in cands if c.imag > 0)
    assert sol.mc == pytest.approx(m, abs=1e-9)


def test_solve_at_rejects_lower_half_plane_and_real_points():
    model = mp_model(1.0)
    with pytest.raises(InvalidPoint):
        dequiv.solve_at(model, 1 - 0.1j)
    with pytest.raises(InvalidPoint):
        dequiv.solve_at(model, 5.0)


def test_real_branch_right_of_edge():
    model = mp_model(1.0)
    sol = dequiv.solve_at(model, 5.0, real_branch=True)
    assert sol.m2.real == pytest.approx((-5 + math.sqrt(5 * 1)) / 10, abs=1e-12)
    assert defining_residual(model, 5.0, sol.m1, sol.m2) < 1e-12


def test_real_branch_rejects_points_inside_bulk():
    with pytest.raises(BelowEdge):
        dequiv.solve_at(mp_model(1.0), 3.0, real_branch=True)


@pytest.mark.parametrize("d", [0.5, 1.0])
def test_g2c_closed_form(d):
    model = mp_model(d)
    edge = dequiv.find_edge(model)
    for sigma in (2.0, 3.0, 6.0):
        if sigma <= 1 + math.sqrt(d):
            continue
        g = dequiv.g2c(model, -1 / sigma, edge)
        assert g.value == pytest.approx(sigma * (1 + d / (sigma - 1)), abs=1e-10)
        m = -1 / sigma
        assert g.derivative == pytest.approx(1 / m**2 - d / (1 + m) ** 2, rel=1e-9)


def test_g1c_closed_form():
    # B-side mirror: theta = d*sigma + sigma/(sigma - 1)
    d = 0.5
    model = mp_model(d)
    edge = dequiv.find_edge(model)
    sigma = 4.0
    g = dequiv.g1c(model, -1 / sigma, edge)
    assert g.value == pytest.approx(d * sigma + sigma / (sigma - 1), abs=1e-10)


def test_g_outside_window_raises():
    model = mp_model(1.0)
    edge = dequiv.find_edge(model)
    with pytest.raises(OutOfWindow):
        dequiv.g2c(model, -0.9, edge)
    with pytest.raises(OutOfWindow):
        dequiv.g2c(model, 0.1, edge)


def test_inverse_round_trip_on_structured_model():
    model = two_level()
    edge = dequiv.find_edge(model)
    for x in edge.lambda_plus + np.array([0.01, 0.3, 2.0, 20.0]):
        m2 = dequiv.m2c_inverse_real(model, x, edge)
        m1 = dequiv.m1c_inverse_real(model, x, edge)
        assert dequiv.g2c(model, m2, edge).value == pytest.approx(x, abs=1e-9)
        assert dequiv.g1c(model, m1, edge).value == pytest.approx(x, abs=1e-9)
        assert dequiv.g2c(model, m2, edge).companion == pytest.approx(m1, abs=1e-9)


def test_mp_density_matches_closed_form():
    d = 0.5
    model = mp_model(d)
    grid = np.linspace(0.1, 3.0, 60)
    curve = dequiv.density(model, grid, eta=1e-7)
    lo, hi = (1 - math.sqrt(d)) ** 2, (1 + math.sqrt(d)) ** 2
    inside = (grid > lo + 0.02) & (grid < hi - 0.02)
    exact = np.sqrt(np.clip((hi - grid) * (grid - lo), 0, None)) / (2 * math.pi * d * grid)
    np.testing.assert_allclose(curve.rho[inside], exact[inside], atol=1e-5)


def test_density_integrates_to_continuous_mass():
    for d, mass in ((0.5, 1.0), (2.0, 0.5)):
        model = mp_model(d)
        hi = (1 + math.sqrt(d)) ** 2
        grid = np.linspace(1e-3, hi + 0.2, 4000)
        curve = dequiv.density(model, grid, eta=1e-6)
        assert curve.mass() == pytest.approx(mass, abs=5e-3)


def test_density_support_of_two_level_model_is_one_interval_ending_at_edge():
    model = two_level()
    edge = dequiv.find_edge(model)
    grid = np.linspace(0.01, edge.lambda_plus * 1.2, 600)
    intervals = dequiv.density(model, grid, eta=1e-5).support_intervals()
    assert intervals[-1][1] == pytest.approx(edge.lambda_plus, abs=0.05)


def test_density_rejects_bad_grid():
    with pytest.raises(ValueError):
        dequiv.density(mp_model(1.0), [2.0, 1.0])
    with pytest.raises(InvalidPoint):
        dequiv.density(mp_model(1.0), [1.0, 2.0], eta=0.0)


def test_classical_locations_mp():
    d = 1.0
    model = mp_model(d, n=200)
    gam = dequiv.classical_locations(model, [1, 50, 100, 150])
    assert np.all(np.diff(gam) < 0)
    # independent quantiles of the closed-form density
    xs = np.linspace(1e-9, 4.0, 400_001)
    rho = np.sqrt(np.clip((4 - xs) * xs, 0, None)) / (2 * math.pi * xs)
    tail = np.cumsum((rho * (xs[1] - xs[0]))[::-1])[::-1]
    for j, g in zip([1, 50, 100, 150], gam):
        target = (j - 0.5) / 200
        assert g == pytest.approx(xs[np.argmin(np.abs(tail - target))], abs=5e-3)
    anchored = dequiv.classical_locations(model, [1], convention="edge")
    assert anchored[0] == pytest.approx(4.0, abs=1e-6)


def test_classical_locations_out_of_range():
    with pytest.raises(QuantileOutOfRange):
        dequiv.classical_locations(mp_model(1.0, n=50), [0])
    with pytest.raises(QuantileOutOfRange):
        dequiv.classical_locations(mp_model(2.0, n=50), [51])


def test_trace_identities_hold():
    model = two_level()
    sol = dequiv.solve_at(model, 1.5 + 0.05j)
    for v in dequiv.trace_identities(model, sol).values():
        assert abs(v) < 1e-9


def test_mp_helpers_consistent():
    d = 0.5
    x = 4.0
    m2 = dequiv.mp_m2c(x, d)
    assert dequiv.mp_g2c(m2, d) == pytest.approx(x, abs=1e-12)
    assert dequiv.mp_m1c(x, d) == pytest.approx(-d / (x * (1 + m2)))
    with pytest.raises(BelowEdge):
        dequiv.mp_m2c(2.0, d)
