"""Deterministic-equivalent law of a separable sample covariance matrix.

Given the (unspiked) population spectra of A and B and d = p/n, the pair
``(m1, m2)`` solves

    m1 = -(d/z) * mean_A[ a / (1 + a m2) ]
    m2 = -(1/z) * mean_B[ b / (1 + b m1) ]

and ``mc = -(1/z) * mean_A[ 1 / (1 + a m2) ]`` is the Stieltjes transform
of the limiting eigenvalue distribution of Q1 (normalised by p).

On the real axis right of the bulk both transforms are real, negative and
increasing.  Eliminating m1 gives ``z`` as an explicit root of a monotone
scalar equation for every fixed ``m2`` in ``(-1/max a, 0)``; the rightmost
edge is the minimum of that curve and ``g2c`` is its increasing branch.
The role-swapped curve in ``m1`` gives ``g1c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate
from scipy.optimize import brentq, minimize_scalar

from .errors import (
    BelowEdge,
    EdgeNotFound,
    InvalidPoint,
    NoConvergence,
    OutOfWindow,
    QuantileOutOfRange,
    SingularDenominator,
)
from .spectra import SeparableModel

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
DEFAULT_ETA = 1e-4
DAMPING = 0.5

_FP_ATTEMPT = 400
_NEWTON_ITER = 60
_WINDOW_PAD = 1e-8
_SCAN_POINTS = 512


@dataclass(frozen=True)
class _Law:
    """Atomic representation of the two population measures."""

    a: NDArray[np.float64]
    wa: NDArray[np.float64]
    b: NDArray[np.float64]
    wb: NDArray[np.float64]
    d: float

    @classmethod
    def of(cls, model: SeparableModel) -> _Law:
        a, wa = model.spec_a.atoms()
        b, wb = model.spec_b.atoms()
        return cls(a, wa, b, wb, model.aspect)

    def t1(self, m2: complex, z: complex) -> complex:
        return -(self.d / z) * np.sum(self.wa * self.a / (1.0 + self.a * m2))

    def t2(self, m1: complex, z: complex) -> complex:
        return -(1.0 / z) * np.sum(self.wb * self.b / (1.0 + self.b * m1))

    def dt1(self, m2: complex, z: complex) -> complex:
        return (self.d / z) * np.sum(self.wa * self.a**2 / (1.0 + self.a * m2) ** 2)

    def dt2(self, m1: complex, z: complex) -> complex:
        return (1.0 / z) * np.sum(self.wb * self.b**2 / (1.0 + self.b * m1) ** 2)

    def mc(self, m2: complex, z: complex) -> complex:
        return -(1.0 / z) * np.sum(self.wa / (1.0 + self.a * m2))

    def residual(self, m1: complex, m2: complex, z: complex) -> float:
        return float(max(abs(m1 - self.t1(m2, z)), abs(m2 - self.t2(m1, z))))

    def side(self, which: str) -> _Side:
        # "a": curve parametrised by m2 (inner measure A), gives g2c.
        # "b": curve parametrised by m1 (inner measure B), gives g1c.
        if which == "a":
            return _Side(self.a, self.wa, self.d, self.b, self.wb, 1.0)
        return _Side(self.b, self.wb, 1.0, self.a, self.wa, self.d)


@dataclass(frozen=True)
class _Side:
    """z as a function of one real transform value m on the real axis.

    u(m) = s_in * E_in[t / (1 + t m)] and z solves
    s_out * E_out[x / (x u - z)] = m with z > u * max(out).
    """

    inner: NDArray[np.float64]
    w_in: NDArray[np.float64]
    s_in: float
    outer: NDArray[np.float64]
    w_out: NDArray[np.float64]
    s_out: float

    @property
    def window(self) -> tuple[float, float]:
        return -1.0 / float(self.inner.max()), 0.0

    def u(self, m: float) -> float:
        return self.s_in * float(np.sum(self.w_in * self.inner / (1.0 + self.inner * m)))

    def du(self, m: float) -> float:
        return -self.s_in * float(np.sum(self.w_in * self.inner**2 / (1.0 + self.inner * m) ** 2))

    def z(self, m: float) -> float:
        if not self.window[0] < m < 0:
            raise OutOfWindow(f"m={m} outside ({self.window[0]}, 0)")
        u = self.u(m)
        pos = self.w_out * self.outer > 0
        x, w = self.outer[pos], self.w_out[pos]
        xmax = float(x.max())
        wmax = float(w[x == xmax][0])
        mean = float(np.sum(w * x))
        base = u * xmax
        lo = base + self.s_out * wmax * xmax / (2.0 * -m)
        hi = base + 2.0 * self.s_out * mean / (-m)

        def f(zz: float) -> float:
            return self.s_out * float(np.sum(w * x / (x * u - zz))) - m

        if lo == hi:
            return lo
        return brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)

    def dz(self, m: float, z: float | None = None) -> float:
        """dz/dm by implicit differentiation (-f_m / f_z)."""
        if z is None:
            z = self.z(m)
        u, du = self.u(m), self.du(m)
        den = (self.outer * u - z) ** 2
        f_z = self.s_out * float(np.sum(self.w_out * self.outer / den))
        f_m = self.s_out * float(np.sum(self.w_out * self.outer * (-self.outer * du) / den)) - 1.0
        return -f_m / f_z

    def companion(self, m: float, z: float) -> float:
        """The other transform at the same real point."""
        return -self.u(m) / z


@dataclass(frozen=True)
class LawSolution:
    z: complex
    m1: complex
    m2: complex
    mc: complex
    residual: float
    iterations: int


@dataclass(frozen=True)
class EdgeData:
    lambda_plus: float
    m1_at_edge: float
    m2_at_edge: float
    curvature: float
    admissible_window: tuple[float, float]
    margin_a: float
    margin_b: float

    @property
    def threshold_a(self) -> float:
        return -1.0 / self.m2_at_edge

    @property
    def threshold_b(self) -> float:
        return -1.0 / self.m1_at_edge


@dataclass(frozen=True)
class GValue:
    argument: float
    value: float
    derivative: float
    companion: float


@dataclass(frozen=True)
class DensityCurve:
    grid: NDArray[np.float64]
    rho: NDArray[np.float64]
    eta_used: float

    def mass(self) -> float:
        ok = np.isfinite(self.rho)
        return float(integrate.trapezoid(self.rho[ok], self.grid[ok]))

    def support_intervals(self, threshold: float = 1e-3) -> list[tuple[float, float]]:
        """Maximal grid runs where the density exceeds ``threshold``."""
        on = np.nan_to_num(self.rho) > threshold
        out: list[tuple[float, float]] = []
        start = None
        for i, flag in enumerate(on):
            if flag and start is None:
                start = i
            if not flag and start is not None:
                out.append((float(self.grid[start]), float(self.grid[i - 1])))
                start = None
        if start is not None:
            out.append((float(self.grid[start]), float(self.grid[-1])))
        return out


# ---------------------------------------------------------------- complex z


def _newton(law: _Law, z: complex, m1: complex, m2: complex, tol: float, max_iter: int):
    res = law.residual(m1, m2, z)
    for it in range(1, max_iter + 1):
        f1 = m1 - law.t1(m2, z)
        f2 = m2 - law.t2(m1, z)
        a12 = law.dt1(m2, z)
        a21 = law.dt2(m1, z)
        det = 1.0 - a12 * a21
        if det == 0 or not np.isfinite(det):
            return m1, m2, it, math.inf
        m1 = m1 + (-f1 - a12 * f2) / det
        m2 = m2 + (-f2 - a21 * f1) / det
        if not (np.isfinite(m1) and np.isfinite(m2)):
            return m1, m2, it, math.inf
        res = law.residual(m1, m2, z)
        if res <= tol:
            return m1, m2, it, res
    return m1, m2, max_iter, res


def _physical(m1: complex, m2: complex) -> bool:
    return m1.imag > 0 and m2.imag > 0


def _fixed_point(law: _Law, z: complex, m1: complex, m2: complex, tol: float, max_iter: int):
    res = math.inf
    for it in range(1, max_iter + 1):
        n1 = law.t1(m2, z)
        n2 = law.t2(m1, z)
        res = float(max(abs(m1 - n1), abs(m2 - n2)))
        if res <= tol:
            return m1, m2, it, res
        m1 = (1.0 - DAMPING) * m1 + DAMPING * n1
        m2 = (1.0 - DAMPING) * m2 + DAMPING * n2
    return m1, m2, max_iter, res


def _continuation(law: _Law, z: complex, tol: float, max_iter: int):
    """Newton continuation in Im z from a well-conditioned height down to ``z``."""
    eta_target = z.imag
    eta = max(1.0, 4.0 * eta_target)
    m1, m2, used, res = _fixed_point(law, complex(z.real, eta), 1j, 1j, tol, max_iter)
    if res > tol:
        raise NoConvergence("fixed point at continuation start failed", used, res)
    factor = 0.5
    while eta > eta_target:
        nxt = max(eta * factor, eta_target)
        c1, c2, it, res = _newton(law, complex(z.real, nxt), m1, m2, tol, _NEWTON_ITER)
        used += it
        if res <= tol and _physical(c1, c2):
            m1, m2, eta = c1, c2, nxt
            factor = min(0.5, factor * 0.5 + 0.25) if factor > 0.1 else factor * 2.0
        else:
            factor = math.sqrt(factor)
            if 1.0 - factor < 1e-6 or used > max_iter:
                raise NoConvergence(f"continuation stalled at eta={eta:.3e}", used, res)
    return m1, m2, used, law.residual(m1, m2, z)


def _solve_complex(law: _Law, z: complex, tol: float, max_iter: int, guess=None) -> LawSolution:
    if guess is not None:
        m1, m2, it, res = _newton(law, z, guess[0], guess[1], tol, 30)
        if res <= tol and _physical(m1, m2):
            return LawSolution(z, m1, m2, law.mc(m2, z), res, it)
    m1, m2, it, res = _fixed_point(law, z, 1j, 1j, tol, min(max_iter, _FP_ATTEMPT))
    if res <= 1e-6 and _physical(m1, m2):
        p1, p2, it2, res2 = _newton(law, z, m1, m2, tol, 20)
        if res2 <= res and _physical(p1, p2):
            m1, m2, res, it = p1, p2, res2, it + it2
    if not (res <= tol and _physical(m1, m2)):
        m1, m2, it, res = _continuation(law, z, tol, max_iter)
    if not res <= tol:
        raise NoConvergence("self-consistent equations did not converge", it, res)
    return LawSolution(z, complex(m1), complex(m2), complex(law.mc(m2, z)), float(res), int(it))


def solve_at(
    model: SeparableModel,
    z: complex,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    real_branch: bool = False,
    edge: EdgeData | None = None,
) -> LawSolution:
    """Solve the self-consistent system at a spectral point.

    For ``Im z > 0`` a damped fixed-point iteration (with Newton polish,
    falling back to Newton continuation in ``Im z``) is used.  With
    ``real_branch=True`` a real ``z`` right of the edge is accepted and the
    solution is the real-axis limit.
    """
    z = complex(z)
    law = _Law.of(model)
    if z.imag < 0:
        raise InvalidPoint(f"Im z = {z.imag} < 0")
    if z.imag == 0:
        if not real_branch:
            raise InvalidPoint("real z requires real_branch=True")
        if edge is None:
            edge = find_edge(model, tol)
        x = z.real
        m2 = m2c_inverse_real(model, x, edge)
        m1 = law.side("a").companion(m2, x)
        return LawSolution(z, complex(m1), complex(m2), complex(law.mc(m2, x)), law.residual(m1, m2, x), 0)
    return _solve_complex(law, z, tol, max_iter)


# ---------------------------------------------------------------- edge


def _rightmost_min(side: _Side, tol: float) -> tuple[float, float]:
    lo_w, _ = side.window
    lo = lo_w * (1.0 - _WINDOW_PAD)
    hi = -_WINDOW_PAD
    ms = np.linspace(lo, hi, _SCAN_POINTS)
    zs = np.array([side.z(float(m)) for m in ms])
    local = [k for k in range(1, len(ms) - 1) if zs[k] <= zs[k - 1] and zs[k] <= zs[k + 1]]
    if not local:
        raise EdgeNotFound("z(m) has no interior minimum on the admissible window")
    k = local[-1]
    a, b = float(ms[k - 1]), float(ms[k + 1])
    da, db = side.dz(a), side.dz(b)
    if da < 0 < db:
        m_star = brentq(side.dz, a, b, xtol=1e-15, rtol=1e-15, maxiter=500)
    else:
        # flat bracket: golden-section fallback
        m_star = float(minimize_scalar(side.z, bounds=(a, b), method="bounded", options={"xatol": 1e-13}).x)
    if m_star - lo < 1e-7 * abs(lo) or hi - m_star < 1e-7:
        raise EdgeNotFound("minimiser sits on the admissible window boundary")
    return m_star, side.z(m_star)


def find_edge(model: SeparableModel, tol: float = DEFAULT_TOL) -> EdgeData:
    """Rightmost spectral edge and the transforms there."""
    law = _Law.of(model)
    side = law.side("a")
    m2, lam = _rightmost_min(side, tol)
    m1 = side.companion(m2, lam)
    h = 1e-5 * abs(side.window[0])
    curv = (side.dz(m2 + h) - side.dz(m2 - h)) / (2 * h)
    return EdgeData(
        lambda_plus=float(lam),
        m1_at_edge=float(m1),
        m2_at_edge=float(m2),
        curvature=float(curv),
        admissible_window=(float(side.window[0]), 0.0),
        margin_a=float(1.0 + m2 * model.spec_a.max),
        margin_b=float(1.0 + m1 * model.spec_b.max),
    )


def edge_equations(model: SeparableModel, x: float, m: float) -> tuple[float, float]:
    """``(f(x, m), df/dm(x, m))`` for the scalar equation defining m2c."""
    law = _Law.of(model)
    h = law.d * float(np.sum(law.wa * law.a / (1.0 + law.a * m)))
    dh = -law.d * float(np.sum(law.wa * law.a**2 / (1.0 + law.a * m) ** 2))
    den = -x + law.b * h
    f = -m + float(np.sum(law.wb * law.b / den))
    fm = -1.0 - float(np.sum(law.wb * law.b**2 * dh / den**2))
    return f, fm


# ---------------------------------------------------------------- inverse functions


def _g(model: SeparableModel, which: str, arg: float, edge: EdgeData) -> GValue:
    side = _Law.of(model).side(which)
    lo = edge.m2_at_edge if which == "a" else edge.m1_at_edge
    if not lo < arg < 0:
        raise OutOfWindow(f"argument {arg} outside ({lo}, 0)")
    z = side.z(arg)
    return GValue(float(arg), float(z), float(side.dz(arg, z)), float(side.companion(arg, z)))


def g2c(model: SeparableModel, zeta: float, edge: EdgeData) -> GValue:
    """Inverse of m2c on (lambda_+, inf); ``companion`` is m1c at the same point."""
    return _g(model, "a", zeta, edge)


def g1c(model: SeparableModel, xi: float, edge: EdgeData) -> GValue:
    """Inverse of m1c on (lambda_+, inf); ``companion`` is m2c at the same point."""
    return _g(model, "b", xi, edge)


def _inverse_real(model: SeparableModel, which: str, x: float, edge: EdgeData) -> float:
    if not x > edge.lambda_plus:
        raise BelowEdge(f"x={x} is not right of the edge {edge.lambda_plus}")
    side = _Law.of(model).side(which)
    lo = edge.m2_at_edge if which == "a" else edge.m1_at_edge
    hi = lo / 2.0
    while side.z(hi) < x:
        hi /= 2.0
        if hi > -1e-300:
            raise NoConvergence("could not bracket the real-branch transform", 0, math.nan)
    return brentq(lambda m: side.z(m) - x, lo, hi, xtol=1e-16, rtol=1e-15, maxiter=500)


def m2c_inverse_real(model: SeparableModel, x: float, edge: EdgeData) -> float:
    """m2c(x) for real x > lambda_+ (the inverse of g2c)."""
    return _inverse_real(model, "a", x, edge)


def m1c_inverse_real(model: SeparableModel, x: float, edge: EdgeData) -> float:
    """m1c(x) for real x > lambda_+ (the inverse of g1c)."""
    return _inverse_real(model, "b", x, edge)


# ---------------------------------------------------------------- density & quantiles


def density(
    model: SeparableModel,
    grid: ArrayLike,
    eta: float = DEFAULT_ETA,
    tol: float = DEFAULT_TOL,
    return_solutions: bool = False,
):
    """Density of the limiting law of Q1 at ``grid + i*eta``.

    Points where the solver fails are reported as NaN.
    """
    if not eta > 0:
        raise InvalidPoint("eta must be positive")
    xs = np.asarray(grid, dtype=np.float64)
    if xs.ndim != 1 or np.any(np.diff(xs) <= 0):
        raise ValueError("grid must be 1-D and strictly ascending")
    law = _Law.of(model)
    rho = np.full(xs.size, np.nan)
    sols: list[LawSolution | None] = []
    guess = None
    for k, x in enumerate(xs):
        try:
            sol = _solve_complex(law, complex(x, eta), tol, DEFAULT_MAX_ITER, guess)
        except NoConvergence:
            sols.append(None)
            guess = None
            continue
        rho[k] = sol.mc.imag / math.pi
        guess = (sol.m1, sol.m2)
        sols.append(sol)
    curve = DensityCurve(xs, rho, float(eta))
    if return_solutions:
        return curve, sols
    return curve


def _clustered_grid(lo: float, hi: float, n: int) -> NDArray[np.float64]:
    s = np.linspace(0.0, 1.0, n)
    return lo + (hi - lo) * (1.0 - np.cos(np.pi * s)) / 2.0


def classical_locations(
    model: SeparableModel,
    indices: ArrayLike,
    edge: EdgeData | None = None,
    convention: str = "midpoint",
    n_grid: int = 4000,
    eta: float = 1e-6,
) -> NDArray[np.float64]:
    """Quantiles gamma_j of the limiting density, counted from the right edge.

    ``convention="midpoint"`` solves  int_{gamma_j}^{lambda_+} rho = (j - 1/2)/p;
    ``convention="edge"`` uses (j - 1)/p so that gamma_1 = lambda_+.
    """
    idx = np.atleast_1d(np.asarray(indices, dtype=np.int64))
    kmax = min(model.p, model.n)
    if np.any(idx < 1) or np.any(idx > kmax):
        raise QuantileOutOfRange(f"indices must lie in 1..{kmax}")
    if convention not in ("midpoint", "edge"):
        raise ValueError("convention must be 'midpoint' or 'edge'")
    if edge is None:
        edge = find_edge(model)
    lam = edge.lambda_plus
    xs = _clustered_grid(lam * 1e-9, lam, n_grid)
    rho = np.nan_to_num(density(model, xs, eta=eta).rho)
    seg = 0.5 * (rho[1:] + rho[:-1]) * np.diff(xs)
    tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])  # mass right of xs[k]
    offset = 0.5 if convention == "midpoint" else 1.0
    targets = (idx - offset) / model.p
    if np.any(targets > tail[0] + 1e-6):
        raise QuantileOutOfRange("requested quantile exceeds the continuous mass")
    # tail decreases with x: interpolate x as a function of tail mass
    return np.interp(targets, tail[::-1], xs[::-1])


# ---------------------------------------------------------------- resolvent limit


def pi_matrices(
    model: SeparableModel, z: complex, solution: LawSolution
) -> tuple[NDArray[np.complex128], NDArray[np.complex128]]:
    """Diagonal entries of the deterministic resolvent limit in the eigenbases of A and B."""
    z = complex(z)
    den1 = 1.0 + solution.m2 * model.spec_a.values
    den2 = 1.0 + solution.m1 * model.spec_b.values
    if np.min(np.abs(den1)) < 1e-12 or np.min(np.abs(den2)) < 1e-12:
        raise SingularDenominator("1 + m * sigma vanishes for some population eigenvalue")
    return -1.0 / (z * den1), -1.0 / (z * den2)


def trace_identities(model: SeparableModel, solution: LawSolution) -> dict[str, complex]:
    """Differences between traces of the resolvent limit and (mc, m1c, m2c)."""
    pi1, pi2 = pi_matrices(model, solution.z, solution)
    return {
        "mc": complex(np.sum(pi1) / model.p - solution.mc),
        "m1c": complex(np.sum(model.spec_a.values * pi1) / model.n - solution.m1),
        "m2c": complex(np.sum(model.spec_b.values * pi2) / model.n - solution.m2),
    }


# ---------------------------------------------------------------- closed forms (A = I, B = I)


def mp_edges(d: float) -> tuple[float, float]:
    return (1.0 - math.sqrt(d)) ** 2, (1.0 + math.sqrt(d)) ** 2


def mp_m2c(x: float, d: float) -> float:
    """Explicit m2c for A = I, B = I at real x > lambda_+."""
    lo, hi = mp_edges(d)
    if not x > hi:
        raise BelowEdge(f"x={x} is not right of the edge {hi}")
    return (d - 1.0 - x + math.sqrt((x - hi) * (x - lo))) / (2.0 * x)


def mp_m1c(x: float, d: float) -> float:
    return -d / (x * (1.0 + mp_m2c(x, d)))


def mp_g2c(m: float, d: float) -> float:
    return -1.0 / m + d / (m + 1.0)


def mp_density(x: ArrayLike, d: float) -> NDArray[np.float64]:
    """Continuous part of the limiting density of Q1 for A = I, B = I (p-normalised)."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = mp_edges(d)
    out = np.zeros_like(x)
    inside = (x > lo) & (x < hi)
    xi = x[inside]
    out[inside] = np.sqrt((hi - xi) * (xi - lo)) / (2.0 * math.pi * d * xi)
    return out
