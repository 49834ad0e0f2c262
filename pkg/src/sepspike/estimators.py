"""Data-driven inference: spike counts, threshold calibration, adaptive
spike estimates and Frobenius-optimal eigenvalue shrinkage."""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from . import dequiv
from .errors import (
    BelowEdge,
    DivergentSum,
    InsufficientResamples,
    MissingBases,
    MissingVectors,
    NotIsotropicBase,
)
from .sampling import SampleDraw, rng_for
from .spectra import SeparableModel

DEFAULT_C = 0.1
MIN_RESAMPLES = 100


def scan_limit(p: int, n: int, c: float = DEFAULT_C) -> int:
    """Largest index scanned by the count statistics, floor(c * min(p, n)), at least 1."""
    return max(1, int(math.floor(c * min(p, n))))


# ---------------------------------------------------------------- calibration


@dataclass(frozen=True)
class ThresholdCalibration:
    omega: float
    N: int
    epsilon: float
    c: float
    p: int
    n: int
    statistics: NDArray[np.float64]
    window_scale: float

    @property
    def in_consistency_window(self) -> bool:
        """omega is small but well above the edge fluctuation scale n^-2/3 + phi_n^2."""
        return self.window_scale < self.omega < 1.0

    @property
    def coverage(self) -> float:
        return float(np.mean(self.statistics <= 1.0 + self.omega))


def _max_ratio(p: int, n: int, k: int, seed: int, i: int) -> float:
    rng = rng_for(seed, i)
    x = rng.standard_normal((p, n)) / math.sqrt(n)
    gram = x @ x.T if p <= n else x.T @ x
    m = gram.shape[0]
    lam = linalg.eigvalsh(gram, subset_by_index=[m - k - 1, m - 1], check_finite=False)[::-1]
    return float(np.max(lam[:-1] / lam[1:]))


def calibrate_omega(
    p: int,
    n: int,
    N: int = 10_000,
    epsilon: float = 0.05,
    c: float = DEFAULT_C,
    seed: int = 0,
    workers: int = 1,
) -> ThresholdCalibration:
    """Resample Wishart edge ratios and take their (1 - epsilon) quantile minus one."""
    if N < MIN_RESAMPLES:
        raise InsufficientResamples(f"N={N} < {MIN_RESAMPLES}")
    if not 0 <= epsilon < 0.5:
        raise ValueError("epsilon must lie in [0, 0.5)")
    k = min(scan_limit(p, n, c), min(p, n) - 1)
    tasks = range(N)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            stats = list(pool.map(lambda i: _max_ratio(p, n, k, seed, i), tasks))
    else:
        stats = [_max_ratio(p, n, k, seed, i) for i in tasks]
    t = np.asarray(stats)
    # inverted-cdf quantile: smallest value whose empirical cdf reaches 1 - epsilon
    omega = float(np.quantile(t - 1.0, 1.0 - epsilon, method="inverted_cdf"))
    scale = n ** (-2.0 / 3.0) + 1.0 / n
    return ThresholdCalibration(omega, N, float(epsilon), float(c), p, n, t, scale)


# ---------------------------------------------------------------- counts


@dataclass(frozen=True)
class SpikeCountResult:
    q: int
    q_a: int | None
    q_b: int | None
    omega: float
    saturated: dict[str, bool]
    ratios: NDArray[np.float64]
    max_overlap_a: NDArray[np.float64] | None
    max_overlap_b: NDArray[np.float64] | None

    def as_tuple(self) -> tuple[int, int | None, int | None]:
        return self.q, self.q_a, self.q_b


def _first_at_or_below(values: NDArray[np.float64], omega: float, first: int, cap: int) -> tuple[int, bool]:
    for i in range(first, cap + 1):
        if i < values.size and values[i] <= omega:
            return i, False
    return cap, True


def estimate_counts(
    sample: SampleDraw,
    omega: float | ThresholdCalibration,
    basis_a: NDArray[np.float64] | None = None,
    basis_b: NDArray[np.float64] | None = None,
    c: float = DEFAULT_C,
    first_index: int = 0,
    vectors: bool = True,
) -> SpikeCountResult:
    """Eigenvalue-ratio count q and eigenvector-overlap counts q_a, q_b.

    ``basis_a`` / ``basis_b`` hold the population eigenvectors of A~, B~ as
    columns in descending spike order.  Index i is accepted when the
    (i+1)-th statistic falls to omega or below; the scan runs over
    ``first_index .. floor(c * min(p, n))``.
    """
    if isinstance(omega, ThresholdCalibration):
        omega = omega.omega
    cap = scan_limit(sample.p, sample.n, c)
    lam = sample.eigenvalues
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = lam[:-1] / lam[1:] - 1.0
    ratios = np.where(np.isnan(ratios), np.inf, ratios)
    q, sat_q = _first_at_or_below(ratios, omega, first_index, cap)
    saturated = {"q": sat_q}
    q_a = q_b = None
    ov_a = ov_b = None
    if vectors:
        if sample.left_vectors is None or sample.right_vectors is None:
            raise MissingVectors("q_a / q_b need singular vectors")
        if basis_a is None or basis_b is None:
            raise MissingBases("q_a / q_b need the population eigenvectors")
        k = min(cap, sample.left_vectors.shape[1])
        rows = cap + 1
        ov_a = np.max((basis_a[:, :rows].T @ sample.left_vectors[:, :k]) ** 2, axis=1)
        ov_b = np.max((basis_b[:, :rows].T @ sample.right_vectors[:, :k]) ** 2, axis=1)
        q_a, saturated["q_a"] = _first_at_or_below(ov_a, omega, first_index, cap)
        q_b, saturated["q_b"] = _first_at_or_below(ov_b, omega, first_index, cap)
    return SpikeCountResult(q, q_a, q_b, float(omega), saturated, ratios[: cap + 1], ov_a, ov_b)


# ---------------------------------------------------------------- adaptive spikes


def adaptive_spikes(
    sample: SampleDraw,
    positions: Sequence[int],
    r_plus_s: int,
    side: str = "a",
) -> NDArray[np.float64]:
    """Spike estimates from the non-outlier spectrum alone.

    ``positions`` are 1-based sample indices of the outliers to invert.
    The A side averages over the n eigenvalues of Q~2, the B side over the
    p eigenvalues of Q~1; both normalise by n.
    """
    spec = sample.q2_spectrum if side == "a" else sample.q1_spectrum
    rest = spec[r_plus_s:]
    out = np.empty(len(positions))
    for j, pos in enumerate(positions):
        x = sample.eigenvalues[int(pos) - 1]
        den = rest - x
        if np.min(np.abs(den)) < 1e-10:
            raise DivergentSum(f"eigenvalue coincides with outlier at position {pos}")
        out[j] = -1.0 / (np.sum(1.0 / den) / sample.n)
    return out


# ---------------------------------------------------------------- shrinkage


@dataclass(frozen=True)
class ShrinkageResult:
    positions: tuple[int, ...]
    d_hat: NDArray[np.float64]
    rho_hat: NDArray[np.float64]
    eigenvalues: NDArray[np.float64]
    vectors: NDArray[np.float64] | None

    def matrix(self) -> NDArray[np.float64]:
        """I + sum rho_hat_k xi_k xi_k^T over the shrunk sample directions."""
        if self.vectors is None:
            raise MissingVectors("shrinkage was computed without sample vectors")
        p = self.vectors.shape[0]
        cols = self.vectors[:, [k - 1 for k in self.positions]]
        return np.eye(p) + (cols * self.rho_hat) @ cols.T


def d_hat_isotropic(x: float, d: float, side: str = "a") -> float:
    """-1/m2c(x) - 1 (A side) or -1/m1c(x) - 1 (B side) for the isotropic law with aspect d."""
    lam_plus = (1.0 + math.sqrt(d)) ** 2
    if not x > lam_plus:
        raise BelowEdge(f"eigenvalue {x} is not above the edge {lam_plus}")
    m = dequiv.mp_m2c(x, d) if side == "a" else dequiv.mp_m1c(x, d)
    return -1.0 / m - 1.0


def rho_hat_isotropic(d_hat: float, d: float, clip: bool = True) -> float:
    val = (d_hat**2 - d) / (d_hat + d)
    return max(val, 0.0) if clip else val


def shrink(
    sample: SampleDraw,
    positions: Iterable[int],
    d_n: float | None = None,
    model: SeparableModel | None = None,
    clip: bool = True,
    side: str = "a",
) -> ShrinkageResult:
    """Shrink the outlier eigenvalues at the given 1-based sample positions.

    Valid for an identity base model.  On the B side the shrinkage formula
    uses 1/d_n in place of d_n.
    """
    if model is not None:
        if not (model.spec_a.is_identity() and model.spec_b.is_identity()):
            raise NotIsotropicBase("closed-form shrinkage needs A = I and B = I")
        d_n = model.aspect
    if d_n is None:
        d_n = sample.p / sample.n
    d_eff = d_n if side == "a" else 1.0 / d_n
    pos = tuple(int(k) for k in positions)
    d_hat = np.array([d_hat_isotropic(float(sample.eigenvalues[k - 1]), d_n, side) for k in pos])
    rho = np.array([rho_hat_isotropic(v, d_eff, clip) for v in d_hat])
    vecs = sample.left_vectors if side == "a" else sample.right_vectors
    dim = sample.p if side == "a" else sample.n
    eig = np.ones(dim)
    for k, val in zip(pos, rho):
        eig[k - 1] = 1.0 + val
    return ShrinkageResult(pos, d_hat, rho, eig, vecs)


def oracle_rho(sample: SampleDraw, model: SeparableModel, count: int) -> NDArray[np.float64]:
    """Loss-minimising eigenvalues 1 + sum_j (sigma~_j - 1)|<v_j, xi_i>|^2 for i <= count."""
    if sample.left_vectors is None:
        raise MissingVectors("oracle shrinkage needs sample vectors")
    out = np.ones(count)
    xi = sample.left_vectors[:, :count]
    for s in model.spikes_a:
        v = model.direction_a(s.index)
        out += (s.sigma_tilde - 1.0) * (v @ xi) ** 2
    return out


def frobenius_losses(
    sample: SampleDraw, estimate: NDArray[np.float64], oracle: NDArray[np.float64]
) -> tuple[float, float]:
    """(||estimate - oracle||^2, ||Q~1 - oracle||^2) for matrices sharing the sample eigenvectors.

    ``estimate`` and ``oracle`` are the leading eigenvalues; all remaining
    eigenvalues of both equal one.
    """
    k = oracle.size
    est_loss = float(np.sum((estimate[:k] - oracle) ** 2) + np.sum((estimate[k:] - 1.0) ** 2))
    full = np.ones(sample.p)
    full[:k] = oracle
    base_loss = float(np.sum((sample.q1_spectrum - full) ** 2))
    return est_loss, base_loss


def prial(estimate_losses: ArrayLike, baseline_losses: ArrayLike) -> tuple[float, float]:
    """Percentage relative improvement in average loss and its delta-method standard error."""
    e = np.asarray(estimate_losses, dtype=np.float64)
    b = np.asarray(baseline_losses, dtype=np.float64)
    mb = float(np.mean(b))
    if mb == 0:
        return (100.0 if float(np.mean(e)) == 0 else -math.inf), 0.0
    ratio = float(np.mean(e)) / mb
    if e.size < 2:
        return 100.0 * (1.0 - ratio), math.nan
    resid = e - ratio * b
    se = float(np.std(resid, ddof=1) / (mb * math.sqrt(e.size)))
    return 100.0 * (1.0 - ratio), 100.0 * se

