"""Random draws of Y = A~^{1/2} X B~^{1/2} and their singular structure."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg, stats
from scipy.optimize import brentq
from scipy.sparse.linalg import ArpackError, svds

from .errors import DecompositionFailure, IndexOutOfRange, MissingVectors, RngFailure
from .spectra import SeparableModel

LAWS = ("gaussian", "uniform", "student_t")


def rng_for(seed: int, rep: int = 0) -> np.random.Generator:
    """Independent counter-based stream for replication ``rep`` of master ``seed``."""
    try:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(rep)])))
    except (TypeError, ValueError) as exc:
        raise RngFailure(f"cannot seed generator with ({seed!r}, {rep!r})") from exc


@lru_cache(maxsize=64)
def _t_scale(df: float, n: int) -> tuple[float, float]:
    """Scale c and bound phi so that c*t*1(|c*t| <= phi) has variance exactly 1/n."""
    phi = n ** (2.0 / df - 0.5)
    dist = stats.t(df)

    def var_gap(c: float) -> float:
        lim = phi / c
        return c * c * dist.expect(lambda x: x * x, lb=-lim, ub=lim) - 1.0 / n

    c0 = math.sqrt((df - 2.0) / df / n)
    lo, hi = 0.5 * c0, 2.0 * c0
    return brentq(var_gap, lo, hi, xtol=1e-16, rtol=1e-14), phi


@dataclass(frozen=True)
class EntryLaw:
    """Distribution of the entries of X (mean 0, variance 1/n)."""

    kind: str = "gaussian"
    df: float = 6.0

    def __post_init__(self) -> None:
        if self.kind not in LAWS:
            raise ValueError(f"unknown entry law {self.kind!r}; expected one of {LAWS}")
        if self.kind == "student_t" and not self.df > 4:
            raise ValueError("student_t entries need df > 4")

    def phi(self, n: int) -> float:
        """Support bound used for fluctuation scales."""
        if self.kind == "student_t":
            return n ** (2.0 / self.df - 0.5)
        return n**-0.5

    def sample(self, rng: np.random.Generator, p: int, n: int) -> tuple[NDArray[np.float64], int]:
        """A p x n matrix and the number of entries zeroed by truncation."""
        if self.kind == "gaussian":
            return rng.standard_normal((p, n)) / math.sqrt(n), 0
        if self.kind == "uniform":
            bound = math.sqrt(3.0 / n)
            return rng.uniform(-bound, bound, size=(p, n)), 0
        c, phi = _t_scale(self.df, n)
        x = c * rng.standard_t(self.df, size=(p, n))
        cut = np.abs(x) > phi
        x[cut] = 0.0
        return x, int(np.count_nonzero(cut))


def haar_basis(dim: int, rng: np.random.Generator) -> NDArray[np.float64]:
    """Haar-distributed orthogonal matrix."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


@dataclass(frozen=True)
class SampleDraw:
    eigenvalues: NDArray[np.float64]
    left_vectors: NDArray[np.float64] | None
    right_vectors: NDArray[np.float64] | None
    p: int
    n: int
    seed: tuple[int, int] = (0, 0)
    unspiked: NDArray[np.float64] | None = None
    truncated: int = 0
    complete: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return int(self.eigenvalues.size)

    def _padded(self, dim: int) -> NDArray[np.float64]:
        if not self.complete:
            raise MissingVectors("draw holds only the top part of the spectrum")
        out = np.zeros(dim)
        out[: self.k] = self.eigenvalues
        return out

    @property
    def q1_spectrum(self) -> NDArray[np.float64]:
        """All p eigenvalues of Q~1 (zeros appended when p > n)."""
        return self._padded(self.p)

    @property
    def q2_spectrum(self) -> NDArray[np.float64]:
        """All n eigenvalues of Q~2 (zeros appended when n > p)."""
        return self._padded(self.n)


def _sqrt_op(values: NDArray[np.float64], basis: NDArray[np.float64] | None):
    root = np.sqrt(values)
    if basis is None:
        return root, None
    return root, (basis * root) @ basis.T


def transform(x: NDArray, a_vals, a_basis, b_vals, b_basis) -> NDArray:
    """A^{1/2} X B^{1/2} for spectra given in the order of the basis columns."""
    ra, ma = _sqrt_op(a_vals, a_basis)
    rb, mb = _sqrt_op(b_vals, b_basis)
    y = x * ra[:, None] if ma is None else ma @ x
    return y * rb[None, :] if mb is None else y @ mb


def _spectrum(y: NDArray) -> NDArray:
    try:
        s = linalg.svd(y, compute_uv=False, check_finite=False, lapack_driver="gesdd")
    except linalg.LinAlgError as exc:
        raise DecompositionFailure(str(exc)) from exc
    return s**2


def _full_svd(y: NDArray):
    try:
        u, s, vt = linalg.svd(y, full_matrices=False, check_finite=False, lapack_driver="gesdd")
    except linalg.LinAlgError as exc:
        raise DecompositionFailure(str(exc)) from exc
    return s**2, u, vt.T


LANCZOS_MIN_DIM = 1000


def _leading_triplet(y: NDArray):
    """Largest singular triplet by Lanczos from a fixed start vector."""
    n = y.shape[1]
    try:
        u, s, vt = svds(y, k=1, v0=np.full(n, n**-0.5), tol=1e-13)
    except ArpackError as exc:
        raise DecompositionFailure(str(exc)) from exc
    return s**2, u, vt.T


def _top_svd(y: NDArray, k: int):
    """Top-k singular triplets from the smaller Gram matrix (Lanczos for one large triplet)."""
    p, n = y.shape
    m = min(p, n)
    k = min(k, m)
    if k == 1 and m >= LANCZOS_MIN_DIM:
        return _leading_triplet(y)
    gram = y @ y.T if p <= n else y.T @ y
    try:
        w, v = linalg.eigh(gram, subset_by_index=[m - k, m - 1], check_finite=False)
    except linalg.LinAlgError as exc:
        raise DecompositionFailure(str(exc)) from exc
    w, v = w[::-1], v[:, ::-1]
    s = np.sqrt(np.clip(w, 0.0, None))
    other = (y.T @ v if p <= n else y @ v) / np.where(s > 0, s, 1.0)
    return (w, v, other) if p <= n else (w, other, v)


def draw(
    model: SeparableModel,
    law: EntryLaw | None = None,
    seed: int = 0,
    rep: int = 0,
    with_unspiked: bool = False,
    vectors: bool = True,
    top_k: int | None = None,
) -> SampleDraw:
    """One realisation of the spiked model.

    ``vectors=False`` returns eigenvalues only.  ``top_k`` keeps only the
    leading ``top_k`` eigenpairs (computed from the smaller Gram matrix),
    which is much cheaper for large square problems.
    """
    law = law or EntryLaw()
    rng = rng_for(seed, rep)
    x, cut = law.sample(rng, model.p, model.n)
    y = transform(x, model.raw_tilde_a, model.basis_a, model.raw_tilde_b, model.basis_b)
    left = right = None
    complete = True
    if top_k is not None:
        lam, left, right = _top_svd(y, top_k)
        complete = lam.size == min(model.p, model.n)
        if not vectors:
            left = right = None
    elif vectors:
        lam, left, right = _full_svd(y)
    else:
        lam = _spectrum(y)
    unspiked = None
    if with_unspiked:
        y0 = transform(x, model.spec_a.values, model.basis_a, model.spec_b.values, model.basis_b)
        unspiked = _spectrum(y0)
        if top_k is not None:
            unspiked = unspiked[: lam.size]
    return SampleDraw(
        eigenvalues=lam,
        left_vectors=left,
        right_vectors=right,
        p=model.p,
        n=model.n,
        seed=(int(seed), int(rep)),
        unspiked=unspiked,
        truncated=cut,
        complete=complete,
    )


def from_matrix(y: ArrayLike, vectors: bool = True) -> SampleDraw:
    """Wrap an observed p x n data matrix (rows are variables)."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError("data matrix must be 2-D")
    p, n = y.shape
    if vectors:
        lam, left, right = _full_svd(y)
        return SampleDraw(lam, left, right, p, n)
    return SampleDraw(_spectrum(y), None, None, p, n)


def read_matrix(path: str) -> NDArray[np.float64]:
    """Plain numeric text matrix, whitespace or comma separated."""
    with open(path, encoding="utf-8") as fh:
        head = fh.readline()
    delim = "," if "," in head else None
    return np.loadtxt(path, delimiter=delim, ndmin=2)


def overlap(
    sample: SampleDraw,
    direction: ArrayLike | int,
    k: int,
    side: str = "left",
    model: SeparableModel | None = None,
) -> float:
    """|<v, xi_k>|^2 (or the right-vector analogue) for a unit vector or population index."""
    vecs = sample.left_vectors if side == "left" else sample.right_vectors
    if vecs is None:
        raise MissingVectors("draw was made without singular vectors")
    if not 1 <= k <= vecs.shape[1]:
        raise IndexOutOfRange(f"k={k} outside 1..{vecs.shape[1]}")
    if isinstance(direction, (int, np.integer)):
        if model is None:
            raise ValueError("a population index needs the model")
        v = model.direction_a(int(direction)) if side == "left" else model.direction_b(int(direction))
    else:
        v = np.asarray(direction, dtype=np.float64)
        if abs(np.linalg.norm(v) - 1.0) > 1e-8:
            raise ValueError("direction must be a unit vector")
    if v.size != vecs.shape[0]:
        raise IndexOutOfRange("direction has the wrong dimension")
    return float(np.dot(v, vecs[:, k - 1]) ** 2)


def interlacing_ok(sample: SampleDraw, shift: int, rtol: float = 1e-10) -> NDArray[np.bool_]:
    """Per-index check of lambda_i <= lambda~_i <= lambda_{i-shift} (upper bound void for i <= shift)."""
    if sample.unspiked is None:
        raise ValueError("draw has no coupled unspiked spectrum")
    lt, lu = sample.eigenvalues, sample.unspiked
    m = min(lt.size, lu.size)
    slack = rtol * max(1.0, float(lu[0]))
    lower = lu[:m] <= lt[:m] + slack
    upper = np.ones(m, dtype=bool)
    if shift < m:
        upper[shift:] = lt[shift:m] <= lu[: m - shift] + slack
    return lower & upper
