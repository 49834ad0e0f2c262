"""Population spectra, spikes and the spiked separable model.

A model is stored as two *base* (unspiked) spectra plus the spike
perturbations that act on named indices of those spectra.  Spiked values
are ``sigma * (1 + d)``; the spiked spectrum is reported in descending
order with ties broken by the original index.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionMismatch, InvalidSpectrum, NegativePerturbation

DEFAULT_TAU = 0.05
MAX_SPIKES = 16


def _readonly(values: ArrayLike) -> NDArray[np.float64]:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PopulationSpectrum:
    """Eigenvalues of a population covariance, sorted non-increasing."""

    values: NDArray[np.float64]

    def __post_init__(self) -> None:
        arr = _readonly(self.values)
        if arr.ndim != 1 or arr.size == 0:
            raise InvalidSpectrum("spectrum must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(arr)):
            raise InvalidSpectrum("spectrum contains non-finite values")
        if np.any(arr < 0):
            raise InvalidSpectrum("spectrum values must be non-negative")
        if np.any(np.diff(arr) > 0):
            raise InvalidSpectrum("spectrum must be sorted non-increasing")
        object.__setattr__(self, "values", arr)

    @classmethod
    def identity(cls, dim: int) -> PopulationSpectrum:
        return cls(np.ones(int(dim)))

    @classmethod
    def from_values(cls, values: ArrayLike) -> PopulationSpectrum:
        """Build a spectrum from unsorted values."""
        return cls(np.sort(np.asarray(values, dtype=np.float64))[::-1])

    @property
    def dim(self) -> int:
        return int(self.values.size)

    @property
    def max(self) -> float:
        return float(self.values[0])

    def mass_on(self, lo: float, hi: float) -> float:
        """Fraction of eigenvalues in the closed interval [lo, hi]."""
        v = self.values
        return float(np.count_nonzero((v >= lo) & (v <= hi)) / v.size)

    def atoms(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Distinct eigenvalues (descending) and their empirical masses."""
        vals, counts = np.unique(self.values, return_counts=True)
        return vals[::-1].copy(), (counts[::-1] / self.values.size).astype(np.float64)

    def is_identity(self) -> bool:
        return bool(np.all(self.values == 1.0))


@dataclass(frozen=True)
class DiscreteMeasure:
    atoms: NDArray[np.float64]
    masses: NDArray[np.float64]

    @property
    def total(self) -> float:
        return float(np.sum(self.masses))

    def as_dict(self) -> dict[float, float]:
        return {float(a): float(m) for a, m in zip(self.atoms, self.masses)}


def esd(spectrum: PopulationSpectrum) -> DiscreteMeasure:
    """Empirical spectral distribution: mass 1/dim at every eigenvalue."""
    atoms, masses = spectrum.atoms()
    return DiscreteMeasure(atoms, masses)


@dataclass(frozen=True)
class Spike:
    """A multiplicative perturbation ``sigma -> sigma * (1 + d)`` at a 1-based index."""

    index: int
    base: float
    d: float

    @property
    def sigma_tilde(self) -> float:
        return self.base * (1.0 + self.d)


@dataclass(frozen=True)
class SpikeSet:
    entries: tuple[Spike, ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def count(self) -> int:
        return len(self.entries)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(s.index for s in self.entries)


def _apply(values: NDArray[np.float64], spikes: SpikeSet) -> NDArray[np.float64]:
    out = values.copy()
    for s in spikes:
        out[s.index - 1] = s.sigma_tilde
    return out


def _descending_order(values: NDArray[np.float64]) -> NDArray[np.int64]:
    # stable sort on -values keeps original index order among ties
    return np.argsort(-values, kind="stable")


@dataclass(frozen=True)
class SeparableModel:
    """Spiked separable covariance model ``Y = A~^{1/2} X B~^{1/2}``.

    ``spec_a`` / ``spec_b`` are the unspiked spectra of A (p x p) and
    B (n x n).  ``basis_a`` / ``basis_b`` are optional orthogonal
    eigenbases (columns follow the base spectrum order); ``None`` means
    the identity.
    """

    spec_a: PopulationSpectrum
    spec_b: PopulationSpectrum
    spikes_a: SpikeSet = field(default_factory=SpikeSet)
    spikes_b: SpikeSet = field(default_factory=SpikeSet)
    basis_a: NDArray[np.float64] | None = None
    basis_b: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        for spikes, spec, side in ((self.spikes_a, self.spec_a, "A"), (self.spikes_b, self.spec_b, "B")):
            seen = set()
            for s in spikes:
                if not 1 <= s.index <= spec.dim:
                    raise DimensionMismatch(f"{side}-spike index {s.index} outside 1..{spec.dim}")
                if s.index in seen:
                    raise DimensionMismatch(f"duplicate {side}-spike index {s.index}")
                seen.add(s.index)
        for basis, dim, side in ((self.basis_a, self.p, "A"), (self.basis_b, self.n, "B")):
            if basis is not None:
                b = np.asarray(basis, dtype=np.float64)
                if b.shape != (dim, dim):
                    raise DimensionMismatch(f"basis for {side} must be {dim}x{dim}, got {b.shape}")
                b.setflags(write=False)
                object.__setattr__(self, f"basis_{side.lower()}", b)

    @classmethod
    def null(cls, p: int, n: int) -> SeparableModel:
        """A = I_p, B = I_n, no spikes."""
        return cls(PopulationSpectrum.identity(p), PopulationSpectrum.identity(n))

    @property
    def p(self) -> int:
        return self.spec_a.dim

    @property
    def n(self) -> int:
        return self.spec_b.dim

    @property
    def aspect(self) -> float:
        """d_n = p / n."""
        return self.p / self.n

    @property
    def r(self) -> int:
        return self.spikes_a.count

    @property
    def s(self) -> int:
        return self.spikes_b.count

    @property
    def has_spikes(self) -> bool:
        return self.r + self.s > 0

    # spiked spectra in original index order
    @property
    def raw_tilde_a(self) -> NDArray[np.float64]:
        return _apply(self.spec_a.values, self.spikes_a)

    @property
    def raw_tilde_b(self) -> NDArray[np.float64]:
        return _apply(self.spec_b.values, self.spikes_b)

    @property
    def sigma_tilde_a(self) -> NDArray[np.float64]:
        raw = self.raw_tilde_a
        return raw[_descending_order(raw)]

    @property
    def sigma_tilde_b(self) -> NDArray[np.float64]:
        raw = self.raw_tilde_b
        return raw[_descending_order(raw)]

    def position_a(self, index: int) -> int:
        """1-based rank of original A-index ``index`` in the descending spiked spectrum."""
        order = _descending_order(self.raw_tilde_a)
        return int(np.flatnonzero(order == index - 1)[0]) + 1

    def position_b(self, index: int) -> int:
        order = _descending_order(self.raw_tilde_b)
        return int(np.flatnonzero(order == index - 1)[0]) + 1

    def direction_a(self, index: int) -> NDArray[np.float64]:
        """Population eigenvector of A~ attached to original 1-based ``index``."""
        return _basis_column(self.basis_a, self.p, index)

    def direction_b(self, index: int) -> NDArray[np.float64]:
        return _basis_column(self.basis_b, self.n, index)

    def ordered_basis_a(self) -> NDArray[np.float64]:
        """Eigenvectors of A~ as columns, ordered by descending spiked eigenvalue."""
        order = _descending_order(self.raw_tilde_a)
        basis = np.eye(self.p) if self.basis_a is None else self.basis_a
        return basis[:, order]

    def ordered_basis_b(self) -> NDArray[np.float64]:
        order = _descending_order(self.raw_tilde_b)
        basis = np.eye(self.n) if self.basis_b is None else self.basis_b
        return basis[:, order]

    def base(self) -> SeparableModel:
        """The same model with all spikes removed."""
        return replace(self, spikes_a=SpikeSet(), spikes_b=SpikeSet())


def _basis_column(basis: NDArray[np.float64] | None, dim: int, index: int) -> NDArray[np.float64]:
    if not 1 <= index <= dim:
        raise DimensionMismatch(f"index {index} outside 1..{dim}")
    if basis is None:
        e = np.zeros(dim)
        e[index - 1] = 1.0
        return e
    return np.array(basis[:, index - 1])


def _spike_set(spec: PopulationSpectrum, d: Sequence[float] | Mapping[int, float], side: str) -> SpikeSet:
    items = sorted(d.items()) if isinstance(d, Mapping) else list(enumerate(d, start=1))
    if len(items) > MAX_SPIKES:
        raise DimensionMismatch(f"at most {MAX_SPIKES} {side}-spikes are supported")
    if len(items) > spec.dim:
        raise DimensionMismatch(f"{len(items)} {side}-spikes exceed dimension {spec.dim}")
    entries = []
    for index, dval in items:
        dval = float(dval)
        if not dval > 0:
            raise NegativePerturbation(f"{side}-spike at index {index} has d={dval}; must be > 0")
        if not 1 <= int(index) <= spec.dim:
            raise DimensionMismatch(f"{side}-spike index {index} outside 1..{spec.dim}")
        entries.append(Spike(int(index), float(spec.values[int(index) - 1]), dval))
    return SpikeSet(tuple(entries))


def make_spiked(
    base: SeparableModel,
    d_a: Sequence[float] | Mapping[int, float] = (),
    d_b: Sequence[float] | Mapping[int, float] = (),
) -> SeparableModel:
    """Attach spikes to a base model.

    A plain sequence ``d_a`` perturbs indices 1..r; a mapping
    ``{index: d}`` perturbs arbitrary 1-based indices.
    """
    if base.has_spikes:
        base = base.base()
    return replace(
        base,
        spikes_a=_spike_set(base.spec_a, d_a, "A"),
        spikes_b=_spike_set(base.spec_b, d_b, "B"),
    )


def spiked_to(base: SeparableModel, sigma_a: Sequence[float] = (), sigma_b: Sequence[float] = ()) -> SeparableModel:
    """Spike indices 1..r so that the spiked values equal ``sigma_a`` (and likewise for B).

    Targets equal to the base value are left unspiked.
    """
    d_a = {i + 1: s / base.spec_a.values[i] - 1.0 for i, s in enumerate(sigma_a) if s != base.spec_a.values[i]}
    d_b = {i + 1: s / base.spec_b.values[i] - 1.0 for i, s in enumerate(sigma_b) if s != base.spec_b.values[i]}
    return make_spiked(base, d_a, d_b)


@dataclass(frozen=True)
class ValidationReport:
    tau: float
    aspect: float
    violations: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not self.violations


def validate(model: SeparableModel, tau: float = DEFAULT_TAU) -> ValidationReport:
    """Check the aspect-ratio, boundedness and non-concentration assumptions."""
    problems: list[str] = []
    d = model.aspect
    if not tau <= d <= 1.0 / tau:
        problems.append(f"aspect ratio p/n={d:.4g} outside [{tau:.4g}, {1 / tau:.4g}]")
    for name, spec in (("A", model.spec_a), ("B", model.spec_b)):
        if spec.max > 1.0 / tau:
            problems.append(f"max eigenvalue of {name} = {spec.max:.4g} exceeds 1/tau")
        mass = spec.mass_on(0.0, tau)
        if mass > 1.0 - tau:
            problems.append(f"{name} puts mass {mass:.4g} on [0, tau] (limit {1 - tau:.4g})")
    for name, vals in (("A~", model.sigma_tilde_a), ("B~", model.sigma_tilde_b)):
        if vals[0] > 1.0 / tau:
            problems.append(f"largest spiked eigenvalue of {name} = {vals[0]:.4g} exceeds 1/tau")
    return ValidationReport(tau=tau, aspect=d, violations=tuple(problems))
