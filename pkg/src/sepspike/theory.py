"""Theory-side predictions for spikes: thresholds, outlier locations,
fluctuation scales, eigenvector overlaps and separation diagnostics."""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from . import dequiv
from .dequiv import EdgeData
from .errors import LabelNotOutlier
from .spectra import DEFAULT_TAU, SeparableModel

A_SIDE = "a"
B_SIDE = "b"


def default_phi(n: int) -> float:
    """Support bound for Gaussian-like entries."""
    return n**-0.5


def bbp_thresholds(edge: EdgeData) -> tuple[float, float]:
    """Spike sizes above which an outlier leaves the bulk (A side, B side)."""
    return -1.0 / edge.m2_at_edge, -1.0 / edge.m1_at_edge


@dataclass(frozen=True)
class OutlierPrediction:
    origin: str
    population_index: int
    sigma_tilde: float
    is_outlier: bool
    supercritical: bool
    theta: float
    delta: float
    fluctuation_scale: float
    label: int


@dataclass(frozen=True)
class LabelMap:
    """Labels alpha(i), beta(mu) for spikes and non-spike indices."""

    spikes: dict[tuple[str, int], int]
    spike_indices_a: tuple[int, ...]
    spike_indices_b: tuple[int, ...]
    outliers: frozenset[int]
    supercritical: frozenset[int]

    @property
    def total(self) -> int:
        return len(self.spikes)

    def alpha(self, i: int) -> int:
        return self._label(A_SIDE, i, self.spike_indices_a)

    def beta(self, mu: int) -> int:
        return self._label(B_SIDE, mu, self.spike_indices_b)

    def _label(self, side: str, idx: int, spiked: tuple[int, ...]) -> int:
        if (side, idx) in self.spikes:
            return self.spikes[(side, idx)]
        below = sum(1 for k in spiked if k < idx)
        return idx - below + self.total

    def owner(self, label: int) -> tuple[str, int]:
        for key, lab in self.spikes.items():
            if lab == label:
                return key
        raise KeyError(label)


@dataclass(frozen=True)
class Predictions:
    edge: EdgeData
    phi_n: float
    entries: tuple[OutlierPrediction, ...]
    labels: LabelMap

    def __iter__(self):
        return iter(self.entries)

    def by_label(self, label: int) -> OutlierPrediction:
        for e in self.entries:
            if e.label == label:
                return e
        raise KeyError(label)

    def get(self, origin: str, index: int) -> OutlierPrediction:
        for e in self.entries:
            if e.origin == origin and e.population_index == index:
                return e
        raise KeyError((origin, index))

    @property
    def r_plus(self) -> int:
        return sum(1 for e in self.entries if e.origin == A_SIDE and e.supercritical)

    @property
    def s_plus(self) -> int:
        return sum(1 for e in self.entries if e.origin == B_SIDE and e.supercritical)


def _theta(model: SeparableModel, edge: EdgeData, side: str, sigma: float) -> float:
    g = dequiv.g2c if side == A_SIDE else dequiv.g1c
    return g(model, -1.0 / sigma, edge).value


def predict_outliers(
    model: SeparableModel, edge: EdgeData | None = None, phi_n: float | None = None
) -> Predictions:
    """One prediction per spike, labelled by descending outlier location."""
    n = model.n
    if edge is None:
        edge = dequiv.find_edge(model.base())
    if phi_n is None:
        phi_n = default_phi(n)
    if not n**-0.5 * (1 - 1e-12) <= phi_n < 1:
        raise ValueError(f"phi_n={phi_n} outside [n^-1/2, 1)")
    thr_a, thr_b = bbp_thresholds(edge)
    margin = n ** (-1.0 / 3.0) + phi_n
    raw: list[dict] = []
    for side, spikes, thr in ((A_SIDE, model.spikes_a, thr_a), (B_SIDE, model.spikes_b, thr_b)):
        for s in spikes:
            sig = s.sigma_tilde
            outlier = sig > thr
            if outlier:
                theta = _theta(model, edge, side, sig)
                delta = math.sqrt(sig - thr)
                scale = n**-0.5 * delta + phi_n * delta**2
            else:
                theta, delta = edge.lambda_plus, 0.0
                scale = n ** (-2.0 / 3.0) + phi_n**2
            raw.append(
                dict(
                    origin=side,
                    population_index=s.index,
                    sigma_tilde=sig,
                    is_outlier=outlier,
                    supercritical=sig >= thr + margin,
                    theta=theta,
                    delta=delta,
                    fluctuation_scale=scale,
                )
            )
    order = sorted(raw, key=lambda e: (-e["theta"], e["origin"], e["population_index"]))
    entries = tuple(OutlierPrediction(label=k + 1, **e) for k, e in enumerate(order))
    labels = LabelMap(
        spikes={(e.origin, e.population_index): e.label for e in entries},
        spike_indices_a=model.spikes_a.indices,
        spike_indices_b=model.spikes_b.indices,
        outliers=frozenset(e.label for e in entries if e.is_outlier),
        supercritical=frozenset(e.label for e in entries if e.supercritical),
    )
    return Predictions(edge, float(phi_n), entries, labels)


# ---------------------------------------------------------------- overlaps


@dataclass(frozen=True)
class OverlapEntry:
    label: int
    origin: str
    population_index: int
    z_value: float
    psi: float


@dataclass(frozen=True)
class OverlapPrediction:
    labels: frozenset[int]
    entries: tuple[OverlapEntry, ...]

    def value(self, origin: str, index: int) -> float:
        for e in self.entries:
            if e.origin == origin and e.population_index == index:
                return e.z_value
        return 0.0

    def quadratic_form(self, model: SeparableModel, v: NDArray[np.float64], side: str = A_SIDE) -> float:
        """<v, Z_S v> for a vector in the left (``a``) or right (``b``) space."""
        total = 0.0
        for e in self.entries:
            if e.origin != side:
                continue
            u = model.direction_a(e.population_index) if side == A_SIDE else model.direction_b(e.population_index)
            total += float(np.dot(u, v)) ** 2 * e.z_value
        return total


def overlap_value(model: SeparableModel, edge: EdgeData, side: str, sigma: float) -> float:
    """Limit of the squared overlap between a spiked direction and its outlier vector."""
    g = dequiv.g2c if side == A_SIDE else dequiv.g1c
    gv = g(model, -1.0 / sigma, edge)
    return gv.derivative / (sigma * gv.value)


def overlap_prediction(
    model: SeparableModel,
    edge: EdgeData | None = None,
    labels: Iterable[int] = (),
    phi_n: float | None = None,
    predictions: Predictions | None = None,
) -> OverlapPrediction:
    if predictions is None:
        predictions = predict_outliers(model, edge, phi_n)
    edge = predictions.edge
    n = model.n
    chosen = frozenset(int(k) for k in labels)
    out = []
    for k in sorted(chosen):
        if k not in predictions.labels.supercritical:
            raise LabelNotOutlier(f"label {k} is not a supercritical outlier")
        e = predictions.by_label(k)
        z = overlap_value(model, edge, e.origin, e.sigma_tilde)
        psi = predictions.phi_n + n**-0.5 / e.delta
        out.append(OverlapEntry(k, e.origin, e.population_index, z, psi))
    return OverlapPrediction(chosen, tuple(out))


# ---------------------------------------------------------------- separation


@dataclass(frozen=True)
class SeparationReport:
    delta_aa: dict[int, NDArray[np.float64]]
    delta_ab: dict[int, NDArray[np.float64]]
    delta_ba: dict[int, NDArray[np.float64]]
    delta_bb: dict[int, NDArray[np.float64]]
    delta_s: dict[int, float]
    alpha_plus: float
    margins: dict[int, float]
    tau: float

    @property
    def non_overlap(self) -> dict[int, bool]:
        return {k: m >= self.tau for k, m in self.margins.items()}

    @property
    def passed(self) -> bool:
        return all(self.non_overlap.values())


def _companion_at_theta(model: SeparableModel, edge: EdgeData, e: OutlierPrediction) -> float:
    """The transform of the opposite side evaluated at theta."""
    if not e.is_outlier:
        return edge.m1_at_edge if e.origin == A_SIDE else edge.m2_at_edge
    g = dequiv.g2c if e.origin == A_SIDE else dequiv.g1c
    return g(model, -1.0 / e.sigma_tilde, edge).companion


def separation(
    model: SeparableModel,
    edge: EdgeData | None = None,
    labels: Iterable[int] = (),
    phi_n: float | None = None,
    tau: float = DEFAULT_TAU,
    predictions: Predictions | None = None,
) -> SeparationReport:
    """Pairwise separations, the per-label gap for a label set, and alpha_+."""
    if predictions is None:
        predictions = predict_outliers(model, edge, phi_n)
    edge = predictions.edge
    lm = predictions.labels
    sa, sb = model.raw_tilde_a, model.raw_tilde_b
    thr_a, thr_b = bbp_thresholds(edge)

    d_aa: dict[int, NDArray] = {}
    d_ab: dict[int, NDArray] = {}
    d_ba: dict[int, NDArray] = {}
    d_bb: dict[int, NDArray] = {}
    for e in predictions:
        comp = _companion_at_theta(model, edge, e)
        if e.origin == A_SIDE:
            d_aa[e.label] = np.abs(sa - e.sigma_tilde)
            d_ab[e.label] = np.abs(sb + 1.0 / comp)
        else:
            d_ba[e.label] = np.abs(sa + 1.0 / comp)
            d_bb[e.label] = np.abs(sb - e.sigma_tilde)

    chosen = frozenset(int(k) for k in labels)
    alpha_labels = np.array([lm.alpha(i) for i in range(1, model.p + 1)])
    beta_labels = np.array([lm.beta(m) for m in range(1, model.n + 1)])

    def row(label: int) -> tuple[NDArray, NDArray]:
        if label in d_aa:
            return d_aa[label], d_ab[label]
        return d_ba[label], d_bb[label]

    delta_s: dict[int, float] = {}
    for e in predictions:
        k = e.label
        if k in chosen:
            ra, rb = row(k)
            cands = [ra[~np.isin(alpha_labels, list(chosen))], rb[~np.isin(beta_labels, list(chosen))]]
        else:
            # distance from this label to every member of S, measured from S's side
            cands = []
            for s_lab in chosen:
                ra, rb = row(s_lab)
                if e.origin == A_SIDE:
                    cands.append(np.array([ra[e.population_index - 1]]))
                else:
                    cands.append(np.array([rb[e.population_index - 1]]))
        vals = np.concatenate(cands) if cands else np.array([])
        delta_s[k] = float(vals.min()) if vals.size else math.inf

    gaps = [abs(e.sigma_tilde - (thr_a if e.origin == A_SIDE else thr_b)) for e in predictions]
    alpha_plus = float(min(gaps)) if gaps else math.inf

    margins: dict[int, float] = {}
    ia = [i - 1 for i in model.spikes_a.indices]
    ib = [m - 1 for m in model.spikes_b.indices]
    for e in predictions:
        ra, rb = row(e.label)
        own = e.population_index - 1
        pool_a = [ra[j] for j in ia if not (e.origin == A_SIDE and j == own)]
        pool_b = [rb[j] for j in ib if not (e.origin == B_SIDE and j == own)]
        pool = pool_a + pool_b
        margins[e.label] = float(min(pool)) if pool else math.inf
    return SeparationReport(d_aa, d_ab, d_ba, d_bb, delta_s, alpha_plus, margins, tau)


def delocalization_bound(
    model: SeparableModel,
    edge: EdgeData,
    direction_index: int,
    phi_n: float | None = None,
    kappa: float = 0.0,
    side: str = A_SIDE,
) -> float:
    """Predicted size of |<v_j, xi_k>|^2 for a non-outlier eigenvector (diagonal case)."""
    n = model.n
    if phi_n is None:
        phi_n = default_phi(n)
    if side == A_SIDE:
        sep = model.raw_tilde_a[direction_index - 1] + 1.0 / edge.m2_at_edge
    else:
        sep = model.raw_tilde_b[direction_index - 1] + 1.0 / edge.m1_at_edge
    return (1.0 / n + phi_n**3) / (sep**2 + phi_n**2 + kappa)
