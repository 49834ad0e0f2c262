"""Acceptance checks shared by ``sepspike verify`` and the test suite.

Each check returns a CriterionResult.  ``tolerance_scale`` multiplies every
tolerance (0 turns them into exact-equality checks, which is how a
tampered tolerance is demonstrated to fail by name).
"""

from __future__ import annotations

import math
import time
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np

from . import dequiv, estimators, harness, theory
from .harness import ExperimentConfig, sub_seed
from .sampling import SampleDraw, draw, rng_for
from .spectra import PopulationSpectrum, SeparableModel, spiked_to

TIERS = ("fast", "paper")
TABLE_REPS = {"fast": 200, "paper": 2000}


@dataclass(frozen=True)
class Settings:
    tier: str = "fast"
    seed: int = 0
    threads: int = 1
    tolerance_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.tier not in TIERS:
            raise ValueError(f"unknown tier {self.tier!r}; expected one of {TIERS}")
        if self.tolerance_scale < 0:
            raise ValueError("tolerance_scale must be non-negative")


@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    observed: dict[str, Any] = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] criterion {self.number:>2} {self.name}: {self.detail} ({self.seconds:.1f}s)"

    def to_dict(self) -> dict[str, Any]:
        return {
            "number": self.number,
            "name": self.name,
            "passed": self.passed,
            "detail": self.detail,
            "observed": harness._jsonable(self.observed),
            "seconds": self.seconds,
        }


def _mp_model(n: int, sigma_a: Iterable[float] = (), p: int | None = None) -> SeparableModel:
    return spiked_to(SeparableModel.null(n if p is None else p, n), list(sigma_a))


@lru_cache(maxsize=8)
def _leading_draws(n: int, reps: int, seed: int) -> tuple[SampleDraw, ...]:
    """Leading triplet of the square isotropic model with one A-spike at 3 (shared by two checks)."""
    model = _mp_model(n, [3.0])
    return tuple(draw(model, seed=seed, rep=i, top_k=1) for i in range(reps))


def clear_cache() -> None:
    _leading_draws.cache_clear()


# ---------------------------------------------------------------- checks


def mp_closed_forms(s: Settings) -> tuple[bool, str, dict]:
    tol = 1e-8 * s.tolerance_scale
    worst = {"edge": 0.0, "m2_edge": 0.0, "threshold": 0.0, "g2c": 0.0}
    n = 400
    for d in (0.25, 0.5, 1.0, 2.0):
        model = SeparableModel.null(int(round(d * n)), n)
        edge = dequiv.find_edge(model)
        root = math.sqrt(d)
        worst["edge"] = max(worst["edge"], abs(edge.lambda_plus - (1 + root) ** 2))
        worst["m2_edge"] = max(worst["m2_edge"], abs(edge.m2_at_edge + 1 / (1 + root)))
        thr_a, _ = theory.bbp_thresholds(edge)
        worst["threshold"] = max(worst["threshold"], abs(thr_a - (1 + root)))
        for sigma in (2.5, 4.0, 8.0):
            if sigma > 1 + root:
                g = dequiv.g2c(model, -1 / sigma, edge).value
                worst["g2c"] = max(worst["g2c"], abs(g - dequiv.mp_g2c(-1 / sigma, d)))
    ok = all(v <= tol for v in worst.values())
    detail = ", ".join(f"{k} err {v:.1e}" for k, v in worst.items()) + f" (tol {tol:.0e})"
    return ok, detail, worst


def _two_level_model() -> SeparableModel:
    p, n = 300, 600
    a = np.r_[np.full(p // 2, 2.5), np.ones(p - p // 2)]
    b = np.r_[np.full(n // 3, 0.5), np.full(n - n // 3, 1.5)]
    return SeparableModel(PopulationSpectrum.from_values(a), PopulationSpectrum.from_values(b))


def inverse_consistency(s: Settings) -> tuple[bool, str, dict]:
    model = _two_level_model()
    edge = dequiv.find_edge(model)
    rng = rng_for(sub_seed(s.seed, 2), 0)
    round_trip = deriv = 0.0
    trips = 0
    for which, g, inv, lo in (
        ("a", dequiv.g2c, dequiv.m2c_inverse_real, edge.m2_at_edge),
        ("b", dequiv.g1c, dequiv.m1c_inverse_real, edge.m1_at_edge),
    ):
        for x in edge.lambda_plus + rng.uniform(0.05, 10.0, 50):
            m = inv(model, float(x), edge)
            round_trip = max(round_trip, abs(g(model, m, edge).value - x))
            trips += 1
        for m in rng.uniform(0.9 * lo, 0.02 * lo, 25):
            h = 1e-6 * abs(m)
            fd = (g(model, m + h, edge).value - g(model, m - h, edge).value) / (2 * h)
            exact = g(model, m, edge).derivative
            deriv = max(deriv, abs(fd - exact) / abs(exact))
    ok = round_trip <= 1e-8 * s.tolerance_scale and deriv <= 1e-4 * s.tolerance_scale
    obs = {"round_trips": trips, "max_round_trip_error": round_trip, "max_derivative_rel_error": deriv}
    return ok, f"{trips} round trips max err {round_trip:.1e}; derivative rel err {deriv:.1e}", obs


def outlier_location(s: Settings) -> tuple[bool, str, dict]:
    seed = sub_seed(s.seed, 3)
    theta = theory.predict_outliers(_mp_model(1000, [3.0])).by_label(1).theta
    med = {}
    for n in (500, 1000, 2000):
        lam = np.array([d.eigenvalues[0] for d in _leading_draws(n, 200, seed)])
        med[n] = float(np.median(np.abs(lam - theta)))
    bound = 5 * 1000**-0.5 * s.tolerance_scale
    ratio = med[500] / med[2000]
    lo, hi = 2.0 - 0.5 * s.tolerance_scale, 2.0 + s.tolerance_scale
    ok = med[1000] <= bound and lo <= ratio <= hi
    obs = {"theta": theta, "median_dev": med, "bound": bound, "rate_ratio": ratio, "rate_window": [lo, hi]}
    detail = f"median dev {med[1000]:.4f} <= {bound:.4f}; median ratio n=500/n=2000 {ratio:.2f} in [{lo:g}, {hi:g}]"
    return ok, detail, obs


def overlap_mean(s: Settings) -> tuple[bool, str, dict]:
    n = 2000
    model = _mp_model(n, [3.0])
    edge = dequiv.find_edge(model.base())
    pred = theory.overlap_value(model, edge, "a", 3.0)
    vals = np.array([d.left_vectors[0, 0] ** 2 for d in _leading_draws(n, 200, sub_seed(s.seed, 3))])
    mean = float(vals.mean())
    tol = 0.03 * s.tolerance_scale
    ok = abs(mean - 0.5) <= tol
    obs = {"mean": mean, "predicted": pred, "se": float(vals.std(ddof=1) / math.sqrt(vals.size))}
    return ok, f"mean overlap {mean:.4f} vs 0.5 +- {tol:g} (closed form {pred:.4f})", obs


def adaptive_table(s: Settings) -> tuple[bool, str, dict]:
    reps = TABLE_REPS[s.tier]
    cfg = ExperimentConfig(
        "adaptive_table",
        reps=reps,
        seed=sub_seed(s.seed, 5),
        threads=s.threads,
        multipliers={
            "table_abs": harness.DEFAULT_MULTIPLIERS["table_abs"] * s.tolerance_scale,
            "table_se": harness.DEFAULT_MULTIPLIERS["table_se"] * s.tolerance_scale,
        },
    )
    rep = harness.run(cfg)
    rows = rep.tables["table"]
    failed = [r for r in rows if r["passed"] is False]
    worst = max(rows, key=lambda r: abs(r["mean"] - r["reference"]) - r["tolerance"])
    detail = (
        f"{len(rows) - len(failed)}/{len(rows)} cells within tolerance at {reps} reps; worst "
        f"({worst['p']},{worst['n']},{worst['sigma']:g}) mean {worst['mean']:.3f} vs {worst['reference']}"
    )
    return not failed, detail, {"reps": reps, "table": rows}


def spike_counts(s: Settings) -> tuple[bool, str, dict]:
    cfg = ExperimentConfig(
        "counts_misestimation",
        reps=500,
        seed=sub_seed(s.seed, 6),
        threads=s.threads,
        knobs={"p": 150, "n": 200, "calib_N": 2000, "epsilon": 0.05, "cases": harness.figure1_cases(), "statistic": "all"},
    )
    rep = harness.run(cfg)
    need = 1.0 - 0.1 * s.tolerance_scale
    freqs = {row["case"]: 1.0 - row["misestimation"] for row in rep.tables["curve"]}
    ok = all(f >= need for f in freqs.values())
    parts = ", ".join(f"{k} P(correct)={v:.3f}" for k, v in freqs.items())
    obs = {"frequencies": freqs, "omega": rep.params["omega"], "curve": rep.tables["curve"]}
    return ok, f"{parts} (need >= {need:g}, omega={rep.params['omega']:.4f})", obs


def sticking(s: Settings) -> tuple[bool, str, dict]:
    model = _mp_model(500, [4.0])
    cfg = ExperimentConfig("sticking", model=model, reps=100, seed=sub_seed(s.seed, 7), threads=s.threads)
    rep = harness.run(cfg)
    bound = 10.0 * s.tolerance_scale
    medians = [float(np.median(rep.raw[f"scaled_gap_{i}"])) for i in range(1, 11)]
    inter = float(np.min(rep.raw["interlacing_fraction"]))
    ok = inter >= 1.0 and max(medians) <= bound
    obs = {"medians": medians, "interlacing_min": inter, "alpha_plus": rep.params["alpha_plus"]}
    return ok, f"interlacing {100 * inter:.0f}%; max per-index median scaled gap {max(medians):.2f} <= {bound:g}", obs


def delocalization(s: Settings) -> tuple[bool, str, dict]:
    model = SeparableModel.null(500, 500)
    cfg = ExperimentConfig("delocalization", model=model, reps=100, seed=sub_seed(s.seed, 8), threads=s.threads)
    rep = harness.run(cfg)
    bound = 5 * math.log(500) ** 2 * s.tolerance_scale
    q95 = rep.metric("scaled_overlap").q95
    return q95 <= bound, f"q95 of n|<v_j, xi_k>|^2 = {q95:.2f} <= {bound:.1f}", {"q95": q95, "bound": bound}


def local_law(s: Settings) -> tuple[bool, str, dict]:
    model = SeparableModel.null(400, 400)
    cfg = ExperimentConfig(
        "local_law", model=model, reps=100, seed=sub_seed(s.seed, 9), threads=s.threads, knobs={"directions": 0}
    )
    rep = harness.run(cfg)
    bound = 5 * math.log(400) * s.tolerance_scale
    q95 = rep.metric("m_error").q95
    return q95 <= bound, f"q95 of n*eta|m - m_c| = {q95:.3f} <= {bound:.2f}", {"q95": q95, "bound": bound}


def shrinkage(s: Settings) -> tuple[bool, str, dict]:
    d_hat = estimators.d_hat_isotropic(4.5, 1.0)
    rho = estimators.rho_hat_isotropic(d_hat, 1.0)
    unit_tol = 1e-12 * s.tolerance_scale
    unit_ok = abs(d_hat - 2.0) <= unit_tol and abs(rho - 1.0) <= unit_tol
    cfg = ExperimentConfig(
        "prial",
        reps=200,
        seed=sub_seed(s.seed, 10),
        threads=s.threads,
        multipliers={"prial_se": harness.DEFAULT_MULTIPLIERS["prial_se"] * s.tolerance_scale},
    )
    rep = harness.run(cfg)
    curve = rep.tables["curve"]
    ok = unit_ok and rep.passed
    parts = ", ".join(f"n={r['n']}: {r['prial']:.2f}+-{r['se']:.2f}" for r in curve)
    obs = {"d_hat": d_hat, "rho_hat": rho, "curve": curve, "checks": rep.checks}
    return ok, f"d_hat(4.5)={d_hat:.12g}, rho_hat={rho:.12g}; PRIAL {parts}", obs


CRITERIA: dict[int, tuple[str, Callable[[Settings], tuple[bool, str, dict]]]] = {
    1: ("mp_closed_forms", mp_closed_forms),
    2: ("inverse_consistency", inverse_consistency),
    3: ("outlier_location", outlier_location),
    4: ("overlap", overlap_mean),
    5: ("adaptive_table", adaptive_table),
    6: ("spike_counts", spike_counts),
    7: ("sticking_interlacing", sticking),
    8: ("delocalization", delocalization),
    9: ("averaged_local_law", local_law),
    10: ("shrinkage_prial", shrinkage),
}


def run_criterion(number: int, settings: Settings | None = None) -> CriterionResult:
    settings = settings or Settings()
    if number not in CRITERIA:
        raise KeyError(f"no acceptance criterion {number}")
    name, fn = CRITERIA[number]
    t0 = time.perf_counter()
    ok, detail, obs = fn(settings)
    return CriterionResult(number, name, bool(ok), detail, obs, time.perf_counter() - t0)


def run_all(settings: Settings | None = None, numbers: Iterable[int] | None = None) -> list[CriterionResult]:
    settings = settings or Settings()
    chosen = sorted(CRITERIA) if numbers is None else sorted(set(numbers))
    return [run_criterion(k, settings) for k in chosen]
