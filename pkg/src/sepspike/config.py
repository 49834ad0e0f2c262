"""JSON configuration documents for models and experiments.

Model keys
    p, n            dimensions (integers)
    specA, specB    "identity", a list of p (resp. n) values, or
                    {"values": [...], "counts": [...]} with counts summing to the dimension
    spikesA/B       list of {"index": 1-based int, "d": positive float}
    basisA/B        "identity" (default) or "haar"
    entry_law       "gaussian" (default), "uniform" or "student_t"
    df              degrees of freedom for student_t (default 6)
    seed            master seed (default: $SEPSPIKE_SEED or 0)
    tau             regularity constant for validation (default 0.05)

Experiment keys (in addition to the model keys)
    kind            one of harness.KINDS
    reps            replication count (default 200, 2000 in the paper tier)
    threads         worker threads (default: $SEPSPIKE_THREADS or 1)
    multipliers     {name: value} overriding harness.DEFAULT_MULTIPLIERS
    knobs           {name: value} kind-specific settings, see harness.KNOBS

Unknown keys raise ConfigError.
"""

from __future__ import annotations

import copy
import json
import os
from collections.abc import Iterable, Mapping
from typing import Any

import numpy as np

from .errors import ConfigError
from .harness import ExperimentConfig
from .sampling import LAWS, EntryLaw, haar_basis, rng_for
from .spectra import DEFAULT_TAU, PopulationSpectrum, SeparableModel, make_spiked

MODEL_KEYS = {
    "p": None,
    "n": None,
    "specA": "identity",
    "specB": "identity",
    "spikesA": [],
    "spikesB": [],
    "basisA": "identity",
    "basisB": "identity",
    "entry_law": "gaussian",
    "df": 6.0,
    "seed": None,
    "tau": DEFAULT_TAU,
}
EXPERIMENT_KEYS = {"kind": None, "reps": None, "threads": None, "multipliers": {}, "knobs": {}}
FAST_REPS = 200
PAPER_REPS = 2000


def default_seed() -> int:
    raw = os.environ.get("SEPSPIKE_SEED", "0")
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"SEPSPIKE_SEED must be an integer, got {raw!r}") from exc


def default_threads() -> int:
    raw = os.environ.get("SEPSPIKE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"SEPSPIKE_THREADS must be an integer, got {raw!r}") from exc


def load(path: str) -> dict[str, Any]:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path!r} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return doc


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: Mapping[str, Any], overrides: Iterable[str]) -> dict[str, Any]:
    """Apply ``key=value`` overrides; dotted keys reach into nested objects."""
    out = copy.deepcopy(dict(doc))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        target = out
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        target[parts[-1]] = _parse_value(text)
    return out


def check_keys(doc: Mapping[str, Any], allowed: Iterable[str]) -> None:
    bad = sorted(set(doc) - set(allowed))
    if bad:
        raise ConfigError(f"unknown config key(s): {', '.join(bad)}")


def _spectrum(spec: Any, dim: int, name: str) -> PopulationSpectrum:
    if spec == "identity" or spec is None:
        return PopulationSpectrum.identity(dim)
    if isinstance(spec, str):
        raise ConfigError(f"unknown preset {spec!r} for {name}")
    if isinstance(spec, Mapping):
        check_keys(spec, {"values", "counts"})
        vals = np.repeat(np.asarray(spec["values"], dtype=float), np.asarray(spec["counts"], dtype=int))
    else:
        vals = np.asarray(spec, dtype=float)
    if vals.size != dim:
        raise ConfigError(f"{name} has {vals.size} values but dimension {dim}")
    return PopulationSpectrum.from_values(vals)


def _spikes(items: Any, name: str) -> dict[int, float]:
    out: dict[int, float] = {}
    for item in items or []:
        if not isinstance(item, Mapping):
            raise ConfigError(f"{name} entries must be objects with index and d")
        check_keys(item, {"index", "d"})
        out[int(item["index"])] = float(item["d"])
    return out


def _basis(kind: Any, dim: int, seed: int, tag: int) -> np.ndarray | None:
    if kind in (None, "identity"):
        return None
    if kind == "haar":
        return haar_basis(dim, rng_for(seed, 10_000 + tag))
    raise ConfigError(f"unknown basis {kind!r}")


def model_from(doc: Mapping[str, Any]) -> SeparableModel:
    """Build the spiked model described by the model keys of ``doc``."""
    d = {**MODEL_KEYS, **{k: v for k, v in doc.items() if k in MODEL_KEYS}}
    if d["p"] is None or d["n"] is None:
        raise ConfigError("model needs both p and n")
    p, n = int(d["p"]), int(d["n"])
    seed = default_seed() if d["seed"] is None else int(d["seed"])
    base = SeparableModel(
        _spectrum(d["specA"], p, "specA"),
        _spectrum(d["specB"], n, "specB"),
        basis_a=_basis(d["basisA"], p, seed, 1),
        basis_b=_basis(d["basisB"], n, seed, 2),
    )
    return make_spiked(base, _spikes(d["spikesA"], "spikesA"), _spikes(d["spikesB"], "spikesB"))


def law_from(doc: Mapping[str, Any]) -> EntryLaw:
    kind = doc.get("entry_law", "gaussian")
    if kind not in LAWS:
        raise ConfigError(f"unknown entry_law {kind!r}; expected one of {LAWS}")
    return EntryLaw(kind, float(doc.get("df", 6.0)))


def seed_from(doc: Mapping[str, Any]) -> int:
    return default_seed() if doc.get("seed") is None else int(doc["seed"])


def model_document(doc: Mapping[str, Any]) -> SeparableModel:
    check_keys(doc, MODEL_KEYS)
    return model_from(doc)


def experiment_from(doc: Mapping[str, Any], kind: str | None = None, tier: str = "fast") -> ExperimentConfig:
    check_keys(doc, {**MODEL_KEYS, **EXPERIMENT_KEYS})
    kind = kind or doc.get("kind")
    if kind is None:
        raise ConfigError("experiment kind missing")
    if doc.get("kind") not in (None, kind):
        raise ConfigError(f"config kind {doc['kind']!r} does not match requested {kind!r}")
    if tier not in ("fast", "paper"):
        raise ConfigError(f"unknown tier {tier!r}")
    reps = doc.get("reps")
    if reps is None:
        reps = PAPER_REPS if tier == "paper" else FAST_REPS
    threads = doc.get("threads")
    threads = default_threads() if threads is None else int(threads)
    model = model_from(doc) if doc.get("p") is not None else None
    return ExperimentConfig(
        kind=kind,
        model=model,
        law=law_from(doc),
        reps=int(reps),
        seed=seed_from(doc),
        threads=threads,
        multipliers=dict(doc.get("multipliers") or {}),
        knobs=dict(doc.get("knobs") or {}),
    )
