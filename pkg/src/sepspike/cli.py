"""Command-line entry point: ``sepspike <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import acceptance, config, dequiv, estimators, harness, theory
from .dequiv import EdgeData
from .errors import ConfigError, SepspikeError, UsageError
from .harness import _jsonable, write_csv
from .sampling import EntryLaw, LAWS, draw, from_matrix, read_matrix
from .spectra import SeparableModel

SUBCOMMANDS = ("law", "predict", "sample", "estimate", "experiment", "verify")


@dataclass(frozen=True)
class Invocation:
    subcommand: str
    config: str | None = None
    out: str | None = None
    overrides: tuple[str, ...] = ()
    verbosity: int = 0
    json: bool = False
    options: Mapping[str, Any] = field(default_factory=dict)

    def __getattr__(self, name: str) -> Any:
        if name == "options":
            raise AttributeError(name)
        try:
            return self.options[name]
        except KeyError:
            raise AttributeError(name) from None


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit; surface a typed error instead
        raise UsageError(message)


def _grid(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"grid {text!r} is not lo:hi:steps")
    try:
        lo, hi, steps = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"grid {text!r} is not lo:hi:steps") from exc
    if not hi > lo or steps < 2:
        raise argparse.ArgumentTypeError(f"grid {text!r} needs hi > lo and steps >= 2")
    return lo, hi, steps


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON model or experiment document")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value (dotted keys reach nested objects); repeatable")
    common.add_argument("--out", help="output directory")
    common.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(
        prog="sepspike",
        description="Spiked separable covariance matrices: limiting law, outlier theory, simulation and inference.",
        epilog=config.__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="subcommand", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("law", parents=[common], help="limiting density, Stieltjes transforms and the right edge")
    p.add_argument("--grid", type=_grid, help="lo:hi:steps energy grid (default: 0 to 1.1 x edge, 200 steps)")
    p.add_argument("--eta", type=float, default=dequiv.DEFAULT_ETA, help="imaginary part of the spectral parameter")
    p.add_argument("--edge-only", action="store_true", help="only compute the right edge")

    p = sub.add_parser("predict", parents=[common], help="outlier locations, overlaps and separations")
    p.add_argument("--phi", type=float, help="support bound phi_n (default n^-1/2)")
    p.add_argument("--labels", type=int, nargs="*", help="label set for overlaps (default: supercritical outliers)")

    p = sub.add_parser("sample", parents=[common], help="draw spectra (and overlaps) from the model")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--seed", type=int, help="master seed (default $SEPSPIKE_SEED or config seed)")
    p.add_argument("--law", choices=LAWS, help="entry distribution")
    p.add_argument("--coupled", action="store_true", help="also report the unspiked spectrum from the same X")
    p.add_argument("--overlaps", action="store_true", help="write squared overlaps of spiked directions")
    p.add_argument("--top", type=int, help="number of leading eigenvalues to report (default all)")

    p = sub.add_parser("estimate", parents=[common], help="spike counts, adaptive spikes and shrinkage")
    p.add_argument("--data", help="numeric p x n matrix file (rows are variables); otherwise one simulated draw")
    p.add_argument("--seed", type=int)
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--omega", type=float, help="ratio threshold")
    p.add_argument("--calibrate", nargs=2, metavar=("N", "EPSILON"), help="calibrate omega by Wishart resampling")
    p.add_argument("--c", type=float, default=estimators.DEFAULT_C, help="index range fraction")
    p.add_argument("--counts", action="store_true")
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--shrink", action="store_true")
    p.add_argument("--no-clip", action="store_true", help="keep negative shrinkage values")

    p = sub.add_parser("experiment", parents=[common], help="Monte Carlo experiment with pass/fail rules")
    p.add_argument("kind", choices=harness.KINDS)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--tier", choices=acceptance.TIERS, default="fast")

    p = sub.add_parser("verify", parents=[common], help="run the acceptance checks")
    p.add_argument("--tier", choices=acceptance.TIERS, default="fast")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--tolerance-scale", type=float, default=1.0, help="multiply every tolerance")
    p.add_argument("--only", type=int, action="append", help="run only this criterion number; repeatable")
    return parser


_COMMON = ("subcommand", "config", "out", "overrides", "json", "verbose")


def parse(argv: Sequence[str] | None = None) -> Invocation:
    ns = build_parser().parse_args(list(sys.argv[1:] if argv is None else argv))
    opts = {k: v for k, v in vars(ns).items() if k not in _COMMON}
    return Invocation(
        subcommand=ns.subcommand,
        config=ns.config,
        out=ns.out,
        overrides=tuple(ns.overrides),
        verbosity=ns.verbose,
        json=ns.json,
        options=opts,
    )


# ---------------------------------------------------------------- output


def _emit(obj: Mapping[str, Any], as_json: bool, stream=None) -> None:
    stream = stream or sys.stdout
    if as_json:
        json.dump(_jsonable(obj), stream, indent=2)
        stream.write("\n")
        return
    for key, val in obj.items():
        if isinstance(val, list) and val and isinstance(val[0], Mapping):
            stream.write(f"{key}:\n")
            cols = list(val[0])
            cells = [[_fmt(r.get(c)) for c in cols] for r in val]
            widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
            stream.write("  " + "  ".join(c.ljust(w) for c, w in zip(cols, widths)) + "\n")
            for row in cells:
                stream.write("  " + "  ".join(v.ljust(w) for v, w in zip(row, widths)) + "\n")
        elif isinstance(val, Mapping):
            stream.write(f"{key}:\n")
            for k2, v2 in val.items():
                stream.write(f"  {k2}: {_fmt(v2)}\n")
        else:
            stream.write(f"{key}: {_fmt(val)}\n")


def _fmt(v: Any) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def edge_record(edge: EdgeData) -> dict[str, Any]:
    return {
        "lambda_plus": edge.lambda_plus,
        "m1_at_edge": edge.m1_at_edge,
        "m2_at_edge": edge.m2_at_edge,
        "threshold_a": edge.threshold_a,
        "threshold_b": edge.threshold_b,
        "curvature": edge.curvature,
        "admissible_window": list(edge.admissible_window),
    }


# ---------------------------------------------------------------- subcommands


def _document(inv: Invocation) -> dict[str, Any]:
    doc = config.load(inv.config) if inv.config else {}
    return config.apply_overrides(doc, inv.overrides)


def _model(inv: Invocation) -> tuple[SeparableModel, dict[str, Any]]:
    doc = _document(inv)
    if not inv.config and not inv.overrides:
        raise UsageError(f"{inv.subcommand} needs --config or --set p=... --set n=...")
    return config.model_document(doc), doc


def cmd_law(inv: Invocation) -> int:
    model, _ = _model(inv)
    base = model.base()
    edge = dequiv.find_edge(base)
    record = {"p": model.p, "n": model.n, "aspect": model.aspect, "edge": edge_record(edge)}
    if inv.edge_only:
        _write_json(inv.out, "edge.json", record)
        _emit(record, inv.json)
        return 0
    lo, hi, steps = inv.grid or (0.0, 1.1 * edge.lambda_plus, 200)
    grid = np.linspace(lo, hi, steps)
    curve, sols = dequiv.density(base, grid, inv.eta, return_solutions=True)
    rows = []
    for x, rho, sol in zip(grid, curve.rho, sols):
        m1 = sol.m1 if sol is not None else complex(math.nan, math.nan)
        m2 = sol.m2 if sol is not None else complex(math.nan, math.nan)
        rows.append({"E": x, "rho_c": rho, "re_m1": m1.real, "im_m1": m1.imag, "re_m2": m2.real, "im_m2": m2.imag})
    record["eta"] = inv.eta
    if inv.out:
        _write_json(inv.out, "edge.json", record)
        write_csv(os.path.join(inv.out, "law.csv"), rows, list(rows[0]))
        record["files"] = [os.path.join(inv.out, "edge.json"), os.path.join(inv.out, "law.csv")]
        _emit(record, inv.json)
    elif inv.json:
        _emit({**record, "rows": rows}, True)
    else:
        _emit(record, False)
        write_csv_stream(sys.stdout, rows)
    return 0


def write_csv_stream(stream, rows: list[dict]) -> None:
    w = csv.DictWriter(stream, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _jsonable(v) for k, v in r.items()})


def _write_json(outdir: str | None, name: str, obj: Mapping[str, Any]) -> None:
    if not outdir:
        return
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, name), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(obj), fh, indent=2)
        fh.write("\n")


def prediction_report(model: SeparableModel, phi: float | None = None, labels: Sequence[int] | None = None) -> dict:
    preds = theory.predict_outliers(model, None, phi)
    chosen = sorted(preds.labels.supercritical) if labels is None else list(labels)
    ov = theory.overlap_prediction(model, labels=chosen, predictions=preds)
    sep = theory.separation(model, labels=chosen, predictions=preds)
    return {
        "p": model.p,
        "n": model.n,
        "aspect": model.aspect,
        "phi_n": preds.phi_n,
        "edge": edge_record(preds.edge),
        "outliers": [dataclasses.asdict(e) for e in preds],
        "overlap_labels": chosen,
        "overlaps": [dataclasses.asdict(e) for e in ov.entries],
        "separation": [
            {
                "label": k,
                "delta_S": sep.delta_s[k],
                "non_overlap_margin": sep.margins[k],
                "non_overlap": sep.non_overlap[k],
            }
            for k in sorted(sep.delta_s)
        ],
        "alpha_plus": sep.alpha_plus,
    }


def cmd_predict(inv: Invocation) -> int:
    model, _ = _model(inv)
    report = prediction_report(model, inv.phi, inv.labels)
    _write_json(inv.out, "prediction.json", report)
    _emit(report, inv.json)
    return 0


def _seed(inv: Invocation, doc: Mapping[str, Any]) -> int:
    return int(inv.seed) if inv.seed is not None else config.seed_from(doc)


def cmd_sample(inv: Invocation) -> int:
    model, doc = _model(inv)
    law = EntryLaw(inv.law, float(doc.get("df", 6.0))) if inv.law else config.law_from(doc)
    seed = _seed(inv, doc)
    if inv.reps < 1:
        raise UsageError("--reps must be at least 1")
    eig_rows, ov_rows = [], []
    truncated = 0
    dirs = [("a", s.index, model.direction_a(s.index)) for s in model.spikes_a]
    dirs += [("b", s.index, model.direction_b(s.index)) for s in model.spikes_b]
    k_ov = min(model.p, model.n, model.r + model.s + 5)
    for rep in range(inv.reps):
        d = draw(model, law, seed, rep, with_unspiked=inv.coupled, vectors=inv.overlaps)
        truncated += d.truncated
        top = d.k if inv.top is None else min(inv.top, d.k)
        for i in range(top):
            row = {"rep": rep, "index": i + 1, "lambda": d.eigenvalues[i]}
            if inv.coupled:
                row["lambda_unspiked"] = d.unspiked[i]
            eig_rows.append(row)
        if inv.overlaps:
            for side, idx, v in dirs:
                vecs = d.left_vectors if side == "a" else d.right_vectors
                proj = (v @ vecs[:, :k_ov]) ** 2
                for k in range(k_ov):
                    ov_rows.append({"rep": rep, "side": side, "population_index": idx, "k": k + 1, "overlap": proj[k]})
    summary = {"p": model.p, "n": model.n, "reps": inv.reps, "seed": seed, "law": law.kind,
               "truncated_entries": truncated}
    if inv.out:
        os.makedirs(inv.out, exist_ok=True)
        write_csv(os.path.join(inv.out, "eigenvalues.csv"), eig_rows, list(eig_rows[0]))
        files = [os.path.join(inv.out, "eigenvalues.csv")]
        if ov_rows:
            write_csv(os.path.join(inv.out, "overlaps.csv"), ov_rows, list(ov_rows[0]))
            files.append(os.path.join(inv.out, "overlaps.csv"))
        _emit({**summary, "files": files}, inv.json)
    elif inv.json:
        _emit({**summary, "eigenvalues": eig_rows, "overlaps": ov_rows}, True)
    else:
        write_csv_stream(sys.stdout, eig_rows)
        if ov_rows:
            sys.stdout.write("\n")
            write_csv_stream(sys.stdout, ov_rows)
    return 0


def cmd_estimate(inv: Invocation) -> int:
    model = None
    doc: dict[str, Any] = {}
    if inv.data:
        y = read_matrix(inv.data)
        sample = from_matrix(y)
        source = {"data": inv.data}
    else:
        model, doc = _model(inv)
        seed = _seed(inv, doc)
        sample = draw(model, config.law_from(doc), seed, inv.rep)
        source = {"model": {"p": model.p, "n": model.n, "r": model.r, "s": model.s}, "seed": seed, "rep": inv.rep}
    want_all = not (inv.counts or inv.adaptive or inv.shrink)
    out: dict[str, Any] = {"p": sample.p, "n": sample.n, "source": source}

    if inv.omega is not None and inv.calibrate:
        raise UsageError("--omega and --calibrate are mutually exclusive")
    counts = None
    if inv.counts or want_all or (model is None and (inv.adaptive or inv.shrink)):
        if inv.omega is not None:
            omega = float(inv.omega)
        else:
            n_res, eps = (1000, 0.05) if not inv.calibrate else (int(inv.calibrate[0]), float(inv.calibrate[1]))
            cal = estimators.calibrate_omega(sample.p, sample.n, n_res, eps, inv.c, seed=config.default_seed())
            omega = cal.omega
            out["calibration"] = {"omega": cal.omega, "N": cal.N, "epsilon": cal.epsilon,
                                  "in_consistency_window": cal.in_consistency_window}
        ba = model.ordered_basis_a() if model is not None else None
        bb = model.ordered_basis_b() if model is not None else None
        counts = estimators.estimate_counts(sample, omega, ba, bb, inv.c, vectors=model is not None)
        out["counts"] = {"q": counts.q, "q_a": counts.q_a, "q_b": counts.q_b, "omega": counts.omega,
                         "saturated": counts.saturated, "ratios": counts.ratios}

    if model is not None:
        preds = theory.predict_outliers(model)
        a_pos = sorted(preds.labels.spikes[("a", s.index)] for s in model.spikes_a if s.sigma_tilde > preds.edge.threshold_a)
        total = model.r + model.s
    else:
        a_pos = list(range(1, counts.q + 1))
        total = counts.q

    if inv.adaptive or want_all:
        vals = estimators.adaptive_spikes(sample, a_pos, total) if a_pos else np.array([])
        out["adaptive"] = [{"position": k, "sigma_hat": v} for k, v in zip(a_pos, vals)]

    isotropic = model is None or (model.spec_a.is_identity() and model.spec_b.is_identity())
    if inv.shrink and not isotropic:
        raise UsageError("--shrink needs identity base spectra")
    if (inv.shrink or want_all) and isotropic:
        d_n = sample.p / sample.n
        lam_plus = dequiv.mp_edges(d_n)[1]
        pos = [k for k in a_pos if sample.eigenvalues[k - 1] > lam_plus]
        res = estimators.shrink(sample, pos, d_n=d_n, model=model, clip=not inv.no_clip)
        out["shrinkage"] = [{"position": k, "lambda": sample.eigenvalues[k - 1], "d_hat": dh, "rho_hat": rh,
                             "shrunk_eigenvalue": 1.0 + rh} for k, dh, rh in zip(res.positions, res.d_hat, res.rho_hat)]
    _write_json(inv.out, "estimate.json", out)
    _emit(out, inv.json)
    return 0


def cmd_experiment(inv: Invocation) -> int:
    doc = _document(inv)
    for key in ("reps", "seed", "threads"):
        if inv.options.get(key) is not None:
            doc[key] = inv.options[key]
    cfg = config.experiment_from(doc, inv.kind, inv.tier)
    report = harness.run(cfg)
    outdir = inv.out or os.path.join("results", inv.kind)
    files = report.write(outdir)
    summary = {
        "kind": report.kind,
        "passed": report.passed,
        "reps": cfg.reps,
        "seed": cfg.seed,
        "wall_time": report.wall_time,
        "metrics": [
            {"name": m.name, "mean": m.mean, "q50": m.q50, "q95": m.q95, "observed": m.observed,
             "bound": m.rule.bound if m.rule else None, "passed": m.passed}
            for m in report.metrics
            if inv.verbosity > 0 or m.rule is not None
        ],
        "checks": report.checks,
        "files": files,
    }
    _emit(summary, inv.json)
    return 0 if report.passed else 1


def cmd_verify(inv: Invocation) -> int:
    if inv.config or inv.overrides:
        raise UsageError("verify takes no config; use --seed, --tier or --tolerance-scale")
    settings = acceptance.Settings(
        tier=inv.tier,
        seed=config.default_seed() if inv.seed is None else inv.seed,
        threads=config.default_threads() if inv.threads is None else inv.threads,
        tolerance_scale=inv.tolerance_scale,
    )
    results = []
    for k in sorted(set(inv.only)) if inv.only else sorted(acceptance.CRITERIA):
        res = acceptance.run_criterion(k, settings)
        results.append(res)
        if not inv.json:
            print(res.line(), flush=True)
    failed = [r.name for r in results if not r.passed]
    if inv.json:
        _emit({"tier": settings.tier, "seed": settings.seed, "passed": not failed, "failed": failed,
               "criteria": [r.to_dict() for r in results]}, True)
    else:
        print(f"{len(results) - len(failed)}/{len(results)} criteria passed" +
              (f"; failed: {', '.join(failed)}" if failed else ""))
    _write_json(inv.out, "verify.json", {"tier": settings.tier, "criteria": [r.to_dict() for r in results]})
    return 1 if failed else 0


COMMANDS = {
    "law": cmd_law,
    "predict": cmd_predict,
    "sample": cmd_sample,
    "estimate": cmd_estimate,
    "experiment": cmd_experiment,
    "verify": cmd_verify,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        inv = parse(argv)
        return COMMANDS[inv.subcommand](inv)
    except UsageError as exc:
        print(f"sepspike: usage error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, SepspikeError, ValueError, OSError) as exc:
        print(f"sepspike: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
