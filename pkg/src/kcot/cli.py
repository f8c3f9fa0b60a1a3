"""``kcot`` command line: solve, bench, synth, score, metrics.

Settings resolve as built-in defaults < ``--config`` JSON file (flat keys,
e.g. ``{"lambda1": 0.1, "strategy": "ot"}``) < command-line flags.
Exit status is 0 on success, 1 on bad input, 2 when a solve stops at the
iteration cap without converging.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io as kio
from .cost import build_cost
from .matchers import STRATEGIES, final_score, match
from .metrics import average_precision, mean_average_precision, precision_recall_f1_at_k
from .solvers import sinkhorn, solve_kcot
from .synth import SceneSpec, generate_scene, planted_recovery_rate, read_scene, write_scene
from .types import FeatureSet, LabelSet, SolverConfig, cosine_similarity_matrix, uniform_marginal

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2

_SOLVER_KEYS = {f.name for f in fields(SolverConfig)}
_FLAG_KEYS = {
    "lambda1": "lambda1", "lambda2": "lambda2", "tau": "tau", "max_iter": "max_iter",
    "tol": "tol", "seed": "seed", "strategy": "strategy", "out": "out", "format": "format",
}
_DEFAULTS = {"strategy": "kcot", "out": ".", "format": "csv"}


class InputError(ValueError):
    pass


def resolve_settings(args) -> dict:
    settings = dict(_DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise InputError("config file must hold a flat JSON object")
        settings.update(loaded)
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is not None:
            settings[key] = value
    if settings["strategy"] not in STRATEGIES:
        raise InputError(f"unknown strategy {settings['strategy']!r}")
    if settings["format"] not in ("csv", "json"):
        raise InputError("--format must be csv or json")
    return settings


def solver_config(settings) -> SolverConfig:
    try:
        return SolverConfig(**{k: v for k, v in settings.items() if k in _SOLVER_KEYS})
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from None


def _read(path) -> np.ndarray:
    try:
        return kio.read_matrix(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _vector(path, n) -> np.ndarray:
    v = _read(path).ravel()
    if v.size != n:
        raise InputError(f"{path}: expected {n} entries, got {v.size}")
    return v


def _json_float(x):
    x = float(x)
    return x if np.isfinite(x) else None


def _write_report(out: Path, report_dict: dict, plan) -> None:
    kio.atomic_write_text(out / "plan.csv", kio.plan_to_csv(plan))
    kio.atomic_write_text(out / "report.json", kio.dumps_json(report_dict))


# --- solve -------------------------------------------------------------------

def cmd_solve(args) -> int:
    settings = resolve_settings(args)
    cfg = solver_config(settings)
    out = Path(settings["out"])
    sources = [args.cost is not None, args.scene is not None, args.visual is not None]
    if sum(sources) != 1:
        raise InputError("give exactly one input: --cost, --scene or --visual/--labels")

    if args.cost is not None:
        C = _read(args.cost)
        M, N = C.shape
        u = _vector(args.u, M) if args.u else uniform_marginal(M)
        v = _vector(args.v, N) if args.v else uniform_marginal(N)
        report = sinkhorn(C, u, v, cfg.lambda1, cfg.max_iter, cfg.tol, cfg.log_domain)
        _write_report(out, _report_dict(report), report.plan)
        return EXIT_OK if report.converged else EXIT_NOT_CONVERGED

    if args.scene is not None:
        scene = read_scene(args.scene)
        feats = (scene.visual, scene.labels, scene.frozen_visual, scene.frozen_labels, scene.y)
    else:
        if args.labels is None:
            raise InputError("--visual needs --labels")
        y = _read(args.y).ravel() if args.y else None
        fv = FeatureSet(_read(args.frozen_visual)) if args.frozen_visual else None
        fl = LabelSet(_read(args.frozen_labels)) if args.frozen_labels else None
        feats = (FeatureSet(_read(args.visual)), LabelSet(_read(args.labels)), fv, fl, y)

    strategy = settings["strategy"]
    mode = args.mode
    if strategy == "kcot" and mode == "train" and feats[4] is None:
        raise InputError("kcot train mode needs labels y (--y or a scene)")
    if strategy in ("kcot", "ot"):
        if strategy == "kcot":
            report = solve_kcot(*feats, cfg=cfg, mode=mode)
        else:
            C = build_cost(feats[0], feats[1], cfg.tau)
            M, N = C.shape
            report = sinkhorn(C, uniform_marginal(M), uniform_marginal(N), cfg.lambda1,
                              cfg.max_iter, cfg.tol, cfg.log_domain)
        _write_report(out, _report_dict(report), report.plan)
        return EXIT_OK if report.converged else EXIT_NOT_CONVERGED

    _, plan = match(strategy, *feats[:2], cfg=cfg)
    C = build_cost(feats[0], feats[1], cfg.tau)
    p = plan.entries
    report_dict = {
        "iterations": 0,
        "residual": _json_float(np.abs(p.sum(axis=0) - 1.0 / p.shape[1]).max()),
        "converged": True,
        "objective": _json_float((p * C).sum()),
    }
    _write_report(out, report_dict, plan)
    return EXIT_OK


def _report_dict(report) -> dict:
    d = report.to_json()
    d["residual"] = _json_float(d["residual"])
    d["objective"] = _json_float(d["objective"])
    return d


# --- synth -------------------------------------------------------------------

def _scene_spec(args, settings, seed=None, noise=None, corr=None) -> SceneSpec:
    try:
        return SceneSpec(M=args.M, N=args.N, n_positive=args.n_positive, d=args.d,
                         noise_sigma=args.noise[0] if noise is None else noise,
                         distractor_correlation=args.correlation[0] if corr is None else corr,
                         seed=int(settings.get("seed", 0)) if seed is None else seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def cmd_synth(args) -> int:
    settings = resolve_settings(args)
    spec = _scene_spec(args, settings)
    write_scene(generate_scene(spec), settings["out"], fmt=args.matrix_format)
    return EXIT_OK


# --- bench -------------------------------------------------------------------

BENCH_FIELDS = ["strategy", "seed", "noise", "correlation", "recovery",
                "p_at_3", "r_at_3", "f1_at_3", "ap", "map"]


def _bench_one(job):
    strategy, spec, cfg, kcot_mode = job
    scene = generate_scene(spec)
    t0 = time.perf_counter()
    scores, plan = match(strategy, scene.visual, scene.labels, cfg, scene.frozen_visual,
                         scene.frozen_labels, scene.y, kcot_mode=kcot_mode)
    elapsed = time.perf_counter() - t0
    k = min(3, spec.N)
    p, r, f1 = precision_recall_f1_at_k(scores[None], scene.y[None], k)
    row = {
        "strategy": strategy, "seed": spec.seed, "noise": spec.noise_sigma,
        "correlation": spec.distractor_correlation,
        "recovery": planted_recovery_rate(plan, scene),
        "p_at_3": p, "r_at_3": r, "f1_at_3": f1,
        "ap": average_precision(scores, scene.y), "map": None,
    }
    return row, scores, scene.y, elapsed


def run_bench(strategies, seeds, noises, correlations, spec_kwargs, cfg, kcot_mode="inference",
              workers=None):
    """Evaluate every (strategy, noise, correlation, seed) cell.

    Returns ``(rows, summary, timings)``. ``rows`` and ``summary`` depend only
    on the inputs; ``timings`` maps row keys to wall-clock seconds.
    """
    jobs = []
    for strategy in strategies:
        for noise in noises:
            for corr in correlations:
                for seed in seeds:
                    spec = SceneSpec(noise_sigma=noise, distractor_correlation=corr, seed=seed,
                                     **spec_kwargs)
                    jobs.append((strategy, spec, cfg, kcot_mode))
    workers = workers or int(os.environ.get("KCOT_THREADS", "1") or 1)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bench_one, jobs))
    else:
        results = [_bench_one(j) for j in jobs]
    order = {s: i for i, s in enumerate(STRATEGIES)}
    results.sort(key=lambda r: (order[r[0]["strategy"]], r[0]["noise"], r[0]["correlation"],
                                r[0]["seed"]))
    rows = [r[0] for r in results]
    timings = {(r[0]["strategy"], r[0]["noise"], r[0]["correlation"], r[0]["seed"]): r[3]
               for r in results}

    summary = []
    groups = {}
    for row, scores, y, _ in results:
        key = (row["strategy"], row["noise"], row["correlation"])
        groups.setdefault(key, []).append((row, scores, y))
    for key, members in groups.items():
        strategy, noise, corr = key
        mean = {f: float(np.mean([m[0][f] for m in members]))
                for f in ("recovery", "p_at_3", "r_at_3", "f1_at_3", "ap")}
        S = np.array([m[1] for m in members])
        Y = np.array([m[2] for m in members])
        summary.append({"strategy": strategy, "seed": "mean", "noise": noise, "correlation": corr,
                        **mean, "map": mean_average_precision(S, Y)})
    return rows, summary, timings


def _bench_csv(rows, summary, timings=None) -> str:
    buf = io.StringIO()
    names = BENCH_FIELDS + (["wall_clock"] if timings is not None else [])
    writer = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
    writer.writeheader()
    for row in rows + summary:
        out = {k: ("" if v is None else (repr(float(v)) if isinstance(v, float) else v))
               for k, v in row.items()}
        if timings is not None:
            key = (row["strategy"], row["noise"], row["correlation"], row["seed"])
            if key in timings:
                out["wall_clock"] = repr(timings[key])
            else:
                out["wall_clock"] = repr(float(np.mean(
                    [t for k, t in timings.items() if k[:3] == key[:3]])))
        writer.writerow(out)
    return buf.getvalue()


def cmd_bench(args) -> int:
    settings = resolve_settings(args)
    cfg = solver_config(settings)
    if args.seeds < 1:
        raise InputError("--seeds must be >= 1")
    start = int(settings.get("seed", 0))
    seeds = list(range(start, start + args.seeds))
    strategies = args.strategies.split(",") if args.strategies else list(STRATEGIES)
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise InputError(f"unknown strategies: {', '.join(bad)}")
    for n in args.noise:
        _scene_spec(args, settings, seed=0, noise=n)
    for c in args.correlation:
        _scene_spec(args, settings, seed=0, corr=c)
    spec_kwargs = dict(M=args.M, N=args.N, n_positive=args.n_positive, d=args.d)
    rows, summary, timings = run_bench(strategies, seeds, args.noise, args.correlation,
                                       spec_kwargs, cfg, args.kcot_mode)
    out = Path(settings["out"])
    if settings["format"] == "json":
        kio.atomic_write_text(out / "bench.json", kio.dumps_json({"rows": rows, "summary": summary}))
    else:
        kio.atomic_write_text(out / "bench.csv",
                              _bench_csv(rows, summary, timings if args.timing else None))
    return EXIT_OK


# --- score / metrics ---------------------------------------------------------

def cmd_score(args) -> int:
    settings = resolve_settings(args)
    cfg = solver_config(settings)
    if args.scene is not None:
        scene = read_scene(args.scene)
        feats = (scene.visual, scene.labels, scene.frozen_visual, scene.frozen_labels, scene.y)
    else:
        if args.visual is None or args.labels is None:
            raise InputError("give --scene or both --visual and --labels")
        feats = (FeatureSet(_read(args.visual)), LabelSet(_read(args.labels)), None, None, None)
    mode = args.mode
    if settings["strategy"] == "kcot" and mode == "train" and feats[4] is None:
        raise InputError("kcot train mode needs a scene with labels")
    scores, _ = match(settings["strategy"], *feats[:2], cfg=cfg, frozen_visual=feats[2],
                      frozen_labels=feats[3], y=feats[4], kcot_mode=mode)
    if args.global_feature:
        s_global = cosine_similarity_matrix(_read(args.global_feature), feats[1])[0]
        scores = final_score(scores, s_global)
    out = Path(settings["out"])
    if settings["format"] == "json":
        kio.atomic_write_text(out / "scores.json",
                              kio.dumps_json({"strategy": settings["strategy"],
                                              "scores": [float(s) for s in scores]}))
    else:
        kio.atomic_write_text(out / "scores.csv", kio.matrix_to_csv(scores[None]))
    return EXIT_OK


def cmd_metrics(args) -> int:
    settings = resolve_settings(args)
    S = _read(args.scores)
    Y = _read(args.targets)
    if S.shape != Y.shape:
        raise InputError(f"scores {S.shape} and targets {Y.shape} differ in shape")
    p, r, f1 = precision_recall_f1_at_k(S, Y, args.k)
    result = {"k": args.k, "precision": p, "recall": r, "f1": f1,
              "map": mean_average_precision(S, Y)}
    out = Path(settings["out"])
    if settings["format"] == "json":
        kio.atomic_write_text(out / "metrics.json", kio.dumps_json(result))
    else:
        keys = ["k", "precision", "recall", "f1", "map"]
        line = ",".join(repr(result[k]) if isinstance(result[k], float) else str(result[k])
                        for k in keys)
        kio.atomic_write_text(out / "metrics.csv", ",".join(keys) + "\n" + line + "\n")
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


def _common(p):
    p.add_argument("--config", help="JSON file with flat setting keys")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("csv", "json"))


def _scene_args(p):
    p.add_argument("--M", type=int, default=16)
    p.add_argument("--N", type=int, default=8)
    p.add_argument("--n-positive", dest="n_positive", type=int, default=3)
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--noise", type=_floats, default=[0.3], help="comma-separated noise levels")
    p.add_argument("--correlation", type=_floats, default=[0.5],
                   help="comma-separated distractor correlations")


def _feature_args(p):
    p.add_argument("--scene", help="scene directory written by 'kcot synth'")
    p.add_argument("--visual")
    p.add_argument("--labels")
    p.add_argument("--mode", choices=("train", "inference"), default="inference")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kcot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one transport problem, write plan.csv + report.json")
    _common(p)
    _feature_args(p)
    p.add_argument("--cost", help="cost matrix file (entropic OT at lambda1)")
    p.add_argument("--u", help="source marginal file (default uniform)")
    p.add_argument("--v", help="target marginal file (default uniform)")
    p.add_argument("--frozen-visual", dest="frozen_visual")
    p.add_argument("--frozen-labels", dest="frozen_labels")
    p.add_argument("--y", help="binary label vector file (train mode)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="compare strategies on planted scenes")
    _common(p)
    _scene_args(p)
    p.add_argument("--seeds", type=int, default=10, help="number of consecutive seeds from --seed")
    p.add_argument("--strategies", help="comma-separated subset of strategies")
    p.add_argument("--kcot-mode", dest="kcot_mode", choices=("train", "inference"),
                   default="inference")
    p.add_argument("--timing", action="store_true", help="add a wall_clock column (not reproducible)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="generate a planted scene")
    _common(p)
    _scene_args(p)
    p.add_argument("--matrix-format", dest="matrix_format", choices=("bin", "csv"), default="bin")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score", help="per-label scores for one image")
    _common(p)
    _feature_args(p)
    p.add_argument("--global-feature", dest="global_feature",
                   help="1 x d global feature; output becomes the normalized average with it")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("metrics", help="P/R/F1@k and mAP for a score matrix")
    _common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--targets", required=True, help="binary B x N label matrix")
    p.add_argument("--k", type=int, default=3)
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"kcot {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
