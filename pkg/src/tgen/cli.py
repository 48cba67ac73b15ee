"""``tg`` command line: run experiment manifests, materialize synthetic tasks, emit figure data.

Exit codes: 0 success, 2 bad input (manifest, flags, missing files),
3 runtime failure (partial outputs kept, ``FAILED`` marker written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import jsonschema
import numpy as np

from .checkpoints import Trajectory, _atomic_write_bytes, load_trajectory, save_trajectory
from .errors import DegenerateTrajectory, TgenError
from .evaluation import FwtMatrix, avg_fwt, norm_curve, pca_project, worst_fwt
from .extrap import LearnedChangeConfig
from .methods import KINDS, MethodSpec
from .synthetic import (
    MlpSpec,
    SyntheticTask,
    TimestampData,
    TrainConfig,
    evaluate_forecast,
    generate,
    model_kind_of,
    run_continual,
)
from .tuning import SearchSpace, select_alpha

log = logging.getLogger("tgen")

_NUM = {"type": "number"}
_POS_INT = {"type": "integer", "minimum": 1}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}

LEARNER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["ols", "mlp"]},
        "hidden": _POS_INT,
        "init_scale": _NUM,
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "iters": _POS_INT,
        "batch": _POS_INT,
        "init": {"enum": ["from_previous", "from_base"]},
    },
}

SYNTH_TASK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"const": "synthetic"},
        "dim": _POS_INT,
        "t_count": {"type": "integer", "minimum": 2},
        "noise_sigma": {"type": "number", "minimum": 0},
        "n_train": _POS_INT,
        "n_val": _POS_INT,
        "n_test": _POS_INT,
        "drift": {"enum": ["cubic", "linear", "stationary", "rotating"]},
        "coeffs": {
            "type": "object",
            "additionalProperties": False,
            "required": ["a"],
            "properties": {k: _VEC for k in "abcd"},
        },
        "learner": LEARNER_SCHEMA,
    },
}

TRAJ_TASK_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "path"],
    "properties": {
        "kind": {"const": "trajectory"},
        "path": {"type": "string"},
        "data_dir": {"type": "string"},
    },
}

SPACE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "lo", "hi", "count"],
    "properties": {
        "kind": {"enum": ["grid", "random"]},
        "lo": _NUM,
        "hi": _NUM,
        "count": _POS_INT,
        "seed": {"type": "integer"},
    },
}

METHOD_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(KINDS)},
        "name": {"type": "string", "minLength": 1},
        "alpha": _NUM,
        "decay": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "lookback": _POS_INT,
        "learned": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lam": {"type": "number", "minimum": 0},
                "horizon": {"type": "integer", "minimum": 0},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": _POS_INT,
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer"},
                "target": {"enum": ["literal", "shifted"]},
            },
        },
        "tuning": SPACE_SCHEMA,
    },
}

MANIFEST_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["task", "methods", "delta", "seeds", "output_dir"],
    "properties": {
        "task": {"oneOf": [SYNTH_TASK_SCHEMA, TRAJ_TASK_SCHEMA]},
        "methods": {"type": "array", "items": METHOD_SCHEMA, "minItems": 1},
        "delta": _POS_INT,
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "output_dir": {"type": "string", "minLength": 1},
    },
}


class ManifestError(TgenError, ValueError):
    pass


# --- manifest -------------------------------------------------------------------

@dataclass
class ExperimentManifest:
    task: dict
    methods: list[MethodSpec]
    tuning: dict[str, SearchSpace | None]
    delta: int
    seeds: list[int]
    output_dir: Path
    base_dir: Path = field(default_factory=Path)


def _schema_message(err: jsonschema.ValidationError) -> str:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "oneOf" and list(err.absolute_path) == ["task"]:
        kind = err.instance.get("kind") if isinstance(err.instance, dict) else None
        sub = SYNTH_TASK_SCHEMA if kind == "synthetic" else TRAJ_TASK_SCHEMA if kind == "trajectory" else None
        if sub is not None:
            inner = next(iter(jsonschema.Draft202012Validator(sub).iter_errors(err.instance)), None)
            if inner is not None:
                inner_where = "/".join(["task", *map(str, inner.absolute_path)])
                return f"field {inner_where}: {inner.message}"
        return "field task: must be a synthetic task or a trajectory reference (kind 'synthetic' | 'trajectory')"
    return f"field {where}: {err.message}"


def parse_manifest(text: str, base_dir: Path = Path(".")) -> ExperimentManifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(MANIFEST_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        raise ManifestError("; ".join(_schema_message(e) for e in errors))

    methods, tuning = [], {}
    for i, m in enumerate(doc["methods"]):
        learned = LearnedChangeConfig(**m.get("learned", {}))
        try:
            spec = MethodSpec(
                kind=m["kind"],
                alpha=m.get("alpha"),
                decay=m.get("decay", 0.9),
                lookback=m.get("lookback", 1),
                learned=learned,
                name=m.get("name"),
            )
        except ValueError as exc:
            raise ManifestError(f"field methods/{i}: {exc}") from None
        if spec.id in tuning:
            raise ManifestError(f"field methods/{i}/name: duplicate method id {spec.id!r}")
        space = None
        if "tuning" in m:
            if not spec.tunable:
                raise ManifestError(f"field methods/{i}/tuning: method {spec.kind!r} has no tunable alpha")
            try:
                space = SearchSpace(**m["tuning"])
            except ValueError as exc:
                raise ManifestError(f"field methods/{i}/tuning: {exc}") from None
        methods.append(spec)
        tuning[spec.id] = space
    return ExperimentManifest(
        task=doc["task"],
        methods=methods,
        tuning=tuning,
        delta=doc["delta"],
        seeds=list(doc["seeds"]),
        output_dir=base_dir / doc["output_dir"],
        base_dir=base_dir,
    )


def load_manifest(path: str | os.PathLike) -> ExperimentManifest:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest: {exc}") from None
    return parse_manifest(text, base_dir=p.parent)


# --- tasks ----------------------------------------------------------------------

def build_task(cfg: dict, seed: int) -> SyntheticTask:
    common = {
        k: cfg[k] for k in ("noise_sigma", "n_train", "n_val", "n_test", "t_count") if k in cfg
    }
    dim = cfg.get("dim", 2)
    if "coeffs" in cfg:
        c = cfg["coeffs"]
        a = np.asarray(c["a"], dtype=np.float64)
        if any(len(c.get(k, a)) != a.size for k in "bcd"):
            raise ManifestError("field task/coeffs: a, b, c, d must have equal length")
        return SyntheticTask.from_coeffs(a, c.get("b", 0.0), c.get("c", 0.0), c.get("d", 0.0), seed=seed, **common)
    drift = cfg.get("drift", "cubic")
    if drift == "rotating":
        if dim != 2:
            raise ManifestError("field task/dim: rotating drift is two-dimensional")
        return SyntheticTask.rotating(seed=seed, **common)
    mags = {"cubic": (1.0, 0.5, 0.05, 0.005), "linear": (1.0, 0.5, 0.0, 0.0), "stationary": (1.0, 0.0, 0.0, 0.0)}[drift]
    return SyntheticTask.cubic(dim=dim, seed=seed, magnitudes=mags, **common)


def build_learner(cfg: dict | None, seed: int):
    cfg = dict(cfg or {"kind": "ols"})
    if cfg.pop("kind") == "ols":
        return "ols", TrainConfig(seed=seed)
    spec = MlpSpec(hidden=cfg.pop("hidden", 32), init_scale=cfg.pop("init_scale", 0.1), seed=seed)
    return spec, TrainConfig(seed=seed, **cfg)


def write_dataset_csv(data: TimestampData, path: Path) -> None:
    header = [f"x{i}" for i in range(data.x.shape[1])] + ["y"]
    rows = [list(xr) + [yv] for xr, yv in zip(data.x, data.y)]
    write_csv(path, header, rows)


def read_dataset_csv(path: Path, t: int, split: str) -> TimestampData:
    header, rows = read_csv(path)
    arr = np.array([[float(v) for v in r] for r in rows], dtype=np.float64).reshape(len(rows), len(header))
    x, y = arr[:, :-1], arr[:, -1]
    return TimestampData(x=x, y=y, theta_star=np.full(x.shape[1], np.nan), t=t, split=split)


@dataclass
class _Source:
    traj: Trajectory
    data: Callable[[int, str], TimestampData]
    kind: str | MlpSpec


def _prepare(manifest: ExperimentManifest, seed: int) -> _Source:
    cfg = manifest.task
    if cfg["kind"] == "synthetic":
        task = build_task(cfg, seed)
        learner, tcfg = build_learner(cfg.get("learner"), seed)
        traj = run_continual(task, learner, tcfg)
        kind = "linear" if learner == "ols" else learner

        @lru_cache(maxsize=None)
        def data(t, split):
            return generate(task, t, split)

        return _Source(traj, data, kind)

    tpath = manifest.base_dir / cfg["path"]
    traj = load_trajectory(tpath)
    ddir = tpath.parent / cfg.get("data_dir", "data")

    @lru_cache(maxsize=None)
    def data(t, split):
        return read_dataset_csv(ddir / f"t{t:04d}_{split}.csv", t, split)

    return _Source(traj, data, model_kind_of(traj.last))


# --- run ------------------------------------------------------------------------

@dataclass
class RunRecord:
    method: str
    seed: int
    matrix: FwtMatrix
    alphas: dict[int, float]
    wall_time: float


def _start_index(manifest: ExperimentManifest, oracle: bool) -> int:
    start = 0
    for m in manifest.methods:
        need = m.min_history - 1
        if manifest.tuning[m.id] is not None and not oracle:
            need = m.min_history  # candidates are built from checkpoints before the current one
        start = max(start, need)
    return start


def run_seed(manifest: ExperimentManifest, seed: int, oracle: bool = False) -> tuple[list[RunRecord], _Source]:
    src = _prepare(manifest, seed)
    traj, ts = src.traj, src.traj.timestamps
    T = len(traj)
    start = _start_index(manifest, oracle)
    if start > T - 2:
        raise TgenError(f"trajectory of length {T} too short for the configured methods")

    def loss(c, t, split):
        return evaluate_forecast(c, src.data(t, split), src.kind)

    records = []
    for method in manifest.methods:
        t0 = time.perf_counter()
        space = manifest.tuning[method.id]
        cells, alphas = {}, {}
        for i in range(start, T - 1):
            t = ts[i]
            alpha = None
            if space is not None:
                if oracle:
                    # diagnostic only: scores on the next timestamp's validation data
                    hist, val_t = traj[: i + 1], ts[i + 1]
                else:
                    hist, val_t = traj[:i], t
                alpha, _ = select_alpha(hist, method, space, lambda c, vt=val_t: loss(c, vt, "val"))
                alphas[t] = alpha
            est = method.build(traj[: i + 1], alpha)
            for k in range(1, manifest.delta + 1):
                if i + k >= T:
                    break
                cells[(t, ts[i + k])] = loss(est, ts[i + k], "test")
        m = FwtMatrix(cells, "lower_better", delta=manifest.delta * traj.step, t_range=(ts[start], ts[T - 2]))
        records.append(RunRecord(method.id, seed, m, alphas, time.perf_counter() - t0))
        log.info("seed %d method %s: %.3fs", seed, method.id, records[-1].wall_time)
    return records, src


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


def _write_outputs(out: Path, seed_results: list, oracle: bool) -> None:
    extra = ["oracle"] if oracle else []
    flag = [True] if oracle else []
    results, summary, alphas, norms, pca = [], [], [], [], []
    for records, src in seed_results:
        for r in records:
            for (t, j), v in sorted(r.matrix.values.items()):
                results.append([r.method, r.seed, t, j, v] + flag)
            summary.append([r.method, r.seed, avg_fwt(r.matrix), worst_fwt(r.matrix)] + flag)
            for t, a in sorted(r.alphas.items()):
                alphas.append([r.method, r.seed, t, a] + flag)
        seed = records[0].seed
        norms.extend([seed, t, n] for t, n in norm_curve(src.traj))
        if len(src.traj) >= 3:
            try:
                p = pca_project(src.traj)
            except DegenerateTrajectory:
                log.warning("seed %d: trajectory is constant, no PCA rows", seed)
            else:
                pca.extend([seed, t, a, b] for t, (a, b) in zip(p.timestamps, p.points))
    write_csv(out / "results.csv", ["method", "seed", "t", "j", "value"] + extra, results)
    write_csv(out / "summary.csv", ["method", "seed", "avg_fwt", "worst_fwt"] + extra, summary)
    write_csv(out / "alphas.csv", ["method", "seed", "t", "alpha_star"] + extra, alphas)
    write_csv(out / "norms.csv", ["seed", "t", "l2_norm"], norms)
    write_csv(out / "pca.csv", ["seed", "t", "pc1", "pc2"], pca)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TG_THREADS", "1")))
    except ValueError:
        return 1


def cmd_run(manifest_path: str, oracle_future: bool = False) -> int:
    try:
        manifest = load_manifest(manifest_path)
    except ManifestError as exc:
        print(f"tg run: manifest error: {exc}", file=sys.stderr)
        return 2
    out = manifest.output_dir
    out.mkdir(parents=True, exist_ok=True)
    marker = out / "FAILED"
    if marker.exists():
        marker.unlink()

    done: list = []
    try:
        if manifest.task["kind"] == "trajectory" and not (manifest.base_dir / manifest.task["path"]).exists():
            print(f"tg run: manifest error: field task/path: {manifest.task['path']} not found", file=sys.stderr)
            return 2
        threads = min(_threads(), len(manifest.seeds))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futures = [pool.submit(run_seed, manifest, s, oracle_future) for s in manifest.seeds]
                for f in futures:
                    done.append(f.result())
        else:
            for s in manifest.seeds:
                done.append(run_seed(manifest, s, oracle_future))
        _write_outputs(out, done, oracle_future)
    except ManifestError as exc:
        print(f"tg run: manifest error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 3
        if done:
            try:
                _write_outputs(out, done, oracle_future)
            except Exception:  # noqa: BLE001
                pass
        _atomic_write_bytes(marker, "".join(traceback.format_exception(exc)).encode("utf-8"))
        print(f"tg run: failed: {exc}", file=sys.stderr)
        return 3
    if oracle_future:
        print("tg run: --oracle-future scores candidates on future data; not a valid evaluation", file=sys.stderr)
    return 0


# --- synth -----------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    task_cfg = {
        "kind": "synthetic",
        "dim": args.dim,
        "t_count": args.t_count,
        "noise_sigma": args.sigma,
        "n_train": args.n_train,
        "n_val": args.n_val,
        "n_test": args.n_test,
        "drift": args.drift,
    }
    learner_cfg = {"kind": args.learner}
    if args.learner == "mlp":
        learner_cfg.update(hidden=args.hidden, lr=args.lr, iters=args.iters, batch=args.batch, init=args.init)
    task_cfg["learner"] = learner_cfg
    errors = list(jsonschema.Draft202012Validator(SYNTH_TASK_SCHEMA).iter_errors(task_cfg))
    if errors:
        print(f"tg synth: bad flags: {'; '.join(e.message for e in errors)}", file=sys.stderr)
        return 2
    try:
        task = build_task(task_cfg, args.seed)
        learner, tcfg = build_learner(learner_cfg, args.seed)
    except (ValueError, ManifestError) as exc:
        print(f"tg synth: bad flags: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out)
    try:
        traj = run_continual(task, learner, tcfg)
        save_trajectory(traj, out)
        for t in traj.timestamps:
            for split in ("train", "val", "test"):
                write_dataset_csv(generate(task, t, split), out / "data" / f"t{t:04d}_{split}.csv")
        meta = {
            "seed": args.seed,
            "task": task_cfg,
            "coeffs": {k: row.tolist() for k, row in zip("abcd", task.coeffs)},
            "trajectory": "trajectory.json",
            "data_dir": "data",
        }
        _atomic_write_bytes(out / "task.json", (json.dumps(meta, indent=2) + "\n").encode("utf-8"))
    except Exception as exc:  # noqa: BLE001
        print(f"tg synth: failed: {exc}", file=sys.stderr)
        return 3
    return 0


# --- figures ---------------------------------------------------------------------

def cmd_figures(results_dir: str) -> int:
    d = Path(results_dir)
    if not (d / "results.csv").exists():
        print(f"tg figures: {d / 'results.csv'} not found", file=sys.stderr)
        return 2
    header, rows = read_csv(d / "results.csv")
    has_oracle = "oracle" in header
    col = {h: i for i, h in enumerate(header)}

    per_seed: dict = {}
    log_rows = []
    for r in rows:
        key = (r[col["method"]], r[col["oracle"]] if has_oracle else None)
        seed, t, j, v = int(r[col["seed"]]), int(r[col["t"]]), int(r[col["j"]]), float(r[col["value"]])
        per_seed.setdefault(key, {}).setdefault(j - t, {}).setdefault(seed, []).append(v)
        lv = math.log10(v) if v > 0 else float("-inf")
        log_rows.append([key[0], seed, t, j, v, lv] + ([key[1]] if has_oracle else []))

    fwt_rows = []
    for (method, orc), by_k in per_seed.items():
        for k in sorted(by_k):
            means = np.array([np.mean(vals) for _, vals in sorted(by_k[k].items())])
            std = float(np.std(means, ddof=1)) if means.size > 1 else 0.0
            fwt_rows.append([method, k, float(np.mean(means)), std, means.size] + ([orc] if has_oracle else []))
    extra = ["oracle"] if has_oracle else []
    write_csv(d / "fig_fwt_vs_delta.csv", ["method", "k", "mean", "std", "n_seeds"] + extra, fwt_rows)
    write_csv(d / "fig_mse_log.csv", ["method", "seed", "t", "j", "value", "log10_value"] + extra, log_rows)
    for src, dst in (("norms.csv", "fig_norms.csv"), ("pca.csv", "fig_pca.csv")):
        if (d / src).exists():
            h, rs = read_csv(d / src)
            write_csv(d / dst, h, rs)
    return 0


# --- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tg", description="Temporal generalization in parameter space.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment manifest")
    r.add_argument("manifest")
    r.add_argument(
        "--oracle-future",
        action="store_true",
        help="tune on the next timestamp's validation data (diagnostic; outputs tagged oracle=true)",
    )

    s = sub.add_parser("synth", help="write a synthetic trajectory with its datasets")
    s.add_argument("--out", default="synth")
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--t-count", type=int, default=20)
    s.add_argument("--sigma", type=float, default=0.1)
    s.add_argument("--n-train", type=int, default=200)
    s.add_argument("--n-val", type=int, default=200)
    s.add_argument("--n-test", type=int, default=1000)
    s.add_argument("--drift", choices=["cubic", "linear", "stationary", "rotating"], default="cubic")
    s.add_argument("--learner", choices=["ols", "mlp"], default="ols")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--hidden", type=int, default=32)
    s.add_argument("--lr", type=float, default=1e-2)
    s.add_argument("--iters", type=int, default=2000)
    s.add_argument("--batch", type=int, default=64)
    s.add_argument("--init", choices=["from_previous", "from_base"], default="from_previous")

    f = sub.add_parser("figures", help="emit per-figure CSVs from a results directory")
    f.add_argument("results_dir")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "run":
        return cmd_run(args.manifest, oracle_future=args.oracle_future)
    if args.command == "synth":
        return cmd_synth(args)
    return cmd_figures(args.results_dir)


if __name__ == "__main__":
    sys.exit(main())
