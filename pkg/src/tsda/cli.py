"""``tsda`` command-line front end.

Exit codes: 0 success, 1 divergence or failed check, 2 usage or I/O error.
Every output directory gets one ``manifest.json``; training runs live in
directories named after a hash of their resolved configuration.
"""
from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
import time
import warnings
from dataclasses import asdict

from . import analysis
from .model import load_model, save_model
from .neuralcore import DivergenceError
from .pairwise import WEIGHT_SCHEMES
from .synthgen import fingerprint, make_dt14, make_dt40, make_flat, read_benchmark, write_benchmark
from .training import METHODS, TrainConfig, format_config, metrics_csv, parse_config, train

GENERATORS = {"dt14": make_dt14, "dt40": make_dt40, "flat": make_flat}
MANIFEST = "manifest.json"
CHECKPOINT = "checkpoint.json"
VOLATILE_FIELDS = ("started", "duration_s")


class UsageError(Exception):
    """Bad arguments or missing/invalid input files (exit code 2)."""


class CheckFailed(Exception):
    """A verification command found a failing check (exit code 1)."""


# ----------------------------------------------------------------- helpers

def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write(path: str, text: str) -> str:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


def write_manifest(out_dir: str, command: str, config: dict, seed, artifacts: dict,
                   benchmark: str = None, benchmark_fingerprint: str = None,
                   started: float = None) -> str:
    """Record what produced the files in ``out_dir``; artifact paths are relative."""
    started = time.time() if started is None else started
    doc = {
        "command": command,
        "config": config,
        "seed": seed,
        "benchmark": benchmark,
        "benchmark_fingerprint": benchmark_fingerprint,
        "artifacts": {
            name: {"path": os.path.relpath(p, out_dir), "sha256": _sha256_file(p)}
            for name, p in sorted(artifacts.items())
        },
        "started": started,
        "duration_s": time.time() - started,
    }
    return _write(os.path.join(out_dir, MANIFEST), json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_manifest(out_dir: str) -> dict:
    path = os.path.join(out_dir, MANIFEST)
    if not os.path.isfile(path):
        raise UsageError(f"no manifest found: {path}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_benchmark(path: str):
    if not os.path.isdir(path):
        raise UsageError(f"benchmark directory not found: {path}")
    for name in ("benchmark.csv", "taxonomy.json", "distances.csv", "metadata.json"):
        if not os.path.isfile(os.path.join(path, name)):
            raise UsageError(f"benchmark file missing: {os.path.join(path, name)}")
    try:
        return read_benchmark(path)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _bench_fingerprint(path: str) -> str:
    with open(os.path.join(path, "benchmark.csv"), encoding="utf-8") as fh:
        return fingerprint(fh.read())


def resolve_config(args) -> TrainConfig:
    """Defaults, then the ``--config`` file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                values.update(parse_config(fh.read()))
        except OSError:
            raise UsageError(f"config file not found: {args.config}") from None
        except ValueError as exc:
            raise UsageError(f"{args.config}: {exc}") from None
    for key in ("lambda_e", "lambda_d", "lambda_t", "epochs", "batch_size", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    try:
        return TrainConfig(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def config_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def _train_quietly(bench, cfg, method, weights=None):
    """Train, forwarding the lambda warning to stderr."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = train(bench, cfg, method=method, weights=weights)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return res


def _resolve_run(path: str):
    """``path`` is a run directory or a checkpoint file; returns (run_dir, checkpoint)."""
    ckpt = os.path.join(path, CHECKPOINT) if os.path.isdir(path) else path
    if not os.path.isfile(ckpt):
        raise UsageError(f"checkpoint not found: {ckpt}")
    return os.path.dirname(os.path.abspath(ckpt)), ckpt


def _load_run(args):
    run_dir, ckpt = _resolve_run(args.run)
    try:
        model, extra = load_model(ckpt)
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"{ckpt}: {exc}") from None
    bench_path = args.benchmark or extra.get("benchmark")
    if not bench_path:
        raise UsageError("no benchmark recorded in the checkpoint; pass --benchmark")
    bench = _load_benchmark(bench_path)
    if bench.n_domains != model.n_domains:
        raise UsageError(
            f"benchmark has {bench.n_domains} domains, checkpoint expects {model.n_domains}"
        )
    return run_dir, model, extra, bench, bench_path


def _out_dir(args, default: str) -> str:
    out = args.out or default
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    started = time.time()
    bench = GENERATORS[args.kind](args.seed)
    out = _out_dir(args, f"bench-{args.kind}-{args.seed}")
    paths = write_benchmark(bench, out)
    write_manifest(out, f"gen {args.kind}", {"kind": args.kind}, args.seed, paths,
                   benchmark=out, benchmark_fingerprint=_bench_fingerprint(out),
                   started=started)
    print(f"wrote {len(bench.X)} rows, {bench.n_domains} domains to {out}")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    cfg = resolve_config(args)
    if args.method == "dann":
        cfg = cfg.replace(lambda_t=0.0)
    weights = args.weights if args.method == "pairwise-dann" else None
    bench = _load_benchmark(args.benchmark)
    fp = _bench_fingerprint(args.benchmark)
    payload = {"config": asdict(cfg), "method": args.method, "weights": weights,
               "benchmark_fingerprint": fp}
    out = os.path.join(args.out or "runs", f"{args.method}-{config_hash(payload)}")
    os.makedirs(out, exist_ok=True)

    res = _train_quietly(bench, cfg, args.method, weights)
    acc = analysis.evaluate(res.model, bench)
    paths = {
        "checkpoint": os.path.join(out, CHECKPOINT),
        "metrics": _write(os.path.join(out, "metrics.csv"), metrics_csv(res.history, bench.n_domains)),
        "config": _write(os.path.join(out, "config.txt"), format_config(cfg)),
        "evaluation": _write(os.path.join(out, "eval.json"), json.dumps(acc, indent=2) + "\n"),
    }
    save_model(res.model, paths["checkpoint"],
               {"method": args.method, "weights": weights, "config": asdict(cfg),
                "benchmark": os.path.abspath(args.benchmark), "benchmark_fingerprint": fp})
    write_manifest(out, "train", {**asdict(cfg), "method": args.method, "weights": weights},
                   cfg.seed, paths, benchmark=args.benchmark, benchmark_fingerprint=fp,
                   started=started)
    print(f"average target accuracy: {acc['target_avg']:.4f}")
    print(f"run directory: {out}")
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    run_dir, model, extra, bench, bench_path = _load_run(args)
    out = _out_dir(args, os.path.join(run_dir, "eval"))
    acc = analysis.evaluate(model, bench)
    path = _write(os.path.join(out, "eval.json"), json.dumps(acc, indent=2) + "\n")
    write_manifest(out, "eval", {"run": run_dir}, extra.get("config", {}).get("seed"),
                   {"evaluation": path}, bench_path, _bench_fingerprint(bench_path), started)
    print(f"average target accuracy: {acc['target_avg']:.4f}")
    for d, a in enumerate(acc["per_domain"]):
        role = "source" if d in acc["source_domains"] else "target"
        print(f"  domain {d:3d} ({role}): {a:.4f}")
    return 0


def cmd_probe(args) -> int:
    started = time.time()
    run_dir, model, extra, bench, bench_path = _load_run(args)
    out = _out_dir(args, os.path.join(run_dir, "probe"))
    seed = 0 if args.seed is None else args.seed
    try:
        r = analysis.probe_model(model, bench, seed)
    except analysis.InsufficientDataError as exc:
        raise UsageError(str(exc)) from None
    doc = {"accuracy": r.accuracy, "chance": r.chance, "n_test": r.n_test,
           "uniformly_aligned": r.is_uniformly_aligned(), "confusion": r.confusion.tolist()}
    path = _write(os.path.join(out, "probe.json"), json.dumps(doc, indent=2) + "\n")
    write_manifest(out, "probe", {"run": run_dir}, seed, {"probe": path}, bench_path,
                   _bench_fingerprint(bench_path), started)
    print(f"probe accuracy: {r.accuracy:.4f} (chance {r.chance:.4f})")
    return 0


def cmd_export(args) -> int:
    started = time.time()
    run_dir, model, extra, bench, bench_path = _load_run(args)
    out = _out_dir(args, os.path.join(run_dir, "export"))
    try:
        text = analysis.export_encodings(model, bench)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    path = _write(os.path.join(out, "encodings.csv"), text)
    write_manifest(out, "export", {"run": run_dir}, None, {"encodings": path}, bench_path,
                   _bench_fingerprint(bench_path), started)
    print(f"wrote {len(bench.X)} encodings to {path}")
    return 0


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def cmd_sweep(args) -> int:
    started = time.time()
    cfg = resolve_config(args)
    bench = _load_benchmark(args.benchmark)
    fp = _bench_fingerprint(args.benchmark)
    grid = list(itertools.product(args.lambda_d_grid, args.lambda_t_grid))
    if not grid:
        raise UsageError("the lambda grid is empty")
    seeds = args.seeds or [cfg.seed]
    payload = {"config": asdict(cfg), "grid": grid, "seeds": seeds, "benchmark_fingerprint": fp}
    out = os.path.join(args.out or "runs", f"sweep-{config_hash(payload)}")
    os.makedirs(out, exist_ok=True)
    rows = analysis.lambda_sweep(bench, grid, cfg, seeds)
    path = _write(os.path.join(out, "sweep.csv"), analysis.rows_csv(rows))
    write_manifest(out, "sweep", {**asdict(cfg), "grid": grid, "seeds": seeds}, cfg.seed,
                   {"sweep": path}, args.benchmark, fp, started)
    for r in rows:
        print(f"lambda_d={r['lambda_d']:g} lambda_t={r['lambda_t']:g} seed={r['seed']}: "
              f"target {r['target_acc']:.4f} probe {r['probe_acc']:.4f}")
    print(f"run directory: {out}")
    return 0


def cmd_ablate(args) -> int:
    started = time.time()
    cfg = resolve_config(args)
    bench = _load_benchmark(args.benchmark)
    fp = _bench_fingerprint(args.benchmark)
    out = os.path.join(args.out or "runs",
                       f"ablate-{config_hash({'config': asdict(cfg), 'benchmark_fingerprint': fp})}")
    os.makedirs(out, exist_ok=True)
    table = analysis.ablate(bench, cfg)
    rows = [{"variant": k, "target_acc": v} for k, v in table.items()]
    path = _write(os.path.join(out, "ablation.csv"), analysis.rows_csv(rows))
    write_manifest(out, "ablate", asdict(cfg), cfg.seed, {"ablation": path}, args.benchmark,
                   fp, started)
    for r in rows:
        print(f"{r['variant']}: {r['target_acc']:.4f}")
    return 0


def cmd_oracle(args) -> int:
    started = time.time()
    seed = 0 if args.seed is None else args.seed
    reports = analysis.run_oracle_suite(seed)
    out = _out_dir(args, f"oracle-{seed}")
    path = _write(os.path.join(out, "oracle.json"), analysis.reports_json(reports))
    write_manifest(out, "oracle", {}, seed, {"oracle": path}, started=started)
    failed = [r for r in reports if not r.passed]
    groups = {}
    for r in reports:
        key = r.name.split("[")[0]
        groups.setdefault(key, [0, 0])
        groups[key][0] += 1
        groups[key][1] += r.passed
    for key, (n, ok) in groups.items():
        print(f"{'PASS' if ok == n else 'FAIL'} {key}: {ok}/{n}")
    if failed:
        for r in failed:
            print(f"failed: {r.name} computed={r.computed!r} reference={r.reference!r} "
                  f"tolerance={r.tolerance!r}", file=sys.stderr)
        raise CheckFailed(f"{len(failed)} of {len(reports)} oracle checks failed")
    return 0


# ------------------------------------------------------------------ parser

def _add_train_flags(p):
    p.add_argument("--config", help="flat key=value file with TrainConfig fields")
    p.add_argument("--lambda-e", dest="lambda_e", type=float)
    p.add_argument("--lambda-d", dest="lambda_d", type=float)
    p.add_argument("--lambda-t", dest="lambda_t", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tsda", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic benchmark")
    p.add_argument("kind", choices=sorted(GENERATORS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one method on a benchmark directory")
    p.add_argument("benchmark")
    p.add_argument("--method", choices=METHODS, default="tsda")
    p.add_argument("--weights", choices=WEIGHT_SCHEMES, default="inverse-distance")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="root directory for run directories (default: runs)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "per-domain accuracy of a trained run"),
        ("probe", cmd_probe, "alignment probe on a trained run's encodings"),
        ("export", cmd_export, "write a trained run's 2-D encodings as CSV"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("run", help="run directory or checkpoint file")
        p.add_argument("--benchmark", help="benchmark directory (default: the one trained on)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.set_defaults(func=func)

    p = sub.add_parser("sweep", help="grid over (lambda_d, lambda_t)")
    p.add_argument("benchmark")
    p.add_argument("--lambda-d-grid", type=_float_list, default=[0.25, 0.5, 1.0])
    p.add_argument("--lambda-t-grid", type=_float_list, default=[1.0, 2.0, 4.0])
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="full model vs. no discriminator vs. no taxonomist")
    p.add_argument("benchmark")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("oracle", help="run the training-free theory checks")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return 1
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
