"""``ppno`` command line: gen, train, eval, ablate.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""
from __future__ import annotations

import os

_threads = os.environ.get("PPNO_THREADS")
if _threads and _threads.isdigit():
    # cap BLAS pools before numpy loads
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import container
from .ablation import KINDS, run_sweep, workers_from_env
from .benchmarks import BENCHMARKS, generate_dataset
from .config import load_config
from .errors import NumericalError, ValidationError
from .operators import count_parameters, predict
from .pipeline import load_checkpoint, run_experiment, save_checkpoint
from .training import relative_l2_per_sample

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def _write_json(path, obj) -> None:
    try:
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc}") from exc


def cmd_gen(args) -> None:
    if args.n_train < 0 or args.n_test < 0:
        raise ValidationError("sample counts must be non-negative")
    ds = generate_dataset(args.benchmark, args.n_train, args.n_test, args.grid, args.seed, workers=workers_from_env())
    digest = container.save_dataset(args.out, ds)
    print(f"{ds.benchmark} n_train={ds.n_train} n_test={ds.n_test} grid={ds.grid.shape[0]}x{ds.grid.shape[1]} "
          f"sha256={digest}")


def cmd_train(args) -> None:
    cfg = load_config(args.config)
    ds = container.load_dataset(args.data)
    run = run_experiment(cfg, ds)
    digest = save_checkpoint(args.out, run)
    report = run.report.to_dict()
    report["config"] = cfg.to_dict()
    _write_json(args.report or Path(args.out).with_suffix(".json"), report)
    print(f"{cfg.method} {cfg.model} on {cfg.benchmark}: relative_l2={run.report.relative_l2:.6g} "
          f"checkpoint sha256={digest}")


def cmd_eval(args) -> None:
    ds = container.load_dataset(args.data)
    cfg, psi, phi = load_checkpoint(args.checkpoint, ds.grid)
    if cfg.benchmark != ds.benchmark:
        raise ValidationError(f"checkpoint benchmark {cfg.benchmark!r} does not match data {ds.benchmark!r}")
    pred = predict(psi, ds.f_test, ds.grid)
    per_sample = relative_l2_per_sample(pred, ds.u_test)
    err = float(np.mean(per_sample))
    report = {
        "benchmark": cfg.benchmark, "model": cfg.model, "method": cfg.method, "train_size": cfg.train_size,
        "seed": cfg.seed, "relative_l2": err, "per_sample": [float(e) for e in per_sample],
        "parameter_counts": {"operator": count_parameters(psi),
                             "phi": count_parameters(phi) if phi is not None else 0},
    }
    if args.report:
        _write_json(args.report, report)
    if args.fields:
        out = Path(args.fields)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ValidationError(f"cannot create {out}: {exc}") from exc
        for i, (t, p) in enumerate(zip(ds.u_test, pred)):
            container.write(out / f"sample_{i:04d}.ppno", {"kind": "fields", "index": i},
                            {"truth": t, "prediction": p, "abs_error": np.abs(p - t)})
        with open(out / "per_sample.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "relative_l2"])
            w.writerows([i, repr(float(e))] for i, e in enumerate(per_sample))
    print(f"relative_l2={err:.6g} over {len(per_sample)} test samples")


def cmd_ablate(args) -> None:
    base = load_config(args.config)
    ds = container.load_dataset(args.data)
    rows = run_sweep(args.kind, base, ds, workers=workers_from_env())
    try:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, ["kind", "cell", "phi_relative_l2", "operator_relative_l2"])
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    except OSError as exc:
        raise ValidationError(f"cannot write {args.out}: {exc}") from exc
    for r in rows:
        print(f"{r['cell']}: phi={r['phi_relative_l2']:.4g} operator={r['operator_relative_l2']:.4g}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ppno", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a dataset container")
    g.add_argument("benchmark", choices=BENCHMARKS)
    g.add_argument("--n-train", type=int, required=True)
    g.add_argument("--n-test", type=int, required=True)
    g.add_argument("--grid", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train from an experiment config")
    t.add_argument("config")
    t.add_argument("data")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--report", help="report path (default: checkpoint path with .json suffix)")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    e.add_argument("checkpoint")
    e.add_argument("data")
    e.add_argument("--report")
    e.add_argument("--fields", help="directory for per-sample truth/prediction/error arrays and a CSV")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation sweep")
    a.add_argument("kind", choices=KINDS)
    a.add_argument("config")
    a.add_argument("data")
    a.add_argument("--out", required=True, help="CSV table path")
    a.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
