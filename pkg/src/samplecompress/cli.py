"""Command line: ``samplecompress {bound,train,select}``.

Exit codes: 0 success, 2 usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import bounds
from .bounds import BoundDomainError, BoundInputs
from .data import DataError, filter_digit_pair, load_csv, load_idx, split, synth_classify, synth_regress, target_bounds
from .learners import ForestLearner, LossSpec, MlpLearner, MlpParams, TreeLearner, TreeParams, rms_risk_eval, zero_one_loss
from .p2l import (
    P2LConfig,
    TraceFormatError,
    p2l_classify,
    p2l_regress,
    read_trace_csv,
    select_checkpoint,
    write_trace_csv,
)

REPORT_SCHEMA = "samplecompress.report/v1"
EXIT_USAGE = 2
EXIT_DATA = 3

log = logging.getLogger("samplecompress")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# bound


def certificates_for_flags(args) -> list:
    loss_max = args.loss_max
    if not loss_max > 0:
        raise UsageError("--loss-max must be positive")
    if not 0.0 <= args.loss <= loss_max:
        raise UsageError(f"--loss must lie in [0, --loss-max={loss_max}], got {args.loss}")
    if not 0.0 < args.delta <= 1.0:
        raise UsageError(f"--delta must lie in (0, 1], got {args.delta}")
    if not 0.0 < args.msg_prob <= 1.0:
        raise UsageError(f"--msg-prob must lie in (0, 1], got {args.msg_prob}")
    if args.n < 1 or not 0 <= args.m <= args.n:
        raise UsageError(f"--m must lie in [0, --n] and --n >= 1, got n={args.n}, m={args.m}")
    inputs = BoundInputs(args.n, args.m, args.loss, args.delta, args.msg_prob)
    unit = BoundInputs(args.n, args.m, args.loss / loss_max, args.delta, args.msg_prob)
    kinds = ["kl", "linear", "binom", "binom-tail", "p2l"] if args.kind == "all" else [args.kind]
    strict = args.kind != "all"
    out = []
    for kind in kinds:
        try:
            if kind == "kl":
                out.append(bounds.kl_compression_bound(inputs) if loss_max == 1.0
                           else bounds.rescaled_kl_bound(inputs, loss_max))
            elif kind == "linear":
                if args.m == args.n:
                    raise BoundDomainError("linear bound needs m < n")
                sigma = args.sigma if args.sigma is not None else loss_max / 2.0
                if not sigma > 0:
                    raise UsageError("--sigma must be positive")
                if args.lam is not None:
                    if not args.lam > 0:
                        raise UsageError("--lambda must be positive")
                    out.append(bounds.linear_compression_bound(inputs, args.lam, sigma))
                else:
                    out.append(bounds.linear_compression_bound_grid(inputs, sigma, args.lambda_grid))
            elif kind in ("binom", "binom-tail"):
                if loss_max != 1.0:
                    raise UsageError(f"--kind {kind} needs a zero-one loss (--loss-max 1)")
                fn = bounds.binomial_approx_bound if kind == "binom" else bounds.binomial_tail_bound
                out.append(fn(unit))
            elif kind == "p2l":
                if args.loss != 0.0 or loss_max != 1.0:
                    raise UsageError("--kind p2l needs --loss 0 on a zero-one loss (consistent case)")
                if not args.delta < 1.0:
                    raise UsageError("--kind p2l needs --delta < 1")
                horizon = args.n if args.p2l_horizon == "n" else None
                out.append(bounds.p2l_bound(args.m, args.n, args.delta, horizon=horizon))
        except (UsageError, BoundDomainError) as e:
            if strict:
                raise UsageError(str(e)) from e
    return out


def cmd_bound(args) -> int:
    certs = certificates_for_flags(args)
    print(json.dumps([c.to_dict() for c in certs], indent=2))
    return 0


# ---------------------------------------------------------------------------
# train


def _parse_kv(spec: str) -> dict:
    out = {}
    for part in filter(None, spec.split(",")):
        if "=" not in part:
            raise UsageError(f"--dataset: expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_dataset(spec: str, pair: str | None):
    """Returns (dataset, has_builtin_test, builtin_test)."""
    if spec.startswith("synth-classify:") or spec.startswith("synth-regress:"):
        head, _, rest = spec.partition(":")
        kv = _parse_kv(rest)
        n = int(kv.get("n", 2000 if head == "synth-classify" else 500))
        d = int(kv.get("d", 2 if head == "synth-classify" else 3))
        seed = int(kv.get("seed", 0))
        if head == "synth-classify":
            return synth_classify(n, d, float(kv.get("separation", 5.0)), seed), False, None
        return synth_regress(n, d, float(kv.get("noise", 0.1)), seed), False, None
    if spec.startswith("idx:"):
        paths = spec[4:].split(",")
        if len(paths) not in (2, 4):
            raise UsageError("--dataset idx: needs IMAGES,LABELS[,TEST_IMAGES,TEST_LABELS]")
        d = load_idx(paths[0], paths[1])
        test = load_idx(paths[2], paths[3]) if len(paths) == 4 else None
        if pair:
            a, b = (int(v) for v in pair.split(","))
            d = filter_digit_pair(d, a, b)
            if test is not None:
                test = filter_digit_pair(test, a, b)
        return d, test is not None, test
    return load_csv(spec), False, None


def _make_learner(args, seed):
    if args.learner == "mlp":
        return MlpLearner(MlpParams(
            hidden=tuple(int(w) for w in args.hidden.split(",")),
            dropout_prob=args.dropout,
            learning_rate=args.lr,
            max_epochs=args.epochs,
        ))
    params = TreeParams(
        max_depth=args.max_depth,
        min_samples_split=args.min_samples_split,
        min_samples_leaf=args.min_samples_leaf,
        n_estimators=args.n_estimators,
    )
    return TreeLearner(params) if args.learner == "tree" else ForestLearner(params)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _mean_std(values):
    arr = np.asarray([v for v in values if v is not None], dtype=float)
    if len(arr) == 0:
        return None
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def run_seed(args, dataset, has_test, builtin_test, seed):
    train, val, test = split(dataset, seed, has_test)
    if builtin_test is not None:
        test = builtin_test
    learner = _make_learner(args, seed)
    if args.task == "classify":
        cfg = P2LConfig(
            loss=LossSpec.bounded_xent(), pick_batch=args.batch_R, seed=seed, delta=args.delta,
            max_iterations=args.max_iterations, p2l_horizon=args.p2l_horizon,
        )
        trace = p2l_classify(train, learner, cfg, val)
        test_loss = float(np.mean(zero_one_loss(trace.model.predict_logits(test.X), test.y)))
    else:
        tb = target_bounds(train.y, args.margin)
        cfg = P2LConfig(
            loss=LossSpec.abs_error(tb), patience=args.patience, seed=seed, delta=args.delta,
            max_iterations=args.max_iterations,
        )
        trace = p2l_regress(train, learner, cfg, val)
        test_loss = rms_risk_eval(trace.model.predict(test.X), test.y)
    cp = trace.returned
    result = {
        "seed": seed,
        "status": trace.status,
        "iteration": cp.iteration,
        "m": cp.m,
        "n": trace.n,
        "complement_loss": cp.complement_loss_mean,
        "complement_rms": cp.complement_rms,
        "val_loss": cp.validation_loss,
        "test_loss": test_loss,
        "certificates": [c.to_dict() for c in cp.certificates],
        "omitted": cp.omitted,
        "trace": f"trace_seed{seed}.csv",
    }
    if args.task == "regress":
        result["loss_max"] = cfg.loss.loss_max
    return trace, result


def cmd_train(args) -> int:
    learner_task = "classify" if args.learner == "mlp" else "regress"
    if learner_task != args.task:
        raise UsageError(f"--learner {args.learner} does not support --task {args.task}")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise UsageError("--seeds is empty")
    dataset, has_test, builtin_test = load_dataset(args.dataset, args.pair)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for seed in seeds:
        trace, result = run_seed(args, dataset, has_test, builtin_test, seed)
        write_trace_csv(trace, out / f".trace_seed{seed}.csv.tmp")
        os.replace(out / f".trace_seed{seed}.csv.tmp", out / result["trace"])
        if result["status"] == "unconverged":
            log.warning("seed %d did not converge", seed)
        results.append(result)
    kinds = sorted({c["kind"] for r in results for c in r["certificates"]})
    aggregate = {
        "m": _mean_std(r["m"] for r in results),
        "complement_loss": _mean_std(r["complement_loss"] for r in results),
        "val_loss": _mean_std(r["val_loss"] for r in results),
        "test_loss": _mean_std(r["test_loss"] for r in results),
    }
    for kind in kinds:
        aggregate[kind] = _mean_std(
            c["value"] for r in results for c in r["certificates"] if c["kind"] == kind
        )
    report = {
        "schema": REPORT_SCHEMA,
        "config": {
            "task": args.task, "dataset": args.dataset, "pair": args.pair, "learner": args.learner,
            "seeds": seeds, "delta": args.delta, "batch_R": args.batch_R, "patience": args.patience,
            "margin": args.margin, "max_depth": args.max_depth, "n_estimators": args.n_estimators,
            "min_samples_split": args.min_samples_split, "min_samples_leaf": args.min_samples_leaf,
            "hidden": args.hidden, "dropout": args.dropout, "lr": args.lr, "epochs": args.epochs,
            "p2l_horizon": args.p2l_horizon,
        },
        "per_seed": results,
        "aggregate": aggregate,
        "unconverged_seeds": [r["seed"] for r in results if r["status"] == "unconverged"],
    }
    _atomic_write(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(str(out / "report.json"))
    return 0


# ---------------------------------------------------------------------------
# select


def cmd_select(args) -> int:
    try:
        rows = read_trace_csv(args.trace)
    except OSError as e:
        raise UsageError(f"--trace: {e}") from e
    except TraceFormatError as e:
        raise UsageError(f"--trace: {e}") from e
    try:
        row = select_checkpoint(rows, args.criterion)
    except ValueError as e:
        raise UsageError(f"--criterion {args.criterion}: {e}") from e
    out = {
        "iteration": int(row["iteration"]),
        "m": int(row["m"]),
        "complement_loss": float(row["complement_loss"]),
        "val_loss": float(row["val_loss"]) if row["val_loss"] else None,
        "certificates": {
            k: float(row[k]) for k in ("kl_bound", "binom_bound", "p2l_bound") if row[k]
        },
    }
    print(json.dumps(out, indent=2))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="samplecompress", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bound", help="compute certificates from raw numbers")
    b.add_argument("--kind", choices=["kl", "linear", "binom", "binom-tail", "p2l", "all"], default="all")
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--m", type=int, required=True)
    b.add_argument("--loss", type=float, default=0.0, help="mean complement loss")
    b.add_argument("--delta", type=float, default=0.01)
    b.add_argument("--loss-max", type=float, default=1.0)
    b.add_argument("--sigma", type=float, default=None, help="sub-Gaussian scale (default loss-max/2)")
    lam = b.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lam", type=float, default=None)
    lam.add_argument("--lambda-grid", type=int, default=20, help="grid size when --lambda is not fixed")
    b.add_argument("--msg-prob", type=float, default=1.0)
    b.add_argument("--p2l-horizon", choices=["iterations", "n"], default="iterations")
    b.set_defaults(func=cmd_bound)

    t = sub.add_parser("train", help="run P2L over several seeds")
    t.add_argument("--task", choices=["classify", "regress"], required=True)
    t.add_argument("--dataset", required=True,
                   help="CSV path, idx:IMAGES,LABELS[,TEST_IMAGES,TEST_LABELS], "
                        "synth-classify:n=..,d=..,separation=..,seed=.., or synth-regress:n=..,d=..,noise=..,seed=..")
    t.add_argument("--pair", default=None, help="digit pair for idx datasets, e.g. 0,8")
    t.add_argument("--learner", choices=["tree", "forest", "mlp"], required=True)
    t.add_argument("--seeds", default="1,2,3,4,42")
    t.add_argument("--delta", type=float, default=0.01)
    t.add_argument("--batch-R", dest="batch_R", type=int, default=1)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--margin", type=float, default=0.1, help="target-bound margin fraction p")
    t.add_argument("--max-iterations", type=int, default=None)
    t.add_argument("--max-depth", type=int, default=10)
    t.add_argument("--min-samples-split", type=int, default=2)
    t.add_argument("--min-samples-leaf", type=int, default=1)
    t.add_argument("--n-estimators", type=int, default=50)
    t.add_argument("--hidden", default="32")
    t.add_argument("--dropout", type=float, default=0.0)
    t.add_argument("--lr", type=float, default=1e-2)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--p2l-horizon", choices=["iterations", "n"], default="iterations")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("select", help="pick a checkpoint from a trace CSV")
    s.add_argument("--trace", required=True)
    s.add_argument("--criterion", choices=["min-kl", "final", "min-val"], default="min-kl")
    s.set_defaults(func=cmd_select)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
