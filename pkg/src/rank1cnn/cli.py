"""Command line front end: train, eval, verify and hankel subcommands.

Numpy-backed modules are imported lazily so the RANK1_THREADS cap can be
applied to the BLAS thread-count environment variables first.
"""

from __future__ import annotations

import argparse
import os
import sys

CONFIG_KEYS = {
    "mode": str,
    "arch": str,
    "data.train": str,
    "data.test": str,
    "lr": float,
    "batch_size": int,
    "epochs": int,
    "seed": int,
    "out_dir": str,
    "deterministic": None,
    "eval_every": int,
    "momentum": float,
}

REQUIRED_KEYS = ("mode", "arch", "data.train", "data.test", "lr", "batch_size",
                 "epochs", "seed", "out_dir")


class UsageError(Exception):
    """Bad arguments, config or data specification; exits with status 2."""


def _apply_thread_cap():
    cap = os.environ.get("RANK1_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def _parse_bool(value: str) -> bool:
    low = value.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {value!r}")


def parse_config_file(path) -> dict:
    """Read a ``key = value`` config file with ``#`` comments."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}")
    config = {}
    for lineno, line in enumerate(lines, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, _, value = body.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        if key in config:
            raise UsageError(f"{path}:{lineno}: duplicate config key {key!r}")
        if not value:
            raise UsageError(f"{path}:{lineno}: empty value for {key!r}")
        config[key] = value
    missing = [k for k in REQUIRED_KEYS if k not in config]
    if missing:
        raise UsageError(f"config file {path} is missing keys: {', '.join(missing)}")
    parsed = {}
    for key, value in config.items():
        caster = CONFIG_KEYS[key]
        try:
            if caster is None:
                parsed[key] = _parse_bool(value)
            else:
                parsed[key] = caster(value)
        except ValueError:
            raise UsageError(f"config key {key!r}: cannot parse {value!r}")
    return parsed


def _load_data_spec(spec: str):
    """Load a dataset from 'images_path,labels_path' or a 'synth:...' recipe."""
    from .data import IdxFormatError, load_idx, synth_blobs

    if spec.startswith("synth:"):
        params = {"classes": 3, "per_class": 50, "channels": 1, "height": 8,
                  "width": 8, "seed": 0, "noise": 0.08}
        body = spec[len("synth:"):]
        for part in filter(None, (p.strip() for p in body.split(","))):
            key, eq, value = part.partition("=")
            if not eq or key.strip() not in params:
                raise UsageError(f"bad synth dataset parameter {part!r}")
            try:
                caster = float if key.strip() == "noise" else int
                params[key.strip()] = caster(value.strip())
            except ValueError:
                raise UsageError(f"bad synth dataset parameter {part!r}")
        return synth_blobs(
            params["classes"], params["per_class"],
            dims=(params["channels"], params["height"], params["width"]),
            seed=params["seed"], noise=params["noise"],
        )
    if "," in spec:
        images_path, _, labels_path = spec.partition(",")
        try:
            return load_idx(images_path.strip(), labels_path.strip())
        except FileNotFoundError as exc:
            raise UsageError(f"dataset file not found: {exc.filename}")
        except IdxFormatError as exc:
            raise UsageError(f"bad dataset: {exc}")
    raise UsageError(
        f"bad data specification {spec!r}; expected 'images_path,labels_path' or 'synth:...'"
    )


def cmd_train(args) -> int:
    from .data import save_checkpoint
    from .layers import canonical_mode
    from .network import preset
    from .training import TrainConfig, TrainingDiverged, train, write_metrics_csv

    config = parse_config_file(args.config)
    try:
        mode = canonical_mode(config["mode"])
        spec = preset(config["arch"])
    except ValueError as exc:
        raise UsageError(str(exc))
    train_data = _load_data_spec(config["data.train"])
    test_data = _load_data_spec(config["data.test"])
    try:
        train_config = TrainConfig(
            learning_rate=config["lr"],
            batch_size=config["batch_size"],
            epochs=config["epochs"],
            seed=config["seed"],
            mode=mode,
            eval_every=config.get("eval_every", 0),
            deterministic=config.get("deterministic", True),
            momentum=config.get("momentum", 0.0),
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    out_dir = config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    try:
        network, run = train(spec, train_data, train_config, eval_data=test_data)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    metrics_path = os.path.join(out_dir, "metrics.csv")
    checkpoint_path = os.path.join(out_dir, "model.ckpt")
    write_metrics_csv(run, metrics_path)
    save_checkpoint(checkpoint_path, network, seed=train_config.seed)
    for line in network.param_report().lines():
        print(line)
    if run.final_accuracy is not None:
        print(f"final test accuracy: {run.final_accuracy:.4f}")
    print(f"metrics written to {metrics_path}")
    print(f"checkpoint written to {checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    from .data import CheckpointError, load_checkpoint
    from .training import evaluate

    try:
        network, _meta = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise UsageError(f"checkpoint file not found: {args.checkpoint}")
    except CheckpointError as exc:
        print(f"cannot load checkpoint: {exc}", file=sys.stderr)
        return 1
    data = _load_data_spec(args.data)
    accuracy = evaluate(network, data)
    print(f"accuracy: {accuracy:.4f} on {len(data)} examples")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all_checks

    results = run_all_checks()
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed += not r.passed
        print(f"{status}  {r.name:<{width}}  {r.detail}")
    if failed:
        print(f"{failed} of {len(results)} checks failed", file=sys.stderr)
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def cmd_hankel(args) -> int:
    from .hankel import rank_bound_experiment, write_rank_report_csv

    if min(args.channels, args.filters, args.height, args.width, args.trials) < 1:
        raise UsageError("channels, filters, height, width and trials must be positive")
    report = rank_bound_experiment(
        channels=args.channels, filters=args.filters, height=args.height,
        width=args.width, trials=args.trials, seed=args.seed,
    )
    write_rank_report_csv(report, args.out)
    rank1_ok = report.satisfied_fraction("rank1")
    dense_exceed = report.exceeded_fraction("dense")
    print(f"report written to {args.out}")
    print(f"rank-1 banks within bound: {rank1_ok:.1%} of {args.trials} trials")
    print(f"dense banks exceeding bound: {dense_exceed:.1%} of {args.trials} trials")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rank1cnn",
        description="Train and analyze CNNs with rank-1 factorized 3-D filters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a network from a config file")
    p_train.add_argument("-c", "--config", required=True, help="path to a key = value config file")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("checkpoint", help="checkpoint file written by train")
    p_eval.add_argument("data", help="'images_path,labels_path' or 'synth:...'")
    p_eval.set_defaults(func=cmd_eval)

    p_verify = sub.add_parser("verify", help="run the built-in invariant checks")
    p_verify.set_defaults(func=cmd_verify)

    p_hankel = sub.add_parser("hankel", help="run the Hankel rank-bound experiment")
    p_hankel.add_argument("--channels", type=int, default=4)
    p_hankel.add_argument("--filters", type=int, default=8)
    p_hankel.add_argument("--height", type=int, default=6)
    p_hankel.add_argument("--width", type=int, default=6)
    p_hankel.add_argument("--trials", type=int, default=50)
    p_hankel.add_argument("--seed", type=int, default=0)
    p_hankel.add_argument("--out", default="rank_report.csv", help="output CSV path")
    p_hankel.set_defaults(func=cmd_hankel)
    return parser


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
