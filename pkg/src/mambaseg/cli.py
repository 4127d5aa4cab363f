"""Command-line entry point.

Subcommands: audit, gradcheck, synth, train, infer, eval. Every run echoes
its fully resolved configuration, so an invocation is reproducible from its
log alone. A --config file (plain key=value lines) may set any flag; values
given on the command line win.

Exit codes: 0 success, 1 validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import audit as audit_mod
from . import gradcheck as gradcheck_mod
from .data import (load_samples, load_split, preprocess, save_mask, load_sample,
                   synth_generate)
from .errors import MambasegError
from .net import NetConfig, build, forward, load_checkpoint
from .metrics import write_report
from .tensor import Tensor
from .train import TrainConfig, evaluate, train_loop


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    opts = _resolve_options(args)
    _echo_config(args.command, opts)
    try:
        handler = _HANDLERS[args.command]
        return handler(opts)
    except MambasegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# Option plumbing: defaults < config file < command line
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "audit": {"variants": "1,2,4,8,baseline", "input_size": 256, "out": "",
              "text_out": "", "strict": False, "ledger": False},
    "gradcheck": {"seed": 3, "dtype": "f64", "tolerance": 1e-4},
    "synth": {"n": 8, "size": 64, "seed": 1, "out": "data"},
    "train": {"variant": 2, "data": "data", "steps": 0, "epochs": 200,
              "seed": 1, "batch_size": 8, "lr": 0.001, "weight_decay": 0.01,
              "t_max": 0, "lr_min": 1e-5, "input_size": 0, "no_augment": False,
              "out": "run"},
    "infer": {"checkpoint": "", "data": "", "out": "predictions",
              "threshold": 0.5},
    "eval": {"checkpoint": "", "data": "", "split": "test", "out": ""},
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mambaseg")
    sub = parser.add_subparsers(dest="command")

    def add(name, flags):
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="key=value file; command line overrides")
        for flag, kind in flags:
            if kind is bool:
                p.add_argument(f"--{flag}", action="store_true")
            else:
                p.add_argument(f"--{flag}", type=kind)
        return p

    add("audit", [("variants", str), ("input-size", int), ("out", str),
                  ("text-out", str), ("strict", bool), ("ledger", bool)])
    add("gradcheck", [("seed", int), ("dtype", str), ("tolerance", float)])
    add("synth", [("n", int), ("size", int), ("seed", int), ("out", str)])
    add("train", [("variant", int), ("data", str), ("steps", int),
                  ("epochs", int), ("seed", int), ("batch-size", int),
                  ("lr", float), ("weight-decay", float), ("t-max", int),
                  ("lr-min", float), ("input-size", int), ("no-augment", bool),
                  ("out", str)])
    add("infer", [("checkpoint", str), ("data", str), ("out", str),
                  ("threshold", float)])
    add("eval", [("checkpoint", str), ("data", str), ("split", str),
                 ("out", str)])
    return parser


def _resolve_options(args) -> dict:
    opts = dict(_DEFAULTS[args.command])
    config_path = getattr(args, "config", None)
    if config_path:
        for key, value in _read_config_file(config_path).items():
            key = key.replace("-", "_")
            if key in opts:
                opts[key] = _coerce(value, opts[key])
    for key, value in vars(args).items():
        key = key.replace("-", "_")
        if key in opts:
            opts[key] = value
    return opts


def _read_config_file(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _coerce(value: str, like):
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    return value


def _echo_config(command: str, opts: dict) -> None:
    rendered = " ".join(f"{k}={opts[k]}" for k in sorted(opts))
    print(f"[mambaseg] {command} {rendered}")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_audit(opts) -> int:
    variants = [v.strip() for v in opts["variants"].split(",") if v.strip()]
    rows = audit_mod.compare_report(variants, input_size=opts["input_size"])
    print(audit_mod.render_text(rows), end="")
    if opts["ledger"]:
        for label in variants:
            patch_count = 0 if label == "baseline" else int(label)
            store = build(NetConfig(patch_count=patch_count,
                                    input_size=opts["input_size"]), seed=0)
            print(f"\nper-tensor ledger, variant {label}:")
            for name, shape, count in audit_mod.param_ledger(store):
                print(f"  {name:<32} {'x'.join(map(str, shape)):<14} {count}")
            print(f"  total {audit_mod.count_params(store)}")
    if opts["out"]:
        with open(opts["out"], "w", encoding="utf-8") as fh:
            fh.write(audit_mod.render_csv(rows))
        print(f"wrote {opts['out']}")
    if opts["text_out"]:
        with open(opts["text_out"], "w", encoding="utf-8") as fh:
            fh.write(audit_mod.render_text(rows))
    if opts["strict"] and not all(r.within_tolerance() for r in rows):
        print("audit outside tolerance", file=sys.stderr)
        return 1
    return 0


def _cmd_gradcheck(opts) -> int:
    if opts["dtype"] != "f64":
        print("gradcheck runs in f64 regardless of requested dtype", file=sys.stderr)
    results = gradcheck_mod.run_all(seed=opts["seed"], tol=opts["tolerance"])
    failed = 0
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{status}  {r.name:<22} max rel err {r.max_rel_err:.3e}")
        failed += not r.passed
    print(f"{len(results) - failed}/{len(results)} gradient checks passed")
    return 0 if failed == 0 else 1


def _cmd_synth(opts) -> int:
    split = synth_generate(opts["n"], opts["size"], opts["seed"], opts["out"])
    print(f"generated {opts['n']} samples under {opts['out']} "
          f"(train {len(split.train)}, val {len(split.val)}, test {len(split.test)})")
    return 0


def _cmd_train(opts) -> int:
    split = load_split(opts["data"])
    if not split.train:
        print("no training ids found", file=sys.stderr)
        return 1
    input_size = opts["input_size"]
    if not input_size:
        probe = load_sample(split.root, split.train[0])
        input_size = probe.image.shape[-1]
    net_config = NetConfig(patch_count=opts["variant"], input_size=input_size)
    # t_max 0 = auto: anneal over the requested step budget for desk runs,
    # otherwise the published 50-epoch horizon
    t_max = opts["t_max"] or (opts["steps"] if opts["steps"] else 50)
    train_cfg = TrainConfig(
        lr=opts["lr"], weight_decay=opts["weight_decay"], t_max=t_max,
        lr_min=opts["lr_min"], epochs=opts["epochs"],
        max_steps=opts["steps"] or None, batch_size_train=opts["batch_size"],
        seed=opts["seed"], augment=not opts["no_augment"])
    train_samples = load_samples(split.root, split.train, input_size)
    val_samples = load_samples(split.root, split.val, input_size) if split.val else None
    os.makedirs(opts["out"], exist_ok=True)

    def log(rec):
        print(f"epoch {rec['epoch']:>4}  lr {rec['lr']:.6f}  "
              f"loss {rec['train_loss']:.4f}  val_dsc {rec['val_dsc']:.4f}")

    store, history = train_loop(net_config, train_cfg, train_samples,
                                val_samples, out_dir=opts["out"], log_fn=log)
    final = _train_set_dsc(store, train_samples)
    print(f"final train DSC: {final:.4f}")
    print(f"checkpoints and history written under {opts['out']}")
    return 0


def _train_set_dsc(store, samples) -> float:
    per_image, summary = evaluate(store, samples)
    return summary["dsc"]["mean"]


def _cmd_infer(opts) -> int:
    store = load_checkpoint(opts["checkpoint"])
    split = load_split(opts["data"])
    ids = split.train + split.val + split.test
    os.makedirs(opts["out"], exist_ok=True)
    size = store.config.input_size
    scored = []
    for sample_id in ids:
        raw = load_sample(split.root, sample_id)
        sample = preprocess(raw, size)
        out = forward(store, Tensor(sample.image[None]), training=False)
        probs = 1.0 / (1.0 + np.exp(-out.output_logits.data[0]))
        save_mask(probs, os.path.join(opts["out"], f"{sample_id}.png"),
                  opts["threshold"])
        if sample.mask is not None:
            from .metrics import confusion, metrics_from_counts
            scored.append((sample_id,
                           metrics_from_counts(confusion(probs, sample.mask))))
    print(f"wrote {len(ids)} masks to {opts['out']}")
    if scored:
        from .metrics import summarize
        report_path = os.path.join(opts["out"], "metrics.txt")
        write_report(report_path, scored, summarize(scored))
        print(f"wrote {report_path}")
    return 0


def _cmd_eval(opts) -> int:
    store = load_checkpoint(opts["checkpoint"])
    split = load_split(opts["data"])
    ids = getattr(split, opts["split"])
    if not ids:
        print(f"split {opts['split']!r} is empty", file=sys.stderr)
        return 1
    samples = load_samples(split.root, ids, store.config.input_size)
    per_image, summary = evaluate(store, samples)
    for name in ("dsc", "acc", "se", "sp"):
        s = summary[name]
        print(f"{name}: mean {s['mean']:.4f} std {s['std']:.4f}")
    if opts["out"]:
        write_report(opts["out"], per_image, summary)
        print(f"wrote {opts['out']}")
    return 0


_HANDLERS = {
    "audit": _cmd_audit,
    "gradcheck": _cmd_gradcheck,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
}


if __name__ == "__main__":
    sys.exit(main())
