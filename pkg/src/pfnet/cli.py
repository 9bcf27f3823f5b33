"""Command-line entry point: ``pfnet <subcommand> [options]``.

Exit codes: 0 success, 1 runtime or training failure, 2 configuration or
usage error, 3 gradient-check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bench import run_bench
from .config import load_config
from .data import synth_corpus, write_corpus
from .errors import ConfigError, DivergenceError, PFNetError
from .experiment import CHECKPOINT, evaluate, frame_sets, load_corpus, load_trained, train_loop
from .gradcheck import gradient_check_suite
from .metrics import export_filter_responses
from .model import build_network

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_GRADCHECK = 0, 1, 2, 3

log = logging.getLogger("pfnet")


def _overrides(args):
    over = {}
    if getattr(args, "front_end", None):
        over["front_end"] = args.front_end
    if getattr(args, "epochs", None) is not None:
        over.setdefault("train", {})["epochs"] = args.epochs
    if getattr(args, "seed", None) is not None:
        over.setdefault("train", {})["seed"] = args.seed
    if getattr(args, "out", None):
        over["output_dir"] = args.out
    return over


def _config(args):
    return load_config(args.config, _overrides(args))


def cmd_gen_data(args):
    over = {}
    if args.seed is not None:
        over["data"] = {"synth": {"seed": args.seed}}
    cfg = load_config(args.config, over)
    if cfg.synth is None:
        raise ConfigError("gen-data needs a config whose data section is 'synth'")
    out = Path(args.out or cfg.output_dir)
    manifest = write_corpus(synth_corpus(cfg.synth), out, seed=cfg.synth.seed, inline=args.inline)
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    rec = train_loop(cfg, resume=args.resume)
    for rep in rec.reports:
        print(rep.to_json(include_time=True))
    thr = cfg.train.accuracy_threshold
    reached = "not reached" if rec.epochs_to_threshold is None else f"epoch {rec.epochs_to_threshold}"
    print(f"{thr:g}% test frame accuracy: {reached}; wall time {rec.wall_time_s:.1f} s")
    print(f"checkpoint: {rec.checkpoint_path}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _config(args)
    ckpt = args.checkpoint or Path(cfg.output_dir) / CHECKPOINT
    corpus = load_corpus(cfg)
    _, test = frame_sets(cfg, corpus)
    net, meta = load_trained(cfg, ckpt, test.frames.shape[2])
    ev = evaluate(net, test, corpus.trials, cfg.train.vote)
    result = {"checkpoint": str(ckpt), "epoch": meta.get("epoch"), "loss": ev.loss, "fer_percent": ev.fer,
              "cer_percent": ev.cer, "eer_percent": ev.eer}
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args):
    report = gradient_check_suite(seed=args.seed or 0, corrupt=args.corrupt)
    for line in report.lines():
        print(line)
    worst = report.worst
    print(f"worst group: {worst.name} ({worst.rel_error:.3e} vs {worst.threshold:.0e}); "
          f"{'PASS' if report.passed else 'FAIL'}")
    return report.exit_code


def cmd_export_filters(args):
    cfg = _config(args)
    if args.checkpoint:
        net, _ = load_trained(cfg, args.checkpoint)
    else:
        frame_len = int(round(cfg.frames.window_ms * 1e-3 * cfg.filter.sample_rate))
        net = build_network(cfg.front_end, cfg.filter, cfg.head, frame_len, cfg.train.seed)
    out = Path(args.out or cfg.output_dir)
    paths = export_filter_responses(net.front_end.kernels(), args.grid_size, out, prefix=cfg.front_end)
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_bench(args):
    res = run_bench(repeats=args.repeats, dtype=args.dtype, batch=args.batch)
    for line in res.lines():
        print(line)
    if args.out:
        Path(args.out).write_text(json.dumps(res.to_dict(), indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="pfnet", description="Learnable piecewise-linear filter banks on raw audio.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, front_end=True, seed_help="override train.seed"):
        sp.add_argument("--config", help="JSON config file (sections override the profile)")
        sp.add_argument("--seed", type=int, help=seed_help)
        sp.add_argument("--out", help="output directory")
        if front_end:
            sp.add_argument("--front-end", choices=["pfnet", "sincnet", "raw_fir"])
            sp.add_argument("--epochs", type=int)

    sp = sub.add_parser("gen-data", help="write a synthetic corpus (manifest, trials, WAVs)")
    common(sp, front_end=False, seed_help="override data.synth.seed")
    sp.add_argument("--inline", action="store_true", help="embed base64 PCM in the manifest instead of WAVs")
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train one front end and log per-epoch metrics")
    common(sp)
    sp.add_argument("--resume", help="continue from this checkpoint")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(sp)
    sp.add_argument("--checkpoint", help="defaults to <out>/checkpoint.ckpt")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--corrupt", action="store_true", help="negate analytic gradients (harness self-test)")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("export-filters", help="write time and frequency responses as CSV")
    common(sp)
    sp.add_argument("--checkpoint", help="trained weights; omit to export the initialization")
    sp.add_argument("--grid-size", type=int, default=512)
    sp.set_defaults(func=cmd_export_filters)

    sp = sub.add_parser("bench", help="symmetric vs naive filter-bank throughput")
    sp.add_argument("--repeats", type=int, default=15)
    sp.add_argument("--batch", type=int, default=32)
    sp.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    sp.add_argument("--out", help="also write the result as JSON")
    sp.set_defaults(func=cmd_bench)
    return p


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse: 0 for --help, 2 for usage errors
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as e:
        print(f"training diverged at batch {e.batch_index}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (PFNetError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
