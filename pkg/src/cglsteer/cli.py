"""Command-line entry point: run, emit-plotdata, validate-config."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .experiments import PRESETS, ConfigError, emit_plotdata, load_config, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cglsteer", description="Controlled Ginzburg-Landau experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_source(p):
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--config", type=Path, help="JSON experiment config")
        g.add_argument("--preset", choices=sorted(PRESETS), help="built-in experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--quiet", action="store_true")

    p_run = sub.add_parser("run", help="run one experiment")
    add_source(p_run)
    p_run.add_argument("--out", type=Path, default=None, help="run directory (default runs/<name>)")

    p_val = sub.add_parser("validate-config", help="parse and check a config without running it")
    add_source(p_val)

    p_plot = sub.add_parser("emit-plotdata", help="write column files for a finished run")
    p_plot.add_argument("run_dir", type=Path)
    p_plot.add_argument("--quiet", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    say = (lambda *a: None) if args.quiet else print

    if args.command == "emit-plotdata":
        try:
            files = emit_plotdata(args.run_dir)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        say(f"wrote {len(files)} plot files to {args.run_dir / 'plotdata'}")
        return EXIT_OK

    try:
        cfg = load_config(args.config, args.preset, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate-config":
        say(f"ok: kind={cfg.kind} seed={cfg.seed}")
        return EXIT_OK

    name = args.preset or (args.config.stem if args.config else cfg.kind)
    out = args.out if args.out is not None else Path("runs") / name
    res = run(cfg, out)
    line = ", ".join(f"{k}={_short(v)}" for k, v in res.summary.items())
    if res.status == EXIT_OK:
        say(f"{cfg.kind}: ok ({line}) -> {res.out_dir}")
    else:
        print(f"{cfg.kind}: FAILED: {res.message} ({line}) -> {res.out_dir}", file=sys.stderr)
    return res.status


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, list):
        return "[" + " ".join(_short(x) for x in v) + "]"
    return str(v)


if __name__ == "__main__":
    sys.exit(main())
