"""Command line: ``cpnsim run|sweep|report|validate``.

Exit codes: 0 ok, 1 configuration or usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import OUT_ENV, ConfigError, RunConfig, default_config, load_config
from .core import QosGoal, ScenarioError
from .experiment import (REFERENCE_RATES, SweepAborted, default_out_dir, parse_rates,
                         run_single, run_sweep)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("cpnsim")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, with_run: bool = True) -> None:
    p.add_argument("--config", help="run configuration file (TOML); built-in default if omitted")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./cpnsim-out)")
    if with_run:
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--duration", type=float, help="override [run] duration_s (seconds)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpnsim", description="CPN routing simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate one scenario and write its artifacts")
    _common(p)
    p.add_argument("--no-events", action="store_true", help="skip the per-packet event log")

    p = sub.add_parser("sweep", help="background-rate sweep over all goal pairs")
    _common(p)
    p.add_argument("--rates", help="comma-separated background rates, e.g. 1M,10M,30M")
    p.add_argument("--seeds", type=int, default=1, help="seeds per point, counting up from --seed")
    p.add_argument("--pairs", help="voice/background goal pairs, e.g. Jitter/Jitter,Delay/Delay")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--events", action="store_true", help="also write per-run event logs")

    p = sub.add_parser("report", help="plots and correlation table from artifacts")
    p.add_argument("inputs", nargs="*", help="run or sweep directories (default: --out)")
    p.add_argument("--out", help="where to write the report (default: first input)")

    p = sub.add_parser("validate", help="check a configuration without running it")
    p.add_argument("--config")
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "duration", None) is not None:
        if not args.duration > 0:
            raise ConfigError(f"--duration must be positive, got {args.duration}")
        cfg.duration_s = args.duration
    cfg.scenario()
    return cfg


def _pairs(text: str | None):
    if not text:
        return None
    out = []
    for item in text.split(","):
        try:
            vg, bg = item.split("/")
            out.append((QosGoal.parse(vg.strip()), QosGoal.parse(bg.strip())))
        except ValueError:
            raise ConfigError(f"bad goal pair {item!r}; expected e.g. Jitter/Delay") from None
    return out


def _out(args, cfg: RunConfig) -> Path:
    return Path(args.out) if args.out else default_out_dir(cfg)


def cmd_run(args) -> int:
    cfg = _load(args)
    out = _out(args, cfg)
    art = run_single(cfg, out, write_events=not args.no_events)
    m = art.summary["flows"][art.summary["measured_flow"]]
    print(f"wrote {out}: {art.result.events_processed} events; "
          f"{art.summary['measured_flow']}: delay {m['mean_delay_s'] * 1e3:.3f} ms, "
          f"jitter {m['mean_jitter_s'] * 1e3:.3f} ms, e2e loss {m['e2e_loss_ratio']:.4%}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    try:
        rates = parse_rates(args.rates) if args.rates else REFERENCE_RATES
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if args.seeds < 1 or args.jobs < 1:
        raise ConfigError("--seeds and --jobs must be at least 1")
    pairs = _pairs(args.pairs)
    out = _out(args, cfg)
    seeds = range(cfg.seed, cfg.seed + args.seeds)
    try:
        rows = run_sweep(cfg, rates, out, seeds, pairs, args.jobs, args.events,
                         progress=lambda r: print(",".join(map(str, r)), flush=True))
    except SweepAborted as e:
        print(f"error: {e}; partial summary kept in {out / 'summary.csv'}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {out / 'summary.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import EmptyArtifacts, report

    inputs = args.inputs or ([args.out] if args.out else [str(default_out_dir())])
    out = args.out or inputs[0]
    try:
        written, table = report(inputs, out)
    except EmptyArtifacts as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if table:
        print(table, end="")
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args)
    sc = cfg.scenario()
    print(f"ok: {len(sc.topology.nodes)} nodes, {len(sc.topology.links)} links, "
          f"{len(sc.flows)} flows, duration {cfg.duration_s:g} s, seed {cfg.seed}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "report": cmd_report, "validate": cmd_validate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except (ConfigError, ScenarioError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any simulation failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
