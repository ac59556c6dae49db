"""Single runs and background-rate sweeps, with their on-disk artifacts."""

from __future__ import annotations

import csv
import json
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path

from .config import OUT_ENV, RunConfig
from .core import QosGoal
from .metrics import write_metrics_csv
from .rnn import dump_row, write_dump
from .simnet import SimResult, simulate

EVENTS_FILE = "events.csv"
METRICS_FILE = "metrics.csv"
PLAYOUT_FILE = "playout.csv"
RNN_FILE = "rnn_dump.csv"
SUMMARY_JSON = "summary.json"
SWEEP_FILE = "summary.csv"

PLAYOUT_HEADER = ["flow", "inserted", "played", "discards_late", "discards_overflow",
                  "duplicates", "held", "max_queue", "mean_queue", "mean_playout_delay_s"]
SWEEP_HEADER = ["rate_bps", "voice_goal", "background_goal", "seed", "mean_delay_s",
                "mean_jitter_s", "e2e_loss_ratio", "switch_rate"]

REFERENCE_RATES = [1e6, 2e6, 3.2e6, 6.4e6, 10e6, 15e6, 20e6, 25e6, 30e6]
GOAL_PAIRS = list(product((QosGoal.DELAY, QosGoal.JITTER), repeat=2))


class SweepAborted(RuntimeError):
    def __init__(self, msg: str, rows: list):
        super().__init__(msg)
        self.rows = rows


def default_out_dir(cfg: RunConfig | None = None) -> Path:
    if cfg is not None and cfg.out_dir:
        return Path(cfg.out_dir)
    return Path(os.environ.get(OUT_ENV, "cpnsim-out"))


def parse_rate(text: str) -> float:
    """``"3.2M"``, ``"500k"``, ``"1e6"`` -> bits per second."""
    m = re.fullmatch(r"\s*([0-9.eE+-]+)\s*([kKmMgG]?)\s*(?:bps)?\s*", text)
    if not m:
        raise ValueError(f"cannot parse rate {text!r}")
    value = float(m.group(1)) * {"": 1, "k": 1e3, "m": 1e6, "g": 1e9}[m.group(2).lower()]
    if not value > 0:
        raise ValueError(f"rate must be positive, got {text!r}")
    return value


def parse_rates(text: str) -> list[float]:
    return [parse_rate(t) for t in text.split(",") if t.strip()]


def _f(v: float) -> str:
    return f"{v:.9f}"


@dataclass
class RunArtifacts:
    out_dir: Path
    result: SimResult
    summary: dict


def run_summary(cfg: RunConfig, result: SimResult) -> dict:
    """Whole-run figures per flow plus the run's provenance."""
    flows = {}
    for s, fs in zip(result.summaries(cfg.window_s), result.flows):
        flows[s.label] = {
            "goal": fs.spec.goal.value,
            "generator": fs.spec.generator.kind.value,
            "rate_bps": fs.spec.generator.rate_bps,
            "sent": s.loss.sent, "received": s.loss.received, "in_flight": s.loss.in_flight,
            "network_loss": s.loss.network_loss, "buffer_discards": s.loss.buffer_discards,
            "e2e_loss": s.loss.end_to_end_loss, "e2e_loss_ratio": s.loss.loss_ratio,
            "loss_density": s.loss.loss_density,
            "switches": s.switches, "switch_ratio": s.switch_ratio, "switch_rate": s.switch_rate,
            "reorders": s.reorders, "reorder_density": s.reorder_density,
            "mean_delay_s": s.mean_delay_s, "mean_jitter_s": s.mean_jitter_s,
            "counters": dict(fs.counters),
        }
    return {
        "seed": cfg.seed, "duration_s": cfg.duration_s, "window_s": cfg.window_s,
        "rate_scale": cfg.rate_scale, "measured_flow": cfg.measured(),
        "events": result.events_processed, "flows": flows,
    }


def write_playout(path: Path, result: SimResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAYOUT_HEADER)
        for fs in result.flows:
            if fs.buffer is None:
                continue
            r = fs.buffer.report()
            w.writerow([fs.label] + [_f(r[k]) if isinstance(r[k], float) else r[k]
                                     for k in PLAYOUT_HEADER[1:]])


def run_single(cfg: RunConfig, out_dir: str | os.PathLike | None = None,
               write_events: bool = True) -> RunArtifacts:
    """Simulate ``cfg`` and write events, metrics, playout, RNN dump and summary."""
    out = Path(out_dir) if out_dir is not None else default_out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    result = simulate(cfg.scenario(), cfg.seed, cfg.duration_s,
                      cfg.sim_params(record_log=write_events))
    if write_events:
        (out / EVENTS_FILE).write_text(result.event_log())
    write_metrics_csv(out / METRICS_FILE, result.summaries(cfg.window_s))
    write_playout(out / PLAYOUT_FILE, result)
    write_dump(out / RNN_FILE, [dump_row(node, goal, dst, st)
                                for (node, goal, dst), st in sorted(
                                    result.rnns.items(), key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2]))])
    summary = run_summary(cfg, result)
    (out / SUMMARY_JSON).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunArtifacts(out, result, summary)


def sweep_row(run_dir: str | os.PathLike, rate_bps: float, voice_goal: QosGoal,
              background_goal: QosGoal) -> list:
    """Summary-table row derived only from a run directory's ``summary.json``."""
    summary = json.loads((Path(run_dir) / SUMMARY_JSON).read_text())
    m = summary["flows"][summary["measured_flow"]]
    return [_f(rate_bps), voice_goal.value, background_goal.value, str(summary["seed"]),
            _f(m["mean_delay_s"]), _f(m["mean_jitter_s"]), _f(m["e2e_loss_ratio"]),
            _f(m["switch_rate"])]


def run_name(rate_bps: float, vg: QosGoal, bg: QosGoal, seed: int) -> str:
    return f"rate{rate_bps:.0f}_{vg.value}-{bg.value}_seed{seed}"


def _one(job):
    cfg, run_dir, write_events = job
    run_single(cfg, run_dir, write_events)
    return run_dir


def _write_sweep(path: Path, rows: list) -> None:
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        w.writerows(rows)
    tmp.replace(path)


def run_sweep(cfg: RunConfig, rates_bps, out_dir: str | os.PathLike | None = None,
              seeds=None, pairs=None, jobs: int = 1, write_events: bool = False,
              progress=None) -> list[list]:
    """One run per rate x goal pair x seed; rows go to ``summary.csv`` as they finish.

    ``rates_bps`` are nominal background rates, scaled by ``cfg.rate_scale``
    like any other rate in the config. A failing run raises
    :class:`SweepAborted` carrying the rows completed so far, which are also
    already on disk.
    """
    rates = list(rates_bps)
    if not rates:
        raise ValueError("no rates given")
    for r in rates:
        if not r > 0:
            raise ValueError(f"rate must be positive, got {r}")
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    pairs = list(pairs) if pairs is not None else GOAL_PAIRS
    out = Path(out_dir) if out_dir is not None else default_out_dir(cfg)
    (out / "runs").mkdir(parents=True, exist_ok=True)

    jobs_list = []
    for rate, (vg, bg), seed in product(rates, pairs, seeds):
        run_cfg = cfg.with_background(rate, vg, bg)
        run_cfg.seed = seed
        run_dir = out / "runs" / run_name(rate, vg, bg, seed)
        jobs_list.append(((run_cfg, run_dir, write_events), (rate, vg, bg)))

    rows: list = [None] * len(jobs_list)
    summary_path = out / SWEEP_FILE
    _write_sweep(summary_path, [])

    def done(i):
        (_, run_dir, _), (rate, vg, bg) = jobs_list[i]
        rows[i] = sweep_row(run_dir, rate, vg, bg)
        _write_sweep(summary_path, [r for r in rows if r is not None])
        if progress:
            progress(rows[i])

    try:
        if jobs > 1:
            with ProcessPoolExecutor(jobs) as pool:
                futures = [pool.submit(_one, job) for job, _ in jobs_list]
                for i, fut in enumerate(futures):
                    fut.result()
                    done(i)
        else:
            for i, (job, _) in enumerate(jobs_list):
                _one(job)
                done(i)
    except Exception as e:
        finished = [r for r in rows if r is not None]
        raise SweepAborted(f"sweep aborted after {len(finished)} of {len(rows)} runs: {e}",
                           finished) from e
    return rows


def read_sweep(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SWEEP_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return list(reader)
