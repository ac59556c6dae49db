"""Static plots and correlation tables from run or sweep artifacts."""

from __future__ import annotations

import os
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiment import METRICS_FILE, SWEEP_FILE, read_sweep  # noqa: E402
from .metrics import correlate, read_metrics_csv  # noqa: E402

NOT_COMPUTABLE = "not computable"
CORR_HEADER = ["flow", "windows", "reorders_vs_switches", "losses_vs_switches"]
SWEEP_METRICS = ["mean_delay_s", "mean_jitter_s", "e2e_loss_ratio", "switch_rate"]


class EmptyArtifacts(ValueError):
    pass


def _coef(a, b) -> str:
    if len(a) < 3:
        return NOT_COMPUTABLE
    r = correlate(a, b)
    return NOT_COMPUTABLE if r is None else f"{r:.6f}"


def correlation_table(series: dict[str, list[dict]]) -> list[list[str]]:
    """Per flow: windowed Pearson of reorders and of losses against path switches."""
    rows = []
    for flow, wins in series.items():
        sw = [w["switches"] for w in wins]
        ro = [w["reorders"] for w in wins]
        lo = [w["net_lost"] + w["buffer_discards"] for w in wins]
        rows.append([flow, str(len(wins)), _coef(ro, sw), _coef(lo, sw)])
    return rows


def format_table(rows: list[list[str]], header=CORR_HEADER) -> str:
    table = [header] + rows
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
                     for r in table) + "\n"


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def plot_run(series: dict[str, list[dict]], out: Path) -> list[Path]:
    written = []
    for flow, wins in series.items():
        t = [w["window_start_s"] for w in wins]
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(t, [w["net_lost"] + w["buffer_discards"] for w in wins], marker="o",
                label="lost (network + buffer)")
        ax.plot(t, [w["switches"] for w in wins], marker="s", label="path switches")
        ax.plot(t, [w["reorders"] for w in wins], marker="^", label="reorders")
        ax.set_xlabel("window start (s)")
        ax.set_ylabel("packets per window")
        ax.set_title(f"flow {flow}")
        ax.legend()
        fig.tight_layout()
        path = out / f"timeseries_{_safe(flow)}.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def sweep_curves(rows: list[dict]) -> dict[str, dict[str, list[tuple[float, float]]]]:
    """``{metric: {"voice/background": [(rate, mean over seeds), ...]}}``."""
    acc = defaultdict(lambda: defaultdict(list))
    for r in rows:
        pair = f"{r['voice_goal']}/{r['background_goal']}"
        acc[pair][float(r["rate_bps"])].append(r)
    curves: dict = {m: {} for m in SWEEP_METRICS}
    for pair, by_rate in sorted(acc.items()):
        for m in SWEEP_METRICS:
            curves[m][pair] = [(rate, sum(float(x[m]) for x in rs) / len(rs))
                               for rate, rs in sorted(by_rate.items())]
    return curves


def plot_sweep(rows: list[dict], out: Path) -> list[Path]:
    written = []
    for metric, by_pair in sweep_curves(rows).items():
        fig, ax = plt.subplots(figsize=(6, 4))
        for pair, pts in by_pair.items():
            ax.plot([p[0] / 1e6 for p in pts], [p[1] for p in pts], marker="o",
                    label=f"voice/background {pair}")
        ax.set_xlabel("background rate (Mbps, nominal)")
        ax.set_ylabel(metric)
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = out / f"sweep_{metric}.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def report(inputs, out_dir: str | os.PathLike) -> tuple[list[Path], str]:
    """Plots plus a correlation table for run directories and/or sweep directories.

    Each input may be a run directory (with ``metrics.csv``), a sweep
    directory (with ``summary.csv``) or one of those files directly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    table_rows: list[list[str]] = []
    found = False
    for raw in inputs:
        p = Path(raw)
        metrics = p if p.is_file() and p.name.endswith(".csv") and p.name != SWEEP_FILE \
            else p / METRICS_FILE
        sweep = p if p.is_file() and p.name == SWEEP_FILE else p / SWEEP_FILE
        if metrics.is_file():
            series = read_metrics_csv(metrics)
            if series:
                found = True
                prefix = p.name if len(inputs) > 1 else None
                sub = out / _safe(prefix) if prefix else out
                sub.mkdir(parents=True, exist_ok=True)
                written += plot_run(series, sub)
                for row in correlation_table(series):
                    if prefix:
                        row[0] = f"{prefix}:{row[0]}"
                    table_rows.append(row)
        if sweep.is_file():
            rows = read_sweep(sweep)
            if rows:
                found = True
                written += plot_sweep(rows, out)
    if not found:
        raise EmptyArtifacts("no metrics.csv or summary.csv with data found in: "
                             + ", ".join(str(i) for i in inputs))
    text = format_table(table_rows) if table_rows else ""
    if text:
        path = out / "correlation.txt"
        path.write_text(text)
        written.append(path)
    return written, text
