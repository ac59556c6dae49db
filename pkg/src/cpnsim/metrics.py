"""Path switching, NextExp reordering, run-length densities and loss accounting."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

from .core import NS_PER_S, fmt_s, to_ns


class Classification(str, enum.Enum):
    IN_ORDER = "InOrder"
    REORDERED = "Reordered"


class LedgerFault(RuntimeError):
    """A packet identifier was accounted twice."""


@dataclass
class PathTracker:
    t_window: float = 1.0
    current_path: tuple | None = None
    q_path: int = 0
    n_packets: int = 0

    @property
    def ratio(self) -> float:
        return self.q_path / self.n_packets if self.n_packets else 0.0

    @property
    def rate(self) -> float:
        return self.q_path / self.t_window


def observe_path(tracker: PathTracker, packet_path: Sequence[int]) -> bool:
    """Count one forwarded packet; return True if it switched path."""
    path = tuple(packet_path)
    tracker.n_packets += 1
    if tracker.current_path is None:
        tracker.current_path = path
        return False
    if path != tracker.current_path:
        tracker.current_path = path
        tracker.q_path += 1
        return True
    return False


@dataclass
class ReorderState:
    next_exp: int = 0
    seq_inc: int = 1
    count_r: int = 0
    density_r: int = 0
    events: int = 0


def observe_arrival(state: ReorderState, seq: int) -> Classification:
    if seq < state.next_exp:
        state.events += 1
        return Classification.REORDERED
    state.next_exp = seq + state.seq_inc
    return Classification.IN_ORDER


def run_weight(length: int) -> int:
    """Density contribution of a closed run: isolated adds 1, bursty adds length squared."""
    if length <= 0:
        return 0
    return 1 if length == 1 else length * length


def update_density(state: ReorderState, classification: Classification) -> int:
    """Fold one classification in; return the density added (non-zero when a run closes)."""
    if classification is Classification.REORDERED:
        state.count_r += 1
        return 0
    added = run_weight(state.count_r)
    state.density_r += added
    state.count_r = 0
    return added


def flush_density(state: ReorderState) -> int:
    """Close a run still open at end of stream."""
    added = run_weight(state.count_r)
    state.density_r += added
    state.count_r = 0
    return added


def run_lengths(flags: Iterable[bool]) -> list[int]:
    runs, cur = [], 0
    for f in flags:
        if f:
            cur += 1
        elif cur:
            runs.append(cur)
            cur = 0
    if cur:
        runs.append(cur)
    return runs


def run_density(flags: Iterable[bool]) -> int:
    return sum(run_weight(r) for r in run_lengths(flags))


def correlate(series_a: Sequence[float], series_b: Sequence[float]) -> float | None:
    """Pearson coefficient; None when either series has zero variance."""
    if len(series_a) != len(series_b):
        raise ValueError(f"length mismatch: {len(series_a)} vs {len(series_b)}")
    n = len(series_a)
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    ma = math.fsum(series_a) / n
    mb = math.fsum(series_b) / n
    da = [a - ma for a in series_a]
    db = [b - mb for b in series_b]
    saa = math.fsum(x * x for x in da)
    sbb = math.fsum(y * y for y in db)
    if saa == 0.0 or sbb == 0.0:
        return None
    r = math.fsum(x * y for x, y in zip(da, db)) / math.sqrt(saa * sbb)
    return max(-1.0, min(1.0, r))


@dataclass
class FlowLedger:
    """Per-flow record of every dumb packet, filled in by the simulator."""

    label: str
    send_ns: list = field(default_factory=list)
    path: list = field(default_factory=list)
    arrivals: list = field(default_factory=list)      # (seq, arrival_ns), arrival order
    dropped: dict = field(default_factory=dict)       # seq -> (ns, reason)
    buffer_discards: dict = field(default_factory=dict)  # seq -> reason
    _received: dict = field(default_factory=dict, repr=False)

    @property
    def sent(self) -> int:
        return len(self.send_ns)

    def record_send(self, seq: int, now: int) -> None:
        if seq != len(self.send_ns):
            raise LedgerFault(f"{self.label}: seq {seq} breaks the gap-free series")
        self.send_ns.append(now)
        self.path.append(None)

    def record_arrival(self, seq: int, now: int) -> None:
        if seq in self._received or seq in self.dropped:
            raise LedgerFault(f"{self.label}: seq {seq} accounted twice")
        self._received[seq] = now
        self.arrivals.append((seq, now))

    def record_drop(self, seq: int, now: int, reason: str) -> None:
        if seq in self._received or seq in self.dropped:
            raise LedgerFault(f"{self.label}: seq {seq} accounted twice")
        self.dropped[seq] = (now, reason)

    def record_discard(self, seq: int, reason: str) -> None:
        if seq in self.buffer_discards or seq not in self._received:
            raise LedgerFault(f"{self.label}: bad buffer discard for seq {seq}")
        self.buffer_discards[seq] = reason

    def received_at(self, seq: int) -> int | None:
        return self._received.get(seq)

    def in_flight(self) -> list[int]:
        return [s for s in range(self.sent)
                if s not in self._received and s not in self.dropped]


@dataclass(frozen=True)
class LossSplit:
    sent: int
    received: int
    in_flight: int
    network_loss: int
    buffer_discards: int
    end_to_end_loss: int
    loss_ratio: float
    loss_rate: float
    loss_density: int


def account_loss(ledger: FlowLedger, duration_s: float = 1.0) -> LossSplit:
    """Split end-to-end loss into network loss and receiver discards."""
    received = set()
    for seq, _ in ledger.arrivals:
        if seq in received:
            raise LedgerFault(f"{ledger.label}: seq {seq} received twice")
        received.add(seq)
    pending = set(ledger.in_flight())
    missing = set(range(ledger.sent)) - received - pending
    if missing != set(ledger.dropped):
        raise LedgerFault(f"{ledger.label}: unmatched identifiers "
                          f"{sorted(missing ^ set(ledger.dropped))[:10]}")
    if not set(ledger.buffer_discards) <= received:
        raise LedgerFault(f"{ledger.label}: discard of a packet never received")
    net = len(missing)
    disc = len(ledger.buffer_discards)
    e2e = net + disc
    settled = ledger.sent - len(pending)
    flags = [s in ledger.dropped or s in ledger.buffer_discards
             for s in range(ledger.sent) if s not in pending]
    return LossSplit(
        sent=ledger.sent, received=len(received), in_flight=len(pending),
        network_loss=net, buffer_discards=disc, end_to_end_loss=e2e,
        loss_ratio=e2e / settled if settled else 0.0,
        loss_rate=e2e / duration_s if duration_s > 0 else 0.0,
        loss_density=run_density(flags),
    )


@dataclass
class WindowStats:
    window_start_s: float = 0.0
    sent: int = 0
    received: int = 0
    net_lost: int = 0
    buffer_discards: int = 0
    switches: int = 0
    reorders: int = 0
    reorder_density: int = 0
    loss_density: int = 0
    mean_delay_s: float = 0.0
    mean_jitter_s: float = 0.0


WINDOW_FIELDS = [f.name for f in fields(WindowStats)]
CSV_HEADER = ["flow"] + WINDOW_FIELDS


@dataclass
class FlowSummary:
    label: str
    windows: list
    loss: LossSplit
    switches: int
    switch_ratio: float
    switch_rate: float
    reorders: int
    reorder_density: int
    mean_delay_s: float
    mean_jitter_s: float


def summarize_flow(ledger: FlowLedger, duration_s: float, window_s: float = 100.0) -> FlowSummary:
    """Window every statistic by the send time of the packet it concerns.

    Density runs are credited to the window of the run's first packet, so
    the windowed columns sum to the whole-run totals.
    """
    wns = to_ns(window_s)
    nwin = max(1, math.ceil(to_ns(duration_s) / wns))
    wins = [WindowStats(window_start_s=fmt_s(i * wns)) for i in range(nwin)]

    def widx(seq):
        return min(ledger.send_ns[seq] // wns, nwin - 1)

    def w(seq):
        return wins[widx(seq)]

    tracker = PathTracker(t_window=duration_s)
    for seq, path in enumerate(ledger.path):
        st = w(seq)
        st.sent += 1
        if path is not None and observe_path(tracker, path):
            st.switches += 1
    for seq in ledger.dropped:
        w(seq).net_lost += 1
    for seq in ledger.buffer_discards:
        w(seq).buffer_discards += 1

    rs = ReorderState()
    run_start = None
    delay_sum = [0] * nwin
    for seq, arr in ledger.arrivals:
        st = w(seq)
        st.received += 1
        delay_sum[widx(seq)] += arr - ledger.send_ns[seq]
        c = observe_arrival(rs, seq)
        if c is Classification.REORDERED:
            st.reorders += 1
            if run_start is None:
                run_start = st
        added = update_density(rs, c)
        if added:
            run_start.reorder_density += added
            run_start = None
    added = flush_density(rs)
    if added:
        run_start.reorder_density += added

    loss = account_loss(ledger, duration_s)
    pending = set(ledger.in_flight())
    start = None
    length = 0
    for seq in range(ledger.sent):
        if seq in pending:
            continue
        if seq in ledger.dropped or seq in ledger.buffer_discards:
            if length == 0:
                start = w(seq)
            length += 1
        elif length:
            start.loss_density += run_weight(length)
            length = 0
    if length:
        start.loss_density += run_weight(length)

    jit_sum = [0] * nwin
    jit_n = [0] * nwin
    all_jit = []
    for seq in range(1, ledger.sent):
        a, b = ledger.received_at(seq), ledger.received_at(seq - 1)
        if a is None or b is None:
            continue
        d = abs((a - ledger.send_ns[seq]) - (b - ledger.send_ns[seq - 1]))
        i = widx(seq)
        jit_sum[i] += d
        jit_n[i] += 1
        all_jit.append(d)

    for i, st in enumerate(wins):
        st.mean_delay_s = delay_sum[i] / st.received / NS_PER_S if st.received else 0.0
        st.mean_jitter_s = jit_sum[i] / jit_n[i] / NS_PER_S if jit_n[i] else 0.0

    n_recv = len(ledger.arrivals)
    total_delay = sum(arr - ledger.send_ns[s] for s, arr in ledger.arrivals)
    return FlowSummary(
        label=ledger.label, windows=wins, loss=loss,
        switches=tracker.q_path, switch_ratio=tracker.ratio, switch_rate=tracker.rate,
        reorders=rs.events, reorder_density=rs.density_r,
        mean_delay_s=total_delay / n_recv / NS_PER_S if n_recv else 0.0,
        mean_jitter_s=sum(all_jit) / len(all_jit) / NS_PER_S if all_jit else 0.0,
    )


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.9f}"
    return str(v)


def write_metrics_csv(path, summaries: Iterable[FlowSummary]) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(CSV_HEADER)
        for s in summaries:
            for st in s.windows:
                out.writerow([s.label] + [_cell(getattr(st, k)) for k in WINDOW_FIELDS])


def read_metrics_csv(path) -> dict[str, list[dict]]:
    """Load a metrics CSV back as ``{flow: [row, ...]}`` with numeric cells."""
    series: dict[str, list[dict]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            flow = row.pop("flow")
            series.setdefault(flow, []).append(
                {k: (float(v) if "." in v else int(v)) for k, v in row.items()})
    return series
