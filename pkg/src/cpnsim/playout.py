"""Receiver-side resequencing jitter buffer.

Packets are held until their playout deadline (send time plus a fixed
offset) and played strictly in sequence order. A packet whose predecessor
is still missing ``hold_timeout`` after the packet arrived gives up on that
predecessor: every seq still missing below it is declared lost and any later
arrival of one of them is a late discard.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass

from .core import NS_PER_S, to_ns

INF = math.inf


class Action(str, enum.Enum):
    BUFFERED = "Buffered"
    DISCARD_LATE = "DiscardLate"
    DISCARD_OVERFLOW = "DiscardOverflow"
    DUPLICATE = "Duplicate"


@dataclass(frozen=True)
class Played:
    seq: int
    send_ns: int
    arrival_ns: int
    play_ns: int


class JitterBuffer:
    def __init__(self, capacity: int | None = 20, hold_timeout_s: float = 0.060,
                 playout_offset_s: float = 0.080, first_seq: int = 0,
                 drop_head_on_overflow: bool = False):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be >= 1 or None for unbounded")
        if hold_timeout_s < 0 or playout_offset_s < 0:
            raise ValueError("timeouts must be non-negative")
        self.capacity = capacity
        self.hold_ns = None if hold_timeout_s == INF else to_ns(hold_timeout_s)
        self.offset_ns = to_ns(playout_offset_s)
        self.drop_head_on_overflow = drop_head_on_overflow
        self.next_play_seq = first_seq
        self.skip_floor = first_seq
        self.clock = 0
        self._heap: list = []          # (seq, send_ns, arrival_ns)
        self._gaps: list = []          # (arrival_ns + hold, seq)
        self._seen: set = set()
        self.played: list[Played] = []
        self.inserted = 0
        self.discards_late = 0
        self.discards_overflow = 0
        self.duplicates = 0
        self.max_queue = 0
        self._queue_sum = 0
        self.late_seqs: list[int] = []
        self.overflow_seqs: list[int] = []

    def __len__(self) -> int:
        return len(self._heap)

    @property
    def full(self) -> bool:
        return self.capacity is not None and len(self._heap) >= self.capacity

    @property
    def mean_queue(self) -> float:
        return self._queue_sum / self.inserted if self.inserted else 0.0

    @property
    def mean_playout_delay_s(self) -> float:
        if not self.played:
            return 0.0
        return sum(p.play_ns - p.send_ns for p in self.played) / len(self.played) / NS_PER_S

    def _head_play_time(self) -> float:
        if not self._heap:
            return INF
        seq, send_ns, _ = self._heap[0]
        if seq != self.next_play_seq and seq > self.skip_floor:
            return INF
        return max(send_ns + self.offset_ns, self.clock)

    def next_event_time(self) -> float:
        """Earliest time at which :meth:`release` could change state."""
        t_gap = self._gaps[0][0] if self._gaps else INF
        return min(max(t_gap, self.clock), self._head_play_time())

    def release(self, now: int) -> list[Played]:
        """Advance to ``now``; return the packets that started playing."""
        out = []
        while True:
            t_gap = self._gaps[0][0] if self._gaps else INF
            t_play = self._head_play_time()
            t = min(t_gap, t_play)
            if t > now:
                break
            self.clock = max(self.clock, t)
            if t_gap <= t_play:
                _, seq = heapq.heappop(self._gaps)
                if seq > self.skip_floor:
                    self.skip_floor = seq
                continue
            seq, send_ns, arrival_ns = heapq.heappop(self._heap)
            p = Played(seq, send_ns, arrival_ns, self.clock)
            self.played.append(p)
            out.append(p)
            self.next_play_seq = seq + 1
        self.clock = max(self.clock, now)
        return out

    def insert(self, seq: int, send_ns: int, now: int) -> Action:
        self.release(now)
        if seq in self._seen:
            self.duplicates += 1
            return Action.DUPLICATE
        self._seen.add(seq)
        self.inserted += 1
        self._queue_sum += len(self._heap)
        if seq < self.next_play_seq or seq < self.skip_floor:
            self.discards_late += 1
            self.late_seqs.append(seq)
            return Action.DISCARD_LATE
        if self.full:
            if not self.drop_head_on_overflow or self._heap[0][0] > seq:
                self.discards_overflow += 1
                self.overflow_seqs.append(seq)
                return Action.DISCARD_OVERFLOW
            head = heapq.heappop(self._heap)
            self.discards_overflow += 1
            self.overflow_seqs.append(head[0])
            self.next_play_seq = max(self.next_play_seq, head[0] + 1)
        heapq.heappush(self._heap, (seq, send_ns, now))
        if self.hold_ns is not None:
            heapq.heappush(self._gaps, (now + self.hold_ns, seq))
        self.max_queue = max(self.max_queue, len(self._heap))
        self.release(now)
        return Action.BUFFERED

    def flush(self) -> list[Played]:
        """End of stream: play everything still held, in order, skipping gaps."""
        out = []
        while self._heap:
            seq, send_ns, arrival_ns = heapq.heappop(self._heap)
            self.clock = max(self.clock, send_ns + self.offset_ns)
            p = Played(seq, send_ns, arrival_ns, self.clock)
            self.played.append(p)
            out.append(p)
            self.next_play_seq = seq + 1
        self._gaps.clear()
        return out

    def report(self) -> dict:
        return {
            "inserted": self.inserted,
            "played": len(self.played),
            "discards_late": self.discards_late,
            "discards_overflow": self.discards_overflow,
            "duplicates": self.duplicates,
            "held": len(self._heap),
            "max_queue": self.max_queue,
            "mean_queue": self.mean_queue,
            "mean_playout_delay_s": self.mean_playout_delay_s,
        }


def replay(arrivals, capacity: int | None = 20, hold_timeout_s: float = 0.060,
           playout_offset_s: float = 0.080, first_seq: int = 0, flush: bool = True,
           **kwargs) -> JitterBuffer:
    """Run a buffer offline over ``(seq, send_ns, arrival_ns)`` records.

    Records are processed in arrival order (ties keep input order).
    """
    buf = JitterBuffer(capacity, hold_timeout_s, playout_offset_s, first_seq, **kwargs)
    for seq, send_ns, arrival_ns in sorted(arrivals, key=lambda r: r[2]):
        buf.insert(seq, send_ns, arrival_ns)
    if flush:
        buf.release(10**30)
        buf.flush()
    return buf
