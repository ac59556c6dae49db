"""Deterministic discrete-event simulation of a CPN network.

Smart packets pick their next hop with the per-(node, goal, destination)
RNN, dumb packets follow the source route most recently brought back by a
smart-packet ack, and every ack retraces its packet's path depositing
forward-delay measurements and applying the RL update at each hop.
"""

from __future__ import annotations

import heapq
from heapq import heappush
import io
import logging
import random
from collections import deque
from dataclasses import dataclass, field

from .core import (HEADER_BYTES, NS_PER_S, CpnPacket, GeneratorKind, PacketKind,
                   Scenario, fmt_s, loop_erase, to_ns)
from .goals import DEFAULT_EPSILON_S, Mailbox
from .metrics import FlowLedger, FlowSummary, summarize_flow
from .playout import Action, JitterBuffer
from .rnn import RnnState, rl_update, select_output

log = logging.getLogger(__name__)

# event kinds
GENERATE, LINK_DELIVER, BUFFER_TIMEOUT, ROUTE_TIMEOUT = range(4)
EVENT_NAMES = ("Generate", "LinkDeliver", "BufferTimeout", "RouteTimeout")

LOG_HEADER = "outcome,kind,flow,seq,send_s,event_s,path"


class InvariantViolation(RuntimeError):
    pass


@dataclass
class BufferParams:
    capacity: int | None = 20
    hold_timeout_s: float = 0.060
    playout_offset_s: float = 0.080
    drop_head_on_overflow: bool = False
    voice_only: bool = True


@dataclass
class SimParams:
    explore_prob: float = 0.05
    epsilon_s: float = DEFAULT_EPSILON_S
    threshold_smoothing: float = 0.8
    max_hops: int = 30
    route_wait_s: float = 0.100
    rl_on_dp_acks: bool = True
    mailbox_per_flow: bool = True
    freeze_routes: bool = False
    preinstall_routes: bool = False
    phase_jitter: bool = True
    header_bytes: int = HEADER_BYTES
    record_log: bool = True
    buffer: BufferParams = field(default_factory=BufferParams)


class LinkState:
    __slots__ = ("a", "b", "bandwidth_bps", "ns_per_byte", "prop_ns", "capacity",
                 "queue", "busy_until", "drops", "sent")

    def __init__(self, spec):
        self.a, self.b = spec.a, spec.b
        self.bandwidth_bps = spec.bandwidth_bps
        self.ns_per_byte = 8 * NS_PER_S / spec.bandwidth_bps
        self.prop_ns = to_ns(spec.propagation_s)
        self.capacity = spec.queue_capacity_packets
        self.queue: deque = deque()   # finish times of queued packets
        self.busy_until = 0
        self.drops = 0
        self.sent = 0


@dataclass
class FlowState:
    index: int
    spec: object
    label: str
    start_ns: int = 0
    stop_ns: int = 0
    next_dp: int = 0
    next_sp: int = 0
    route: tuple | None = None
    held: dict = field(default_factory=dict)
    ledger: FlowLedger | None = None
    buffer: JitterBuffer | None = None
    buffer_event: float | None = None
    counters: dict = field(default_factory=lambda: {
        "dp_sent": 0, "dp_delivered": 0, "dp_dropped": 0, "dp_in_flight": 0,
        "sp_sent": 0, "sp_delivered": 0, "sp_dropped": 0, "sp_discarded": 0,
        "ack_delivered": 0, "ack_dropped": 0, "route_installs": 0,
    })


@dataclass
class SimResult:
    scenario: Scenario
    seed: int
    duration_s: float
    log_lines: list
    flows: list
    links: dict
    rnns: dict
    mailboxes: dict
    counters: dict
    events_processed: int

    def event_log(self) -> str:
        buf = io.StringIO()
        buf.write(LOG_HEADER + "\n")
        for line in self.log_lines:
            buf.write(line)
            buf.write("\n")
        return buf.getvalue()

    def ledger(self, label: str) -> FlowLedger:
        for f in self.flows:
            if f.label == label:
                return f.ledger
        raise KeyError(label)

    def flow(self, label: str) -> FlowState:
        for f in self.flows:
            if f.label == label:
                return f
        raise KeyError(label)

    def summaries(self, window_s: float = 100.0) -> list[FlowSummary]:
        return [summarize_flow(f.ledger, self.duration_s, window_s) for f in self.flows]

    def check_conservation(self) -> None:
        """sent == delivered + in flight + dropped for every flow, from two sources."""
        for f in self.flows:
            c = f.counters
            if c["dp_sent"] != c["dp_delivered"] + c["dp_in_flight"] + c["dp_dropped"]:
                raise InvariantViolation(f"{f.label}: counters do not balance: {c}")
            led = f.ledger
            if (led.sent, len(led.arrivals), len(led.in_flight()), len(led.dropped)) != (
                    c["dp_sent"], c["dp_delivered"], c["dp_in_flight"], c["dp_dropped"]):
                raise InvariantViolation(f"{f.label}: ledger disagrees with counters")


def path_id(path) -> str:
    return "-".join(str(n) for n in path) if path else ""


class Simulator:
    def __init__(self, scenario: Scenario, seed: int = 0, params: SimParams | None = None):
        self.scenario = scenario
        self.seed = seed
        self.params = params or SimParams()
        self.rng = random.Random(seed)
        topo = scenario.topology
        self.neighbors = topo.neighbors()
        self.neuron_of = {n: {nb: i for i, nb in enumerate(nbs)}
                          for n, nbs in self.neighbors.items()}
        self.links = {(l.a, l.b): LinkState(l) for l in topo.directed_links()}
        self.mailboxes = {n.id: Mailbox(self.params.epsilon_s, self.params.mailbox_per_flow)
                          for n in topo.nodes}
        self.rnns: dict = {}
        self.now = 0
        self._heap: list = []
        self._seq_no = 0
        self.log_lines: list = []
        self.counters = {"ack_missing_stamp": 0, "stale_route": 0, "events": 0}
        self.flows = []
        bp = self.params.buffer
        for i, spec in enumerate(scenario.flows):
            g = spec.generator
            fs = FlowState(i, spec, spec.label)
            fs.ledger = FlowLedger(spec.label)
            fs.start_ns = to_ns(spec.start_s)
            fs.stop_ns = to_ns(spec.stop_s) if spec.stop_s != float("inf") else None
            if self.params.phase_jitter:
                fs.start_ns += self.rng.randrange(max(1, to_ns(g.interval_s)))
            if not bp.voice_only or g.kind is GeneratorKind.VOICE_CBR:
                fs.buffer = JitterBuffer(bp.capacity, bp.hold_timeout_s, bp.playout_offset_s,
                                         drop_head_on_overflow=bp.drop_head_on_overflow)
            self.flows.append(fs)
            if self.params.preinstall_routes:
                fs.route = tuple(self.shortest_path(spec.key.src, spec.key.dst))
        self._by_key = {fs.spec.key: fs for fs in self.flows}
        self._header = self.params.header_bytes
        self._logging = self.params.record_log

    # -- scheduling -------------------------------------------------------

    def schedule(self, at: int, kind: int, a=None, b=None) -> None:
        if at < self.now:
            raise InvariantViolation(f"event {EVENT_NAMES[kind]} scheduled in the past")
        self._seq_no += 1
        heappush(self._heap, (at, self._seq_no, kind, a, b))

    def shortest_path(self, src: int, dst: int) -> list[int]:
        prev = {src: None}
        todo = deque([src])
        while todo:
            u = todo.popleft()
            for v in self.neighbors[u]:
                if v not in prev:
                    prev[v] = u
                    todo.append(v)
        path = [dst]
        while path[-1] != src:
            path.append(prev[path[-1]])
        return path[::-1]

    def rnn(self, node: int, goal, dst: int) -> RnnState:
        key = (node, goal, dst)
        state = self.rnns.get(key)
        if state is None:
            state = RnnState.initial(len(self.neighbors[node]),
                                     smoothing=self.params.threshold_smoothing)
            self.rnns[key] = state
        return state

    def _log(self, outcome: str, pkt: CpnPacket, label: str, path, seq=None) -> None:
        self.log_lines.append(
            f"{outcome},{pkt.kind.value},{label},{pkt.seq if seq is None else seq},"
            f"{fmt_s(pkt.created_at)},{fmt_s(self.now)},{path_id(path)}")

    # -- main loop --------------------------------------------------------

    def run(self, duration_s: float) -> SimResult:
        end = to_ns(duration_s)
        for fs in self.flows:
            self.schedule(fs.start_ns, GENERATE, fs.index, 0)
        heap = self._heap
        pop = heapq.heappop
        last = (-1, -1)
        handlers = (self._on_generate, None,
                    self._on_buffer_timeout, self._on_route_timeout)
        DUMB, SMART = PacketKind.DUMB, PacketKind.SMART
        processed = 0
        while heap and heap[0][0] <= end:
            at, seq_no, kind, a, b = pop(heap)
            if (at, seq_no) <= last:
                raise InvariantViolation("event executed out of (at, seq_no) order")
            last = (at, seq_no)
            self.now = at
            processed += 1
            if kind == LINK_DELIVER:
                pk = a.kind
                if pk is DUMB:
                    self._dumb_at(b, a)
                elif pk is SMART:
                    self._smart_at(b, a, a.route[-1])
                else:
                    self._ack_at(b, a)
            else:
                handlers[kind](a, b)
        self.now = end
        self.counters["events"] = processed
        for fs in self.flows:
            if fs.buffer is not None:
                fs.buffer.release(end)
        result = SimResult(self.scenario, self.seed, duration_s, self.log_lines, self.flows,
                           self.links, self.rnns, self.mailboxes, self.counters, processed)
        result.check_conservation()
        return result

    # -- traffic ----------------------------------------------------------

    def _on_generate(self, flow_index: int, k: int) -> None:
        fs = self.flows[flow_index]
        if fs.stop_ns is not None and self.now >= fs.stop_ns:
            return
        spec = fs.spec
        g = spec.generator
        key = spec.key
        if k % g.sp_ratio == 0:
            sp = CpnPacket(PacketKind.SMART, key, fs.next_sp, spec.goal, [],
                           payload_bytes=0, created_at=self.now)
            fs.next_sp += 1
            fs.counters["sp_sent"] += 1
            self._smart_at(key.src, sp, None)
        dp = CpnPacket(PacketKind.DUMB, key, k, spec.goal, [], payload_bytes=g.payload_bytes,
                       created_at=self.now)
        fs.next_dp = k + 1
        fs.counters["dp_sent"] += 1
        fs.counters["dp_in_flight"] += 1
        fs.ledger.record_send(k, self.now)
        if fs.route is not None:
            self._launch(fs, dp)
        else:
            fs.held[k] = dp
            self.schedule(self.now + to_ns(self.params.route_wait_s), ROUTE_TIMEOUT,
                          flow_index, k)
        nxt = fs.start_ns + round((k + 1) * g.payload_bytes * 8 * NS_PER_S / g.rate_bps)
        self.schedule(nxt, GENERATE, flow_index, k + 1)

    def _launch(self, fs: FlowState, dp: CpnPacket) -> None:
        dp.route = list(fs.route)
        dp.hop_index = 0
        fs.ledger.path[dp.seq] = fs.route
        self._dumb_at(fs.spec.key.src, dp)

    def _on_route_timeout(self, flow_index: int, seq: int) -> None:
        fs = self.flows[flow_index]
        dp = fs.held.pop(seq, None)
        if dp is not None:
            self._drop_dp(fs, dp, "route_timeout")

    def _install_route(self, fs: FlowState, path: tuple) -> None:
        if fs.route is not None and self.params.freeze_routes:
            return
        fs.route = path
        fs.counters["route_installs"] += 1
        if fs.held:
            held = sorted(fs.held.items())
            fs.held.clear()
            for _, dp in held:
                self._launch(fs, dp)

    # -- links ------------------------------------------------------------

    def _transmit(self, node: int, nxt: int, pkt: CpnPacket) -> bool:
        link = self.links.get((node, nxt))
        if link is None:
            return False
        now = self.now
        q = link.queue
        while q and q[0] <= now:
            q.popleft()
        if len(q) >= link.capacity:
            link.drops += 1
            return False
        start = link.busy_until if link.busy_until > now else now
        finish = start + round((pkt.payload_bytes + self._header) * link.ns_per_byte)
        link.busy_until = finish
        q.append(finish)
        link.sent += 1
        self.schedule(finish + link.prop_ns, LINK_DELIVER, pkt, nxt)
        return True

    # -- packet handlers ----------------------------------------------------

    def _smart_at(self, node: int, sp: CpnPacket, came_from) -> None:
        fs = self._flow_of(sp)
        sp.hop_stamps.append((node, self.now))
        sp.route.append(node)
        dst = sp.flow.dst
        if node == dst:
            fs.counters["sp_delivered"] += 1
            if self._logging:
                self._log("delivered", sp, fs.label, sp.route)
            forward = loop_erase(sp.route)
            self._send_ack(fs, sp, forward)
            return
        if len(sp.route) - 1 >= self.params.max_hops:
            fs.counters["sp_discarded"] += 1
            if self._logging:
                self._log("discarded", sp, fs.label, sp.route)
            return
        nbs = self.neighbors[node]
        visited = sp.route
        eligible = {i for i, nb in enumerate(nbs) if nb not in visited}
        if not eligible:
            # trapped: any link but the one we came in on
            eligible = set(range(len(nbs)))
            if came_from is not None and len(nbs) > 1:
                eligible.discard(self.neuron_of[node][came_from])
        if len(eligible) == 1:
            (choice,) = eligible
        else:
            # the mailbox value is what the RNN was last trained on; the
            # update itself already happened when the ack passed through
            self.mailboxes[node].class_reward(sp.goal, dst)
            choice = select_output(self.rnn(node, sp.goal, dst), self.rng,
                                   self.params.explore_prob,
                                   None if len(eligible) == len(nbs) else eligible)
        if not self._transmit(node, nbs[choice], sp):
            fs.counters["sp_dropped"] += 1
            if self._logging:
                self._log("dropped", sp, fs.label, sp.route)

    def _dumb_at(self, node: int, dp: CpnPacket) -> None:
        fs = self._flow_of(dp)
        dp.hop_stamps.append((node, self.now))
        route = dp.route
        i = dp.hop_index
        if i == len(route) - 1:
            fs.counters["dp_delivered"] += 1
            fs.counters["dp_in_flight"] -= 1
            fs.ledger.record_arrival(dp.seq, self.now)
            if self._logging:
                self._log("delivered", dp, fs.label, route)
            if fs.buffer is not None:
                self._buffer_insert(fs, dp)
            self._send_ack(fs, dp, route)
            return
        nxt = route[i + 1]
        dp.hop_index = i + 1
        if (node, nxt) not in self.links:
            self.counters["stale_route"] += 1
            self._drop_dp(fs, dp, "stale_route")
        elif not self._transmit(node, nxt, dp):
            self._drop_dp(fs, dp, "queue_full")

    def _drop_dp(self, fs: FlowState, dp: CpnPacket, reason: str) -> None:
        fs.counters["dp_dropped"] += 1
        fs.counters["dp_in_flight"] -= 1
        fs.ledger.record_drop(dp.seq, self.now, reason)
        if self._logging:
            self._log("dropped", dp, fs.label, dp.route)

    def _send_ack(self, fs: FlowState, pkt: CpnPacket, forward) -> None:
        reverse = list(reversed(forward))
        ack = CpnPacket(PacketKind.ACK, pkt.flow, pkt.seq, pkt.goal, reverse,
                        hop_stamps=pkt.hop_stamps, payload_bytes=0, created_at=self.now,
                        acked_kind=pkt.kind, acked_path=tuple(forward), hop_index=0)
        self._forward_ack(fs, reverse[0], ack)

    def _forward_ack(self, fs: FlowState, node: int, ack: CpnPacket) -> None:
        i = ack.hop_index
        ack.hop_index = i + 1
        if not self._transmit(node, ack.route[i + 1], ack):
            fs.counters["ack_dropped"] += 1
            if self._logging:
                self._log("dropped", ack, fs.label, ack.acked_path)

    def _ack_at(self, node: int, ack: CpnPacket) -> None:
        fs = self._flow_of(ack)
        stamp = None
        for n, t in reversed(ack.hop_stamps):
            if n == node:
                stamp = t
                break
        if stamp is None:
            self.counters["ack_missing_stamp"] += 1
            fs.counters["ack_dropped"] += 1
            if self._logging:
                self._log("dropped", ack, fs.label, ack.acked_path)
            return
        p = self.params
        dst = ack.flow.dst
        delay_s = (self.now - stamp) / 2 / NS_PER_S
        entry = self.mailboxes[node].deposit(ack.goal, dst, ack.flow, delay_s, self.now)
        if ack.acked_kind is PacketKind.SMART or p.rl_on_dp_acks:
            neurons = self.neuron_of[node]
            if len(neurons) >= 2:
                # the reverse route's previous entry is this node's forward next hop
                nxt = ack.route[ack.hop_index - 1]
                rl_update(self.rnn(node, ack.goal, dst), neurons[nxt], entry.last_reward)
        if ack.hop_index == len(ack.route) - 1:
            fs.counters["ack_delivered"] += 1
            if self._logging:
                self._log("delivered", ack, fs.label, ack.acked_path)
            if ack.acked_kind is PacketKind.SMART:
                self._install_route(fs, ack.acked_path)
            return
        self._forward_ack(fs, node, ack)

    def _flow_of(self, pkt: CpnPacket) -> FlowState:
        return self._by_key[pkt.flow]

    # -- receiver buffer ------------------------------------------------------

    def _buffer_insert(self, fs: FlowState, dp: CpnPacket) -> None:
        buf = fs.buffer
        n_over = len(buf.overflow_seqs)
        action = buf.insert(dp.seq, dp.created_at, self.now)
        if action is Action.DISCARD_LATE:
            fs.ledger.record_discard(dp.seq, action.value)
            if self._logging:
                self._log("discard_late", dp, fs.label, dp.route)
        # with drop-head the discarded seq need not be the arriving one
        for seq in buf.overflow_seqs[n_over:]:
            fs.ledger.record_discard(seq, Action.DISCARD_OVERFLOW.value)
            if self._logging:
                self._log("discard_overflow", dp, fs.label, dp.route, seq)
        self._arm_buffer(fs)

    def _arm_buffer(self, fs: FlowState) -> None:
        t = fs.buffer.next_event_time()
        if t == float("inf"):
            return
        t = max(int(t), self.now)
        if fs.buffer_event is not None and fs.buffer_event <= t and fs.buffer_event >= self.now:
            return
        fs.buffer_event = t
        self.schedule(t, BUFFER_TIMEOUT, fs.index, t)

    def _on_buffer_timeout(self, flow_index: int, at: int) -> None:
        fs = self.flows[flow_index]
        if fs.buffer_event != at:
            return
        fs.buffer_event = None
        fs.buffer.release(self.now)
        self._arm_buffer(fs)


def simulate(scenario: Scenario, seed: int = 0, duration_s: float = 10.0,
             params: SimParams | None = None) -> SimResult:
    return Simulator(scenario, seed, params).run(duration_s)
