"""Run configuration: a TOML file with [topology], [flows.N], [rnn], [buffer], [run]."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core import (FlowKey, FlowSpec, GeneratorKind, GeneratorSpec, LinkSpec, NodeId,
                   QosGoal, Scenario, ScenarioError, Topology, testbed8, validate_scenario)
from .simnet import BufferParams, SimParams

OUT_ENV = "CPNSIM_OUT"

SECTION_KEYS = {
    "topology": {"preset", "file", "bandwidth_bps", "propagation_s", "queue_capacity_packets"},
    "rnn": {"explore_prob", "epsilon", "sp_ratio", "threshold_factor", "max_hops",
            "rl_on_dp_acks", "mailbox_keying", "freeze_routes"},
    "buffer": {"capacity", "hold_timeout_s", "playout_offset_s", "overflow_drop"},
    "run": {"seed", "duration_s", "window_s", "out_dir", "rate_scale", "route_wait_s",
            "measure_flow", "header_bytes"},
}
FLOW_KEYS = {"name", "src", "dst", "src_port", "dst_port", "goal", "generator", "rate_bps",
             "payload_bytes", "sp_ratio", "start_s", "stop_s"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    topology: Topology
    flows: list
    seed: int = 42
    duration_s: float = 600.0
    window_s: float = 100.0
    explore_prob: float = 0.05
    epsilon: float = 1e-3
    sp_ratio: int = 10
    threshold_factor: float = 0.8
    max_hops: int = 30
    rl_on_dp_acks: bool = True
    mailbox_keying: str = "flow"
    freeze_routes: bool = False
    buffer: BufferParams = field(default_factory=BufferParams)
    out_dir: str | None = None
    rate_scale: float = 1.0
    route_wait_s: float = 0.1
    measure_flow: str | None = None
    header_bytes: int = 58
    topology_file: str | None = None
    source: str = "<builtin>"

    def scenario(self) -> Scenario:
        """The validated scenario, with ``rate_scale`` applied to links and background rates."""
        topo = self.topology
        flows = self.flows
        if self.rate_scale != 1.0:
            topo = topo.scaled(self.rate_scale)
            flows = [scale_background(f, self.rate_scale) for f in flows]
        return validate_scenario(topo, flows)

    def sim_params(self, record_log: bool = True) -> SimParams:
        return SimParams(
            explore_prob=self.explore_prob, epsilon_s=self.epsilon,
            threshold_smoothing=self.threshold_factor, max_hops=self.max_hops,
            route_wait_s=self.route_wait_s, rl_on_dp_acks=self.rl_on_dp_acks,
            mailbox_per_flow=self.mailbox_keying == "flow",
            freeze_routes=self.freeze_routes, header_bytes=self.header_bytes,
            record_log=record_log, buffer=self.buffer)

    def measured(self) -> str:
        """Label of the flow the summaries report on (first voice flow by default)."""
        if self.measure_flow:
            return self.measure_flow
        for f in self.flows:
            if f.generator.kind is GeneratorKind.VOICE_CBR:
                return f.label
        return self.flows[0].label

    def with_background(self, rate_bps: float | None = None, voice_goal: QosGoal | None = None,
                        background_goal: QosGoal | None = None) -> "RunConfig":
        flows = []
        for f in self.flows:
            if f.generator.kind is GeneratorKind.UDP_BACKGROUND:
                if rate_bps is not None:
                    f = replace(f, generator=replace(f.generator, rate_bps=rate_bps))
                if background_goal is not None:
                    f = replace(f, goal=background_goal)
            elif voice_goal is not None:
                f = replace(f, goal=voice_goal)
            flows.append(f)
        return replace(self, flows=flows)


def scale_background(flow: FlowSpec, factor: float) -> FlowSpec:
    if flow.generator.kind is not GeneratorKind.UDP_BACKGROUND:
        return flow
    return replace(flow, generator=replace(flow.generator,
                                           rate_bps=flow.generator.rate_bps * factor))


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    lines = text.splitlines()
    header = re.compile(r"^\s*\[\s*" + re.escape(section).replace(r"\.", r"\s*\.\s*")
                        + r"\s*\]\s*(#.*)?$")
    for i, line in enumerate(lines):
        if header.match(line):
            if key is None:
                return i + 1
            for j in range(i + 1, len(lines)):
                if lines[j].lstrip().startswith("["):
                    break
                if re.match(r"^\s*" + re.escape(key) + r"\s*=", lines[j]):
                    return j + 1
            return i + 1
    return None


class _Ctx:
    def __init__(self, text: str, source: str):
        self.text, self.source = text, source

    def fail(self, msg: str, section: str | None = None, key: str | None = None):
        line = _line_of(self.text, section, key) if section else None
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: {msg}")

    def get(self, table: dict, section: str, key: str, kind, default=None):
        if key not in table:
            return default
        value = table[key]
        try:
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
                return value
            if kind is int and isinstance(value, float) and value.is_integer():
                value = int(value)
            if kind in (int, float) and isinstance(value, bool):
                raise TypeError
            if kind is str and not isinstance(value, str):
                raise TypeError
            return kind(value)
        except (TypeError, ValueError):
            self.fail(f"[{section}] {key} = {value!r} is not a valid {kind.__name__}",
                      section, key)


def load_topology_file(path: str | os.PathLike) -> Topology:
    """Read a topology TOML with ``[[nodes]]`` (label) and ``[[links]]`` tables."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"topology file not found: {p}")
    text = p.read_text()
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{p}: {e}") from None
    nodes = []
    for i, n in enumerate(data.get("nodes", [])):
        if "label" not in n:
            raise ConfigError(f"{p}: node #{i + 1} has no label")
        nodes.append(NodeId(i, str(n["label"])))
    ids = {n.label: n.id for n in nodes}
    links = []
    for i, l in enumerate(data.get("links", [])):
        try:
            links.append(LinkSpec(ids[l["a"]], ids[l["b"]], float(l["bandwidth_bps"]),
                                  float(l.get("propagation_s", 10e-6)),
                                  int(l.get("queue_capacity_packets", 100))))
        except KeyError as e:
            raise ConfigError(f"{p}: link #{i + 1} is missing or references {e}") from None
    if not nodes:
        raise ConfigError(f"{p}: no nodes defined")
    return Topology(nodes, links)


def parse_config(text: str, source: str = "<string>", base_dir: str | os.PathLike = ".") -> RunConfig:
    ctx = _Ctx(text, source)
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{source}: {e}") from None

    for section in data:
        if section not in SECTION_KEYS and section != "flows":
            ctx.fail(f"unknown section [{section}]", section)
    for section, allowed in SECTION_KEYS.items():
        for key in data.get(section, {}):
            if key not in allowed:
                ctx.fail(f"unknown key {key!r} in [{section}]", section, key)

    t = data.get("topology", {})
    topo_file = ctx.get(t, "topology", "file", str)
    if topo_file:
        path = Path(base_dir) / topo_file
        topology = load_topology_file(path)
        topo_file = str(path)
    else:
        preset = ctx.get(t, "topology", "preset", str, "testbed8")
        if preset != "testbed8":
            ctx.fail(f"unknown topology preset {preset!r}", "topology", "preset")
        topology = testbed8(ctx.get(t, "topology", "bandwidth_bps", float, 100e6),
                            ctx.get(t, "topology", "propagation_s", float, 10e-6),
                            ctx.get(t, "topology", "queue_capacity_packets", int, 100))

    rnn = data.get("rnn", {})
    sp_default = ctx.get(rnn, "rnn", "sp_ratio", int, 10)

    flows_tbl = data.get("flows", {})
    if not isinstance(flows_tbl, dict):
        ctx.fail("[flows] must be a table of [flows.N] sections")
    flows = []
    for name in sorted(flows_tbl, key=lambda k: (len(k), k)):
        sec = f"flows.{name}"
        f = flows_tbl[name]
        if not isinstance(f, dict):
            ctx.fail(f"[{sec}] must be a table", sec)
        for key in f:
            if key not in FLOW_KEYS:
                ctx.fail(f"unknown key {key!r} in [{sec}]", sec, key)
        try:
            src = topology.node(f["src"]).id
            dst = topology.node(f["dst"]).id
        except KeyError as e:
            ctx.fail(f"[{sec}] is missing {e}", sec)
        except ScenarioError as e:
            ctx.fail(f"[{sec}] {e}", sec)
        try:
            kind = GeneratorKind.parse(f.get("generator", "UdpBackground"))
            goal = QosGoal.parse(f.get("goal", "Jitter"))
        except ValueError as e:
            ctx.fail(f"[{sec}] {e}", sec)
        sp_ratio = ctx.get(f, sec, "sp_ratio", int, sp_default)
        if kind is GeneratorKind.VOICE_CBR:
            gen = GeneratorSpec.voice(sp_ratio)
            ports = (5060, 7080)
        else:
            gen = GeneratorSpec.background(1e6, sp_ratio=sp_ratio)
            ports = (9000 + len(flows), 9000 + len(flows))
        gen = replace(gen, rate_bps=ctx.get(f, sec, "rate_bps", float, gen.rate_bps),
                      payload_bytes=ctx.get(f, sec, "payload_bytes", int, gen.payload_bytes))
        flows.append(FlowSpec(
            FlowKey(src, dst, ctx.get(f, sec, "src_port", int, ports[0]),
                    ctx.get(f, sec, "dst_port", int, ports[1])),
            goal, gen,
            start_s=ctx.get(f, sec, "start_s", float, 0.0),
            stop_s=ctx.get(f, sec, "stop_s", float, float("inf")),
            name=ctx.get(f, sec, "name", str, f"flow{name}")))

    b = data.get("buffer", {})
    cap = b.get("capacity", 20)
    if cap in ("inf", 0):
        cap = None
    elif not isinstance(cap, int) or isinstance(cap, bool) or cap < 0:
        ctx.fail(f"[buffer] capacity = {cap!r} must be a positive integer, 0 or \"inf\"",
                 "buffer", "capacity")
    hold = b.get("hold_timeout_s", 0.060)
    hold = float("inf") if hold == "inf" else ctx.get(b, "buffer", "hold_timeout_s", float, 0.060)
    if not hold >= 0:
        ctx.fail("[buffer] hold_timeout_s must be non-negative or \"inf\"",
                 "buffer", "hold_timeout_s")
    overflow = ctx.get(b, "buffer", "overflow_drop", str, "arrival")
    if overflow not in ("arrival", "head"):
        ctx.fail("[buffer] overflow_drop must be \"arrival\" or \"head\"", "buffer", "overflow_drop")
    offset = ctx.get(b, "buffer", "playout_offset_s", float, 0.080)
    if not offset >= 0:
        ctx.fail("[buffer] playout_offset_s must be non-negative", "buffer", "playout_offset_s")
    buffer = BufferParams(cap, hold, offset, drop_head_on_overflow=overflow == "head")

    r = data.get("run", {})
    keying = ctx.get(rnn, "rnn", "mailbox_keying", str, "flow")
    if keying not in ("flow", "class"):
        ctx.fail("[rnn] mailbox_keying must be \"flow\" or \"class\"", "rnn", "mailbox_keying")
    cfg = RunConfig(
        topology=topology, flows=flows,
        seed=ctx.get(r, "run", "seed", int, 42),
        duration_s=ctx.get(r, "run", "duration_s", float, 600.0),
        window_s=ctx.get(r, "run", "window_s", float, 100.0),
        explore_prob=ctx.get(rnn, "rnn", "explore_prob", float, 0.05),
        epsilon=ctx.get(rnn, "rnn", "epsilon", float, 1e-3),
        sp_ratio=sp_default,
        threshold_factor=ctx.get(rnn, "rnn", "threshold_factor", float, 0.8),
        max_hops=ctx.get(rnn, "rnn", "max_hops", int, 30),
        rl_on_dp_acks=ctx.get(rnn, "rnn", "rl_on_dp_acks", bool, True),
        mailbox_keying=keying,
        freeze_routes=ctx.get(rnn, "rnn", "freeze_routes", bool, False),
        buffer=buffer,
        out_dir=ctx.get(r, "run", "out_dir", str),
        rate_scale=ctx.get(r, "run", "rate_scale", float, 1.0),
        route_wait_s=ctx.get(r, "run", "route_wait_s", float, 0.1),
        measure_flow=ctx.get(r, "run", "measure_flow", str),
        header_bytes=ctx.get(r, "run", "header_bytes", int, 58),
        topology_file=topo_file, source=source)

    if not cfg.duration_s > 0:
        ctx.fail("[run] duration_s must be positive", "run", "duration_s")
    if not cfg.window_s > 0:
        ctx.fail("[run] window_s must be positive", "run", "window_s")
    if not 0 <= cfg.explore_prob <= 1:
        ctx.fail("[rnn] explore_prob must lie in [0, 1]", "rnn", "explore_prob")
    if not cfg.epsilon > 0:
        ctx.fail("[rnn] epsilon must be positive", "rnn", "epsilon")
    if not 0 <= cfg.threshold_factor < 1:
        ctx.fail("[rnn] threshold_factor must lie in [0, 1)", "rnn", "threshold_factor")
    if not cfg.rate_scale > 0:
        ctx.fail("[run] rate_scale must be positive", "run", "rate_scale")
    if cfg.measure_flow and cfg.measure_flow not in {f.label for f in flows}:
        ctx.fail(f"[run] measure_flow {cfg.measure_flow!r} names no flow", "run", "measure_flow")
    if not flows:
        ctx.fail("no [flows.N] sections defined")
    return cfg


def load_config(path: str | os.PathLike) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), str(p), p.parent)


def default_config_text() -> str:
    return resources.files("cpnsim").joinpath("data/default.toml").read_text()


def default_config() -> RunConfig:
    return parse_config(default_config_text(), "<default>")
