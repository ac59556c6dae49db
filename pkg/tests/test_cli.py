import csv
import json
from pathlib import Path

import pytest

from cpnsim.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from cpnsim.config import ConfigError, default_config, load_config, parse_config
from cpnsim.core import GeneratorKind, QosGoal
from cpnsim.experiment import (REFERENCE_RATES, PLAYOUT_HEADER, SWEEP_HEADER, SweepAborted,
                               parse_rate, parse_rates, run_single, run_sweep, sweep_row)
from cpnsim.metrics import CSV_HEADER
from cpnsim.report import NOT_COMPUTABLE, EmptyArtifacts, correlation_table, report, sweep_curves
from cpnsim.simnet import LOG_HEADER

ROOT = Path(__file__).resolve().parents[1]

SMALL = """
[topology]
preset = "testbed8"
bandwidth_bps = 1e6

[flows.1]
name = "voice"
src = "CPN002"
dst = "CPN026"
generator = "VoiceCBR"
goal = "Jitter"

[flows.2]
name = "bg"
src = "CPN005"
dst = "CPN026"
generator = "UdpBackground"
rate_bps = 300e3

[run]
seed = 42
duration_s = 4
window_s = 1
"""


def small_cfg(**overrides):
    cfg = parse_config(SMALL)
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def test_default_config_describes_the_desk_scale_experiment():
    cfg = default_config()
    sc = cfg.scenario()
    voice = sc.flow_by_label("voice")
    assert voice.generator.kind is GeneratorKind.VOICE_CBR
    assert (voice.key.src_port, voice.key.dst_port) == (5060, 7080)
    assert sc.topology.node(voice.key.src).label == "CPN002"
    assert sc.topology.node(voice.key.dst).label == "CPN026"
    bg = [f for f in sc.flows if f.generator.kind is GeneratorKind.UDP_BACKGROUND]
    assert len(bg) == 6 and all(f.generator.payload_bytes == 1024 for f in bg)
    # rate_scale shrinks links and background together, voice stays nominal
    assert all(l.bandwidth_bps == pytest.approx(1e6) for l in sc.topology.links)
    assert all(f.generator.rate_bps == pytest.approx(300e3) for f in bg)
    assert voice.generator.rate_bps == pytest.approx(172 * 8 / 0.02)
    assert (cfg.seed, cfg.duration_s, cfg.window_s) == (42, 600, 100)


def test_shipped_example_config_matches_builtin():
    assert load_config(ROOT / "configs" / "default.toml").scenario() == default_config().scenario()


@pytest.mark.parametrize("text, needle", [
    ("[run]\nseed = 1\nbogus = 2\n", ":3: unknown key 'bogus' in [run]"),
    ("[nope]\n", ":1: unknown section [nope]"),
    ("[run]\nduration_s = -1\n", ":2: [run] duration_s must be positive"),
    ("[run]\nseed = \"x\"\n", ":2: [run] seed = 'x' is not a valid int"),
    ("[rnn]\nexplore_prob = 2\n", ":2: [rnn] explore_prob"),
    ("[buffer]\noverflow_drop = \"middle\"\n", ":2: [buffer] overflow_drop"),
    ("[flows.1]\nsrc = \"CPN002\"\n", "[flows.1] is missing 'dst'"),
    ("[flows.1]\nsrc = \"CPN002\"\ndst = \"X\"\n", "no node 'X'"),
    ("[flows.1]\nsrc = \"CPN002\"\ndst = \"CPN026\"\ncolour = 1\n", ":4: unknown key 'colour'"),
    ("[run]\nseed = = 1\n", "line 2"),
    ("", "no [flows.N] sections"),
])
def test_config_errors_carry_line_diagnostics(text, needle):
    with pytest.raises(ConfigError) as e:
        parse_config(text, "cfg.toml")
    assert needle in str(e.value)
    assert str(e.value).startswith("cfg.toml")


def test_topology_file(tmp_path):
    (tmp_path / "topo.toml").write_text(
        '[[nodes]]\nlabel = "A"\n[[nodes]]\nlabel = "B"\n'
        '[[links]]\na = "A"\nb = "B"\nbandwidth_bps = 2e6\n')
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text('[topology]\nfile = "topo.toml"\n[flows.1]\nsrc = "A"\ndst = "B"\n'
                        'generator = "VoiceCBR"\n')
    sc = load_config(cfg_path).scenario()
    assert [n.label for n in sc.topology.nodes] == ["A", "B"]
    assert sc.topology.links[0].bandwidth_bps == 2e6


def test_missing_topology_file_names_the_path(tmp_path, capsys):
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text('[topology]\nfile = "gone.toml"\n')
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert str(tmp_path / "gone.toml") in capsys.readouterr().err


def test_run_writes_artifacts_with_stable_headers(tmp_path):
    art = run_single(small_cfg(), tmp_path)
    lines = (tmp_path / "events.csv").read_text().splitlines()
    assert lines[0] == LOG_HEADER
    rows = list(csv.reader(open(tmp_path / "metrics.csv")))
    assert rows[0] == CSV_HEADER
    # 4 s in 1 s windows, 2 flows
    assert len(rows) == 1 + 2 * 4
    assert [r[1] for r in rows[1:5]] == ["0.000000000", "1.000000000", "2.000000000",
                                         "3.000000000"]
    assert next(csv.reader(open(tmp_path / "playout.csv"))) == PLAYOUT_HEADER
    assert (tmp_path / "rnn_dump.csv").read_text().startswith("node,goal,destination,")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["measured_flow"] == "voice" and art.summary == summary


def test_golden_headers():
    assert CSV_HEADER == ["flow", "window_start_s", "sent", "received", "net_lost",
                          "buffer_discards", "switches", "reorders", "reorder_density",
                          "loss_density", "mean_delay_s", "mean_jitter_s"]
    assert LOG_HEADER == "outcome,kind,flow,seq,send_s,event_s,path"
    assert SWEEP_HEADER == ["rate_bps", "voice_goal", "background_goal", "seed", "mean_delay_s",
                            "mean_jitter_s", "e2e_loss_ratio", "switch_rate"]
    assert PLAYOUT_HEADER == ["flow", "inserted", "played", "discards_late",
                              "discards_overflow", "duplicates", "held", "max_queue",
                              "mean_queue", "mean_playout_delay_s"]


def test_same_config_and_seed_give_identical_files(tmp_path):
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text(SMALL)
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / d)]) == EXIT_OK
    for name in ("events.csv", "metrics.csv", "playout.csv", "rnn_dump.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_overrides_and_env_out_dir(tmp_path, monkeypatch):
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text(SMALL)
    monkeypatch.setenv("CPNSIM_OUT", str(tmp_path / "env"))
    assert main(["run", "--config", str(cfg_path), "--seed", "7", "--duration", "2"]) == EXIT_OK
    summary = json.loads((tmp_path / "env" / "summary.json").read_text())
    assert (summary["seed"], summary["duration_s"]) == (7, 2.0)


def test_validate_and_usage_errors(tmp_path, capsys):
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text(SMALL)
    assert main(["validate", "--config", str(cfg_path)]) == EXIT_OK
    assert "2 flows" in capsys.readouterr().out
    assert main(["validate", "--config", str(tmp_path / "missing.toml")]) == EXIT_CONFIG
    assert main(["explode"]) == EXIT_CONFIG
    assert main(["run", "--duration", "0"]) == EXIT_CONFIG


def test_runtime_failure_exit_code(tmp_path, monkeypatch):
    import cpnsim.cli as cli

    def boom(*a, **k):
        raise RuntimeError("simulated fault")
    monkeypatch.setattr(cli, "run_single", boom)
    assert main(["run", "--duration", "1", "--out", str(tmp_path)]) == EXIT_RUNTIME


def test_rate_parsing():
    assert parse_rate("3.2M") == 3.2e6
    assert parse_rate("500k") == 500e3
    assert parse_rate("1e6") == 1e6
    assert parse_rates("1M, 2M") == [1e6, 2e6]
    for bad in ("0", "-1M", "fast"):
        with pytest.raises(ValueError):
            parse_rate(bad)


def test_sweep_single_rate_single_pair(tmp_path):
    rows = run_sweep(small_cfg(duration_s=2.0), [200e3], tmp_path,
                     pairs=[(QosGoal.DELAY, QosGoal.JITTER)])
    assert len(rows) == 1
    table = list(csv.reader(open(tmp_path / "summary.csv")))
    assert table[0] == SWEEP_HEADER and len(table) == 2
    assert table[1][1:3] == ["Delay", "Jitter"]
    # the row is a pure function of the run's own artifacts
    run_dir = next((tmp_path / "runs").iterdir())
    assert sweep_row(run_dir, 200e3, QosGoal.DELAY, QosGoal.JITTER) == table[1]


def test_sweep_covers_every_goal_pair(tmp_path):
    rows = run_sweep(small_cfg(duration_s=1.0), [100e3, 200e3], tmp_path)
    assert len(rows) == 2 * 4
    assert {(r[1], r[2]) for r in rows} == {(a, b) for a in ("Delay", "Jitter")
                                            for b in ("Delay", "Jitter")}


def test_reference_rate_list_gives_36_runs():
    assert len(REFERENCE_RATES) == 9 and REFERENCE_RATES[2] == 3.2e6
    from cpnsim.experiment import GOAL_PAIRS
    assert len(REFERENCE_RATES) * len(GOAL_PAIRS) == 36


def test_sweep_rejects_non_positive_rates(tmp_path, capsys):
    with pytest.raises(ValueError):
        run_sweep(small_cfg(), [0.0], tmp_path)
    assert main(["sweep", "--rates", "0", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_failed_sweep_keeps_partial_results(tmp_path, monkeypatch):
    import cpnsim.experiment as ex
    real = ex.run_single
    calls = []

    def flaky(cfg, out_dir, write_events):
        calls.append(out_dir)
        if len(calls) == 2:
            raise RuntimeError("disk on fire")
        return real(cfg, out_dir, write_events)
    monkeypatch.setattr(ex, "run_single", flaky)
    with pytest.raises(SweepAborted) as e:
        run_sweep(small_cfg(duration_s=1.0), [100e3, 200e3], tmp_path,
                  pairs=[(QosGoal.JITTER, QosGoal.JITTER)])
    assert len(e.value.rows) == 1
    assert len(list(csv.reader(open(tmp_path / "summary.csv")))) == 2


def test_sweep_cli(tmp_path, capsys):
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text(SMALL)
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg_path), "--duration", "1", "--rates", "100k,200k",
                 "--pairs", "Jitter/Jitter", "--seeds", "2", "--out", str(out)]) == EXIT_OK
    assert len(list(csv.reader(open(out / "summary.csv")))) == 1 + 2 * 2
    assert main(["sweep", "--pairs", "Jitter-Delay", "--out", str(out)]) == EXIT_CONFIG


def test_report_on_run_and_sweep(tmp_path):
    run_single(small_cfg(), tmp_path / "run")
    run_sweep(small_cfg(duration_s=1.0), [100e3, 200e3], tmp_path / "sweep")
    written, table = report([tmp_path / "run", tmp_path / "sweep"], tmp_path / "rep")
    names = {p.name for p in written}
    assert {"sweep_mean_delay_s.png", "sweep_mean_jitter_s.png", "sweep_e2e_loss_ratio.png",
            "sweep_switch_rate.png", "correlation.txt"} <= names
    assert any(n.startswith("timeseries_") for n in names)
    assert "reorders_vs_switches" in table and "run:voice" in table
    curves = sweep_curves(list(csv.DictReader(open(tmp_path / "sweep" / "summary.csv"))))
    for metric in curves.values():
        assert len(metric) == 4 and all(len(pts) == 2 for pts in metric.values())


def test_report_idle_run_is_not_computable():
    idle = {"f": [dict(switches=0, reorders=0, net_lost=0, buffer_discards=0)] * 5}
    assert correlation_table(idle) == [["f", "5", NOT_COMPUTABLE, NOT_COMPUTABLE]]


def test_report_heavy_run_reports_a_coefficient():
    wins = [dict(switches=s, reorders=r, net_lost=l, buffer_discards=0)
            for s, r, l in [(1, 2, 0), (5, 7, 1), (3, 3, 4), (8, 9, 2)]]
    row = correlation_table({"v": wins})[0]
    assert float(row[2]) > 0.9 and row[3] != NOT_COMPUTABLE


def test_report_on_empty_input(tmp_path, capsys):
    with pytest.raises(EmptyArtifacts):
        report([tmp_path], tmp_path / "rep")
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG
    assert "no metrics.csv" in capsys.readouterr().err
