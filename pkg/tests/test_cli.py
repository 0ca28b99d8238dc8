import csv
import json
import subprocess
import sys

import pytest

from tagflow.bench.st_search import STSearchConfig
from tagflow.cli import CONFIG_FILE, RunConfig, main, parse_config
from tagflow.core import ConfigError


def sink_rows(path, cols=4):
    with open(path) as fh:
        return [tuple(r[:cols]) for r in csv.reader(fh)]


def test_swa_two_windows(tmp_path):
    out = tmp_path / "o"
    rc = main(["--workload", "swa", "--world-size", "1", "--rate", "1000", "--duration", "20",
               "--window-ms", "10000", "--unpaced", "--out", str(out)])
    assert rc == 0
    rows = sink_rows(out / "sink.csv", 6)
    assert rows[0] == ("window_id", "key", "value", "event_time_ms", "release_ms", "latency_ms")
    assert [(r[0], r[2]) for r in rows[1:]] == [("0", "10000"), ("1", "10000")]
    for name in ("summary.csv", "metrics.csv", CONFIG_FILE):
        assert (out / name).exists()


def test_pipelining_on_off_same_results(tmp_path):
    outs = []
    for mode in ("on", "off"):
        out = tmp_path / mode
        assert main(["--workload", "ysb-star", "--world-size", "2", "--pipelining", mode, "--rate", "5000",
                     "--duration", "4", "--window-ms", "1000", "--unpaced", "--out", str(out)]) == 0
        outs.append(sink_rows(out / "sink.csv"))
    assert outs[0] == outs[1] and len(outs[0]) > 1


def test_fixed_seed_deterministic(tmp_path):
    args = ["--workload", "ysb", "--world-size", "2", "--rate", "4000", "--duration", "3",
            "--window-ms", "1000", "--unpaced", "--seed", "9"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert sink_rows(tmp_path / "a" / "sink.csv") == sink_rows(tmp_path / "b" / "sink.csv")


def test_config_echo_roundtrip(tmp_path):
    out = tmp_path / "o"
    argv = ["--workload", "ysb", "--rate", "3000", "--duration", "2", "--window-ms", "1000",
            "--unpaced", "--pipelining", "on", "--seed", "4", "--out", str(out)]
    assert main(argv) == 0
    cfg, _ = parse_config(argv, environ={})
    assert RunConfig.load(out / CONFIG_FILE) == cfg
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_missing_peers_file_exit_2(tmp_path, capsys):
    rc = main(["--backend", "socket", "--world-size", "2", "--rank", "0", "--peers",
               str(tmp_path / "nope"), "--out", str(tmp_path)])
    assert rc == 2
    assert "peers" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["--backend", "socket", "--world-size", "2"],
        ["--rank", "0"],
        ["--workload", "nexmark"],
        ["--world-size", "0"],
        ["--pipelining", "maybe"],
    ],
)
def test_usage_errors_exit_2(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == 2


def test_peers_world_size_mismatch(tmp_path):
    peers = tmp_path / "peers"
    peers.write_text("0 127.0.0.1:1\n")
    rc = main(["--backend", "socket", "--world-size", "2", "--rank", "0", "--peers", str(peers),
               "--out", str(tmp_path)])
    assert rc == 2


def test_env_overrides():
    cfg, _ = parse_config([], environ={"TAGFLOW_RATE": "1234", "TAGFLOW_WORKLOAD": "ysb", "TAGFLOW_UNPACED": "1",
                                       "TAGFLOW_PIPELINING": "on", "TAGFLOW_WORLD_SIZE": "3"})
    assert (cfg.rate, cfg.workload, cfg.paced, cfg.pipelining, cfg.world_size) == (1234, "ysb", False, True, 3)
    cfg, _ = parse_config([], environ={"TAGFLOW_ST_SEARCH": "true", "TAGFLOW_ST_FACTOR": "5"})
    assert cfg.st_search and cfg.st.backpressure_factor == 5.0
    cfg, _ = parse_config(["--rate", "99"], environ={"TAGFLOW_RATE": "1234"})
    assert cfg.rate == 99


def test_bad_env_value():
    with pytest.raises((ConfigError, SystemExit)):
        parse_config([], environ={"TAGFLOW_PIPELINING": "sometimes"})


def test_runconfig_consistency():
    with pytest.raises(ConfigError):
        RunConfig(backend="socket", world_size=2, peers="p")
    with pytest.raises(ConfigError):
        RunConfig(backend="socket", world_size=2, rank=2, peers="p")
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"surprise": 1})
    cfg = RunConfig(st={"start_rate": 5, "rate_step": 5, "rates": (5, 10)})
    assert isinstance(cfg.st, STSearchConfig) and cfg.st.rates == [5, 10]


def test_st_search_cli(tmp_path):
    out = tmp_path / "st"
    rc = main(["--workload", "swa", "--st-search", "--st-start", "1000", "--st-step", "1000", "--st-max", "3000",
               "--st-run-duration", "1", "--window-ms", "500", "--out", str(out)])
    assert rc == 0
    rows = list(csv.reader((out / "st_report.csv").open()))
    assert rows[0][0] == "rate" and len(rows) == 4
    assert len(list(csv.reader((out / "summary.csv").open()))) == 4


def test_st_search_needs_pacing(tmp_path):
    assert main(["--st-search", "--unpaced", "--out", str(tmp_path)]) == 2


def test_custom_topology_file(tmp_path):
    topo = {
        "operators": [
            {"op_id": 0, "kind": "replay", "successors": [1],
             "params": {"events": [[[1, 2, 100], [1, 3, 1500]]], "window_ms": 1000}},
            {"op_id": 1, "kind": "aggregation", "predecessors": [0], "successors": [2],
             "params": {"function": "sum", "window_ms": 1000}},
            {"op_id": 2, "kind": "sink", "predecessors": [1], "params": {"window_ms": 1000}},
        ]
    }
    p = tmp_path / "topo.json"
    p.write_text(json.dumps(topo))
    out = tmp_path / "o"
    assert main(["--topology", str(p), "--out", str(out)]) == 0
    assert sink_rows(out / "sink.csv")[1:] == [("0", "1", "2", "100"), ("1", "1", "3", "1500")]


def test_socket_ranks_as_processes(tmp_path):
    import socket

    ports = []
    for _ in range(2):
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        ports.append(s.getsockname()[1])
        s.close()
    peers = tmp_path / "peers"
    peers.write_text("".join(f"{r} 127.0.0.1:{p}\n" for r, p in enumerate(ports)))
    out = tmp_path / "sock"
    common = ["--backend", "socket", "--world-size", "2", "--peers", str(peers), "--workload", "ysb",
              "--rate", "4000", "--duration", "3", "--window-ms", "1000", "--unpaced", "--out", str(out),
              "--timeout", "60"]
    procs = [
        subprocess.Popen([sys.executable, "-m", "tagflow", "--rank", str(r), *common], stderr=subprocess.PIPE)
        for r in range(2)
    ]
    for p in procs:
        _, err = p.communicate(timeout=90)
        assert p.returncode == 0, err.decode()
    ref = tmp_path / "ref"
    assert main(["--world-size", "2", "--workload", "ysb", "--rate", "4000", "--duration", "3",
                 "--window-ms", "1000", "--unpaced", "--out", str(ref)]) == 0
    assert sink_rows(out / "sink.csv") == sink_rows(ref / "sink.csv")
    assert (out / "metrics_rank1.csv").exists()
