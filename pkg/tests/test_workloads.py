import pytest

from oracles import records_by_window_key, swa_counts, ysb_counts, ysb_star_ratios
from tagflow.bench.generator import GeneratorConfig
from tagflow.bench.harness import expected_window_count, run_workload

W = 1000
GEN = GeneratorConfig(target_rate=6000, duration_s=3, paced=False, num_campaigns=20, ads_per_campaign=5)


def check_clean(res):
    m = res.metrics
    assert res.run.leftover_messages() == 0
    assert res.run.handle.finished
    assert not any(c.get("errors", 0) or c.get("protocol_errors", 0) for c in m.values())
    assert res.summary.events_late == 0


@pytest.mark.parametrize("ws", [1, 3])
@pytest.mark.parametrize("pipelining", [False, True])
def test_swa_small(ws, pipelining):
    res = run_workload("swa", GEN, ws, W, pipelining, log_events=True)
    check_clean(res)
    got = {w: v for (w, _), v in records_by_window_key(res.records).items()}
    assert got == swa_counts(res.event_log, W)
    assert res.summary.windows_processed == expected_window_count(GEN, W)


@pytest.mark.parametrize("ws", [1, 2])
@pytest.mark.parametrize("pipelining", [False, True])
def test_ysb_small(ws, pipelining):
    res = run_workload("ysb", GEN, ws, W, pipelining, log_events=True)
    check_clean(res)
    assert records_by_window_key(res.records) == ysb_counts(res.event_log, W, GEN.ads_per_campaign)
    assert res.summary.events_dropped == 0


@pytest.mark.parametrize("ws", [1, 2])
@pytest.mark.parametrize("pipelining", [False, True])
def test_ysb_star_small(ws, pipelining):
    res = run_workload("ysb-star", GEN, ws, W, pipelining, log_events=True)
    check_clean(res)
    assert records_by_window_key(res.records) == ysb_star_ratios(res.event_log, W, GEN.ads_per_campaign)


def test_ysb_star_sparse_keys_exercise_inner_join():
    # few events per campaign-window so some windows lack clicks or views
    gen = GeneratorConfig(target_rate=300, duration_s=2, paced=False, num_campaigns=100, ads_per_campaign=10)
    res = run_workload("ysb-star", gen, 2, W, False, log_events=True)
    check_clean(res)
    assert records_by_window_key(res.records) == ysb_star_ratios(res.event_log, W, 10)
    assert res.metrics[8]["join_unmatched"] > 0


def test_serialized_in_process_matches_plain():
    a = run_workload("ysb", GEN, 2, W, False, serialize=True)
    b = run_workload("ysb", GEN, 2, W, False)
    key = lambda r: (r.window_id, r.key, r.value, r.event_time_ms)  # noqa: E731
    assert sorted(map(key, a.records)) == sorted(map(key, b.records))


def test_socket_backend_matches_in_process():
    a = run_workload("ysb-star", GEN, 2, W, True, backend="socket")
    b = run_workload("ysb-star", GEN, 2, W, True)
    key = lambda r: (r.window_id, r.key, r.value, r.event_time_ms)  # noqa: E731
    assert sorted(map(key, a.records)) == sorted(map(key, b.records))


def test_unknown_workload():
    with pytest.raises(ValueError):
        run_workload("nexmark", GEN)
