import threading
import time

import pytest

from tagflow.core import ChannelTag, ConfigError, Event, Message
from tagflow.transport import (
    Backend,
    InProcessHub,
    RankAddress,
    TransportConfig,
    TransportError,
    read_peers_file,
)
from transport_harness import interleaved_traffic, make_transports, shutdown

BACKENDS = [Backend.IN_PROCESS.value, Backend.SOCKET.value]


@pytest.fixture(params=BACKENDS)
def pair(request):
    ts = make_transports(request.param, 2)
    yield ts
    shutdown(ts)


def test_send_to_self(pair):
    tag = ChannelTag(0, 1, 0, 2)
    m = Message.data(tag, [Event(1, 2, 3, b"p")])
    pair[0].send(0, tag, m)
    assert pair[0].recv(tag, timeout=5) == m


def test_send_then_recv_identity(pair):
    tag = ChannelTag(0, 1, 1, 2)
    m = Message.marker(tag, 42)
    pair[0].send(1, tag, m)
    assert pair[1].recv(tag, timeout=5) == m


def test_same_tag_fifo(pair):
    tag = ChannelTag(1, 3, 0, 4)
    for i in range(20):
        pair[1].send(0, tag, Message.data(tag, [Event(i, 0, 0)]))
    assert [pair[0].recv(tag, timeout=5).events[0].key for _ in range(20)] == list(range(20))


def test_recv_blocks_until_send(pair):
    tag = ChannelTag(0, 0, 1, 0)
    got = []
    t = threading.Thread(target=lambda: got.append(pair[1].recv(tag, timeout=5)))
    t.start()
    time.sleep(0.1)
    assert not got
    pair[0].send(1, tag, Message.terminate(tag))
    t.join(5)
    assert got and got[0].kind.name == "TERMINATE"


def test_recv_timeout(pair):
    with pytest.raises(TimeoutError):
        pair[0].recv(ChannelTag(1, 1, 0, 1), timeout=0.05)


def test_tag_target_must_match_destination(pair):
    tag = ChannelTag(0, 0, 1, 0)
    with pytest.raises(TransportError):
        pair[0].send(0, tag, Message.terminate(tag))


def test_single_receiver_per_tag():
    hub = InProcessHub(TransportConfig(world_size=1))
    tr = hub.transport(0)
    tag = ChannelTag(0, 0, 0, 0)
    tr.send(0, tag, Message.terminate(tag))
    tr.recv(tag, timeout=1)
    errs = []

    def other():
        try:
            tr.recv(tag, timeout=0.05)
        except TransportError as e:
            errs.append(e)
        except TimeoutError:
            pass

    t = threading.Thread(target=other)
    t.start()
    t.join()
    assert errs


@pytest.mark.parametrize("backend", BACKENDS)
def test_randomized_isolation(backend):
    res = interleaved_traffic(backend, n_tags=16, per_tag=20, seed=3)
    assert res["misrouted"] == res["reordered"] == res["lost"] == res["leftover"] == 0


@pytest.mark.parametrize("backend", BACKENDS)
def test_send_counters(backend):
    ts = make_transports(backend, 1)
    tag = ChannelTag(0, 5, 0, 6)
    ts[0].send(0, tag, Message.data(tag, [Event(1, 1, 1)]))
    ts[0].send(0, tag, Message.marker(tag, 0))
    assert ts[0].stats.data_sends(5) == 1
    assert ts[0].stats.data_sends(6) == 0
    shutdown(ts)


def test_config_validation():
    with pytest.raises(ConfigError):
        TransportConfig(world_size=0)
    with pytest.raises(ConfigError):
        TransportConfig(world_size=300)
    with pytest.raises(ConfigError):
        TransportConfig(world_size=2, backend=Backend.SOCKET, addresses=[RankAddress(0, "127.0.0.1:1")])


def test_peers_file(tmp_path):
    p = tmp_path / "peers"
    p.write_text("# ranks\n1 10.0.0.2:7001\n0 10.0.0.1:7000\n\n")
    peers = read_peers_file(p)
    assert [(a.rank, a.host_port) for a in peers] == [(0, ("10.0.0.1", 7000)), (1, ("10.0.0.2", 7001))]


@pytest.mark.parametrize("text", ["0 nohostport\n", "x 1.2.3.4:5\n", "0 a:1\n0 b:2\n"])
def test_bad_peers_file(tmp_path, text):
    p = tmp_path / "peers"
    p.write_text(text)
    with pytest.raises(ConfigError):
        read_peers_file(p)


def test_serialized_in_process_matches():
    hub = InProcessHub(TransportConfig(world_size=1, serialize=True))
    tr = hub.transport(0)
    tag = ChannelTag(0, 0, 0, 1)
    m = Message.data(tag, [Event(2**63, 5, 7, b"\x00" * 30)])
    tr.send(0, tag, m)
    assert tr.recv(tag, timeout=1) == m
