from __future__ import annotations

import collections
from dataclasses import dataclass

from ..ops.base import Clock
from ..transport import Backend, InProcessHub, TransportConfig, local_socket_cluster
from .dataflow import DataflowInstance, RunHandle, build_dataflow, stream_process
from .topology import Topology


@dataclass
class LocalRun:
    instances: list[DataflowInstance]
    handle: RunHandle
    transports: list

    def operators(self, op_id: int) -> list:
        return [inst.operator(op_id) for inst in self.instances]

    def data_sends(self, op_id: int) -> int:
        return sum(t.stats.data_sends(op_id) for t in self.transports)

    def metrics(self) -> dict[int, collections.Counter]:
        """Per-op counters summed over ranks."""
        out: dict[int, collections.Counter] = collections.defaultdict(collections.Counter)
        for inst in self.instances:
            for op_id, v in inst.vertices.items():
                out[op_id].update(v.collect_metrics())
        return dict(out)

    def leftover_messages(self) -> int:
        n = 0
        for inst in self.instances:
            for v in inst.vertices.values():
                n += sum(len(q) for q in v.queues())
        for t in self.transports:
            n += sum(t.pending().values())
        return n


def start_local(
    topology: Topology,
    world_size: int,
    backend: Backend | str = Backend.IN_PROCESS,
    clock: Clock | None = None,
    queue_capacity: int = 1024,
    serialize: bool = False,
) -> LocalRun:
    backend = Backend(backend)
    clock = clock or Clock()
    if backend is Backend.IN_PROCESS:
        hub = InProcessHub(
            TransportConfig(world_size=world_size, send_queue_capacity=queue_capacity, serialize=serialize)
        )
        transports = [hub.transport(r) for r in range(world_size)]
    else:
        transports = local_socket_cluster(world_size, send_queue_capacity=queue_capacity)
    instances = [
        build_dataflow(topology, world_size, r, transports[r], clock=clock, queue_capacity=queue_capacity)
        for r in range(world_size)
    ]
    handle = stream_process(*instances)
    return LocalRun(instances, handle, transports)


def run_local(topology: Topology, world_size: int, timeout: float | None = 600, **kwargs) -> LocalRun:
    """Run every rank of ``topology`` inside this process until termination."""
    run = start_local(topology, world_size, **kwargs)
    try:
        run.handle.join(timeout)
    except TimeoutError:
        run.handle.abort()
        raise
    for t in run.transports:
        t.shutdown()
    return run
