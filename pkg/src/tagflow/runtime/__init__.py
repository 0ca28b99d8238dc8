from .topology import OperatorDescriptor, Topology, TopologyError, linear

# dataflow and local import the operator package, which itself imports
# topology, so they are loaded on first access instead of eagerly.
_LAZY = {
    "DataflowInstance": "dataflow",
    "RunHandle": "dataflow",
    "StartupError": "dataflow",
    "Vertex": "dataflow",
    "build_dataflow": "dataflow",
    "stream_process": "dataflow",
    "run_local": "local",
    "start_local": "local",
    "LocalRun": "local",
}


def __getattr__(name):
    if name in _LAZY:
        import importlib

        return getattr(importlib.import_module(f".{_LAZY[name]}", __name__), name)
    raise AttributeError(name)


__all__ = ["OperatorDescriptor", "Topology", "TopologyError", "linear", *_LAZY]
