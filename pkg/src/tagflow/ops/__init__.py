from .base import Clock, OpContext, Operator, Router, RoutingStrategy, make_operator, register
from . import stateless, stateful, io  # noqa: F401  (registers operator kinds)
from .stateful import AGGREGATES, AggregateFunction, WatermarkTracker, WindowStore, preaggregate_then_global

__all__ = [
    "Clock",
    "OpContext",
    "Operator",
    "Router",
    "RoutingStrategy",
    "make_operator",
    "register",
    "AGGREGATES",
    "AggregateFunction",
    "WatermarkTracker",
    "WindowStore",
    "preaggregate_then_global",
]
