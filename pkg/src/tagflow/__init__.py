"""Master-less tagged-channel dataflow engine with a streaming benchmark harness."""
from .core import ChannelTag, Event, Message, MessageKind, WindowSpec, decode_tag, encode_tag, window_id

__version__ = "0.1.0"
