"""Binary wire protocol, channel semantics, and transports.

:mod:`volustream.wire.messages` owns the bit-exact message layouts,
:mod:`volustream.wire.netsim` the deterministic network simulator, and
:mod:`volustream.wire.live` the length-prefixed stream-socket transport.
"""

from .messages import (
    MAGIC,
    PROTOCOL_VERSION,
    WIRE_HEADER_SIZE,
    Bye,
    ChannelKind,
    FLAG_CHANNEL_MEDIA,
    FLAG_COMPRESSED,
    FLAG_KEYFRAME_REQUEST,
    FrameDecoder,
    Hello,
    HelloAck,
    MsgType,
    StatsReport,
    UnknownMessageTypeError,
    channel_for,
    deserialize_message,
    parse_header,
    serialize_message,
)
from .netsim import (
    EventLoop,
    MediaSendQueue,
    NetworkProfile,
    SendReceipt,
    SimClock,
    SimEndpoint,
    sim_link,
)

__all__ = [
    "MAGIC",
    "PROTOCOL_VERSION",
    "WIRE_HEADER_SIZE",
    "Bye",
    "ChannelKind",
    "FLAG_CHANNEL_MEDIA",
    "FLAG_COMPRESSED",
    "FLAG_KEYFRAME_REQUEST",
    "FrameDecoder",
    "Hello",
    "HelloAck",
    "MsgType",
    "StatsReport",
    "UnknownMessageTypeError",
    "channel_for",
    "deserialize_message",
    "parse_header",
    "serialize_message",
    "EventLoop",
    "MediaSendQueue",
    "NetworkProfile",
    "SendReceipt",
    "SimClock",
    "SimEndpoint",
    "sim_link",
]
