"""Length-prefixed WireMessages over a stream socket.

Both channel kinds are multiplexed onto one byte stream; the channel kind
rides in header flags bit 0. The envelope's payload_len field is the
length prefix, so unknown message types are skipped without losing
framing.
"""

from __future__ import annotations

import socket
from typing import Optional

from ..errors import LinkClosedError
from .messages import (
    FLAG_CHANNEL_MEDIA,
    FrameDecoder,
    WireMessage,
    serialize_message,
)


class WireSocket:
    """Blocking transport for typed wire messages over a stream socket."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._decoder = FrameDecoder()
        self._pending: list[tuple[int, WireMessage]] = []
        self._closed = False

    @classmethod
    def connect(cls, host: str, port: int, timeout: Optional[float] = None) -> "WireSocket":
        return cls(socket.create_connection((host, port), timeout=timeout))

    def send_message(self, msg: WireMessage, channel: Optional[int] = None) -> None:
        if self._closed:
            raise LinkClosedError("send on closed wire socket")
        try:
            self._sock.sendall(serialize_message(msg, channel=channel))
        except OSError as exc:
            raise LinkClosedError(f"socket send failed: {exc}") from exc

    def receive(self) -> Optional[tuple[int, WireMessage]]:
        """Next (channel_kind, message), or None once the peer closes.

        Unknown message types are skipped transparently; see
        ``skipped_unknown``.
        """
        while not self._pending:
            try:
                chunk = self._sock.recv(65536)
            except OSError as exc:
                raise LinkClosedError(f"socket recv failed: {exc}") from exc
            if not chunk:
                return None
            self._decoder.feed(chunk)
            for header, msg in self._decoder:
                kind = header.flags & FLAG_CHANNEL_MEDIA
                self._pending.append((kind, msg))
        return self._pending.pop(0)

    @property
    def skipped_unknown(self) -> int:
        return self._decoder.skipped_unknown

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def wire_socket_pair() -> tuple[WireSocket, WireSocket]:
    """Connected in-process transport pair, mostly for tests."""
    a, b = socket.socketpair()
    return WireSocket(a), WireSocket(b)
