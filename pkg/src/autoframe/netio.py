"""Socket plumbing shared by module frames, HAL adapters, the simulator
and the deployment supervisor.

Topology: every data producer listens on its bound port and consumers
connect to it.  A consumer announces itself by sending one heartbeat
message carrying its edge's stream id (the "hello"); from then on the
producer stamps everything it sends on that connection with the id, so
stream identity survives end to end.  Connections that never send a hello
are served with stream id 0 (the simulator's device endpoints work this
way).

Everything runs on one single-threaded selector loop per process; reads
are event-driven, sends are bounded-blocking and a peer that cannot drain
within the send timeout is dropped rather than allowed to stall the loop.
"""

from __future__ import annotations

import errno
import logging
import selectors
import socket
import time
from typing import Callable, Optional

from .wire import (
    COMMAND_TOPICS,
    CorruptStream,
    Heartbeat,
    HEADER,
    MAGIC,
    Message,
    StreamDecoder,
    TOPIC_PAYLOADS,
    TopicType,
    VERSION,
    encode_message,
)

log = logging.getLogger(__name__)

BACKOFF_BASE = 0.1
BACKOFF_FACTOR = 2.0
BACKOFF_CAP = 2.0
SEND_TIMEOUT = 1.0
RECV_CHUNK = 1 << 16


def capture_type_for(topic: TopicType) -> Optional[type]:
    """Payload class a stream decoder needs for this topic's captures."""
    if topic in COMMAND_TOPICS:
        return None  # commands are self-describing
    return TOPIC_PAYLOADS[topic]


class Loop:
    """Thin selector wrapper: callbacks keyed by socket, wakeable."""

    def __init__(self):
        self._sel = selectors.DefaultSelector()
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)
        self._sel.register(self._wake_r, selectors.EVENT_READ, self._drain_wake)

    def _drain_wake(self, mask):
        try:
            while self._wake_r.recv(4096):
                pass
        except (BlockingIOError, OSError):
            pass

    def add(self, sock, events, callback: Callable[[int], None]):
        self._sel.register(sock, events, callback)

    def modify(self, sock, events, callback):
        self._sel.modify(sock, events, callback)

    def discard(self, sock):
        try:
            self._sel.unregister(sock)
        except (KeyError, ValueError):
            pass

    def wake(self):
        try:
            self._wake_w.send(b"x")
        except OSError:
            pass

    def step(self, timeout: Optional[float]) -> int:
        events = self._sel.select(timeout)
        for key, mask in events:
            try:
                key.data(mask)
            except Exception:
                log.exception("handler for %r failed", key.fileobj)
        return len(events)

    def close(self):
        for key in list(self._sel.get_map().values()):
            try:
                key.fileobj.close()
            except OSError:
                pass
        self._sel.close()


def _encode_for_stream(payload, body: bytes, stream_id: int, timestamp_us: int) -> bytes:
    # Same layout as wire.encode_message with the payload pre-serialized, so
    # a broadcast reuses one body buffer across subscribers.
    return HEADER.pack(MAGIC, VERSION, int(payload.MSG_TYPE), stream_id,
                       timestamp_us, len(body)) + body


class Publisher:
    """Listening endpoint broadcasting messages to every subscriber."""

    def __init__(self, loop: Loop, name: str, host: str, port: int):
        self.loop = loop
        self.name = name
        self.address = (host, port)
        self._subs: dict[socket.socket, dict] = {}
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(self.address)
        self._listener.listen(16)
        self._listener.setblocking(False)
        self.address = self._listener.getsockname()
        loop.add(self._listener, selectors.EVENT_READ, self._accept)

    @property
    def subscriber_count(self) -> int:
        return len(self._subs)

    def _accept(self, mask):
        try:
            conn, _ = self._listener.accept()
        except OSError:
            return
        conn.setblocking(True)
        conn.settimeout(SEND_TIMEOUT)
        try:
            conn.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF, 1 << 20)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        except OSError:
            pass
        self._subs[conn] = {"stream_id": 0, "decoder": StreamDecoder()}
        self.loop.add(conn, selectors.EVENT_READ, lambda m, c=conn: self._readable(c))

    def _readable(self, conn):
        state = self._subs.get(conn)
        if state is None:
            return
        try:
            data = conn.recv(RECV_CHUNK)
        except OSError:
            data = b""
        if not data:
            self._drop(conn)
            return
        try:
            for msg in state["decoder"].feed(data):
                # A subscriber's hello fixes the stream id of this connection.
                if msg.msg_type == Heartbeat.MSG_TYPE:
                    state["stream_id"] = msg.stream_id
        except CorruptStream:
            self._drop(conn)

    def _drop(self, conn):
        self.loop.discard(conn)
        self._subs.pop(conn, None)
        try:
            conn.close()
        except OSError:
            pass

    def publish(self, payload, timestamp_us: int) -> int:
        """Send to all subscribers; returns the number that received it."""
        if not self._subs:
            return 0
        body = payload.to_bytes()
        sent = 0
        for conn, state in list(self._subs.items()):
            try:
                conn.sendall(_encode_for_stream(payload, body,
                                                state["stream_id"], timestamp_us))
                sent += 1
            except OSError:
                self._drop(conn)
        return sent

    def close(self):
        for conn in list(self._subs):
            self._drop(conn)
        self.loop.discard(self._listener)
        try:
            self._listener.close()
        except OSError:
            pass


class InputConnection:
    """Reconnecting consumer of one remote producer.

    Delivers decoded messages through ``on_message(self, msg)``.  Drops and
    recovers with exponential backoff (0.1 s base, x2, capped at 2 s); a
    corrupt stream closes the connection and reconnects fresh.
    """

    def __init__(self, loop: Loop, name: str, host: str, port: int,
                 topic: Optional[TopicType], stream_id: int,
                 on_message: Callable[["InputConnection", Message], None],
                 on_error: Optional[Callable[[str], None]] = None):
        self.loop = loop
        self.name = name
        self.address = (host, port)
        self.topic = topic
        self.stream_id = stream_id
        self.on_message = on_message
        self.on_error = on_error
        self.connected = False
        self.corrupt_frames = 0
        self.last_rx_monotonic: Optional[float] = None
        self._sock: Optional[socket.socket] = None
        self._decoder: Optional[StreamDecoder] = None
        self._seen_drops = 0
        self._backoff = BACKOFF_BASE
        self._next_attempt = 0.0

    def _report(self, category: str, n: int = 1):
        self.corrupt_frames += n
        if self.on_error is not None:
            for _ in range(n):
                self.on_error(category)

    def tick(self, now: float):
        """Drive reconnection; call regularly from the owner's loop."""
        if self.connected or self._sock is not None or now < self._next_attempt:
            return
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.setblocking(False)
        rc = sock.connect_ex(self.address)
        if rc in (0, errno.EINPROGRESS, errno.EWOULDBLOCK):
            self._sock = sock
            self.loop.add(sock, selectors.EVENT_WRITE, self._connect_ready)
        else:
            sock.close()
            self._schedule_retry(now)

    def _schedule_retry(self, now: float):
        self._next_attempt = now + self._backoff
        self._backoff = min(self._backoff * BACKOFF_FACTOR, BACKOFF_CAP)

    def _connect_ready(self, mask):
        sock = self._sock
        if sock is None:
            return
        err = sock.getsockopt(socket.SOL_SOCKET, socket.SO_ERROR)
        self.loop.discard(sock)
        if err != 0:
            sock.close()
            self._sock = None
            self._schedule_retry(time.monotonic())
            return
        sock.setblocking(True)
        sock.settimeout(SEND_TIMEOUT)
        try:
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sock.sendall(encode_message(Message.of(Heartbeat(), self.stream_id, 0)))
        except OSError:
            sock.close()
            self._sock = None
            self._schedule_retry(time.monotonic())
            return
        self.connected = True
        self._backoff = BACKOFF_BASE
        self._decoder = StreamDecoder(capture_type_for(self.topic) if self.topic else None)
        self.loop.add(sock, selectors.EVENT_READ, self._readable)

    def _readable(self, mask):
        sock = self._sock
        if sock is None:
            return
        try:
            data = sock.recv(RECV_CHUNK)
        except OSError:
            data = b""
        if not data:
            self.disconnect()
            return
        try:
            msgs = self._decoder.feed(data)
        except CorruptStream:
            self._report("corrupt_stream")
            self.disconnect()
            return
        if self._decoder.dropped > self._seen_drops:
            self._report("frame_dropped", self._decoder.dropped - self._seen_drops)
            self._seen_drops = self._decoder.dropped
        if msgs:
            self.last_rx_monotonic = time.monotonic()
        for msg in msgs:
            self.on_message(self, msg)

    def disconnect(self):
        if self._sock is not None:
            self.loop.discard(self._sock)
            try:
                self._sock.close()
            except OSError:
                pass
        self._sock = None
        self._decoder = None
        self._seen_drops = 0
        if self.connected:
            self.connected = False
            self._backoff = BACKOFF_BASE
        self._schedule_retry(time.monotonic())

    def close(self):
        if self._sock is not None:
            self.loop.discard(self._sock)
            try:
                self._sock.close()
            except OSError:
                pass
        self._sock = None
        self.connected = False


class OutboundSender:
    """Fire-and-forget message pipe to a remote ingest endpoint.

    Messages sent while disconnected are dropped; the link re-establishes
    with the standard backoff.  Used for heartbeats to the supervisor and
    for actuator adapters forwarding commands to their devices.
    """

    def __init__(self, name: str, host: str, port: int,
                 connect_timeout: float = 0.05):
        self.name = name
        self.address = (host, port)
        self.connect_timeout = connect_timeout
        self.dropped = 0
        self._sock: Optional[socket.socket] = None
        self._backoff = BACKOFF_BASE
        self._next_attempt = 0.0

    @property
    def connected(self) -> bool:
        return self._sock is not None

    def tick(self, now: float):
        if self._sock is not None or now < self._next_attempt:
            return
        try:
            sock = socket.create_connection(self.address, timeout=self.connect_timeout)
            sock.settimeout(SEND_TIMEOUT)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._sock = sock
            self._backoff = BACKOFF_BASE
        except OSError:
            self._next_attempt = now + self._backoff
            self._backoff = min(self._backoff * BACKOFF_FACTOR, BACKOFF_CAP)

    def send(self, msg: Message) -> bool:
        if self._sock is None:
            self.dropped += 1
            return False
        try:
            self._sock.sendall(encode_message(msg))
            return True
        except OSError:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None
            self._next_attempt = time.monotonic() + self._backoff
            self.dropped += 1
            return False

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
            self._sock = None


class IngestServer:
    """Listening endpoint that consumes messages from any connector."""

    def __init__(self, loop: Loop, name: str, host: str, port: int,
                 on_message: Callable[[Message], None],
                 topic: Optional[TopicType] = None):
        self.loop = loop
        self.name = name
        self.on_message = on_message
        self.topic = topic
        self._conns: dict[socket.socket, StreamDecoder] = {}
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(32)
        self._listener.setblocking(False)
        loop.add(self._listener, selectors.EVENT_READ, self._accept)
        self.address = self._listener.getsockname()

    def _accept(self, mask):
        try:
            conn, _ = self._listener.accept()
        except OSError:
            return
        conn.setblocking(True)
        conn.settimeout(SEND_TIMEOUT)
        self._conns[conn] = StreamDecoder(capture_type_for(self.topic) if self.topic else None)
        self.loop.add(conn, selectors.EVENT_READ, lambda m, c=conn: self._readable(c))

    def _readable(self, conn):
        decoder = self._conns.get(conn)
        if decoder is None:
            return
        try:
            data = conn.recv(RECV_CHUNK)
        except OSError:
            data = b""
        if not data:
            self._drop(conn)
            return
        try:
            msgs = decoder.feed(data)
        except CorruptStream:
            self._drop(conn)
            return
        for msg in msgs:
            self.on_message(msg)

    def _drop(self, conn):
        self.loop.discard(conn)
        self._conns.pop(conn, None)
        try:
            conn.close()
        except OSError:
            pass

    def close(self):
        for conn in list(self._conns):
            self._drop(conn)
        self.loop.discard(self._listener)
        try:
            self._listener.close()
        except OSError:
            pass
