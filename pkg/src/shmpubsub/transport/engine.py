"""Per-process pub/sub engine.

A publisher advertises a topic: the engine registers its control socket with
the registry and answers SUBSCRIBE requests on it. What a subscription wires
up depends on the transport kind:

* SHM: the publisher creates a queue ``{topic}/{publisher}/{subscriber}`` in
  the shared segment; publish pushes one handle clone per subscriber.
* TCP / UDS: the subscriber listens, the publisher connects; frames are
  written per subscriber.
* UDP: the subscriber binds a datagram socket; frames go out in chunks.
* HYBRID: payload in the segment, a descriptor frame per subscriber over a
  Unix stream socket. The subscriber acks each descriptor it adopts; counts
  still unacked when the connection drops are reaped by the publisher.

Subscriber-side, each (publisher, topic) pair gets a :class:`Puller` with its
own consumer thread which stamps receive time and hands a :class:`Delivery`
to a callback or to the subscription's channel.
"""

from __future__ import annotations

import collections
import itertools
import logging
import os
import queue
import socket
import struct
import tempfile
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Union

from ..ptr import SharedHandle
from ..segment import Segment
from ..shmqueue import DEFAULT_CAPACITY, FullPolicy, QueueClosed, ShmQueue
from . import wire
from .message import (
    IMAGE_HEADER,
    Delivery,
    ImageMessage,
    LoanedImage,
    TransportKind,
    read_image_header,
)
from .protocol import RemoteError, Verb, call, connect_unix, recv_message, send_message
from .registry import PublisherInfo, RegistryClient
from .wire import Disconnected, FrameKind

log = logging.getLogger(__name__)

ENV_SEGMENT = "SHMPUBSUB_SEGMENT"
WATCHDOG_S = 5.0
_ACK = struct.Struct("<Q")
_ids = itertools.count()


class EngineError(RuntimeError):
    pass


class SegmentMismatch(EngineError):
    pass


class NoPublisher(EngineError, TimeoutError):
    pass


class SubscriptionClosed(EOFError):
    pass


@dataclass
class PublishReport:
    seq: int
    stamp_ns: int
    delivered_to: int
    dropped: int


def _temp_socket_path(tag: str) -> str:
    return os.path.join(tempfile.gettempdir(), f"shmps-{os.getpid()}-{tag}-{next(_ids)}.sock")


def _parse_endpoint(endpoint: str):
    scheme, _, rest = endpoint.partition(":")
    if scheme in ("tcp", "udp"):
        host, _, port = rest.rpartition(":")
        return scheme, (host, int(port))
    if scheme == "uds":
        return scheme, rest
    raise EngineError(f"bad endpoint {endpoint!r}")


# -- publisher side ---------------------------------------------------------


class _Outlet:
    def __init__(self, subscriber_id: str):
        self.subscriber_id = subscriber_id
        self.dead = False

    def close(self):
        pass


class _QueueOutlet(_Outlet):
    def __init__(self, subscriber_id, q: ShmQueue):
        super().__init__(subscriber_id)
        self.queue = q
        self.policy = q.policy

    def close(self, drain_timeout: float = WATCHDOG_S):
        deadline = time.monotonic() + drain_timeout
        while len(self.queue) and not self.queue.closed and time.monotonic() < deadline:
            time.sleep(0.001)
        self.queue.close()
        self.queue.detach()


class _StreamOutlet(_Outlet):
    def __init__(self, subscriber_id, sock: socket.socket):
        super().__init__(subscriber_id)
        self.sock = sock

    def close(self):
        try:
            wire.send_frame(self.sock, FrameKind.END, "", 0, 0)
            self.sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        self.sock.close()


class _DatagramOutlet(_Outlet):
    def __init__(self, subscriber_id, sock: socket.socket, addr):
        super().__init__(subscriber_id)
        self.sock = sock
        self.addr = addr
        self.end_seq = 0

    def close(self):
        for _ in range(3):
            try:
                wire.send_datagram_frame(self.sock, self.addr, FrameKind.END, "", self.end_seq, 0)
            except OSError:
                pass
            time.sleep(0.001)


class _HybridOutlet(_StreamOutlet):
    """Tracks counts handed out in descriptors until the subscriber acks them."""

    def __init__(self, subscriber_id, sock, segment: Segment):
        super().__init__(subscriber_id, sock)
        self.segment = segment
        self.lock = threading.Lock()
        self.inflight: collections.Counter = collections.Counter()
        self.reaped = 0
        self.reader = threading.Thread(target=self._read_acks, name=f"acks-{subscriber_id}", daemon=True)
        self.reader.start()

    def hand_out(self, cb: int) -> bool:
        with self.lock:
            if self.dead:
                return False
            self.inflight[cb] += 1
            return True

    def _read_acks(self):
        buf = bytearray(_ACK.size * 64)
        pending = b""
        try:
            while True:
                n = self.sock.recv_into(buf)
                if n == 0:
                    break
                data = pending + bytes(buf[:n])
                whole = len(data) - len(data) % _ACK.size
                with self.lock:
                    for (cb,) in _ACK.iter_unpack(data[:whole]):
                        self.inflight[cb] -= 1
                        if self.inflight[cb] <= 0:
                            del self.inflight[cb]
                pending = data[whole:]
        except OSError:
            pass
        self.reap()

    def reap(self) -> int:
        """Drop every count the subscriber never acknowledged."""
        with self.lock:
            self.dead = True
            owed = list(self.inflight.items())
            self.inflight.clear()
        n = 0
        for cb, count in owed:
            for _ in range(count):
                SharedHandle.adopt(self.segment, cb).drop()
                n += 1
        self.reaped += n
        return n

    def close(self, linger: float = WATCHDOG_S):
        try:
            wire.send_frame(self.sock, FrameKind.END, "", 0, 0)
        except OSError:
            pass
        # The subscriber hangs up after END; its acks arrive first.
        self.reader.join(linger)
        self.sock.close()
        self.reader.join(1.0)
        self.reap()


class Pusher:
    """Publisher end of one topic; fans each message out in attachment order."""

    def __init__(self, engine: "ShmEngine", topic: str, kind: TransportKind, nodelay: bool,
                 capacity: int, policy: FullPolicy):
        self.engine = engine
        self.topic = topic
        self.kind = kind
        self.nodelay = nodelay
        self.capacity = capacity
        self.policy = policy
        self.drop_chunk: Optional[Callable[[int, int], bool]] = None
        self._outlets: list[_Outlet] = []
        self._lock = threading.Condition()
        self._udp: Optional[socket.socket] = None
        self.closed = False

    @property
    def publisher_id(self) -> str:
        return self.engine.name

    @property
    def subscriber_ids(self) -> list[str]:
        with self._lock:
            return [o.subscriber_id for o in self._outlets]

    @property
    def subscriber_count(self) -> int:
        with self._lock:
            return len(self._outlets)

    def wait_for_subscribers(self, n: int, timeout: float = WATCHDOG_S) -> None:
        deadline = time.monotonic() + timeout
        with self._lock:
            while len(self._outlets) < n:
                left = deadline - time.monotonic()
                if left <= 0:
                    raise TimeoutError(f"{len(self._outlets)}/{n} subscribers on {self.topic!r}")
                self._lock.wait(left)

    def queue_name(self, subscriber_id: str) -> str:
        return f"{self.topic}/{self.publisher_id}/{subscriber_id}"

    # called from the control thread
    def attach(self, subscriber_id: str, kind: TransportKind, segment_name: str,
               endpoint: str, nodelay: bool) -> str:
        if kind is not self.kind:
            raise RemoteError(f"topic {self.topic!r} is {self.kind.value}, not {kind.value}")
        if self.kind.in_segment:
            mine = self.engine.segment.name
            if segment_name != mine:
                raise RemoteError(f"segment mismatch: publisher uses {mine!r}, subscriber {segment_name!r}")
        qname = ""
        if kind is TransportKind.SHM:
            qname = self.queue_name(subscriber_id)
            outlet = _QueueOutlet(subscriber_id, ShmQueue.create(self.engine.segment, qname, self.capacity, self.policy))
        elif kind is TransportKind.UDP:
            _, addr = _parse_endpoint(endpoint)
            if self._udp is None:
                self._udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            outlet = _DatagramOutlet(subscriber_id, self._udp, addr)
        else:
            scheme, addr = _parse_endpoint(endpoint)
            family = socket.AF_INET if scheme == "tcp" else socket.AF_UNIX
            s = socket.socket(family, socket.SOCK_STREAM)
            s.settimeout(WATCHDOG_S)
            s.connect(addr)
            s.settimeout(None)
            if family == socket.AF_INET:
                s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, int(bool(nodelay or self.nodelay)))
            if kind is TransportKind.HYBRID:
                outlet = _HybridOutlet(subscriber_id, s, self.engine.segment)
            else:
                outlet = _StreamOutlet(subscriber_id, s)
        with self._lock:
            self._outlets.append(outlet)
            self._lock.notify_all()
        return qname

    def loan(self, size: int) -> LoanedImage:
        """A fresh zeroed image in the segment, owned by the caller."""
        if not self.kind.in_segment:
            raise EngineError(f"{self.kind.value} topics do not loan segment memory")
        return LoanedImage.allocate(self.engine.segment, size)

    def publish(self, message: Union[LoanedImage, ImageMessage], seq: Optional[int] = None) -> PublishReport:
        if self.closed:
            raise EngineError("pusher closed")
        with self._lock:
            outlets = list(self._outlets)
        if self.kind.in_segment:
            if isinstance(message, LoanedImage):
                image, owned = message, False
                seq = 0 if seq is None else seq
            else:
                image, owned, seq = self.loan(len(message.payload)), True, message.seq
                image.data[:] = message.payload
                wire.count_copy(len(message.payload))
            try:
                if self.kind is TransportKind.SHM:
                    return self._publish_shm(outlets, image, seq)
                return self._publish_hybrid(outlets, image, seq)
            finally:
                if owned:
                    image.drop()
        if isinstance(message, LoanedImage):
            raise EngineError("socket transports publish ImageMessage payloads")
        return self._publish_socket(outlets, message)

    def _publish_shm(self, outlets, image: LoanedImage, seq: int) -> PublishReport:
        stamp = image.stamp(seq)
        delivered = dropped = 0
        h = image.handle
        for o in outlets:
            q = o.queue
            lossy = o.policy is FullPolicy.DROP_NEWEST
            before = q.drops if lossy else 0
            try:
                q.push_clone(h, timeout=WATCHDOG_S)
            except QueueClosed:
                self._remove(o)
                dropped += 1
                continue
            except TimeoutError:
                dropped += 1
                continue
            if lossy and q.drops != before:
                dropped += 1
            else:
                delivered += 1
        return PublishReport(seq, stamp, delivered, dropped)

    def _publish_hybrid(self, outlets, image: LoanedImage, seq: int) -> PublishReport:
        stamp = image.stamp(seq)
        seg_name = self.engine.segment.name
        delivered = dropped = 0
        h = image.handle
        desc = wire.encode_descriptor(seg_name, h.offset)
        for o in outlets:
            cb = h.clone().release()
            if not o.hand_out(cb):
                SharedHandle.adopt(self.engine.segment, cb).drop()
                dropped += 1
                continue
            try:
                wire.send_frame(o.sock, FrameKind.DESCRIPTOR, self.topic, seq, stamp, desc)
                delivered += 1
            except OSError:
                self._remove(o)
                o.reap()
                dropped += 1
        return PublishReport(seq, stamp, delivered, dropped)

    def _publish_socket(self, outlets, message: ImageMessage) -> PublishReport:
        payload = message.payload
        stamp = time.monotonic_ns()
        message.stamp_ns = stamp
        delivered = dropped = 0
        for o in outlets:
            try:
                if self.kind is TransportKind.UDP:
                    wire.send_datagram_frame(o.sock, o.addr, FrameKind.DATA, self.topic, message.seq,
                                             stamp, payload, drop=self.drop_chunk)
                    o.end_seq = message.seq + 1
                else:
                    wire.send_frame(o.sock, FrameKind.DATA, self.topic, message.seq, stamp, payload)
                delivered += 1
            except OSError:
                self._remove(o)
                dropped += 1
        return PublishReport(message.seq, stamp, delivered, dropped)

    def _remove(self, outlet: _Outlet) -> None:
        with self._lock:
            if outlet in self._outlets:
                self._outlets.remove(outlet)
        outlet.dead = True
        try:
            outlet.close()
        except Exception:  # noqa: BLE001 - best effort on a dead peer
            log.debug("closing outlet %s failed", outlet.subscriber_id, exc_info=True)

    def outlet(self, subscriber_id: str) -> _Outlet:
        with self._lock:
            for o in self._outlets:
                if o.subscriber_id == subscriber_id:
                    return o
        raise KeyError(subscriber_id)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        with self._lock:
            outlets, self._outlets = self._outlets, []
        for o in outlets:
            try:
                o.close()
            except Exception:  # noqa: BLE001
                log.debug("closing outlet %s failed", o.subscriber_id, exc_info=True)
        if self._udp is not None:
            self._udp.close()


# -- subscriber side --------------------------------------------------------

_END = object()


class Puller:
    """Consumer for one (publisher, topic) pair, running its own thread."""

    def __init__(self, subscription: "Subscription", info: PublisherInfo, kind: TransportKind):
        self.subscription = subscription
        self.topic = subscription.topic
        self.publisher_id = info.publisher_id
        self.kind = kind
        self.delivered = 0
        self.reassembly_discards = 0
        self.error: Optional[BaseException] = None
        self.ended = threading.Event()
        self.queue: Optional[ShmQueue] = None
        self.sock: Optional[socket.socket] = None
        self._closing = False
        self._thread: Optional[threading.Thread] = None

    def start(self):
        target = {
            TransportKind.SHM: self._run_shm,
            TransportKind.TCP: self._run_stream,
            TransportKind.UDS: self._run_stream,
            TransportKind.HYBRID: self._run_stream,
            TransportKind.UDP: self._run_udp,
        }[self.kind]
        self._thread = threading.Thread(target=self._guard, args=(target,),
                                        name=f"puller-{self.topic}-{self.publisher_id}", daemon=True)
        self._thread.start()

    def _guard(self, target):
        try:
            target()
        except BaseException as e:  # noqa: BLE001 - surfaced through .error
            if not self._closing:
                self.error = e
                log.warning("puller %s/%s failed: %r", self.topic, self.publisher_id, e)
        finally:
            self.ended.set()
            self.subscription._puller_ended(self)

    def _deliver(self, d: Delivery):
        self.delivered += 1
        self.subscription._deliver(d)

    def _run_shm(self):
        q = self.queue
        try:
            while True:
                try:
                    item = q.pop_item()
                except QueueClosed:
                    return
                recv = time.monotonic_ns()
                h = item.handle
                seq, stamp = read_image_header(h)
                self._deliver(Delivery(self.topic, self.publisher_id, seq, stamp, recv,
                                       h.payload[IMAGE_HEADER:], h, h.payload_offset + IMAGE_HEADER))
        finally:
            q.detach()

    def _run_stream(self):
        sock = self.sock
        seg = self.subscription.engine.segment if self.kind.in_segment else None
        try:
            while True:
                try:
                    kind, topic, seq, stamp, payload = wire.recv_frame(sock)
                except (Disconnected, OSError):
                    return
                recv = time.monotonic_ns()
                if kind == FrameKind.END:
                    return
                if kind == FrameKind.DESCRIPTOR:
                    name, cb = wire.decode_descriptor(payload)
                    if name != seg.name:
                        raise SegmentMismatch(f"descriptor for segment {name!r}")
                    h = SharedHandle.adopt(seg, cb)
                    sock.sendall(_ACK.pack(cb))
                    self._deliver(Delivery(topic, self.publisher_id, seq, stamp, recv,
                                           h.payload[IMAGE_HEADER:], h, h.payload_offset + IMAGE_HEADER))
                else:
                    self._deliver(Delivery(topic, self.publisher_id, seq, stamp, recv, payload))
        finally:
            sock.close()

    def _run_udp(self):
        sock = self.sock
        r = wire.Reassembler(max_inflight=2)
        buf = bytearray(wire.MAX_DATAGRAM + 64)
        view = memoryview(buf)
        try:
            while True:
                try:
                    n = sock.recv_into(buf)
                except OSError:
                    return
                frame = r.feed(view[:n])
                self.reassembly_discards = r.discarded
                if frame is None:
                    continue
                recv = time.monotonic_ns()
                kind, topic, seq, stamp, plen, hlen = wire.parse_header(frame)
                if kind == FrameKind.END:
                    return
                wire.count_copy(plen)
                self._deliver(Delivery(topic, self.publisher_id, seq, stamp, recv,
                                       memoryview(frame)[hlen:]))
        finally:
            r.flush()
            self.reassembly_discards = r.discarded
            sock.close()

    def close(self):
        self._closing = True
        if self.queue is not None:
            self.queue.close()
        elif self.sock is not None:
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            if self.kind is TransportKind.UDP:
                self.sock.close()

    def join(self, timeout: Optional[float] = None) -> bool:
        if self._thread is not None:
            self._thread.join(timeout)
        return self.ended.is_set()


class Subscription:
    """All pullers for one topic; delivers to a callback or a shared channel."""

    def __init__(self, engine: "ShmEngine", topic: str, kind: TransportKind, subscriber_id: str,
                 sink: Optional[Callable[[Delivery], None]]):
        self.engine = engine
        self.topic = topic
        self.kind = kind
        self.subscriber_id = subscriber_id
        self.sink = sink
        self.channel: "queue.SimpleQueue" = queue.SimpleQueue()
        self.pullers: list[Puller] = []
        self._open = 0
        self._lock = threading.Lock()

    def _deliver(self, d: Delivery):
        if self.sink is not None:
            self.sink(d)
        else:
            self.channel.put(d)

    def _puller_ended(self, p: Puller):
        with self._lock:
            self._open -= 1
            last = self._open == 0
        if last and self.sink is None:
            self.channel.put(_END)

    def receive(self, timeout: Optional[float] = None) -> Delivery:
        """Next delivery from any publisher.

        Raises TimeoutError after ``timeout`` seconds, SubscriptionClosed once
        every publisher has ended.
        """
        try:
            d = self.channel.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"no message on {self.topic!r} within {timeout}s") from None
        if d is _END:
            self.channel.put(_END)
            raise SubscriptionClosed(self.topic)
        return d

    @property
    def delivered(self) -> int:
        return sum(p.delivered for p in self.pullers)

    @property
    def reassembly_discards(self) -> int:
        return sum(p.reassembly_discards for p in self.pullers)

    @property
    def ended(self) -> bool:
        return all(p.ended.is_set() for p in self.pullers)

    def wait_ended(self, timeout: Optional[float] = None) -> bool:
        deadline = None if timeout is None else time.monotonic() + timeout
        for p in self.pullers:
            left = None if deadline is None else max(0.0, deadline - time.monotonic())
            if not p.join(left):
                return False
        return True

    def close(self):
        for p in self.pullers:
            p.close()
        for p in self.pullers:
            p.join(WATCHDOG_S)
        while True:
            try:
                d = self.channel.get_nowait()
            except queue.Empty:
                break
            if d is not _END:
                d.release()


# -- engine -----------------------------------------------------------------


class ShmEngine:
    """One per participating process (by convention; not enforced)."""

    def __init__(self, name: str, segment: Union[Segment, str, None] = None,
                 registry: Optional[str] = None, registry_timeout: float = WATCHDOG_S):
        self.name = name
        self._own_segment = False
        if isinstance(segment, str):
            segment = Segment.open(segment)
            self._own_segment = True
        self._segment = segment
        self.registry = RegistryClient(registry, registry_timeout)
        self._pushers: dict[str, Pusher] = {}
        self._subs: list[Subscription] = []
        self._lock = threading.RLock()
        self._control: Optional[socket.socket] = None
        self.control_path: Optional[str] = None
        self._threads: list[threading.Thread] = []
        self.closed = False

    @property
    def segment(self) -> Segment:
        if self._segment is None:
            name = os.environ.get(ENV_SEGMENT)
            if not name:
                raise EngineError(f"no segment given and ${ENV_SEGMENT} is unset")
            self._segment = Segment.open(name)
            self._own_segment = True
        return self._segment

    @property
    def pushers(self) -> dict[str, Pusher]:
        return dict(self._pushers)

    # -- control socket --------------------------------------------------

    def _ensure_control(self):
        if self._control is not None:
            return
        path = _temp_socket_path(f"ctl-{self.name}")
        s = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        s.bind(path)
        s.listen(16)
        self._control, self.control_path = s, path
        t = threading.Thread(target=self._accept_loop, name=f"control-{self.name}", daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self):
        while True:
            try:
                conn, _ = self._control.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_control, args=(conn,), daemon=True).start()

    def _serve_control(self, conn: socket.socket):
        with conn:
            while True:
                try:
                    verb, fields = recv_message(conn)
                except (Disconnected, OSError):
                    return
                try:
                    reply = self._handle_control(verb, fields)
                except RemoteError as e:
                    send_message(conn, Verb.ERROR, [str(e)])
                    continue
                except Exception as e:  # noqa: BLE001 - reported to the requester
                    log.exception("control request %s failed", verb)
                    send_message(conn, Verb.ERROR, [f"{type(e).__name__}: {e}"])
                    continue
                send_message(conn, Verb.OK, reply)

    def _handle_control(self, verb, fields):
        if verb == Verb.SUBSCRIBE:
            topic, sub_id, kind_code, seg_name, endpoint, nodelay = fields
            pusher = self._pushers.get(topic)
            if pusher is None or pusher.closed:
                raise RemoteError(f"{self.name} does not publish {topic!r}")
            qname = pusher.attach(sub_id, TransportKind.from_code(kind_code), seg_name, endpoint, bool(nodelay))
            return [qname, self.name]
        if verb == Verb.QUEUE_INFO:
            topic, sub_id = fields
            pusher = self._pushers.get(topic)
            if pusher is None:
                raise RemoteError(f"{self.name} does not publish {topic!r}")
            try:
                o = pusher.outlet(sub_id)
            except KeyError:
                raise RemoteError(f"{sub_id!r} is not subscribed to {topic!r}") from None
            if isinstance(o, _QueueOutlet):
                c = o.queue.counters()
                return [o.queue.name, o.queue.capacity, len(o.queue), c["drops"], c["pushes"], c["pops"]]
            return ["", 0, 0, 0, 0, 0]
        if verb == Verb.PING:
            return [os.getpid()]
        raise RemoteError(f"control socket does not handle {verb.name}")

    # -- publishing ------------------------------------------------------

    def advertise(self, topic: str, kind="shm", *, nodelay: bool = False,
                  capacity: int = DEFAULT_CAPACITY, policy: FullPolicy = FullPolicy.BLOCK) -> Pusher:
        kind = TransportKind.parse(kind)
        if not topic or len(topic.encode()) > wire.MAX_TOPIC:
            raise ValueError(f"topic must be 1..{wire.MAX_TOPIC} bytes")
        with self._lock:
            if topic in self._pushers:
                raise EngineError(f"{topic!r} already advertised by {self.name}")
            seg_name = self.segment.name if kind.in_segment else ""
            self._ensure_control()
            pusher = Pusher(self, topic, kind, nodelay, capacity, policy)
            self._pushers[topic] = pusher
            try:
                self.registry.register(topic, self.name, self.control_path, kind.code, seg_name)
            except BaseException:
                del self._pushers[topic]
                raise
            return pusher

    def unadvertise(self, topic: str) -> None:
        with self._lock:
            pusher = self._pushers.pop(topic, None)
        if pusher is None:
            return
        try:
            self.registry.unregister(topic, self.control_path)
        except (ConnectionError, RemoteError):
            pass
        pusher.close()

    # -- subscribing -----------------------------------------------------

    def subscribe(self, topic: str, kind="shm", *, sink: Optional[Callable[[Delivery], None]] = None,
                  subscriber_id: Optional[str] = None, timeout: float = WATCHDOG_S,
                  publishers: int = 1, nodelay: bool = False) -> Subscription:
        """Connect to the first ``publishers`` publishers of ``topic``.

        Raises NoPublisher if fewer are registered within ``timeout``.
        """
        kind = TransportKind.parse(kind)
        sub_id = subscriber_id or self.name
        with self._lock:
            try:
                infos = self.registry.wait_for_publishers(topic, publishers, timeout)[:publishers]
            except TimeoutError as e:
                raise NoPublisher(str(e)) from None
            sub = Subscription(self, topic, kind, sub_id, sink)
            try:
                for info in infos:
                    sub.pullers.append(self._connect(sub, info, kind, nodelay))
            except BaseException:
                sub.close()
                raise
            sub._open = len(sub.pullers)
            for p in sub.pullers:
                p.start()
            self._subs.append(sub)
            return sub

    def _connect(self, sub: Subscription, info: PublisherInfo, kind: TransportKind, nodelay: bool) -> Puller:
        if info.kind != kind.code:
            raise EngineError(f"{info.publisher_id} publishes {sub.topic!r} as "
                              f"{TransportKind.from_code(info.kind).value}, not {kind.value}")
        seg_name = ""
        if kind.in_segment:
            seg_name = self.segment.name
            if info.segment != seg_name:
                raise SegmentMismatch(f"publisher {info.publisher_id} uses segment {info.segment!r}, "
                                      f"this engine {seg_name!r}")
        p = Puller(sub, info, kind)
        listener = None
        endpoint = ""
        cleanup = None
        if kind is TransportKind.TCP:
            listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            listener.bind(("127.0.0.1", 0))
            listener.listen(1)
            endpoint = "tcp:127.0.0.1:%d" % listener.getsockname()[1]
        elif kind in (TransportKind.UDS, TransportKind.HYBRID):
            path = _temp_socket_path(f"data-{sub.subscriber_id}")
            listener = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            listener.bind(path)
            listener.listen(1)
            endpoint = f"uds:{path}"
            cleanup = path
        elif kind is TransportKind.UDP:
            u = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            u.bind(("127.0.0.1", 0))
            endpoint = "udp:127.0.0.1:%d" % u.getsockname()[1]
            p.sock = u
        try:
            ctl = connect_unix(info.endpoint, WATCHDOG_S)
            with ctl:
                qname, _ = call(ctl, Verb.SUBSCRIBE,
                                [sub.topic, sub.subscriber_id, kind.code, seg_name, endpoint, int(nodelay)])
            if kind is TransportKind.SHM:
                p.queue = ShmQueue.open(self.segment, qname)
            elif listener is not None:
                listener.settimeout(WATCHDOG_S)
                conn, _ = listener.accept()
                conn.settimeout(None)
                if kind is TransportKind.TCP and nodelay:
                    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                p.sock = conn
        except BaseException:
            if p.sock is not None:
                p.sock.close()
            raise
        finally:
            if listener is not None:
                listener.close()
            if cleanup:
                try:
                    os.unlink(cleanup)
                except FileNotFoundError:
                    pass
        return p

    def queue_info(self, publisher: PublisherInfo, topic: str, subscriber_id: str) -> dict:
        with connect_unix(publisher.endpoint, WATCHDOG_S) as ctl:
            name, cap, length, drops, pushes, pops = call(ctl, Verb.QUEUE_INFO, [topic, subscriber_id])
        return {"name": name, "capacity": cap, "len": length, "drops": drops, "pushes": pushes, "pops": pops}

    # -- teardown --------------------------------------------------------

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        for topic in list(self._pushers):
            self.unadvertise(topic)
        for sub in self._subs:
            sub.close()
        if self._control is not None:
            try:
                self._control.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self._control.close()
            try:
                os.unlink(self.control_path)
            except FileNotFoundError:
                pass
        self.registry.close()
        if self._own_segment and self._segment is not None:
            self._segment.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
