"""Topic registry: a small metadata service on a Unix stream socket.

Publishers register (topic, endpoint); subscribers look topics up and then
talk to the publisher's control socket directly. The registry also hosts the
ordering barriers the benchmark uses to fix connection order.

Run standalone with ``python -m shmpubsub.transport.registry --socket PATH``.
"""

from __future__ import annotations

import argparse
import logging
import os
import signal
import socket
import socketserver
import sys
import threading
import time
from dataclasses import dataclass
from typing import Optional

from .protocol import (
    BarrierOp,
    ProtocolError,
    RemoteError,
    Verb,
    call,
    connect_unix,
    recv_message,
    send_message,
)
from .wire import Disconnected

log = logging.getLogger(__name__)

ENV_REGISTRY = "SHMPUBSUB_REGISTRY"


def default_registry_path() -> str:
    return os.environ.get(ENV_REGISTRY) or f"/tmp/shmpubsub-registry-{os.getuid()}.sock"


@dataclass(frozen=True)
class PublisherInfo:
    publisher_id: str
    endpoint: str
    kind: int
    segment: str


class BarrierTimeout(TimeoutError):
    pass


class _Barrier:
    def __init__(self, order: list[str]):
        self.order = order
        self.joined: set[str] = set()
        self.done: set[str] = set()


class _State:
    def __init__(self):
        self.cond = threading.Condition()
        self.topics: dict[str, list[PublisherInfo]] = {}
        self.barriers: dict[str, _Barrier] = {}

    def register(self, topic, pub_id, endpoint, kind, segment):
        with self.cond:
            entries = self.topics.setdefault(topic, [])
            if not any(e.endpoint == endpoint for e in entries):
                entries.append(PublisherInfo(pub_id, endpoint, kind, segment))
            self.cond.notify_all()
        return []

    def unregister(self, topic, endpoint):
        with self.cond:
            entries = self.topics.get(topic, [])
            self.topics[topic] = [e for e in entries if e.endpoint != endpoint]
        return []

    def lookup(self, topic):
        with self.cond:
            entries = list(self.topics.get(topic, []))
        out: list = [len(entries)]
        for e in entries:
            out += [e.publisher_id, e.endpoint, e.kind, e.segment]
        return out

    def barrier(self, op, group, args):
        with self.cond:
            if op == BarrierOp.SETUP:
                self.barriers[group] = _Barrier([x for x in args[0].split(",") if x])
                self.cond.notify_all()
                return []
            member = args[0]
            if op == BarrierOp.JOIN:
                b = self._wait_for(group, 5000)
                if member not in b.order:
                    raise RemoteError(f"{member!r} is not part of barrier {group!r}")
                b.joined.add(member)
                self.cond.notify_all()
                return []
            if op == BarrierOp.TURN_WAIT:
                timeout_ms = args[1]
                deadline = time.monotonic() + timeout_ms / 1000
                b = self._wait_for(group, timeout_ms)
                if member not in b.order:
                    raise RemoteError(f"{member!r} is not part of barrier {group!r}")
                pos = b.order.index(member)

                def ready():
                    return b.joined.issuperset(b.order) and b.done.issuperset(b.order[:pos])

                while not ready():
                    left = deadline - time.monotonic()
                    if left <= 0:
                        missing = [m for m in b.order if m not in b.joined]
                        raise RemoteError(f"barrier timeout in {group!r} (missing {missing})")
                    self.cond.wait(left)
                return [pos]
            if op == BarrierOp.TURN_DONE:
                b = self._wait_for(group, 0)
                b.done.add(member)
                self.cond.notify_all()
                return []
        raise RemoteError(f"unknown barrier op {op}")

    def _wait_for(self, group, timeout_ms):
        deadline = time.monotonic() + timeout_ms / 1000
        while group not in self.barriers:
            left = deadline - time.monotonic()
            if left <= 0:
                raise RemoteError(f"barrier timeout: no barrier {group!r}")
            self.cond.wait(left)
        return self.barriers[group]


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        state: _State = self.server.state
        sock = self.request
        while True:
            try:
                verb, fields = recv_message(sock)
            except (Disconnected, ConnectionError, OSError):
                return
            except ProtocolError as e:
                send_message(sock, Verb.ERROR, [str(e)])
                return
            try:
                if verb == Verb.REGISTER:
                    reply = state.register(*fields[:5])
                elif verb == Verb.UNREGISTER:
                    reply = state.unregister(*fields[:2])
                elif verb == Verb.LOOKUP:
                    reply = state.lookup(fields[0])
                elif verb == Verb.BARRIER:
                    reply = state.barrier(BarrierOp(fields[0]), fields[1], fields[2:])
                elif verb == Verb.PING:
                    reply = [os.getpid()]
                else:
                    raise RemoteError(f"registry does not handle {verb.name}")
            except RemoteError as e:
                send_message(sock, Verb.ERROR, [str(e)])
                continue
            except (IndexError, TypeError, ValueError) as e:
                send_message(sock, Verb.ERROR, [f"malformed {verb.name}: {e}"])
                continue
            try:
                send_message(sock, Verb.OK, reply)
            except OSError:
                return


class _Server(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    daemon_threads = True
    allow_reuse_address = True


class RegistryServer:
    def __init__(self, path: Optional[str] = None):
        self.path = path or default_registry_path()
        if os.path.exists(self.path):
            if _alive(self.path):
                raise OSError(f"a registry is already serving {self.path}")
            os.unlink(self.path)
        self._server = _Server(self.path, _Handler)
        self._server.state = _State()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "RegistryServer":
        self._thread = threading.Thread(target=self._server.serve_forever, name="registry", daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def close(self) -> None:
        if self._thread is not None:
            self._server.shutdown()
        self._server.server_close()
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


def _alive(path: str) -> bool:
    try:
        s = connect_unix(path, 1.0)
    except OSError:
        return False
    s.close()
    return True


class RegistryClient:
    """Blocking client; one connection, calls serialized by a lock."""

    def __init__(self, path: Optional[str] = None, timeout: float = 5.0):
        self.path = path or default_registry_path()
        self.timeout = timeout
        try:
            self._sock = connect_unix(self.path, timeout)
        except OSError as e:
            raise ConnectionError(f"registry unreachable at {self.path}: {e}") from e
        self._lock = threading.Lock()

    def _call(self, verb, fields, timeout=None):
        with self._lock:
            self._sock.settimeout(timeout or self.timeout)
            try:
                return call(self._sock, verb, fields)
            except (socket.timeout, Disconnected, BrokenPipeError) as e:
                raise ConnectionError(f"registry call {verb.name} failed: {e}") from e

    def ping(self) -> int:
        return self._call(Verb.PING, [])[0]

    def register(self, topic: str, publisher_id: str, endpoint: str, kind: int, segment: str = "") -> None:
        self._call(Verb.REGISTER, [topic, publisher_id, endpoint, kind, segment])

    def unregister(self, topic: str, endpoint: str) -> None:
        self._call(Verb.UNREGISTER, [topic, endpoint])

    def lookup(self, topic: str) -> list[PublisherInfo]:
        fields = self._call(Verb.LOOKUP, [topic])
        n = fields[0]
        return [PublisherInfo(*fields[1 + 4 * i : 5 + 4 * i]) for i in range(n)]

    def wait_for_publishers(self, topic: str, count: int = 1, timeout: float = 5.0) -> list[PublisherInfo]:
        deadline = time.monotonic() + timeout
        while True:
            found = self.lookup(topic)
            if len(found) >= count:
                return found
            if time.monotonic() >= deadline:
                raise TimeoutError(f"{len(found)}/{count} publishers for {topic!r} after {timeout}s")
            time.sleep(0.005)

    def barrier_setup(self, group: str, order: list[str]) -> None:
        self._call(Verb.BARRIER, [BarrierOp.SETUP, group, ",".join(order)])

    def barrier_join(self, group: str, member: str) -> None:
        self._call(Verb.BARRIER, [BarrierOp.JOIN, group, member], timeout=self.timeout + 5)

    def turn_wait(self, group: str, member: str, timeout: float = 5.0) -> int:
        """Block until every member ahead of ``member`` is done; returns its position."""
        try:
            return self._call(
                Verb.BARRIER,
                [BarrierOp.TURN_WAIT, group, member, int(timeout * 1000)],
                timeout=timeout + 5,
            )[0]
        except RemoteError as e:
            if "barrier timeout" in str(e):
                raise BarrierTimeout(str(e)) from None
            raise

    def turn_done(self, group: str, member: str) -> None:
        self._call(Verb.BARRIER, [BarrierOp.TURN_DONE, group, member])

    def close(self) -> None:
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m shmpubsub.transport.registry")
    ap.add_argument("--socket", default=None, help="socket path (default: $%s)" % ENV_REGISTRY)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s registry %(message)s")
    server = RegistryServer(args.socket)
    signal.signal(signal.SIGTERM, lambda *_: sys.exit(0))
    print(f"ready {server.path}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
