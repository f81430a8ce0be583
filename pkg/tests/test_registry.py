import threading
import time

import pytest

from shmpubsub.transport.registry import BarrierTimeout, PublisherInfo, RegistryClient, RegistryServer
from shmpubsub.transport.protocol import RemoteError


def test_ping(registry):
    with RegistryClient(registry) as c:
        assert c.ping() > 0


def test_unknown_topic_is_empty(registry):
    with RegistryClient(registry) as c:
        assert c.lookup("nothing") == []


def test_register_order_and_idempotence(registry):
    with RegistryClient(registry) as c:
        c.register("cam0", "pub0", "uds:/tmp/a", 1, "seg")
        c.register("cam0", "pub1", "uds:/tmp/b", 2)
        c.register("cam0", "pub0", "uds:/tmp/a", 1, "seg")
        assert c.lookup("cam0") == [
            PublisherInfo("pub0", "uds:/tmp/a", 1, "seg"),
            PublisherInfo("pub1", "uds:/tmp/b", 2, ""),
        ]
        c.unregister("cam0", "uds:/tmp/a")
        assert [p.publisher_id for p in c.lookup("cam0")] == ["pub1"]


def test_wait_for_publishers(registry):
    with RegistryClient(registry) as c, RegistryClient(registry) as other:
        threading.Timer(0.1, other.register, ("t", "p", "e", 1)).start()
        assert len(c.wait_for_publishers("t", 1, timeout=5)) == 1
        with pytest.raises(TimeoutError):
            c.wait_for_publishers("t", 2, timeout=0.1)


def test_second_server_on_live_path_refused(registry):
    with pytest.raises(OSError):
        RegistryServer(registry)


def test_unreachable_registry():
    with pytest.raises(ConnectionError):
        RegistryClient("/tmp/definitely-not-a-registry.sock", timeout=0.2)


def _member(path, group, name, log, lock):
    with RegistryClient(path) as c:
        c.barrier_join(group, name)
        c.turn_wait(group, name, timeout=10)
        with lock:
            log.append(name)
        time.sleep(0.01)
        c.turn_done(group, name)


def test_barrier_enforces_order(registry):
    order = ["s1", "s2", "s3", "s4", "s5"]
    with RegistryClient(registry) as c:
        c.barrier_setup("g", order)
    log, lock = [], threading.Lock()
    # start in reverse so that free-running members would come out wrong
    threads = [threading.Thread(target=_member, args=(registry, "g", n, log, lock)) for n in reversed(order)]
    for t in threads:
        t.start()
        time.sleep(0.01)
    for t in threads:
        t.join(20)
    assert log == order


def test_barrier_timeout_when_member_missing(registry):
    with RegistryClient(registry) as c:
        c.barrier_setup("g2", ["a", "b", "c"])
        c.barrier_join("g2", "a")
        c.barrier_join("g2", "b")  # "c" crashed before joining
        t0 = time.monotonic()
        with pytest.raises(BarrierTimeout, match="missing"):
            c.turn_wait("g2", "a", timeout=0.3)
        assert time.monotonic() - t0 < 3


def test_barrier_rejects_stranger(registry):
    with RegistryClient(registry) as c:
        c.barrier_setup("g3", ["a"])
        with pytest.raises(RemoteError):
            c.barrier_join("g3", "zed")


def test_registry_subprocess_main(tmp_path):
    import subprocess
    import sys

    path = f"/tmp/reg-main-{id(tmp_path)}.sock"
    p = subprocess.Popen([sys.executable, "-m", "shmpubsub.transport.registry", "--socket", path],
                         stdout=subprocess.PIPE, text=True)
    try:
        assert p.stdout.readline().startswith("ready")
        with RegistryClient(path) as c:
            assert c.ping() == p.pid
    finally:
        p.terminate()
        assert p.wait(5) == 0
        p.stdout.close()
