import itertools
import multiprocessing
import os

import pytest

from shmpubsub.segment import Segment

_counter = itertools.count()


def unique_name(prefix="pytest"):
    return f"{prefix}_{os.getpid()}_{next(_counter)}"


@pytest.fixture
def seg_name():
    name = unique_name()
    yield name
    try:
        os.unlink(f"/dev/shm/{name}")
    except FileNotFoundError:
        pass


@pytest.fixture
def segment(seg_name):
    seg = Segment.create(seg_name, 16 << 20)
    yield seg
    seg.destroy()


@pytest.fixture(scope="session")
def mp_ctx():
    # Children must map the segment themselves, never inherit the parent's mapping.
    return multiprocessing.get_context("spawn")


def run_children(ctx, target, arglists, timeout=120):
    """Start one process per argument tuple, join them and assert clean exits."""
    procs = [ctx.Process(target=target, args=args) for args in arglists]
    for p in procs:
        p.start()
    for p in procs:
        p.join(timeout)
    for p in procs:
        if p.is_alive():
            p.kill()
            raise AssertionError(f"child {p.name} timed out")
    codes = [p.exitcode for p in procs]
    assert codes == [0] * len(procs), codes


@pytest.fixture
def registry(tmp_path_factory):
    from shmpubsub.transport.registry import RegistryServer

    # AF_UNIX paths are short; keep the socket in /tmp rather than the pytest tree.
    path = f"/tmp/{unique_name('reg')}.sock"
    server = RegistryServer(path).start()
    yield path
    server.close()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    from test_acceptance import ACCEPTANCE_LINES

    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
