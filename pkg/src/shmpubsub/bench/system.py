"""OS-facing helpers: CPU accounting, affinity and precise pacing."""

from __future__ import annotations

import ctypes
import ctypes.util
import os
import resource
import subprocess
import time
from dataclasses import dataclass
from typing import Optional, Union

import psutil

_PR_SET_TIMERSLACK = 29
_libc = ctypes.CDLL(ctypes.util.find_library("c"), use_errno=True)


@dataclass
class CpuTimes:
    user_ns: int
    system_ns: int

    @property
    def total_ns(self) -> int:
        return self.user_ns + self.system_ns

    def __add__(self, other: "CpuTimes") -> "CpuTimes":
        return CpuTimes(self.user_ns + other.user_ns, self.system_ns + other.system_ns)


def _s_to_ns(x: float) -> int:
    return int(round(x * 1e9))


def measure_cpu(proc: Union[int, subprocess.Popen, psutil.Process, None] = None) -> CpuTimes:
    """Accumulated user and system CPU time of a process and its children.

    ``None`` measures the calling process. Raises ProcessLookupError if the
    process is gone (use :func:`reap_with_rusage` for exited children).
    """
    if proc is None:
        ru = resource.getrusage(resource.RUSAGE_SELF)
        return CpuTimes(_s_to_ns(ru.ru_utime), _s_to_ns(ru.ru_stime))
    pid = proc.pid if isinstance(proc, (subprocess.Popen, psutil.Process)) else int(proc)
    try:
        t = psutil.Process(pid).cpu_times()
    except (psutil.NoSuchProcess, psutil.ZombieProcess):
        raise ProcessLookupError(f"process {pid} is not running") from None
    return CpuTimes(
        _s_to_ns(t.user + t.children_user), _s_to_ns(t.system + t.children_system)
    )


def reap_with_rusage(proc: subprocess.Popen, timeout: Optional[float] = None) -> tuple[int, CpuTimes]:
    """Wait for a child and return (exit code, CPU times reported by the kernel)."""
    deadline = None if timeout is None else time.monotonic() + timeout
    while True:
        pid, status, ru = os.wait4(proc.pid, os.WNOHANG)
        if pid:
            break
        if deadline is not None and time.monotonic() >= deadline:
            raise subprocess.TimeoutExpired(proc.args, timeout)
        time.sleep(0.005)
    code = os.waitstatus_to_exitcode(status)
    proc.returncode = code
    return code, CpuTimes(_s_to_ns(ru.ru_utime), _s_to_ns(ru.ru_stime))


def cpu_count() -> int:
    return len(os.sched_getaffinity(0))


def pin_process(pid: int, core: int) -> None:
    """Restrict ``pid`` (0 for self) to a single core."""
    total = os.cpu_count() or 1
    if not 0 <= core < total:
        raise ValueError(f"core {core} out of range 0..{total - 1}")
    if core not in os.sched_getaffinity(0) and pid == 0:
        raise ValueError(f"core {core} is not available to this process")
    os.sched_setaffinity(pid, {core})


def affinity(pid: int = 0) -> set[int]:
    return set(os.sched_getaffinity(pid))


def parse_pin_map(text: str) -> dict[str, int]:
    """``"pub=2,sub0=3"`` -> {"pub": 2, "sub0": 3}."""
    out: dict[str, int] = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        role, sep, core = part.partition("=")
        if not sep:
            raise ValueError(f"bad pin entry {part!r}, expected role=core")
        out[role.strip()] = int(core)
    return out


def set_timer_slack(ns: int = 1) -> bool:
    """Tighten sleep wakeups for this thread (Linux only). Returns success."""
    return _libc.prctl(_PR_SET_TIMERSLACK, ctypes.c_ulong(ns), 0, 0, 0) == 0


def sleep_until(deadline_ns: int, spin_ns: int = 200_000) -> None:
    """Sleep to an absolute monotonic deadline, spinning through the last stretch."""
    while True:
        left = deadline_ns - time.monotonic_ns()
        if left <= 0:
            return
        if left > spin_ns:
            time.sleep((left - spin_ns) / 1e9)
