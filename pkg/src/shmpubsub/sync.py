"""Cross-process lock and condition primitives placed inside a segment.

Both wrap glibc's process-shared pthread objects, which keep all of their
state in the shared word(s) and therefore work at any mapping base. The
Python objects only remember where the state lives; constructing one does
not touch the segment, ``initialize`` does.

Deadlines are absolute ``time.monotonic_ns()`` values (CLOCK_MONOTONIC is
machine-wide, so a deadline computed in one process means the same instant
in every other process).
"""

from __future__ import annotations

import ctypes
import time

from . import _libc
from ._libc import PTHREAD_SLOT_SIZE

LOCK_SIZE = PTHREAD_SLOT_SIZE
EVENT_SIZE = PTHREAD_SLOT_SIZE


class LockError(RuntimeError):
    """Misuse of an InterProcessLock (release when not held, relock)."""


class InterProcessLock:
    """Non-reentrant mutex shared by every process that maps the segment."""

    __slots__ = ("_segment", "offset", "_addr")

    def __init__(self, segment, offset: int):
        self._segment = segment
        self.offset = offset
        self._addr = segment.address(offset)

    @classmethod
    def initialize(cls, segment, offset: int) -> "InterProcessLock":
        addr = segment.address(offset)
        ctypes.memset(addr, 0, LOCK_SIZE)
        attr = _libc.new_attr()
        _libc.check(_libc.pthread_mutexattr_init(attr), "pthread_mutexattr_init")
        try:
            _libc.check(
                _libc.pthread_mutexattr_setpshared(attr, _libc.PTHREAD_PROCESS_SHARED),
                "pthread_mutexattr_setpshared",
            )
            # Error-checking type turns unlock-by-non-owner and relock into errors.
            _libc.check(
                _libc.pthread_mutexattr_settype(attr, _libc.PTHREAD_MUTEX_ERRORCHECK),
                "pthread_mutexattr_settype",
            )
            _libc.check(_libc.pthread_mutex_init(addr, attr), "pthread_mutex_init")
        finally:
            _libc.pthread_mutexattr_destroy(attr)
        return cls(segment, offset)

    def acquire(self, deadline_ns: int | None = None) -> bool:
        """Block until held; with a deadline, return False if it passes first."""
        if deadline_ns is None:
            rc = _libc.pthread_mutex_lock(self._addr)
        else:
            ts = _libc.abs_timespec(deadline_ns)
            rc = _libc.pthread_mutex_clocklock(
                self._addr, _libc.CLOCK_MONOTONIC, ctypes.byref(ts)
            )
            if rc == _libc.ETIMEDOUT:
                return False
        if rc == _libc.EDEADLK:
            raise LockError("lock already held by this thread")
        _libc.check(rc, "pthread_mutex_lock")
        return True

    def try_acquire(self) -> bool:
        rc = _libc.pthread_mutex_trylock(self._addr)
        if rc == _libc.EBUSY:
            return False
        _libc.check(rc, "pthread_mutex_trylock")
        return True

    def release(self) -> None:
        rc = _libc.pthread_mutex_unlock(self._addr)
        if rc == _libc.EPERM:
            raise LockError("release of a lock not held by this thread")
        _libc.check(rc, "pthread_mutex_unlock")

    def __enter__(self):
        self.acquire()
        return self

    def __exit__(self, *exc):
        self.release()

    def __repr__(self):
        return f"<InterProcessLock at segment offset {self.offset:#x}>"


class InterProcessEvent:
    """Condition variable paired with an InterProcessLock.

    Spurious wakeups are possible; callers loop on their predicate.
    """

    __slots__ = ("_segment", "offset", "_addr")

    def __init__(self, segment, offset: int):
        self._segment = segment
        self.offset = offset
        self._addr = segment.address(offset)

    @classmethod
    def initialize(cls, segment, offset: int) -> "InterProcessEvent":
        addr = segment.address(offset)
        ctypes.memset(addr, 0, EVENT_SIZE)
        attr = _libc.new_attr()
        _libc.check(_libc.pthread_condattr_init(attr), "pthread_condattr_init")
        try:
            _libc.check(
                _libc.pthread_condattr_setpshared(attr, _libc.PTHREAD_PROCESS_SHARED),
                "pthread_condattr_setpshared",
            )
            _libc.check(
                _libc.pthread_condattr_setclock(attr, _libc.CLOCK_MONOTONIC),
                "pthread_condattr_setclock",
            )
            _libc.check(_libc.pthread_cond_init(addr, attr), "pthread_cond_init")
        finally:
            _libc.pthread_condattr_destroy(attr)
        return cls(segment, offset)

    def wait(self, lock: InterProcessLock, deadline_ns: int | None = None) -> bool:
        """Release ``lock``, sleep until notified or the deadline, reacquire.

        Returns True when woken (possibly spuriously) and False on timeout. A
        deadline already in the past returns False without sleeping.
        """
        if deadline_ns is None:
            rc = _libc.pthread_cond_wait(self._addr, lock._addr)
            _libc.check(rc, "pthread_cond_wait")
            return True
        if deadline_ns <= time.monotonic_ns():
            return False
        ts = _libc.abs_timespec(deadline_ns)
        rc = _libc.pthread_cond_timedwait(self._addr, lock._addr, ctypes.byref(ts))
        if rc == _libc.ETIMEDOUT:
            return False
        _libc.check(rc, "pthread_cond_timedwait")
        return True

    def notify_one(self) -> None:
        _libc.check(_libc.pthread_cond_signal(self._addr), "pthread_cond_signal")

    def notify_all(self) -> None:
        _libc.check(_libc.pthread_cond_broadcast(self._addr), "pthread_cond_broadcast")

    def __repr__(self):
        return f"<InterProcessEvent at segment offset {self.offset:#x}>"


def deadline_after(timeout: float | None) -> int | None:
    """Absolute monotonic deadline ``timeout`` seconds from now (None stays None)."""
    if timeout is None:
        return None
    return time.monotonic_ns() + int(timeout * 1e9)
