"""ctypes bindings for the handful of glibc calls the shared-memory layer needs.

Only Linux/glibc is supported. pthread objects are treated as opaque byte
ranges; each gets a 64-byte slot in the segment, which covers the glibc sizes
on x86_64 (40/48) and aarch64 (48/48).
"""

from __future__ import annotations

import ctypes
import ctypes.util
import errno
import os

_libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6", use_errno=True)

PTHREAD_SLOT_SIZE = 64

PTHREAD_PROCESS_SHARED = 1
PTHREAD_MUTEX_ERRORCHECK = 2
CLOCK_MONOTONIC = 1


class timespec(ctypes.Structure):
    _fields_ = [("tv_sec", ctypes.c_long), ("tv_nsec", ctypes.c_long)]


_attr_t = ctypes.c_char * 8
_vp = ctypes.c_void_p
_int = ctypes.c_int


def _bind(name, argtypes, restype=_int):
    fn = getattr(_libc, name)
    fn.argtypes = argtypes
    fn.restype = restype
    return fn


pthread_mutexattr_init = _bind("pthread_mutexattr_init", [_vp])
pthread_mutexattr_destroy = _bind("pthread_mutexattr_destroy", [_vp])
pthread_mutexattr_setpshared = _bind("pthread_mutexattr_setpshared", [_vp, _int])
pthread_mutexattr_settype = _bind("pthread_mutexattr_settype", [_vp, _int])
pthread_mutex_init = _bind("pthread_mutex_init", [_vp, _vp])
pthread_mutex_destroy = _bind("pthread_mutex_destroy", [_vp])
pthread_mutex_lock = _bind("pthread_mutex_lock", [_vp])
pthread_mutex_trylock = _bind("pthread_mutex_trylock", [_vp])
pthread_mutex_unlock = _bind("pthread_mutex_unlock", [_vp])
pthread_mutex_clocklock = _bind(
    "pthread_mutex_clocklock", [_vp, _int, ctypes.POINTER(timespec)]
)

pthread_condattr_init = _bind("pthread_condattr_init", [_vp])
pthread_condattr_destroy = _bind("pthread_condattr_destroy", [_vp])
pthread_condattr_setpshared = _bind("pthread_condattr_setpshared", [_vp, _int])
pthread_condattr_setclock = _bind("pthread_condattr_setclock", [_vp, _int])
pthread_cond_init = _bind("pthread_cond_init", [_vp, _vp])
pthread_cond_destroy = _bind("pthread_cond_destroy", [_vp])
pthread_cond_wait = _bind("pthread_cond_wait", [_vp, _vp])
pthread_cond_timedwait = _bind(
    "pthread_cond_timedwait", [_vp, _vp, ctypes.POINTER(timespec)]
)
pthread_cond_signal = _bind("pthread_cond_signal", [_vp])
pthread_cond_broadcast = _bind("pthread_cond_broadcast", [_vp])

memset = ctypes.memset


def new_attr():
    return _attr_t()


def check(rc: int, what: str) -> None:
    if rc != 0:
        raise OSError(rc, f"{what}: {os.strerror(rc)}")


def abs_timespec(deadline_ns: int) -> timespec:
    return timespec(deadline_ns // 1_000_000_000, deadline_ns % 1_000_000_000)


ETIMEDOUT = errno.ETIMEDOUT
EBUSY = errno.EBUSY
EPERM = errno.EPERM
EDEADLK = errno.EDEADLK
