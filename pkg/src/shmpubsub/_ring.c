/*
 * Lock/wait/slot work of ShmQueue push and pop, done in one call each.
 *
 * The queue header layout and the pthread objects are the ones ShmQueue
 * creates (see shmqueue.py); this file only operates on them. Blocking
 * happens with the GIL released. Every call returns a status code and the
 * Python side turns it into the matching exception.
 */
#define PY_SSIZE_T_CLEAN
#include <Python.h>
#include <errno.h>
#include <pthread.h>
#include <stdint.h>
#include <time.h>

#define Q_MAGIC 0x51534D48u
#define OFF_CAPACITY 4
#define OFF_HEAD 8
#define OFF_TAIL 16
#define OFF_LENGTH 24
#define OFF_CLOSED 32
#define OFF_POLICY 36
#define OFF_DROPS 40
#define OFF_PUSHES 48
#define OFF_POPS 56
#define OFF_LOCK 128
#define OFF_NOT_EMPTY 192
#define OFF_NOT_FULL 256
#define OFF_RING 384
#define SLOT 16

#define POLICY_DROP_NEWEST 1

enum { ST_OK = 0, ST_DROPPED = 1, ST_CLOSED = 2, ST_TIMEOUT = 3, ST_OVERFLOW = 4 };

#define U32(p, o) (*(uint32_t *)((p) + (o)))
#define U64(p, o) (*(uint64_t *)((p) + (o)))

static int64_t
now_ns(void)
{
    struct timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return (int64_t)ts.tv_sec * 1000000000 + ts.tv_nsec;
}

/* Returns 0 when woken, ETIMEDOUT when the deadline has passed, else an errno. */
static int
wait_on(char *q, Py_ssize_t ev, int64_t deadline)
{
    pthread_cond_t *c = (pthread_cond_t *)(q + ev);
    pthread_mutex_t *m = (pthread_mutex_t *)(q + OFF_LOCK);
    if (deadline < 0)
        return pthread_cond_wait(c, m);
    if (deadline <= now_ns())
        return ETIMEDOUT;
    struct timespec ts = {deadline / 1000000000, deadline % 1000000000};
    int rc = pthread_cond_timedwait(c, m, &ts);
    if (rc == ETIMEDOUT && now_ns() < deadline)
        rc = 0;
    return rc;
}

static char *
queue_at(PyObject *buf, Py_ssize_t off, Py_buffer *view)
{
    if (PyObject_GetBuffer(buf, view, PyBUF_WRITABLE) < 0)
        return NULL;
    char *q = (char *)view->buf + off;
    if (off < 0 || off % 64 != 0 || off > view->len - OFF_RING || U32(q, 0) != Q_MAGIC ||
        (Py_ssize_t)U32(q, OFF_CAPACITY) > (view->len - off - OFF_RING) / SLOT) {
        PyBuffer_Release(view);
        PyErr_Format(PyExc_ValueError, "no queue at offset %zd", off);
        return NULL;
    }
    return q;
}

static PyObject *
os_error(int rc)
{
    errno = rc;
    return PyErr_SetFromErrno(PyExc_OSError);
}

/*
 * push(buffer, queue_offset, cb_offset, tag, deadline_ns, clone) -> status
 *
 * deadline_ns < 0 waits forever. With clone true the strong count at
 * cb_offset is incremented when (and only when) the slot is written;
 * otherwise the caller's reference moves into the slot.
 */
static PyObject *
ring_push(PyObject *self, PyObject *args)
{
    PyObject *buf;
    Py_ssize_t off, cb;
    unsigned long long tag;
    long long deadline;
    int clone;
    if (!PyArg_ParseTuple(args, "OnnKLp", &buf, &off, &cb, &tag, &deadline, &clone))
        return NULL;
    Py_buffer view;
    char *q = queue_at(buf, off, &view);
    if (q == NULL)
        return NULL;
    if (cb < 0 || cb % 8 != 0 || cb > view.len - 64) {
        PyBuffer_Release(&view);
        return PyErr_Format(PyExc_ValueError, "control block offset %zd out of range", cb);
    }
    uint32_t *strong = (uint32_t *)((char *)view.buf + cb);
    int status = ST_OK, rc;

    Py_BEGIN_ALLOW_THREADS
    rc = pthread_mutex_lock((pthread_mutex_t *)(q + OFF_LOCK));
    if (rc == 0) {
        uint64_t cap = U32(q, OFF_CAPACITY);
        for (;;) {
            if (U32(q, OFF_CLOSED)) {
                status = ST_CLOSED;
                break;
            }
            if (U64(q, OFF_LENGTH) < cap)
                break;
            if (U32(q, OFF_POLICY) == POLICY_DROP_NEWEST) {
                U64(q, OFF_DROPS) += 1;
                status = ST_DROPPED;
                break;
            }
            rc = wait_on(q, OFF_NOT_FULL, deadline);
            if (rc == ETIMEDOUT) {
                status = ST_TIMEOUT;
                rc = 0;
                break;
            }
            if (rc)
                break;
        }
        if (rc == 0 && status == ST_OK && clone) {
            if (__atomic_fetch_add(strong, 1, __ATOMIC_SEQ_CST) == UINT32_MAX) {
                __atomic_fetch_sub(strong, 1, __ATOMIC_SEQ_CST);
                status = ST_OVERFLOW;
            }
        }
        if (rc == 0 && status == ST_OK) {
            uint64_t tail = U64(q, OFF_TAIL);
            U64(q, OFF_RING + tail * SLOT) = (uint64_t)cb;
            U64(q, OFF_RING + tail * SLOT + 8) = tag;
            U64(q, OFF_TAIL) = (tail + 1) % cap;
            U64(q, OFF_LENGTH) += 1;
            U64(q, OFF_PUSHES) += 1;
        }
        int urc = pthread_mutex_unlock((pthread_mutex_t *)(q + OFF_LOCK));
        if (rc == 0)
            rc = urc;
        /* Signalled after unlocking so the woken popper does not block
           straight away on the mutex we still hold. */
        if (rc == 0 && status == ST_OK)
            rc = pthread_cond_signal((pthread_cond_t *)(q + OFF_NOT_EMPTY));
    }
    Py_END_ALLOW_THREADS

    PyBuffer_Release(&view);
    if (rc)
        return os_error(rc);
    return PyLong_FromLong(status);
}

/*
 * pop(buffer, queue_offset, deadline_ns) -> (status, cb_offset, tag)
 *
 * On ST_OK the slot's strong reference now belongs to the caller.
 */
static PyObject *
ring_pop(PyObject *self, PyObject *args)
{
    PyObject *buf;
    Py_ssize_t off;
    long long deadline;
    if (!PyArg_ParseTuple(args, "OnL", &buf, &off, &deadline))
        return NULL;
    Py_buffer view;
    char *q = queue_at(buf, off, &view);
    if (q == NULL)
        return NULL;
    int status = ST_OK, rc;
    uint64_t cb = 0, tag = 0;

    Py_BEGIN_ALLOW_THREADS
    rc = pthread_mutex_lock((pthread_mutex_t *)(q + OFF_LOCK));
    if (rc == 0) {
        uint64_t cap = U32(q, OFF_CAPACITY);
        for (;;) {
            if (U32(q, OFF_CLOSED)) {
                status = ST_CLOSED;
                break;
            }
            if (U64(q, OFF_LENGTH))
                break;
            rc = wait_on(q, OFF_NOT_EMPTY, deadline);
            if (rc == ETIMEDOUT) {
                status = ST_TIMEOUT;
                rc = 0;
                break;
            }
            if (rc)
                break;
        }
        if (rc == 0 && status == ST_OK) {
            uint64_t head = U64(q, OFF_HEAD);
            cb = U64(q, OFF_RING + head * SLOT);
            tag = U64(q, OFF_RING + head * SLOT + 8);
            U64(q, OFF_HEAD) = (head + 1) % cap;
            U64(q, OFF_LENGTH) -= 1;
            U64(q, OFF_POPS) += 1;
        }
        int urc = pthread_mutex_unlock((pthread_mutex_t *)(q + OFF_LOCK));
        if (rc == 0)
            rc = urc;
        if (rc == 0 && status == ST_OK)
            rc = pthread_cond_signal((pthread_cond_t *)(q + OFF_NOT_FULL));
    }
    Py_END_ALLOW_THREADS

    PyBuffer_Release(&view);
    if (rc)
        return os_error(rc);
    return Py_BuildValue("iKK", status, (unsigned long long)cb, (unsigned long long)tag);
}

static PyMethodDef ring_methods[] = {
    {"push", ring_push, METH_VARARGS, "push(buffer, queue_offset, cb_offset, tag, deadline_ns, clone) -> status"},
    {"pop", ring_pop, METH_VARARGS, "pop(buffer, queue_offset, deadline_ns) -> (status, cb_offset, tag)"},
    {NULL, NULL, 0, NULL},
};

static struct PyModuleDef ring_module = {
    PyModuleDef_HEAD_INIT, "_ring", "ShmQueue push/pop fast path.", -1, ring_methods,
};

PyMODINIT_FUNC
PyInit__ring(void)
{
    PyObject *m = PyModule_Create(&ring_module);
    if (m == NULL)
        return NULL;
    if (PyModule_AddIntConstant(m, "OK", ST_OK) < 0 ||
        PyModule_AddIntConstant(m, "DROPPED", ST_DROPPED) < 0 ||
        PyModule_AddIntConstant(m, "CLOSED", ST_CLOSED) < 0 ||
        PyModule_AddIntConstant(m, "TIMEOUT", ST_TIMEOUT) < 0 ||
        PyModule_AddIntConstant(m, "OVERFLOW", ST_OVERFLOW) < 0) {
        Py_DECREF(m);
        return NULL;
    }
    return m;
}
