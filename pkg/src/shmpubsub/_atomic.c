/*
 * Sequentially consistent atomic operations on 32/64-bit words inside a
 * writable buffer (typically an mmap of a shared-memory segment).
 *
 * Every function takes (buffer, offset, ...). The buffer is acquired with
 * PyBUF_WRITABLE and the offset is bounds- and alignment-checked, so a bad
 * offset raises instead of faulting.
 */
#define PY_SSIZE_T_CLEAN
#include <Python.h>
#include <stdint.h>

static void *
word_at(PyObject *obj, PyObject *off_obj, Py_ssize_t width, Py_buffer *view)
{
    Py_ssize_t off = PyLong_AsSsize_t(off_obj);
    if (off == -1 && PyErr_Occurred())
        return NULL;
    if (PyObject_GetBuffer(obj, view, PyBUF_WRITABLE) < 0)
        return NULL;
    if (off < 0 || off > view->len - width) {
        PyBuffer_Release(view);
        PyErr_Format(PyExc_IndexError, "offset %zd out of range for buffer of %zd bytes",
                     off, view->len);
        return NULL;
    }
    char *p = (char *)view->buf + off;
    if (((uintptr_t)p) % (uintptr_t)width != 0) {
        PyBuffer_Release(view);
        PyErr_Format(PyExc_ValueError, "offset %zd is not %zd-byte aligned", off, width);
        return NULL;
    }
    return p;
}

static int
check_nargs(Py_ssize_t nargs, Py_ssize_t want, const char *name)
{
    if (nargs != want) {
        PyErr_Format(PyExc_TypeError, "%s() takes exactly %zd arguments (%zd given)",
                     name, want, nargs);
        return -1;
    }
    return 0;
}

/* ---- 32-bit ---------------------------------------------------------- */

static PyObject *
load_u32(PyObject *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_buffer view;
    if (check_nargs(nargs, 2, "load_u32") < 0)
        return NULL;
    uint32_t *p = word_at(args[0], args[1], 4, &view);
    if (p == NULL)
        return NULL;
    uint32_t v = __atomic_load_n(p, __ATOMIC_SEQ_CST);
    PyBuffer_Release(&view);
    return PyLong_FromUnsignedLong(v);
}

static PyObject *
store_u32(PyObject *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_buffer view;
    if (check_nargs(nargs, 3, "store_u32") < 0)
        return NULL;
    unsigned long v = PyLong_AsUnsignedLong(args[2]);
    if (v == (unsigned long)-1 && PyErr_Occurred())
        return NULL;
    if (v > UINT32_MAX) {
        PyErr_SetString(PyExc_OverflowError, "value does not fit in 32 bits");
        return NULL;
    }
    uint32_t *p = word_at(args[0], args[1], 4, &view);
    if (p == NULL)
        return NULL;
    __atomic_store_n(p, (uint32_t)v, __ATOMIC_SEQ_CST);
    PyBuffer_Release(&view);
    Py_RETURN_NONE;
}

/* Returns the value before the addition; delta may be negative (wraps mod 2**32). */
static PyObject *
fetch_add_u32(PyObject *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_buffer view;
    if (check_nargs(nargs, 3, "fetch_add_u32") < 0)
        return NULL;
    long long d = PyLong_AsLongLong(args[2]);
    if (d == -1 && PyErr_Occurred())
        return NULL;
    uint32_t *p = word_at(args[0], args[1], 4, &view);
    if (p == NULL)
        return NULL;
    uint32_t old = __atomic_fetch_add(p, (uint32_t)d, __ATOMIC_SEQ_CST);
    PyBuffer_Release(&view);
    return PyLong_FromUnsignedLong(old);
}

static PyObject *
cas_u32(PyObject *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_buffer view;
    if (check_nargs(nargs, 4, "cas_u32") < 0)
        return NULL;
    unsigned long expected = PyLong_AsUnsignedLong(args[2]);
    if (expected == (unsigned long)-1 && PyErr_Occurred())
        return NULL;
    unsigned long desired = PyLong_AsUnsignedLong(args[3]);
    if (desired == (unsigned long)-1 && PyErr_Occurred())
        return NULL;
    if (expected > UINT32_MAX || desired > UINT32_MAX) {
        PyErr_SetString(PyExc_OverflowError, "value does not fit in 32 bits");
        return NULL;
    }
    uint32_t *p = word_at(args[0], args[1], 4, &view);
    if (p == NULL)
        return NULL;
    uint32_t exp32 = (uint32_t)expected;
    int ok = __atomic_compare_exchange_n(p, &exp32, (uint32_t)desired, 0,
                                         __ATOMIC_SEQ_CST, __ATOMIC_SEQ_CST);
    PyBuffer_Release(&view);
    return PyBool_FromLong(ok);
}

/* ---- 64-bit ---------------------------------------------------------- */

static PyObject *
load_u64(PyObject *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_buffer view;
    if (check_nargs(nargs, 2, "load_u64") < 0)
        return NULL;
    uint64_t *p = word_at(args[0], args[1], 8, &view);
    if (p == NULL)
        return NULL;
    uint64_t v = __atomic_load_n(p, __ATOMIC_SEQ_CST);
    PyBuffer_Release(&view);
    return PyLong_FromUnsignedLongLong(v);
}

static PyObject *
store_u64(PyObject *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_buffer view;
    if (check_nargs(nargs, 3, "store_u64") < 0)
        return NULL;
    unsigned long long v = PyLong_AsUnsignedLongLong(args[2]);
    if (v == (unsigned long long)-1 && PyErr_Occurred())
        return NULL;
    uint64_t *p = word_at(args[0], args[1], 8, &view);
    if (p == NULL)
        return NULL;
    __atomic_store_n(p, (uint64_t)v, __ATOMIC_SEQ_CST);
    PyBuffer_Release(&view);
    Py_RETURN_NONE;
}

static PyObject *
fetch_add_u64(PyObject *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_buffer view;
    if (check_nargs(nargs, 3, "fetch_add_u64") < 0)
        return NULL;
    long long d = PyLong_AsLongLong(args[2]);
    if (d == -1 && PyErr_Occurred())
        return NULL;
    uint64_t *p = word_at(args[0], args[1], 8, &view);
    if (p == NULL)
        return NULL;
    uint64_t old = __atomic_fetch_add(p, (uint64_t)d, __ATOMIC_SEQ_CST);
    PyBuffer_Release(&view);
    return PyLong_FromUnsignedLongLong(old);
}

static PyObject *
cas_u64(PyObject *self, PyObject *const *args, Py_ssize_t nargs)
{
    Py_buffer view;
    if (check_nargs(nargs, 4, "cas_u64") < 0)
        return NULL;
    unsigned long long expected = PyLong_AsUnsignedLongLong(args[2]);
    if (expected == (unsigned long long)-1 && PyErr_Occurred())
        return NULL;
    unsigned long long desired = PyLong_AsUnsignedLongLong(args[3]);
    if (desired == (unsigned long long)-1 && PyErr_Occurred())
        return NULL;
    uint64_t *p = word_at(args[0], args[1], 8, &view);
    if (p == NULL)
        return NULL;
    uint64_t exp64 = (uint64_t)expected;
    int ok = __atomic_compare_exchange_n(p, &exp64, (uint64_t)desired, 0,
                                         __ATOMIC_SEQ_CST, __ATOMIC_SEQ_CST);
    PyBuffer_Release(&view);
    return PyBool_FromLong(ok);
}

static PyMethodDef atomic_methods[] = {
    {"load_u32", (PyCFunction)(void (*)(void))load_u32, METH_FASTCALL,
     "load_u32(buf, offset) -> int"},
    {"store_u32", (PyCFunction)(void (*)(void))store_u32, METH_FASTCALL,
     "store_u32(buf, offset, value)"},
    {"fetch_add_u32", (PyCFunction)(void (*)(void))fetch_add_u32, METH_FASTCALL,
     "fetch_add_u32(buf, offset, delta) -> previous value"},
    {"cas_u32", (PyCFunction)(void (*)(void))cas_u32, METH_FASTCALL,
     "cas_u32(buf, offset, expected, desired) -> bool"},
    {"load_u64", (PyCFunction)(void (*)(void))load_u64, METH_FASTCALL,
     "load_u64(buf, offset) -> int"},
    {"store_u64", (PyCFunction)(void (*)(void))store_u64, METH_FASTCALL,
     "store_u64(buf, offset, value)"},
    {"fetch_add_u64", (PyCFunction)(void (*)(void))fetch_add_u64, METH_FASTCALL,
     "fetch_add_u64(buf, offset, delta) -> previous value"},
    {"cas_u64", (PyCFunction)(void (*)(void))cas_u64, METH_FASTCALL,
     "cas_u64(buf, offset, expected, desired) -> bool"},
    {NULL, NULL, 0, NULL},
};

static struct PyModuleDef atomic_module = {
    PyModuleDef_HEAD_INIT,
    "_atomic",
    "Hardware atomic operations on words inside shared buffers.",
    -1,
    atomic_methods,
};

PyMODINIT_FUNC
PyInit__atomic(void)
{
    return PyModule_Create(&atomic_module);
}
