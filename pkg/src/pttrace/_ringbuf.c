/* Per-thread event rings for the recorder's ring backend.
 *
 * Ring.emit(tp, payload) is the hot path.  It checks the enable flag,
 * validates the payload against the tracepoint's schema, reads the
 * monotonic clock and appends (tp, ts, payload) to the calling thread's
 * buffer.  The buffer is found through a thread-local pointer tagged
 * with the ring's generation, so no lock is shared between threads.
 * Once a buffer is full the event is dropped and counted.
 *
 * The GIL is held for the whole call, so registration and drain need
 * no further locking.
 */

#define PY_SSIZE_T_CLEAN
#include <Python.h>
#include <stdint.h>
#include <sys/syscall.h>
#include <time.h>
#include <unistd.h>

#define MAX_TP 64
#define MAX_ARITY 8
#define TEXT_MAX 65535

typedef struct {
    int32_t tp;
    int64_t ts;
    PyObject *payload;
} rec_t;

typedef struct {
    uint32_t tid;
    Py_ssize_t count;
    Py_ssize_t capacity;
    uint64_t dropped;
    rec_t *recs;
} buf_t;

typedef struct {
    PyObject_HEAD
    uint64_t gen;
    Py_ssize_t capacity;
    PyObject *enabled;  /* list of bools shared with the session */
    PyObject *on_bad;   /* called with (tp, payload); expected to raise */
    int ntp;
    int arity[MAX_TP];
    char schema[MAX_TP][MAX_ARITY];
    buf_t **bufs;
    Py_ssize_t nbufs;
    Py_ssize_t cap_bufs;
    int closed;
} RingObject;

static uint64_t next_gen = 1;
static _Thread_local uint64_t tls_gen = 0;
static _Thread_local buf_t *tls_buf = NULL;

static int
check_field(char code, PyObject *v)
{
    switch (code) {
    case 'H':
    case 'U': {
        if (!PyLong_CheckExact(v) || _PyLong_Sign(v) < 0)
            return 0;
        unsigned long long x = PyLong_AsUnsignedLongLong(v);
        if (x == (unsigned long long)-1 && PyErr_Occurred()) {
            PyErr_Clear();
            return 0;
        }
        return 1;
    }
    case 'I': {
        if (!PyLong_CheckExact(v))
            return 0;
        int overflow = 0;
        PyLong_AsLongLongAndOverflow(v, &overflow);
        if (PyErr_Occurred()) {
            PyErr_Clear();
            return 0;
        }
        return overflow == 0;
    }
    case 'B':
        return PyBool_Check(v);
    case 'T': {
        if (!PyUnicode_CheckExact(v))
            return 0;
        Py_ssize_t n;
        if (PyUnicode_AsUTF8AndSize(v, &n) == NULL) {
            PyErr_Clear();
            return 0;
        }
        return n <= TEXT_MAX;
    }
    }
    return 0;
}

static int
conforms(RingObject *self, int tp, PyObject *payload)
{
    if (!PyTuple_CheckExact(payload))
        return 0;
    Py_ssize_t n = PyTuple_GET_SIZE(payload);
    if (n != self->arity[tp])
        return 0;
    for (Py_ssize_t i = 0; i < n; i++) {
        if (!check_field(self->schema[tp][i], PyTuple_GET_ITEM(payload, i)))
            return 0;
    }
    return 1;
}

static buf_t *
register_thread(RingObject *self)
{
    uint32_t tid = (uint32_t)syscall(SYS_gettid);
    /* a recycled thread id continues its predecessor's buffer */
    for (Py_ssize_t i = 0; i < self->nbufs; i++) {
        if (self->bufs[i]->tid == tid) {
            tls_gen = self->gen;
            tls_buf = self->bufs[i];
            return tls_buf;
        }
    }
    if (self->nbufs == self->cap_bufs) {
        Py_ssize_t cap = self->cap_bufs ? self->cap_bufs * 2 : 8;
        buf_t **grown = PyMem_Realloc(self->bufs, cap * sizeof(buf_t *));
        if (grown == NULL) {
            PyErr_NoMemory();
            return NULL;
        }
        self->bufs = grown;
        self->cap_bufs = cap;
    }
    buf_t *b = PyMem_Calloc(1, sizeof(buf_t));
    if (b == NULL) {
        PyErr_NoMemory();
        return NULL;
    }
    b->recs = PyMem_Malloc(self->capacity * sizeof(rec_t));
    if (b->recs == NULL) {
        PyMem_Free(b);
        PyErr_NoMemory();
        return NULL;
    }
    b->tid = tid;
    b->capacity = self->capacity;
    self->bufs[self->nbufs++] = b;
    tls_gen = self->gen;
    tls_buf = b;
    return b;
}

static PyObject *
Ring_emit(RingObject *self, PyObject *const *args, Py_ssize_t nargs)
{
    if (nargs != 2) {
        PyErr_SetString(PyExc_TypeError, "emit(tp, payload) takes 2 arguments");
        return NULL;
    }
    long tp = PyLong_AsLong(args[0]);
    if (tp == -1 && PyErr_Occurred())
        return NULL;
    if (tp < 0 || tp >= self->ntp) {
        PyErr_SetString(PyExc_IndexError, "tracepoint id out of range");
        return NULL;
    }
    if (self->closed || PyList_GET_ITEM(self->enabled, tp) != Py_True)
        Py_RETURN_NONE;

    PyObject *payload = args[1];
    if (!conforms(self, (int)tp, payload)) {
        PyObject *r = PyObject_CallFunctionObjArgs(self->on_bad, args[0], payload, NULL);
        if (r == NULL)
            return NULL;
        Py_DECREF(r);
        PyErr_SetString(PyExc_ValueError, "payload does not match schema");
        return NULL;
    }

    struct timespec now;
    clock_gettime(CLOCK_MONOTONIC, &now);

    buf_t *b = (tls_gen == self->gen) ? tls_buf : register_thread(self);
    if (b == NULL)
        return NULL;
    if (b->count < b->capacity) {
        rec_t *r = &b->recs[b->count++];
        r->tp = (int32_t)tp;
        r->ts = (int64_t)now.tv_sec * 1000000000LL + now.tv_nsec;
        Py_INCREF(payload);
        r->payload = payload;
    }
    else {
        b->dropped++;
    }
    Py_RETURN_NONE;
}

static void
free_buffers(RingObject *self)
{
    for (Py_ssize_t i = 0; i < self->nbufs; i++) {
        buf_t *b = self->bufs[i];
        for (Py_ssize_t k = 0; k < b->count; k++)
            Py_DECREF(b->recs[k].payload);
        PyMem_Free(b->recs);
        PyMem_Free(b);
    }
    PyMem_Free(self->bufs);
    self->bufs = NULL;
    self->nbufs = self->cap_bufs = 0;
}

/* Close the ring and hand every buffer over as
 * [(tid, [(tp, ts, seq, payload), ...], dropped), ...]. */
static PyObject *
Ring_drain(RingObject *self, PyObject *Py_UNUSED(ignored))
{
    self->closed = 1;
    PyObject *out = PyList_New(self->nbufs);
    if (out == NULL)
        return NULL;
    for (Py_ssize_t i = 0; i < self->nbufs; i++) {
        buf_t *b = self->bufs[i];
        PyObject *events = PyList_New(b->count);
        if (events == NULL)
            goto fail;
        for (Py_ssize_t k = 0; k < b->count; k++) {
            rec_t *r = &b->recs[k];
            PyObject *ev = Py_BuildValue("(iLnO)", r->tp, (long long)r->ts, k, r->payload);
            if (ev == NULL) {
                Py_DECREF(events);
                goto fail;
            }
            PyList_SET_ITEM(events, k, ev);
        }
        PyObject *item = Py_BuildValue("(kNK)", (unsigned long)b->tid, events,
                                       (unsigned long long)b->dropped);
        if (item == NULL)
            goto fail;
        PyList_SET_ITEM(out, i, item);
    }
    free_buffers(self);
    return out;
fail:
    Py_DECREF(out);
    return NULL;
}

static int
Ring_init(RingObject *self, PyObject *args, PyObject *kwds)
{
    static char *kwlist[] = {"capacity", "enabled", "schemas", "on_bad", NULL};
    Py_ssize_t capacity;
    PyObject *enabled, *schemas, *on_bad;
    if (!PyArg_ParseTupleAndKeywords(args, kwds, "nO!O!O", kwlist, &capacity,
                                     &PyList_Type, &enabled, &PyTuple_Type, &schemas,
                                     &on_bad))
        return -1;
    if (capacity < 1) {
        PyErr_SetString(PyExc_ValueError, "capacity must be positive");
        return -1;
    }
    Py_ssize_t ntp = PyTuple_GET_SIZE(schemas);
    if (ntp > MAX_TP || PyList_GET_SIZE(enabled) != ntp) {
        PyErr_SetString(PyExc_ValueError, "enabled and schemas must have one entry per tracepoint");
        return -1;
    }
    for (Py_ssize_t i = 0; i < ntp; i++) {
        PyObject *s = PyTuple_GET_ITEM(schemas, i);
        if (!PyBytes_Check(s) || PyBytes_GET_SIZE(s) > MAX_ARITY) {
            PyErr_SetString(PyExc_ValueError, "schema must be bytes of field codes");
            return -1;
        }
        self->arity[i] = (int)PyBytes_GET_SIZE(s);
        memcpy(self->schema[i], PyBytes_AS_STRING(s), self->arity[i]);
    }
    if (self->bufs != NULL) {
        PyErr_SetString(PyExc_RuntimeError, "ring already initialized");
        return -1;
    }
    self->ntp = (int)ntp;
    self->capacity = capacity;
    Py_INCREF(enabled);
    Py_XSETREF(self->enabled, enabled);
    Py_INCREF(on_bad);
    Py_XSETREF(self->on_bad, on_bad);
    self->gen = next_gen++;
    self->closed = 0;
    return 0;
}

static void
Ring_dealloc(RingObject *self)
{
    free_buffers(self);
    Py_XDECREF(self->enabled);
    Py_XDECREF(self->on_bad);
    Py_TYPE(self)->tp_free((PyObject *)self);
}

static PyObject *
Ring_get_stats(RingObject *self, void *closure)
{
    PyObject *out = PyList_New(self->nbufs);
    if (out == NULL)
        return NULL;
    for (Py_ssize_t i = 0; i < self->nbufs; i++) {
        buf_t *b = self->bufs[i];
        PyObject *item = Py_BuildValue("(knK)", (unsigned long)b->tid, b->count,
                                       (unsigned long long)b->dropped);
        if (item == NULL) {
            Py_DECREF(out);
            return NULL;
        }
        PyList_SET_ITEM(out, i, item);
    }
    return out;
}

static PyMethodDef Ring_methods[] = {
    {"emit", (PyCFunction)(void (*)(void))Ring_emit, METH_FASTCALL, "emit(tp, payload)"},
    {"drain", (PyCFunction)Ring_drain, METH_NOARGS,
     "Close the ring and return [(tid, events, dropped), ...]."},
    {NULL},
};

static PyGetSetDef Ring_getset[] = {
    {"stats", (getter)Ring_get_stats, NULL, "[(tid, stored, dropped), ...]", NULL},
    {NULL},
};

static PyTypeObject RingType = {
    PyVarObject_HEAD_INIT(NULL, 0)
    .tp_name = "pttrace._ringbuf.Ring",
    .tp_basicsize = sizeof(RingObject),
    .tp_flags = Py_TPFLAGS_DEFAULT,
    .tp_doc = "Per-thread bounded event buffers with a discard-newest policy.",
    .tp_new = PyType_GenericNew,
    .tp_init = (initproc)Ring_init,
    .tp_dealloc = (destructor)Ring_dealloc,
    .tp_methods = Ring_methods,
    .tp_getset = Ring_getset,
};

static struct PyModuleDef ringbuf_module = {
    PyModuleDef_HEAD_INIT, "_ringbuf", "Native ring backend for the recorder.", -1, NULL,
};

PyMODINIT_FUNC
PyInit__ringbuf(void)
{
    if (PyType_Ready(&RingType) < 0)
        return NULL;
    PyObject *m = PyModule_Create(&ringbuf_module);
    if (m == NULL)
        return NULL;
    Py_INCREF(&RingType);
    if (PyModule_AddObject(m, "Ring", (PyObject *)&RingType) < 0) {
        Py_DECREF(&RingType);
        Py_DECREF(m);
        return NULL;
    }
    return m;
}
