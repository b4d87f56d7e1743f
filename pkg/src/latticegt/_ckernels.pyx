# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled lattice kernels, mirroring ``_pykernels`` function for function.

Sums run strictly in ascending state order (no vectorized reassociation) so
results match the numpy backend bit for bit.
"""

import numpy as np

from libc.math cimport fabs
from libc.stdint cimport uint32_t, uint64_t

BACKEND = "compiled"


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


cdef inline double _mass(const double* p, uint64_t s, uint64_t full,
                         uint64_t* reads) noexcept nogil:
    cdef uint64_t comp = full & ~s
    cdef uint64_t t = 0
    cdef double acc = 0.0
    while True:
        acc += p[s | t]
        reads[0] += 1
        if t == comp:
            break
        t = ((t | ~comp) + 1) & comp
    return acc


cdef inline void _set(uint64_t* w, uint64_t x) noexcept nogil:
    w[x >> 6] |= (<uint64_t>1) << (x & 63)


cdef inline void _mark_up(uint64_t* w, uint64_t s, uint64_t full) noexcept nogil:
    cdef uint64_t comp = full & ~s
    cdef uint64_t t = 0
    while True:
        _set(w, s | t)
        if t == comp:
            break
        t = ((t | ~comp) + 1) & comp


cdef inline void _mark_down(uint64_t* w, uint64_t s) noexcept nogil:
    cdef uint64_t t = 0
    while True:
        _set(w, t)
        if t == s:
            break
        t = ((t | ~s) + 1) & s


def build_probs(risks):
    cdef const double[::1] r = np.ascontiguousarray(risks, dtype=np.float64)
    cdef Py_ssize_t n = r.shape[0]
    cdef Py_ssize_t size = (<Py_ssize_t>1) << n
    cdef Py_ssize_t i, j
    cdef double acc
    out = np.empty(size, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(size):
            acc = 1.0
            for j in range(n):
                if i & ((<Py_ssize_t>1) << j):
                    acc = acc * (1.0 - r[j])
                else:
                    acc = acc * r[j]
            o[i] = acc
    return out


def mass(const double[::1] probs, int n, uint64_t s):
    cdef uint64_t full = ((<uint64_t>1) << n) - 1
    cdef uint64_t reads = 0
    cdef double m
    with nogil:
        m = _mass(&probs[0], s, full, &reads)
    return m, reads


def seqsum(values):
    cdef const double[::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t i
    cdef double acc = 0.0
    with nogil:
        for i in range(v.shape[0]):
            acc += v[i]
    return acc


def weigh(const double[::1] probs, uint64_t pool, table):
    cdef const double[::1] tab = np.ascontiguousarray(table, dtype=np.float64)
    cdef Py_ssize_t size = probs.shape[0]
    cdef Py_ssize_t i
    cdef double acc = 0.0
    out = np.empty(size, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(size):
            o[i] = probs[i] * tab[__builtin_popcountll(pool & ~(<uint64_t>i))]
            acc += o[i]
    return out, acc


def marginalize(const double[::1] probs, int bit):
    cdef Py_ssize_t half = probs.shape[0] >> 1
    cdef Py_ssize_t low = ((<Py_ssize_t>1) << bit) - 1
    cdef Py_ssize_t t, lo
    out = np.empty(half, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for t in range(half):
            lo = ((t >> bit) << (bit + 1)) | (t & low)
            o[t] = probs[lo] + probs[lo | (low + 1)]
    return out


def mark_up(uint64_t[::1] words, int n, uint64_t s):
    cdef uint64_t full = ((<uint64_t>1) << n) - 1
    with nogil:
        _mark_up(&words[0], s, full)


def mark_down(uint64_t[::1] words, int n, uint64_t s):
    with nogil:
        _mark_down(&words[0], s)


def scan(const double[::1] probs, int n, const uint32_t[::1] order,
         uint64_t[::1] words, bint skip):
    """Evaluate candidate states of ``order`` and keep the best split.

    Returns ``(best_state, best_mass, best_pos, evaluated, reads)``.
    """
    cdef uint64_t full = ((<uint64_t>1) << n) - 1
    cdef uint64_t s, reads = 0, evaluated = 0, best_state = 0
    cdef Py_ssize_t i, best_pos = -1
    cdef double m, gap, best_mass = float("nan"), best_gap = float("inf")
    cdef const double* p = &probs[0]
    cdef uint64_t* w = &words[0]
    with nogil:
        for i in range(order.shape[0]):
            s = order[i]
            if s == 0:
                continue
            if skip and (w[s >> 6] >> (s & 63)) & 1:
                continue
            m = _mass(p, s, full, &reads)
            evaluated += 1
            gap = fabs(m - 0.5)
            if best_pos < 0 or gap < best_gap:
                best_state = s
                best_mass = m
                best_pos = i
                best_gap = gap
            if skip:
                _set(w, s)
                if m < 0.5:
                    _mark_up(w, s, full)
                elif m > 0.5:
                    _mark_down(w, s)
    return best_state, best_mass, best_pos, evaluated, reads
