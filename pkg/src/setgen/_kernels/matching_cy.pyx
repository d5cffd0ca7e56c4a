# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Cython matching kernels: same semantics as matching_py, compiled.

Scanning order and tie handling match the pure-Python twin exactly so both
backends produce identical results.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()

BACKEND = "cython"


def solve_assignment(cost):
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    cdef double[:, ::1] c = cost
    cdef Py_ssize_t n = c.shape[0]
    cdef cnp.ndarray[double, ndim=1] u = np.zeros(n + 1)
    cdef cnp.ndarray[double, ndim=1] v = np.zeros(n + 1)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] p = np.zeros(n + 1, dtype=np.intp)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] way = np.zeros(n + 1, dtype=np.intp)
    cdef cnp.ndarray[double, ndim=1] minv = np.empty(n + 1)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] used = np.zeros(n + 1, dtype=np.uint8)
    cdef double[::1] uv_u = u, uv_v = v, mv = minv
    cdef cnp.intp_t[::1] pv = p, wv = way
    cdef cnp.uint8_t[::1] us = used
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double delta, cur, ui0

    for i in range(1, n + 1):
        pv[0] = i
        j0 = 0
        for j in range(n + 1):
            mv[j] = INFINITY
            us[j] = 0
        while True:
            us[j0] = 1
            i0 = pv[j0]
            delta = INFINITY
            j1 = -1
            ui0 = uv_u[i0]
            for j in range(1, n + 1):
                if not us[j]:
                    cur = c[i0 - 1, j - 1] - ui0 - uv_v[j]
                    if cur < mv[j]:
                        mv[j] = cur
                        wv[j] = j0
                    if mv[j] < delta:
                        delta = mv[j]
                        j1 = j
            for j in range(n + 1):
                if us[j]:
                    uv_u[pv[j]] += delta
                    uv_v[j] -= delta
                else:
                    mv[j] -= delta
            j0 = j1
            if pv[j0] == 0:
                break
        while j0 != 0:
            j1 = wv[j0]
            pv[j0] = pv[j1]
            j0 = j1

    col_for_row = np.empty(n, dtype=np.intp)
    cdef cnp.intp_t[::1] cfr = col_for_row
    for j in range(1, n + 1):
        cfr[pv[j] - 1] = j - 1
    cdef double total = 0.0
    for i in range(n):
        total += c[i, cfr[i]]
    return col_for_row, total


def solve_transport(cost, supply, demand):
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    cdef double[:, ::1] c = cost
    cdef Py_ssize_t n = c.shape[0], m = c.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] sup = np.asarray(supply, dtype=np.int64).copy()
    cdef cnp.ndarray[cnp.int64_t, ndim=1] dem = np.asarray(demand, dtype=np.int64).copy()
    if sup.sum() != dem.sum():
        raise ValueError("unbalanced transportation problem")
    cdef cnp.ndarray[cnp.int64_t, ndim=2] flow = np.zeros((n, m), dtype=np.int64)
    cdef cnp.int64_t[::1] sv = sup, dv = dem
    cdef cnp.int64_t[:, ::1] fv = flow
    cdef cnp.ndarray[double, ndim=1] pot_u = np.zeros(n)
    cdef cnp.ndarray[double, ndim=1] pot_v = np.zeros(m)
    cdef double[::1] pu = pot_u, pw = pot_v
    cdef Py_ssize_t size = n + m
    cdef cnp.ndarray[double, ndim=1] dist = np.empty(size)
    cdef cnp.ndarray[cnp.intp_t, ndim=1] prev = np.empty(size, dtype=np.intp)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] done = np.empty(size, dtype=np.uint8)
    cdef double[::1] dt = dist
    cdef cnp.intp_t[::1] pr = prev
    cdef cnp.uint8_t[::1] dn = done
    cdef long long remaining = sup.sum()
    cdef Py_ssize_t i, j, k, u_node, target, node, a, b
    cdef double best, rc, nd, base
    cdef long long bottleneck

    while remaining > 0:
        for k in range(size):
            dt[k] = INFINITY
            pr[k] = -1
            dn[k] = 0
        for i in range(n):
            if sv[i] > 0:
                dt[i] = 0.0
        while True:
            u_node = -1
            best = INFINITY
            for k in range(size):
                if not dn[k] and dt[k] < best:
                    best = dt[k]
                    u_node = k
            if u_node < 0:
                break
            dn[u_node] = 1
            if u_node < n:
                i = u_node
                base = dt[i]
                for j in range(m):
                    rc = c[i, j] - pu[i] - pw[j]
                    if rc < 0.0:
                        rc = 0.0
                    nd = base + rc
                    if nd < dt[n + j]:
                        dt[n + j] = nd
                        pr[n + j] = i
            else:
                j = u_node - n
                base = dt[u_node]
                for i in range(n):
                    if fv[i, j] > 0:
                        rc = pu[i] + pw[j] - c[i, j]
                        if rc < 0.0:
                            rc = 0.0
                        nd = base + rc
                        if nd < dt[i]:
                            dt[i] = nd
                            pr[i] = n + j

        target = -1
        for j in range(m):
            if dv[j] > 0 and dt[n + j] != INFINITY:
                if target < 0 or dt[n + j] < dt[n + target]:
                    target = j
        if target < 0:
            raise RuntimeError("no augmenting path in transportation problem")

        node = n + target
        # bottleneck pass
        bottleneck = dv[target]
        k = node
        while pr[k] >= 0:
            a = pr[k]
            if a >= n:
                if fv[k, a - n] < bottleneck:
                    bottleneck = fv[k, a - n]
            k = a
        if sv[k] < bottleneck:
            bottleneck = sv[k]
        # augment pass
        j = node
        while pr[j] >= 0:
            a = pr[j]
            if a < n and j >= n:
                fv[a, j - n] += bottleneck
            else:
                fv[j, a - n] -= bottleneck
            j = a
        sv[j] -= bottleneck
        dv[target] -= bottleneck
        remaining -= bottleneck

        for i in range(n):
            if dt[i] != INFINITY:
                pu[i] -= dt[i]
        for j in range(m):
            if dt[n + j] != INFINITY:
                pw[j] += dt[n + j]

    cdef double total = 0.0
    for i in range(n):
        for j in range(m):
            total += fv[i, j] * c[i, j]
    return flow, total
