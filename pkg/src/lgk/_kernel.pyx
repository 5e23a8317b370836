# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled uniformization kernel.

Must stay operation-for-operation identical to ``_kernel_py.run_proposals``:
both backends consume the same uniforms and make the same float comparisons,
so trajectories agree bit for bit.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def run_proposals(cnp.uint8_t[:, ::1] occ, const cnp.int64_t[:, ::1] nbr,
                  const double[:, ::1] drift, const cnp.int64_t[:, ::1] coll,
                  const double[::1] uniforms, Py_ssize_t n_prop, double p_ex,
                  double dmax, cnp.int64_t[::1] counters):
    cdef Py_ssize_t n_sites = occ.shape[1]
    cdef Py_ssize_t n_species = occ.shape[0]
    cdef Py_ssize_t n_dir = nbr.shape[1]
    cdef Py_ssize_t n_coll = coll.shape[0]
    cdef Py_ssize_t n_ex = n_species * n_sites * n_dir
    cdef Py_ssize_t n_c = n_coll * n_sites
    cdef Py_ssize_t i, slot, v, x, k, y, qi
    cdef double u, acc
    cdef double inv_top = 1.0 / (1.0 + dmax)
    cdef double p_c = 1.0 - p_ex
    cdef cnp.int64_t a_ex = 0, h_ex = 0, a_c = 0, h_c = 0
    with nogil:
        for i in range(n_prop):
            u = uniforms[2 * i]
            acc = uniforms[2 * i + 1]
            if u < p_ex:
                a_ex += 1
                slot = <Py_ssize_t>((u / p_ex) * n_ex)
                if slot >= n_ex:
                    slot = n_ex - 1
                k = slot % n_dir
                slot = slot // n_dir
                x = slot % n_sites
                v = slot // n_sites
                y = nbr[x, k]
                if occ[v, x] == 1 and occ[v, y] == 0:
                    if acc < (1.0 + drift[v, k]) * inv_top:
                        occ[v, x] = 0
                        occ[v, y] = 1
                        h_ex += 1
            else:
                a_c += 1
                slot = <Py_ssize_t>(((u - p_ex) / p_c) * n_c)
                if slot >= n_c:
                    slot = n_c - 1
                x = slot % n_sites
                qi = slot // n_sites
                if (occ[coll[qi, 0], x] == 1 and occ[coll[qi, 1], x] == 1
                        and occ[coll[qi, 2], x] == 0 and occ[coll[qi, 3], x] == 0):
                    occ[coll[qi, 0], x] = 0
                    occ[coll[qi, 1], x] = 0
                    occ[coll[qi, 2], x] = 1
                    occ[coll[qi, 3], x] = 1
                    h_c += 1
    counters[0] += a_ex
    counters[1] += h_ex
    counters[2] += a_c
    counters[3] += h_c
