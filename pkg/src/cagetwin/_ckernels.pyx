# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; numerically equivalent to ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, fabs

cnp.import_array()


def weighted_sqdist(X, Y, w):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], d = x.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, k
    cdef double acc, t
    cdef bint same = X is Y
    for i in range(n):
        for j in range(i if same else 0, m):
            acc = 0.0
            for k in range(d):
                t = x[i, k] - y[j, k]
                acc = acc + ww[k] * (t * t)
            o[i, j] = acc
            if same:
                o[j, i] = acc
    return out


def se_ard(X, Y, w, double amp):
    cdef const double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] y = np.ascontiguousarray(Y, dtype=np.float64)
    cdef const double[::1] ww = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0], d = x.shape[1]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, k
    cdef double acc, t, v
    cdef bint same = X is Y
    for i in range(n):
        for j in range(i if same else 0, m):
            acc = 0.0
            for k in range(d):
                t = x[i, k] - y[j, k]
                acc = acc + ww[k] * (t * t)
            v = amp * exp(-0.5 * acc)
            o[i, j] = v
            if same:
                o[j, i] = v
    return out


def edge_forces(pos, edges, rest_len, axial):
    cdef const double[:, ::1] p = np.ascontiguousarray(pos, dtype=np.float64)
    cdef const long[:, ::1] ed = np.ascontiguousarray(edges, dtype=np.int64)
    cdef const double[::1] l0 = np.ascontiguousarray(rest_len, dtype=np.float64)
    cdef const double[::1] ea = np.ascontiguousarray(axial, dtype=np.float64)
    cdef Py_ssize_t n_edges = ed.shape[0]
    forces = np.zeros((p.shape[0], 3), dtype=np.float64)
    tension = np.empty(n_edges, dtype=np.float64)
    blocks = np.empty((n_edges, 3, 3), dtype=np.float64)
    cdef double[:, ::1] f = forces
    cdef double[::1] ten = tension
    cdef double[:, :, ::1] blk = blocks
    cdef Py_ssize_t q, a, b, r, c
    cdef double vec[3]
    cdef double e[3]
    cdef double length, stiff, t, geo, eye
    for q in range(n_edges):
        a = ed[q, 0]
        b = ed[q, 1]
        for r in range(3):
            vec[r] = p[b, r] - p[a, r]
        length = sqrt(vec[0] * vec[0] + vec[1] * vec[1] + vec[2] * vec[2])
        for r in range(3):
            e[r] = vec[r] / length
        stiff = ea[q] / l0[q]
        t = stiff * (length - l0[q])
        ten[q] = t
        for r in range(3):
            f[a, r] += t * e[r]
            f[b, r] -= t * e[r]
        geo = t / length
        for r in range(3):
            for c in range(3):
                eye = 1.0 if r == c else 0.0
                blk[q, r, c] = stiff * (e[r] * e[c]) + geo * (eye - e[r] * e[c])
    return forces, tension, blocks


cdef inline void _cross(double* u, double* v, double* out) nogil:
    out[0] = u[1] * v[2] - u[2] * v[1]
    out[1] = u[2] * v[0] - u[0] * v[2]
    out[2] = u[0] * v[1] - u[1] * v[0]


cdef inline void _skew(double* v, double scale, double[:, :] out) nogil:
    out[0, 0] = 0.0
    out[0, 1] = -v[2] * scale
    out[0, 2] = v[1] * scale
    out[1, 0] = v[2] * scale
    out[1, 1] = 0.0
    out[1, 2] = -v[0] * scale
    out[2, 0] = -v[1] * scale
    out[2, 1] = v[0] * scale
    out[2, 2] = 0.0


def panel_drag(pos, panels, weights, velocity, double c_normal, double c_tangent):
    cdef const double[:, ::1] p = np.ascontiguousarray(pos, dtype=np.float64)
    cdef const long[:, ::1] pan = np.ascontiguousarray(panels, dtype=np.int64)
    cdef const double[:, ::1] wt = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const double[:, ::1] vel = np.ascontiguousarray(velocity, dtype=np.float64)
    cdef Py_ssize_t n_panels = pan.shape[0]
    forces = np.zeros((p.shape[0], 3), dtype=np.float64)
    blocks = np.zeros((n_panels, 4, 4, 3, 3), dtype=np.float64)
    cdef double[:, ::1] f = forces
    cdef double[:, :, :, :, ::1] blk = blocks
    M_arr = np.empty((4, 3, 3), dtype=np.float64)
    cdef double[:, :, ::1] M = M_arr
    cdef double G[3][3]
    cdef double ca[3]
    cdef double db[3]
    cdef double s[3]
    cdef double u[3]
    cdef double F[3]
    cdef Py_ssize_t q, i, j, r, c, k
    cdef double A, A2, speed, un, aun, eye, acc
    for q in range(n_panels):
        for r in range(3):
            ca[r] = p[pan[q, 2], r] - p[pan[q, 0], r]
            db[r] = p[pan[q, 3], r] - p[pan[q, 1], r]
            u[r] = vel[q, r]
        _cross(ca, db, s)
        for r in range(3):
            s[r] = 0.5 * s[r]
        A = sqrt(s[0] * s[0] + s[1] * s[1] + s[2] * s[2])
        speed = sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
        if A <= 0.0 or speed <= 0.0:
            continue
        A2 = A * A
        un = u[0] * s[0] + u[1] * s[1] + u[2] * s[2]
        aun = fabs(un)
        for r in range(3):
            F[r] = (c_normal * un * aun / A2) * s[r] + (c_tangent * speed) * (A * u[r] - (un / A) * s[r])
        for r in range(3):
            for c in range(3):
                eye = 1.0 if r == c else 0.0
                G[r][c] = (c_normal * 2.0 * aun / A2) * (s[r] * u[c]) \
                    + (c_normal * un * aun) * (eye / A2 - 2.0 * (s[r] * s[c]) / (A2 * A2)) \
                    + (c_tangent * speed) * ((u[r] * s[c] - s[r] * u[c]) / A
                                             - un * (eye / A - (s[r] * s[c]) / (A2 * A)))
        _skew(db, 0.5, M[0])
        _skew(ca, -0.5, M[1])
        _skew(db, -0.5, M[2])
        _skew(ca, 0.5, M[3])
        for i in range(4):
            for r in range(3):
                f[pan[q, i], r] += wt[q, i] * F[r]
            for j in range(4):
                for r in range(3):
                    for c in range(3):
                        acc = 0.0
                        for k in range(3):
                            acc = acc + G[r][k] * M[j, k, c]
                        blk[q, i, j, r, c] = wt[q, i] * acc
    return forces, blocks
