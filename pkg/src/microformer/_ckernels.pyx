# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the loop-bound kernels (see ``_pykernels.py``)."""
import numpy as np

from libc.math cimport sqrt, fabs


def j2_path(strain, double lam, double mu, double sigma_y, eps_p0):
    cdef double[:, ::1] e = np.ascontiguousarray(strain, dtype=np.float64)
    cdef Py_ssize_t n = e.shape[0]
    stress_arr = np.empty((n, 4))
    hist_arr = np.empty((n, 4))
    cdef double[:, ::1] stress = stress_arr
    cdef double[:, ::1] hist = hist_arr
    cdef double pxx = eps_p0[0], pyy = eps_p0[1], pzz = eps_p0[2], pxy = eps_p0[3]
    cdef double two_mu = 2.0 * mu
    cdef double bulk = lam + two_mu / 3.0
    cdef double ee_xx, ee_yy, ee_zz, ee_xy, tr, m, sxx, syy, szz, sxy, vm, f, scale, p
    cdef Py_ssize_t t
    for t in range(n):
        ee_xx = e[t, 0] - pxx
        ee_yy = e[t, 1] - pyy
        ee_zz = -pzz
        ee_xy = e[t, 2] - pxy
        tr = ee_xx + ee_yy + ee_zz
        m = tr / 3.0
        sxx = two_mu * (ee_xx - m)
        syy = two_mu * (ee_yy - m)
        szz = two_mu * (ee_zz - m)
        sxy = two_mu * ee_xy
        vm = sqrt(1.5 * (sxx * sxx + syy * syy + szz * szz + 2.0 * sxy * sxy))
        if vm > sigma_y:
            f = (1.0 - sigma_y / vm) / two_mu
            pxx += f * sxx
            pyy += f * syy
            pzz += f * szz
            pxy += f * sxy
            scale = sigma_y / vm
            sxx *= scale
            syy *= scale
            szz *= scale
            sxy *= scale
        p = bulk * tr
        stress[t, 0] = sxx + p
        stress[t, 1] = syy + p
        stress[t, 2] = szz + p
        stress[t, 3] = sxy
        hist[t, 0] = pxx
        hist[t, 1] = pyy
        hist[t, 2] = pzz
        hist[t, 3] = pxy
    return stress_arr, hist_arr


def first_free(candidates, Py_ssize_t start, centers, double cell, double min_dist2):
    cdef double[:, ::1] cand = np.ascontiguousarray(candidates, dtype=np.float64)
    cdef double[:, ::1] cent = np.ascontiguousarray(
        np.asarray(centers, dtype=np.float64).reshape(-1, 2))
    cdef Py_ssize_t i, j
    cdef Py_ssize_t nc = cand.shape[0], nf = cent.shape[0]
    cdef double x, y, dx, dy
    cdef bint ok
    for i in range(start, nc):
        x = cand[i, 0]
        y = cand[i, 1]
        ok = True
        for j in range(nf):
            dx = fabs(x - cent[j, 0])
            if dx > cell - dx:
                dx = cell - dx
            dy = fabs(y - cent[j, 1])
            if dy > cell - dy:
                dy = cell - dy
            if dx * dx + dy * dy < min_dist2:
                ok = False
                break
        if ok:
            return i
    return -1


def two_point_direct(a, b):
    cdef double[:, ::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef double[:, ::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t ni = av.shape[0], nj = av.shape[1]
    out_arr = np.empty((ni, nj))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t ri, rj, si, sj
    cdef double acc
    for ri in range(ni):
        for rj in range(nj):
            acc = 0.0
            for si in range(ni):
                for sj in range(nj):
                    acc += av[si, sj] * bv[(si + ri) % ni, (sj + rj) % nj]
            out[ri, rj] = acc / (ni * nj)
    return out_arr
