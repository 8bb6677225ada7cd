"""Pure-Python implementations of the loop-bound kernels.

Each function mirrors ``_ckernels.pyx`` operation for operation so that both
backends produce bitwise-identical results on IEEE doubles.
"""
import math

import numpy as np


def j2_path(strain, lam, mu, sigma_y, eps_p0):
    """Integrate a plane-strain strain path with perfectly plastic J2 radial return.

    ``strain`` is (T, 3) with tensor shear (xx, yy, xy); ``eps_p0`` is the
    initial plastic strain (xx, yy, zz, xy). Returns stress (T, 4) and plastic
    strain history (T, 4).
    """
    strain = np.ascontiguousarray(strain, dtype=np.float64)
    n = strain.shape[0]
    stress = np.empty((n, 4))
    hist = np.empty((n, 4))
    pxx, pyy, pzz, pxy = (float(v) for v in eps_p0)
    two_mu = 2.0 * mu
    bulk = lam + two_mu / 3.0
    rows = strain.tolist()
    for t in range(n):
        exx, eyy, exy = rows[t]
        ee_xx = exx - pxx
        ee_yy = eyy - pyy
        ee_zz = -pzz
        ee_xy = exy - pxy
        tr = ee_xx + ee_yy + ee_zz
        m = tr / 3.0
        sxx = two_mu * (ee_xx - m)
        syy = two_mu * (ee_yy - m)
        szz = two_mu * (ee_zz - m)
        sxy = two_mu * ee_xy
        vm = math.sqrt(1.5 * (sxx * sxx + syy * syy + szz * szz + 2.0 * sxy * sxy))
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
    return stress, hist


def first_free(candidates, start, centers, cell, min_dist2):
    """Index of the first candidate at or after ``start`` clear of all centers.

    Distances use the minimum-image convention on a square periodic cell.
    Returns -1 when every remaining candidate overlaps.
    """
    cand = np.asarray(candidates, dtype=np.float64).tolist()
    cent = np.asarray(centers, dtype=np.float64).reshape(-1, 2).tolist()
    for i in range(start, len(cand)):
        x, y = cand[i]
        ok = True
        for cx, cy in cent:
            dx = abs(x - cx)
            if dx > cell - dx:
                dx = cell - dx
            dy = abs(y - cy)
            if dy > cell - dy:
                dy = cell - dy
            if dx * dx + dy * dy < min_dist2:
                ok = False
                break
        if ok:
            return i
    return -1


def two_point_direct(a, b):
    """Periodic two-point correlation by direct summation.

    ``out[ri, rj] = mean_s a[s] * b[s + r]`` with indices wrapped.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    ni, nj = a.shape
    out = np.empty((ni, nj))
    for ri in range(ni):
        for rj in range(nj):
            shifted = np.roll(np.roll(b, -ri, axis=0), -rj, axis=1)
            out[ri, rj] = float((a * shifted).sum()) / (ni * nj)
    return out
