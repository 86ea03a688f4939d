# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: trilinear gather, ray-marching projector, voxel-driven backprojector.

Signatures mirror :mod:`cbfuse.kernels._pykernels` exactly.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, sqrt, cos, sin, fabs

cnp.import_array()


cdef inline double _tri(const float[:, :, ::1] data, Py_ssize_t nx, Py_ssize_t ny,
                        Py_ssize_t nz, double x, double y, double z) noexcept nogil:
    # zero padding: neighbours outside the grid contribute 0
    cdef double fx = floor(x), fy = floor(y), fz = floor(z)
    cdef Py_ssize_t i0 = <Py_ssize_t>fx, j0 = <Py_ssize_t>fy, k0 = <Py_ssize_t>fz
    cdef double tx = x - fx, ty = y - fy, tz = z - fz
    cdef double acc = 0.0, wz, wy, w
    cdef Py_ssize_t di, dj, dk, i, j, k
    if i0 < -1 or j0 < -1 or k0 < -1 or i0 >= nx or j0 >= ny or k0 >= nz:
        return 0.0
    for dk in range(2):
        k = k0 + dk
        if k < 0 or k >= nz:
            continue
        wz = tz if dk else 1.0 - tz
        if wz == 0.0:
            continue
        for dj in range(2):
            j = j0 + dj
            if j < 0 or j >= ny:
                continue
            wy = wz * (ty if dj else 1.0 - ty)
            if wy == 0.0:
                continue
            for di in range(2):
                i = i0 + di
                if i < 0 or i >= nx:
                    continue
                w = wy * (tx if di else 1.0 - tx)
                if w != 0.0:
                    acc += w * data[k, j, i]
    return acc


def trilinear(const float[:, :, ::1] data, const double[:, ::1] idx):
    cdef Py_ssize_t n = idx.shape[0], m
    cdef Py_ssize_t nz = data.shape[0], ny = data.shape[1], nx = data.shape[2]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for m in range(n):
            o[m] = _tri(data, nx, ny, nz, idx[m, 0], idx[m, 1], idx[m, 2])
    return out


cdef inline bint _slab(double o, double d, double lo, double hi,
                       double* tmin, double* tmax) noexcept nogil:
    cdef double t1, t2, tmp
    if fabs(d) < 1e-15:
        return lo <= o <= hi
    t1 = (lo - o) / d
    t2 = (hi - o) / d
    if t1 > t2:
        tmp = t1
        t1 = t2
        t2 = tmp
    if t1 > tmin[0]:
        tmin[0] = t1
    if t2 < tmax[0]:
        tmax[0] = t2
    return tmin[0] < tmax[0]


def project(const float[:, :, ::1] data, origin, spacing,
            const double[:, ::1] src, const double[:, ::1] det_center,
            const double[:, ::1] eu, const double[:, ::1] ev,
            int nu, int nv, double du, double dv, double step):
    cdef Py_ssize_t nz = data.shape[0], ny = data.shape[1], nx = data.shape[2]
    cdef Py_ssize_t nviews = src.shape[0], a, iu, iv, s, nsteps
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef double sx = spacing[0], sy = spacing[1], sz = spacing[2]
    cdef double px, py, pz, dx, dy, dz, length, u, v, tmin, tmax, h, acc, t, w
    out = np.zeros((nviews, nv, nu), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for a in range(nviews):
            for iv in range(nv):
                v = (iv - (nv - 1) * 0.5) * dv
                for iu in range(nu):
                    u = (iu - (nu - 1) * 0.5) * du
                    px = det_center[a, 0] + u * eu[a, 0] + v * ev[a, 0]
                    py = det_center[a, 1] + u * eu[a, 1] + v * ev[a, 1]
                    pz = det_center[a, 2] + u * eu[a, 2] + v * ev[a, 2]
                    dx = px - src[a, 0]
                    dy = py - src[a, 1]
                    dz = pz - src[a, 2]
                    length = sqrt(dx * dx + dy * dy + dz * dz)
                    dx /= length
                    dy /= length
                    dz /= length
                    tmin = 0.0
                    tmax = length
                    if not _slab(src[a, 0], dx, ox - sx, ox + nx * sx, &tmin, &tmax):
                        continue
                    if not _slab(src[a, 1], dy, oy - sy, oy + ny * sy, &tmin, &tmax):
                        continue
                    if not _slab(src[a, 2], dz, oz - sz, oz + nz * sz, &tmin, &tmax):
                        continue
                    nsteps = <Py_ssize_t>ceil((tmax - tmin) / step)
                    if nsteps < 1:
                        nsteps = 1
                    h = (tmax - tmin) / nsteps
                    acc = 0.0
                    for s in range(nsteps + 1):
                        t = tmin + s * h
                        w = 0.5 if (s == 0 or s == nsteps) else 1.0
                        acc += w * _tri(data, nx, ny, nz,
                                        (src[a, 0] + t * dx - ox) / sx,
                                        (src[a, 1] + t * dy - oy) / sy,
                                        (src[a, 2] + t * dz - oz) / sz)
                    o[a, iv, iu] = acc * h
    return out


def backproject(const double[:, :, ::1] q, const double[::1] angles,
                double sid, double sdd, double du, double dv,
                const double[::1] xs, const double[::1] ys, const double[::1] zs):
    cdef Py_ssize_t nviews = q.shape[0], nv = q.shape[1], nu = q.shape[2]
    cdef Py_ssize_t nx = xs.shape[0], ny = ys.shape[0], nz = zs.shape[0]
    cdef Py_ssize_t a, i, j, k, iu0, iv0
    cdef double c, s_, depth, mag, fu, fv, tu, tv, val, x, y, lateral
    cdef double cu = (nu - 1) * 0.5, cv = (nv - 1) * 0.5
    out = np.zeros((nz, ny, nx), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        # view loop outermost keeps one projection hot in cache; each voxel still
        # sums views in ascending order
        for a in range(nviews):
            c = cos(angles[a])
            s_ = sin(angles[a])
            for j in range(ny):
                y = ys[j]
                for i in range(nx):
                    x = xs[i]
                    depth = sid - x * s_ + y * c
                    mag = sdd / depth
                    lateral = x * c + y * s_
                    fu = lateral * mag / du + cu
                    if fu <= -1.0 or fu >= nu:
                        continue
                    iu0 = <Py_ssize_t>floor(fu)
                    tu = fu - iu0
                    for k in range(nz):
                        fv = zs[k] * mag / dv + cv
                        if fv <= -1.0 or fv >= nv:
                            continue
                        iv0 = <Py_ssize_t>floor(fv)
                        tv = fv - iv0
                        val = 0.0
                        if iv0 >= 0:
                            if iu0 >= 0:
                                val += (1.0 - tv) * (1.0 - tu) * q[a, iv0, iu0]
                            if iu0 + 1 < nu:
                                val += (1.0 - tv) * tu * q[a, iv0, iu0 + 1]
                        if iv0 + 1 < nv:
                            if iu0 >= 0:
                                val += tv * (1.0 - tu) * q[a, iv0 + 1, iu0]
                            if iu0 + 1 < nu:
                                val += tv * tu * q[a, iv0 + 1, iu0 + 1]
                        o[k, j, i] += val * (sid / depth) * (sid / depth)
    return out
