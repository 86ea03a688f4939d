"""Vectorised numpy versions of the compiled kernels.

Used when the extension is not built, or when ``CBFUSE_PURE_PYTHON=1``.
"""
import numpy as np


def trilinear(data, idx):
    """Zero-padded trilinear gather.

    Parameters
    ----------
    data : ndarray, float32, shape (nz, ny, nx)
    idx : ndarray, float64, shape (N, 3)
        Fractional (x, y, z) voxel indices.
    """
    nz, ny, nx = data.shape
    idx = np.asarray(idx, dtype=np.float64)
    fl = np.floor(idx)
    base = fl.astype(np.int64)
    frac = idx - fl
    out = np.zeros(idx.shape[0], dtype=np.float64)
    flat = data.reshape(-1)
    for dk in (0, 1):
        k = base[:, 2] + dk
        wz = frac[:, 2] if dk else 1.0 - frac[:, 2]
        ok_k = (k >= 0) & (k < nz)
        for dj in (0, 1):
            j = base[:, 1] + dj
            wy = frac[:, 1] if dj else 1.0 - frac[:, 1]
            ok_kj = ok_k & (j >= 0) & (j < ny)
            for di in (0, 1):
                i = base[:, 0] + di
                wx = frac[:, 0] if di else 1.0 - frac[:, 0]
                ok = ok_kj & (i >= 0) & (i < nx)
                w = wz * wy * wx
                ok &= w != 0.0
                lin = (k[ok] * ny + j[ok]) * nx + i[ok]
                out[ok] += w[ok] * flat[lin]
    return out


def _clip_rays(src, dirs, length, lo, hi):
    tmin = np.zeros(dirs.shape[0])
    tmax = np.full(dirs.shape[0], length) if np.isscalar(length) else length.copy()
    hit = np.ones(dirs.shape[0], dtype=bool)
    for ax in range(3):
        d = dirs[:, ax]
        o = src[ax]
        par = np.abs(d) < 1e-15
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[ax] - o) / d
            t2 = (hi[ax] - o) / d
        ta = np.where(par, -np.inf, np.minimum(t1, t2))
        tb = np.where(par, np.inf, np.maximum(t1, t2))
        hit &= ~par | ((lo[ax] <= o) & (o <= hi[ax]))
        tmin = np.maximum(tmin, ta)
        tmax = np.minimum(tmax, tb)
    hit &= tmin < tmax
    return tmin, tmax, hit


def project(data, origin, spacing, src, det_center, eu, ev, nu, nv, du, dv, step):
    nz, ny, nx = data.shape
    origin = np.asarray(origin, dtype=np.float64)
    spacing = np.asarray(spacing, dtype=np.float64)
    lo = origin - spacing
    hi = origin + np.array([nx, ny, nz]) * spacing
    u = (np.arange(nu) - (nu - 1) * 0.5) * du
    v = (np.arange(nv) - (nv - 1) * 0.5) * dv
    vv, uu = np.meshgrid(v, u, indexing="ij")
    out = np.zeros((src.shape[0], nv, nu))
    for a in range(src.shape[0]):
        pix = (det_center[a][None, :] + uu.reshape(-1, 1) * eu[a][None, :]
               + vv.reshape(-1, 1) * ev[a][None, :])
        d = pix - src[a][None, :]
        length = np.sqrt((d * d).sum(axis=1))
        d = d / length[:, None]
        tmin, tmax, hit = _clip_rays(src[a], d, length, lo, hi)
        res = np.zeros(nu * nv)
        rows = np.nonzero(hit)[0]
        if rows.size:
            nsteps = np.maximum(np.ceil((tmax[rows] - tmin[rows]) / step).astype(np.int64), 1)
            h = (tmax[rows] - tmin[rows]) / nsteps
            nmax = int(nsteps.max())
            s = np.arange(nmax + 1)
            t = tmin[rows, None] + s[None, :] * h[:, None]
            w = np.where(s[None, :] <= nsteps[:, None], 1.0, 0.0)
            w[:, 0] = 0.5
            w[np.arange(rows.size), nsteps] = 0.5
            pts = src[a][None, None, :] + t[..., None] * d[rows][:, None, :]
            idx = ((pts - origin) / spacing).reshape(-1, 3)
            vals = trilinear(data, idx).reshape(t.shape)
            res[rows] = (vals * w).sum(axis=1) * h
        out[a] = res.reshape(nv, nu)
    return out


def backproject(q, angles, sid, sdd, du, dv, xs, ys, zs):
    nviews, nv, nu = q.shape
    out = np.zeros((len(zs), len(ys), len(xs)))
    Y, X = np.meshgrid(ys, xs, indexing="ij")
    cu = (nu - 1) * 0.5
    cv = (nv - 1) * 0.5
    zs = np.asarray(zs)[:, None, None]
    for a in range(nviews):
        c, s = np.cos(angles[a]), np.sin(angles[a])
        depth = sid - X * s + Y * c
        mag = sdd / depth
        fu = np.broadcast_to((X * c + Y * s) * mag / du + cu, out.shape)
        fv = zs * mag[None] / dv + cv
        iu0 = np.floor(fu).astype(np.int64)
        iv0 = np.floor(fv).astype(np.int64)
        tu = fu - iu0
        tv = fv - iv0
        val = np.zeros(out.shape)
        for di, wu in ((0, 1.0 - tu), (1, tu)):
            for dj, wv in ((0, 1.0 - tv), (1, tv)):
                iu = iu0 + di
                iv = iv0 + dj
                ok = (iu >= 0) & (iu < nu) & (iv >= 0) & (iv < nv)
                val[ok] += (wu * wv)[ok] * q[a][iv[ok], iu[ok]]
        out += val * (sid / depth)[None] ** 2
    return out
