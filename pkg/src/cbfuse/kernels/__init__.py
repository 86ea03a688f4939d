"""Hot loops behind the volume, projector and reconstruction modules.

The Cython extension ``_ckernels`` is used when it is importable; otherwise
(or when the environment variable ``CBFUSE_PURE_PYTHON`` is set to ``1``) the
numpy implementations in ``_pykernels`` are used. Both expose:

trilinear(data, idx)
    zero-padded trilinear gather at fractional (x, y, z) indices
project(data, origin, spacing, src, det_center, eu, ev, nu, nv, du, dv, step)
    fixed-step trapezoidal line integrals for every detector pixel
backproject(q, angles, sid, sdd, du, dv, xs, ys, zs)
    distance-weighted bilinear backprojection on a circular trajectory
"""
import os

from . import _pykernels

if os.environ.get("CBFUSE_PURE_PYTHON", "0") == "1":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

trilinear = _impl.trilinear
project = _impl.project
backproject = _impl.backproject


def get_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.append("cython")
    except ImportError:
        pass
    return names
