"""Volume file I/O.

Native container (``.cbv`` volumes and labels, ``.cbp`` projections,
``.ckpt`` checkpoints)::

    b"CBV1" | u32 little-endian header length | JSON header | raw payload

The JSON header carries ``dims`` (x, y, z), ``spacing``, ``origin`` and
``dtype`` (``"f4"`` or ``"u8"``); payload is little-endian, x fastest.

A minimal reader for single-file, uncompressed NIfTI-1 (``.nii``) is also
provided: int16/uint8/float32 data, ``dim``/``pixdim``/``scl_*`` and the
qform offsets are honoured, orientation is ignored.
"""
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptHeader, IoFailure, UnsupportedFormat
from .volgrid import LabelVolume, Volume

MAGIC = b"CBV1"
_DTYPES = {"f4": np.dtype("<f4"), "u8": np.dtype("u1")}


def write_container(path, header, payload):
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_container(path):
    """Return ``(header_dict, payload_bytes)`` of a native container file."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CorruptHeader(f"{path}: bad magic")
    (n,) = struct.unpack("<I", raw[4:8])
    if 8 + n > len(raw):
        raise CorruptHeader(f"{path}: truncated header")
    try:
        header = json.loads(raw[8:8 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"{path}: unreadable header") from exc
    return header, raw[8 + n:]


def _array_from_payload(header, payload, path):
    try:
        dtype = _DTYPES[header["dtype"]]
        shape = tuple(int(d) for d in header["dims"])[::-1]
    except KeyError as exc:
        raise CorruptHeader(f"{path}: missing header field {exc}") from exc
    count = int(np.prod(shape))
    if len(payload) != count * dtype.itemsize:
        raise CorruptHeader(f"{path}: payload has {len(payload)} bytes, expected "
                            f"{count * dtype.itemsize}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape)


def store_volume(vol, path):
    path = Path(path)
    if path.suffix != ".cbv":
        raise UnsupportedFormat(f"can only write .cbv files, got {path.name}")
    is_labels = isinstance(vol, LabelVolume)
    header = {
        "kind": "labels" if is_labels else "volume",
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "origin": list(vol.origin),
        "dtype": "u8" if is_labels else "f4",
    }
    arr = vol.labels if is_labels else vol.data
    write_container(path, header, np.ascontiguousarray(arr, dtype=_DTYPES[header["dtype"]]).tobytes())


def load_volume(path):
    """Load a ``.cbv`` or ``.nii`` file as :class:`Volume` or :class:`LabelVolume`."""
    path = Path(path)
    if path.suffix == ".cbv":
        header, payload = read_container(path)
        arr = _array_from_payload(header, payload, path)
        cls = LabelVolume if header["dtype"] == "u8" else Volume
        return cls(arr, header["spacing"], header["origin"])
    if path.suffix == ".nii":
        return read_nifti(path)
    if path.name.endswith(".nii.gz"):
        raise UnsupportedFormat("compressed NIfTI is not supported")
    raise UnsupportedFormat(f"unknown volume format: {path.name}")


_NII_DTYPES = {2: "u1", 4: "i2", 16: "f4"}


def read_nifti(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if len(raw) < 348:
        raise CorruptHeader(f"{path}: shorter than a NIfTI header")
    for endian in "<>":
        if struct.unpack(endian + "i", raw[:4])[0] == 348:
            break
    else:
        raise CorruptHeader(f"{path}: sizeof_hdr is not 348")
    if raw[344:348] not in (b"n+1\x00", b"n+1"):
        raise CorruptHeader(f"{path}: missing single-file NIfTI magic")
    dim = struct.unpack(endian + "8h", raw[40:56])
    if not 3 <= dim[0] <= 7 or min(dim[1:4]) < 1 or any(d > 1 for d in dim[4:dim[0] + 1]):
        raise CorruptHeader(f"{path}: unsupported dim field {dim}")
    datatype = struct.unpack(endian + "h", raw[70:72])[0]
    if datatype not in _NII_DTYPES:
        raise UnsupportedFormat(f"{path}: NIfTI datatype {datatype} not supported")
    pixdim = struct.unpack(endian + "8f", raw[76:108])
    vox_offset = int(struct.unpack(endian + "f", raw[108:112])[0])
    slope, inter = struct.unpack(endian + "2f", raw[112:120])
    qform_code = struct.unpack(endian + "h", raw[252:254])[0]
    qoffset = struct.unpack(endian + "3f", raw[268:280])

    nx, ny, nz = dim[1:4]
    dtype = np.dtype(_NII_DTYPES[datatype]).newbyteorder(endian)
    nbytes = nx * ny * nz * dtype.itemsize
    if vox_offset < 348 or vox_offset + nbytes > len(raw):
        raise CorruptHeader(f"{path}: truncated voxel data")
    arr = np.frombuffer(raw, dtype=dtype, count=nx * ny * nz, offset=vox_offset)
    arr = arr.reshape(nz, ny, nx)
    spacing = tuple(abs(p) if p else 1.0 for p in pixdim[1:4])
    origin = tuple(qoffset) if qform_code > 0 else (0.0, 0.0, 0.0)
    if datatype == 2 and slope in (0.0, 1.0) and inter == 0.0 and arr.max(initial=0) <= 2:
        return LabelVolume(arr, spacing, origin)
    data = arr.astype(np.float64)
    # scl_slope == 0 means unscaled
    if slope != 0.0 and np.isfinite(slope):
        data = data * slope + inter
    return Volume(data, spacing, origin)
