"""Single-file NIfTI-1 reading and writing.

Scope is deliberately narrow: single-file ``.nii`` / ``.nii.gz`` images
(magic ``n+1\\0``), 3D grids, datatypes uint8 / int16 / int32 / float32 /
float64, both endiannesses (sniffed from ``sizeof_hdr``).  Paired
``.hdr``/``.img`` (magic ``ni1\\0``) and NIfTI-2 are rejected.  Header
extensions are skipped, never interpreted.  Only ``pixdim`` is consumed for
geometry; qform/sform rotations are ignored.

The writer emits one canonical form: little-endian float32, a 348-byte
header, 4 zero extension bytes, and voxels in on-disk x-fastest order
(``vox_offset = 352``).  The modality tag survives a round-trip through the
``descrip`` field; the origin offset through ``qoffset_{x,y,z}``.
"""

from __future__ import annotations

import gzip
from pathlib import Path

import numpy as np

from .errors import (BadMagic, IoFailure, NonFiniteVoxel, NonPositiveSpacing,
                     TruncatedFile, UnsupportedDtype)
from .volume import MODALITIES, Volume

HEADER_SIZE = 348
VOX_OFFSET = 352  # header + 4 extension pad bytes
MAGIC_SINGLE = b"n+1\x00"
MAGIC_PAIRED = b"ni1\x00"

_HEADER_FIELDS = [
    ("sizeof_hdr", "i4"),
    ("data_type", "S10"),
    ("db_name", "S18"),
    ("extents", "i4"),
    ("session_error", "i2"),
    ("regular", "S1"),
    ("dim_info", "u1"),
    ("dim", "i2", (8,)),
    ("intent_p1", "f4"),
    ("intent_p2", "f4"),
    ("intent_p3", "f4"),
    ("intent_code", "i2"),
    ("datatype", "i2"),
    ("bitpix", "i2"),
    ("slice_start", "i2"),
    ("pixdim", "f4", (8,)),
    ("vox_offset", "f4"),
    ("scl_slope", "f4"),
    ("scl_inter", "f4"),
    ("slice_end", "i2"),
    ("slice_code", "u1"),
    ("xyzt_units", "u1"),
    ("cal_max", "f4"),
    ("cal_min", "f4"),
    ("slice_duration", "f4"),
    ("toffset", "f4"),
    ("glmax", "i4"),
    ("glmin", "i4"),
    ("descrip", "S80"),
    ("aux_file", "S24"),
    ("qform_code", "i2"),
    ("sform_code", "i2"),
    ("quatern_b", "f4"),
    ("quatern_c", "f4"),
    ("quatern_d", "f4"),
    ("qoffset_x", "f4"),
    ("qoffset_y", "f4"),
    ("qoffset_z", "f4"),
    ("srow_x", "f4", (4,)),
    ("srow_y", "f4", (4,)),
    ("srow_z", "f4", (4,)),
    ("intent_name", "S16"),
    ("magic", "S4"),
]

# datatype code -> numpy dtype character (sans byte order)
_DTYPES = {2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8"}
_BITPIX = {2: 8, 4: 16, 8: 32, 16: 32, 64: 64}
_DTYPE_F32 = 16


def _header_dtype(byteorder: str) -> np.dtype:
    return np.dtype([(name, byteorder + spec, *rest)
                     for name, spec, *rest in _HEADER_FIELDS])


assert _header_dtype("<").itemsize == HEADER_SIZE


def _read_bytes(path: Path) -> bytes:
    """Whole file, transparently gunzipped (sniffed by content magic)."""
    try:
        raw = path.read_bytes()
        if raw[:2] == b"\x1f\x8b":
            raw = gzip.decompress(raw)
        return raw
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _parse_header(raw: bytes, path: Path):
    """Decode the 348-byte header, sniffing endianness from sizeof_hdr."""
    if len(raw) < HEADER_SIZE:
        raise TruncatedFile(f"{path}: {len(raw)} bytes, header needs {HEADER_SIZE}")
    order = "<"
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_header_dtype(order))[0]
    if hdr["sizeof_hdr"] != HEADER_SIZE:
        order = ">"
        hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=_header_dtype(order))[0]
        if hdr["sizeof_hdr"] != HEADER_SIZE:
            raise BadMagic(f"{path}: sizeof_hdr is not 348 in either byte order")
    magic = bytes(hdr["magic"])
    if magic == MAGIC_PAIRED:
        raise BadMagic(f"{path}: paired .hdr/.img images are not supported")
    if magic != MAGIC_SINGLE:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    return hdr, order


def read_nifti(path: str | Path) -> Volume:
    """Load a single-file NIfTI-1 volume.

    Values are scaled by scl_slope/scl_inter when scl_slope is nonzero;
    spacing comes from pixdim[1..3].  4D files with trailing extent 1
    collapse to 3D; true time series are rejected.
    """
    path = Path(path)
    raw = _read_bytes(path)
    hdr, order = _parse_header(raw, path)

    ndim = int(hdr["dim"][0])
    if ndim < 3:
        raise BadMagic(f"{path}: expected a 3D volume, dim[0]={ndim}")
    shape = tuple(int(e) for e in hdr["dim"][1:1 + ndim])
    if any(e < 1 for e in shape):
        raise BadMagic(f"{path}: non-positive grid extent in dim={shape}")
    if ndim > 3:
        if any(e != 1 for e in shape[3:]):
            raise BadMagic(f"{path}: 4D time series are not supported")
        shape = shape[:3]

    code = int(hdr["datatype"])
    if code not in _DTYPES:
        raise UnsupportedDtype(f"{path}: datatype code {code}")
    dt = np.dtype(order + _DTYPES[code])

    spacing = tuple(float(s) for s in hdr["pixdim"][1:4])
    if not all(np.isfinite(s) and s > 0 for s in spacing):
        raise NonPositiveSpacing(f"{path}: pixdim[1..3]={spacing}")

    offset = int(hdr["vox_offset"])
    if offset < HEADER_SIZE:
        offset = VOX_OFFSET
    nvox = int(np.prod(shape))
    need = offset + nvox * dt.itemsize
    if len(raw) < need:
        raise TruncatedFile(f"{path}: {len(raw)} bytes, voxel data needs {need}")

    flat = np.frombuffer(raw, dtype=dt, count=nvox, offset=offset)
    # On-disk layout is x-fastest: Fortran order for an (x, y, z) grid.
    grid = flat.reshape(shape, order="F").astype(np.float32)

    slope = float(hdr["scl_slope"])
    inter = float(hdr["scl_inter"])
    if slope != 0.0 and np.isfinite(slope) and (slope, inter) != (1.0, 0.0):
        grid = grid * np.float32(slope) + np.float32(inter)

    if not np.isfinite(grid).all():
        raise NonFiniteVoxel(f"{path}: NaN/Inf voxels after scaling")

    origin = (float(hdr["qoffset_x"]), float(hdr["qoffset_y"]),
              float(hdr["qoffset_z"]))
    return Volume(voxels=grid, spacing=spacing, origin_offset=origin,
                  modality=_modality_from_descrip(bytes(hdr["descrip"])))


def _modality_from_descrip(descrip: bytes) -> str:
    text = descrip.split(b"\x00", 1)[0].decode("utf-8", errors="replace")
    for part in text.split():
        if part.startswith("modality=") and part[9:] in MODALITIES:
            return part[9:]
    return "UNKNOWN"


def write_nifti(vol: Volume, path: str | Path) -> None:
    """Write the canonical single-file form: little-endian float32.

    ``.nii.gz`` paths are gzip-compressed with mtime pinned to zero so
    identical volumes produce byte-identical files.
    """
    path = Path(path)
    hdr = np.zeros((), dtype=_header_dtype("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    dim = np.ones(8, dtype=np.int16)
    dim[0] = 3
    dim[1:4] = vol.shape
    hdr["dim"] = dim
    hdr["datatype"] = _DTYPE_F32
    hdr["bitpix"] = _BITPIX[_DTYPE_F32]
    pixdim = np.zeros(8, dtype=np.float32)
    pixdim[0] = 1.0
    pixdim[1:4] = vol.spacing
    hdr["pixdim"] = pixdim
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["scl_inter"] = 0.0
    hdr["xyzt_units"] = 2  # mm
    hdr["descrip"] = f"modality={vol.modality}".encode()
    hdr["qform_code"] = 1
    hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"] = vol.origin_offset
    hdr["magic"] = MAGIC_SINGLE

    payload = (hdr.tobytes()
               + b"\x00\x00\x00\x00"
               + np.ascontiguousarray(vol.voxels, dtype="<f4").tobytes(order="F"))
    try:
        if path.suffix == ".gz":
            with open(path, "wb") as f:
                with gzip.GzipFile(fileobj=f, mode="wb", mtime=0) as gz:
                    gz.write(payload)
        else:
            path.write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
