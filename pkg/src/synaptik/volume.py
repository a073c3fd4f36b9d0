"""Dense volume container and the ``svol1`` on-disk format.

Arrays are indexed ``[z, y, x]`` (x fastest in memory).  Voxel spacing is kept
in x, y, z order as it is usually quoted for EM stacks (e.g. 4 x 4 x 30 nm);
``spacing_zyx`` gives the array-aligned view.

An ``svol1`` volume is two files: a JSON header ``<stem>.json`` and a raw
little-endian payload ``<stem>.raw``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, ShapeError

DTYPES = {"u8": np.dtype("<u1"), "u32": np.dtype("<u4"), "f32": np.dtype("<f4")}
_DTYPE_NAMES = {v.newbyteorder("="): k for k, v in DTYPES.items()}

FORMAT_TAG = "svol1"


@dataclass(frozen=True, eq=False)
class Volume:
    data: np.ndarray
    voxel_size_nm_xyz: tuple[float, float, float]

    def __post_init__(self):
        arr = np.asarray(self.data)
        name = _DTYPE_NAMES.get(arr.dtype.newbyteorder("="))
        if name is None:
            raise ParameterError(f"unsupported dtype {arr.dtype}; expected one of u8, u32, f32")
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"volume must be 3D with positive dims, got shape {arr.shape}")
        spacing = tuple(float(s) for s in self.voxel_size_nm_xyz)
        if len(spacing) != 3 or not all(math.isfinite(s) and s > 0 for s in spacing):
            raise ParameterError(f"voxel size must be three positive finite values, got {self.voxel_size_nm_xyz}")
        arr = np.array(arr, dtype=DTYPES[name].newbyteorder("="), order="C", copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "voxel_size_nm_xyz", spacing)

    @property
    def dims_zyx(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def dtype(self) -> str:
        return _DTYPE_NAMES[self.data.dtype]

    @property
    def spacing_zyx(self) -> tuple[float, float, float]:
        sx, sy, sz = self.voxel_size_nm_xyz
        return (sz, sy, sx)

    def header(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "dtype": self.dtype,
            "dims_zyx": list(self.dims_zyx),
            "voxel_size_nm_xyz": list(self.voxel_size_nm_xyz),
            "byte_order": "little",
        }

    def same_grid(self, other: "Volume") -> bool:
        return self.dims_zyx == other.dims_zyx


def check_same_dims(*vols: Volume) -> None:
    dims = {v.dims_zyx for v in vols}
    if len(dims) > 1:
        raise ShapeError(f"volume dims differ: {sorted(dims)}")


def as_segmentation(vol: Volume) -> Volume:
    if vol.dtype != "u32":
        raise ParameterError(f"segmentation must be u32, got {vol.dtype}")
    return vol


def as_proximity(vol: Volume) -> Volume:
    if vol.dtype != "f32":
        raise ParameterError(f"proximity volume must be f32, got {vol.dtype}")
    d = vol.data
    if not np.all(np.isfinite(d)) or np.abs(d).max(initial=0.0) > 1.0:
        raise ParameterError("proximity values must be finite and within [-1, 1]")
    return vol


def _paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".raw"):
        p = p.with_suffix("")
    return p.with_suffix(".json"), p.with_suffix(".raw")


def write_svol(path: str | Path, vol: Volume) -> Path:
    """Write ``vol`` as ``<stem>.json`` + ``<stem>.raw``; returns the header path."""
    hdr_path, raw_path = _paths(path)
    hdr_path.parent.mkdir(parents=True, exist_ok=True)
    hdr_path.write_text(json.dumps(vol.header()) + "\n")
    vol.data.astype(DTYPES[vol.dtype], copy=False).tofile(raw_path)
    return hdr_path


def read_svol(path: str | Path) -> Volume:
    hdr_path, raw_path = _paths(path)
    try:
        hdr = json.loads(hdr_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read svol1 header {hdr_path}: {exc}") from exc
    if hdr.get("format") != FORMAT_TAG:
        raise FormatError(f"{hdr_path}: not an svol1 header")
    if hdr.get("byte_order", "little") != "little":
        raise FormatError(f"{hdr_path}: only little-endian payloads are supported")
    if hdr.get("dtype") not in DTYPES:
        raise FormatError(f"{hdr_path}: unknown dtype {hdr.get('dtype')!r}")
    dims = tuple(int(n) for n in hdr["dims_zyx"])
    dt = DTYPES[hdr["dtype"]]
    try:
        flat = np.fromfile(raw_path, dtype=dt)
    except OSError as exc:
        raise FormatError(f"cannot read svol1 payload {raw_path}: {exc}") from exc
    if flat.size != int(np.prod(dims)):
        raise FormatError(f"{raw_path}: expected {int(np.prod(dims))} values, found {flat.size}")
    return Volume(flat.reshape(dims), tuple(hdr["voxel_size_nm_xyz"]))
