"""Connected-component labeling and segment adjacency."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ParameterError

PRE = "pre"
POST = "post"

_STRUCTURES = {
    6: ndimage.generate_binary_structure(3, 1),
    18: ndimage.generate_binary_structure(3, 2),
    26: ndimage.generate_binary_structure(3, 3),
}


@dataclass(frozen=True, eq=False)
class Component:
    """A connected voxel set; ``id`` is its smallest linear index."""

    id: int
    voxels: np.ndarray = field(repr=False)
    polarity: str | None = None

    @property
    def size(self) -> int:
        return int(self.voxels.size)

    def coords(self, shape) -> np.ndarray:
        return np.stack(np.unravel_index(self.voxels, shape), axis=1)


def connected_components(mask, connectivity: int = 26, polarity: str | None = None):
    """Label ``mask`` and return ``(labels, components)``.

    ``labels`` is uint32 holding ``component.id + 1`` on foreground voxels and
    0 elsewhere (the +1 keeps a component that starts at voxel 0 distinct from
    background).  Components are sorted by id.
    """
    if connectivity not in _STRUCTURES:
        raise ParameterError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 3:
        raise ParameterError(f"mask must be 3D, got shape {mask.shape}")
    raw, n = ndimage.label(mask, structure=_STRUCTURES[connectivity])
    labels = np.zeros(mask.shape, dtype=np.uint32)
    if n == 0:
        return labels, []
    flat = raw.ravel()
    fg = np.flatnonzero(flat)
    lab = flat[fg]
    # stable sort keeps voxel indices ascending inside each label
    order = np.argsort(lab, kind="stable")
    fg, lab = fg[order], lab[order]
    starts = np.flatnonzero(np.r_[True, lab[1:] != lab[:-1]])
    groups = np.split(fg, starts[1:])
    comps = sorted((Component(int(g[0]), g, polarity) for g in groups), key=lambda c: c.id)
    out = labels.reshape(-1)
    for c in comps:
        out[c.voxels] = c.id + 1
    return labels, comps


def components_from_labels(labels, polarity: str | None = None) -> list[Component]:
    """Rebuild the component list from a label volume written by ``connected_components``."""
    flat = np.asarray(labels).ravel()
    fg = np.flatnonzero(flat)
    if fg.size == 0:
        return []
    lab = flat[fg]
    order = np.argsort(lab, kind="stable")
    fg, lab = fg[order], lab[order]
    starts = np.flatnonzero(np.r_[True, lab[1:] != lab[:-1]])
    return [Component(int(g[0]), g, polarity) for g in np.split(fg, starts[1:])]


def face_pairs(a: np.ndarray, b: np.ndarray):
    """Yield ``(axis, lo, hi)`` views of the face-adjacent voxel pairs of ``a`` (and ``b``)."""
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        yield axis, a[tuple(lo)], b[tuple(hi)]


def segment_adjacency(seg) -> dict[tuple[int, int], int]:
    """Contact area (face-adjacent voxel pairs) for every touching pair of nonzero ids.

    Keys are ``(smaller id, larger id)``.
    """
    seg = np.asarray(seg)
    keys = []
    for _, u, v in face_pairs(seg, seg):
        sel = (u != v) & (u != 0) & (v != 0)
        if not sel.any():
            continue
        u = u[sel].astype(np.uint64)
        v = v[sel].astype(np.uint64)
        keys.append((np.minimum(u, v) << np.uint64(32)) | np.maximum(u, v))
    if not keys:
        return {}
    uniq, counts = np.unique(np.concatenate(keys), return_counts=True)
    lo = (uniq >> np.uint64(32)).astype(np.int64)
    hi = (uniq & np.uint64(0xFFFFFFFF)).astype(np.int64)
    return {(int(a), int(b)): int(c) for a, b, c in zip(lo, hi, counts)}
