"""Signed-proximity training targets from paired pre/post annotations.

Annotation convention: label ``2k-1`` marks the pre-synaptic band of synapse
``k`` and ``2k`` its post-synaptic band.  The cleft of synapse ``k`` is the set
of face midpoints between face-adjacent ``(2k-1, 2k)`` voxel pairs.  The
target at a voxel is ``exp(-d^2 / 2 sigma^2) * tanh(alpha d / 2)`` where ``|d|``
is the distance (nm) to the nearest cleft and the sign of ``d`` says whether
the voxel sits on the pre (+) or post (-) side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distance import distance_to_mask, feature_transform
from .errors import MalformedAnnotationError, ParameterError
from .labeling import face_pairs
from .volume import Volume

SIGMA_DEFAULT_NM = 10.0
SIGMA_40NM_Z_NM = 14.0  # preset for 40 nm section thickness


@dataclass(frozen=True)
class TargetParams:
    alpha: float = 5.0
    sigma: float = SIGMA_DEFAULT_NM
    cutoff_nm: float | None = None  # None -> 4 * sigma

    def __post_init__(self):
        if self.cutoff_nm is None:
            object.__setattr__(self, "cutoff_nm", 4.0 * self.sigma)
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ParameterError(f"alpha must be positive, got {self.alpha}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not self.cutoff_nm >= 3.0 * self.sigma:
            raise ParameterError(f"cutoff_nm must be >= 3*sigma ({3 * self.sigma}), got {self.cutoff_nm}")


@dataclass(frozen=True, eq=False)
class CleftSurface:
    synapse_id: int
    points: np.ndarray  # (n, 3) z, y, x in nm


def proximity_value(d, p: TargetParams = TargetParams()):
    """Signed proximity for signed distance ``d`` (nm); scalar or array."""
    d = np.asarray(d, dtype=np.float64)
    out = np.exp(-(d * d) / (2.0 * p.sigma * p.sigma)) * np.tanh(0.5 * p.alpha * d)
    out = np.where(np.abs(d) > p.cutoff_nm, 0.0, out)
    return float(out) if out.ndim == 0 else out


def synapse_ids(labels: np.ndarray) -> list[int]:
    present = np.unique(labels)
    return sorted({(int(v) + 1) // 2 for v in present if v != 0})


def cleft_faces(labels: np.ndarray) -> dict[int, np.ndarray]:
    """Face midpoints per synapse on the half-voxel lattice (``2*voxel + axis step``).

    Raises MalformedAnnotationError when a synapse lacks a band or its bands
    never touch.
    """
    labels = np.asarray(labels)
    present = set(int(v) for v in np.unique(labels) if v != 0)
    parts: dict[int, list[np.ndarray]] = {}
    for axis, lo, hi in face_pairs(labels, labels):
        small = np.minimum(lo, hi)
        sel = (small % 2 == 1) & (np.maximum(lo, hi) == small + 1)
        if not sel.any():
            continue
        pos = np.argwhere(sel)
        ks = (small[sel].astype(np.int64) + 1) // 2
        fine = 2 * pos
        fine[:, axis] += 1
        for k in np.unique(ks):
            parts.setdefault(int(k), []).append(fine[ks == k])
    out = {}
    for k in synapse_ids(labels):
        if 2 * k - 1 not in present:
            raise MalformedAnnotationError(k, "post band present without a pre band")
        if 2 * k not in present:
            raise MalformedAnnotationError(k, "pre band present without a post band")
        if k not in parts:
            raise MalformedAnnotationError(k, "pre and post bands share no face")
        pts = np.concatenate(parts[k])
        out[k] = pts[np.lexsort(pts.T[::-1])]
    return out


def extract_cleft_surfaces(ann: Volume) -> list[CleftSurface]:
    half = np.asarray(ann.spacing_zyx) / 2.0
    return [CleftSurface(k, pts * half) for k, pts in cleft_faces(ann.data).items()]


def _box(lo, hi, pad, shape):
    return tuple(slice(max(0, int(a) - int(p)), min(int(n), int(b) + 1 + int(p))) for a, b, p, n in zip(lo, hi, pad, shape))


def make_target_array(labels: np.ndarray, spacing_zyx, p: TargetParams = TargetParams()) -> np.ndarray:
    labels = np.asarray(labels)
    faces = cleft_faces(labels)
    out = np.zeros(labels.shape, dtype=np.float32)
    if not faces:
        return out
    coords = np.concatenate(list(faces.values()))
    ids = np.concatenate([np.full(len(v), k) for k, v in faces.items()])
    dist, nearest = feature_transform(coords, ids, labels.shape, spacing_zyx, subdivision=2)
    within = dist <= p.cutoff_nm
    sign = np.ones(labels.shape, dtype=np.float64)
    sp = np.asarray(spacing_zyx, dtype=np.float64)
    # nearest band voxel lies within cutoff + one step of any voxel we sign
    pad = np.ceil((p.cutoff_nm + sp.max()) / sp).astype(int)
    for k in faces:
        region = within & (nearest == k)
        if not region.any():
            continue
        pos = np.argwhere(region)
        qbox = _box(pos.min(0), pos.max(0), (0, 0, 0), labels.shape)
        sbox = _box(pos.min(0), pos.max(0), pad, labels.shape)
        local = labels[sbox]
        d_pre = distance_to_mask(local == 2 * k - 1, sp)
        d_post = distance_to_mask(local == 2 * k, sp)
        inner = tuple(slice(q.start - s.start, q.stop - s.start) for q, s in zip(qbox, sbox))
        side = np.where(d_pre[inner] <= d_post[inner], 1.0, -1.0)
        sign[qbox] = np.where(region[qbox], side, sign[qbox])
    vals = proximity_value(np.where(within, sign * dist, 0.0), p)
    out[within] = vals[within]
    return out


def make_target(ann: Volume, p: TargetParams = TargetParams()) -> Volume:
    """ProximityVolume (f32) for an AnnotationVolume."""
    return Volume(make_target_array(ann.data, ann.spacing_zyx, p), ann.voxel_size_nm_xyz)
