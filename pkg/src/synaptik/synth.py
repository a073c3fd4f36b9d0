"""Synthetic phantoms with known cells, synapses and targets.

Cells are anisotropic Voronoi regions of pseudorandom seed voxels.  Each
synapse is a patch of the boundary between two touching cells; annotation
bands of ``band_thickness_nm`` are painted on both sides of it, the lower
cell id taking the pre-synaptic (odd) label.  All randomness comes from
SplitMix64 streams derived from ``PhantomConfig.seed``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .distance import distance_to_mask, feature_transform
from .errors import GenerationError, ParameterError
from .evaluation import GroundTruthConnection
from .labeling import face_pairs, segment_adjacency
from .rng import SplitMix64
from .target import TargetParams, make_target
from .volume import Volume


@dataclass(frozen=True)
class PhantomConfig:
    dims_zyx: tuple[int, int, int] = (32, 192, 192)
    voxel_size_nm_xyz: tuple[float, float, float] = (4.0, 4.0, 30.0)
    n_cells: int = 25
    n_synapses: int = 15
    band_thickness_nm: float = 40.0
    membrane_gray: int = 60
    cytoplasm_gray: int = 180
    gray_noise_std: float = 10.0
    n_distractors: int = 0  # consumed by oracle_predict in the pipeline
    seed: int = 7
    patch_radius_nm: float = 100.0
    min_patch_faces: int = 100
    min_lateral_fraction: float = 0.3
    synapse_separation_nm: float = 120.0
    placement_tries: int = 20

    def __post_init__(self):
        object.__setattr__(self, "dims_zyx", tuple(int(n) for n in self.dims_zyx))
        object.__setattr__(self, "voxel_size_nm_xyz", tuple(float(s) for s in self.voxel_size_nm_xyz))
        if len(self.dims_zyx) != 3 or min(self.dims_zyx) < 1:
            raise ParameterError(f"dims_zyx must be three positive ints, got {self.dims_zyx}")
        if self.n_cells < 2:
            raise ParameterError("n_cells must be >= 2")
        if self.n_cells > int(np.prod(self.dims_zyx)):
            raise ParameterError("more cells than voxels")
        if self.n_synapses < 0 or self.n_distractors < 0:
            raise ParameterError("n_synapses and n_distractors must be >= 0")
        if self.band_thickness_nm <= 0:
            raise ParameterError("band_thickness_nm must be positive")
        for g in (self.membrane_gray, self.cytoplasm_gray):
            if not 0 <= g <= 255:
                raise ParameterError("gray levels must fit in u8")
        if self.gray_noise_std < 0:
            raise ParameterError("gray_noise_std must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class PhantomBundle:
    config: PhantomConfig
    image: Volume
    gt_seg: Volume
    annotation: Volume
    connections: list[GroundTruthConnection]
    target: Volume
    target_params: TargetParams = field(default_factory=TargetParams)


def _cell_seeds(rng: SplitMix64, cfg: PhantomConfig) -> np.ndarray:
    Z, Y, X = cfg.dims_zyx
    seen: set[tuple[int, int, int]] = set()
    out = []
    while len(out) < cfg.n_cells:
        c = (rng.randbelow(Z), rng.randbelow(Y), rng.randbelow(X))
        if c not in seen:
            seen.add(c)
            out.append(c)
    return np.array(out, dtype=np.int64)


def _boundary_faces(cells: np.ndarray):
    """Half-lattice coords, axis and (lo id, hi id) key of every face between two cells."""
    coords, axes, keys = [], [], []
    for axis, lo, hi in face_pairs(cells, cells):
        sel = lo != hi
        pos = np.argwhere(sel)
        fine = 2 * pos
        fine[:, axis] += 1
        a = lo[sel].astype(np.int64)
        b = hi[sel].astype(np.int64)
        coords.append(fine)
        axes.append(np.full(len(fine), axis))
        keys.append(np.minimum(a, b) * (1 << 32) + np.maximum(a, b))
    return np.concatenate(coords), np.concatenate(axes), np.concatenate(keys)


def _paint_bands(annotation, cells, patch_fine, pre, post, k, cfg, spacing):
    t = cfg.band_thickness_nm
    shape = cells.shape
    pad = np.ceil(t / spacing).astype(int) + 1
    lo = patch_fine.min(0) // 2
    hi = (patch_fine.max(0) + 1) // 2
    box = tuple(slice(max(0, a - p), min(n, b + p + 1)) for a, b, p, n in zip(lo, hi, pad, shape))
    origin = np.array([s.start for s in box])
    local_shape = tuple(s.stop - s.start for s in box)
    dist, _ = feature_transform(patch_fine - 2 * origin, np.ones(len(patch_fine)), local_shape, spacing, subdivision=2)
    near = dist <= t
    ann = annotation[box]
    free = ann == 0
    c = cells[box]
    ann[near & free & (c == pre)] = 2 * k - 1
    ann[near & free & (c == post)] = 2 * k


def generate_phantom(cfg: PhantomConfig = PhantomConfig(), target_params: TargetParams = TargetParams()) -> PhantomBundle:
    rng = SplitMix64(cfg.seed)
    spacing = np.array(Volume(np.zeros((1, 1, 1), np.uint8), cfg.voxel_size_nm_xyz).spacing_zyx)
    shape = cfg.dims_zyx

    seeds = _cell_seeds(rng, cfg)
    _, cells = feature_transform(seeds, np.arange(1, cfg.n_cells + 1), shape, spacing)
    cells = cells.astype(np.uint32)

    adjacency = segment_adjacency(cells)
    eligible = [pair for pair, area in sorted(adjacency.items()) if area >= cfg.min_patch_faces]
    if cfg.n_synapses > len(eligible):
        raise GenerationError(
            f"{cfg.n_synapses} synapses requested but only {len(eligible)} cell pairs share >= {cfg.min_patch_faces} faces"
        )

    annotation = np.zeros(shape, dtype=np.uint32)
    connections: list[GroundTruthConnection] = []
    placed: list[np.ndarray] = []
    if cfg.n_synapses:
        f_coords, f_axes, f_keys = _boundary_faces(cells)
        f_nm = f_coords * (spacing / 2.0)
        for pre, post in rng.shuffle(eligible):
            if len(connections) == cfg.n_synapses:
                break
            sel = np.flatnonzero(f_keys == pre * (1 << 32) + post)
            tree = cKDTree(np.concatenate(placed)) if placed else None
            for _ in range(cfg.placement_tries):
                center = f_nm[sel[rng.randbelow(len(sel))]]
                patch = sel[np.linalg.norm(f_nm[sel] - center, axis=1) <= cfg.patch_radius_nm]
                if len(patch) < cfg.min_patch_faces:
                    continue
                if np.mean(f_axes[patch] != 0) < cfg.min_lateral_fraction:
                    continue
                if tree is not None and tree.query(f_nm[patch])[0].min() < cfg.synapse_separation_nm:
                    continue
                k = len(connections) + 1
                _paint_bands(annotation, cells, f_coords[patch], pre, post, k, cfg, spacing)
                span = np.flatnonzero((annotation == 2 * k - 1) | (annotation == 2 * k))
                connections.append(GroundTruthConnection(k, int(pre), int(post), span))
                placed.append(f_nm[patch])
                break
        if len(connections) < cfg.n_synapses:
            raise GenerationError(
                f"placed only {len(connections)} of {cfg.n_synapses} well-separated synapses; "
                "use fewer synapses, more cells or a larger volume"
            )

    membrane = np.zeros(shape, dtype=bool)
    for axis, lo, hi in face_pairs(cells, cells):
        diff = lo != hi
        idx_lo = [slice(None)] * 3
        idx_hi = [slice(None)] * 3
        idx_lo[axis] = slice(None, -1)
        idx_hi[axis] = slice(1, None)
        membrane[tuple(idx_lo)] |= diff
        membrane[tuple(idx_hi)] |= diff
    gray = np.where(membrane, float(cfg.membrane_gray), float(cfg.cytoplasm_gray))
    noise_rng = rng.spawn()
    if cfg.gray_noise_std > 0:
        gray = gray + cfg.gray_noise_std * noise_rng.normal_array(gray.size).reshape(shape)
    image = np.clip(np.rint(gray), 0, 255).astype(np.uint8)

    ann_vol = Volume(annotation, cfg.voxel_size_nm_xyz)
    return PhantomBundle(
        config=cfg,
        image=Volume(image, cfg.voxel_size_nm_xyz),
        gt_seg=Volume(cells, cfg.voxel_size_nm_xyz),
        annotation=ann_vol,
        connections=connections,
        target=make_target(ann_vol, target_params),
        target_params=target_params,
    )


def oracle_predict(
    target: Volume,
    noise_std: float = 0.0,
    n_distractors: int = 0,
    seed: int = 0,
    blob_amplitude: float = 0.9,
    blob_sigma_nm: float = 30.0,
) -> Volume:
    """Stand-in for a trained proximity predictor.

    Adds ``n_distractors`` signed Gaussian blobs centred at least
    ``4 * blob_sigma_nm`` from any nonzero target voxel and cut off at that
    radius, so they never touch a synapse; then i.i.d. Gaussian
    noise, and clamps to [-1, 1].  Blob centres and signs are drawn first from
    the seed stream; the noise uses a child stream spawned afterwards.
    """
    if noise_std < 0 or n_distractors < 0:
        raise ParameterError("noise_std and n_distractors must be >= 0")
    rng = SplitMix64(seed)
    base = target.data.astype(np.float64)
    shape = base.shape
    spacing = np.asarray(target.spacing_zyx)
    out = base.copy()
    if n_distractors:
        nz = base != 0
        if nz.any():
            eligible = np.flatnonzero(distance_to_mask(nz, spacing) > 4.0 * blob_sigma_nm)
        else:
            eligible = np.arange(base.size)
        if eligible.size == 0:
            raise ParameterError("no room for distractor blobs away from the synapses")
        reach = np.ceil(4.0 * blob_sigma_nm / spacing).astype(int)
        for _ in range(n_distractors):
            center = np.array(np.unravel_index(eligible[rng.randbelow(eligible.size)], shape))
            sign = 1.0 if rng.randbelow(2) == 0 else -1.0
            box = tuple(slice(max(0, c - r), min(n, c + r + 1)) for c, r, n in zip(center, reach, shape))
            grids = np.meshgrid(*[(np.arange(s.start, s.stop) - c) * sp for s, c, sp in zip(box, center, spacing)], indexing="ij")
            r2 = sum(g * g for g in grids)
            blob = np.exp(-r2 / (2.0 * blob_sigma_nm**2))
            blob[r2 > (4.0 * blob_sigma_nm) ** 2] = 0.0
            out[box] += sign * blob_amplitude * blob
    noise_rng = rng.spawn()
    if noise_std > 0:
        out += noise_std * noise_rng.normal_array(out.size).reshape(shape)
    np.clip(out, -1.0, 1.0, out=out)
    return Volume(out.astype(np.float32), target.voxel_size_nm_xyz)
