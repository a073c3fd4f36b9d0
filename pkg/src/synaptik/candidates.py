"""Candidate pre/post partner pairs from a proximity map and a segmentation.

Pre sites are connected components of ``prox >= tau``, post sites of
``prox <= -tau`` (face connectivity by default; 18 and 26 are available).  Each component is attached to every segment it overlaps by
at least ``omega`` voxels.  A candidate is any (pre site, post site) pair whose
segments differ and touch; it is anchored at the midpoint of the closest voxel
pair between the two components.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import FormatError, ParameterError, ShapeError
from .labeling import POST, PRE, Component, components_from_labels, connected_components, segment_adjacency
from .volume import Volume, check_same_dims, read_svol, write_svol

CONNECTIVITY = 6


@dataclass(frozen=True)
class CandidateParams:
    tau: float = 0.3
    omega: int = 100
    min_contact_area: int = 1
    max_anchor_nm: float = math.inf
    connectivity: int = CONNECTIVITY

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ParameterError(f"tau must lie in (0, 1), got {self.tau}")
        if self.omega < 1:
            raise ParameterError(f"omega must be >= 1, got {self.omega}")
        if self.min_contact_area < 1:
            raise ParameterError(f"min_contact_area must be >= 1, got {self.min_contact_area}")
        if not self.max_anchor_nm > 0:
            raise ParameterError(f"max_anchor_nm must be positive, got {self.max_anchor_nm}")
        if self.connectivity not in (6, 18, 26):
            raise ParameterError(f"connectivity must be 6, 18 or 26, got {self.connectivity}")


@dataclass(frozen=True, eq=False)
class SiteCandidate:
    component: Component
    segment_id: int
    overlap_voxels: int


@dataclass(eq=False)
class Candidate:
    id: int
    pre_site: SiteCandidate
    post_site: SiteCandidate
    anchor_zyx: tuple[int, int, int]
    anchor_dist_nm: float
    score: float | None = None

    def key(self):
        return (self.pre_site.component.id, self.post_site.component.id, self.pre_site.segment_id, self.post_site.segment_id)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "pre_comp": self.pre_site.component.id,
            "post_comp": self.post_site.component.id,
            "pre_seg": self.pre_site.segment_id,
            "post_seg": self.post_site.segment_id,
            "anchor_zyx": list(self.anchor_zyx),
            "anchor_dist_nm": self.anchor_dist_nm,
            "score": self.score,
        }

    def with_score(self, score: float | None) -> "Candidate":
        return Candidate(self.id, self.pre_site, self.post_site, self.anchor_zyx, self.anchor_dist_nm, score)


@dataclass(eq=False)
class CandidateSet:
    candidates: list[Candidate]
    pre_components: list[Component]
    post_components: list[Component]
    shape: tuple[int, int, int]
    voxel_size_nm_xyz: tuple[float, float, float] = field(default=(1.0, 1.0, 1.0))


def polar_components(prox, tau: float, connectivity: int = CONNECTIVITY):
    """(pre components, post components) of the thresholded proximity map."""
    data = np.asarray(getattr(prox, "data", prox))
    _, pre = connected_components(data >= tau, connectivity, PRE)
    _, post = connected_components(data <= -tau, connectivity, POST)
    return pre, post


def component_labels(components, shape) -> np.ndarray:
    """Label volume holding ``id + 1`` on each component's voxels."""
    out = np.zeros(int(np.prod(shape)), dtype=np.uint32)
    for c in components:
        out[c.voxels] = c.id + 1
    return out.reshape(shape)


def site_candidates(components, seg, omega: int, shape=None) -> list[SiteCandidate]:
    seg = np.asarray(getattr(seg, "data", seg))
    if shape is not None and tuple(shape) != seg.shape:
        raise ShapeError(f"components were labelled on {tuple(shape)} but segmentation is {seg.shape}")
    flat = seg.ravel()
    out = []
    for comp in sorted(components, key=lambda c: c.id):
        if comp.voxels.size and comp.voxels[-1] >= flat.size:
            raise ShapeError(f"component {comp.id} extends beyond the segmentation")
        ids, counts = np.unique(flat[comp.voxels], return_counts=True)
        for s, n in zip(ids, counts):
            if s != 0 and n >= omega:
                out.append(SiteCandidate(comp, int(s), int(n)))
    return out


def anchor_point(e: Component, o: Component, shape, spacing_zyx):
    """Anchor voxel and distance (nm) of the closest voxel pair between ``e`` and ``o``.

    The anchor is the pair midpoint, rounded per axis toward the pre voxel.
    Ties between equally close pairs go to the smallest (pre index, post index).
    """
    sp = np.asarray(spacing_zyx, dtype=np.float64)
    pe = e.coords(shape)
    po = o.coords(shape)
    tree = cKDTree(po * sp)
    d, _ = tree.query(pe * sp)
    dmin = float(d.min())
    slack = 1e-9 * (dmin + 1.0)
    best = None
    for i in np.flatnonzero(d <= dmin + slack):
        for j in sorted(tree.query_ball_point(pe[i] * sp, dmin + slack)):
            d2 = float((((pe[i] - po[j]) * sp) ** 2).sum())
            cand = (d2, i, j)
            if best is None or cand < best:
                best = cand
    d2, i, j = best
    p, q = pe[i], po[j]
    anchor = p + np.trunc((q - p) / 2.0).astype(np.int64)
    return tuple(int(a) for a in anchor), math.sqrt(d2)


def pair_candidates(pre_sites, post_sites, adjacency, params: CandidateParams, shape, spacing_zyx) -> list[Candidate]:
    adjacent = {pair for pair, area in adjacency.items() if area >= params.min_contact_area}
    anchors: dict[tuple[int, int], tuple] = {}
    found = []
    for a in pre_sites:
        for b in post_sites:
            sa, sb = a.segment_id, b.segment_id
            if sa == sb or (min(sa, sb), max(sa, sb)) not in adjacent:
                continue
            key = (a.component.id, b.component.id)
            if key not in anchors:
                anchors[key] = anchor_point(a.component, b.component, shape, spacing_zyx)
            anchor, dist = anchors[key]
            if dist <= params.max_anchor_nm:
                found.append((key[0], key[1], sa, sb, a, b, anchor, dist))
    found.sort(key=lambda t: t[:4])
    return [Candidate(i, a, b, anchor, dist) for i, (_, _, _, _, a, b, anchor, dist) in enumerate(found)]


def generate_candidates(prox: Volume, seg: Volume, params: CandidateParams = CandidateParams()) -> CandidateSet:
    check_same_dims(prox, seg)
    pre, post = polar_components(prox, params.tau, params.connectivity)
    pre_sites = site_candidates(pre, seg, params.omega, prox.dims_zyx)
    post_sites = site_candidates(post, seg, params.omega, prox.dims_zyx)
    adjacency = segment_adjacency(seg.data)
    cands = pair_candidates(pre_sites, post_sites, adjacency, params, prox.dims_zyx, prox.spacing_zyx)
    return CandidateSet(cands, pre, post, prox.dims_zyx, prox.voxel_size_nm_xyz)


# -- files -------------------------------------------------------------------

CANDIDATES_FILE = "candidates.jsonl"
PRE_LABELS = "pre_components"
POST_LABELS = "post_components"


def write_candidates_jsonl(path, candidates) -> None:
    with open(path, "w") as fh:
        for c in candidates:
            fh.write(json.dumps(c.to_json()) + "\n")


def read_candidates_jsonl(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(
                    {
                        "id": int(rec.get("id", len(out))),
                        "pre_comp": int(rec["pre_comp"]),
                        "post_comp": int(rec["post_comp"]),
                        "pre_seg": int(rec["pre_seg"]),
                        "post_seg": int(rec["post_seg"]),
                        "anchor_zyx": tuple(int(v) for v in rec["anchor_zyx"]),
                        "anchor_dist_nm": float(rec["anchor_dist_nm"]),
                        "score": None if rec.get("score") is None else float(rec["score"]),
                    }
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad candidate record: {exc}") from exc
    return out


def write_candidate_set(out_dir, cset: CandidateSet) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_candidates_jsonl(out_dir / CANDIDATES_FILE, cset.candidates)
    for name, comps in ((PRE_LABELS, cset.pre_components), (POST_LABELS, cset.post_components)):
        write_svol(out_dir / name, Volume(component_labels(comps, cset.shape), cset.voxel_size_nm_xyz))


def load_components(components_dir):
    d = Path(components_dir)
    pre_vol = read_svol(d / PRE_LABELS)
    post_vol = read_svol(d / POST_LABELS)
    return components_from_labels(pre_vol.data, PRE), components_from_labels(post_vol.data, POST), pre_vol


def load_candidate_set(path, seg: Volume, components_dir=None) -> CandidateSet:
    """Rebuild candidates from a JSONL file plus the component label volumes.

    Candidate ids come from the ``id`` field, falling back to the 0-based line
    position.  ``components_dir`` defaults to
    the directory holding ``path``.
    """
    path = Path(path)
    pre, post, ref = load_components(components_dir or path.parent)
    check_same_dims(ref, seg)
    by_id = {("pre", c.id): c for c in pre} | {("post", c.id): c for c in post}
    flat = seg.data.ravel()
    cands = []
    for i, rec in enumerate(read_candidates_jsonl(path)):
        sites = []
        for pol, comp_key, seg_key in (("pre", "pre_comp", "pre_seg"), ("post", "post_comp", "post_seg")):
            comp = by_id.get((pol, rec[comp_key]))
            if comp is None:
                raise FormatError(f"{path}: candidate {i} references unknown {pol} component {rec[comp_key]}")
            overlap = int(np.count_nonzero(flat[comp.voxels] == rec[seg_key]))
            sites.append(SiteCandidate(comp, rec[seg_key], overlap))
        cands.append(Candidate(rec["id"], sites[0], sites[1], rec["anchor_zyx"], rec["anchor_dist_nm"], rec["score"]))
    return CandidateSet(cands, pre, post, ref.dims_zyx, ref.voxel_size_nm_xyz)
