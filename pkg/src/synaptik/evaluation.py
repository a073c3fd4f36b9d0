"""Connectivity-aware detection scoring.

A prediction counts as a true positive only when its pre/post components
overlap the annotated span of a ground-truth synapse *and* its segments map to
that synapse's (pre cell, post cell) pair in that order.  Predictions are
matched greedily in descending score order; each synapse can be claimed once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, FormatError, ParameterError, ShapeError

TP = "TP"
FP_WRONG_PAIR = "FP-wrong-pair"
FP_NO_OVERLAP = "FP-no-overlap"
FP_DUPLICATE = "FP-duplicate"


@dataclass(frozen=True, eq=False)
class GroundTruthConnection:
    synapse_id: int
    pre_cell: int
    post_cell: int
    span: np.ndarray = field(repr=False)  # sorted linear voxel indices of both bands

    def __post_init__(self):
        if self.pre_cell == self.post_cell:
            raise ParameterError(f"synapse {self.synapse_id}: pre and post cell are both {self.pre_cell}")
        span = np.unique(np.asarray(self.span, dtype=np.int64))
        if span.size == 0:
            raise ParameterError(f"synapse {self.synapse_id}: empty span")
        object.__setattr__(self, "span", span)

    def to_json(self) -> dict:
        return {"synapse_id": self.synapse_id, "pre_cell": self.pre_cell, "post_cell": self.post_cell}


def spans_from_annotation(labels: np.ndarray) -> dict[int, np.ndarray]:
    flat = np.asarray(labels).ravel()
    idx = np.flatnonzero(flat)
    ks = (flat[idx].astype(np.int64) + 1) // 2
    order = np.argsort(ks, kind="stable")
    idx, ks = idx[order], ks[order]
    out = {}
    if idx.size:
        starts = np.flatnonzero(np.r_[True, ks[1:] != ks[:-1]])
        for s, chunk in zip(starts, np.split(idx, starts[1:])):
            out[int(ks[s])] = chunk
    return out


def map_segments(S, G) -> dict[int, int]:
    """Map every nonzero segment of ``S`` to the cell of ``G`` it overlaps most.

    Background (0) in ``G`` never wins; ties go to the smaller cell id; a
    segment that only overlaps background maps to 0.
    """
    S = np.asarray(getattr(S, "data", S))
    G = np.asarray(getattr(G, "data", G))
    if S.shape != G.shape:
        raise ShapeError(f"segmentation dims differ: {S.shape} vs {G.shape}")
    s = S.ravel().astype(np.uint64)
    g = G.ravel().astype(np.uint64)
    out = {int(v): 0 for v in np.unique(s) if v != 0}
    sel = (s != 0) & (g != 0)
    if sel.any():
        keys, counts = np.unique((s[sel] << np.uint64(32)) | g[sel], return_counts=True)
        seg = (keys >> np.uint64(32)).astype(np.int64)
        cell = (keys & np.uint64(0xFFFFFFFF)).astype(np.int64)
        order = np.lexsort((cell, -counts, seg))
        seg, cell = seg[order], cell[order]
        first = np.r_[True, seg[1:] != seg[:-1]]
        for a, b in zip(seg[first], cell[first]):
            out[int(a)] = int(b)
    return out


def overlap_count(voxels: np.ndarray, span: np.ndarray) -> int:
    return int(np.intersect1d(voxels, span, assume_unique=True).size)


def candidate_voxels(cand) -> np.ndarray:
    return np.union1d(cand.pre_site.component.voxels, cand.post_site.component.voxels)


@dataclass
class MatchReport:
    tp: int
    fp: int
    fn: int
    verdicts: dict[int, str]  # candidate id -> verdict
    matched_synapse: dict[int, int | None]  # candidate id -> synapse id claimed (TP) or hit (duplicate)
    gt_matched: dict[int, int | None]  # synapse id -> candidate id

    def to_json(self) -> dict:
        precision, recall, f = pr_point(self)
        return {
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "precision": precision,
            "recall": recall,
            "f": f,
            "predictions": [
                {"candidate": cid, "verdict": v, "synapse_id": self.matched_synapse.get(cid)}
                for cid, v in sorted(self.verdicts.items())
            ],
            "gt": [{"synapse_id": k, "matched_by": c} for k, c in sorted(self.gt_matched.items())],
        }


def _score_key(c):
    s = c.score
    return (-(s if s is not None else -np.inf), c.id)


def match_predictions(preds, gt, seg_map: dict[int, int], min_overlap: int = 1) -> MatchReport:
    if min_overlap < 1:
        raise ParameterError("min_overlap must be >= 1")
    gt = sorted(gt, key=lambda g: g.synapse_id)
    gt_matched: dict[int, int | None] = {g.synapse_id: None for g in gt}
    verdicts: dict[int, str] = {}
    hit: dict[int, int | None] = {}
    for c in sorted(preds, key=_score_key):
        for seg in (c.pre_site.segment_id, c.post_site.segment_id):
            if seg not in seg_map:
                raise EvaluationError(f"candidate {c.id}: segment {seg} unknown to the segment map")
        pair = (seg_map[c.pre_site.segment_id], seg_map[c.post_site.segment_id])
        vox = candidate_voxels(c)
        overlapping = [g for g in gt if overlap_count(vox, g.span) >= min_overlap]
        right_pair = [g for g in overlapping if (g.pre_cell, g.post_cell) == pair]
        free = [g for g in right_pair if gt_matched[g.synapse_id] is None]
        if free:
            g = free[0]
            gt_matched[g.synapse_id] = c.id
            verdicts[c.id], hit[c.id] = TP, g.synapse_id
        elif right_pair:
            verdicts[c.id], hit[c.id] = FP_DUPLICATE, right_pair[0].synapse_id
        elif overlapping:
            verdicts[c.id], hit[c.id] = FP_WRONG_PAIR, None
        else:
            verdicts[c.id], hit[c.id] = FP_NO_OVERLAP, None
    tp = sum(v == TP for v in verdicts.values())
    fn = sum(m is None for m in gt_matched.values())
    return MatchReport(tp, len(verdicts) - tp, fn, verdicts, hit, gt_matched)


def pr_point(report: MatchReport) -> tuple[float, float, float]:
    """(precision, recall, F); precision is 1.0 when nothing was predicted."""
    if report.tp + report.fn == 0:
        raise ParameterError("precision/recall undefined without ground-truth connections")
    n_pred = report.tp + report.fp
    precision = report.tp / n_pred if n_pred else 1.0
    recall = report.tp / (report.tp + report.fn)
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f


@dataclass(frozen=True)
class PRPoint:
    theta: float
    precision: float
    recall: float
    f_score: float
    n_predictions: int


@dataclass
class PRCurve:
    points: list[PRPoint]

    def best(self) -> PRPoint:
        return max(self.points, key=lambda p: (p.f_score, -p.theta))

    def to_csv(self) -> str:
        lines = ["theta,precision,recall,f"]
        lines += [f"{p.theta!r},{p.precision!r},{p.recall!r},{p.f_score!r}" for p in self.points]
        return "\n".join(lines) + "\n"

    def to_svg(self, width: int = 360, height: int = 320, title: str = "precision / recall") -> str:
        m = 40
        pw, ph = width - 2 * m, height - 2 * m

        def xy(p):
            return m + p.recall * pw, m + (1.0 - p.precision) * ph

        pts = sorted(self.points, key=lambda p: (p.recall, -p.precision))
        path = " ".join(f"{x:.2f},{y:.2f}" for x, y in map(xy, pts))
        dots = "".join(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="#1f5fbf"/>' for x, y in map(xy, pts))
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
            f'<rect width="{width}" height="{height}" fill="white"/>'
            f'<rect x="{m}" y="{m}" width="{pw}" height="{ph}" fill="none" stroke="black"/>'
            f'<text x="{width / 2}" y="{m / 2}" text-anchor="middle" font-size="12">{title}</text>'
            f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle" font-size="11">recall</text>'
            f'<text x="12" y="{height / 2}" font-size="11" transform="rotate(-90 12 {height / 2})" text-anchor="middle">precision</text>'
            f'<polyline points="{path}" fill="none" stroke="#1f5fbf" stroke-width="1.5"/>{dots}</svg>\n'
        )


def pr_sweep(scored, gt, seg_map, thetas, min_overlap: int = 1) -> PRCurve:
    from .pruning import prune

    thetas = [float(t) for t in thetas]
    if any(b <= a for a, b in zip(thetas, thetas[1:])):
        raise ParameterError("thetas must be strictly increasing")
    points = []
    for theta in thetas:
        kept = prune(scored, theta)
        rep = match_predictions(kept, gt, seg_map, min_overlap)
        precision, recall, f = pr_point(rep)
        points.append(PRPoint(theta, precision, recall, f, len(kept)))
    return PRCurve(points)


def write_gt_jsonl(path, gt) -> None:
    with open(path, "w") as fh:
        for g in sorted(gt, key=lambda g: g.synapse_id):
            fh.write(json.dumps(g.to_json()) + "\n")


def read_gt_jsonl(path, annotation_labels) -> list[GroundTruthConnection]:
    """Load connections and attach spans from the annotation volume."""
    spans = spans_from_annotation(annotation_labels)
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                k = int(rec["synapse_id"])
                pre, post = int(rec["pre_cell"]), int(rec["post_cell"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad ground-truth record: {exc}") from exc
            if k not in spans:
                raise FormatError(f"{path}:{lineno}: synapse {k} has no span in the annotation volume")
            out.append(GroundTruthConnection(k, pre, post, spans[k]))
    return out
