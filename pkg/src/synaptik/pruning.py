"""Candidate scoring and pruning.

Scores come either from a logistic model over window features trained here,
or from an external scorer whose per-candidate outputs are ingested by id.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, ScoreIngestionError, ShapeError, TrainingError
from .evaluation import candidate_voxels, map_segments, overlap_count
from .parallel import ordered_map
from .volume import check_same_dims

FEATURE_NAMES = (
    "pre_size",
    "post_size",
    "pre_mean_abs_prox",
    "post_mean_abs_prox",
    "pre_overlap",
    "post_overlap",
    "anchor_dist_nm",
    "window_contact_area",
    "pre_overlap_frac",
    "post_overlap_frac",
    "window_mean_gray",
    "bias",
)
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class WindowSpec:
    size_zyx: tuple[int, int, int] = (16, 160, 160)

    def __post_init__(self):
        size = tuple(int(n) for n in self.size_zyx)
        if len(size) != 3 or min(size) < 1:
            raise ParameterError(f"window size must be three positive ints, got {self.size_zyx}")
        object.__setattr__(self, "size_zyx", size)

    def slices(self, anchor_zyx, dims_zyx) -> tuple[slice, slice, slice]:
        """Window centred on ``anchor_zyx``, clipped to the volume."""
        out = []
        for a, w, n in zip(anchor_zyx, self.size_zyx, dims_zyx):
            if w > n:
                raise ParameterError(f"window {self.size_zyx} exceeds volume {tuple(dims_zyx)}")
            if not 0 <= a < n:
                raise ParameterError(f"anchor {tuple(anchor_zyx)} lies outside the volume")
            start = a - w // 2
            out.append(slice(max(0, start), min(n, start + w)))
        return tuple(out)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 3000
    l2: float = 1e-4
    seed: int = 0  # weights start at zero, so training does not consume it

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be positive")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.l2 < 0:
            raise ParameterError("l2 must be >= 0")


def _contact_area(seg_win: np.ndarray, a: int, b: int) -> int:
    total = 0
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        u, v = seg_win[tuple(lo)], seg_win[tuple(hi)]
        total += int(np.count_nonzero(((u == a) & (v == b)) | ((u == b) & (v == a))))
    return total


def extract_features(cand, image, prox, seg, window: WindowSpec = WindowSpec()) -> np.ndarray:
    check_same_dims(image, prox, seg)
    win = window.slices(cand.anchor_zyx, seg.dims_zyx)
    pflat = prox.data.ravel()
    pre, post = cand.pre_site, cand.post_site
    pre_size, post_size = pre.component.size, post.component.size
    return np.array(
        [
            pre_size,
            post_size,
            np.abs(pflat[pre.component.voxels].astype(np.float64)).mean(),
            np.abs(pflat[post.component.voxels].astype(np.float64)).mean(),
            pre.overlap_voxels,
            post.overlap_voxels,
            cand.anchor_dist_nm,
            _contact_area(seg.data[win], pre.segment_id, post.segment_id),
            pre.overlap_voxels / pre_size,
            post.overlap_voxels / post_size,
            image.data[win].astype(np.float64).mean(),
            1.0,
        ],
        dtype=np.float64,
    )


def extract_features_batch(cands, image, prox, seg, window: WindowSpec = WindowSpec()) -> np.ndarray:
    check_same_dims(image, prox, seg)
    rows = ordered_map(lambda c: extract_features(c, image, prox, seg, window), cands)
    return np.array(rows, dtype=np.float64).reshape(len(rows), N_FEATURES)


LABEL_RULES = ("each", "union")


def label_candidates(cands, S, G, gt, min_overlap: int = 1, rule: str = "each") -> np.ndarray:
    """1 where the candidate's mapped (pre cell, post cell) equals a synapse's
    ordered pair and it overlaps that synapse's span, else 0.

    ``rule="each"`` needs the pre and the post component to overlap the span
    separately; ``rule="union"`` only needs their union to.  The looser rule
    marks pairs that borrow one side from a neighbouring synapse as positive.
    """
    if rule not in LABEL_RULES:
        raise ParameterError(f"label rule must be one of {LABEL_RULES}, got {rule!r}")
    seg_map = map_segments(S, G)
    out = np.zeros(len(cands), dtype=np.int64)
    for i, c in enumerate(cands):
        pair = (seg_map.get(c.pre_site.segment_id, 0), seg_map.get(c.post_site.segment_id, 0))
        for g in gt:
            if (g.pre_cell, g.post_cell) != pair:
                continue
            if rule == "union":
                hit = overlap_count(candidate_voxels(c), g.span) >= min_overlap
            else:
                hit = (
                    overlap_count(c.pre_site.component.voxels, g.span) >= min_overlap
                    and overlap_count(c.post_site.component.voxels, g.span) >= min_overlap
                )
            if hit:
                out[i] = 1
                break
    return out


# -- logistic scorer -----------------------------------------------------------


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _rowdot(X, w):
    # elementwise product + numpy pairwise sum: no BLAS, so no thread-dependent rounding
    return (X * w).sum(axis=1)


def logistic_loss_and_grad(w, Xs, y, l2: float):
    """Mean logistic loss plus ``l2/2 * |w|^2`` (bias excluded) and its gradient."""
    z = _rowdot(Xs, w)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    reg = w.copy()
    reg[-1] = 0.0
    loss += 0.5 * l2 * float((reg * reg).sum())
    resid = _sigmoid(z) - y
    grad = (Xs * resid[:, None]).sum(axis=0) / len(y) + l2 * reg
    return loss, grad


@dataclass
class LogisticScorer:
    weights: np.ndarray
    feature_means: np.ndarray
    feature_stds: np.ndarray
    trained_on: str = ""
    loss_history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.feature_means = np.asarray(self.feature_means, dtype=np.float64)
        self.feature_stds = np.asarray(self.feature_stds, dtype=np.float64)
        if self.weights.shape != (N_FEATURES,):
            raise ParameterError(f"expected {N_FEATURES} weights, got {self.weights.shape}")
        if self.feature_means.shape != (N_FEATURES - 1,) or self.feature_stds.shape != (N_FEATURES - 1,):
            raise ParameterError(f"expected {N_FEATURES - 1} means and stds")
        if not np.all(np.isfinite(self.weights)):
            raise ParameterError("scorer weights must be finite")
        if not np.all(self.feature_stds > 0):
            raise ParameterError("feature stds must be positive")

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64).reshape(-1, N_FEATURES)
        out = X.copy()
        out[:, :-1] = (X[:, :-1] - self.feature_means) / self.feature_stds
        out[:, -1] = 1.0
        return out

    def predict(self, X) -> np.ndarray:
        return _sigmoid(_rowdot(self.standardize(X), self.weights))

    def to_json(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.feature_means.tolist(),
            "stds": self.feature_stds.tolist(),
            "trained_on": self.trained_on,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LogisticScorer":
        try:
            return cls(obj["weights"], obj["means"], obj["stds"], obj.get("trained_on", ""))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad scorer JSON: {exc}") from exc

    @classmethod
    def zeros(cls) -> "LogisticScorer":
        return cls(np.zeros(N_FEATURES), np.zeros(N_FEATURES - 1), np.ones(N_FEATURES - 1), "zero")


def train_scorer(features, labels, cfg: TrainConfig = TrainConfig(), trained_on: str = "") -> LogisticScorer:
    """Full-batch gradient descent from zero weights on standardized features.

    Raises TrainingError on a single-class set or if the loss ever rises.
    """
    X = np.asarray(features, dtype=np.float64).reshape(-1, N_FEATURES)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
    if not np.all(np.isfinite(X)):
        raise TrainingError("features must be finite")
    if not (np.any(y == 1) and np.any(y == 0)) or not np.all((y == 0) | (y == 1)):
        raise TrainingError("training needs binary labels with at least one positive and one negative")
    means = X[:, :-1].mean(axis=0)
    stds = X[:, :-1].std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    scorer = LogisticScorer(np.zeros(N_FEATURES), means, stds, trained_on)
    Xs = scorer.standardize(X)
    w = np.zeros(N_FEATURES)
    loss, grad = logistic_loss_and_grad(w, Xs, y, cfg.l2)
    history = [loss]
    for epoch in range(cfg.epochs):
        w = w - cfg.learning_rate * grad
        new_loss, grad = logistic_loss_and_grad(w, Xs, y, cfg.l2)
        if new_loss > loss + 1e-12 * max(1.0, abs(loss)):
            raise TrainingError(f"loss rose at epoch {epoch + 1}: {loss!r} -> {new_loss!r}; lower the learning rate")
        loss = new_loss
        history.append(loss)
    scorer.weights = w
    scorer.loss_history = history
    return scorer


# -- scoring & pruning ---------------------------------------------------------


def score_candidates(cands, scorer: LogisticScorer | None = None, features=None, external: dict | None = None):
    """Return copies of ``cands`` carrying scores in [0, 1].

    Pass either ``scorer`` with the feature matrix (rows aligned with
    ``cands``) or ``external``, a mapping candidate id -> score.
    """
    if (scorer is None) == (external is None):
        raise ParameterError("give exactly one of scorer or external scores")
    if scorer is not None:
        if features is None:
            raise ParameterError("logistic scoring needs the feature matrix")
        X = np.asarray(features, dtype=np.float64).reshape(-1, N_FEATURES)
        if X.shape[0] != len(cands):
            raise ShapeError(f"{X.shape[0]} feature rows for {len(cands)} candidates")
        scores = scorer.predict(X) if len(cands) else np.zeros(0)
        return [c.with_score(float(s)) for c, s in zip(cands, scores)]
    ids = {c.id for c in cands}
    for c in cands:
        if c.id not in external:
            raise ScoreIngestionError(c.id, "no external score")
    extra = sorted(set(external) - ids)
    if extra:
        raise ScoreIngestionError(extra[0], "score given for an unknown candidate")
    return [c.with_score(external[c.id]) for c in cands]


def prune(scored, theta: float):
    """Candidates with ``score >= theta``, in id order."""
    if not 0.0 <= theta <= 1.0:
        raise ParameterError(f"theta must lie in [0, 1], got {theta}")
    for c in scored:
        if c.score is None:
            raise ParameterError(f"candidate {c.id} is unscored")
    return sorted((c for c in scored if c.score >= theta), key=lambda c: c.id)


# -- files -------------------------------------------------------------------


def write_features_csv(path, cands, X, labels=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["candidate", *FEATURE_NAMES] + (["label"] if labels is not None else []))
        for i, c in enumerate(cands):
            row = [c.id, *(repr(float(v)) for v in X[i])]
            if labels is not None:
                row.append(int(labels[i]))
            w.writerow(row)


def read_features_csv(path):
    """Returns ``(candidate ids, feature matrix, labels or None)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][: N_FEATURES + 1] != ["candidate", *FEATURE_NAMES]:
        raise FormatError(f"{path}: unexpected feature CSV header")
    has_label = len(rows[0]) == N_FEATURES + 2 and rows[0][-1] == "label"
    ids, X, y = [], [], []
    try:
        for r in rows[1:]:
            ids.append(int(r[0]))
            X.append([float(v) for v in r[1 : N_FEATURES + 1]])
            if has_label:
                y.append(int(r[N_FEATURES + 1]))
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed feature row: {exc}") from exc
    return ids, np.array(X, dtype=np.float64).reshape(-1, N_FEATURES), (np.array(y) if has_label else None)


def write_scorer(path, scorer: LogisticScorer) -> None:
    with open(path, "w") as fh:
        json.dump(scorer.to_json(), fh, indent=2)
        fh.write("\n")


def read_scorer(path) -> LogisticScorer:
    try:
        with open(path) as fh:
            return LogisticScorer.from_json(json.load(fh))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_scores_jsonl(path, scored) -> None:
    with open(path, "w") as fh:
        for c in scored:
            fh.write(json.dumps({"candidate": c.id, "score": c.score}) + "\n")


def read_scores_jsonl(path) -> dict[int, float]:
    out: dict[int, float] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                cid, s = int(rec["candidate"]), float(rec["score"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ScoreIngestionError(None, f"{path}:{lineno}: bad score record: {exc}") from exc
            if cid in out:
                raise ScoreIngestionError(cid, "duplicate external score")
            if not (math.isfinite(s) and 0.0 <= s <= 1.0):
                raise ScoreIngestionError(cid, f"score {s} outside [0, 1]")
            out[cid] = s
    return out
