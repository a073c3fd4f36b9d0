"""Synapse location and partner detection on volumetric EM data."""

from .candidates import Candidate, CandidateParams, CandidateSet, generate_candidates
from .errors import SynaptikError
from .evaluation import GroundTruthConnection, MatchReport, PRCurve, match_predictions, pr_sweep
from .pruning import LogisticScorer, TrainConfig, WindowSpec, extract_features_batch, label_candidates, prune, train_scorer
from .synth import PhantomConfig, generate_phantom, oracle_predict
from .target import TargetParams, make_target, proximity_value
from .volume import Volume, read_svol, write_svol

__version__ = "0.1.0"

__all__ = [
    "Candidate",
    "CandidateParams",
    "CandidateSet",
    "GroundTruthConnection",
    "LogisticScorer",
    "MatchReport",
    "PRCurve",
    "PhantomConfig",
    "SynaptikError",
    "TargetParams",
    "TrainConfig",
    "Volume",
    "WindowSpec",
    "extract_features_batch",
    "generate_candidates",
    "generate_phantom",
    "label_candidates",
    "make_target",
    "match_predictions",
    "oracle_predict",
    "pr_sweep",
    "proximity_value",
    "prune",
    "read_svol",
    "train_scorer",
    "write_svol",
]
