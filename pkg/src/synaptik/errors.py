"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class SynaptikError(Exception):
    """Base class; ``kind`` is the machine-readable tag the CLI reports."""

    kind = "error"


class ParameterError(SynaptikError, ValueError):
    kind = "parameter"


class ShapeError(SynaptikError, ValueError):
    kind = "shape"


class FormatError(SynaptikError, ValueError):
    kind = "format"


class MalformedAnnotationError(SynaptikError, ValueError):
    kind = "malformed_annotation"

    def __init__(self, synapse_id: int, message: str):
        super().__init__(f"synapse {synapse_id}: {message}")
        self.synapse_id = synapse_id


class GenerationError(SynaptikError, RuntimeError):
    kind = "generation"


class TrainingError(SynaptikError, RuntimeError):
    kind = "training"


class ScoreIngestionError(SynaptikError, ValueError):
    kind = "score_ingestion"

    def __init__(self, candidate: int | None, message: str):
        where = f"candidate {candidate}: " if candidate is not None else ""
        super().__init__(where + message)
        self.candidate = candidate


class EvaluationError(SynaptikError, ValueError):
    kind = "evaluation"
