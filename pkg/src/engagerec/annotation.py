"""Two-dimension engagement labels: combination rule, aggregation, agreement.

Annotators judge each image on a behavioral axis (on-task / off-task) and an
emotional axis (satisfied / confused / bored), with a can't-decide escape on
both. The two judgments combine into a single engaged/disengaged vote per
annotator, and per-image votes aggregate by majority.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import IO, Callable, Iterable, Mapping, Sequence

import numpy as np

from .data import LabeledImage

MIN_ANNOTATORS = 6
CANT_DECIDE_LIMIT = 2  # strictly more than this many per dimension excludes the sample


class BehavioralLabel(str, Enum):
    ON_TASK = "on_task"
    OFF_TASK = "off_task"
    CANT_DECIDE = "cant_decide"


class EmotionalLabel(str, Enum):
    SATISFIED = "satisfied"
    CONFUSED = "confused"
    BORED = "bored"
    CANT_DECIDE = "cant_decide"


class CombinedLabel(str, Enum):
    ENGAGED = "engaged"
    DISENGAGED = "disengaged"
    UNDECIDABLE = "undecidable"


class Outcome(str, Enum):
    ENGAGED = "engaged"
    DISENGAGED = "disengaged"
    EXCLUDED = "excluded"


class ExclusionReason(str, Enum):
    TOO_MANY_CANT_DECIDE = "too_many_cant_decide"
    TIE = "tie"
    TOO_FEW_ANNOTATIONS = "too_few_annotations"


class DuplicateAnnotatorError(ValueError):
    """One annotator submitted two judgments for the same sample."""


@dataclass(frozen=True)
class AnnotationRecord:
    sample_id: str
    annotator_id: str
    behavioral: BehavioralLabel
    emotional: EmotionalLabel
    timestamp: datetime

    def combined(self) -> CombinedLabel:
        return combine_dimensions(self.behavioral, self.emotional)


@dataclass(frozen=True)
class AggregationResult:
    sample_id: str
    outcome: Outcome
    exclusion_reason: ExclusionReason | None
    vote_counts: tuple[int, int]  # (engaged, disengaged)

    def __post_init__(self) -> None:
        if (self.outcome is Outcome.EXCLUDED) != (self.exclusion_reason is not None):
            raise ValueError("outcome is excluded iff an exclusion reason is present")


@dataclass(frozen=True)
class DatasetStats:
    total_samples: int
    dataset_size: int
    engaged: int
    disengaged: int
    excluded: dict[ExclusionReason, int]

    def to_json(self) -> dict:
        return {
            "total_samples": self.total_samples,
            "dataset_size": self.dataset_size,
            "engaged": self.engaged,
            "disengaged": self.disengaged,
            "excluded": {reason.value: count for reason, count in self.excluded.items()},
        }


def combine_dimensions(behavioral: BehavioralLabel, emotional: EmotionalLabel) -> CombinedLabel:
    """Fold one annotator's two judgments into a single engagement vote.

    On-task is engaged unless paired with boredom; off-task is always
    disengaged; a can't-decide on either axis makes the vote undecidable.
    """
    if behavioral is BehavioralLabel.CANT_DECIDE or emotional is EmotionalLabel.CANT_DECIDE:
        return CombinedLabel.UNDECIDABLE
    if behavioral is BehavioralLabel.OFF_TASK:
        return CombinedLabel.DISENGAGED
    if emotional is EmotionalLabel.BORED:
        return CombinedLabel.DISENGAGED
    return CombinedLabel.ENGAGED


def aggregate_sample(records: Sequence[AnnotationRecord]) -> AggregationResult:
    """Majority-vote one sample's annotation records into a final label.

    A sample is excluded when either dimension collects more than
    CANT_DECIDE_LIMIT can't-decide judgments, when fewer than MIN_ANNOTATORS
    records exist, or when the cast votes tie. Undecidable votes (a single
    can't-decide below the limit) abstain rather than count.
    """
    if not records:
        raise ValueError("no records to aggregate")
    sample_id = records[0].sample_id
    if any(r.sample_id != sample_id for r in records):
        raise ValueError("records span multiple sample_ids")
    annotators = [r.annotator_id for r in records]
    duplicates = [a for a, n in Counter(annotators).items() if n > 1]
    if duplicates:
        raise DuplicateAnnotatorError(
            f"sample {sample_id!r}: duplicate annotator(s) {sorted(duplicates)}"
        )

    combined = [r.combined() for r in records]
    engaged = sum(1 for c in combined if c is CombinedLabel.ENGAGED)
    disengaged = sum(1 for c in combined if c is CombinedLabel.DISENGAGED)
    votes = (engaged, disengaged)

    behavioral_cd = sum(1 for r in records if r.behavioral is BehavioralLabel.CANT_DECIDE)
    emotional_cd = sum(1 for r in records if r.emotional is EmotionalLabel.CANT_DECIDE)
    if behavioral_cd > CANT_DECIDE_LIMIT or emotional_cd > CANT_DECIDE_LIMIT:
        return AggregationResult(
            sample_id, Outcome.EXCLUDED, ExclusionReason.TOO_MANY_CANT_DECIDE, votes
        )
    if len(records) < MIN_ANNOTATORS:
        return AggregationResult(
            sample_id, Outcome.EXCLUDED, ExclusionReason.TOO_FEW_ANNOTATIONS, votes
        )
    if engaged == disengaged:
        return AggregationResult(sample_id, Outcome.EXCLUDED, ExclusionReason.TIE, votes)
    outcome = Outcome.ENGAGED if engaged > disengaged else Outcome.DISENGAGED
    return AggregationResult(sample_id, outcome, None, votes)


def fleiss_kappa(counts: np.ndarray | Sequence[Sequence[int]]) -> float:
    """Fleiss' kappa for a (samples x categories) rating-count matrix.

    Each row holds how many of the N raters assigned each category to that
    sample; all rows must sum to the same N >= 2.

        kappa = (P_bar - P_bar_e) / (1 - P_bar_e)

    where P_bar is the mean per-sample pairwise agreement and P_bar_e the
    agreement expected from the overall category proportions. Returns 1.0 for
    perfect agreement (including the degenerate all-one-category case).
    """
    try:
        matrix = np.asarray(counts)
    except ValueError:
        raise ValueError("counts rows must all have the same length") from None
    if matrix.ndim != 2 or matrix.shape[0] < 1 or matrix.shape[1] < 1:
        raise ValueError("counts must be a non-empty 2-D matrix")
    if np.any(matrix < 0) or np.any(matrix != np.floor(matrix)):
        raise ValueError("counts must be non-negative integers")
    matrix = matrix.astype(np.float64)
    row_sums = matrix.sum(axis=1)
    n_raters = row_sums[0]
    if np.any(row_sums != n_raters):
        raise ValueError(f"inconsistent row sums: {sorted(set(row_sums.tolist()))}")
    if n_raters < 2:
        raise ValueError("need at least 2 raters per sample")

    per_sample = ((matrix**2).sum(axis=1) - n_raters) / (n_raters * (n_raters - 1))
    p_bar = per_sample.mean()
    proportions = matrix.sum(axis=0) / matrix.sum()
    p_bar_e = float(np.dot(proportions, proportions))
    if p_bar_e == 1.0:
        return 1.0
    return float((p_bar - p_bar_e) / (1.0 - p_bar_e))


def dimension_rating_counts(
    records: Iterable[AnnotationRecord], dimension: str
) -> np.ndarray:
    """Per-sample category counts for one dimension, ready for fleiss_kappa.

    Rows follow sorted sample_id; columns follow the declaration order of the
    dimension's label enum.
    """
    if dimension == "behavioral":
        categories = list(BehavioralLabel)
        pick = lambda r: r.behavioral  # noqa: E731
    elif dimension == "emotional":
        categories = list(EmotionalLabel)
        pick = lambda r: r.emotional  # noqa: E731
    else:
        raise ValueError(f"dimension must be 'behavioral' or 'emotional', got {dimension!r}")
    index = {category: column for column, category in enumerate(categories)}
    groups = group_by_sample(records)
    matrix = np.zeros((len(groups), len(categories)), dtype=np.int64)
    for row, sample_id in enumerate(sorted(groups)):
        for record in groups[sample_id]:
            matrix[row, index[pick(record)]] += 1
    return matrix


def group_by_sample(records: Iterable[AnnotationRecord]) -> dict[str, list[AnnotationRecord]]:
    groups: dict[str, list[AnnotationRecord]] = {}
    for record in records:
        groups.setdefault(record.sample_id, []).append(record)
    return groups


ImageSource = Mapping[str, tuple[np.ndarray, str]] | Callable[[str], tuple[np.ndarray, str]]


def build_dataset(
    records: Iterable[AnnotationRecord],
    image_source: ImageSource,
) -> tuple[list[LabeledImage], DatasetStats]:
    """Aggregate all records into a labeled ER dataset plus an exclusion report.

    ``image_source`` maps sample_id to (48x48 uint8 pixels, subject_id);
    excluded samples are dropped from the dataset but tallied by reason.
    """
    lookup = image_source if callable(image_source) else image_source.__getitem__
    groups = group_by_sample(records)
    dataset: list[LabeledImage] = []
    excluded: dict[ExclusionReason, int] = {}
    engaged = disengaged = 0
    for sample_id in sorted(groups):
        result = aggregate_sample(groups[sample_id])
        if result.outcome is Outcome.EXCLUDED:
            assert result.exclusion_reason is not None
            excluded[result.exclusion_reason] = excluded.get(result.exclusion_reason, 0) + 1
            continue
        pixels, subject_id = lookup(sample_id)
        label = 1 if result.outcome is Outcome.ENGAGED else 0
        if label:
            engaged += 1
        else:
            disengaged += 1
        dataset.append(
            LabeledImage(sample_id=sample_id, pixels=pixels, label=label, subject_id=subject_id)
        )
    stats = DatasetStats(
        total_samples=len(groups),
        dataset_size=len(dataset),
        engaged=engaged,
        disengaged=disengaged,
        excluded=excluded,
    )
    return dataset, stats


def record_to_json(record: AnnotationRecord) -> dict:
    return {
        "sample_id": record.sample_id,
        "annotator_id": record.annotator_id,
        "behavioral": record.behavioral.value,
        "emotional": record.emotional.value,
        "timestamp": record.timestamp.astimezone(timezone.utc).isoformat(),
    }


def record_from_json(payload: Mapping) -> AnnotationRecord:
    return AnnotationRecord(
        sample_id=str(payload["sample_id"]),
        annotator_id=str(payload["annotator_id"]),
        behavioral=BehavioralLabel(payload["behavioral"]),
        emotional=EmotionalLabel(payload["emotional"]),
        timestamp=datetime.fromisoformat(payload["timestamp"]),
    )


def write_annotation_records(
    records: Iterable[AnnotationRecord], destination: str | Path | IO[str]
) -> None:
    own = isinstance(destination, (str, Path))
    stream = open(destination, "w", encoding="utf-8") if own else destination
    try:
        for record in records:
            stream.write(json.dumps(record_to_json(record)) + "\n")
    finally:
        if own:
            stream.close()


def read_annotation_records(source: str | Path | IO[str]) -> list[AnnotationRecord]:
    own = isinstance(source, (str, Path))
    stream = open(source, "r", encoding="utf-8") if own else source
    try:
        records = []
        for line in stream:
            line = line.strip()
            if line:
                records.append(record_from_json(json.loads(line)))
        return records
    finally:
        if own:
            stream.close()
