"""Seeded synthetic data: face-like images, subjects, and annotator behavior.

Everything here exists so the full pipeline can run end to end on a desk
machine without any licensed imagery. Faces are crude ellipse renderings whose
eye openness and mouth curvature track the engagement class, with per-subject
geometry so subject-level splits are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .annotation import AnnotationRecord, BehavioralLabel, EmotionalLabel
from .data import IMAGE_SIZE, LabeledImage


@dataclass(frozen=True)
class SubjectGeometry:
    """Per-subject face parameters; jitters identity without hiding the class."""

    face_ry: float
    face_rx: float
    eye_dx: float
    eye_y: float
    mouth_y: float
    skin: float
    tilt_deg: float


def sample_subject(rng: np.random.Generator) -> SubjectGeometry:
    return SubjectGeometry(
        face_ry=float(rng.uniform(17.0, 21.0)),
        face_rx=float(rng.uniform(13.0, 16.0)),
        eye_dx=float(rng.uniform(5.5, 7.5)),
        eye_y=float(rng.uniform(-6.5, -4.5)),
        mouth_y=float(rng.uniform(7.0, 10.0)),
        skin=float(rng.uniform(150.0, 205.0)),
        tilt_deg=float(rng.uniform(-4.0, 4.0)),
    )


def _ellipse(yy: np.ndarray, xx: np.ndarray, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def render_face(
    geometry: SubjectGeometry, engaged: bool, rng: np.random.Generator
) -> np.ndarray:
    """One 48x48 uint8 face. Engaged: open eyes, flat-to-raised mouth.
    Disengaged: narrowed eyes, downturned mouth, stronger head droop."""
    size = IMAGE_SIZE
    center = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)

    droop = rng.uniform(0.0, 2.0) if engaged else rng.uniform(2.5, 6.0)
    cy = center + droop
    cx = center + rng.uniform(-1.5, 1.5)

    image = np.full((size, size), 30.0)
    image[_ellipse(yy, xx, cy, cx, geometry.face_ry, geometry.face_rx)] = geometry.skin

    eye_open = rng.uniform(1.6, 2.4) if engaged else rng.uniform(0.4, 0.9)
    for side in (-1.0, 1.0):
        ex = cx + side * geometry.eye_dx
        ey = cy + geometry.eye_y
        image[_ellipse(yy, xx, ey, ex, eye_open, 2.6)] = 25.0

    # mouth as a thin parabola; curvature sign encodes the class
    curve = rng.uniform(-0.08, 0.0) if engaged else rng.uniform(0.06, 0.16)
    mouth_cy = cy + geometry.mouth_y
    for dx in np.arange(-5.0, 5.01, 0.5):
        my = mouth_cy + curve * dx * dx
        row = int(round(my))
        col = int(round(cx + dx))
        if 0 <= row < size - 1 and 0 <= col < size:
            image[row, col] = 20.0
            image[row + 1, col] = 20.0

    image += rng.normal(0.0, 6.0, size=(size, size))
    return np.clip(np.round(image), 0, 255).astype(np.uint8)


def make_er_corpus(
    num_subjects: int = 20, per_subject: int = 12, seed: int = 42
) -> list[LabeledImage]:
    """Balanced engaged/disengaged corpus with subject identities."""
    if num_subjects < 1 or per_subject < 1:
        raise ValueError("num_subjects and per_subject must be >= 1")
    rng = np.random.default_rng(seed)
    images: list[LabeledImage] = []
    for subject_index in range(num_subjects):
        subject_id = f"s{subject_index:03d}"
        geometry = sample_subject(rng)
        for sample_index in range(per_subject):
            label = (subject_index + sample_index) % 2
            images.append(
                LabeledImage(
                    sample_id=f"{subject_id}_{sample_index:04d}",
                    pixels=render_face(geometry, engaged=bool(label), rng=rng),
                    label=label,
                    subject_id=subject_id,
                )
            )
    return images


def make_separable_classes(
    num_classes: int, per_class: int, seed: int = 42, noise: float = 8.0
) -> tuple[np.ndarray, np.ndarray]:
    """Raw uint8 images trivially separable by class: one bright Gaussian bump
    at a class-specific location on a noisy background."""
    if num_classes < 2 or per_class < 1:
        raise ValueError("need num_classes >= 2 and per_class >= 1")
    rng = np.random.default_rng(seed)
    size = IMAGE_SIZE
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    centers = [
        (10.0 + 28.0 * (k // 4) + 4.0 * ((k % 4) // 2), 8.0 + 10.0 * (k % 4))
        for k in range(num_classes)
    ]
    images = np.empty((num_classes * per_class, size, size), dtype=np.uint8)
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    for index in range(len(labels)):
        label = index % num_classes
        cy, cx = centers[label]
        cy += rng.uniform(-1.5, 1.5)
        cx += rng.uniform(-1.5, 1.5)
        bump = 200.0 * np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 4.0**2)))
        grid = 40.0 + bump + rng.normal(0.0, noise, size=(size, size))
        images[index] = np.clip(np.round(grid), 0, 255).astype(np.uint8)
        labels[index] = label
    return images, labels


_ENGAGED_VOTES = (
    (BehavioralLabel.ON_TASK, EmotionalLabel.SATISFIED),
    (BehavioralLabel.ON_TASK, EmotionalLabel.CONFUSED),
)
_DISENGAGED_VOTES = (
    (BehavioralLabel.OFF_TASK, EmotionalLabel.BORED),
    (BehavioralLabel.ON_TASK, EmotionalLabel.BORED),
    (BehavioralLabel.OFF_TASK, EmotionalLabel.SATISFIED),
)


def make_annotation_records(
    images: list[LabeledImage],
    num_annotators: int = 6,
    noise: float = 0.05,
    seed: int = 7,
) -> list[AnnotationRecord]:
    """Simulate a panel of annotators labeling both dimensions per image.

    Each annotator mostly votes a pattern consistent with the image's true
    class; with probability ``noise`` they vote the opposite class, and with
    ``noise / 2`` they mark a dimension undecidable.
    """
    if num_annotators < 1:
        raise ValueError("num_annotators must be >= 1")
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must be in [0, 1]")
    rng = np.random.default_rng(seed)
    start = datetime(2024, 3, 1, 9, 0, 0, tzinfo=timezone.utc)
    records: list[AnnotationRecord] = []
    for image_index, image in enumerate(images):
        for annotator_index in range(num_annotators):
            truthful = _ENGAGED_VOTES if image.label == 1 else _DISENGAGED_VOTES
            contrary = _DISENGAGED_VOTES if image.label == 1 else _ENGAGED_VOTES
            draw = rng.uniform()
            if draw < noise:
                pool = contrary
                behavioral, emotional = pool[rng.integers(len(pool))]
            elif draw < 1.5 * noise:
                behavioral, emotional = BehavioralLabel.CANT_DECIDE, EmotionalLabel.CANT_DECIDE
            else:
                pool = truthful
                behavioral, emotional = pool[rng.integers(len(pool))]
            records.append(
                AnnotationRecord(
                    sample_id=image.sample_id,
                    annotator_id=f"a{annotator_index:02d}",
                    behavioral=behavioral,
                    emotional=emotional,
                    timestamp=start + timedelta(seconds=image_index * 60 + annotator_index),
                )
            )
    return records


def image_source(images: list[LabeledImage]) -> dict[str, tuple[np.ndarray, str]]:
    """Mapping form consumed by dataset aggregation."""
    return {
        image.sample_id: (image.pixels, image.subject_id or "unknown")
        for image in images
    }
