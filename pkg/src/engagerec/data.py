"""Dataset ingest: FER-2013 CSV parsing, ER manifests, and split construction."""

from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np
from PIL import Image

IMAGE_SIZE = 48
FER_NUM_CLASSES = 7
FER_PIXELS_PER_IMAGE = IMAGE_SIZE * IMAGE_SIZE

# Public FER-2013 label order (the CSV only stores integer ids).
FER_LABEL_NAMES = ("anger", "disgust", "fear", "happiness", "sadness", "surprise", "neutral")

# Canonical FER-2013 counts: 28,709 Training rows of which 11 are completely
# black, leaving 25,109 train + 3,589 validation.
FER_TRAINING_ROWS = 28709
FER_BLACK_TRAINING_ROWS = 11
FER_VALID_SIZE = 3589
FER_TRAIN_SIZE = 25109
FER_TEST_SIZE = 3589

_USAGE_TO_SPLIT = {
    "Training": "train",
    "PublicTest": "public_test",
    "PrivateTest": "private_test",
}
_SPLIT_TO_USAGE = {v: k for k, v in _USAGE_TO_SPLIT.items()}

ER_SPLITS = ("train", "valid", "test")
ER_LABEL_NAMES = ("disengaged", "engaged")

# Documented engagement corpus shape: 4,627 labeled images from 20 subjects,
# split subject-independently. Per-split class supports drive the published
# evaluation arithmetic.
ER_TOTAL_SIZE = 4627
ER_CLASS_TOTALS = {"engaged": 2290, "disengaged": 2337}
ER_SPLIT_SIZES = {"train": 3224, "valid": 715, "test": 688}
ER_TRAIN_SUPPORT = {"engaged": 1589, "disengaged": 1635}
ER_VALID_SUPPORT = {"engaged": 392, "disengaged": 323}
ER_TEST_SUPPORT = {"engaged": 309, "disengaged": 379}


class MalformedRowError(ValueError):
    """A FER CSV row failed validation; carries the offending row index."""

    def __init__(self, row_index: int, message: str):
        super().__init__(f"row {row_index}: {message}")
        self.row_index = row_index


class ManifestError(ValueError):
    """An ER manifest record failed validation."""


class SplitAssignmentError(ValueError):
    """A subject-to-split assignment is missing or contradictory."""


class DatasetMismatchWarning(UserWarning):
    """Input counts deviate from the canonical dataset shape."""


@dataclass(eq=False)
class LabeledImage:
    """A 48x48 grayscale image with a class label and split tag."""

    pixels: np.ndarray
    label: int
    split: str | None = None
    subject_id: str | None = None
    sample_id: str | None = None

    def __post_init__(self) -> None:
        if self.pixels.shape != (IMAGE_SIZE, IMAGE_SIZE):
            raise ValueError(f"pixel grid must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {self.pixels.dtype}")


@dataclass
class FerSplits:
    train: list[LabeledImage]
    valid: list[LabeledImage]
    public_test: list[LabeledImage]
    private_test: list[LabeledImage]

    def sizes(self) -> dict[str, int]:
        return {
            "train": len(self.train),
            "valid": len(self.valid),
            "public_test": len(self.public_test),
            "private_test": len(self.private_test),
        }


@dataclass
class ErSplits:
    train: list[LabeledImage]
    valid: list[LabeledImage]
    test: list[LabeledImage]

    def sizes(self) -> dict[str, int]:
        return {"train": len(self.train), "valid": len(self.valid), "test": len(self.test)}

    def subjects(self) -> dict[str, set[str]]:
        return {
            name: {r.subject_id for r in records if r.subject_id is not None}
            for name, records in (("train", self.train), ("valid", self.valid), ("test", self.test))
        }


@dataclass
class ErManifestEntry:
    """One line of an ER manifest; the image stays on disk until loaded."""

    image_path: str
    subject_id: str
    label: int
    split: str | None = None
    sample_id: str | None = None

    def resolved_sample_id(self) -> str:
        return self.sample_id or Path(self.image_path).stem


def _open_text(source: str | Path | IO[str] | IO[bytes]) -> IO[str]:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def parse_fer_csv(source: str | Path | IO[str] | IO[bytes]) -> list[LabeledImage]:
    """Parse a FER-2013 style CSV (``emotion,pixels,Usage``) into LabeledImages.

    The pixel field must hold exactly 2304 space-separated 8-bit values,
    reshaped row-major to 48x48. Raises MalformedRowError with the 1-based
    data row index on any invalid row.
    """
    records: list[LabeledImage] = []
    stream = _open_text(source)
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        return records
    for index, row in enumerate(reader, start=1):
        if len(row) != 3:
            raise MalformedRowError(index, f"expected 3 fields, got {len(row)}")
        label_field, pixel_field, usage = row
        try:
            label = int(label_field)
        except ValueError:
            raise MalformedRowError(index, f"non-integer label {label_field!r}") from None
        if not 0 <= label < FER_NUM_CLASSES:
            raise MalformedRowError(index, f"label {label} outside 0-{FER_NUM_CLASSES - 1}")
        values = np.fromstring(pixel_field, dtype=np.int64, sep=" ")  # noqa: NPY201 - text mode
        if values.size != FER_PIXELS_PER_IMAGE:
            raise MalformedRowError(index, f"expected {FER_PIXELS_PER_IMAGE} pixels, got {values.size}")
        if values.min() < 0 or values.max() > 255:
            raise MalformedRowError(index, "pixel value outside 0-255")
        split = _USAGE_TO_SPLIT.get(usage.strip())
        if split is None:
            raise MalformedRowError(index, f"unknown usage tag {usage!r}")
        pixels = values.astype(np.uint8).reshape(IMAGE_SIZE, IMAGE_SIZE)
        records.append(LabeledImage(pixels=pixels, label=label, split=split))
    return records


def write_fer_csv(records: Sequence[LabeledImage], destination: str | Path | IO[str]) -> None:
    """Serialize records back to the FER-2013 CSV layout (parse round-trip inverse)."""
    own = isinstance(destination, (str, Path))
    stream = open(destination, "w", encoding="utf-8", newline="") if own else destination
    try:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["emotion", "pixels", "Usage"])
        for record in records:
            usage = _SPLIT_TO_USAGE.get(record.split or "train", "Training")
            pixel_field = " ".join(str(v) for v in record.pixels.reshape(-1))
            writer.writerow([record.label, pixel_field, usage])
    finally:
        if own:
            stream.close()


def is_all_black(pixels: np.ndarray) -> bool:
    return not pixels.any()


def split_fer(records: Sequence[LabeledImage], seed: int = 42) -> FerSplits:
    """Partition parsed FER-2013 records into train/valid/public/private splits.

    Completely black images are dropped from the Training portion only, then
    the remainder is shuffled with a seeded RNG and cut into 3,589 validation
    and the rest for training. Test splits pass through unchanged. A
    DatasetMismatchWarning fires (and the cut becomes proportional) when the
    post-removal Training count is not the canonical 28,698.
    """
    training = [r for r in records if r.split == "train"]
    public_test = [r for r in records if r.split == "public_test"]
    private_test = [r for r in records if r.split == "private_test"]

    kept = [r for r in training if not is_all_black(r.pixels)]
    expected = FER_TRAINING_ROWS - FER_BLACK_TRAINING_ROWS
    if len(kept) == expected:
        valid_size = FER_VALID_SIZE
    else:
        warnings.warn(
            f"Training portion has {len(kept)} usable rows, expected {expected}; "
            "splitting proportionally",
            DatasetMismatchWarning,
            stacklevel=2,
        )
        valid_size = round(len(kept) * FER_VALID_SIZE / expected)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(kept))
    valid = [replace(kept[i], split="valid") for i in order[:valid_size]]
    train = [replace(kept[i], split="train") for i in order[valid_size:]]
    return FerSplits(train=train, valid=valid, public_test=public_test, private_test=private_test)


def _parse_manifest_line(line_no: int, payload: dict, base_dir: Path) -> ErManifestEntry:
    for key in ("image_path", "subject_id", "label"):
        if key not in payload:
            raise ManifestError(f"line {line_no}: missing field {key!r}")
    subject_id = payload["subject_id"]
    if not subject_id:
        raise ManifestError(f"line {line_no}: empty subject_id")
    label = payload["label"]
    if label not in (0, 1):
        raise ManifestError(f"line {line_no}: label must be 0 or 1, got {label!r}")
    split = payload.get("split")
    if split is not None and split not in ER_SPLITS:
        raise ManifestError(f"line {line_no}: unknown split {split!r}")
    return ErManifestEntry(
        image_path=str(base_dir / payload["image_path"]),
        subject_id=str(subject_id),
        label=int(label),
        split=split,
        sample_id=payload.get("sample_id"),
    )


def read_er_manifest_entries(path: str | Path) -> tuple[list[ErManifestEntry], dict | None]:
    """Read an ER manifest (line-delimited JSON) without loading image bytes.

    Returns (entries, header). The optional first line is a header object
    (``{"type": "header", ...}``) carrying split/label counts.
    """
    path = Path(path)
    base_dir = path.parent
    entries: list[ErManifestEntry] = []
    header: dict | None = None
    with open(path, "r", encoding="utf-8") as stream:
        for line_no, line in enumerate(stream, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {line_no}: invalid JSON ({exc})") from None
            if line_no == 1 and payload.get("type") == "header":
                header = payload
                continue
            entries.append(_parse_manifest_line(line_no, payload, base_dir))
    if header is not None:
        _check_header(header, entries)
    return entries, header


def _check_header(header: dict, entries: Sequence[ErManifestEntry]) -> None:
    total = len(entries)
    engaged = sum(1 for e in entries if e.label == 1)
    checks = {"total": total, "engaged": engaged, "disengaged": total - engaged}
    for key, actual in checks.items():
        declared = header.get(key)
        if declared is not None and declared != actual:
            raise ManifestError(f"header declares {key}={declared} but manifest holds {actual}")
    declared_splits = header.get("splits")
    if declared_splits:
        actual_splits: dict[str, int] = {}
        for entry in entries:
            if entry.split:
                actual_splits[entry.split] = actual_splits.get(entry.split, 0) + 1
        for name, declared in declared_splits.items():
            if actual_splits.get(name, 0) != declared:
                raise ManifestError(
                    f"header declares {name}={declared} but manifest holds {actual_splits.get(name, 0)}"
                )


def load_image_gray48(path: str | Path) -> np.ndarray:
    """Load a stored ER sample; must already be 48x48 single-channel."""
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise ManifestError(f"{path}: expected grayscale image, got mode {img.mode}")
            pixels = np.asarray(img, dtype=np.uint8)
    except FileNotFoundError:
        raise ManifestError(f"{path}: image file missing") from None
    if pixels.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise ManifestError(f"{path}: expected {IMAGE_SIZE}x{IMAGE_SIZE}, got {pixels.shape}")
    return pixels


def load_er_manifest(path: str | Path) -> list[LabeledImage]:
    """Load an ER manifest and its images into LabeledImages (binary labels)."""
    entries, _ = read_er_manifest_entries(path)
    return [
        LabeledImage(
            pixels=load_image_gray48(entry.image_path),
            label=entry.label,
            split=entry.split,
            subject_id=entry.subject_id,
            sample_id=entry.resolved_sample_id(),
        )
        for entry in entries
    ]


def write_er_manifest(path: str | Path, entries: Sequence[ErManifestEntry]) -> None:
    """Write manifest entries with a leading header of label and split counts.

    Image paths are stored relative to the manifest directory when possible.
    """
    path = Path(path)
    base_dir = path.parent
    engaged = sum(1 for e in entries if e.label == 1)
    splits: dict[str, int] = {}
    for entry in entries:
        if entry.split:
            splits[entry.split] = splits.get(entry.split, 0) + 1
    header = {
        "type": "header",
        "total": len(entries),
        "engaged": engaged,
        "disengaged": len(entries) - engaged,
    }
    if splits:
        header["splits"] = splits
    with open(path, "w", encoding="utf-8") as stream:
        stream.write(json.dumps(header) + "\n")
        for entry in entries:
            image_path = Path(entry.image_path)
            try:
                image_path = image_path.relative_to(base_dir)
            except ValueError:
                pass
            record = {
                "image_path": str(image_path),
                "subject_id": entry.subject_id,
                "label": entry.label,
            }
            if entry.split:
                record["split"] = entry.split
            if entry.sample_id:
                record["sample_id"] = entry.sample_id
            stream.write(json.dumps(record) + "\n")


def _normalize_assignment(assignment: Mapping[str, str] | Iterable[tuple[str, str]]) -> dict[str, str]:
    if isinstance(assignment, Mapping):
        pairs = list(assignment.items())
    else:
        pairs = list(assignment)
    normalized: dict[str, str] = {}
    for subject, split in pairs:
        if split not in ER_SPLITS:
            raise SplitAssignmentError(f"unknown split {split!r} for subject {subject!r}")
        if subject in normalized and normalized[subject] != split:
            raise SplitAssignmentError(
                f"subject {subject!r} assigned to both {normalized[subject]!r} and {split!r}"
            )
        normalized[subject] = split
    return normalized


def split_er(
    records: Sequence[LabeledImage],
    assignment: Mapping[str, str] | Iterable[tuple[str, str]],
) -> ErSplits:
    """Route ER records into subject-independent train/valid/test splits.

    Every record's subject must appear in the assignment; a subject mapped to
    two different splits is an error.
    """
    table = _normalize_assignment(assignment)
    buckets: dict[str, list[LabeledImage]] = {name: [] for name in ER_SPLITS}
    for record in records:
        if record.subject_id is None:
            raise SplitAssignmentError("ER record without subject_id")
        split = table.get(record.subject_id)
        if split is None:
            raise SplitAssignmentError(f"subject {record.subject_id!r} missing from assignment")
        buckets[split].append(replace(record, split=split))
    return ErSplits(train=buckets["train"], valid=buckets["valid"], test=buckets["test"])


def assign_subject_splits(
    subject_counts: Mapping[str, int],
    seed: int = 42,
    fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
) -> dict[str, str]:
    """Deterministically assign whole subjects to train/valid/test.

    Subjects are shuffled with the seed, then each is routed to the split
    whose record share lags its target fraction the most, keeping splits
    subject-independent while roughly hitting the requested proportions.
    """
    if not np.isclose(sum(fractions), 1.0):
        raise SplitAssignmentError(f"fractions must sum to 1, got {fractions}")
    subjects = sorted(subject_counts)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(subjects))
    totals = {name: 0 for name in ER_SPLITS}
    targets = dict(zip(ER_SPLITS, fractions))
    grand_total = sum(subject_counts.values()) or 1
    assignment: dict[str, str] = {}
    for idx in order:
        subject = subjects[idx]
        deficits = {
            name: targets[name] - totals[name] / grand_total for name in ER_SPLITS
        }
        split = max(ER_SPLITS, key=lambda name: deficits[name])
        assignment[subject] = split
        totals[split] += subject_counts[subject]
    return assignment


def to_arrays(records: Sequence[LabeledImage]) -> tuple[np.ndarray, np.ndarray]:
    """Stack records into (N, 48, 48) uint8 pixels and (N,) int64 labels."""
    if not records:
        return (
            np.zeros((0, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8),
            np.zeros((0,), dtype=np.int64),
        )
    pixels = np.stack([r.pixels for r in records]).astype(np.uint8)
    labels = np.array([r.label for r in records], dtype=np.int64)
    return pixels, labels


def save_fer_splits(splits: FerSplits, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name in ("train", "valid", "public_test", "private_test"):
        pixels, labels = to_arrays(getattr(splits, name))
        arrays[f"{name}_pixels"] = pixels
        arrays[f"{name}_labels"] = labels
    np.savez_compressed(path, **arrays)


def load_fer_splits(path: str | Path) -> FerSplits:
    archive = np.load(path)
    groups = {}
    for name in ("train", "valid", "public_test", "private_test"):
        pixels = archive[f"{name}_pixels"]
        labels = archive[f"{name}_labels"]
        groups[name] = [
            LabeledImage(
                sample_id=f"{name}_{i:05d}",
                pixels=pixels[i],
                label=int(labels[i]),
                split=name,
            )
            for i in range(len(labels))
        ]
    return FerSplits(**groups)


def save_er_splits(splits: ErSplits, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name in ER_SPLITS:
        records = getattr(splits, name)
        pixels, labels = to_arrays(records)
        arrays[f"{name}_pixels"] = pixels
        arrays[f"{name}_labels"] = labels
        arrays[f"{name}_sample_ids"] = np.array(
            [r.sample_id or "" for r in records], dtype=np.str_
        )
        arrays[f"{name}_subjects"] = np.array(
            [r.subject_id or "" for r in records], dtype=np.str_
        )
    np.savez_compressed(path, **arrays)


def load_er_splits(path: str | Path) -> ErSplits:
    archive = np.load(path)
    groups = {}
    for name in ER_SPLITS:
        pixels = archive[f"{name}_pixels"]
        labels = archive[f"{name}_labels"]
        sample_ids = archive[f"{name}_sample_ids"]
        subjects = archive[f"{name}_subjects"]
        groups[name] = [
            LabeledImage(
                sample_id=str(sample_ids[i]) or f"{name}_{i:05d}",
                pixels=pixels[i],
                label=int(labels[i]),
                split=name,
                subject_id=str(subjects[i]) or None,
            )
            for i in range(len(labels))
        ]
    return ErSplits(**groups)
