import io
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from engagerec import data
from engagerec.data import (
    DatasetMismatchWarning,
    ErManifestEntry,
    LabeledImage,
    MalformedRowError,
    ManifestError,
    SplitAssignmentError,
    assign_subject_splits,
    is_all_black,
    load_er_manifest,
    load_er_splits,
    load_fer_splits,
    parse_fer_csv,
    read_er_manifest_entries,
    save_er_splits,
    save_fer_splits,
    split_er,
    split_fer,
    to_arrays,
    write_er_manifest,
    write_fer_csv,
)


def _random_records(rng, n, split="train"):
    return [
        LabeledImage(
            pixels=rng.integers(0, 256, (48, 48), dtype=np.uint8),
            label=int(rng.integers(0, 7)),
            split=split,
        )
        for _ in range(n)
    ]


class TestParseFerCsv:
    def test_parses_fields(self, tiny_fer_rows):
        records = parse_fer_csv(io.StringIO(tiny_fer_rows))
        assert len(records) == 6
        assert [r.label for r in records] == [0, 1, 2, 3, 4, 5]
        assert [r.split for r in records] == [
            "train", "train", "train", "train", "public_test", "private_test",
        ]
        assert all(r.pixels.shape == (48, 48) and r.pixels.dtype == np.uint8 for r in records)
        assert is_all_black(records[2].pixels)

    def test_empty_file(self):
        assert parse_fer_csv(io.StringIO("emotion,pixels,Usage\n")) == []

    @pytest.mark.parametrize(
        "row, fragment",
        [
            ("3,1 2 3,Training", "2304"),
            ("9," + " ".join(["1"] * 2304) + ",Training", "outside"),
            ("x," + " ".join(["1"] * 2304) + ",Training", "non-integer"),
            ("3," + " ".join(["1"] * 2304) + ",Nope", "usage"),
            ("3," + " ".join(["1"] * 2303) + " 999,Training", "0-255"),
            ("3,oops", "3 fields"),
        ],
    )
    def test_malformed_rows(self, row, fragment):
        stream = io.StringIO("emotion,pixels,Usage\n" + row + "\n")
        with pytest.raises(MalformedRowError) as info:
            parse_fer_csv(stream)
        assert info.value.row_index == 1
        assert fragment in str(info.value)

    def test_row_index_counts_data_rows(self, tiny_fer_rows):
        bad = tiny_fer_rows + "7," + " ".join(["1"] * 2304) + ",Training\n"
        with pytest.raises(MalformedRowError) as info:
            parse_fer_csv(io.StringIO(bad))
        assert info.value.row_index == 7

    def test_round_trip_preserves_pixels_and_labels(self):
        rng = np.random.default_rng(11)
        records = _random_records(rng, 8, split="train")
        records += _random_records(rng, 3, split="public_test")
        records += _random_records(rng, 2, split="private_test")
        buffer = io.StringIO()
        write_fer_csv(records, buffer)
        back = parse_fer_csv(io.StringIO(buffer.getvalue()))
        assert len(back) == len(records)
        for original, parsed in zip(records, back):
            assert np.array_equal(original.pixels, parsed.pixels)
            assert original.label == parsed.label
            assert original.split == parsed.split


class TestSplitFer:
    def _records(self, n_train=40, n_black=3, rng_seed=0):
        rng = np.random.default_rng(rng_seed)
        records = _random_records(rng, n_train - n_black, split="train")
        for _ in range(n_black):
            records.append(
                LabeledImage(pixels=np.zeros((48, 48), dtype=np.uint8), label=0, split="train")
            )
        records += _random_records(rng, 5, split="public_test")
        records += _random_records(rng, 5, split="private_test")
        return records

    def test_black_rows_removed_from_training_only(self):
        records = self._records()
        records.append(
            LabeledImage(pixels=np.zeros((48, 48), dtype=np.uint8), label=0, split="public_test")
        )
        with pytest.warns(DatasetMismatchWarning):
            splits = split_fer(records, seed=1)
        survivors = splits.train + splits.valid
        assert all(not is_all_black(r.pixels) for r in survivors)
        assert len(survivors) == 37
        assert sum(1 for r in splits.public_test if is_all_black(r.pixels)) == 1

    def test_deterministic_membership(self):
        records = self._records()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DatasetMismatchWarning)
            first = split_fer(records, seed=7)
            second = split_fer(records, seed=7)
        for name in ("train", "valid"):
            a = np.stack([r.pixels for r in getattr(first, name)])
            b = np.stack([r.pixels for r in getattr(second, name)])
            assert np.array_equal(a, b)

    def test_seed_changes_membership(self):
        records = self._records(n_train=60, n_black=0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DatasetMismatchWarning)
            first = split_fer(records, seed=1)
            second = split_fer(records, seed=2)
        a = np.stack([r.pixels for r in first.valid])
        b = np.stack([r.pixels for r in second.valid])
        assert not np.array_equal(a, b)

    def test_non_canonical_count_warns_and_splits_proportionally(self):
        records = self._records(n_train=2870, n_black=0, rng_seed=3)
        with pytest.warns(DatasetMismatchWarning):
            splits = split_fer(records, seed=0)
        expected_valid = round(2870 * data.FER_VALID_SIZE / (data.FER_TRAINING_ROWS - 11))
        assert len(splits.valid) == expected_valid
        assert len(splits.train) == 2870 - expected_valid


class TestErManifest:
    def _write_images(self, tmp_path, count=4):
        rng = np.random.default_rng(2)
        entries = []
        for index in range(count):
            pixels = rng.integers(0, 256, (48, 48), dtype=np.uint8)
            path = tmp_path / f"img_{index}.png"
            Image.fromarray(pixels, mode="L").save(path)
            entries.append(
                ErManifestEntry(
                    image_path=str(path),
                    subject_id=f"subj{index % 2}",
                    label=index % 2,
                    sample_id=f"img_{index}",
                )
            )
        return entries

    def test_write_read_round_trip(self, tmp_path):
        entries = self._write_images(tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        write_er_manifest(manifest, entries)
        back, header = read_er_manifest_entries(manifest)
        assert header["total"] == 4
        assert header["engaged"] == 2
        assert header["disengaged"] == 2
        assert [e.sample_id for e in back] == [e.sample_id for e in entries]
        assert [e.label for e in back] == [e.label for e in entries]
        loaded = load_er_manifest(manifest)
        assert all(img.pixels.shape == (48, 48) for img in loaded)

    def test_relative_paths_survive_directory_move(self, tmp_path):
        entries = self._write_images(tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        write_er_manifest(manifest, entries)
        moved = tmp_path.parent / (tmp_path.name + "_moved")
        tmp_path.rename(moved)
        loaded = load_er_manifest(moved / "manifest.jsonl")
        assert len(loaded) == 4

    def test_header_count_mismatch_rejected(self, tmp_path):
        entries = self._write_images(tmp_path)
        manifest = tmp_path / "manifest.jsonl"
        write_er_manifest(manifest, entries)
        text = manifest.read_text(encoding="utf-8").replace('"total": 4', '"total": 9')
        manifest.write_text(text, encoding="utf-8")
        with pytest.raises(ManifestError, match="total=9"):
            read_er_manifest_entries(manifest)

    @pytest.mark.parametrize(
        "line, fragment",
        [
            ('{"subject_id": "s", "label": 0}', "image_path"),
            ('{"image_path": "x.png", "label": 0}', "subject_id"),
            ('{"image_path": "x.png", "subject_id": "s"}', "label"),
            ('{"image_path": "x.png", "subject_id": "s", "label": 3}', "label"),
            ('{"image_path": "x.png", "subject_id": "", "label": 1}', "subject_id"),
            ('{"image_path": "x.png", "subject_id": "s", "label": 1, "split": "huh"}', "split"),
            ("not json", "JSON"),
        ],
    )
    def test_invalid_lines_rejected(self, tmp_path, line, fragment):
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text(line + "\n", encoding="utf-8")
        with pytest.raises(ManifestError, match=fragment):
            read_er_manifest_entries(manifest)

    def test_missing_image_file(self, tmp_path):
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text(
            '{"image_path": "gone.png", "subject_id": "s", "label": 1}\n', encoding="utf-8"
        )
        with pytest.raises(ManifestError, match="missing"):
            load_er_manifest(manifest)

    def test_wrong_size_image_rejected(self, tmp_path):
        Image.fromarray(np.zeros((32, 32), dtype=np.uint8), mode="L").save(tmp_path / "a.png")
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text(
            '{"image_path": "a.png", "subject_id": "s", "label": 1}\n', encoding="utf-8"
        )
        with pytest.raises(ManifestError, match="48x48"):
            load_er_manifest(manifest)

    def test_sample_id_defaults_to_file_stem(self, tmp_path):
        entry = self._write_images(tmp_path, count=1)[0]
        entry.sample_id = None
        assert entry.resolved_sample_id() == "img_0"


class TestSplitEr:
    def _records(self, subject_sizes):
        rng = np.random.default_rng(9)
        records = []
        for subject, count in subject_sizes.items():
            for index in range(count):
                records.append(
                    LabeledImage(
                        pixels=rng.integers(0, 256, (48, 48), dtype=np.uint8),
                        label=index % 2,
                        subject_id=subject,
                        sample_id=f"{subject}_{index}",
                    )
                )
        return records

    def test_routes_by_subject(self):
        records = self._records({"a": 3, "b": 2, "c": 1})
        splits = split_er(records, {"a": "train", "b": "valid", "c": "test"})
        assert splits.sizes() == {"train": 3, "valid": 2, "test": 1}
        assert all(r.split == "train" for r in splits.train)

    def test_missing_subject_rejected(self):
        records = self._records({"a": 1, "b": 1})
        with pytest.raises(SplitAssignmentError, match="'b'"):
            split_er(records, {"a": "train"})

    def test_conflicting_assignment_rejected(self):
        records = self._records({"a": 1})
        with pytest.raises(SplitAssignmentError, match="both"):
            split_er(records, [("a", "train"), ("a", "test")])

    def test_unknown_split_name_rejected(self):
        records = self._records({"a": 1})
        with pytest.raises(SplitAssignmentError, match="nope"):
            split_er(records, {"a": "nope"})

    def test_record_without_subject_rejected(self):
        record = LabeledImage(
            pixels=np.zeros((48, 48), dtype=np.uint8), label=0, sample_id="x"
        )
        with pytest.raises(SplitAssignmentError, match="subject"):
            split_er([record], {"a": "train"})

    @given(
        st.dictionaries(
            st.text(alphabet="abcdefgh", min_size=1, max_size=3),
            st.integers(min_value=1, max_value=9),
            min_size=1,
            max_size=12,
        ),
        st.integers(min_value=0, max_value=2**31 - 1),
    )
    @settings(max_examples=60, deadline=None)
    def test_assignment_partitions_subjects(self, subject_counts, seed):
        assignment = assign_subject_splits(subject_counts, seed=seed)
        assert set(assignment) == set(subject_counts)
        records = self._records(subject_counts)
        splits = split_er(records, assignment)
        sizes = splits.sizes()
        assert sum(sizes.values()) == len(records)
        subjects = splits.subjects()
        assert not subjects["train"] & subjects["valid"]
        assert not subjects["train"] & subjects["test"]
        assert not subjects["valid"] & subjects["test"]

    def test_assignment_deterministic(self):
        counts = {f"s{i}": (i % 5) + 1 for i in range(30)}
        assert assign_subject_splits(counts, seed=4) == assign_subject_splits(counts, seed=4)

    def test_assignment_tracks_fractions(self):
        counts = {f"s{i}": 10 for i in range(100)}
        assignment = assign_subject_splits(counts, seed=0)
        totals = {"train": 0, "valid": 0, "test": 0}
        for subject, split in assignment.items():
            totals[split] += counts[subject]
        assert abs(totals["train"] / 1000 - 0.70) < 0.05
        assert abs(totals["valid"] / 1000 - 0.15) < 0.05
        assert abs(totals["test"] / 1000 - 0.15) < 0.05

    def test_bad_fractions_rejected(self):
        with pytest.raises(SplitAssignmentError, match="sum to 1"):
            assign_subject_splits({"a": 1}, fractions=(0.5, 0.2, 0.2))


class TestArrayRoundTrips:
    def test_to_arrays_empty(self):
        pixels, labels = to_arrays([])
        assert pixels.shape == (0, 48, 48)
        assert labels.shape == (0,)

    def test_fer_splits_archive_round_trip(self, tmp_path):
        rng = np.random.default_rng(21)
        splits = data.FerSplits(
            train=_random_records(rng, 5, "train"),
            valid=_random_records(rng, 3, "valid"),
            public_test=_random_records(rng, 2, "public_test"),
            private_test=_random_records(rng, 2, "private_test"),
        )
        path = tmp_path / "fer.npz"
        save_fer_splits(splits, path)
        back = load_fer_splits(path)
        assert back.sizes() == splits.sizes()
        for name in ("train", "valid", "public_test", "private_test"):
            original, loaded = getattr(splits, name), getattr(back, name)
            assert np.array_equal(
                np.stack([r.pixels for r in original]), np.stack([r.pixels for r in loaded])
            )
            assert [r.label for r in original] == [r.label for r in loaded]

    def test_er_splits_archive_keeps_identity(self, tmp_path):
        rng = np.random.default_rng(22)
        records = [
            LabeledImage(
                pixels=rng.integers(0, 256, (48, 48), dtype=np.uint8),
                label=i % 2,
                subject_id=f"s{i % 3}",
                sample_id=f"s{i % 3}_{i}",
            )
            for i in range(9)
        ]
        assignment = {"s0": "train", "s1": "valid", "s2": "test"}
        splits = split_er(records, assignment)
        path = tmp_path / "er.npz"
        save_er_splits(splits, path)
        back = load_er_splits(path)
        assert back.sizes() == splits.sizes()
        assert [r.sample_id for r in back.train] == [r.sample_id for r in splits.train]
        assert [r.subject_id for r in back.test] == [r.subject_id for r in splits.test]
        assert all(r.split == "valid" for r in back.valid)


class TestDocumentedCorpusShape:
    """Published dataset arithmetic the pipeline is sized around."""

    def test_expression_counts(self):
        assert data.FER_TRAINING_ROWS - data.FER_BLACK_TRAINING_ROWS == 28698
        assert data.FER_TRAIN_SIZE + data.FER_VALID_SIZE == 28698
        assert data.FER_TRAIN_SIZE == 25109

    def test_engagement_counts(self):
        assert data.ER_SPLIT_SIZES == {"train": 3224, "valid": 715, "test": 688}
        assert sum(data.ER_SPLIT_SIZES.values()) == data.ER_TOTAL_SIZE == 4627
        assert data.ER_CLASS_TOTALS == {"engaged": 2290, "disengaged": 2337}
        assert sum(data.ER_CLASS_TOTALS.values()) == data.ER_TOTAL_SIZE
        assert data.ER_TRAIN_SUPPORT == {"engaged": 1589, "disengaged": 1635}
        assert sum(data.ER_TRAIN_SUPPORT.values()) == data.ER_SPLIT_SIZES["train"]
        assert data.ER_VALID_SUPPORT == {"engaged": 392, "disengaged": 323}
        assert sum(data.ER_VALID_SUPPORT.values()) == data.ER_SPLIT_SIZES["valid"]
        assert data.ER_TEST_SUPPORT == {"engaged": 309, "disengaged": 379}
        assert sum(data.ER_TEST_SUPPORT.values()) == data.ER_SPLIT_SIZES["test"]
