import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from engagerec.preprocessing import (
    IMAGE_NORM_TARGET,
    STD_FLOOR,
    AugmentParams,
    FaceBox,
    GradientBlobDetector,
    ImageDecodeError,
    NormalizationError,
    PixelStats,
    apply_pixel_stats,
    augment,
    clamp_box,
    detect_largest_face,
    fit_pixel_stats,
    load_image,
    normalize_dataset,
    normalize_image,
    standardize_face,
    to_grayscale,
)


class TestNormalizeImage:
    def test_mean_zero_norm_target(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            image = rng.integers(0, 256, (48, 48), dtype=np.uint8)
            out = normalize_image(image)
            assert out.dtype == np.float64
            assert abs(out.mean()) < 1e-5
            assert abs(np.linalg.norm(out) - IMAGE_NORM_TARGET) < 1e-3

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        image = rng.uniform(10, 200, (48, 48))
        base = normalize_image(image)
        for alpha in (0.5, 3.0, 117.0):
            assert np.allclose(normalize_image(alpha * image), base, atol=1e-6)

    def test_shift_invariance(self):
        rng = np.random.default_rng(2)
        image = rng.uniform(10, 200, (48, 48))
        base = normalize_image(image)
        for shift in (-40.0, 25.0, 300.0):
            assert np.allclose(normalize_image(image + shift), base, atol=1e-6)

    def test_constant_image_rejected(self):
        with pytest.raises(NormalizationError):
            normalize_image(np.full((48, 48), 128, dtype=np.uint8))
        with pytest.raises(NormalizationError):
            normalize_image(np.zeros((48, 48), dtype=np.uint8))


class TestPixelStats:
    def test_fit_whitens_training_stack(self):
        rng = np.random.default_rng(3)
        stack = np.stack(
            [normalize_image(rng.integers(0, 256, (48, 48), dtype=np.uint8)) for _ in range(64)]
        )
        stats = fit_pixel_stats(stack)
        whitened = apply_pixel_stats(stack, stats)
        assert np.abs(whitened.mean(axis=0)).max() < 1e-10
        assert np.abs(whitened.std(axis=0) - 1.0).max() < 1e-8

    def test_constant_position_floored(self):
        stack = np.zeros((10, 48, 48))
        stack[:, 0, 0] = 5.0  # identical across images -> zero variance
        stack += np.random.default_rng(4).normal(0, 1, (10, 48, 48)) * (
            np.arange(48 * 48).reshape(48, 48) > 0
        )
        stats = fit_pixel_stats(stack)
        assert stats.std[0, 0] == STD_FLOOR
        out = apply_pixel_stats(stack, stats)
        assert np.isfinite(out).all()

    def test_tensor_round_trip(self):
        rng = np.random.default_rng(5)
        stats = PixelStats(mean=rng.normal(0, 1, (48, 48)), std=rng.uniform(0.5, 2, (48, 48)))
        back = PixelStats.from_tensors(stats.as_tensors())
        assert np.allclose(back.mean, stats.mean, atol=1e-6)
        assert np.allclose(back.std, stats.std, atol=1e-6)

    def test_missing_tensors_raise(self):
        with pytest.raises(KeyError, match="pixel"):
            PixelStats.from_tensors({})

    def test_invalid_stats_rejected(self):
        with pytest.raises(ValueError):
            PixelStats(mean=np.zeros((48, 48)), std=np.zeros((48, 48)))
        with pytest.raises(ValueError):
            PixelStats(mean=np.zeros((4, 4)), std=np.ones((4, 4)))

    def test_normalize_dataset_reuses_stats(self):
        rng = np.random.default_rng(6)
        train = rng.integers(0, 256, (32, 48, 48), dtype=np.uint8)
        other = rng.integers(0, 256, (8, 48, 48), dtype=np.uint8)
        train_out, stats = normalize_dataset(train)
        other_out, same_stats = normalize_dataset(other, stats)
        assert same_stats is stats
        assert train_out.dtype == np.float32
        assert abs(float(train_out.mean())) < 1e-5
        # other split normalized with train statistics, not its own
        manual = apply_pixel_stats(normalize_image(other[0]), stats)
        assert np.allclose(other_out[0], manual, atol=1e-5)


class TestAugment:
    def _grid(self, seed=0):
        rng = np.random.default_rng(seed)
        return normalize_image(rng.integers(0, 256, (48, 48), dtype=np.uint8))

    def test_reproducible_for_fixed_seed(self):
        grid = self._grid()
        params = AugmentParams()
        first = augment(grid, np.random.default_rng(99), params)
        second = augment(grid, np.random.default_rng(99), params)
        assert np.array_equal(first, second)

    def test_preserves_shape(self):
        out = augment(self._grid(), np.random.default_rng(1), AugmentParams())
        assert out.shape == (48, 48)

    def test_identity_or_mirror_when_other_transforms_off(self):
        grid = self._grid()
        params = AugmentParams(max_rotation_deg=0.0, crop_pad=0)
        seen = set()
        for seed in range(20):
            out = augment(grid, np.random.default_rng(seed), params)
            if np.array_equal(out, grid):
                seen.add("identity")
            elif np.array_equal(out, grid[:, ::-1]):
                seen.add("mirror")
            else:
                raise AssertionError("augmentation applied more than flip")
        assert seen == {"identity", "mirror"}

    def test_crop_shifts_content(self):
        grid = np.zeros((48, 48))
        grid[20:28, 20:28] = 1.0
        params = AugmentParams(max_rotation_deg=0.0, crop_pad=4)
        outputs = [augment(grid, np.random.default_rng(seed), params) for seed in range(12)]
        assert any(not np.array_equal(out, grid) for out in outputs)
        assert all(out.shape == (48, 48) for out in outputs)

    def test_rotation_fills_corners_with_zero(self):
        grid = np.ones((48, 48))
        params = AugmentParams(max_rotation_deg=10.0, crop_pad=0)
        # find a seed that rotates by a noticeable angle and does not flip
        for seed in range(40):
            out = augment(grid, np.random.default_rng(seed), params)
            if out.min() < 0.5:
                assert out.shape == (48, 48)
                return
        raise AssertionError("no rotation produced a zero-filled corner")


class TestFaceDetection:
    def test_largest_box_wins_regardless_of_order(self):
        boxes = [
            FaceBox(x=5, y=5, width=10, height=10, score=0.9),
            FaceBox(x=20, y=20, width=20, height=20, score=0.1),
            FaceBox(x=0, y=0, width=8, height=8, score=0.99),
        ]

        class Fake:
            def __init__(self, order):
                self.order = order

            def detect(self, image):
                return [boxes[i] for i in self.order]

        image = np.zeros((48, 48, 3), dtype=np.uint8)
        results = {
            detect_largest_face(image, Fake(order))
            for order in ((0, 1, 2), (2, 1, 0), (1, 0, 2))
        }
        assert len(results) == 1
        assert results.pop().area == 400

    def test_no_detections_returns_none(self):
        class Empty:
            def detect(self, image):
                return []

        assert detect_largest_face(np.zeros((48, 48, 3), dtype=np.uint8), Empty()) is None

    def test_bundled_detector_finds_centered_structure(self):
        rng = np.random.default_rng(7)
        image = rng.integers(0, 8, (96, 96), dtype=np.uint8)
        image[30:70, 25:75] = rng.integers(100, 256, (40, 50), dtype=np.uint8)
        box = detect_largest_face(image, GradientBlobDetector())
        assert box is not None
        center_x = box.x + box.width / 2
        center_y = box.y + box.height / 2
        assert 25 <= center_x <= 75
        assert 30 <= center_y <= 70

    def test_clamp_box(self):
        box = FaceBox(x=-5, y=40, width=20, height=20)
        clamped = clamp_box(box, (48, 48))
        assert clamped.x == 0 and clamped.width == 15
        assert clamped.y == 40 and clamped.height == 8

    def test_standardize_face_resizes_and_grays(self):
        rng = np.random.default_rng(8)
        image = rng.integers(0, 256, (100, 120, 3), dtype=np.uint8)
        out = standardize_face(image, FaceBox(x=10, y=10, width=64, height=80))
        assert out.shape == (48, 48)
        assert out.dtype == np.uint8

    def test_standardize_face_degenerate_box(self):
        image = np.zeros((50, 50, 3), dtype=np.uint8)
        with pytest.raises(ValueError, match="degenerate"):
            standardize_face(image, FaceBox(x=60, y=60, width=10, height=10))

    def test_standardize_face_no_resize_when_already_48(self):
        image = (np.arange(48 * 48).reshape(48, 48) % 256).astype(np.uint8)
        out = standardize_face(image, FaceBox(x=0, y=0, width=48, height=48))
        assert np.array_equal(out, image)


class TestImageIo:
    def test_load_image_missing(self, tmp_path):
        with pytest.raises(ImageDecodeError):
            load_image(tmp_path / "absent.png")

    def test_load_image_color_and_gray(self, tmp_path):
        rng = np.random.default_rng(9)
        color = rng.integers(0, 256, (40, 30, 3), dtype=np.uint8)
        Image.fromarray(color).save(tmp_path / "c.png")
        loaded = load_image(tmp_path / "c.png")
        assert loaded.shape == (40, 30, 3)
        assert np.array_equal(loaded, color)

        gray = rng.integers(0, 256, (20, 20), dtype=np.uint8)
        Image.fromarray(gray, mode="L").save(tmp_path / "g.png")
        assert np.array_equal(load_image(tmp_path / "g.png"), gray)

    def test_to_grayscale_passthrough(self):
        gray = np.zeros((10, 10), dtype=np.uint8)
        assert to_grayscale(gray) is gray
