"""Classical baseline: oriented-gradient histograms plus a linear SVM."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from skimage.feature import hog
from sklearn.svm import LinearSVC

from ..data import IMAGE_SIZE


@dataclass(frozen=True)
class HogParams:
    cell_size: int = 8
    block_cells: int = 2
    bins: int = 9


def hog_descriptor_length(params: HogParams = HogParams()) -> int:
    cells = IMAGE_SIZE // params.cell_size
    blocks = cells - params.block_cells + 1
    return blocks * blocks * params.block_cells * params.block_cells * params.bins


def hog_features(grid: np.ndarray, params: HogParams = HogParams()) -> np.ndarray:
    """Block-normalized orientation histograms of one 48x48 grid."""
    array = np.asarray(grid, dtype=np.float64)
    if array.shape != (IMAGE_SIZE, IMAGE_SIZE):
        raise ValueError(f"expected {IMAGE_SIZE}x{IMAGE_SIZE} grid, got {array.shape}")
    return hog(
        array,
        orientations=params.bins,
        pixels_per_cell=(params.cell_size, params.cell_size),
        cells_per_block=(params.block_cells, params.block_cells),
        block_norm="L2-Hys",
        feature_vector=True,
    )


def hog_features_batch(grids: np.ndarray, params: HogParams = HogParams()) -> np.ndarray:
    return np.stack([hog_features(grid, params) for grid in grids])


@dataclass
class HogSvmModel:
    weights: np.ndarray
    bias: float
    C: float
    params: HogParams = HogParams()

    def __post_init__(self) -> None:
        expected = hog_descriptor_length(self.params)
        if self.weights.shape != (expected,):
            raise ValueError(
                f"weight vector must match descriptor length {expected}, got {self.weights.shape}"
            )


def train_hog_svm(features: np.ndarray, labels: np.ndarray, C: float = 0.1) -> HogSvmModel:
    """Fit a linear hinge-loss SVM on HOG descriptors; C defaults to 0.1."""
    if C <= 0:
        raise ValueError(f"C must be positive, got {C}")
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError(f"training data holds a single class: {classes.tolist()}")
    if not np.array_equal(classes, [0, 1]):
        raise ValueError(f"labels must be binary 0/1, got {classes.tolist()}")
    svm = LinearSVC(C=C, loss="hinge", tol=1e-8, max_iter=500_000, random_state=0)
    svm.fit(features, labels)
    return HogSvmModel(
        weights=svm.coef_[0].astype(np.float64),
        bias=float(svm.intercept_[0]),
        C=C,
        params=HogParams(),
    )


def predict_hog_svm(model: HogSvmModel, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(predicted labels, signed decision scores); positive score = engaged."""
    scores = np.asarray(features, dtype=np.float64) @ model.weights + model.bias
    return (scores > 0).astype(np.int64), scores


def save_hog_svm(model: HogSvmModel, path: str | Path) -> None:
    np.savez(
        path,
        weights=model.weights,
        bias=model.bias,
        C=model.C,
        cell_size=model.params.cell_size,
        block_cells=model.params.block_cells,
        bins=model.params.bins,
    )


def load_hog_svm(path: str | Path) -> HogSvmModel:
    archive = np.load(path)
    params = HogParams(
        cell_size=int(archive["cell_size"]),
        block_cells=int(archive["block_cells"]),
        bins=int(archive["bins"]),
    )
    return HogSvmModel(
        weights=archive["weights"],
        bias=float(archive["bias"]),
        C=float(archive["C"]),
        params=params,
    )
