"""Three-class region filter: black canvas / text / non-text.

Grid cells are labeled by where their receptive-field center lands (canvas
fill, an annotated non-text box, or plain page), and a per-level random
forest trained on those labels keeps only non-text cells for indexing.
"""

from __future__ import annotations

import io
import json
import pickle
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.ensemble import RandomForestClassifier

from .embedder import EmbeddingGrid, rf_center
from .errors import EmptySplit, LevelMismatch, MissingClass, ModelLoadError, VersionMismatch
from .imageproc import Tile

CLASS_BLACK = "black"
CLASS_TEXT = "text"
CLASS_NON_TEXT = "non_text"
CLASSES = (CLASS_BLACK, CLASS_TEXT, CLASS_NON_TEXT)

_MODEL_MAGIC = b"PSPF"
_MODEL_VERSION = 1


@dataclass(frozen=True)
class RoiAnnotation:
    """Manually annotated non-text boxes of one page, in page coordinates."""

    page_id: str
    boxes: tuple[tuple[int, int, int, int], ...]


@dataclass(frozen=True)
class LabeledSample:
    vector: np.ndarray = field(repr=False)
    label: str
    level_k: int
    page_id: str | None
    cell: tuple[int, int]


def load_annotations(path: str | Path) -> dict[str, RoiAnnotation]:
    """Read JSON-lines annotations: one object per page with its boxes."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            boxes = tuple(tuple(int(v) for v in box) for box in obj["boxes"])
            out[obj["page_id"]] = RoiAnnotation(page_id=obj["page_id"], boxes=boxes)
    return out


def label_cells(
    grid: EmbeddingGrid, tile: Tile, boxes: tuple[tuple[int, int, int, int], ...]
) -> np.ndarray:
    """Class of every grid cell as an (R, R) array of CLASSES indices.

    A cell is black when its RF center falls outside the pasted page area of
    the canvas, non-text when the center (translated back to original page
    coordinates) lies inside any annotation box, text otherwise.
    """
    level = grid.level
    r = level.resolution
    s = level.stride
    centers = s * (np.arange(r) + 0.5)
    cx = centers[None, :] + tile.tile_offset[0]  # canvas-frame x per column
    cy = centers[:, None] + tile.tile_offset[1]

    if tile.crop_size is None:
        raise ValueError("tile is missing its pasted page extent (crop_size)")
    vx, vy = tile.canvas_offset
    cw, ch = tile.crop_size
    on_page = (cx >= vx) & (cx < vx + cw) & (cy >= vy) & (cy < vy + ch)

    labels = np.where(on_page, CLASSES.index(CLASS_TEXT), CLASSES.index(CLASS_BLACK))
    if boxes:
        px = cx - vx + tile.crop_offset[0]  # original page coordinates
        py = cy - vy + tile.crop_offset[1]
        in_any = np.zeros((r, r), bool)
        for x0, y0, w, h in boxes:
            in_any |= (px >= x0) & (px < x0 + w) & (py >= y0) & (py < y0 + h)
        labels = np.where(on_page & in_any, CLASSES.index(CLASS_NON_TEXT), labels)
    return labels.astype(np.int8)


def label_samples(
    grid: EmbeddingGrid, tile: Tile, annotations: RoiAnnotation
) -> list[LabeledSample]:
    """Labeled training samples for every cell of one grid."""
    labels = label_cells(grid, tile, annotations.boxes)
    r = grid.level.resolution
    samples = []
    for i in range(r):
        for j in range(r):
            samples.append(
                LabeledSample(
                    vector=grid.vectors[i, j],
                    label=CLASSES[labels[i, j]],
                    level_k=grid.level.k,
                    page_id=tile.page_id,
                    cell=(i, j),
                )
            )
    return samples


def split_sizes(n: int, proportions: tuple[float, ...]) -> list[int]:
    """Largest-remainder apportionment: each size is within 1 of n*p."""
    raw = [n * p for p in proportions]
    sizes = [int(np.floor(x)) for x in raw]
    remainder = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda s: raw[s] - sizes[s], reverse=True)
    for s in order[:remainder]:
        sizes[s] += 1
    return sizes


def split_dataset(
    samples,
    proportions: tuple[float, float, float] = (0.6, 0.25, 0.15),
    seed: int = 0,
    *,
    strict: bool = True,
):
    """Disjoint train/val/test split by sample-level shuffling.

    Raises EmptySplit (strict mode) when any split would receive zero
    samples, e.g. under degenerate proportions.
    """
    if abs(sum(proportions) - 1.0) > 1e-9:
        raise ValueError(f"proportions must sum to 1, got {proportions}")
    n = len(samples)
    sizes = split_sizes(n, proportions)
    if strict and min(sizes) == 0:
        raise EmptySplit(f"split sizes {sizes} for {n} samples, {proportions}")
    perm = np.random.default_rng(seed).permutation(n)
    bounds = np.cumsum([0] + sizes)
    parts = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        idx = perm[lo:hi]
        if isinstance(samples, np.ndarray):
            parts.append(samples[idx])
        else:
            parts.append([samples[i] for i in idx])
    return tuple(parts)


def samples_to_arrays(samples: list[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.vector for s in samples])
    y = np.array([s.label for s in samples])
    return x, y


def classification_metrics(y_true, y_pred) -> dict:
    """Per-class recall and overall accuracy."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("prediction/label length mismatch")
    recall = {}
    for cls in sorted(set(y_true.tolist())):
        mask = y_true == cls
        recall[cls] = float((y_pred[mask] == cls).mean())
    return {
        "accuracy": float((y_pred == y_true).mean()),
        "recall": recall,
    }


class NonTextClassifier(BaseEstimator, ClassifierMixin):
    """Per-level random forest over 256-D region embeddings.

    Thin sklearn-style estimator: fit/predict plus the level bookkeeping the
    retrieval pipeline needs. Prediction is the forest majority vote.
    """

    def __init__(
        self,
        level_k: int = 3,
        n_trees: int = 100,
        max_depth: int | None = None,
        max_features="sqrt",
        seed: int = 0,
    ):
        self.level_k = level_k
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.max_features = max_features
        self.seed = seed

    def fit(self, X, y):
        X = np.asarray(X)
        y = np.asarray(y)
        present = set(y.tolist())
        missing = [c for c in CLASSES if c not in present]
        if missing:
            raise MissingClass(f"training set lacks classes {missing}")
        self.forest_ = RandomForestClassifier(
            n_estimators=self.n_trees,
            max_depth=self.max_depth,
            max_features=self.max_features,
            random_state=self.seed,
            n_jobs=-1,
        )
        self.forest_.fit(X, y)
        return self

    def predict(self, X):
        self._check_fitted()
        return self.forest_.predict(np.asarray(X))

    def evaluate(self, X, y) -> dict:
        return classification_metrics(np.asarray(y), self.predict(X))

    def _check_fitted(self) -> None:
        if not hasattr(self, "forest_"):
            raise ModelLoadError("classifier is not fitted")


def train_forest(
    train: tuple[np.ndarray, np.ndarray],
    val: tuple[np.ndarray, np.ndarray],
    level_k: int,
    hyperparams: dict | None = None,
) -> tuple[NonTextClassifier, dict]:
    """Train the per-level filter and report validation metrics."""
    x_train, y_train = train
    if len(x_train) == 0:
        raise MissingClass("empty training set")
    model = NonTextClassifier(level_k=level_k, **(hyperparams or {}))
    model.fit(x_train, y_train)
    x_val, y_val = val
    metrics = model.evaluate(x_val, y_val) if len(x_val) else {}
    return model, metrics


def evaluate_forest(model, test: tuple[np.ndarray, np.ndarray]) -> dict:
    x, y = test
    if len(x) == 0:
        raise ValueError("empty test set")
    return classification_metrics(np.asarray(y), model.predict(x))


def filter_nontext(grid: EmbeddingGrid, model: NonTextClassifier) -> set[tuple[int, int]]:
    """Cells of a grid whose predicted class is non-text; only these are
    indexed."""
    if model.level_k != grid.level.k:
        raise LevelMismatch(
            f"model level P{model.level_k} applied to grid level P{grid.level.k}"
        )
    r = grid.level.resolution
    preds = model.predict(grid.vectors.reshape(r * r, -1))
    keep = np.flatnonzero(preds == CLASS_NON_TEXT)
    return {(int(f) // r, int(f) % r) for f in keep}


def dense_cells(grid: EmbeddingGrid) -> set[tuple[int, int]]:
    """Every cell of a grid: the filter-disabled (dense search) retained set."""
    r = grid.level.resolution
    return {(i, j) for i in range(r) for j in range(r)}


def save_model(model: NonTextClassifier, path: str | Path) -> None:
    """Persist as a self-describing binary: magic, version, level, payload."""
    model._check_fitted()
    payload = pickle.dumps(
        {"params": model.get_params(), "forest": model.forest_}, protocol=4
    )
    with open(path, "wb") as f:
        f.write(_MODEL_MAGIC)
        f.write(struct.pack("<IB", _MODEL_VERSION, model.level_k))
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)


def load_model(path: str | Path) -> NonTextClassifier:
    path = Path(path)
    if not path.is_file():
        raise ModelLoadError(f"model file not found: {path}")
    data = path.read_bytes()
    buf = io.BytesIO(data)
    if buf.read(4) != _MODEL_MAGIC:
        raise ModelLoadError(f"not a region-filter model file: {path}")
    version, level_k = struct.unpack("<IB", buf.read(5))
    if version != _MODEL_VERSION:
        raise VersionMismatch(f"model version {version}, expected {_MODEL_VERSION}")
    (length,) = struct.unpack("<Q", buf.read(8))
    payload = buf.read(length)
    if len(payload) != length:
        raise ModelLoadError(f"truncated model file: {path}")
    state = pickle.loads(payload)
    model = NonTextClassifier(**state["params"])
    model.forest_ = state["forest"]
    if model.level_k != level_k:
        raise ModelLoadError(f"inconsistent level metadata in {path}")
    return model
