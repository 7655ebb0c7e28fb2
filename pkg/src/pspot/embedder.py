"""Multiscale region embeddings and receptive-field geometry.

Tiles are embedded as a three-level feature pyramid (strides 8/16/32, 256
channels); queries get a single embedding taken from the center cell of their
assigned level. Two extractor backends share the same contract: a serialized
ONNX trunk, and a built-in deterministic reference extractor used as a test
oracle and for synthetic collections.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import IndexOutOfRange, ModelLoadError, ShapeMismatch
from .imageproc import Tile

LEVELS = (3, 4, 5)
CHANNELS = 256
DEFAULT_INPUT_SIZE = 1000
LEVEL_ANCHOR = 4  # k0 of the level-assignment rule
LEVEL_ANCHOR_SIDE = 224.0


@dataclass(frozen=True)
class PyramidLevel:
    """Geometry of one pyramid level for a fixed input size."""

    k: int
    input_size: int = DEFAULT_INPUT_SIZE

    def __post_init__(self) -> None:
        if self.k not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}, got {self.k}")

    @property
    def stride(self) -> int:
        return 2**self.k

    @property
    def resolution(self) -> int:
        return math.ceil(self.input_size / self.stride)

    @property
    def channels(self) -> int:
        return CHANNELS


@dataclass(frozen=True)
class EmbeddingGrid:
    """Per-cell embeddings of one tile at one pyramid level."""

    level: PyramidLevel
    vectors: np.ndarray = field(repr=False)  # (R, R, 256)
    tile_ref: int | None = None

    def __post_init__(self) -> None:
        r = self.level.resolution
        if self.vectors.shape != (r, r, CHANNELS):
            raise ShapeMismatch(
                f"grid shape {self.vectors.shape} does not match level "
                f"P{self.level.k} resolution {r}"
            )


@dataclass(frozen=True)
class QueryEmbedding:
    level_k: int
    vector: np.ndarray = field(repr=False)
    query_w: int = 0
    query_h: int = 0
    query_id: str | None = None


@dataclass(frozen=True)
class ExtractorSpec:
    """Which embedding backend to use and how to feed it."""

    kind: str = "reference"  # "reference" | "onnx"
    model_path: str | Path | None = None
    seed: int = 42
    input_size: int = DEFAULT_INPUT_SIZE
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        if self.kind not in ("reference", "onnx"):
            raise ValueError(f"unknown extractor kind {self.kind!r}")
        if self.kind == "onnx" and self.model_path is None:
            raise ModelLoadError("onnx extractor requires a model path")


def rf_center(level: PyramidLevel, i: int, j: int) -> tuple[float, float]:
    """Receptive-field center of cell (row i, col j) in the tile frame.

    Neighboring centers are exactly one stride apart on each axis.
    """
    r = level.resolution
    if not (0 <= i < r and 0 <= j < r):
        raise IndexOutOfRange(f"cell ({i}, {j}) outside P{level.k} grid of {r}")
    s = level.stride
    return (s * (j + 0.5), s * (i + 0.5))


def assign_level(w: int, h: int, k0: int = LEVEL_ANCHOR) -> int:
    """Pyramid level a w x h query is searched at, clamped to the available
    levels."""
    if w < 1 or h < 1:
        raise ValueError(f"query dims must be >= 1, got {w}x{h}")
    k = math.floor(k0 + math.log2(math.sqrt(w * h) / LEVEL_ANCHOR_SIDE))
    return min(max(k, LEVELS[0]), LEVELS[-1])


def _splitmix64(indices: np.ndarray, seed: int) -> np.ndarray:
    """SplitMix64 counter-based stream: uniform doubles in [-1, 1] for the
    given stream indices. Bit-exact for a fixed seed."""
    with np.errstate(over="ignore"):
        z = (np.uint64(seed) + indices.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15))
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    u = (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    return 2.0 * u - 1.0


def _projection_matrix(seed: int) -> np.ndarray:
    """Fixed 256x64 projection; entry (r, c) comes from stream index r*64+c."""
    idx = np.arange(CHANNELS * 64, dtype=np.uint64)
    return _splitmix64(idx, seed).reshape(CHANNELS, 64)


def _pooling_weights(level: PyramidLevel) -> sparse.csr_matrix:
    """Area-averaging weights mapping image rows/cols to the 8 bins of every
    cell window along one axis.

    The window of cell t spans 4 strides centered on its RF center, clamped
    to the tile; each of its 8 bins averages the pixels it overlaps. Row
    t*8+b of the returned matrix holds the weights of bin b of cell t.
    """
    size = level.input_size
    s = level.stride
    r = level.resolution
    rows, cols, vals = [], [], []
    for t in range(r):
        lo = min(max(s * (t - 1.5), 0.0), float(size))
        hi = min(max(s * (t + 2.5), 0.0), float(size))
        bin_w = (hi - lo) / 8.0
        for b in range(8):
            b_lo = lo + b * bin_w
            b_hi = lo + (b + 1) * bin_w
            first = int(math.floor(b_lo))
            last = min(int(math.ceil(b_hi)), size)
            for c in range(first, last):
                overlap = min(c + 1.0, b_hi) - max(float(c), b_lo)
                if overlap <= 0.0:
                    continue
                rows.append(t * 8 + b)
                cols.append(c)
                vals.append(overlap / bin_w)
    return sparse.csr_matrix(
        (np.array(vals), (rows, cols)), shape=(r * 8, size), dtype=np.float64
    )


class ReferenceExtractor:
    """Deterministic stand-in for the pretrained trunk.

    Each cell's embedding is a fixed random projection of its grayscale
    window (side 4*stride, clamped to the tile) downsampled to 8x8 by area
    averaging. The map from window pixels to vector is linear, and content
    shifted by exactly one stride shifts the grid by one cell.
    """

    def __init__(self, seed: int = 42, input_size: int = DEFAULT_INPUT_SIZE):
        self.seed = seed
        self.input_size = input_size
        self._matrix = _projection_matrix(seed)
        self._levels = {k: PyramidLevel(k, input_size) for k in LEVELS}
        self._weights = {k: _pooling_weights(lv) for k, lv in self._levels.items()}

    def extract(self, image: np.ndarray) -> dict[int, np.ndarray]:
        if image.shape[:2] != (self.input_size, self.input_size):
            raise ShapeMismatch(
                f"extractor requires {self.input_size}x{self.input_size} tiles, "
                f"got {image.shape[1]}x{image.shape[0]}"
            )
        gray = image.astype(np.float64).mean(axis=2) / 255.0
        out = {}
        for k, level in self._levels.items():
            w = self._weights[k]
            pooled_rows = w @ gray  # (R*8, size)
            pooled = (w @ pooled_rows.T).T  # (R*8, R*8), [i*8+u, j*8+v]
            r = level.resolution
            windows = pooled.reshape(r, 8, r, 8).transpose(0, 2, 1, 3).reshape(r, r, 64)
            out[k] = windows @ self._matrix.T
        return out


class OnnxExtractor:
    """Feature-pyramid trunk loaded from an ONNX file.

    The graph must accept a 1x3xSxS input and emit one 256-channel map per
    declared stride; anything else fails fast as a shape mismatch.
    """

    def __init__(self, spec: ExtractorSpec):
        try:
            import onnxruntime as ort
        except ImportError as e:
            raise ModelLoadError(
                "onnxruntime is required for serialized models "
                "(install pspot[onnx])"
            ) from e
        path = Path(spec.model_path)
        if not path.is_file():
            raise ModelLoadError(f"model file not found: {path}")
        try:
            self._session = ort.InferenceSession(
                str(path), providers=["CPUExecutionProvider"]
            )
        except Exception as e:
            raise ModelLoadError(f"cannot load model {path}: {e}") from e
        self.input_size = spec.input_size
        self._mean = np.array(spec.mean, np.float32).reshape(3, 1, 1)
        self._scale = np.array(spec.scale, np.float32).reshape(3, 1, 1)
        self._input_name = self._session.get_inputs()[0].name
        self._levels = {k: PyramidLevel(k, spec.input_size) for k in LEVELS}

    def extract(self, image: np.ndarray) -> dict[int, np.ndarray]:
        if image.shape[:2] != (self.input_size, self.input_size):
            raise ShapeMismatch(
                f"extractor requires {self.input_size}x{self.input_size} tiles, "
                f"got {image.shape[1]}x{image.shape[0]}"
            )
        x = image.astype(np.float32).transpose(2, 0, 1)[None]
        x = (x - self._mean) / self._scale
        outputs = self._session.run(None, {self._input_name: x})
        if len(outputs) != len(LEVELS):
            raise ShapeMismatch(
                f"model emitted {len(outputs)} maps, expected {len(LEVELS)}"
            )
        out = {}
        for k, raw in zip(LEVELS, outputs):
            r = self._levels[k].resolution
            if raw.shape != (1, CHANNELS, r, r):
                raise ShapeMismatch(
                    f"P{k} output shape {raw.shape}, expected (1, {CHANNELS}, {r}, {r})"
                )
            out[k] = raw[0].transpose(1, 2, 0).astype(np.float64)
        return out


def make_extractor(spec: ExtractorSpec):
    if spec.kind == "reference":
        return ReferenceExtractor(spec.seed, spec.input_size)
    return OnnxExtractor(spec)


def spec_from_manifest(manifest_path: str | Path) -> ExtractorSpec:
    """ExtractorSpec for an exported trunk described by its manifest.

    The manifest pins input size, normalization, per-level strides and the
    model file checksum; a model file that does not match its recorded
    checksum is rejected.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ModelLoadError(f"manifest not found: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ModelLoadError(f"invalid manifest {manifest_path}: {e}") from e

    model_path = manifest_path.parent / doc["model"]
    if not model_path.is_file():
        raise ModelLoadError(f"model file not found: {model_path}")
    digest = hashlib.sha256(model_path.read_bytes()).hexdigest()
    if digest != doc.get("sha256"):
        raise ModelLoadError(
            f"model checksum mismatch for {model_path}: "
            f"manifest {doc.get('sha256')}, file {digest}"
        )
    strides = tuple(out["stride"] for out in doc["outputs"])
    if strides != tuple(2**k for k in LEVELS):
        raise ShapeMismatch(f"manifest declares strides {strides}")
    if any(out.get("channels", CHANNELS) != CHANNELS for out in doc["outputs"]):
        raise ShapeMismatch("manifest declares a non-256-channel output")
    return ExtractorSpec(
        kind="onnx",
        model_path=model_path,
        input_size=int(doc.get("input_size", DEFAULT_INPUT_SIZE)),
        mean=tuple(doc.get("mean", (0.0, 0.0, 0.0))),
        scale=tuple(doc.get("scale", (1.0, 1.0, 1.0))),
    )


def extract_pyramid(
    tile: Tile, extractor, *, tile_ref: int | None = None
) -> dict[int, EmbeddingGrid]:
    """Embed one tile at every pyramid level."""
    raw = extractor.extract(tile.image)
    size = tile.image.shape[0]
    return {
        k: EmbeddingGrid(PyramidLevel(k, size), vectors, tile_ref=tile_ref)
        for k, vectors in raw.items()
    }


def query_embedding(
    query_tile: Tile,
    extractor,
    w: int,
    h: int,
    *,
    query_id: str | None = None,
) -> QueryEmbedding:
    """Embedding of a prepared query: the center cell of its assigned level."""
    k = assign_level(w, h)
    grids = extract_pyramid(query_tile, extractor)
    grid = grids[k]
    c = grid.level.resolution // 2
    return QueryEmbedding(
        level_k=k,
        vector=np.ascontiguousarray(grid.vectors[c, c]),
        query_w=w,
        query_h=h,
        query_id=query_id,
    )
