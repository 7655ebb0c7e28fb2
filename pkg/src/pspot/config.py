"""TOML pipeline configuration.

One config file describes a full offline+online setup; every Table-2 style
configuration (dense vs filtered, black vs textured query canvas) is one
such file.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

from .embedder import ExtractorSpec, LEVELS
from .errors import ConfigError
from .imageproc import CanvasSpec, DEFAULT_CANVAS_SIZE

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class PipelineConfig:
    pages_dir: Path
    work_dir: Path
    annotations: Path | None = None
    ground_truth: Path | None = None
    canvas_size: int = DEFAULT_CANVAS_SIZE
    stop_ratio: float = 0.95
    extractor: ExtractorSpec = field(default_factory=ExtractorSpec)
    query_fill: str = "texture"
    texture_path: Path | None = None
    filter_enabled: bool = False
    filter_model_dir: Path | None = None
    filter_trees: int = 100
    filter_max_depth: int | None = None
    filter_seed: int = 0
    filter_max_samples: int | None = None
    split_proportions: tuple[float, float, float] = (0.6, 0.25, 0.15)
    measure: str = "dot"
    top_n: int = 1000
    nms_iou: float = 0.5
    max_inflight: int = 4
    ui_origin: str = "*"

    @property
    def index_dir(self) -> Path:
        return self.work_dir / "index"

    @property
    def manifest_path(self) -> Path:
        return self.work_dir / "manifest.json"

    @property
    def tiles_dir(self) -> Path:
        return self.work_dir / "tiles"

    @property
    def model_dir(self) -> Path:
        return self.filter_model_dir or (self.work_dir / "models")

    def page_canvas(self) -> CanvasSpec:
        return CanvasSpec(size=self.canvas_size, fill="black")

    def query_canvas(self) -> CanvasSpec:
        return CanvasSpec(
            size=self.canvas_size,
            fill=self.query_fill,
            texture_path=self.texture_path,
        )


def _get(table: dict, key: str, default):
    return table.get(key, default)


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a TOML config; referenced paths must exist."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML in {path}: {e}") from e

    base = path.parent

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    dataset = doc.get("dataset", {})
    if "pages_dir" not in dataset:
        raise ConfigError("config is missing dataset.pages_dir")
    pages_dir = resolve(dataset["pages_dir"])
    if not pages_dir.is_dir():
        raise ConfigError(f"dataset.pages_dir does not exist: {pages_dir}")

    annotations = dataset.get("annotations")
    if annotations is not None:
        annotations = resolve(annotations)
        if not annotations.is_file():
            raise ConfigError(f"dataset.annotations does not exist: {annotations}")
    ground_truth = dataset.get("ground_truth")
    if ground_truth is not None:
        ground_truth = resolve(ground_truth)
        if not ground_truth.is_file():
            raise ConfigError(f"dataset.ground_truth does not exist: {ground_truth}")

    canvas = doc.get("canvas", {})
    canvas_size = int(_get(canvas, "size", DEFAULT_CANVAS_SIZE))
    if canvas_size < max(2**k for k in LEVELS):
        raise ConfigError(
            f"canvas.size {canvas_size} is below the largest level stride"
        )
    stop_ratio = float(_get(canvas, "stop_ratio", 0.95))
    if not 0.0 < stop_ratio < 1.0:
        raise ConfigError(f"canvas.stop_ratio must be in (0, 1), got {stop_ratio}")

    ext = doc.get("extractor", {})
    kind = _get(ext, "kind", "reference")
    manifest_path = ext.get("manifest_path")
    model_path = ext.get("model_path")
    strides = tuple(_get(ext, "level_strides", [2**k for k in LEVELS]))
    if strides != tuple(2**k for k in LEVELS):
        raise ConfigError(f"unsupported extractor.level_strides {strides}")
    if manifest_path is not None:
        from .embedder import spec_from_manifest
        from .errors import ModelLoadError, ShapeMismatch

        try:
            extractor = spec_from_manifest(resolve(manifest_path))
        except (ModelLoadError, ShapeMismatch) as e:
            raise ConfigError(f"extractor.manifest_path: {e}") from e
    else:
        if kind == "onnx":
            if not model_path:
                raise ConfigError("extractor.kind = 'onnx' requires extractor.model_path")
            model_path = resolve(model_path)
            if not model_path.is_file():
                raise ConfigError(f"extractor.model_path does not exist: {model_path}")
        try:
            extractor = ExtractorSpec(
                kind=kind,
                model_path=model_path,
                seed=int(_get(ext, "reference_seed", 42)),
                input_size=canvas_size,
                mean=tuple(_get(ext, "mean", (0.0, 0.0, 0.0))),
                scale=tuple(_get(ext, "scale", (1.0, 1.0, 1.0))),
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e

    qc = doc.get("query_canvas", {})
    query_fill = _get(qc, "fill", "texture")
    if query_fill not in ("black", "texture"):
        raise ConfigError(f"query_canvas.fill must be black or texture, got {query_fill!r}")
    texture_path = qc.get("texture_path")
    if texture_path is not None:
        texture_path = resolve(texture_path)
        if not texture_path.is_file():
            raise ConfigError(f"query_canvas.texture_path does not exist: {texture_path}")

    flt = doc.get("filter", {})
    model_dir = flt.get("model_dir")
    if model_dir is not None:
        model_dir = resolve(model_dir)
    proportions = tuple(_get(flt, "split_proportions", (0.6, 0.25, 0.15)))
    if len(proportions) != 3 or abs(sum(proportions) - 1.0) > 1e-9:
        raise ConfigError(f"filter.split_proportions must be 3 values summing to 1")

    search = doc.get("search", {})
    measure = _get(search, "measure", "dot")
    if measure not in ("dot", "cosine"):
        raise ConfigError(f"search.measure must be dot or cosine, got {measure!r}")
    top_n = int(_get(search, "top_n", 1000))
    if top_n < 1:
        raise ConfigError(f"search.top_n must be >= 1, got {top_n}")

    spotting = doc.get("spotting", {})
    nms_iou = float(_get(spotting, "nms_iou", 0.5))
    if not 0.0 <= nms_iou <= 1.0:
        raise ConfigError(f"spotting.nms_iou must be in [0, 1], got {nms_iou}")

    output = doc.get("output", {})
    work_dir = resolve(_get(output, "work_dir", "work"))

    service = doc.get("service", {})

    return PipelineConfig(
        pages_dir=pages_dir,
        work_dir=work_dir,
        annotations=annotations,
        ground_truth=ground_truth,
        canvas_size=canvas_size,
        stop_ratio=stop_ratio,
        extractor=extractor,
        query_fill=query_fill,
        texture_path=texture_path,
        filter_enabled=bool(_get(flt, "enabled", False)),
        filter_model_dir=model_dir,
        filter_trees=int(_get(flt, "trees", 100)),
        filter_max_depth=flt.get("max_depth"),
        filter_seed=int(_get(flt, "seed", 0)),
        filter_max_samples=flt.get("max_samples_per_level"),
        split_proportions=proportions,
        measure=measure,
        top_n=top_n,
        nms_iou=nms_iou,
        max_inflight=int(_get(service, "max_inflight", 4)),
        ui_origin=_get(service, "ui_origin", "*"),
    )
