"""Offline and online workflows assembled from the core modules.

The offline entry points walk the page collection deterministically
(sorted file order), so rebuilding an index from identical inputs yields
byte-identical artifacts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import index as index_mod
from . import regionfilter, spotting
from .collection import CollectionManifest
from .config import PipelineConfig
from .embedder import LEVELS, extract_pyramid, make_extractor
from .errors import ModelLoadError
from .imageproc import Tile, preprocess_page

PAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def read_image(path: str | Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise FileNotFoundError(f"cannot read image: {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_image(path: str | Path, image: np.ndarray) -> None:
    cv2.imwrite(str(path), cv2.cvtColor(image, cv2.COLOR_RGB2BGR))


def list_pages(pages_dir: Path) -> list[Path]:
    pages = [
        p
        for p in sorted(pages_dir.iterdir())
        if p.suffix.lower() in PAGE_EXTENSIONS and p.is_file()
    ]
    if not pages:
        raise FileNotFoundError(f"no page images found in {pages_dir}")
    return pages


def iter_page_tiles(config: PipelineConfig):
    """Preprocess every page; yields (PageInfo, Tile) and fills a manifest."""
    manifest = CollectionManifest.empty()
    pairs = []
    for path in list_pages(config.pages_dir):
        image = read_image(path)
        page_id = path.stem
        info = manifest.add_page(
            page_id, image.shape[1], image.shape[0], path=path.name
        )
        tiles = preprocess_page(
            image, config.page_canvas(), stop_ratio=config.stop_ratio, page_id=page_id
        )
        for tile in tiles:
            geo = manifest.add_tile(info, tile)
            pairs.append((info, geo, tile))
    return manifest, pairs


def run_preprocess(config: PipelineConfig) -> CollectionManifest:
    """Write tiles and the geometry manifest into the work directory."""
    manifest, pairs = iter_page_tiles(config)
    config.tiles_dir.mkdir(parents=True, exist_ok=True)
    for _info, geo, tile in pairs:
        write_image(config.tiles_dir / f"tile{geo.tile_ref:05d}.png", tile.image)
    config.work_dir.mkdir(parents=True, exist_ok=True)
    manifest.save(config.manifest_path)
    return manifest


def _load_filters(config: PipelineConfig) -> dict[int, regionfilter.NonTextClassifier]:
    models = {}
    for k in LEVELS:
        path = config.model_dir / f"nontext_p{k}.pspf"
        if not path.is_file():
            raise ModelLoadError(
                f"filter enabled but model missing: {path}; run 'filter train'"
            )
        models[k] = regionfilter.load_model(path)
    return models


def run_index_build(config: PipelineConfig) -> dict[int, index_mod.IndexShard]:
    """Extract embeddings for every tile, apply the region filter when
    enabled, and persist the per-level shards plus the manifest."""
    extractor = make_extractor(config.extractor)
    models = _load_filters(config) if config.filter_enabled else None

    manifest, pairs = iter_page_tiles(config)

    def items():
        for info, geo, tile in pairs:
            grids = extract_pyramid(tile, extractor, tile_ref=geo.tile_ref)
            for k, grid in grids.items():
                if models is None:
                    retained = regionfilter.dense_cells(grid)
                else:
                    retained = regionfilter.filter_nontext(grid, models[k])
                yield grid, info.num, geo.tile_ref, retained

    shards = index_mod.build_index(items())
    for k in LEVELS:
        shards.setdefault(k, index_mod.empty_shard(k))
    config.work_dir.mkdir(parents=True, exist_ok=True)
    index_mod.save_index(shards, config.index_dir)
    manifest.save(config.manifest_path)
    return shards


def run_filter_train(config: PipelineConfig) -> dict:
    """Train one NonText classifier per level from annotated pages."""
    if config.annotations is None:
        raise ModelLoadError("filter training requires dataset.annotations")
    annotations = regionfilter.load_annotations(config.annotations)
    extractor = make_extractor(config.extractor)

    manifest, pairs = iter_page_tiles(config)
    xs: dict[int, list[np.ndarray]] = {k: [] for k in LEVELS}
    ys: dict[int, list[np.ndarray]] = {k: [] for k in LEVELS}
    for info, geo, tile in pairs:
        if info.page_id not in annotations:
            continue
        boxes = annotations[info.page_id].boxes
        grids = extract_pyramid(tile, extractor, tile_ref=geo.tile_ref)
        for k, grid in grids.items():
            labels = regionfilter.label_cells(grid, tile, boxes)
            r = grid.level.resolution
            xs[k].append(grid.vectors.reshape(r * r, -1))
            ys[k].append(labels.reshape(r * r))

    config.model_dir.mkdir(parents=True, exist_ok=True)
    summary = {}
    for k in LEVELS:
        if not xs[k]:
            raise ModelLoadError("no annotated pages found in the collection")
        x = np.concatenate(xs[k]).astype(np.float32)
        y = np.array(regionfilter.CLASSES)[np.concatenate(ys[k])]
        if config.filter_max_samples and len(x) > config.filter_max_samples:
            keep = np.random.default_rng(config.filter_seed).choice(
                len(x), config.filter_max_samples, replace=False
            )
            keep.sort()
            x, y = x[keep], y[keep]
        tr, va, te = regionfilter.split_dataset(
            np.arange(len(x)), config.split_proportions, config.filter_seed
        )
        x_tr, y_tr = x[tr], y[tr]
        x_va, y_va = x[va], y[va]
        x_te, y_te = x[te], y[te]
        model, val_metrics = regionfilter.train_forest(
            (x_tr, y_tr),
            (x_va, y_va),
            k,
            {
                "n_trees": config.filter_trees,
                "max_depth": config.filter_max_depth,
                "seed": config.filter_seed,
            },
        )
        test_metrics = regionfilter.evaluate_forest(model, (x_te, y_te))
        regionfilter.save_model(model, config.model_dir / f"nontext_p{k}.pspf")
        summary[f"P{k}"] = {"validation": val_metrics, "test": test_metrics}
    (config.model_dir / "metrics.json").write_text(json.dumps(summary, indent=1))
    return summary


def run_filter_apply(config: PipelineConfig) -> dict:
    """Apply trained filters to the whole collection; report retention."""
    models = _load_filters(config)
    extractor = make_extractor(config.extractor)
    _manifest, pairs = iter_page_tiles(config)
    stats = {f"P{k}": {"total": 0, "retained": 0} for k in LEVELS}
    for _info, geo, tile in pairs:
        grids = extract_pyramid(tile, extractor, tile_ref=geo.tile_ref)
        for k, grid in grids.items():
            retained = regionfilter.filter_nontext(grid, models[k])
            stats[f"P{k}"]["total"] += grid.level.resolution**2
            stats[f"P{k}"]["retained"] += len(retained)
    return stats


@dataclass
class Engine:
    """Loaded online stage: immutable index, manifest and extractor."""

    config: PipelineConfig
    shards: dict[int, index_mod.IndexShard]
    manifest: CollectionManifest
    extractor: object = field(repr=False)

    @classmethod
    def load(cls, config: PipelineConfig) -> "Engine":
        shards = index_mod.load_index(config.index_dir)
        manifest = CollectionManifest.load(config.manifest_path)
        extractor = make_extractor(config.extractor)
        return cls(config=config, shards=shards, manifest=manifest, extractor=extractor)

    def spot(
        self, query: np.ndarray, query_id: str | None = None
    ) -> tuple[list[spotting.Detection], list[spotting.PageHit]]:
        return spotting.spot(
            query,
            self.shards,
            self.manifest,
            self.extractor,
            self.config.query_canvas(),
            measure=self.config.measure,
            top_n=self.config.top_n,
            nms_iou=self.config.nms_iou,
            query_id=query_id,
        )

    def page_image(self, page_id: str) -> np.ndarray:
        info = self.manifest.page(page_id)
        if info.path is None:
            raise FileNotFoundError(f"page {page_id} has no stored image path")
        return read_image(self.config.pages_dir / info.path)
