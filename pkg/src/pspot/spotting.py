"""Online query pipeline: embed, search one level, localize, postprocess.

A query is searched only at its assigned pyramid level. Hits come back as
grid cells of tiles; their RF centers are translated through the recorded
crop/canvas/tile offsets to original page coordinates, a query-sized box is
centered on each, and boxes that stick out of the page are discarded before
per-page non-maximum suppression.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import index as index_mod
from .collection import CollectionManifest
from .embedder import PyramidLevel, query_embedding, rf_center
from .errors import LevelMismatch
from .evalkit import iou
from .imageproc import CanvasSpec, prepare_query

Box = tuple[int, int, int, int]

DEFAULT_RESULT_LEN = 1000
# Raw candidate pool is oversized so containment and NMS removals do not
# starve the final list.
CANDIDATE_FACTOR = 5


@dataclass(frozen=True)
class CoordinateChain:
    """Offsets accumulated by crop, canvas centering and tiling."""

    crop_offset: tuple[int, int]
    canvas_offset: tuple[int, int]
    tile_offset: tuple[int, int]


@dataclass
class Detection:
    page_id: str
    box: Box  # (x0, y0, w, h) in original page pixels
    score: float
    rank: int = 0


@dataclass(frozen=True)
class PageHit:
    page_id: str
    score: float


def translate_to_page(
    point: tuple[float, float], chain: CoordinateChain
) -> tuple[float, float]:
    """Tile-frame point to original-page coordinates."""
    x, y = point
    tx, ty = chain.tile_offset
    vx, vy = chain.canvas_offset
    cx, cy = chain.crop_offset
    return (x + tx - vx + cx, y + ty - vy + cy)


def translate_to_tile(
    point: tuple[float, float], chain: CoordinateChain
) -> tuple[float, float]:
    """Inverse of translate_to_page."""
    x, y = point
    tx, ty = chain.tile_offset
    vx, vy = chain.canvas_offset
    cx, cy = chain.crop_offset
    return (x - tx + vx - cx, y - ty + vy - cy)


def localize(center: tuple[float, float], qw: int, qh: int) -> Box:
    """Query-sized box centered on a found RF center."""
    if qw < 1 or qh < 1:
        raise ValueError(f"query dims must be >= 1, got {qw}x{qh}")
    x, y = center
    return (int(x) - qw // 2, int(y) - qh // 2, qw, qh)


def _inside_page(box: Box, page_w: int, page_h: int) -> bool:
    x0, y0, w, h = box
    return x0 >= 0 and y0 >= 0 and x0 + w <= page_w and y0 + h <= page_h


def postprocess(
    detections: list[Detection],
    page_dims: dict[str, tuple[int, int]],
    nms_iou: float = 0.5,
) -> list[Detection]:
    """Containment filter then greedy per-page NMS.

    Boxes not entirely contained in their page are dropped; then, in
    descending score order, any box overlapping an already kept box of the
    same page with IoU above the threshold is suppressed. Ranks are
    reassigned on the surviving list.
    """
    contained = []
    for det in detections:
        w, h = page_dims[det.page_id]
        if _inside_page(det.box, w, h):
            contained.append(det)

    order = sorted(range(len(contained)), key=lambda n: -contained[n].score)
    kept_by_page: dict[str, list[Box]] = {}
    kept_order = []
    for n in order:
        det = contained[n]
        kept = kept_by_page.setdefault(det.page_id, [])
        if any(iou(det.box, other) > nms_iou for other in kept):
            continue
        kept.append(det.box)
        kept_order.append(n)

    survivors = [contained[n] for n in sorted(kept_order)]
    survivors.sort(key=lambda d: -d.score)
    for rank, det in enumerate(survivors, start=1):
        det.rank = rank
    return survivors


def page_ranking(detections: list[Detection]) -> list[PageHit]:
    """One hit per page, scored by its best detection, sorted descending."""
    best: dict[str, float] = {}
    for det in detections:
        if det.page_id not in best or det.score > best[det.page_id]:
            best[det.page_id] = det.score
    hits = [PageHit(page_id=p, score=s) for p, s in best.items()]
    hits.sort(key=lambda h: (-h.score, h.page_id))
    return hits


def spot(
    query: np.ndarray,
    shards: dict[int, index_mod.IndexShard],
    manifest: CollectionManifest,
    extractor,
    query_canvas: CanvasSpec,
    *,
    measure: str = "dot",
    top_n: int = DEFAULT_RESULT_LEN,
    nms_iou: float = 0.5,
    query_id: str | None = None,
) -> tuple[list[Detection], list[PageHit]]:
    """Run one query image against the index.

    Returns up to ``top_n`` localized detections plus the per-page ranking
    derived from them.
    """
    qh, qw = query.shape[:2]
    tile = prepare_query(query, query_canvas)
    emb = query_embedding(tile, extractor, qw, qh, query_id=query_id)
    if emb.level_k not in shards:
        raise LevelMismatch(
            f"index has no shard for the query's level P{emb.level_k}"
        )
    shard = shards[emb.level_k]
    hits = index_mod.search(shard, emb.vector, CANDIDATE_FACTOR * top_n, measure)

    level = PyramidLevel(emb.level_k, query_canvas.size)
    page_dims = manifest.page_dims()
    detections = []
    for hit in hits:
        geo = manifest.tile(hit.tile)
        chain = CoordinateChain(
            crop_offset=geo.crop_offset,
            canvas_offset=geo.canvas_offset,
            tile_offset=geo.tile_offset,
        )
        center = translate_to_page(rf_center(level, hit.i, hit.j), chain)
        page = manifest.page_by_num(hit.page)
        detections.append(
            Detection(
                page_id=page.page_id,
                box=localize(center, qw, qh),
                score=hit.score,
            )
        )

    detections = postprocess(detections, page_dims, nms_iou)[:top_n]
    for rank, det in enumerate(detections, start=1):
        det.rank = rank
    return detections, page_ranking(detections)
