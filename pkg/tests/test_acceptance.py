"""Acceptance suite: one test per criterion, each ending with a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and timings.
"""

import math
import time

import numpy as np
import pytest

from pspot import regionfilter as rf
from pspot.collection import CollectionManifest
from pspot.embedder import PyramidLevel, ReferenceExtractor, assign_level, extract_pyramid, rf_center
from pspot.errors import ZeroRelevant
from pspot.evalkit import (
    GroundTruthEntry,
    QueryResult,
    average_precision,
    evaluate,
    iou,
    match_detections,
)
from pspot.imageproc import CanvasSpec, divide_page, place_on_canvas, preprocess_page
from pspot.index import RECORD_VECTOR_BYTES, build_index, load_shard, save_shard, search
from pspot.spotting import CoordinateChain, spot, translate_to_page, translate_to_tile
from synth import make_collection
from test_index import hits_as_tuples, oracle_search, shard_from


def _ok(name: str, elapsed: float | None = None) -> None:
    suffix = f" ({elapsed:.2f}s)" if elapsed is not None else ""
    print(f"\nACCEPTANCE PASS: {name}{suffix}")


# --- criterion 1: geometry suite -------------------------------------------------

def test_geometry_suite():
    started = time.perf_counter()

    # rf_center affine law, exact
    for k in (3, 4, 5):
        level = PyramidLevel(k)
        s = level.stride
        for i, j in [(0, 0), (1, 0), (0, 1), (5, 9), (20, 7)]:
            assert rf_center(level, i, j) == (s * (j + 0.5), s * (i + 0.5))

    # level assignment table
    assert assign_level(224, 224) == 4
    assert assign_level(448, 448) == 5
    assert assign_level(10, 20) == 3  # raw floor 0, clamped

    # tile coverage and exact shape for the three page sizes
    spec = CanvasSpec(size=1000)
    canvas, offset = place_on_canvas(np.zeros((800, 800, 3), np.uint8), spec)
    assert canvas.shape == (1000, 1000, 3) and offset == (100, 100)
    for w, h in [(1500, 900), (2500, 2500)]:
        tiles = divide_page(np.zeros((h, w, 3), np.uint8), spec)
        covered = np.zeros((max(h, 1000), max(w, 1000)), bool)
        for t in tiles:
            assert t.image.shape == (1000, 1000, 3)
            tx, ty = t.tile_offset
            covered[ty : ty + 1000, tx : tx + 1000] = True
        assert covered.all()

    # translation round-trip identity on 10,000 random chains
    rng = np.random.default_rng(2024)
    offs = rng.integers(0, 2000, size=(10_000, 6))
    points = rng.integers(0, 1000, size=(10_000, 2))
    for (cx, cy, vx, vy, tx, ty), (x, y) in zip(offs, points):
        chain = CoordinateChain(
            crop_offset=(int(cx), int(cy)),
            canvas_offset=(int(vx), int(vy)),
            tile_offset=(int(tx), int(ty)),
        )
        assert translate_to_tile(translate_to_page((int(x), int(y)), chain), chain) == (x, y)

    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"geometry suite took {elapsed:.2f}s, budget 1s"
    _ok("geometry suite", elapsed)


# --- criterion 2: search oracle ----------------------------------------------------

def test_search_oracle_100_random_shards():
    started = time.perf_counter()
    rng = np.random.default_rng(7)
    for trial in range(100):
        n = int(rng.integers(1, 10_001))
        # draw from a smaller pool of distinct vectors to force score ties
        pool = rng.normal(size=(max(n // 3, 1), 256)).astype(np.float32)
        vectors = pool[rng.integers(0, len(pool), n)]
        shard = shard_from(
            vectors,
            pages=rng.integers(0, 50, n),
            tiles=rng.integers(0, 16, n),
            cells=(rng.integers(0, 125, n), rng.integers(0, 125, n)),
        )
        q = rng.normal(size=256)
        top_k = int(rng.integers(1, n + 10))
        measure = "dot" if trial % 2 == 0 else "cosine"
        got = hits_as_tuples(search(shard, q, top_k, measure))
        assert got == oracle_search(shard, q, top_k, measure), f"trial {trial}"
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"search oracle took {elapsed:.2f}s, budget 30s"
    _ok("search oracle (100 shards, bit-exact incl. ties)", elapsed)


# --- criterion 3: eval oracle ------------------------------------------------------

def test_eval_oracle():
    assert abs(average_precision([True, False, True], 2) - 0.8333333333333333) <= 1e-12

    assert iou((0, 0, 10, 10), (5, 0, 10, 10)) == 1 / 3

    # strict boundary: IoU exactly 0.5 counts as a false positive
    a = (0.0, 0.0, 300.0, 100.0)
    b = (100.0, 0.0, 300.0, 100.0)
    assert iou(a, b) == 0.5
    assert match_detections([("p", a)], [("p", b)]) == [False]

    with pytest.raises(ZeroRelevant):
        average_precision([True], 0)

    # single-instance-per-page property on 1,000 random runs
    rng = np.random.default_rng(31)
    for _ in range(1000):
        n_pages = int(rng.integers(2, 9))
        instances = [
            (f"p{p}", (float(rng.integers(0, 200)), float(rng.integers(0, 200)), 20.0, 20.0))
            for p in range(int(rng.integers(1, n_pages + 1)))
        ]
        detections = [
            (
                f"p{rng.integers(0, n_pages)}",
                (float(rng.integers(0, 220)), float(rng.integers(0, 220)), 20.0, 20.0),
                float(rng.random()),
            )
            for _ in range(int(rng.integers(0, 12)))
        ]
        detections.sort(key=lambda d: -d[2])
        run = {"q": QueryResult("q", detections)}
        gt = [GroundTruthEntry("q", "c", tuple(instances))]
        row = evaluate(run, gt).per_query[0]
        assert row["ap_spotting"] <= row["ap_retrieval"] + 1e-12
    _ok("eval oracle (AP, IoU, strict 0.5 boundary, AP ordering on 1,000 runs)")


# --- criterion 4: synthetic end-to-end ----------------------------------------------

def _window_masks(centers_x, centers_y, boxes, half=16, margin=4):
    """non-text: cell window fully inside a box; text: fully outside all."""
    inside = np.zeros(centers_x.shape, bool)
    near = np.zeros(centers_x.shape, bool)
    for x0, y0, w, h in boxes:
        inside |= (
            (centers_x - half >= x0 + margin)
            & (centers_x + half <= x0 + w - margin)
            & (centers_y - half >= y0 + margin)
            & (centers_y + half <= y0 + h - margin)
        )
        near |= (
            (centers_x + half >= x0 - margin)
            & (centers_x - half <= x0 + w + margin)
            & (centers_y + half >= y0 - margin)
            & (centers_y - half <= y0 + h + margin)
        )
    return inside, ~near


def _true_positive_boxes(detections, planted):
    out = set()
    for d in detections:
        for box in planted.get(d.page_id, []):
            if iou(d.box, box) > 0.5:
                out.add((d.page_id, d.box))
    return out


def test_synthetic_end_to_end():
    started = time.perf_counter()
    collection = make_collection(n_pages=20, planted_counts=(1, 2, 3, 1, 2), seed=7)
    extractor = ReferenceExtractor(seed=42)
    page_canvas = CanvasSpec(size=1000, fill="black")
    query_canvas = CanvasSpec(size=1000, fill="texture")

    manifest = CollectionManifest.empty()
    tiles = []
    for page_id in sorted(collection.pages):
        page_tiles = preprocess_page(collection.pages[page_id], page_canvas, page_id=page_id)
        assert len(page_tiles) == 1
        tile = page_tiles[0]
        # pixel-exact planting requires the full-page crop these pages are built for
        assert tile.crop_offset == (0, 0) and tile.canvas_offset == (0, 0)
        info = manifest.add_page(page_id, 1000, 1000)
        geo = manifest.add_tile(info, tile)
        tiles.append((info, geo, tile))

    def dense_items():
        for info, geo, tile in tiles:
            grid = extract_pyramid(tile, extractor, tile_ref=geo.tile_ref)[3]
            yield grid, info.num, geo.tile_ref, rf.dense_cells(grid)

    dense_shards = build_index(dense_items())
    assert dense_shards[3].count == 20 * 125**2

    def run_query(shards):
        return spot(
            collection.query,
            shards,
            manifest,
            extractor,
            query_canvas,
            measure="cosine",
            top_n=1000,
        )

    detections, pages = run_query(dense_shards)
    planted = set(collection.planted_pages)

    # image retrieval: the five planted pages occupy the top five hits, AP 1.0
    assert {h.page_id for h in pages[:5]} == planted
    instances = tuple(
        (page_id, tuple(float(v) for v in box))
        for page_id, boxes in sorted(collection.planted.items())
        for box in boxes
    )
    gt = [GroundTruthEntry("q0", "ornament", instances)]
    run = {"q0": QueryResult("q0", [(d.page_id, d.box, d.score) for d in detections])}
    report = evaluate(run, gt)
    assert report.map_retrieval == 1.0

    # localization: the top-ranked detection of every planted page hits its box
    for page_id in planted:
        top = next(d for d in detections if d.page_id == page_id)
        best = max(iou(top.box, box) for box in collection.planted[page_id])
        assert best >= 0.5, f"{page_id}: top detection IoU {best:.3f}"

    # NonText filter trained on separable labels: window-containment classes
    # plus genuine black-canvas embeddings
    level = PyramidLevel(3)
    r = level.resolution
    centers = 8.0 * (np.arange(r) + 0.5)
    cx = np.broadcast_to(centers[None, :], (r, r))
    cy = np.broadcast_to(centers[:, None], (r, r))
    rng = np.random.default_rng(99)
    x_parts, y_parts = [], []
    for info, geo, tile in tiles[:7]:  # planted pages plus two noise pages
        grid = extract_pyramid(tile, extractor)[3].vectors.reshape(r * r, 256)
        boxes = collection.planted.get(info.page_id, [])
        inside, outside = _window_masks(cx, cy, boxes)
        nontext_idx = np.flatnonzero(inside.reshape(-1))
        text_idx = rng.choice(
            np.flatnonzero(outside.reshape(-1)), size=400, replace=False
        )
        x_parts += [grid[nontext_idx], grid[text_idx]]
        y_parts += [
            np.full(len(nontext_idx), rf.CLASS_NON_TEXT),
            np.full(len(text_idx), rf.CLASS_TEXT),
        ]
    black_grid = extractor.extract(np.zeros((1000, 1000, 3), np.uint8))[3].reshape(r * r, 256)
    black_idx = rng.choice(r * r, size=500, replace=False)
    x_parts.append(black_grid[black_idx])
    y_parts.append(np.full(500, rf.CLASS_BLACK))

    x = np.concatenate(x_parts).astype(np.float32)
    y = np.concatenate(y_parts)
    tr, va, te = rf.split_dataset(np.arange(len(x)), seed=3)
    model, _ = rf.train_forest(
        (x[tr], y[tr]), (x[va], y[va]), 3, {"n_trees": 100, "seed": 5}
    )
    held_out = rf.evaluate_forest(model, (x[te], y[te]))
    assert held_out["recall"][rf.CLASS_NON_TEXT] == 1.0

    def filtered_items():
        for info, geo, tile in tiles:
            grid = extract_pyramid(tile, extractor, tile_ref=geo.tile_ref)[3]
            yield grid, info.num, geo.tile_ref, rf.filter_nontext(grid, model)

    filtered_shards = build_index(filtered_items())
    assert 0 < filtered_shards[3].count < dense_shards[3].count

    filtered_detections, filtered_pages = run_query(filtered_shards)
    assert {h.page_id for h in filtered_pages[:5]} == planted
    assert _true_positive_boxes(filtered_detections, collection.planted) == (
        _true_positive_boxes(detections, collection.planted)
    )

    elapsed = time.perf_counter() - started
    assert elapsed < 120.0, f"end-to-end took {elapsed:.1f}s, budget 120s"
    _ok("synthetic end-to-end (dense + filtered, retrieval AP 1.0)", elapsed)


# --- criterion 5: filter metrics plumbing --------------------------------------------

def test_filter_metrics_plumbing():
    # hand-scored confusion matrix (rows = truth):
    #             pred black  text  non_text
    # black           7        1       2
    # text            0        9       1
    # non_text        2        0       8
    y_true = (
        [rf.CLASS_BLACK] * 10 + [rf.CLASS_TEXT] * 10 + [rf.CLASS_NON_TEXT] * 10
    )
    y_pred = (
        [rf.CLASS_BLACK] * 7 + [rf.CLASS_TEXT] + [rf.CLASS_NON_TEXT] * 2
        + [rf.CLASS_TEXT] * 9 + [rf.CLASS_NON_TEXT]
        + [rf.CLASS_BLACK] * 2 + [rf.CLASS_NON_TEXT] * 8
    )

    class FixedPredictor:
        def predict(self, x):
            return np.array(y_pred)

    metrics = rf.evaluate_forest(FixedPredictor(), (np.zeros((30, 256)), y_true))
    assert metrics["recall"][rf.CLASS_BLACK] == 7 / 10
    assert metrics["recall"][rf.CLASS_TEXT] == 9 / 10
    assert metrics["recall"][rf.CLASS_NON_TEXT] == 8 / 10
    assert metrics["accuracy"] == 24 / 30

    # linearly separable blobs give per-class recall 1.0
    rng = np.random.default_rng(17)
    centers = {
        rf.CLASS_BLACK: np.zeros(256),
        rf.CLASS_TEXT: np.full(256, 6.0),
        rf.CLASS_NON_TEXT: np.concatenate([np.full(128, -6.0), np.full(128, 6.0)]),
    }
    xs, ys = [], []
    for label, center in centers.items():
        xs.append(center + 0.4 * rng.normal(size=(150, 256)))
        ys += [label] * 150
    x = np.concatenate(xs)
    y = np.array(ys)
    tr, va, te = rf.split_dataset(np.arange(len(x)), seed=6)
    model, _ = rf.train_forest((x[tr], y[tr]), (x[va], y[va]), 4, {"n_trees": 40, "seed": 8})
    metrics = rf.evaluate_forest(model, (x[te], y[te]))
    assert all(v == 1.0 for v in metrics["recall"].values())
    _ok("filter metrics plumbing (hand confusion matrix exact, blobs recall 1.0)")


# --- criterion 6: index format --------------------------------------------------------

def test_index_format(tmp_path):
    rng = np.random.default_rng(13)
    shard = shard_from(
        rng.normal(size=(777, 256)).astype(np.float32),
        pages=rng.integers(0, 99, 777),
        tiles=rng.integers(0, 31, 777),
        cells=(rng.integers(0, 125, 777), rng.integers(0, 125, 777)),
        level_k=4,
    )
    path = tmp_path / "level4.pspx"
    save_shard(shard, path)
    loaded = load_shard(path)
    assert loaded.level_k == 4
    assert loaded.records.tobytes() == shard.records.tobytes()

    assert RECORD_VECTOR_BYTES == 1024
    baseline = 4096 * 4  # a 4096-D float32 descriptor
    assert baseline / RECORD_VECTOR_BYTES == 16.0
    _ok("index format (bit-exact round trip, 16x smaller vector payload)")
