"""HTTP face of the online stage, consumed by the browser UI.

Queries run synchronously under a concurrency cap; results are kept in a
bounded in-memory cache keyed by query id. The service never mutates the
index.
"""

from __future__ import annotations

import base64
import threading
import uuid
from collections import OrderedDict

import cv2
import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import Response
from pydantic import BaseModel

from .errors import DimensionExceeded, UnknownPageId
from .pipeline import Engine

RESULT_CACHE_SIZE = 256


class QueryRequest(BaseModel):
    page_id: str | None = None
    rect: list[int] | None = None  # (x0, y0, w, h) in original page pixels
    image_b64: str | None = None


class _ResultCache:
    def __init__(self, capacity: int):
        self._capacity = capacity
        self._items: OrderedDict[str, dict] = OrderedDict()
        self._lock = threading.Lock()

    def put(self, key: str, value: dict) -> None:
        with self._lock:
            self._items[key] = value
            self._items.move_to_end(key)
            while len(self._items) > self._capacity:
                self._items.popitem(last=False)

    def get(self, key: str) -> dict | None:
        with self._lock:
            return self._items.get(key)


def _decode_upload(b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
        buf = np.frombuffer(raw, np.uint8)
        img = cv2.imdecode(buf, cv2.IMREAD_COLOR)
    except Exception:
        img = None
    if img is None:
        raise HTTPException(status_code=400, detail="cannot decode uploaded image")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def create_app(engine: Engine | None) -> FastAPI:
    app = FastAPI(title="pspot", version="0.1.0")
    origin = engine.config.ui_origin if engine else "*"
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[origin] if origin != "*" else ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    cache = _ResultCache(RESULT_CACHE_SIZE)
    inflight = threading.Semaphore(engine.config.max_inflight if engine else 1)

    def require_engine() -> Engine:
        if engine is None:
            raise HTTPException(status_code=503, detail="index not loaded")
        return engine

    @app.get("/pages")
    def pages() -> dict:
        eng = require_engine()
        return {
            "pages": [
                {"page_id": p.page_id, "width": p.width, "height": p.height}
                for p in eng.manifest.pages
            ]
        }

    @app.get("/pages/{page_id}/image")
    def page_image(page_id: str) -> Response:
        eng = require_engine()
        try:
            image = eng.page_image(page_id)
        except (UnknownPageId, FileNotFoundError):
            raise HTTPException(status_code=404, detail=f"unknown page {page_id!r}")
        ok, png = cv2.imencode(".png", cv2.cvtColor(image, cv2.COLOR_RGB2BGR))
        if not ok:
            raise HTTPException(status_code=500, detail="cannot encode page image")
        return Response(content=png.tobytes(), media_type="image/png")

    def crop_query(eng: Engine, req: QueryRequest) -> np.ndarray:
        if req.image_b64 is not None:
            return _decode_upload(req.image_b64)
        if req.page_id is None or req.rect is None:
            raise HTTPException(
                status_code=400, detail="request needs page_id+rect or image_b64"
            )
        try:
            page = eng.page_image(req.page_id)
        except (UnknownPageId, FileNotFoundError):
            raise HTTPException(status_code=404, detail=f"unknown page {req.page_id!r}")
        if len(req.rect) != 4:
            raise HTTPException(status_code=400, detail="rect must be [x0, y0, w, h]")
        x0, y0, w, h = (int(v) for v in req.rect)
        ph, pw = page.shape[:2]
        if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > pw or y0 + h > ph:
            raise HTTPException(status_code=400, detail=f"rect {req.rect} outside page")
        return page[y0 : y0 + h, x0 : x0 + w]

    @app.post("/queries")
    def submit_query(req: QueryRequest) -> dict:
        eng = require_engine()
        query = crop_query(eng, req)
        query_id = uuid.uuid4().hex
        with inflight:
            try:
                detections, pages_ranked = eng.spot(query, query_id=query_id)
            except DimensionExceeded as e:
                raise HTTPException(status_code=400, detail=str(e))
        result = {
            "query_id": query_id,
            "detections": [
                {
                    "page_id": d.page_id,
                    "box": list(d.box),
                    "score": d.score,
                    "rank": d.rank,
                }
                for d in detections
            ],
            "pages": [
                {"page_id": h.page_id, "score": h.score} for h in pages_ranked
            ],
        }
        cache.put(query_id, result)
        return result

    @app.get("/queries/{query_id}")
    def cached_query(query_id: str) -> dict:
        require_engine()
        result = cache.get(query_id)
        if result is None:
            raise HTTPException(status_code=404, detail="unknown or expired query id")
        return result

    return app
