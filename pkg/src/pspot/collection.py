"""Persisted geometry of an indexed collection.

The offline stage records, for every page and every emitted tile, the
offsets needed to translate grid cells back to original page coordinates;
the online stage reads them back when localizing hits.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import UnknownPageId
from .imageproc import Tile

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class PageInfo:
    page_id: str
    num: int  # numeric id used inside index shards
    width: int
    height: int
    path: str | None = None  # image file, relative to the pages directory


@dataclass(frozen=True)
class TileGeometry:
    tile_ref: int
    page_num: int
    tile_offset: tuple[int, int]
    canvas_offset: tuple[int, int]
    crop_offset: tuple[int, int]
    crop_size: tuple[int, int]


class CollectionManifest:
    """Page table plus per-tile coordinate chains."""

    def __init__(self, pages: list[PageInfo], tiles: list[TileGeometry]):
        self.pages = list(pages)
        self.tiles = list(tiles)
        self._by_num = {p.num: p for p in self.pages}
        self._by_id = {p.page_id: p for p in self.pages}
        self._tile_by_ref = {t.tile_ref: t for t in self.tiles}

    def page_by_num(self, num: int) -> PageInfo:
        try:
            return self._by_num[num]
        except KeyError:
            raise UnknownPageId(f"no page with numeric id {num}") from None

    def page(self, page_id: str) -> PageInfo:
        try:
            return self._by_id[page_id]
        except KeyError:
            raise UnknownPageId(f"unknown page {page_id!r}") from None

    def has_page(self, page_id: str) -> bool:
        return page_id in self._by_id

    def tile(self, tile_ref: int) -> TileGeometry:
        return self._tile_by_ref[tile_ref]

    def page_dims(self) -> dict[str, tuple[int, int]]:
        return {p.page_id: (p.width, p.height) for p in self.pages}

    def add_page(self, page_id: str, width: int, height: int, path: str | None = None) -> PageInfo:
        info = PageInfo(page_id=page_id, num=len(self.pages), width=width, height=height, path=path)
        self.pages.append(info)
        self._by_num[info.num] = info
        self._by_id[info.page_id] = info
        return info

    def add_tile(self, page: PageInfo, tile: Tile) -> TileGeometry:
        geo = TileGeometry(
            tile_ref=len(self.tiles),
            page_num=page.num,
            tile_offset=tuple(tile.tile_offset),
            canvas_offset=tuple(tile.canvas_offset),
            crop_offset=tuple(tile.crop_offset),
            crop_size=tuple(tile.crop_size),
        )
        self.tiles.append(geo)
        self._tile_by_ref[geo.tile_ref] = geo
        return geo

    def save(self, path: str | Path) -> None:
        doc = {
            "version": MANIFEST_VERSION,
            "pages": [asdict(p) for p in self.pages],
            "tiles": [asdict(t) for t in self.tiles],
        }
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "CollectionManifest":
        doc = json.loads(Path(path).read_text())
        pages = [PageInfo(**p) for p in doc["pages"]]
        tiles = [
            TileGeometry(
                tile_ref=t["tile_ref"],
                page_num=t["page_num"],
                tile_offset=tuple(t["tile_offset"]),
                canvas_offset=tuple(t["canvas_offset"]),
                crop_offset=tuple(t["crop_offset"]),
                crop_size=tuple(t["crop_size"]),
            )
            for t in doc["tiles"]
        ]
        return cls(pages, tiles)

    @classmethod
    def empty(cls) -> "CollectionManifest":
        return cls([], [])
