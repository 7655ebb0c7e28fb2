"""Page and query preprocessing: binarization, background removal, canvas
placement and overlapping tile division.

All functions are pure with respect to their inputs; every coordinate offset
introduced along the way (crop, canvas centering, tiling) is recorded on the
emitted :class:`Tile` so that grid cells can later be translated back to
original page coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import cv2
import numpy as np

from .errors import DimensionExceeded

DEFAULT_CANVAS_SIZE = 1000

_MORPH_KERNEL = np.ones((3, 3), np.uint8)


@dataclass(frozen=True)
class CropRegion:
    """Axis-aligned rectangle inside a source image, top-left inclusive."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"degenerate crop region {self}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"crop region origin outside image: {self}")


@dataclass(frozen=True)
class CanvasSpec:
    """Fixed square input frame. Pages use black fill, queries use the
    manuscript texture fill by default."""

    size: int = DEFAULT_CANVAS_SIZE
    fill: str = "black"  # "black" | "texture"
    texture_path: str | Path | None = None  # None = packaged parchment asset

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError(f"canvas size must be >= 1, got {self.size}")
        if self.fill not in ("black", "texture"):
            raise ValueError(f"unknown canvas fill {self.fill!r}")
        if self.fill == "texture" and self.texture_path is not None:
            if not Path(self.texture_path).is_file():
                raise FileNotFoundError(
                    f"texture asset not found: {self.texture_path}"
                )


@dataclass(frozen=True)
class Tile:
    """One fixed-size network input cut from (or padded around) a page.

    Offsets compose back to original page coordinates:
    ``page_xy = tile_xy + tile_offset - canvas_offset + crop_offset``.
    """

    image: np.ndarray = field(repr=False)
    tile_offset: tuple[int, int]  # top-left of tile in the padded/canvas frame
    canvas_offset: tuple[int, int]  # top-left of the pasted page in that frame
    crop_offset: tuple[int, int]  # crop origin in the original page
    page_id: str | None = None
    crop_size: tuple[int, int] | None = None  # (w, h) of the pasted page


def _require_rgb(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 RGB image, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {image.dtype}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError("empty image")
    return image


def binarize(image: np.ndarray) -> np.ndarray:
    """Foreground/background mask of a page: global Otsu threshold (ink is
    the dark side) followed by one 3x3 erosion and one 3x3 dilation.

    Returns a uint8 mask with foreground = 1. A uniform image has no
    foreground at all.
    """
    image = _require_rgb(image)
    gray = cv2.cvtColor(image, cv2.COLOR_RGB2GRAY)
    if int(gray.min()) == int(gray.max()):
        return np.zeros(gray.shape, np.uint8)
    _, mask = cv2.threshold(gray, 0, 1, cv2.THRESH_BINARY_INV + cv2.THRESH_OTSU)
    mask = cv2.erode(mask, _MORPH_KERNEL)
    mask = cv2.dilate(mask, _MORPH_KERNEL)
    return mask


def remove_background(
    image: np.ndarray, mask: np.ndarray, stop_ratio: float = 0.95
) -> CropRegion:
    """Grow a rectangle from the page center until each side hits a strip
    that is almost entirely background.

    Growth starts from the single center pixel. Each of the four sides
    expands one full row/column strip at a time and stops permanently when
    the background fraction of its next candidate strip exceeds
    ``stop_ratio``, or at the image border. Sides stop independently, so the
    result does not depend on the expansion order.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if image is not None:
        image = np.asarray(image)
        if image.shape[:2] != mask.shape:
            raise ValueError(
                f"mask shape {mask.shape} does not match image {image.shape[:2]}"
            )
    if not 0.0 < stop_ratio < 1.0:
        raise ValueError(f"stop_ratio must be in (0, 1), got {stop_ratio}")

    h, w = mask.shape
    fg = mask != 0
    col_bg = 1.0 - fg.mean(axis=0)  # background fraction per column strip
    row_bg = 1.0 - fg.mean(axis=1)

    x0 = x1 = w // 2
    y0 = y1 = h // 2

    while x0 > 0 and col_bg[x0 - 1] <= stop_ratio:
        x0 -= 1
    while x1 < w - 1 and col_bg[x1 + 1] <= stop_ratio:
        x1 += 1
    while y0 > 0 and row_bg[y0 - 1] <= stop_ratio:
        y0 -= 1
    while y1 < h - 1 and row_bg[y1 + 1] <= stop_ratio:
        y1 += 1

    return CropRegion(x0, y0, x1 - x0 + 1, y1 - y0 + 1)


def crop(image: np.ndarray, region: CropRegion) -> np.ndarray:
    """Cut ``region`` out of ``image``."""
    if region.x0 + region.width > image.shape[1] or region.y0 + region.height > image.shape[0]:
        raise ValueError(f"crop region {region} exceeds image {image.shape[:2]}")
    return image[
        region.y0 : region.y0 + region.height, region.x0 : region.x0 + region.width
    ]


def _packaged_texture_path() -> Path:
    with resources.as_file(
        resources.files("pspot").joinpath("assets/parchment.png")
    ) as path:
        return Path(path)


def _canvas_fill(spec: CanvasSpec) -> np.ndarray:
    """Background of a canvas: zeros, or the texture cropped/tiled to size."""
    if spec.fill == "black":
        return np.zeros((spec.size, spec.size, 3), np.uint8)
    path = Path(spec.texture_path) if spec.texture_path else _packaged_texture_path()
    texture = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if texture is None:
        raise FileNotFoundError(f"cannot read texture asset: {path}")
    texture = cv2.cvtColor(texture, cv2.COLOR_BGR2RGB)
    th, tw = texture.shape[:2]
    reps_y = math.ceil(spec.size / th)
    reps_x = math.ceil(spec.size / tw)
    if reps_y > 1 or reps_x > 1:
        texture = np.tile(texture, (reps_y, reps_x, 1))
        th, tw = texture.shape[:2]
    oy = (th - spec.size) // 2
    ox = (tw - spec.size) // 2
    return np.ascontiguousarray(texture[oy : oy + spec.size, ox : ox + spec.size])


def place_on_canvas(
    cropped: np.ndarray, spec: CanvasSpec
) -> tuple[np.ndarray, tuple[int, int]]:
    """Center an image on the canvas; returns the canvas and the paste offset."""
    cropped = _require_rgb(cropped)
    h, w = cropped.shape[:2]
    if w > spec.size or h > spec.size:
        raise DimensionExceeded(
            f"image {w}x{h} exceeds canvas size {spec.size}; divide the page instead"
        )
    canvas = _canvas_fill(spec)
    vx = (spec.size - w) // 2
    vy = (spec.size - h) // 2
    canvas[vy : vy + h, vx : vx + w] = cropped
    return canvas, (vx, vy)


def _axis_offsets(extent: int, size: int) -> tuple[list[int], int]:
    """Tile top-left offsets and pad offset along one axis.

    Extents above the canvas size get the minimal equally spaced grid whose
    first and last windows sit flush with the borders; smaller extents get a
    single centered window with black padding.
    """
    if extent > size:
        n = math.ceil(extent / size)
        spacing = (extent - size) / (n - 1)
        offsets = [int(math.floor(t * spacing + 0.5)) for t in range(n)]
        return offsets, 0
    return [0], (size - extent) // 2


def divide_page(
    page: np.ndarray,
    spec: CanvasSpec,
    *,
    page_id: str | None = None,
    crop_offset: tuple[int, int] = (0, 0),
) -> list[Tile]:
    """Cut an oversized page into overlapping canvas-sized tiles.

    Axes no longer than the canvas are padded with black and centered; the
    union of the emitted tiles covers the whole padded page.
    """
    page = _require_rgb(page)
    h, w = page.shape[:2]
    if w <= spec.size and h <= spec.size:
        raise ValueError(
            f"page {w}x{h} fits within canvas {spec.size}; use place_on_canvas"
        )
    xs, vx = _axis_offsets(w, spec.size)
    ys, vy = _axis_offsets(h, spec.size)

    frame_w = max(w, spec.size)
    frame_h = max(h, spec.size)
    frame = np.zeros((frame_h, frame_w, 3), np.uint8)
    frame[vy : vy + h, vx : vx + w] = page

    tiles = []
    for ty in ys:
        for tx in xs:
            window = np.ascontiguousarray(
                frame[ty : ty + spec.size, tx : tx + spec.size]
            )
            tiles.append(
                Tile(
                    image=window,
                    tile_offset=(tx, ty),
                    canvas_offset=(vx, vy),
                    crop_offset=crop_offset,
                    page_id=page_id,
                    crop_size=(w, h),
                )
            )
    return tiles


def prepare_query(query: np.ndarray, spec: CanvasSpec) -> Tile:
    """Center a query crop on the (textured) query canvas."""
    query = _require_rgb(query)
    h, w = query.shape[:2]
    canvas, (vx, vy) = place_on_canvas(query, spec)
    return Tile(
        image=canvas,
        tile_offset=(0, 0),
        canvas_offset=(vx, vy),
        crop_offset=(0, 0),
        crop_size=(w, h),
    )


def preprocess_page(
    page: np.ndarray,
    spec: CanvasSpec,
    *,
    stop_ratio: float = 0.95,
    page_id: str | None = None,
) -> list[Tile]:
    """Full offline preprocessing of one page: binarize, remove background,
    then center on the canvas or divide into tiles depending on size."""
    mask = binarize(page)
    region = remove_background(page, mask, stop_ratio)
    cropped = crop(page, region)
    offset = (region.x0, region.y0)
    h, w = cropped.shape[:2]
    if w <= spec.size and h <= spec.size:
        canvas, canvas_offset = place_on_canvas(cropped, spec)
        return [
            Tile(
                image=canvas,
                tile_offset=(0, 0),
                canvas_offset=canvas_offset,
                crop_offset=offset,
                page_id=page_id,
                crop_size=(w, h),
            )
        ]
    return divide_page(cropped, spec, page_id=page_id, crop_offset=offset)
