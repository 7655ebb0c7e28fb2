"""Query-by-example pattern spotting for historical document collections."""

__version__ = "0.1.0"

from .embedder import (
    ExtractorSpec,
    PyramidLevel,
    QueryEmbedding,
    assign_level,
    extract_pyramid,
    query_embedding,
    rf_center,
)
from .errors import PspotError
from .evalkit import EvalReport, average_precision, evaluate, iou, match_detections
from .imageproc import (
    CanvasSpec,
    CropRegion,
    Tile,
    binarize,
    divide_page,
    place_on_canvas,
    prepare_query,
    remove_background,
)
from .index import IndexShard, SearchHit, build_index, load_index, save_index, search
from .regionfilter import (
    NonTextClassifier,
    filter_nontext,
    label_samples,
    split_dataset,
    train_forest,
)
from .spotting import Detection, PageHit, localize, postprocess, spot, translate_to_page

__all__ = [
    "CanvasSpec",
    "CropRegion",
    "Detection",
    "EvalReport",
    "ExtractorSpec",
    "IndexShard",
    "NonTextClassifier",
    "PageHit",
    "PspotError",
    "PyramidLevel",
    "QueryEmbedding",
    "SearchHit",
    "Tile",
    "assign_level",
    "average_precision",
    "binarize",
    "build_index",
    "divide_page",
    "evaluate",
    "extract_pyramid",
    "filter_nontext",
    "iou",
    "label_samples",
    "load_index",
    "localize",
    "match_detections",
    "place_on_canvas",
    "postprocess",
    "prepare_query",
    "query_embedding",
    "remove_background",
    "rf_center",
    "save_index",
    "search",
    "split_dataset",
    "spot",
    "train_forest",
    "translate_to_page",
]
