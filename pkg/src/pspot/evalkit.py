"""Two-task evaluation: image retrieval and pattern spotting.

Image retrieval ranks pages containing the query (each page counts once);
pattern spotting additionally requires a box with IoU strictly above 0.5
against a not-yet-matched ground-truth instance. Both tasks are scored with
standard rank-normalized average precision, averaged over queries.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import UnknownPageId, UnknownQueryId, ZeroRelevant

Box = tuple[float, float, float, float]

IOU_THRESHOLD = 0.5
TIER_TOP = "top"
TIER_MEDIUM = "medium"
TIER_WORST = "worst"
_TIER_SPAN = 10  # category ranks 1-10 are "top", the last 10 "worst"


@dataclass(frozen=True)
class GroundTruthEntry:
    query_id: str
    category: str
    instances: tuple[tuple[str, Box], ...]  # (page_id, box)

    def __post_init__(self) -> None:
        if not self.instances:
            raise ValueError(f"query {self.query_id} has no instances")


@dataclass
class QueryResult:
    """Parsed run output for one query."""

    query_id: str
    detections: list[tuple[str, Box, float]]  # (page_id, box, score) by rank


@dataclass
class EvalReport:
    map_retrieval: float
    map_spotting: float
    per_query: list[dict] = field(default_factory=list)
    per_category: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "map_retrieval": self.map_retrieval,
                "map_spotting": self.map_spotting,
                "per_query": self.per_query,
                "per_category": self.per_category,
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        return cls(
            map_retrieval=doc["map_retrieval"],
            map_spotting=doc["map_spotting"],
            per_query=doc["per_query"],
            per_category=doc["per_category"],
        )


def iou(a: Box, b: Box) -> float:
    """Intersection over union of (x0, y0, w, h) boxes; 0 for empty union."""
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    if aw < 0 or ah < 0 or bw < 0 or bh < 0:
        raise ValueError("box dims must be non-negative")
    ix = min(ax0 + aw, bx0 + bw) - max(ax0, bx0)
    iy = min(ay0 + ah, by0 + bh) - max(ay0, by0)
    inter = max(ix, 0.0) * max(iy, 0.0)
    union = aw * ah + bw * bh - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def match_detections(
    detections: list[tuple[str, Box]],
    instances: list[tuple[str, Box]],
    iou_thresh: float = IOU_THRESHOLD,
) -> list[bool]:
    """Relevance flag per detection rank, greedy in rank order.

    A detection is a true positive iff its IoU with some not-yet-matched
    same-page instance is strictly above the threshold; every further
    detection of an already matched instance is a false positive.
    """
    matched = [False] * len(instances)
    flags = []
    for page_id, box in detections:
        best_iou = iou_thresh
        best = -1
        for n, (inst_page, inst_box) in enumerate(instances):
            if matched[n] or inst_page != page_id:
                continue
            value = iou(box, inst_box)
            if value > best_iou:
                best_iou = value
                best = n
        if best >= 0:
            matched[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(flags: list[bool], num_relevant: int) -> float:
    """Rank-normalized AP: mean precision over the true-positive ranks,
    with unretrieved relevant items contributing zero."""
    if num_relevant < 1:
        raise ZeroRelevant("average precision needs at least one relevant item")
    tp = 0
    total = 0.0
    for rank, flag in enumerate(flags, start=1):
        if flag:
            tp += 1
            total += tp / rank
    return total / num_relevant


def _retrieval_flags(
    ranked_pages: list[str], relevant_pages: set[str]
) -> list[bool]:
    seen = set()
    flags = []
    for page in ranked_pages:
        hit = page in relevant_pages and page not in seen
        seen.add(page)
        flags.append(hit)
    return flags


def _page_ranking(detections: list[tuple[str, Box, float]]) -> list[str]:
    best: dict[str, float] = {}
    for page_id, _box, score in detections:
        if page_id not in best or score > best[page_id]:
            best[page_id] = score
    return [p for p, _ in sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))]


def _tier(rank: int, n_categories: int) -> str:
    if rank < _TIER_SPAN:
        return TIER_TOP
    if rank >= n_categories - _TIER_SPAN:
        return TIER_WORST
    return TIER_MEDIUM


def evaluate(
    run: dict[str, QueryResult],
    ground_truth: list[GroundTruthEntry],
    *,
    iou_thresh: float = IOU_THRESHOLD,
    known_pages: set[str] | None = None,
) -> EvalReport:
    """Score a run on both tasks; queries missing from the run get AP 0.

    Category tiers follow the per-category pattern-spotting mAP ranking:
    the ten best categories are "top", the ten worst "worst", the rest
    "medium".
    """
    gt_ids = {entry.query_id for entry in ground_truth}
    for query_id in run:
        if query_id not in gt_ids:
            raise UnknownQueryId(f"run contains unknown query {query_id!r}")
    if known_pages is not None:
        for result in run.values():
            for page_id, _box, _score in result.detections:
                if page_id not in known_pages:
                    raise UnknownPageId(
                        f"query {result.query_id!r} hit unknown page {page_id!r}"
                    )

    per_query = []
    by_category: dict[str, list[dict]] = {}
    for entry in ground_truth:
        result = run.get(entry.query_id)
        detections = result.detections if result else []

        spot_flags = match_detections(
            [(p, b) for p, b, _s in detections], list(entry.instances), iou_thresh
        )
        ap_spot = average_precision(spot_flags, len(entry.instances))

        relevant_pages = {page_id for page_id, _box in entry.instances}
        ret_flags = _retrieval_flags(_page_ranking(detections), relevant_pages)
        ap_ret = average_precision(ret_flags, len(relevant_pages))

        log_size = None
        if detections:
            _page, box, _score = detections[0]
            log_size = math.log(box[2] * box[3])
        else:
            box = entry.instances[0][1]
            log_size = math.log(box[2] * box[3]) if box[2] * box[3] > 0 else None

        row = {
            "query_id": entry.query_id,
            "category": entry.category,
            "ap_retrieval": ap_ret,
            "ap_spotting": ap_spot,
            "log_size": log_size,
        }
        per_query.append(row)
        by_category.setdefault(entry.category, []).append(row)

    categories = []
    for category, rows in by_category.items():
        categories.append(
            {
                "category": category,
                "map_retrieval": sum(r["ap_retrieval"] for r in rows) / len(rows),
                "map_spotting": sum(r["ap_spotting"] for r in rows) / len(rows),
                "queries": len(rows),
            }
        )
    categories.sort(key=lambda c: (-c["map_spotting"], c["category"]))
    for rank, cat in enumerate(categories):
        cat["rank"] = rank + 1
        cat["tier"] = _tier(rank, len(categories))

    n = len(ground_truth)
    return EvalReport(
        map_retrieval=sum(r["ap_retrieval"] for r in per_query) / n,
        map_spotting=sum(r["ap_spotting"] for r in per_query) / n,
        per_query=per_query,
        per_category=categories,
    )


def load_ground_truth(path: str | Path) -> list[GroundTruthEntry]:
    """JSON-lines ground truth: query_id, category, instances."""
    entries = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            instances = tuple(
                (inst["page_id"], tuple(float(v) for v in inst["box"]))
                for inst in obj["instances"]
            )
            entries.append(
                GroundTruthEntry(
                    query_id=str(obj["query_id"]),
                    category=str(obj.get("category", "")),
                    instances=instances,
                )
            )
    return entries


def load_run(path: str | Path) -> dict[str, QueryResult]:
    """JSON-lines detections as written by the spot command."""
    run: dict[str, QueryResult] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "box" not in obj:
                continue  # page-ranking line mixed into the stream
            query_id = str(obj["query_id"])
            result = run.setdefault(query_id, QueryResult(query_id, []))
            result.detections.append(
                (str(obj["page_id"]), tuple(float(v) for v in obj["box"]), float(obj["score"]))
            )
    for result in run.values():
        result.detections.sort(key=lambda d: -d[2])
    return run


def write_size_csv(report: EvalReport, path: str | Path) -> None:
    """Per-query (log-size, AP) table for size-vs-precision scatter plots."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["query_id", "category", "log_size", "ap_spotting"])
        for row in report.per_query:
            writer.writerow(
                [row["query_id"], row["category"], row["log_size"], row["ap_spotting"]]
            )


def convert_native_ground_truth(src: str | Path, dst: str | Path) -> None:
    """Convert the dataset's native annotation format to our JSON lines.

    TODO: implement the DocExplore distribution format once its files are
    available to ship as fixtures.
    """
    raise NotImplementedError(
        "native ground-truth conversion is not implemented; "
        "provide JSON-lines ground truth directly"
    )
