import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pspot.errors import UnknownPageId, UnknownQueryId, ZeroRelevant
from pspot.evalkit import (
    EvalReport,
    GroundTruthEntry,
    QueryResult,
    average_precision,
    evaluate,
    iou,
    load_ground_truth,
    load_run,
    match_detections,
    write_size_csv,
)


# --- IoU -----------------------------------------------------------------------

def test_iou_identical_boxes():
    assert iou((3, 4, 10, 20), (3, 4, 10, 20)) == 1.0


def test_iou_half_shift_is_one_third():
    assert iou((0, 0, 10, 10), (5, 0, 10, 10)) == 1 / 3


def test_iou_disjoint():
    assert iou((0, 0, 10, 10), (100, 100, 5, 5)) == 0.0


def test_iou_zero_area_union():
    assert iou((0, 0, 0, 0), (0, 0, 0, 0)) == 0.0


def test_iou_negative_dims_rejected():
    with pytest.raises(ValueError):
        iou((0, 0, -1, 5), (0, 0, 5, 5))


# --- greedy matching ---------------------------------------------------------------

def test_duplicate_detection_is_false_positive():
    instances = [("p", (0, 0, 10, 10))]
    detections = [("p", (0, 0, 10, 10)), ("p", (1, 0, 10, 10))]
    assert match_detections(detections, instances) == [True, False]


def test_multiple_instances_same_page_all_count():
    instances = [("p", (0, 0, 10, 10)), ("p", (50, 50, 10, 10)), ("p", (100, 100, 10, 10))]
    detections = [("p", box) for _page, box in instances]
    assert match_detections(detections, instances) == [True, True, True]


def test_iou_exactly_half_is_false_positive():
    # boxes with IoU exactly 0.5: relevance requires strictly above
    a = (0, 0, 300, 100)
    b = (100, 0, 300, 100)
    assert iou(a, b) == 0.5
    assert match_detections([("p", a)], [("p", b)]) == [False]


def test_matching_respects_pages():
    instances = [("p1", (0, 0, 10, 10))]
    detections = [("p2", (0, 0, 10, 10)), ("p1", (0, 0, 10, 10))]
    assert match_detections(detections, instances) == [False, True]


def oracle_best_assignment(detections, instances, thresh=0.5):
    """Brute-force optimal assignment: maximum number of matches over all
    injective detection-to-instance assignments."""
    n, m = len(detections), len(instances)
    best = 0
    for subset_size in range(min(n, m), -1, -1):
        for det_idx in itertools.combinations(range(n), subset_size):
            for perm in itertools.permutations(range(m), subset_size):
                ok = all(
                    detections[d][0] == instances[p][0]
                    and iou(detections[d][1], instances[p][1]) > thresh
                    for d, p in zip(det_idx, perm)
                )
                if ok:
                    best = max(best, subset_size)
        if best == subset_size:
            break
    return best


@given(st.data())
@settings(max_examples=40, deadline=None)
def test_greedy_equals_optimal_for_disjoint_detections(data):
    # disjoint detections: grid-aligned boxes cannot overlap each other
    n_det = data.draw(st.integers(0, 4))
    n_inst = data.draw(st.integers(1, 3))
    detections = []
    for slot in range(n_det):
        dx = data.draw(st.integers(0, 5))
        detections.append(("p", (200 * slot + dx, 0, 100, 100)))
    instances = []
    for slot in range(n_inst):
        dx = data.draw(st.integers(0, 30))
        instances.append(("p", (200 * slot + dx, 0, 100, 100)))
    flags = match_detections(detections, instances)
    assert sum(flags) == oracle_best_assignment(detections, instances)


# --- average precision ------------------------------------------------------------

def test_ap_perfect_ranking():
    assert average_precision([True, True], 2) == 1.0


def test_ap_mixed_ranking_by_definition():
    assert average_precision([True, False, True], 2) == pytest.approx(
        (1 / 1 + 2 / 3) / 2, abs=1e-15
    )


def test_ap_all_misses():
    assert average_precision([False, False], 2) == 0.0


def test_ap_unretrieved_items_contribute_zero():
    assert average_precision([True], 4) == 0.25


def test_ap_zero_relevant_rejected():
    with pytest.raises(ZeroRelevant):
        average_precision([True], 0)


@given(st.lists(st.booleans(), max_size=30), st.integers(1, 10))
def test_prepending_tp_never_decreases_ap(flags, extra):
    r = max(sum(flags), 1) + extra
    base = average_precision(flags, r)
    assert average_precision([True] + flags, r) >= base
    assert average_precision([False] + flags, r) <= base


# --- evaluate ----------------------------------------------------------------------

def gt_entry(query_id, instances, category="cat"):
    return GroundTruthEntry(query_id=query_id, category=category, instances=tuple(instances))


def result_for(query_id, detections):
    return QueryResult(query_id=query_id, detections=detections)


def test_perfect_run_scores_one_on_both_tasks():
    gt = [
        gt_entry("q1", [("p1", (0, 0, 10, 10)), ("p2", (5, 5, 10, 10))]),
        gt_entry("q2", [("p3", (1, 1, 20, 20))]),
    ]
    run = {
        "q1": result_for("q1", [("p1", (0, 0, 10, 10), 0.9), ("p2", (5, 5, 10, 10), 0.8)]),
        "q2": result_for("q2", [("p3", (1, 1, 20, 20), 0.99)]),
    }
    report = evaluate(run, gt)
    assert report.map_retrieval == 1.0
    assert report.map_spotting == 1.0


def test_missing_query_scores_zero():
    gt = [gt_entry("q1", [("p1", (0, 0, 10, 10))]), gt_entry("q2", [("p2", (0, 0, 10, 10))])]
    run = {"q1": result_for("q1", [("p1", (0, 0, 10, 10), 1.0)])}
    report = evaluate(run, gt)
    assert report.map_retrieval == 0.5
    assert report.map_spotting == 0.5


def test_unknown_query_rejected():
    gt = [gt_entry("q1", [("p1", (0, 0, 10, 10))])]
    run = {"zz": result_for("zz", [])}
    with pytest.raises(UnknownQueryId):
        evaluate(run, gt)


def test_unknown_page_rejected_when_universe_given():
    gt = [gt_entry("q1", [("p1", (0, 0, 10, 10))])]
    run = {"q1": result_for("q1", [("ghost", (0, 0, 10, 10), 1.0)])}
    with pytest.raises(UnknownPageId):
        evaluate(run, gt, known_pages={"p1"})


def test_retrieval_counts_page_once():
    # three instances on one page: spotting rewards all three, retrieval once
    gt = [gt_entry("q", [("p", (0, 0, 10, 10)), ("p", (50, 0, 10, 10)), ("p", (100, 0, 10, 10))])]
    run = {
        "q": result_for(
            "q",
            [("p", (0, 0, 10, 10), 0.9), ("p", (50, 0, 10, 10), 0.8), ("p", (100, 0, 10, 10), 0.7)],
        )
    }
    report = evaluate(run, gt)
    assert report.per_query[0]["ap_spotting"] == 1.0
    assert report.per_query[0]["ap_retrieval"] == 1.0  # one relevant page, retrieved first


def test_category_tiers():
    gt = []
    run = {}
    for n in range(35):
        qid = f"q{n:02d}"
        gt.append(gt_entry(qid, [("p", (0, 0, 10, 10))], category=f"cat{n:02d}"))
        # category quality decreases with n: the first ones hit, the last miss
        if n < 20:
            run[qid] = result_for(qid, [("p", (0, 0, 10, 10), 1.0)])
        else:
            run[qid] = result_for(qid, [("p", (500, 500, 10, 10), 1.0)])
    report = evaluate(run, gt)
    tiers = {c["category"]: c["tier"] for c in report.per_category}
    ranked = [c["category"] for c in report.per_category]
    assert [tiers[c] for c in ranked[:10]] == ["top"] * 10
    assert [tiers[c] for c in ranked[-10:]] == ["worst"] * 10
    assert all(tiers[c] == "medium" for c in ranked[10:25])


def random_single_instance_case(rng):
    n_pages = rng.integers(2, 8)
    instances = []
    for p in range(rng.integers(1, n_pages + 1)):
        instances.append((f"p{p}", (float(rng.integers(0, 200)), float(rng.integers(0, 200)), 20.0, 20.0)))
    detections = []
    for _ in range(rng.integers(0, 12)):
        page = f"p{rng.integers(0, n_pages)}"
        box = (float(rng.integers(0, 220)), float(rng.integers(0, 220)), 20.0, 20.0)
        detections.append((page, box, float(rng.random())))
    detections.sort(key=lambda d: -d[2])
    return instances, detections


def test_spotting_ap_bounded_by_retrieval_ap_single_instance_pages():
    rng = np.random.default_rng(123)
    for _ in range(300):
        instances, detections = random_single_instance_case(rng)
        gt = [gt_entry("q", instances)]
        run = {"q": result_for("q", detections)}
        report = evaluate(run, gt)
        row = report.per_query[0]
        assert row["ap_spotting"] <= row["ap_retrieval"] + 1e-12


def test_log_size_emitted_per_query():
    gt = [gt_entry("q", [("p", (0, 0, 30, 40))])]
    run = {"q": result_for("q", [("p", (0, 0, 30, 40), 1.0)])}
    report = evaluate(run, gt)
    assert report.per_query[0]["log_size"] == pytest.approx(math.log(30 * 40))


# --- serialization ------------------------------------------------------------------

def test_report_json_round_trip():
    gt = [gt_entry("q", [("p", (0, 0, 10, 10))])]
    run = {"q": result_for("q", [("p", (0, 0, 10, 10), 1.0)])}
    report = evaluate(run, gt)
    again = EvalReport.from_json(report.to_json())
    assert again.map_retrieval == report.map_retrieval
    assert again.per_query == report.per_query


def test_ground_truth_and_run_loading(tmp_path):
    gt_path = tmp_path / "gt.jsonl"
    gt_path.write_text(
        '{"query_id": "q1", "category": "c", "instances": [{"page_id": "p", "box": [0, 0, 10, 10]}]}\n'
    )
    entries = load_ground_truth(gt_path)
    assert entries[0].instances == (("p", (0.0, 0.0, 10.0, 10.0)),)

    run_path = tmp_path / "run.jsonl"
    run_path.write_text(
        '{"query_id": "q1", "rank": 1, "page_id": "p", "box": [0, 0, 10, 10], "score": 0.7}\n'
        '{"query_id": "q1", "rank": 1, "page_id": "p", "score": 0.7}\n'  # page line skipped
    )
    run = load_run(run_path)
    assert run["q1"].detections == [("p", (0.0, 0.0, 10.0, 10.0), 0.7)]


def test_size_csv(tmp_path):
    gt = [gt_entry("q", [("p", (0, 0, 10, 10))])]
    run = {"q": result_for("q", [("p", (0, 0, 10, 10), 1.0)])}
    report = evaluate(run, gt)
    path = tmp_path / "sizes.csv"
    write_size_csv(report, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "query_id,category,log_size,ap_spotting"
    assert lines[1].startswith("q,cat,")
