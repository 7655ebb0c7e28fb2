import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synth import (
    SyntheticCollection,
    make_collection,
    write_annotations,
    write_collection,
    write_ground_truth,
)

CONFIG_TEMPLATE = """\
[dataset]
pages_dir = "pages"
annotations = "annotations.jsonl"
ground_truth = "gt.jsonl"

[extractor]
kind = "reference"
reference_seed = 42

[query_canvas]
fill = "texture"

[search]
measure = "cosine"
top_n = 50

[filter]
enabled = {filter_enabled}
trees = 15
seed = 0
max_samples_per_level = 4000

[output]
work_dir = "{work_dir}"
"""


@pytest.fixture(scope="session")
def small_collection() -> SyntheticCollection:
    """Six 904x904 pages, two of them with planted instances; the canvas
    margin supplies genuine black cells for filter training."""
    return make_collection(n_pages=6, planted_counts=(1, 2), seed=11, page_size=904)


@pytest.fixture(scope="session")
def small_collection_dir(small_collection, tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("collection")
    write_collection(small_collection, root / "pages")
    write_annotations(small_collection, root / "annotations.jsonl")
    write_ground_truth(small_collection, root / "gt.jsonl")
    (root / "dense.toml").write_text(
        CONFIG_TEMPLATE.format(filter_enabled="false", work_dir="work_dense")
    )
    (root / "filtered.toml").write_text(
        CONFIG_TEMPLATE.format(filter_enabled="true", work_dir="work_filtered")
    )
    return root


@pytest.fixture(scope="session")
def dense_workspace(small_collection_dir) -> Path:
    """Dense index built once over the small collection."""
    from pspot.config import load_config
    from pspot.pipeline import run_index_build

    config = load_config(small_collection_dir / "dense.toml")
    run_index_build(config)
    return small_collection_dir
