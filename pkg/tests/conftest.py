import pytest

from filtrank import experiment as X


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Small shared corpus: 8 categories x 8 references with oracle labels,
    scores, binary labels, split and pair design manifests."""
    root = tmp_path_factory.mktemp("corpus")
    cfg = X.ExperimentConfig(per_category=8, image_side=64, corpus_seed=0,
                             split_seed=0)
    X.build_corpus(root, cfg)
    return root


@pytest.fixture(scope="session")
def corpus_gt(corpus):
    return X.ground_truth_by_ref(corpus)
