import numpy as np
import pytest

from filtrank import dataset as D
from filtrank import evaluation as E
from filtrank import filters as F
from filtrank import imagecore as IC
from filtrank import models as M
from filtrank import trainer as T


@pytest.fixture(scope="module")
def desk_model():
    return M.build_column(M.arch_for("rapid_reduced", "desk"),
                          np.random.default_rng(0))


def test_rank_from_scores_orders_descending():
    rng = np.random.default_rng(1)
    scores = rng.random(22)
    ranking = E.rank_from_scores("r", scores)
    values = [s for _, s in ranking.entries]
    assert values == sorted(values, reverse=True)
    assert len(ranking.entries) == 22
    assert {n for n, _ in ranking.entries} == set(F.FILTER_NAMES)


def test_tie_break_by_filter_index():
    ranking = E.rank_from_scores("r", np.zeros(22))
    assert [n for n, _ in ranking.entries] == list(F.FILTER_NAMES)


def test_zero_model_ranks_in_index_order(desk_model, corpus):
    model = M.build_column(M.arch_for("rapid_reduced", "desk"),
                           np.random.default_rng(2))
    model.params["column/fc1/w"][:] = 0
    model.params["column/fc1/b"][:] = 0
    refs = D.read_references(corpus / "references.jsonl")
    img = IC.load_image(refs[0].path)
    ranking = E.rank_filters(model, refs[0].id, img, "desk")
    assert [n for n, _ in ranking.entries] == list(F.FILTER_NAMES)
    assert all(s == 0.0 for _, s in ranking.entries)


def test_ranking_equals_pairwise_tournament(desk_model, corpus):
    refs = D.read_references(corpus / "references.jsonl")
    for ref in refs[:4]:
        img = IC.load_image(ref.path)
        ranking = E.rank_filters(desk_model, ref.id, img, "desk")
        assert E.pairwise_disagreements(ranking) == 0


def test_pairwise_disagreements_detects_violations():
    ranking = E.FilterRanking("r", tuple(
        (name, float(i)) for i, name in enumerate(F.FILTER_NAMES)
    ))  # ascending scores listed as if ranked: wrong order everywhere
    assert E.pairwise_disagreements(ranking) == 231


def test_rank_filters_mode_mismatch(desk_model, corpus):
    refs = D.read_references(corpus / "references.jsonl")
    img = IC.load_image(refs[0].path)
    with pytest.raises(M.ModelModeMismatch):
        E.rank_filters(desk_model, refs[0].id, img, "canonical")


# -- top-K ------------------------------------------------------------------------


def make_ranking(ref_id, order):
    return E.FilterRanking(ref_id, tuple((n, float(22 - i)) for i, n in enumerate(order)))


def test_topk_full_ground_truth_is_always_hit():
    names = list(F.FILTER_NAMES)
    rankings = [make_ranking("a", names)]
    gt = {"a": set(names)}
    for k in (1, 3, 5, 22):
        assert E.topk_accuracy(rankings, gt, k).accuracy == 1.0


def test_topk_k22_hits_any_nonempty():
    rankings = [make_ranking("a", list(F.FILTER_NAMES))]
    gt = {"a": {"Willow"}}
    assert E.topk_accuracy(rankings, gt, 22).accuracy == 1.0


def test_topk_hand_built_fixture():
    names = list(F.FILTER_NAMES)
    r1 = make_ranking("r1", names)                      # top-1 = 1977
    r2 = make_ranking("r2", names[::-1])                # top-1 = XProII
    r3 = make_ranking("r3", names[5:] + names[:5])      # top-1 = Gotham
    gt = {"r1": {"1977"}, "r2": {"Hefe"}, "r3": {"Gotham", "Apollo"}}
    res1 = E.topk_accuracy([r1, r2, r3], gt, 1)
    assert res1.accuracy == pytest.approx(2 / 3)
    # r2's Hefe (index 6) sits at position 15 of the reversed list
    assert E.topk_accuracy([r2], gt, 3).accuracy == 0.0
    assert E.topk_accuracy([r2], gt, 16).accuracy == 1.0


def test_topk_monotone_in_k(corpus, corpus_gt, desk_model):
    refs = D.read_references(corpus / "references.jsonl")[:6]
    rankings = [E.rank_filters(desk_model, r.id, IC.load_image(r.path), "desk")
                for r in refs]
    accs = [E.topk_accuracy(rankings, corpus_gt, k).accuracy for k in (1, 3, 5)]
    assert accs[0] <= accs[1] <= accs[2]


def test_topk_empty_gt_excluded():
    rankings = [make_ranking("a", list(F.FILTER_NAMES)),
                make_ranking("b", list(F.FILTER_NAMES))]
    gt = {"a": {"1977"}, "b": set()}
    res = E.topk_accuracy(rankings, gt, 1)
    assert res.accuracy == 1.0
    assert res.evaluated == 1
    assert res.skipped_empty == 1


def test_topk_missing_gt_raises():
    with pytest.raises(E.MissingGroundTruth):
        E.topk_accuracy([make_ranking("a", list(F.FILTER_NAMES))], {}, 1)


# -- random baseline ----------------------------------------------------------------


def test_random_baseline_full_sets():
    rng = np.random.default_rng(0)
    assert E.random_baseline([set(F.FILTER_NAMES)] * 5, 1, 100, rng) == 1.0


def test_random_baseline_singletons():
    rng = np.random.default_rng(1)
    acc = E.random_baseline([{"Hefe"}] * 200, 1, 2000, rng)
    assert acc == pytest.approx(1 / 22, abs=0.005)


def test_random_baseline_mean_3_7():
    # 30% of refs have 3 ground-truth filters, 70% have 4: mean 3.7
    sizes = [3] * 30 + [4] * 70
    rng = np.random.default_rng(2)
    acc = E.random_baseline(sizes, 1, 10_000, rng)
    assert acc == pytest.approx(3.7 / 22, abs=0.01)


def test_random_baseline_needs_trials():
    with pytest.raises(E.EvaluationError):
        E.random_baseline([{"Hefe"}], 1, 0, np.random.default_rng(0))


# -- preference distribution -----------------------------------------------------------


def test_distribution_single_ref_gt():
    dist = E.preference_distribution({"a": {"Hefe"}}, None, "global")
    hist = dist["global"]
    assert hist[F.FILTER_NAMES.index("Hefe")] == 1.0
    assert hist.sum() == 1.0


def test_distribution_gt_sums_to_mean_size():
    gt = {"a": {"Hefe", "Lofi"}, "b": {"Hefe"}, "c": set()}
    hist = E.preference_distribution(gt, None, "global")["global"]
    assert hist.sum() == pytest.approx(3 / 3)


def test_distribution_top1_sums_to_one():
    rankings = [make_ranking("a", list(F.FILTER_NAMES)),
                make_ranking("b", list(F.FILTER_NAMES[::-1]))]
    hist = E.preference_distribution(rankings, None, "global")["global"]
    assert hist.sum() == pytest.approx(1.0)
    assert hist[0] == 0.5 and hist[-1] == 0.5


def test_distribution_per_category_groups():
    gt = {f"{c}_0": {"Hefe"} for c in D.CATEGORIES}
    cats = {f"{c}_0": c for c in D.CATEGORIES}
    dist = E.preference_distribution(gt, cats, "category")
    assert set(dist) == set(D.CATEGORIES)
    for hist in dist.values():
        assert hist[F.FILTER_NAMES.index("Hefe")] == 1.0


def test_distribution_empty_source():
    with pytest.raises(E.EmptySource):
        E.preference_distribution({}, None, "global")


# -- report -----------------------------------------------------------------------------


def test_evaluate_model_and_write_report(tmp_path, corpus, corpus_gt, desk_model):
    refs = D.read_references(corpus / "references.jsonl")
    split = D.read_split(corpus / "split.jsonl")
    test_refs = [r for r in refs if split[r.id] == "test"][:4]
    report, rankings = E.evaluate_model(desk_model, test_refs, corpus_gt, "desk",
                                        model_label="untrained")
    assert len(rankings) == 4
    assert set(report.topk) == {1, 3, 5}
    E.write_report(report, tmp_path)
    assert (tmp_path / "results.json").exists()
    table = (tmp_path / "results.txt").read_text()
    assert "Top-1" in table and "untrained" in table
    lines = (tmp_path / "histograms.csv").read_text().strip().splitlines()
    assert lines[0].startswith("filter,group")
    assert len(lines) == 1 + 22  # header + one global row per filter


def test_binary_model_ranks_by_high_probability(corpus):
    model = M.build_column(M.arch_for("rapid_reduced", "desk"),
                           np.random.default_rng(5), mode="binary")
    refs = D.read_references(corpus / "references.jsonl")
    img = IC.load_image(refs[0].path)
    ranking = E.rank_filters(model, refs[0].id, img, "desk")
    assert len(ranking.entries) == 22
    assert all(0.0 <= s <= 1.0 for _, s in ranking.entries)
