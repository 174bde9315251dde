"""Filter ranking by aesthetic score, top-K accuracy, the random baseline,
and filter-preference distribution reports.

Ranking a reference means: apply all 22 filters, embed each variant (center
crop at test time), and sort by squared-norm score, breaking ties by filter
index. Because scores are per-image scalars, this sort is exactly the order
a full 231-comparison pairwise tournament would produce, at a fraction of
the cost; ``pairwise_disagreements`` verifies the equivalence.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as D
from . import filters as F
from . import imagecore as IC
from . import models as M
from .imagecore import Image
from .models import ColumnModel, ModelModeMismatch


class EvaluationError(Exception):
    pass


class MissingGroundTruth(EvaluationError):
    pass


class EmptySource(EvaluationError):
    pass


@dataclass(frozen=True)
class FilterRanking:
    ref_id: str
    entries: tuple[tuple[str, float], ...]  # (filter, score), best first

    def top(self, k: int) -> list[str]:
        return [name for name, _ in self.entries[:k]]


def rank_from_scores(ref_id: str, scores: np.ndarray) -> FilterRanking:
    """Descending score order with filter-index tie-break."""
    order = sorted(range(len(F.FILTER_NAMES)), key=lambda i: (-float(scores[i]), i))
    return FilterRanking(ref_id, tuple((F.FILTER_NAMES[i], float(scores[i])) for i in order))


def prepare_eval_input(img: Image, resize_to: int, crop: int) -> np.ndarray:
    """Test-time sizing: resize then a single deterministic center crop."""
    return M.image_to_input(IC.center_crop(IC.resize(img, resize_to, resize_to), crop, crop))


def rank_filters(model: ColumnModel, ref_id: str, ref_image: Image,
                 profile: str = "desk", catalog: F.Catalog | None = None,
                 ) -> FilterRanking:
    """Score all 22 filtered variants of one reference with the model.

    paircomp scores are squared embedding norms; paircomp_cate fuses each
    variant with the reference's own representation first; binary scores are
    the predicted probability of the high-quality class.
    """
    catalog = catalog or F.default_catalog()
    prof = M.PROFILES[profile]
    crop = prof.crop_for(model.arch.variant)
    if crop != model.arch.input_side and model.arch.spp_levels is None:
        raise ModelModeMismatch(
            f"profile {profile!r} crops to {crop}px but the model expects "
            f"{model.arch.input_side}px"
        )
    batch = np.stack([
        prepare_eval_input(F.apply_filter(ref_image, f, catalog), prof.resize_to, crop)
        for f in F.filter_bank()
    ])
    if model.mode == "binary":
        z = model.quality_logits_batch(batch)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        scores = (p / p.sum(axis=1, keepdims=True))[:, 1]
    else:
        emb = model.embed_batch(batch)
        if model.mode == "paircomp_cate":
            ref_in = prepare_eval_input(ref_image, prof.resize_to, crop)
            cat_repr = model.embed_batch(ref_in[None])
            emb = model.fuse_batch(emb, np.repeat(cat_repr, len(emb), axis=0))
        scores = (emb * emb).sum(axis=1)
    return rank_from_scores(ref_id, scores)


def pairwise_disagreements(ranking: FilterRanking) -> int:
    """Number of filter pairs whose ranking order contradicts the sign of the
    score difference (ties resolved by filter index). Zero means the norm sort
    equals the full pairwise tournament."""
    pos = {name: i for i, (name, _) in enumerate(ranking.entries)}
    score = dict(ranking.entries)
    bad = 0
    names = F.FILTER_NAMES
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            a, b = names[i], names[j]
            d = score[a] - score[b]
            a_first = d > 0 or (d == 0 and i < j)
            if a_first != (pos[a] < pos[b]):
                bad += 1
    return bad


# -- accuracy ---------------------------------------------------------------------


@dataclass(frozen=True)
class TopKResult:
    accuracy: float
    evaluated: int
    skipped_empty: int


def topk_accuracy(rankings: list[FilterRanking], gt: dict[str, set[str]],
                  k: int) -> TopKResult:
    """Fraction of references whose top-K list intersects the ground truth.

    References with empty ground truth are excluded from the denominator and
    reported separately.
    """
    hits = 0
    evaluated = 0
    skipped = 0
    for r in rankings:
        if r.ref_id not in gt:
            raise MissingGroundTruth(f"no ground-truth set for {r.ref_id}")
        truth = gt[r.ref_id]
        if not truth:
            skipped += 1
            continue
        evaluated += 1
        hits += bool(set(r.top(k)) & truth)
    acc = hits / evaluated if evaluated else 0.0
    return TopKResult(acc, evaluated, skipped)


def random_baseline(gt_sets: list[set[str]] | list[int], k: int, trials: int,
                    rng: np.random.Generator) -> float:
    """Monte-Carlo top-K accuracy of a uniform random ranking against the
    given ground-truth sets (sizes suffice). Empty sets are excluded, matching
    topk_accuracy."""
    if trials < 1:
        raise EvaluationError("trials must be >= 1")
    sizes = np.asarray([len(g) if isinstance(g, (set, frozenset)) else int(g)
                        for g in gt_sets])
    sizes = sizes[sizes > 0]
    if sizes.size == 0:
        return 0.0
    # A random ranking's top-K is a uniform K-subset: draw hypergeometric overlaps.
    overlaps = rng.hypergeometric(sizes[None, :], len(F.FILTER_NAMES) - sizes[None, :],
                                  k, size=(trials, sizes.size))
    return float((overlaps > 0).mean())


# -- preference distributions -----------------------------------------------------


def preference_distribution(source, categories: dict[str, str] | None = None,
                            group_by: str = "global") -> dict[str, np.ndarray]:
    """Per-filter selection ratios, globally or per category.

    ``source`` is either ground truth (dict ref_id -> set of filters; a
    filter's ratio is the fraction of references whose ground truth contains
    it, so a group's ratios sum to the mean ground-truth size) or predictions
    (list of FilterRanking; top-1 ratios, summing to 1).
    """
    if not source:
        raise EmptySource("no references in source")
    if group_by not in ("global", "category"):
        raise EvaluationError(f"unknown grouping {group_by!r}")

    def group_of(ref_id: str) -> str:
        if group_by == "global":
            return "global"
        if not categories or ref_id not in categories:
            raise EvaluationError(f"no category for {ref_id}")
        return categories[ref_id]

    counts: dict[str, np.ndarray] = {}
    totals: dict[str, int] = {}
    index = {name: i for i, name in enumerate(F.FILTER_NAMES)}
    if isinstance(source, dict):
        items = [(rid, names) for rid, names in source.items()]
        for rid, names in items:
            grp = group_of(rid)
            counts.setdefault(grp, np.zeros(len(index)))
            totals[grp] = totals.get(grp, 0) + 1
            for n in names:
                counts[grp][index[n]] += 1
    else:
        for r in source:
            grp = group_of(r.ref_id)
            counts.setdefault(grp, np.zeros(len(index)))
            totals[grp] = totals.get(grp, 0) + 1
            counts[grp][index[r.top(1)[0]]] += 1
    return {grp: c / totals[grp] for grp, c in counts.items()}


# -- report -------------------------------------------------------------------------


@dataclass
class EvalReport:
    model_label: str
    topk: dict[int, TopKResult]
    per_category: dict[str, dict[int, float]]
    gt_distribution: dict[str, np.ndarray]
    predicted_distribution: dict[str, np.ndarray]

    def to_dict(self) -> dict:
        return {
            "model": self.model_label,
            "topk": {str(k): {"accuracy": r.accuracy, "evaluated": r.evaluated,
                              "skipped_empty": r.skipped_empty}
                     for k, r in self.topk.items()},
            "per_category": {c: {str(k): a for k, a in accs.items()}
                             for c, accs in self.per_category.items()},
            "gt_distribution": {g: list(v) for g, v in self.gt_distribution.items()},
            "predicted_distribution": {g: list(v) for g, v in self.predicted_distribution.items()},
        }


def build_report(model_label: str, rankings: list[FilterRanking],
                 gt: dict[str, set[str]], categories: dict[str, str]) -> EvalReport:
    topk = {k: topk_accuracy(rankings, gt, k) for k in (1, 3, 5)}
    per_cat: dict[str, dict[int, float]] = {}
    for cat in D.CATEGORIES:
        cat_rankings = [r for r in rankings if categories.get(r.ref_id) == cat]
        if not cat_rankings:
            continue
        per_cat[cat] = {k: topk_accuracy(cat_rankings, gt, k).accuracy for k in (1, 3, 5)}
    gt_dist = preference_distribution(gt, categories, "global")
    pred_dist = preference_distribution(rankings, categories, "global")
    return EvalReport(model_label, topk, per_cat, gt_dist, pred_dist)


def format_report_table(reports: list[EvalReport]) -> str:
    """Plain-text accuracy table, one row per model."""
    lines = [f"{'Model':<28} {'Top-1':>8} {'Top-3':>8} {'Top-5':>8}"]
    lines.append("-" * 56)
    for rep in reports:
        row = [f"{rep.model_label:<28}"]
        for k in (1, 3, 5):
            row.append(f"{rep.topk[k].accuracy * 100:>7.2f}%")
        lines.append(" ".join(row))
    return "\n".join(lines)


def write_report(report: EvalReport, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    with open(out / "results.txt", "w", encoding="utf-8") as fh:
        fh.write(format_report_table([report]) + "\n")
    with open(out / "histograms.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["filter", "group", "ground_truth_ratio", "predicted_top1_ratio"])
        groups = sorted(set(report.gt_distribution) | set(report.predicted_distribution))
        for grp in groups:
            gtv = report.gt_distribution.get(grp)
            pdv = report.predicted_distribution.get(grp)
            for i, name in enumerate(F.FILTER_NAMES):
                w.writerow([name, grp,
                            "" if gtv is None else f"{gtv[i]:.6f}",
                            "" if pdv is None else f"{pdv[i]:.6f}"])


def evaluate_model(model: ColumnModel, refs: list[D.ReferenceImage],
                   gt: dict[str, set[str]], profile: str = "desk",
                   catalog: F.Catalog | None = None,
                   model_label: str = "model") -> tuple[EvalReport, list[FilterRanking]]:
    """Rank every reference and assemble the accuracy report."""
    rankings = []
    for ref in refs:
        img = IC.load_image(ref.path)
        rankings.append(rank_filters(model, ref.id, img, profile, catalog))
    categories = {r.id: r.category for r in refs}
    return build_report(model_label, rankings, gt, categories), rankings
