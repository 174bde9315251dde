"""Dataset construction: reference sampling, filtered-image generation, the
33-pair comparison design, label records, per-filter scoring, ground-truth
extraction, the stratified 7:1 split, and a synthetic annotator for
laptop-scale end-to-end runs.

Every artifact is exchanged as line-delimited JSON manifests with stable
field names (``references.jsonl``, ``filtered.jsonl``, ``labels.jsonl``,
``scores.jsonl``, ``split.jsonl``), so each stage can be recomputed from the
previous one's files alone.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import filters as F
from . import imagecore as IC
from .imagecore import Image

CATEGORIES = (
    "animal", "flora", "landscape", "architecture",
    "food_and_drink", "portrait", "cityscape", "still_life",
)

N_FILTERS = len(F.FILTER_NAMES)  # 22
PAIRS_PER_REF = 33
OCCURRENCES_PER_FILTER = 3

VERDICTS = ("left", "right", "equal", "error")


class DatasetError(Exception):
    pass


class InvalidDesign(DatasetError):
    pass


class IncompleteLabels(DatasetError):
    pass


class ErrorVerdictPresent(DatasetError):
    pass


class TooFewReferences(DatasetError):
    pass


class MissingFilteredImage(DatasetError):
    pass


# -- records -----------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceImage:
    id: str
    category: str
    path: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise DatasetError(f"unknown category {self.category!r}")


@dataclass(frozen=True)
class FilteredImage:
    ref_id: str
    filter: str
    path: str

    @property
    def id(self) -> str:
        return filtered_id(self.ref_id, self.filter)


def filtered_id(ref_id: str, filter_name: str) -> str:
    return f"{ref_id}__{filter_name}"


@dataclass(frozen=True)
class LabelRecord:
    ref_id: str
    a: str  # left filter name
    b: str  # right filter name
    verdict: str
    annotator_id: str
    timestamp: float = 0.0

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise DatasetError(f"unknown verdict {self.verdict!r}")


@dataclass(frozen=True)
class FilterScore:
    ref_id: str
    filter: str
    score: int


# -- pair design ---------------------------------------------------------------


@dataclass(frozen=True)
class PairDesign:
    """33 unordered filter-index pairs in which every filter appears 3 times."""

    edges: tuple[tuple[int, int], ...]

    def edge_keys(self) -> set[frozenset]:
        return {frozenset(e) for e in self.edges}


def pair_design() -> PairDesign:
    """The shipped circulant design: filter i meets its ring neighbours i+-1
    and its antipode i+11 (mod 22). 22 + 11 = 33 edges, each vertex degree 3."""
    edges = [(i, (i + 1) % N_FILTERS) for i in range(N_FILTERS)]
    edges += [(i, i + 11) for i in range(11)]
    design = PairDesign(tuple(tuple(sorted(e)) for e in edges))
    validate_design(design)
    return design


def validate_design(design: PairDesign) -> None:
    """Check the three structural invariants; raise InvalidDesign otherwise."""
    edges = design.edges
    if len(edges) != PAIRS_PER_REF:
        raise InvalidDesign(f"expected {PAIRS_PER_REF} edges, got {len(edges)}")
    seen = set()
    degree = [0] * N_FILTERS
    for a, b in edges:
        if not (0 <= a < N_FILTERS and 0 <= b < N_FILTERS):
            raise InvalidDesign(f"edge ({a}, {b}) references a filter outside 0..21")
        if a == b:
            raise InvalidDesign(f"self-loop on filter {a}")
        key = frozenset((a, b))
        if key in seen:
            raise InvalidDesign(f"duplicate edge ({a}, {b})")
        seen.add(key)
        degree[a] += 1
        degree[b] += 1
    bad = [i for i, d in enumerate(degree) if d != OCCURRENCES_PER_FILTER]
    if bad:
        raise InvalidDesign(
            f"filters {bad} do not appear exactly {OCCURRENCES_PER_FILTER} times"
        )


def write_design(design: PairDesign, path: str | Path) -> None:
    write_jsonl(path, ({"a": a, "b": b} for a, b in design.edges))


def load_design(path: str | Path) -> PairDesign:
    rows = list(read_jsonl(path))
    design = PairDesign(tuple((int(r["a"]), int(r["b"])) for r in rows))
    validate_design(design)
    return design


# -- filtered-image generation ---------------------------------------------------


def plan_filtered(refs: list[ReferenceImage], out_dir: str | Path = "filtered") -> list[FilteredImage]:
    """The full reference x filter grid as records, without touching any pixels."""
    out = Path(out_dir)
    return [
        FilteredImage(r.id, f.name, str(out / f"{filtered_id(r.id, f.name)}.png"))
        for r in refs
        for f in F.filter_bank()
    ]


def generate_filtered(refs: list[ReferenceImage], out_dir: str | Path,
                      catalog: F.Catalog | None = None,
                      ) -> tuple[list[FilteredImage], list[tuple[str, str]]]:
    """Apply all 22 filters to each reference and write the PNGs.

    Per-image I/O failures are collected as (ref_id, message) and skipped
    rather than aborting the batch.
    """
    catalog = catalog or F.default_catalog()
    records: list[FilteredImage] = []
    errors: list[tuple[str, str]] = []
    planned = plan_filtered(refs, out_dir)
    by_ref: dict[str, Image] = {}
    for rec in planned:
        try:
            if rec.ref_id not in by_ref:
                ref = next(r for r in refs if r.id == rec.ref_id)
                by_ref[rec.ref_id] = IC.load_image(ref.path)
            out = F.apply_filter(by_ref[rec.ref_id], rec.filter, catalog)
            IC.save_image(out, rec.path)
            records.append(rec)
        except (IC.ImageError, OSError) as exc:
            errors.append((rec.ref_id, f"{rec.filter}: {exc}"))
    return records, errors


# -- scoring -------------------------------------------------------------------


def score_images(labels: list[LabelRecord], design: PairDesign | None = None,
                 ) -> list[FilterScore]:
    """Fold one reference's 33 pair verdicts into per-filter scores in [-3, 3].

    Each filter appears in exactly 3 pairs: +1 per win, -1 per loss, 0 for an
    equal verdict on either side. Error verdicts must have been re-collected
    upstream and are rejected here.
    """
    design = design or pair_design()
    if not labels:
        raise IncompleteLabels("no labels given")
    ref_ids = {l.ref_id for l in labels}
    if len(ref_ids) != 1:
        raise IncompleteLabels(f"labels span several references: {sorted(ref_ids)}")
    ref_id = labels[0].ref_id

    bad = [l for l in labels if l.verdict == "error"]
    if bad:
        raise ErrorVerdictPresent(
            f"{len(bad)} error verdicts present for {ref_id}; re-collect those pairs"
        )

    wanted = design.edge_keys()
    seen: set[frozenset] = set()
    points = {name: 0 for name in F.FILTER_NAMES}
    for l in labels:
        ia, ib = F.FILTER_NAMES.index(l.a), F.FILTER_NAMES.index(l.b)
        key = frozenset((ia, ib))
        if key not in wanted:
            raise IncompleteLabels(f"pair ({l.a}, {l.b}) is not in the design")
        if key in seen:
            raise IncompleteLabels(f"pair ({l.a}, {l.b}) labelled twice")
        seen.add(key)
        if l.verdict == "left":
            points[l.a] += 1
            points[l.b] -= 1
        elif l.verdict == "right":
            points[l.a] -= 1
            points[l.b] += 1
        # equal: both sides keep 0 from this pair
    if seen != wanted:
        raise IncompleteLabels(
            f"{len(wanted) - len(seen)} design pairs missing for {ref_id}"
        )
    return [FilterScore(ref_id, name, points[name]) for name in F.FILTER_NAMES]


def ground_truth(scores: list[FilterScore]) -> set[str]:
    """Filters that won all three of their pairs (score exactly +3).

    May be empty (e.g. all-equal labels) or contain several filters.
    """
    return {s.filter for s in scores if s.score == OCCURRENCES_PER_FILTER}


# -- split ---------------------------------------------------------------------


def split(refs: list[ReferenceImage], rng: np.random.Generator,
          ratio: tuple[int, int] = (7, 1)) -> tuple[list[ReferenceImage], list[ReferenceImage]]:
    """Stratified train/test split: within each category, one part in
    ``ratio[1]`` goes to test. Category sizes must divide evenly."""
    denom = sum(ratio)
    train: list[ReferenceImage] = []
    test: list[ReferenceImage] = []
    for cat in CATEGORIES:
        cat_refs = sorted((r for r in refs if r.category == cat), key=lambda r: r.id)
        if not cat_refs:
            continue
        if len(cat_refs) % denom != 0:
            raise TooFewReferences(
                f"category {cat} has {len(cat_refs)} references, "
                f"not divisible by {denom}"
            )
        n_test = len(cat_refs) * ratio[1] // denom
        order = rng.permutation(len(cat_refs))
        test.extend(cat_refs[i] for i in order[:n_test])
        train.extend(cat_refs[i] for i in order[n_test:])
    train.sort(key=lambda r: r.id)
    test.sort(key=lambda r: r.id)
    return train, test


# -- synthetic annotator ----------------------------------------------------------

# Per-category preference weights over (saturation, contrast, warmth,
# brightness): a shared global direction every category agrees on, plus
# per-category rotations. A category-blind ranker can learn the shared part
# (top-1 roughly 2.5x random on the procedural corpus) while category
# knowledge roughly doubles that again.
DEFAULT_PREFERENCE_WEIGHTS: dict[str, tuple[float, float, float, float]] = {
    "animal": (-0.06, 0.95, 5.62, -1.51),
    "flora": (1.68, -2.91, -2.7, 1.3),
    "landscape": (-0.0, 1.55, -3.04, 1.28),
    "architecture": (-1.97, 0.23, -4.87, 2.36),
    "food_and_drink": (-2.23, 2.78, -2.0, 1.0),
    "portrait": (3.62, 1.4, -6.38, 2.14),
    "cityscape": (-6.04, 1.78, -1.97, -0.56),
    "still_life": (1.01, 0.41, 5.17, 0.8),
}


def image_stats(img: Image) -> np.ndarray:
    """(mean saturation, RMS luma contrast, mean warmth R-B, mean luma)."""
    px = img.pixels.astype(np.float64)
    sat = (px.max(axis=2) - px.min(axis=2)).mean()
    luma = px @ np.array([0.299, 0.587, 0.114])
    return np.array([sat, luma.std(), (px[..., 0] - px[..., 2]).mean(), luma.mean()])


@dataclass(frozen=True)
class SyntheticAnnotator:
    """Deterministic stand-in for a human rater: hidden per-category weights
    over simple image statistics, with verdict 'equal' inside an epsilon band.

    With epsilon = 0 the induced preference is a strict total order per
    reference (generic utilities), hence transitive by construction.
    """

    weights: dict[str, tuple[float, float, float, float]]
    epsilon: float = 0.0

    def utility(self, category: str, img: Image) -> float:
        w = np.asarray(self.weights[category], dtype=np.float64)
        return float(w @ image_stats(img))


def make_annotator(epsilon: float = 0.0, seed: int | None = None) -> SyntheticAnnotator:
    """Default fixed weights, or random hidden weights drawn from a seed."""
    if seed is None:
        return SyntheticAnnotator(DEFAULT_PREFERENCE_WEIGHTS, epsilon)
    rng = np.random.default_rng(seed)
    weights = {cat: tuple(rng.normal(0.0, 1.5, size=4)) for cat in CATEGORIES}
    return SyntheticAnnotator(weights, epsilon)


def simulate_labels(annotator: SyntheticAnnotator, ref: ReferenceImage,
                    images: dict[str, Image], design: PairDesign | None = None,
                    annotator_id: str = "synthetic", timestamp: float = 0.0,
                    ) -> list[LabelRecord]:
    """Vote every design pair for one reference by comparing oracle utilities."""
    design = design or pair_design()
    missing = [n for n in F.FILTER_NAMES if n not in images]
    if missing:
        raise MissingFilteredImage(f"{ref.id}: missing filtered images {missing}")
    utils = {name: annotator.utility(ref.category, images[name]) for name in F.FILTER_NAMES}
    out = []
    for a_idx, b_idx in design.edges:
        a, b = F.FILTER_NAMES[a_idx], F.FILTER_NAMES[b_idx]
        delta = utils[a] - utils[b]
        if abs(delta) < annotator.epsilon:
            verdict = "equal"
        else:
            verdict = "left" if delta > 0 else "right"
        out.append(LabelRecord(ref.id, a, b, verdict, annotator_id, timestamp))
    return out


def utility_table(annotator: SyntheticAnnotator, ref: ReferenceImage,
                  images: dict[str, Image]) -> dict[str, float]:
    return {name: annotator.utility(ref.category, images[name]) for name in F.FILTER_NAMES}


def binary_quality_labels(utils: dict[str, float]) -> dict[str, int]:
    """Top half of one reference's filters by utility labelled high (1), rest low (0)."""
    ranked = sorted(utils, key=lambda n: (-utils[n], F.FILTER_NAMES.index(n)))
    high = set(ranked[: len(ranked) // 2])
    return {name: int(name in high) for name in utils}


# -- procedural reference corpus ----------------------------------------------------


def _coords(side: int):
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64) / (side - 1)
    return yy, xx


def _ellipse_mask(side: int, cy: float, cx: float, ry: float, rx: float) -> np.ndarray:
    yy, xx = _coords(side)
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _noise(rng, side: int, amount: float) -> np.ndarray:
    return rng.normal(0.0, amount, size=(side, side, 1))


def _fill(base: np.ndarray, mask: np.ndarray, color) -> None:
    base[mask] = np.asarray(color, dtype=np.float64)


def synth_reference_image(category: str, rng: np.random.Generator, side: int = 96) -> Image:
    """Procedural image with a category-specific layout and palette, jittered
    per draw so references within a category still vary."""
    yy, xx = _coords(side)
    img = np.zeros((side, side, 3), dtype=np.float64)

    if category == "animal":
        img[:] = [0.35 + rng.uniform(-0.05, 0.05), 0.45, 0.25]  # grassy bg
        body = _ellipse_mask(side, 0.55 + rng.uniform(-0.1, 0.1), 0.5, 0.3, 0.38)
        _fill(img, body, [0.55 + rng.uniform(-0.08, 0.08), 0.38, 0.2])
        head = _ellipse_mask(side, 0.3, 0.5 + rng.uniform(-0.15, 0.15), 0.14, 0.14)
        _fill(img, head, [0.6, 0.42, 0.24])
    elif category == "flora":
        img[:] = [0.12, 0.4 + rng.uniform(-0.08, 0.08), 0.15]  # foliage bg
        for _ in range(6):
            c = rng.uniform(0.15, 0.85, size=2)
            petal = [0.85, rng.uniform(0.1, 0.5), rng.uniform(0.3, 0.7)]
            _fill(img, _ellipse_mask(side, c[0], c[1], 0.1, 0.1), petal)
    elif category == "landscape":
        horizon = 0.45 + rng.uniform(-0.08, 0.08)
        sky = yy < horizon
        img[..., 0] = np.where(sky, 0.35 + 0.2 * yy, 0.3)
        img[..., 1] = np.where(sky, 0.55 + 0.2 * yy, 0.5 - 0.2 * (yy - horizon))
        img[..., 2] = np.where(sky, 0.85 - 0.2 * yy, 0.2)
        sun = _ellipse_mask(side, 0.2, rng.uniform(0.2, 0.8), 0.07, 0.07)
        _fill(img, sun, [0.95, 0.9, 0.6])
    elif category == "architecture":
        img[:] = [0.6, 0.62, 0.66]  # overcast sky
        n_floors, n_cols = rng.integers(4, 7), rng.integers(3, 6)
        shade = rng.uniform(0.3, 0.5)
        wall = (yy > 0.25) & (xx > 0.15) & (xx < 0.85)
        _fill(img, wall, [shade, shade, shade + 0.03])
        for fy in np.linspace(0.32, 0.9, n_floors):
            for fx in np.linspace(0.22, 0.78, n_cols):
                win = (np.abs(yy - fy) < 0.03) & (np.abs(xx - fx) < 0.04)
                _fill(img, win, [0.75, 0.75, 0.6])
    elif category == "food_and_drink":
        img[:] = [0.45, 0.3, 0.2]  # wooden table
        plate = _ellipse_mask(side, 0.5, 0.5, 0.36, 0.36)
        _fill(img, plate, [0.9, 0.88, 0.84])
        for _ in range(4):
            c = 0.5 + rng.uniform(-0.18, 0.18, size=2)
            morsel = [rng.uniform(0.6, 0.95), rng.uniform(0.3, 0.6), rng.uniform(0.1, 0.3)]
            _fill(img, _ellipse_mask(side, c[0], c[1], 0.09, 0.09), morsel)
    elif category == "portrait":
        img[:] = [0.25, 0.24, 0.28]  # studio backdrop
        face = _ellipse_mask(side, 0.45, 0.5, 0.28, 0.2)
        tone = 0.75 + rng.uniform(-0.1, 0.1)
        _fill(img, face, [tone, tone * 0.78, tone * 0.62])
        hair = _ellipse_mask(side, 0.25, 0.5, 0.16, 0.24) & ~face
        _fill(img, hair, [0.15, 0.1, 0.08])
        torso = (yy > 0.72) & (np.abs(xx - 0.5) < 0.3)
        _fill(img, torso, [0.3, 0.2 + rng.uniform(0, 0.15), 0.4])
    elif category == "cityscape":
        img[..., 0] = 0.5 - 0.3 * yy  # dusk gradient
        img[..., 1] = 0.4 - 0.25 * yy
        img[..., 2] = 0.6 - 0.2 * yy
        x0 = 0.05
        while x0 < 0.9:
            wdt = rng.uniform(0.08, 0.18)
            top = rng.uniform(0.25, 0.6)
            block = (xx >= x0) & (xx < x0 + wdt) & (yy > top)
            _fill(img, block, [0.12, 0.12, 0.18])
            lit = block & (rng.random((side, side)) < 0.08)
            _fill(img, lit, [0.95, 0.85, 0.4])
            x0 += wdt + 0.02
    elif category == "still_life":
        img[:] = [0.8, 0.78, 0.72]  # plain cloth
        for _ in range(3):
            c = rng.uniform(0.3, 0.7, size=2)
            tone = rng.uniform(0.35, 0.6)
            obj = [tone, tone * rng.uniform(0.8, 1.0), tone * rng.uniform(0.6, 0.9)]
            if rng.random() < 0.5:
                _fill(img, _ellipse_mask(side, c[0], c[1], 0.15, 0.12), obj)
            else:
                box = (np.abs(yy - c[0]) < 0.14) & (np.abs(xx - c[1]) < 0.1)
                _fill(img, box, obj)
    else:
        raise DatasetError(f"unknown category {category!r}")

    img = img + _noise(rng, side, 0.02)
    return Image.from_array(img)


def generate_references(out_dir: str | Path, per_category: int, side: int = 96,
                        seed: int = 0) -> list[ReferenceImage]:
    """Procedural reference corpus: ``per_category`` PNGs for each of the 8
    categories, reproducible from the seed."""
    out = Path(out_dir)
    refs = []
    for ci, cat in enumerate(CATEGORIES):
        for k in range(per_category):
            rng = np.random.default_rng(np.random.SeedSequence([seed, ci, k]))
            img = synth_reference_image(cat, rng, side)
            ref_id = f"{cat}_{k:04d}"
            path = out / "references" / f"{ref_id}.png"
            IC.save_image(img, path)
            refs.append(ReferenceImage(ref_id, cat, str(path)))
    return refs


# -- manifests -----------------------------------------------------------------


def write_jsonl(path: str | Path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def append_jsonl(path: str | Path, row: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(row, sort_keys=True) + "\n")
        fh.flush()


def read_jsonl(path: str | Path):
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_references(path, refs: list[ReferenceImage]) -> None:
    write_jsonl(path, ({"id": r.id, "category": r.category, "path": r.path} for r in refs))


def read_references(path) -> list[ReferenceImage]:
    return [ReferenceImage(r["id"], r["category"], r["path"]) for r in read_jsonl(path)]


def write_filtered(path, recs: list[FilteredImage]) -> None:
    write_jsonl(path, ({"ref_id": r.ref_id, "filter": r.filter, "path": r.path} for r in recs))


def read_filtered(path) -> list[FilteredImage]:
    return [FilteredImage(r["ref_id"], r["filter"], r["path"]) for r in read_jsonl(path)]


def label_to_row(l: LabelRecord) -> dict:
    return {"ref_id": l.ref_id, "a": l.a, "b": l.b, "verdict": l.verdict,
            "annotator_id": l.annotator_id, "timestamp": l.timestamp}


def row_to_label(r: dict) -> LabelRecord:
    return LabelRecord(r["ref_id"], r["a"], r["b"], r["verdict"],
                       r["annotator_id"], r.get("timestamp", 0.0))


def write_labels(path, labels: list[LabelRecord]) -> None:
    write_jsonl(path, (label_to_row(l) for l in labels))


def read_labels(path) -> list[LabelRecord]:
    return [row_to_label(r) for r in read_jsonl(path)]


def write_scores(path, scores: list[FilterScore]) -> None:
    write_jsonl(path, ({"ref_id": s.ref_id, "filter": s.filter, "score": s.score}
                       for s in scores))


def read_scores(path) -> list[FilterScore]:
    return [FilterScore(r["ref_id"], r["filter"], int(r["score"])) for r in read_jsonl(path)]


def write_split(path, train: list[ReferenceImage], test: list[ReferenceImage]) -> None:
    rows = [{"ref_id": r.id, "split": "train"} for r in train]
    rows += [{"ref_id": r.id, "split": "test"} for r in test]
    write_jsonl(path, rows)


def read_split(path) -> dict[str, str]:
    return {r["ref_id"]: r["split"] for r in read_jsonl(path)}


def labels_by_ref(labels: list[LabelRecord]) -> dict[str, list[LabelRecord]]:
    out: dict[str, list[LabelRecord]] = {}
    for l in labels:
        out.setdefault(l.ref_id, []).append(l)
    return out
