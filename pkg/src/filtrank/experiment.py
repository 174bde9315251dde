"""Scaled synthetic end-to-end experiment: build a procedural corpus with a
deterministic preference oracle, train the ranking models, and compare their
top-K accuracy against the random baseline.

The corpus is built once per working directory and reused across seeds; each
(mode, seed) training run is fully reproducible.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as D
from . import evaluation as E
from . import filters as F
from . import imagecore as IC
from . import trainer as T


@dataclass
class ExperimentConfig:
    per_category: int = 40
    image_side: int = 96
    corpus_seed: int = 0
    split_seed: int = 0
    epsilon: float = 0.0
    seeds: tuple = (0, 1, 2, 3, 4)
    modes: tuple = ("paircomp", "paircomp_cate")
    variant: str = "rapid_reduced"
    profile: str = "desk"
    baseline_trials: int = 10_000
    train_overrides: dict = field(default_factory=dict)

    def train_config(self, mode: str, seed: int) -> T.TrainConfig:
        kwargs = dict(mode=mode, variant=self.variant, profile=self.profile, seed=seed)
        kwargs.update(self.train_overrides)
        return T.TrainConfig(**kwargs)


def build_corpus(root: str | Path, cfg: ExperimentConfig) -> Path:
    """Generate references, filtered images, oracle labels, scores and the
    split; idempotent per directory (skips work if manifests exist)."""
    root = Path(root)
    if (root / "split.jsonl").exists():
        return root
    refs = D.generate_references(root, cfg.per_category, cfg.image_side, cfg.corpus_seed)
    filtered, errors = D.generate_filtered(refs, root / "filtered")
    if errors:
        raise D.DatasetError(f"filtered generation failed for {len(errors)} images")

    annotator = D.make_annotator(cfg.epsilon)
    design = D.pair_design()
    by_ref: dict[str, dict[str, IC.Image]] = {}
    for f in filtered:
        by_ref.setdefault(f.ref_id, {})[f.filter] = IC.load_image(f.path)
    labels: list[D.LabelRecord] = []
    scores: list[D.FilterScore] = []
    binary_rows = []
    for ref in refs:
        images = by_ref[ref.id]
        ref_labels = D.simulate_labels(annotator, ref, images, design)
        labels.extend(ref_labels)
        scores.extend(D.score_images(ref_labels, design))
        utils = D.utility_table(annotator, ref, images)
        for name, lbl in D.binary_quality_labels(utils).items():
            binary_rows.append({"filtered_id": D.filtered_id(ref.id, name), "label": lbl})

    train_refs, test_refs = D.split(refs, np.random.default_rng(cfg.split_seed))
    D.write_references(root / "references.jsonl", refs)
    D.write_filtered(root / "filtered.jsonl", filtered)
    D.write_labels(root / "labels.jsonl", labels)
    D.write_scores(root / "scores.jsonl", scores)
    D.write_jsonl(root / "binary_labels.jsonl", binary_rows)
    D.write_split(root / "split.jsonl", train_refs, test_refs)
    D.write_design(design, root / "pair_design.jsonl")
    return root


def ground_truth_by_ref(root: str | Path) -> dict[str, set[str]]:
    scores = D.read_scores(Path(root) / "scores.jsonl")
    by_ref: dict[str, list[D.FilterScore]] = {}
    for s in scores:
        by_ref.setdefault(s.ref_id, []).append(s)
    return {rid: D.ground_truth(sc) for rid, sc in by_ref.items()}


def run_experiment(root: str | Path, cfg: ExperimentConfig | None = None,
                   log=print) -> dict:
    """Train every (mode, seed) combination and summarize medians.

    Returns a dict with per-run accuracies, the Monte-Carlo random baseline
    on the test references, and the median top-1 per mode.
    """
    cfg = cfg or ExperimentConfig()
    root = Path(root)
    t_start = time.time()
    build_corpus(root, cfg)
    data = T.load_train_data(root)
    gt = ground_truth_by_ref(root)
    test_refs = [r for r in data.refs if data.split[r.id] == "test"]

    baseline = E.random_baseline([gt[r.id] for r in test_refs], 1,
                                 cfg.baseline_trials,
                                 np.random.default_rng(cfg.split_seed))
    log(f"corpus ready ({time.time() - t_start:.0f}s); "
        f"random top-1 baseline {baseline:.3f} on {len(test_refs)} test refs")

    runs = []
    for mode in cfg.modes:
        for seed in cfg.seeds:
            t0 = time.time()
            tc = cfg.train_config(mode, seed)
            ckpt = root / f"ckpt_{mode}_{seed}.bin"
            T.train(tc, data, ckpt)
            model, _, _ = T.load_trained(ckpt)
            report, _ = E.evaluate_model(model, test_refs, gt, cfg.profile,
                                         model_label=f"{mode} seed {seed}")
            accs = {k: report.topk[k].accuracy for k in (1, 3, 5)}
            runs.append({"mode": mode, "seed": seed, "topk": accs,
                         "seconds": round(time.time() - t0, 1)})
            log(f"{mode} seed {seed}: top-1 {accs[1]:.3f} top-3 {accs[3]:.3f} "
                f"top-5 {accs[5]:.3f} ({runs[-1]['seconds']}s)")

    summary = {"random_top1": baseline, "runs": runs,
               "config": {**asdict(cfg), "seeds": list(cfg.seeds),
                          "modes": list(cfg.modes)},
               "total_seconds": round(time.time() - t_start, 1)}
    for mode in cfg.modes:
        top1 = [r["topk"][1] for r in runs if r["mode"] == mode]
        summary[f"median_top1_{mode}"] = float(np.median(top1))
    with open(root / "experiment.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary
