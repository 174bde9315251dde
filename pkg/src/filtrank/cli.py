"""Command-line entry point: every pipeline stage behind one binary.

Each subcommand is a thin shell over the library; failures print a single
machine-parsable ``error: ...`` line and exit 1 (usage problems exit 2).
A ``--seed`` flag controls all randomness of a command, making full pipeline
runs byte-reproducible.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as D
from . import evaluation as E
from . import filters as F
from . import imagecore as IC
from . import trainer as T


def _data_dir(args) -> Path:
    if getattr(args, "data", None):
        return Path(args.data)
    env = os.environ.get("FILTRANK_DATA_DIR")
    if env:
        return Path(env)
    raise SystemExit("error: no data directory (use --data or FILTRANK_DATA_DIR)")


def cmd_gen_dataset(args) -> int:
    root = _data_dir(args)
    refs = D.generate_references(root, args.per_category, args.size, args.seed)
    filtered, errors = D.generate_filtered(refs, root / "filtered")
    D.write_references(root / "references.jsonl", refs)
    D.write_filtered(root / "filtered.jsonl", filtered)
    D.write_design(D.pair_design(), root / "pair_design.jsonl")
    for ref_id, msg in errors:
        print(f"warning: {ref_id}: {msg}", file=sys.stderr)
    print(f"{len(refs)} references, {len(filtered)} filtered images -> {root}")
    return 1 if errors else 0


def cmd_apply(args) -> int:
    catalog = F.load_catalog(args.catalog) if args.catalog else None
    img = IC.load_image(args.infile)
    out = F.apply_filter(img, args.filter, catalog)
    IC.save_image(out, args.outfile)
    print(f"{args.filter}: {args.infile} -> {args.outfile}")
    return 0


def cmd_pair_design(args) -> int:
    if args.check:
        design = D.load_design(args.check)
        print(f"{args.check}: valid ({len(design.edges)} pairs, every filter in 3)")
        return 0
    design = D.pair_design()
    if args.out:
        D.write_design(design, args.out)
        print(f"design -> {args.out}")
    if args.print or not args.out:
        for a, b in design.edges:
            print(f"{F.FILTER_NAMES[a]}\t{F.FILTER_NAMES[b]}")
    return 0


def cmd_simulate_labels(args) -> int:
    root = _data_dir(args)
    refs = D.read_references(root / "references.jsonl")
    filtered = D.read_filtered(root / "filtered.jsonl")
    design = D.pair_design()
    annotator = D.make_annotator(args.epsilon,
                                 seed=args.weights_seed if args.random_weights else None)
    by_ref: dict[str, dict] = {}
    for f in filtered:
        by_ref.setdefault(f.ref_id, {})[f.filter] = f.path
    labels = []
    for ref in refs:
        images = {name: IC.load_image(path) for name, path in by_ref[ref.id].items()}
        labels.extend(D.simulate_labels(annotator, ref, images, design,
                                        annotator_id=args.annotator_id))
    D.write_labels(root / "labels.jsonl", labels)
    print(f"{len(labels)} labels -> {root / 'labels.jsonl'}")
    return 0


def cmd_score(args) -> int:
    labels = D.read_labels(args.labels)
    design = D.load_design(args.design) if args.design else D.pair_design()
    scores = []
    for ref_id, ref_labels in sorted(D.labels_by_ref(labels).items()):
        scores.extend(D.score_images(ref_labels, design))
    if args.out:
        D.write_scores(args.out, scores)
        print(f"{len(scores)} scores -> {args.out}")
    else:
        for s in scores:
            print(f"{s.ref_id}\t{s.filter}\t{s.score:+d}")
    return 0


def cmd_split(args) -> int:
    root = _data_dir(args)
    refs = D.read_references(root / "references.jsonl")
    train_refs, test_refs = D.split(refs, IC.make_rng(args.seed))
    D.write_split(root / "split.jsonl", train_refs, test_refs)
    print(f"{len(train_refs)} train / {len(test_refs)} test -> {root / 'split.jsonl'}")
    return 0


def cmd_train(args) -> int:
    cfg = T.TrainConfig.from_file(args.config) if args.config else T.TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    data = T.load_train_data(_data_dir(args))
    out = T.train(cfg, data, args.out)
    print(f"checkpoint -> {out}")
    return 0


def cmd_eval(args) -> int:
    root = _data_dir(args)
    model, cfg, _ = T.load_trained(args.ckpt)
    refs = D.read_references(root / "references.jsonl")
    split = D.read_split(root / "split.jsonl")
    scores = D.read_scores(root / "scores.jsonl") if (root / "scores.jsonl").exists() else None
    if scores is None:
        labels = D.read_labels(root / "labels.jsonl")
        scores = []
        for _, ls in sorted(D.labels_by_ref(labels).items()):
            scores.extend(D.score_images(ls))
    by_ref: dict[str, list] = {}
    for s in scores:
        by_ref.setdefault(s.ref_id, []).append(s)
    gt = {rid: D.ground_truth(sc) for rid, sc in by_ref.items()}
    test_refs = [r for r in refs if split.get(r.id) == "test"]
    profile = cfg.profile if cfg else "desk"
    report, _ = E.evaluate_model(model, test_refs, gt, profile,
                                 model_label=f"{model.mode} ({model.arch.variant})")
    E.write_report(report, args.out)
    print(E.format_report_table([report]))
    print(f"report -> {args.out}")
    return 0


def cmd_recommend(args) -> int:
    model, cfg, _ = T.load_trained(args.ckpt)
    img = IC.load_image(args.image)
    profile = cfg.profile if cfg else "desk"
    ranking = E.rank_filters(model, Path(args.image).stem, img, profile)
    for name, score in ranking.entries[: args.k]:
        print(f"{name}\t{score:.6f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from . import annotation as A

    root = _data_dir(args)
    refs = D.read_references(root / "references.jsonl")
    filtered = D.read_filtered(root / "filtered.jsonl")
    store = A.AnnotationStore(root, refs, seed=args.seed)
    model = None
    profile = "desk"
    if args.ckpt:
        model, cfg, _ = T.load_trained(args.ckpt)
        profile = cfg.profile if cfg else "desk"
    ui_dir = args.ui or (Path(__file__).resolve().parents[2] / "frontend" / "dist")
    app = A.create_app(store, {f.id: f.path for f in filtered}, model, profile,
                       ui_dir if Path(ui_dir).is_dir() else None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_report(args) -> int:
    root = _data_dir(args)
    refs = D.read_references(root / "references.jsonl")
    categories = {r.id: r.category for r in refs}
    labels = D.read_labels(root / "labels.jsonl")
    gt = {}
    for rid, ls in D.labels_by_ref(labels).items():
        gt[rid] = D.ground_truth(D.score_images(ls))
    dist = E.preference_distribution(gt, categories, args.group_by)
    print("filter\tgroup\tground_truth_ratio")
    for grp in sorted(dist):
        for i, name in enumerate(F.FILTER_NAMES):
            print(f"{name}\t{grp}\t{dist[grp][i]:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="filtrank",
                                description="filter recommendation pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", help="procedural reference corpus + filtered images")
    g.add_argument("--data", help="output directory (or FILTRANK_DATA_DIR)")
    g.add_argument("--per-category", type=int, default=8)
    g.add_argument("--size", type=int, default=96)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_dataset)

    a = sub.add_parser("apply", help="apply one filter to a PNG")
    a.add_argument("--filter", required=True, choices=list(F.FILTER_NAMES))
    a.add_argument("--in", dest="infile", required=True)
    a.add_argument("--out", dest="outfile", required=True)
    a.add_argument("--catalog")
    a.set_defaults(func=cmd_apply)

    pd = sub.add_parser("pair-design", help="print, write or validate the 33-pair design")
    pd.add_argument("--print", action="store_true")
    pd.add_argument("--check", help="validate a design file")
    pd.add_argument("--out", help="write the shipped design to a file")
    pd.set_defaults(func=cmd_pair_design)

    sl = sub.add_parser("simulate-labels", help="vote all pairs with the synthetic annotator")
    sl.add_argument("--data")
    sl.add_argument("--epsilon", type=float, default=0.0)
    sl.add_argument("--annotator-id", default="synthetic")
    sl.add_argument("--random-weights", action="store_true")
    sl.add_argument("--weights-seed", type=int, default=0)
    sl.set_defaults(func=cmd_simulate_labels)

    sc = sub.add_parser("score", help="fold pair labels into per-filter scores")
    sc.add_argument("--labels", required=True)
    sc.add_argument("--design")
    sc.add_argument("--out")
    sc.set_defaults(func=cmd_score)

    sp = sub.add_parser("split", help="stratified 7:1 train/test split")
    sp.add_argument("--data")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_split)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--data")
    tr.add_argument("--config", help="YAML training config")
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="top-K accuracy report on the test split")
    ev.add_argument("--data")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    rc = sub.add_parser("recommend", help="rank filters for one image")
    rc.add_argument("--ckpt", required=True)
    rc.add_argument("--image", required=True)
    rc.add_argument("--k", type=int, default=5)
    rc.set_defaults(func=cmd_recommend)

    sv = sub.add_parser("serve", help="run the annotation + preview service")
    sv.add_argument("--data")
    sv.add_argument("--ckpt")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8787)
    sv.add_argument("--seed", type=int, default=0)
    sv.add_argument("--ui", help="directory with the built web UI")
    sv.set_defaults(func=cmd_serve)

    rp = sub.add_parser("report", help="filter-preference distribution from labels")
    rp.add_argument("--data")
    rp.add_argument("--group-by", choices=["global", "category"], default="global")
    rp.set_defaults(func=cmd_report)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IC.ImageError, F.FilterError, D.DatasetError, T.TrainerError,
            E.EvaluationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
