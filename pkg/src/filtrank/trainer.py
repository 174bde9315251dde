"""Mini-batch SGD training for the three model modes: ``binary`` (single
column, high/low quality), ``paircomp`` (double column, pairwise ranking)
and ``paircomp_cate`` (triple column with category classification and
fusion).

Each batch runs resize -> random crop -> random horizontal flip -> shared
column forward -> loss -> backward -> clipped, weight-decayed momentum step.
All randomness is derived from (seed, epoch, step), so a run is bit
reproducible and resuming from a checkpoint continues the exact trajectory.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import dataset as D
from . import imagecore as IC
from . import models as M
from .autodiff import load_checkpoint
from .dataset import LabelRecord, ReferenceImage
from .imagecore import Image
from .models import ColumnModel


class TrainerError(Exception):
    pass


class DataLeakage(TrainerError):
    pass


class DivergenceDetected(TrainerError):
    pass


@dataclass
class TrainConfig:
    mode: str = "paircomp"            # binary | paircomp | paircomp_cate
    variant: str = "rapid_reduced"    # alexnet_reduced | rapid_reduced
    profile: str = "desk"             # canonical | desk
    spp_levels: int | None = None
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    grad_clip: float = 10.0
    batch_size: int = 16
    epochs: int = 6
    steps_per_epoch: int | None = None  # None: every full batch once per epoch
    seed: int = 0
    lambda_cate: float = 1.0
    lr_decay: float = 0.1             # applied at 1/3 and 2/3 of the epoch budget
    heldout_pairs: int = 200          # pairs sampled for the per-epoch metric

    def __post_init__(self):
        if self.mode not in ("binary", "paircomp", "paircomp_cate"):
            raise TrainerError(f"unknown mode {self.mode!r}")
        if self.variant not in M.VARIANTS:
            raise TrainerError(f"unknown variant {self.variant!r}")
        for name in ("learning_rate", "batch_size", "epochs", "momentum"):
            if getattr(self, name) < 0 or (name in ("learning_rate", "batch_size", "epochs")
                                           and getattr(self, name) == 0):
                raise TrainerError(f"{name} must be positive")

    @staticmethod
    def from_file(path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        return TrainConfig(**raw)

    def to_file(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(asdict(self), fh, sort_keys=True)


@dataclass
class TrainData:
    """Everything the loop consumes, resolved to in-memory records."""

    refs: list[ReferenceImage]
    split: dict[str, str]                       # ref_id -> "train" | "test"
    labels: list[LabelRecord]
    filtered_paths: dict[str, str]              # filtered_id -> png path
    binary_labels: dict[str, int] = field(default_factory=dict)  # filtered_id -> 0/1

    def ref_by_id(self) -> dict[str, ReferenceImage]:
        return {r.id: r for r in self.refs}

    def train_ref_ids(self) -> set[str]:
        return {rid for rid, part in self.split.items() if part == "train"}

    def test_ref_ids(self) -> set[str]:
        return {rid for rid, part in self.split.items() if part == "test"}


def load_train_data(root: str | Path) -> TrainData:
    root = Path(root)
    refs = D.read_references(root / "references.jsonl")
    filtered = D.read_filtered(root / "filtered.jsonl")
    labels = D.read_labels(root / "labels.jsonl")
    split = D.read_split(root / "split.jsonl")
    paths = {f.id: f.path for f in filtered}
    binary: dict[str, int] = {}
    binary_path = root / "binary_labels.jsonl"
    if binary_path.exists():
        binary = {r["filtered_id"]: int(r["label"]) for r in D.read_jsonl(binary_path)}
    return TrainData(refs, split, labels, paths, binary)


class ImageStore:
    """u8 cache of images pre-resized to the profile's working size."""

    def __init__(self, resize_to: int):
        self.resize_to = resize_to
        self._cache: dict[str, np.ndarray] = {}

    def get(self, key: str, path: str) -> np.ndarray:
        if key not in self._cache:
            img = IC.load_image(path)
            img = IC.resize(img, self.resize_to, self.resize_to)
            self._cache[key] = np.rint(img.pixels * 255.0).astype(np.uint8)
        return self._cache[key]


def _augment(u8: np.ndarray, crop: int, top: int, left: int, flip: bool) -> np.ndarray:
    window = u8[top : top + crop, left : left + crop]
    if flip:
        window = window[:, ::-1]
    return M.image_to_input(window.astype(np.float32) / 255.0)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global norm is at most max_norm.
    Returns the pre-clip norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             velocity: dict[str, np.ndarray], lr: float, momentum: float,
             weight_decay: float) -> None:
    """v <- momentum v + g + wd w;  w <- w - lr v. Updates in place."""
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise TrainerError(f"gradient shape {g.shape} != param {w.shape} for {name}")
        v = velocity.setdefault(name, np.zeros_like(w))
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * w
        w -= (lr * v).astype(w.dtype)


@dataclass
class PairItem:
    pos_id: str
    neg_id: str
    ref_id: str
    category_index: int


def pair_stream(data: TrainData) -> list[PairItem]:
    """Training items from preference labels: equal and error verdicts are
    dropped, and test-split references must not appear at all."""
    train_ids = data.train_ref_ids()
    test_ids = data.test_ref_ids()
    by_id = data.ref_by_id()
    items = []
    for l in data.labels:
        if l.ref_id in test_ids:
            continue
        if l.ref_id not in train_ids:
            continue
        if l.verdict == "left":
            pos, neg = l.a, l.b
        elif l.verdict == "right":
            pos, neg = l.b, l.a
        else:
            continue
        cat = D.CATEGORIES.index(by_id[l.ref_id].category)
        items.append(PairItem(D.filtered_id(l.ref_id, pos),
                              D.filtered_id(l.ref_id, neg), l.ref_id, cat))
    return items


def binary_stream(data: TrainData) -> list[tuple[str, int]]:
    train_ids = data.train_ref_ids()
    return sorted(
        (fid, lbl) for fid, lbl in data.binary_labels.items()
        if fid.rsplit("__", 1)[0] in train_ids
    )


def _epoch_lr(cfg: TrainConfig, epoch: int) -> float:
    stage = 0
    if cfg.epochs >= 3:
        third = cfg.epochs / 3.0
        stage = min(2, int(epoch / third))
    return cfg.learning_rate * (cfg.lr_decay ** stage)


def _step_rng(seed: int, epoch: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch, step]))


class Trainer:
    def __init__(self, cfg: TrainConfig, data: TrainData):
        self.cfg = cfg
        self.data = data
        arch = M.arch_for(cfg.variant, cfg.profile, cfg.spp_levels)
        self.arch = arch
        self.profile = M.PROFILES[cfg.profile]
        self.crop = self.profile.crop_for(cfg.variant)
        self.store = ImageStore(self.profile.resize_to)
        self.model: ColumnModel = M.build_column(
            arch, np.random.default_rng(np.random.SeedSequence([cfg.seed])), cfg.mode)
        self.velocity: dict[str, np.ndarray] = {}
        self.epoch = 0
        self.loss_trace: list[float] = []
        self._refs = data.ref_by_id()
        if cfg.mode == "binary":
            self.items = binary_stream(data)
        else:
            self.items = pair_stream(data)
        if not self.items:
            raise TrainerError("no training items for this mode")

    # -- batch assembly -----------------------------------------------------

    def _image(self, fid_or_ref: str, is_ref: bool = False) -> np.ndarray:
        if is_ref:
            return self.store.get(fid_or_ref, self._refs[fid_or_ref].path)
        return self.store.get(fid_or_ref, self.data.filtered_paths[fid_or_ref])

    def _pair_batch(self, items: list[PairItem], rng: np.random.Generator):
        span = self.profile.resize_to - self.crop + 1
        xp, xn, xr, labels = [], [], [], []
        test_ids = self.data.test_ref_ids()
        for it in items:
            if it.ref_id in test_ids:
                raise DataLeakage(f"test reference {it.ref_id} reached a batch")
            top = int(rng.integers(0, span))
            left = int(rng.integers(0, span))
            flip = bool(rng.integers(0, 2))
            # one crop per pair: both members (and the reference) see the
            # same window so the comparison is purely about the filter
            xp.append(_augment(self._image(it.pos_id), self.crop, top, left, flip))
            xn.append(_augment(self._image(it.neg_id), self.crop, top, left, flip))
            if self.cfg.mode == "paircomp_cate":
                xr.append(_augment(self._image(it.ref_id, is_ref=True),
                                   self.crop, top, left, flip))
                labels.append(it.category_index)
        feed = {"xp": np.stack(xp), "xn": np.stack(xn)}
        if self.cfg.mode == "paircomp_cate":
            feed["xref"] = np.stack(xr)
            feed["labels"] = np.asarray(labels, dtype=np.int64)
        return feed

    def _binary_batch(self, items: list[tuple[str, int]], rng: np.random.Generator):
        span = self.profile.resize_to - self.crop + 1
        xs, ys = [], []
        for fid, lbl in items:
            top = int(rng.integers(0, span))
            left = int(rng.integers(0, span))
            flip = bool(rng.integers(0, 2))
            xs.append(_augment(self._image(fid), self.crop, top, left, flip))
            ys.append(lbl)
        return {"x": np.stack(xs), "labels": np.asarray(ys, dtype=np.int64)}

    # -- steps ----------------------------------------------------------------

    def train_step(self, batch_items, rng: np.random.Generator, lr: float) -> float:
        g, loss_node, _ = self.model.train_path(len(batch_items), self.cfg.lambda_cate)
        feed = (self._binary_batch(batch_items, rng) if self.cfg.mode == "binary"
                else self._pair_batch(batch_items, rng))
        acts = g.forward(feed)
        loss = float(acts.values[loss_node])
        if not math.isfinite(loss):
            raise DivergenceDetected(
                f"non-finite loss at epoch {self.epoch}: {loss!r}; "
                "lower the learning rate or raise weight decay"
            )
        grads = g.backward(acts, loss_node).params
        clip_gradients(grads, self.cfg.grad_clip)
        sgd_step(self.model.params, grads, self.velocity, lr,
                 self.cfg.momentum, self.cfg.weight_decay)
        return loss

    def run_epoch(self) -> float:
        cfg = self.cfg
        order = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, self.epoch])).permutation(len(self.items))
        n_batches = len(self.items) // cfg.batch_size
        if cfg.steps_per_epoch is not None:
            n_batches = min(n_batches, cfg.steps_per_epoch)
        if n_batches == 0:
            raise TrainerError("batch size exceeds the number of training items")
        lr = _epoch_lr(cfg, self.epoch)
        losses = []
        for step in range(n_batches):
            sel = order[step * cfg.batch_size : (step + 1) * cfg.batch_size]
            batch = [self.items[i] for i in sel]
            rng = _step_rng(cfg.seed, self.epoch, step)
            losses.append(self.train_step(batch, rng, lr))
        mean_loss = float(np.mean(losses))
        self.loss_trace.append(mean_loss)
        self.epoch += 1
        return mean_loss

    # -- held-out metric -------------------------------------------------------

    def heldout_pair_accuracy(self) -> float | None:
        """Fraction of held-out pairs ranked correctly by the current model."""
        if self.cfg.mode == "binary" or self.cfg.heldout_pairs == 0:
            return None
        test_ids = self.data.test_ref_ids()
        pairs = []
        for l in self.data.labels:
            if l.ref_id not in test_ids or l.verdict not in ("left", "right"):
                continue
            pos, neg = (l.a, l.b) if l.verdict == "left" else (l.b, l.a)
            pairs.append((l.ref_id, pos, neg))
        if not pairs:
            return None
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed, 10_000]))
        if len(pairs) > self.cfg.heldout_pairs:
            idx = rng.choice(len(pairs), size=self.cfg.heldout_pairs, replace=False)
            pairs = [pairs[i] for i in idx]
        scores = self._heldout_scores(pairs)
        correct = sum(sp > sn for sp, sn in scores)
        return correct / len(pairs)

    def _center(self, u8: np.ndarray) -> np.ndarray:
        off = (self.profile.resize_to - self.crop) // 2
        return M.image_to_input(
            u8[off : off + self.crop, off : off + self.crop].astype(np.float32) / 255.0)

    def _heldout_scores(self, pairs: list[tuple[str, str, str]],
                        chunk: int = 64) -> list[tuple[float, float]]:
        xs = []
        for ref_id, pos, neg in pairs:
            xs.append(self._center(self._image(D.filtered_id(ref_id, pos))))
            xs.append(self._center(self._image(D.filtered_id(ref_id, neg))))
        embs = []
        for start in range(0, len(xs), chunk):
            embs.append(self.model.embed_batch(np.stack(xs[start : start + chunk])))
        emb = np.concatenate(embs)
        if self.cfg.mode == "paircomp_cate":
            refs = np.stack([self._center(self._image(p[0], is_ref=True)) for p in pairs])
            cat_repr = self.model.embed_batch(refs)
            cat_repr = np.repeat(cat_repr, 2, axis=0)
            emb = self.model.fuse_batch(emb, cat_repr)
        s = (emb * emb).sum(axis=1)
        return [(float(s[2 * i]), float(s[2 * i + 1])) for i in range(len(pairs))]

    # -- persistence -------------------------------------------------------------

    def save(self, path) -> None:
        extra = {f"velocity/{k}": v for k, v in self.velocity.items()}
        M.save_model(path, self.model, extra_meta={
            "config": asdict(self.cfg),
            "epoch": self.epoch,
            "loss_trace": self.loss_trace,
        }, extra_tensors=extra)

    @staticmethod
    def resume(path, data: TrainData) -> "Trainer":
        model, meta, extra = M.load_model(path)
        cfg = TrainConfig(**meta["config"])
        t = Trainer.__new__(Trainer)
        t.cfg = cfg
        t.data = data
        t.arch = model.arch
        t.profile = M.PROFILES[cfg.profile]
        t.crop = t.profile.crop_for(cfg.variant)
        t.store = ImageStore(t.profile.resize_to)
        t.model = model
        t.velocity = {k.split("/", 1)[1]: v for k, v in extra.items()
                      if k.startswith("velocity/")}
        t.epoch = int(meta["epoch"])
        t.loss_trace = list(meta["loss_trace"])
        t._refs = data.ref_by_id()
        t.items = binary_stream(data) if cfg.mode == "binary" else pair_stream(data)
        return t


def train(cfg: TrainConfig, data: TrainData, out_path: str | Path,
          metrics_path: str | Path | None = None,
          resume_from: str | Path | None = None) -> Path:
    """Run the configured number of epochs and write the checkpoint.

    Emits one metrics row per epoch: training loss and held-out pair accuracy.
    """
    if resume_from:
        trainer = Trainer.resume(resume_from, data)
        trainer.cfg.epochs = cfg.epochs  # checkpoint hyperparameters, caller's budget
    else:
        trainer = Trainer(cfg, data)
    out_path = Path(out_path)
    metrics = Path(metrics_path) if metrics_path else out_path.with_suffix(".metrics.jsonl")
    if trainer.epoch == 0 and metrics.exists():
        metrics.unlink()
    while trainer.epoch < trainer.cfg.epochs:
        loss = trainer.run_epoch()
        row = {"epoch": trainer.epoch, "train_loss": loss,
               "heldout_pair_acc": trainer.heldout_pair_accuracy()}
        D.append_jsonl(metrics, row)
    trainer.save(out_path)
    return out_path


def load_trained(path) -> tuple[ColumnModel, TrainConfig | None, dict]:
    model, meta, _ = M.load_model(path)
    cfg = TrainConfig(**meta["config"]) if "config" in meta else None
    return model, cfg, meta
