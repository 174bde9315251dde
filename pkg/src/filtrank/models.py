"""Column network architectures, the shared-parameter multi-column assembly,
the category head, and the embedding fusion layer.

Two column variants are supported, both ending in a 128-d embedding whose
squared Euclidean norm is the aesthetic score:

- ``alexnet_reduced``: conv1 11x11x96, pool, conv2 5x5x256, pool,
  conv3/conv4 3x3x384, conv5 3x3x256, pool, fc1 4096, fc2 128
- ``rapid_reduced``: conv1 11x11x64, pool, conv2 5x5x64, pool,
  conv3/conv4 3x3x64, fc1 128

Pooling (3x3 stride 2) and channel normalization follow the first two conv
layers. An optional spatial-pyramid-pooling stage before the first
fully-connected layer makes the embedding length independent of the input
size. Kernel inventories never change with the input profile; only the
first conv stride does (the ``desk`` profile runs 64px inputs for fast
experiments).

Every multi-column assembly references one parameter store, so weight
sharing is by identity, not by synchronization.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import objectives
from .autodiff import Graph, load_checkpoint, save_checkpoint
from .imagecore import Image

EMBED_DIM = 128
CATEGORY_COUNT = 8
VARIANTS = ("alexnet_reduced", "rapid_reduced")


class ModelError(Exception):
    pass


class IncompatibleInputSize(ModelError):
    pass


class NoCategoryHead(ModelError):
    pass


class MissingFusionLayer(ModelError):
    pass


class ModelModeMismatch(ModelError):
    pass


@dataclass(frozen=True)
class InputProfile:
    """How raw images are sized before entering a column."""

    name: str
    resize_to: int
    crops: dict
    conv1_strides: dict

    def crop_for(self, variant: str) -> int:
        return self.crops[variant]


PROFILES = {
    "canonical": InputProfile(
        "canonical", 256,
        crops={"alexnet_reduced": 227, "rapid_reduced": 224},
        conv1_strides={"alexnet_reduced": 4, "rapid_reduced": 2},
    ),
    # Small-input profile for laptop-scale experiments: same kernel stacks,
    # first conv stride lowered so the deeper pools still see a usable map.
    "desk": InputProfile(
        "desk", 72,
        crops={"alexnet_reduced": 64, "rapid_reduced": 64},
        conv1_strides={"alexnet_reduced": 2, "rapid_reduced": 2},
    ),
}


@dataclass(frozen=True)
class Arch:
    variant: str
    input_side: int
    conv1_stride: int
    spp_levels: int | None = None
    lrn_size: int = 5
    lrn_alpha: float = 1e-4
    lrn_beta: float = 0.75
    lrn_k: float = 1.0

    embed_dim: int = EMBED_DIM


def arch_for(variant: str, profile: str = "canonical",
             spp_levels: int | None = None) -> Arch:
    if variant not in VARIANTS:
        raise ModelError(f"unknown variant {variant!r}")
    prof = PROFILES[profile]
    return Arch(variant=variant, input_side=prof.crop_for(variant),
                conv1_stride=prof.conv1_strides[variant], spp_levels=spp_levels)


def _conv_layers(arch: Arch) -> list[dict]:
    """Conv/pool/norm stage descriptors, in order, for the chosen variant."""
    if arch.variant == "alexnet_reduced":
        return [
            {"kind": "conv", "name": "conv1", "k": 11, "f": 96, "s": arch.conv1_stride, "p": 0},
            {"kind": "pool", "window": 3, "s": 2},
            {"kind": "lrn"},
            {"kind": "conv", "name": "conv2", "k": 5, "f": 256, "s": 1, "p": 2},
            {"kind": "pool", "window": 3, "s": 2},
            {"kind": "lrn"},
            {"kind": "conv", "name": "conv3", "k": 3, "f": 384, "s": 1, "p": 1},
            {"kind": "conv", "name": "conv4", "k": 3, "f": 384, "s": 1, "p": 1},
            {"kind": "conv", "name": "conv5", "k": 3, "f": 256, "s": 1, "p": 1},
            {"kind": "pool", "window": 3, "s": 2},
        ]
    return [
        {"kind": "conv", "name": "conv1", "k": 11, "f": 64, "s": arch.conv1_stride, "p": 0},
        {"kind": "pool", "window": 3, "s": 2},
        {"kind": "lrn"},
        {"kind": "conv", "name": "conv2", "k": 5, "f": 64, "s": 1, "p": 2},
        {"kind": "pool", "window": 3, "s": 2},
        {"kind": "lrn"},
        {"kind": "conv", "name": "conv3", "k": 3, "f": 64, "s": 1, "p": 1},
        {"kind": "conv", "name": "conv4", "k": 3, "f": 64, "s": 1, "p": 1},
    ]


def _fc_widths(arch: Arch) -> list[tuple[str, int, bool]]:
    """(name, width, relu?) for the fully-connected tail."""
    if arch.variant == "alexnet_reduced":
        return [("fc1", 4096, True), ("fc2", EMBED_DIM, False)]
    return [("fc1", EMBED_DIM, False)]


def _out_side(side: int, k: int, s: int, p: int) -> int:
    return (side + 2 * p - k) // s + 1


def conv_stage_shape(arch: Arch, side: int) -> tuple[int, int]:
    """(channels, side) after the conv/pool stage, by symbolic propagation."""
    channels = 3
    for layer in _conv_layers(arch):
        if layer["kind"] == "conv":
            nxt = _out_side(side, layer["k"], layer["s"], layer["p"])
            channels = layer["f"]
        elif layer["kind"] == "pool":
            nxt = _out_side(side, layer["window"], layer["s"], 0)
        else:
            continue
        if nxt < 1:
            raise IncompatibleInputSize(
                f"{arch.variant}: input side {arch.input_side} collapses at "
                f"{layer.get('name', layer['kind'])}"
            )
        side = nxt
    return channels, side


def flat_feature_count(arch: Arch) -> int:
    """Features entering the first fully-connected layer."""
    channels, side = conv_stage_shape(arch, arch.input_side)
    if arch.spp_levels is not None:
        if side < arch.spp_levels:
            raise IncompatibleInputSize(
                f"spp level {arch.spp_levels} needs a {arch.spp_levels}x"
                f"{arch.spp_levels} map, got {side}x{side}"
            )
        return channels * sum(l * l for l in range(1, arch.spp_levels + 1))
    return channels * side * side


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def init_params(arch: Arch, rng: np.random.Generator, mode: str) -> dict[str, np.ndarray]:
    """Fan-in-scaled uniform weights, zero biases, in fixed layer order."""
    store: dict[str, np.ndarray] = {}
    in_ch = 3
    for layer in _conv_layers(arch):
        if layer["kind"] != "conv":
            continue
        shape = (layer["f"], in_ch, layer["k"], layer["k"])
        fan_in = in_ch * layer["k"] * layer["k"]
        store[f"column/{layer['name']}/w"] = _he_uniform(rng, shape, fan_in)
        store[f"column/{layer['name']}/b"] = np.zeros(layer["f"], dtype=np.float32)
        in_ch = layer["f"]
    width = flat_feature_count(arch)
    fcs = _fc_widths(arch)
    for i, (name, out_w, _) in enumerate(fcs):
        w = _he_uniform(rng, (width, out_w), width)
        if i == len(fcs) - 1:
            # Keep initial aesthetic scores O(1): the pairwise loss gradient
            # scales with the embedding norm, and a large initial norm drowns
            # the bounded classification gradient under global norm clipping.
            w *= 0.1
        store[f"column/{name}/w"] = w
        store[f"column/{name}/b"] = np.zeros(out_w, dtype=np.float32)
        width = out_w
    if mode == "paircomp_cate":
        store["heads/category/w"] = _he_uniform(rng, (EMBED_DIM, CATEGORY_COUNT), EMBED_DIM)
        store["heads/category/b"] = np.zeros(CATEGORY_COUNT, dtype=np.float32)
        store["heads/fusion/w"] = _he_uniform(rng, (2 * EMBED_DIM, EMBED_DIM), 2 * EMBED_DIM)
        store["heads/fusion/b"] = np.zeros(EMBED_DIM, dtype=np.float32)
    elif mode == "binary":
        store["heads/quality/w"] = _he_uniform(rng, (EMBED_DIM, 2), EMBED_DIM)
        store["heads/quality/b"] = np.zeros(2, dtype=np.float32)
    elif mode != "paircomp":
        raise ModelError(f"unknown mode {mode!r}")
    return store


class _Wire:
    """Builds paths inside one graph, registering each shared parameter once."""

    def __init__(self, g: Graph, store: dict[str, np.ndarray]):
        self.g = g
        self.store = store
        self._nodes: dict[str, int] = {}

    def param(self, name: str) -> int:
        if name not in self._nodes:
            self._nodes[name] = self.g.adopt_parameter(name, self.store)
        return self._nodes[name]

    def column(self, arch: Arch, x: int) -> int:
        g = self.g
        h = x
        for layer in _conv_layers(arch):
            if layer["kind"] == "conv":
                h = g.conv2d(h, self.param(f"column/{layer['name']}/w"),
                             self.param(f"column/{layer['name']}/b"),
                             stride=layer["s"], pad=layer["p"])
                h = g.relu(h)
            elif layer["kind"] == "pool":
                h = g.maxpool(h, layer["window"], layer["s"])
            else:
                h = g.lrn(h, size=arch.lrn_size, alpha=arch.lrn_alpha,
                          beta=arch.lrn_beta, k=arch.lrn_k)
        if arch.spp_levels is not None:
            h = g.spp(h, arch.spp_levels)
        for name, _, with_relu in _fc_widths(arch):
            h = g.fully_connected(h, self.param(f"column/{name}/w"),
                                  self.param(f"column/{name}/b"))
            if with_relu:
                h = g.relu(h)
        return h

    def category_logits(self, embedding: int) -> int:
        return self.g.fully_connected(embedding, self.param("heads/category/w"),
                                      self.param("heads/category/b"))

    def fusion(self, aesthetic: int, category: int) -> int:
        joint = self.g.concat(aesthetic, category)
        return self.g.fully_connected(joint, self.param("heads/fusion/w"),
                                      self.param("heads/fusion/b"))

    def quality_logits(self, embedding: int) -> int:
        return self.g.fully_connected(embedding, self.param("heads/quality/w"),
                                      self.param("heads/quality/b"))


class ColumnModel:
    """One parameter set plus the cached computation paths built over it."""

    def __init__(self, arch: Arch, params: dict[str, np.ndarray], mode: str):
        self.arch = arch
        self.params = params
        self.mode = mode
        self._cache: dict[str, tuple] = {}

    # -- path construction (cached; all paths share self.params) ----------

    def _built(self, key: str, build) -> tuple:
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def embed_path(self):
        def build():
            g = Graph()
            wire = _Wire(g, self.params)
            x = g.placeholder("x")
            return g, x, wire.column(self.arch, x)
        return self._built("embed", build)

    def classify_path(self):
        if "heads/category/w" not in self.params:
            raise NoCategoryHead("model was built without a category head")

        def build():
            g = Graph()
            wire = _Wire(g, self.params)
            x = g.placeholder("x")
            emb = wire.column(self.arch, x)
            return g, x, wire.category_logits(emb)
        return self._built("classify", build)

    def fuse_path(self):
        if "heads/fusion/w" not in self.params:
            raise MissingFusionLayer("model was built without a fusion layer")

        def build():
            g = Graph()
            wire = _Wire(g, self.params)
            fa = g.placeholder("aesthetic")
            fc = g.placeholder("category")
            return g, (fa, fc), wire.fusion(fa, fc)
        return self._built("fuse", build)

    def quality_path(self):
        if "heads/quality/w" not in self.params:
            raise ModelModeMismatch("model has no quality head (binary mode only)")

        def build():
            g = Graph()
            wire = _Wire(g, self.params)
            x = g.placeholder("x")
            emb = wire.column(self.arch, x)
            return g, x, wire.quality_logits(emb)
        return self._built("quality", build)

    def train_path(self, batch_size: int, lambda_cate: float = 1.0):
        """Training graph for the current mode at a fixed batch size.

        Returns (graph, loss node, named auxiliary nodes). The loss is the
        batch mean of the mode's objective.
        """
        key = f"train/{self.mode}/{batch_size}/{lambda_cate}"

        def build():
            g = Graph()
            wire = _Wire(g, self.params)
            inv = 1.0 / batch_size
            if self.mode == "paircomp":
                xp, xn = g.placeholder("xp"), g.placeholder("xn")
                fp = wire.column(self.arch, xp)
                fn = wire.column(self.arch, xn)
                loss = g.scale(objectives.attach_paircomp_loss(g, fp, fn), inv)
                return g, loss, {"fp": fp, "fn": fn}
            if self.mode == "paircomp_cate":
                xp, xn = g.placeholder("xp"), g.placeholder("xn")
                xref = g.placeholder("xref")
                labels = g.placeholder("labels")
                fp = wire.column(self.arch, xp)
                fn = wire.column(self.arch, xn)
                fref = wire.column(self.arch, xref)
                logits = wire.category_logits(fref)
                fused_p = wire.fusion(fp, fref)
                fused_n = wire.fusion(fn, fref)
                pair = objectives.attach_paircomp_loss(g, fused_p, fused_n)
                xent = objectives.attach_xent_loss(g, logits, labels)
                loss = g.scale(g.add(pair, g.scale(xent, lambda_cate)), inv)
                return g, loss, {"fp": fused_p, "fn": fused_n, "logits": logits}
            if self.mode == "binary":
                x = g.placeholder("x")
                labels = g.placeholder("labels")
                emb = wire.column(self.arch, x)
                logits = wire.quality_logits(emb)
                loss = g.scale(objectives.attach_xent_loss(g, logits, labels), inv)
                return g, loss, {"logits": logits}
            raise ModelError(f"unknown mode {self.mode!r}")
        return self._built(key, build)

    # -- inference ----------------------------------------------------------

    def _check_input_side(self, batch: np.ndarray):
        if self.arch.spp_levels is None and batch.shape[2:] != (self.arch.input_side,) * 2:
            raise IncompatibleInputSize(
                f"expected {self.arch.input_side}px inputs, got {batch.shape[2:]}"
            )

    def embed_batch(self, batch: np.ndarray) -> np.ndarray:
        self._check_input_side(batch)
        g, x, out = self.embed_path()
        return g.forward({"x": batch}).values[out]

    def category_logits_batch(self, batch: np.ndarray) -> np.ndarray:
        self._check_input_side(batch)
        g, x, out = self.classify_path()
        return g.forward({"x": batch}).values[out]

    def fuse_batch(self, aesthetic: np.ndarray, category: np.ndarray) -> np.ndarray:
        g, (fa, fc), out = self.fuse_path()
        return g.forward({"aesthetic": aesthetic, "category": category}).values[out]

    def quality_logits_batch(self, batch: np.ndarray) -> np.ndarray:
        self._check_input_side(batch)
        g, x, out = self.quality_path()
        return g.forward({"x": batch}).values[out]


def image_to_input(img: Image | np.ndarray) -> np.ndarray:
    """HWC [0,1] pixels to a zero-centred CHW network input."""
    px = img.pixels if isinstance(img, Image) else np.asarray(img)
    return (px.astype(np.float32) - 0.5).transpose(2, 0, 1)


def build_column(arch: Arch, rng: np.random.Generator, mode: str = "paircomp") -> ColumnModel:
    """Fresh model with fan-in-scaled initialization; identical seeds yield
    identical parameters."""
    flat_feature_count(arch)  # raises IncompatibleInputSize early
    return ColumnModel(arch, init_params(arch, rng, mode), mode)


def embed(model: ColumnModel, img: Image | np.ndarray) -> np.ndarray:
    """128-d aesthetic embedding of one (already sized) image."""
    x = img if isinstance(img, np.ndarray) and img.ndim == 3 and img.shape[0] == 3 \
        else image_to_input(img)
    return model.embed_batch(x[None])[0]


def classify_category(model: ColumnModel, ref: Image | np.ndarray) -> np.ndarray:
    """Probability vector over the 8 categories for a reference image."""
    x = ref if isinstance(ref, np.ndarray) and ref.ndim == 3 and ref.shape[0] == 3 \
        else image_to_input(ref)
    logits = model.category_logits_batch(x[None])[0]
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def fuse(model: ColumnModel, aesthetic: np.ndarray, category_repr: np.ndarray) -> np.ndarray:
    """Concatenate the two 128-d representations and project back to 128-d.

    The same weights serve both members of a pair, so fused scores stay
    comparable within a pair.
    """
    a = np.atleast_2d(np.asarray(aesthetic, dtype=np.float32))
    c = np.atleast_2d(np.asarray(category_repr, dtype=np.float32))
    if a.shape[1] != EMBED_DIM or c.shape[1] != EMBED_DIM:
        raise MissingFusionLayer(
            f"fusion expects {EMBED_DIM}-d inputs, got {a.shape} and {c.shape}"
        )
    out = model.fuse_batch(a, c)
    return out[0] if np.asarray(aesthetic).ndim == 1 else out


# -- persistence --------------------------------------------------------------


def save_model(path, model: ColumnModel, extra_meta: dict | None = None,
               extra_tensors: dict[str, np.ndarray] | None = None) -> None:
    meta = {
        "kind": "filtrank-model",
        "mode": model.mode,
        "arch": {
            "variant": model.arch.variant,
            "input_side": model.arch.input_side,
            "conv1_stride": model.arch.conv1_stride,
            "spp_levels": model.arch.spp_levels,
            "lrn_size": model.arch.lrn_size,
            "lrn_alpha": model.arch.lrn_alpha,
            "lrn_beta": model.arch.lrn_beta,
            "lrn_k": model.arch.lrn_k,
        },
    }
    if extra_meta:
        meta.update(extra_meta)
    tensors = dict(model.params)
    if extra_tensors:
        tensors.update(extra_tensors)
    save_checkpoint(path, tensors, meta)


def load_model(path) -> tuple[ColumnModel, dict, dict[str, np.ndarray]]:
    """Returns (model, meta, extra tensors that are not model parameters)."""
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "filtrank-model":
        raise ModelError(f"{path}: not a model checkpoint")
    arch = Arch(**meta["arch"])
    params = {k: v for k, v in tensors.items()
              if k.startswith("column/") or k.startswith("heads/")}
    extra = {k: v for k, v in tensors.items() if k not in params}
    return ColumnModel(arch, params, meta["mode"]), meta, extra
