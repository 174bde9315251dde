"""Reverse-mode automatic differentiation over dense numpy tensors.

A ``Graph`` is an append-only list of op records wired by node id, so the
node list is topologically ordered by construction. Parameters are named,
mutable slots shared by reference: several graphs may be built over one
parameter dict (e.g. an embedding path and a training path of the same
model), and in-place updates are visible to all of them.

``forward`` leaves the graph untouched and returns the activations in a
separate object, so concurrent forwards over shared read-only parameters are
safe. Inputs are checked for NaN/Inf on entry; intermediate checking is
opt-in (``check_finite=True``) because it costs a full pass per activation.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class AutodiffError(Exception):
    pass


class ShapeMismatch(AutodiffError):
    pass


class NonFiniteValue(AutodiffError):
    pass


class LossNotScalar(AutodiffError):
    pass


OP_KINDS = frozenset({
    "placeholder", "parameter", "conv2d", "maxpool", "relu",
    "fully_connected", "softmax_xent", "sq_norm", "sub", "add", "concat",
    "spp", "lrn", "scale",
})


@dataclass(frozen=True)
class Node:
    idx: int
    kind: str
    inputs: tuple[int, ...]
    attrs: dict = field(default_factory=dict)
    name: str | None = None  # placeholders and parameters only


class Activations:
    """Per-forward state: node values plus cached intermediates for backward."""

    def __init__(self, values: list, aux: dict):
        self.values = values
        self.aux = aux

    def __getitem__(self, node: int) -> np.ndarray:
        return self.values[node]


class Gradients:
    def __init__(self, by_node: dict[int, np.ndarray], params: dict[str, np.ndarray]):
        self.by_node = by_node
        self.params = params


class Graph:
    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Node] = []
        self.params: dict[str, np.ndarray] = {}
        self.placeholder_nodes: dict[str, int] = {}
        self.param_nodes: dict[str, int] = {}

    # -- construction -----------------------------------------------------

    def _append(self, kind: str, inputs: tuple[int, ...], attrs: dict | None = None,
                name: str | None = None) -> int:
        for i in inputs:
            if not (0 <= i < len(self.nodes)):
                raise AutodiffError(f"input node {i} does not exist")
        node = Node(len(self.nodes), kind, inputs, attrs or {}, name)
        self.nodes.append(node)
        return node.idx

    def placeholder(self, name: str) -> int:
        if name in self.placeholder_nodes:
            raise AutodiffError(f"duplicate placeholder {name!r}")
        idx = self._append("placeholder", (), name=name)
        self.placeholder_nodes[name] = idx
        return idx

    def parameter(self, name: str, value: np.ndarray) -> int:
        """Register a named parameter. The array is stored by reference when its
        dtype already matches, so in-place optimizer updates propagate."""
        if name in self.param_nodes:
            raise AutodiffError(f"duplicate parameter {name!r}")
        arr = np.asarray(value, dtype=self.dtype)
        if not np.isfinite(arr).all():
            raise NonFiniteValue(f"parameter {name!r} contains NaN/Inf")
        self.params[name] = arr
        idx = self._append("parameter", (), name=name)
        self.param_nodes[name] = idx
        return idx

    def adopt_parameter(self, name: str, store: dict[str, np.ndarray]) -> int:
        """Register a parameter backed by an external store (shared across graphs).

        When the store's dtype matches, the exact array object is kept so
        in-place updates are visible everywhere; otherwise this graph works
        on its own cast copy (e.g. float64 graphs for gradient checks).
        """
        idx = self.parameter(name, store[name])
        if store[name].dtype == self.dtype:
            self.params[name] = store[name]
        return idx

    def conv2d(self, x: int, w: int, b: int, stride: int = 1, pad: int = 0) -> int:
        return self._append("conv2d", (x, w, b), {"stride": stride, "pad": pad})

    def maxpool(self, x: int, window: int, stride: int) -> int:
        return self._append("maxpool", (x,), {"window": window, "stride": stride})

    def relu(self, x: int) -> int:
        return self._append("relu", (x,))

    def fully_connected(self, x: int, w: int, b: int) -> int:
        return self._append("fully_connected", (x, w, b))

    def softmax_xent(self, logits: int, labels: int) -> int:
        """Summed cross-entropy over the batch; gradient flows to logits only."""
        return self._append("softmax_xent", (logits, labels))

    def sq_norm(self, x: int) -> int:
        """Sum of squares over every element (a batch of rows sums over the batch too)."""
        return self._append("sq_norm", (x,))

    def sub(self, a: int, b: int) -> int:
        return self._append("sub", (a, b))

    def add(self, a: int, b: int) -> int:
        return self._append("add", (a, b))

    def concat(self, a: int, b: int) -> int:
        """Concatenate along the feature axis (axis 1)."""
        return self._append("concat", (a, b))

    def spp(self, x: int, levels: int) -> int:
        return self._append("spp", (x,), {"levels": levels})

    def lrn(self, x: int, size: int = 5, alpha: float = 1e-4, beta: float = 0.75,
            k: float = 1.0) -> int:
        return self._append("lrn", (x,), {"size": size, "alpha": alpha,
                                          "beta": beta, "k": k})

    def scale(self, x: int, factor: float) -> int:
        return self._append("scale", (x,), {"factor": factor})

    # -- execution ---------------------------------------------------------

    def forward(self, inputs: dict[str, np.ndarray], check_finite: bool = False) -> Activations:
        values: list = [None] * len(self.nodes)
        aux: dict = {}
        for node in self.nodes:
            if node.kind == "placeholder":
                try:
                    v = inputs[node.name]
                except KeyError:
                    raise ShapeMismatch(f"missing input {node.name!r}") from None
                v = np.asarray(v)
                if np.issubdtype(v.dtype, np.floating):
                    v = v.astype(self.dtype, copy=False)
                    if not np.isfinite(v).all():
                        raise NonFiniteValue(f"input {node.name!r} contains NaN/Inf")
                values[node.idx] = v
            elif node.kind == "parameter":
                values[node.idx] = self.params[node.name]
            else:
                v = _FORWARD[node.kind](node, values, aux)
                if check_finite and not np.isfinite(v).all():
                    raise NonFiniteValue(f"node {node.idx} ({node.kind}) produced NaN/Inf")
                values[node.idx] = v
        return Activations(values, aux)

    def backward(self, acts: Activations, loss_node: int) -> Gradients:
        loss = np.asarray(acts.values[loss_node])
        if loss.size != 1:
            raise LossNotScalar(f"loss node has shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss_node: np.ones((), dtype=self.dtype)}
        for node in reversed(self.nodes[: loss_node + 1]):
            g = grads.get(node.idx)
            if g is None or node.kind in ("placeholder", "parameter"):
                continue
            input_grads = _BACKWARD[node.kind](node, acts, g)
            for inp, ig in zip(node.inputs, input_grads):
                if ig is None:
                    continue
                if inp in grads:
                    grads[inp] = grads[inp] + ig
                else:
                    grads[inp] = ig
        param_grads = {}
        for name, idx in self.param_nodes.items():
            if idx <= loss_node and idx in grads:
                param_grads[name] = grads[idx]
            else:
                param_grads[name] = np.zeros_like(self.params[name])
        return Gradients(grads, param_grads)


# -- forward rules ----------------------------------------------------------

def _conv_fwd(node: Node, values, aux):
    x, w, b = (values[i] for i in node.inputs)
    s, p = node.attrs["stride"], node.attrs["pad"]
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d: x {x.shape} vs w {w.shape}")
    kh, kw = w.shape[2], w.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeMismatch(f"conv2d: input {x.shape} smaller than kernel {w.shape}")
    v = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    n, _, oh, ow = v.shape[0], v.shape[1], v.shape[2], v.shape[3]
    cols = np.ascontiguousarray(v.transpose(0, 2, 3, 1, 4, 5)).reshape(n * oh * ow, -1)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    aux[node.idx] = (cols, (n, oh, ow), xp.shape)
    return np.ascontiguousarray(out.reshape(n, oh, ow, w.shape[0]).transpose(0, 3, 1, 2))


def _conv_bwd(node: Node, acts, g):
    x, w, _ = (acts.values[i] for i in node.inputs)
    s, p = node.attrs["stride"], node.attrs["pad"]
    cols, (n, oh, ow), xp_shape = acts.aux[node.idx]
    f = w.shape[0]
    kh, kw = w.shape[2], w.shape[3]
    g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, f)
    dw = (cols.T @ g2).T.reshape(w.shape)
    db = g2.sum(axis=0)
    dcols = (g2 @ w.reshape(f, -1)).reshape(n, oh, ow, w.shape[1], kh, kw)
    dxp = np.zeros(xp_shape, dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + s * oh : s, j : j + s * ow : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, p : dxp.shape[2] - p, p : dxp.shape[3] - p] if p else dxp
    return dx, dw, db


def _maxpool_fwd(node: Node, values, aux):
    x = values[node.inputs[0]]
    k, s = node.attrs["window"], node.attrs["stride"]
    if x.shape[2] < k or x.shape[3] < k:
        raise ShapeMismatch(f"maxpool: input {x.shape} smaller than window {k}")
    v = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    flat = v.reshape(v.shape[:4] + (k * k,))
    # argmax returns the first maximum in (kh, kw) scan order: deterministic ties
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    aux[node.idx] = idx
    return out


def _maxpool_bwd(node: Node, acts, g):
    x = acts.values[node.inputs[0]]
    k, s = node.attrs["window"], node.attrs["stride"]
    idx = acts.aux[node.idx]
    n, c, h, w = x.shape
    oh, ow = idx.shape[2], idx.shape[3]
    rows = (np.arange(oh) * s).reshape(1, 1, oh, 1) + idx // k
    cols = (np.arange(ow) * s).reshape(1, 1, 1, ow) + idx % k
    flat_pos = (rows * w + cols).reshape(n * c, oh * ow)
    dx = np.zeros((n * c, h * w), dtype=g.dtype)
    np.add.at(dx, (np.arange(n * c)[:, None], flat_pos), g.reshape(n * c, oh * ow))
    return (dx.reshape(x.shape),)


def _relu_fwd(node: Node, values, aux):
    return np.maximum(values[node.inputs[0]], 0)


def _relu_bwd(node: Node, acts, g):
    x = acts.values[node.inputs[0]]
    return (g * (x > 0),)


def _fc_fwd(node: Node, values, aux):
    x, w, b = (values[i] for i in node.inputs)
    x2 = x.reshape(x.shape[0], -1) if x.ndim > 2 else x
    if x2.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"fully_connected: {x2.shape[1]} features vs weight {w.shape}")
    return x2 @ w + b


def _fc_bwd(node: Node, acts, g):
    x, w, _ = (acts.values[i] for i in node.inputs)
    x2 = x.reshape(x.shape[0], -1) if x.ndim > 2 else x
    dx = (g @ w.T).reshape(x.shape)
    dw = x2.T @ g
    db = g.sum(axis=0)
    return dx, dw, db


def _softmax_xent_fwd(node: Node, values, aux):
    logits, labels = (values[i] for i in node.inputs)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if logits.ndim != 2 or labels.shape[0] != logits.shape[0]:
        raise ShapeMismatch(f"softmax_xent: logits {logits.shape} vs labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ShapeMismatch("softmax_xent: label out of range")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(z.shape[0]), labels]
    probs = np.exp(z - lse[:, None])
    aux[node.idx] = (probs, labels)
    return np.asarray((lse - picked).sum(), dtype=logits.dtype)


def _softmax_xent_bwd(node: Node, acts, g):
    probs, labels = acts.aux[node.idx]
    d = probs.copy()
    d[np.arange(d.shape[0]), labels] -= 1.0
    return g * d, None


def _sq_norm_fwd(node: Node, values, aux):
    x = values[node.inputs[0]]
    return np.asarray((x * x).sum(), dtype=x.dtype)


def _sq_norm_bwd(node: Node, acts, g):
    x = acts.values[node.inputs[0]]
    return (2.0 * g * x,)


def _binary_elementwise_check(a, b, kind):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{kind}: {a.shape} vs {b.shape}")


def _sub_fwd(node: Node, values, aux):
    a, b = (values[i] for i in node.inputs)
    _binary_elementwise_check(a, b, "sub")
    return a - b


def _sub_bwd(node: Node, acts, g):
    return g, -g


def _add_fwd(node: Node, values, aux):
    a, b = (values[i] for i in node.inputs)
    _binary_elementwise_check(a, b, "add")
    return a + b


def _add_bwd(node: Node, acts, g):
    return g, g


def _concat_fwd(node: Node, values, aux):
    a, b = (values[i] for i in node.inputs)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"concat: {a.shape} vs {b.shape}")
    aux[node.idx] = a.shape[1]
    return np.concatenate([a, b], axis=1)


def _concat_bwd(node: Node, acts, g):
    split = acts.aux[node.idx]
    return g[:, :split], g[:, split:]


def _spp_bins(extent: int, level: int):
    # SPP-style bins: cover the whole extent, may overlap by one cell
    return [(int(np.floor(i * extent / level)), int(np.ceil((i + 1) * extent / level)))
            for i in range(level)]


def _spp_fwd(node: Node, values, aux):
    x = values[node.inputs[0]]
    levels = node.attrs["levels"]
    n, c, h, w = x.shape
    if h < levels or w < levels:
        raise ShapeMismatch(f"spp: input {x.shape} smaller than finest grid {levels}")
    chunks = []
    argmaxes = []
    for level in range(1, levels + 1):
        rbins = _spp_bins(h, level)
        cbins = _spp_bins(w, level)
        pooled = np.empty((n, c, level, level), dtype=x.dtype)
        marks = []
        for bi, (r0, r1) in enumerate(rbins):
            for bj, (c0, c1) in enumerate(cbins):
                patch = x[:, :, r0:r1, c0:c1].reshape(n, c, -1)
                am = patch.argmax(axis=-1)
                pooled[:, :, bi, bj] = np.take_along_axis(patch, am[..., None], axis=-1)[..., 0]
                marks.append((r0, r1, c0, c1, am))
        chunks.append(pooled.reshape(n, -1))
        argmaxes.append(marks)
    aux[node.idx] = argmaxes
    return np.concatenate(chunks, axis=1)


def _spp_bwd(node: Node, acts, g):
    x = acts.values[node.inputs[0]]
    levels = node.attrs["levels"]
    n, c, h, w = x.shape
    dx = np.zeros((n * c, h * w), dtype=g.dtype)
    offset = 0
    rowsel = np.arange(n * c)
    for level, marks in zip(range(1, levels + 1), acts.aux[node.idx]):
        block = g[:, offset : offset + c * level * level].reshape(n, c, level, level)
        offset += c * level * level
        for (r0, r1, c0, c1, am), (bi, bj) in zip(
            marks, [(i, j) for i in range(level) for j in range(level)]
        ):
            bw = c1 - c0
            flat = ((r0 + am // bw) * w + (c0 + am % bw)).reshape(n * c)
            np.add.at(dx, (rowsel, flat), block[:, :, bi, bj].reshape(n * c))
    return (dx.reshape(x.shape),)


def _lrn_window_sum(t: np.ndarray, size: int) -> np.ndarray:
    c = t.shape[1]
    half = size // 2
    cs = np.concatenate([np.zeros_like(t[:, :1]), np.cumsum(t, axis=1)], axis=1)
    lo = np.clip(np.arange(c) - half, 0, c)
    hi = np.clip(np.arange(c) + half + 1, 0, c)
    return cs[:, hi] - cs[:, lo]


def _lrn_fwd(node: Node, values, aux):
    x = values[node.inputs[0]]
    a = node.attrs
    denom = a["k"] + (a["alpha"] / a["size"]) * _lrn_window_sum(x * x, a["size"])
    aux[node.idx] = denom
    return x * denom ** (-a["beta"])


def _lrn_bwd(node: Node, acts, g):
    x = acts.values[node.inputs[0]]
    a = node.attrs
    denom = acts.aux[node.idx]
    t = g * x * denom ** (-a["beta"] - 1.0)
    dx = g * denom ** (-a["beta"]) - (2.0 * a["alpha"] * a["beta"] / a["size"]) * x * _lrn_window_sum(t, a["size"])
    return (dx,)


def _scale_fwd(node: Node, values, aux):
    return values[node.inputs[0]] * node.attrs["factor"]


def _scale_bwd(node: Node, acts, g):
    return (g * node.attrs["factor"],)


_FORWARD = {
    "conv2d": _conv_fwd, "maxpool": _maxpool_fwd, "relu": _relu_fwd,
    "fully_connected": _fc_fwd, "softmax_xent": _softmax_xent_fwd,
    "sq_norm": _sq_norm_fwd, "sub": _sub_fwd, "add": _add_fwd,
    "concat": _concat_fwd, "spp": _spp_fwd, "lrn": _lrn_fwd,
    "scale": _scale_fwd,
}

_BACKWARD = {
    "conv2d": _conv_bwd, "maxpool": _maxpool_bwd, "relu": _relu_bwd,
    "fully_connected": _fc_bwd, "softmax_xent": _softmax_xent_bwd,
    "sq_norm": _sq_norm_bwd, "sub": _sub_bwd, "add": _add_bwd,
    "concat": _concat_bwd, "spp": _spp_bwd, "lrn": _lrn_bwd,
    "scale": _scale_bwd,
}


def grad_check(g: Graph, inputs: dict[str, np.ndarray], loss_node: int,
               n_samples: int = 100, h: float = 1e-5,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients
    over a random sample of parameter coordinates.

    Requires a float64 graph: in single precision the finite differences are
    dominated by rounding noise. Reports rather than raising: the return value
    is the worst relative error seen.
    """
    if g.dtype != np.float64:
        raise AutodiffError("grad_check needs a float64 graph")
    rng = rng or np.random.default_rng(0)

    acts = g.forward(inputs, check_finite=True)
    analytic = g.backward(acts, loss_node).params

    coords = []
    for name, arr in g.params.items():
        coords.extend((name, i) for i in range(arr.size))
    if len(coords) > n_samples:
        picked = rng.choice(len(coords), size=n_samples, replace=False)
        coords = [coords[i] for i in picked]

    worst = 0.0
    for name, flat_idx in coords:
        arr = g.params[name]
        orig = arr.flat[flat_idx]
        arr.flat[flat_idx] = orig + h
        lp = float(g.forward(inputs).values[loss_node])
        arr.flat[flat_idx] = orig - h
        lm = float(g.forward(inputs).values[loss_node])
        arr.flat[flat_idx] = orig
        numeric = (lp - lm) / (2.0 * h)
        a = float(analytic[name].flat[flat_idx])
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst


# -- checkpoint container ----------------------------------------------------

_CKPT_MAGIC = b"FRCP"
_CKPT_VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    """Versioned binary container: magic, version, JSON manifest, raw payloads.

    Round trips bit-exactly. Written atomically (tmp file + rename).
    """
    entries = []
    payload = bytearray()
    for name, arr in tensors.items():
        raw = np.ascontiguousarray(arr).tobytes()
        entries.append({
            "name": name,
            "dtype": str(arr.dtype),
            "shape": list(arr.shape),
            "offset": len(payload),
            "nbytes": len(raw),
        })
        payload.extend(raw)
    manifest = json.dumps({"meta": meta or {}, "tensors": entries},
                          sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(_CKPT_VERSION.to_bytes(4, "little"))
        fh.write(len(manifest).to_bytes(8, "little"))
        fh.write(manifest)
        fh.write(bytes(payload))
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise AutodiffError(f"{path}: not a checkpoint file")
        version = int.from_bytes(fh.read(4), "little")
        if version != _CKPT_VERSION:
            raise AutodiffError(f"{path}: unsupported checkpoint version {version}")
        mlen = int.from_bytes(fh.read(8), "little")
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        payload = fh.read()
    tensors = {}
    for e in manifest["tensors"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
        tensors[e["name"]] = arr
    return tensors, manifest["meta"]
