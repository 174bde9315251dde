"""Ranking and classification objectives.

The pairwise comparison loss drives the preferred image's squared-norm
aesthetic score above the rejected one's: for embeddings f_p and f_n the
loss is -(||f_p||^2 - ||f_n||^2), so minimizing it maximizes the score gap.
It is antisymmetric in its arguments and unbounded below, which is why the
trainer pairs it with weight decay and gradient clipping.

The multi-task form adds a softmax classification term for the reference
image's category, weighted by ``lam`` (1.0 keeps both tasks at unit weight).
"""
from __future__ import annotations

import numpy as np

from .autodiff import Graph


class ObjectiveError(Exception):
    pass


class NonFiniteValue(ObjectiveError):
    pass


class DimMismatch(ObjectiveError):
    pass


class LabelOutOfRange(ObjectiveError):
    pass


def aesthetic_score(f: np.ndarray) -> float:
    """Squared Euclidean norm of an embedding; always >= 0."""
    f = np.asarray(f, dtype=np.float64)
    if not np.isfinite(f).all():
        raise NonFiniteValue("embedding contains NaN/Inf")
    return float((f * f).sum())


def paircomp_loss(f_p: np.ndarray, f_n: np.ndarray) -> float:
    """Negative score difference -(||f_p||^2 - ||f_n||^2).

    Negative when the preferred image already scores higher; swapping the
    arguments negates the value.
    """
    f_p = np.asarray(f_p, dtype=np.float64)
    f_n = np.asarray(f_n, dtype=np.float64)
    if f_p.shape != f_n.shape:
        raise DimMismatch(f"pair members differ in shape: {f_p.shape} vs {f_n.shape}")
    return -(aesthetic_score(f_p) - aesthetic_score(f_n))


def paircomp_grads(f_p: np.ndarray, f_n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of paircomp_loss: (-2 f_p, +2 f_n)."""
    f_p = np.asarray(f_p, dtype=np.float64)
    f_n = np.asarray(f_n, dtype=np.float64)
    if f_p.shape != f_n.shape:
        raise DimMismatch(f"pair members differ in shape: {f_p.shape} vs {f_n.shape}")
    return -2.0 * f_p, 2.0 * f_n


def softmax_xent(logits: np.ndarray, label: int) -> float:
    """Cross-entropy -log softmax(logits)[label] for a single sample."""
    logits = np.asarray(logits, dtype=np.float64)
    if not (0 <= label < logits.shape[-1]):
        raise LabelOutOfRange(f"label {label} outside 0..{logits.shape[-1] - 1}")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[label])


def softmax_xent_grad(logits: np.ndarray, label: int) -> np.ndarray:
    """softmax(logits) minus the one-hot target."""
    logits = np.asarray(logits, dtype=np.float64)
    if not (0 <= label < logits.shape[-1]):
        raise LabelOutOfRange(f"label {label} outside 0..{logits.shape[-1] - 1}")
    z = logits - logits.max()
    p = np.exp(z) / np.exp(z).sum()
    p[label] -= 1.0
    return p


def multitask_loss(f_p: np.ndarray, f_n: np.ndarray, logits: np.ndarray,
                   label: int, lam: float = 1.0) -> float:
    """Pairwise comparison term plus lam times the category classification term."""
    return paircomp_loss(f_p, f_n) + lam * softmax_xent(logits, label)


# -- graph assembly ------------------------------------------------------------
# Helpers used by the training paths: the batched losses are built from graph
# primitives so gradients flow through the shared columns.


def attach_paircomp_loss(g: Graph, fp: int, fn: int) -> int:
    """Node computing sum_i -(||fp_i||^2 - ||fn_i||^2) over a batch of rows.

    The row-sum of squared norms over a batch equals the whole matrix's
    squared norm, so two sq_norm nodes suffice. Callers wanting a batch mean
    wrap the result in ``g.scale(node, 1 / batch)``.
    """
    return g.sub(g.sq_norm(fn), g.sq_norm(fp))


def attach_xent_loss(g: Graph, logits: int, labels: int) -> int:
    """Summed cross-entropy node (divide by batch outside, like the pair term)."""
    return g.softmax_xent(logits, labels)
