"""Compatibility scoring against class-semantic tables.

A latent vector is projected into semantic space and scored by inner
product with each class's semantic vector; prediction is the argmax
over the scored classes. Hard-label, soft-label (transfer) losses, and
the cosine soft-label construction live here too.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from . import numkernel as nk
from .errors import (ConfigError, DataError, LabelRangeError, ShapeError,
                     UsageError)


@dataclass
class ScoreMatrix:
    """Batch scores against an ordered class list."""

    scores: np.ndarray     # (n, C)
    class_ids: np.ndarray  # (C,) int64, strictly increasing

    def __post_init__(self):
        if self.scores.ndim != 2 or self.scores.shape[1] != self.class_ids.size:
            raise ShapeError(
                f"score matrix {self.scores.shape} vs {self.class_ids.size} "
                "class ids")
        if self.class_ids.size < 2:
            raise ConfigError("scoring needs at least 2 classes")

    def columns_for(self, labels):
        """Map class ids to score columns; unknown ids are an error."""
        cols = np.searchsorted(self.class_ids, labels)
        cols = np.clip(cols, 0, self.class_ids.size - 1)
        bad = self.class_ids[cols] != labels
        if np.any(bad):
            missing = int(np.asarray(labels)[bad][0])
            raise LabelRangeError(
                f"label {missing} is not among the scored classes")
        return cols


class CompatHead:
    """Projection net from latent space to semantic space.

    ``mlp`` mode is a 3-layer net; ``bilinear`` mode is a single
    bias-free matrix, giving the classic bilinear score h·W·a.
    """

    def __init__(self, net, mode="mlp"):
        self.net = net
        self.mode = mode

    @classmethod
    def create(cls, rng, latent_dim, semantic_dim, hidden=(1024, 512),
               mode="mlp", dtype=np.float32):
        if mode == "mlp":
            net = nk.Net.create(
                rng, [latent_dim, *hidden, semantic_dim],
                ["relu"] * len(hidden) + ["identity"], name="compat",
                dtype=dtype)
        elif mode == "bilinear":
            net = nk.Net.create(rng, [latent_dim, semantic_dim], ["identity"],
                                name="compat", dtype=dtype, use_bias=False)
        else:
            raise ConfigError(f"unknown compat mode {mode!r}")
        return cls(net, mode)

    def astype(self, dtype):
        return CompatHead(self.net.astype(dtype), self.mode)


def compat_scores(head: CompatHead, h, semantics, class_ids):
    """Score a latent batch against semantic rows.

    Returns (ScoreMatrix, cache); the cache feeds
    :func:`compat_scores_backward`.
    """
    table = np.ascontiguousarray(semantics[class_ids])
    if table.shape[1] != head.net.out_dim:
        raise ShapeError(
            f"semantic rows have dim {table.shape[1]} but the head ends in "
            f"{head.net.out_dim}")
    proj, net_cache = head.net.forward(h)
    scores = proj @ table.T
    sm = ScoreMatrix(scores, np.asarray(class_ids, dtype=np.int64))
    return sm, (net_cache, table)


def compat_scores_backward(head: CompatHead, d_scores, cache):
    """Backprop scores to (grad wrt latent input, head param grads)."""
    net_cache, table = cache
    d_proj = d_scores @ table
    return head.net.backward(d_proj, net_cache)


def compat_ce_loss(sm: ScoreMatrix, labels):
    """Mean cross-entropy of the score softmax against class-id labels."""
    cols = sm.columns_for(np.asarray(labels, dtype=np.int64))
    return nk.softmax_ce(sm.scores, cols)


def transfer_loss(sm: ScoreMatrix, soft_rows):
    """Cross-entropy against one soft distribution per row."""
    soft_rows = np.asarray(soft_rows)
    if soft_rows.shape != sm.scores.shape:
        raise UsageError(
            f"soft labels {soft_rows.shape} do not match scores "
            f"{sm.scores.shape}")
    return nk.softmax_ce(sm.scores, soft_rows)


def _unit_rows(vectors, what):
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise DataError(f"zero-norm semantic vector in {what}")
    return vectors / norms


def soft_label_rows(source_semantics, target_rows, temperature=1.0,
                    mode="softmax"):
    """Distributions over source classes by semantic cosine similarity.

    One probability row per target row; ``softmax`` applies a tempered
    softmax over the cosines, ``linear`` renormalizes the non-negative
    part.
    """
    src = _unit_rows(source_semantics, "source semantics")
    tgt = _unit_rows(np.atleast_2d(target_rows), "target semantics")
    cos = tgt @ src.T
    if mode == "softmax":
        if temperature <= 0:
            raise ConfigError(f"soft-label temperature must be > 0, "
                              f"got {temperature}")
        out = K.softmax_rows(np.ascontiguousarray(cos / temperature))
    elif mode == "linear":
        clipped = np.maximum(cos, 0.0)
        sums = clipped.sum(axis=1, keepdims=True)
        flat = sums[:, 0] == 0
        clipped[flat] = 1.0  # all-negative cosines: fall back to uniform
        out = clipped / clipped.sum(axis=1, keepdims=True)
    else:
        raise ConfigError(f"unknown soft-label mode {mode!r}")
    return out


def soft_labels(source_semantics, target_row, temperature=1.0,
                mode="softmax"):
    """Single-row convenience wrapper around :func:`soft_label_rows`."""
    return soft_label_rows(source_semantics, target_row, temperature,
                           mode)[0]


def predict_from_latent(head: CompatHead, h, semantics, class_ids):
    """Argmax compatibility over the given classes; ties go to the
    lowest class id."""
    class_ids = np.sort(np.asarray(class_ids, dtype=np.int64))
    sm, _ = compat_scores(head, h, semantics, class_ids)
    return class_ids[np.argmax(sm.scores, axis=1)]
