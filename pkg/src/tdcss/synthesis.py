"""Controllable pseudo-sample synthesis in latent space.

Convert nets turn a semantic difference (target class minus source
class) into an additive latent offset. Center offsets are unbounded and
trained to land inside the target class; edge offsets are norm-clipped
perturbations treated like feature-level adversarial examples. A binary
domain identifier distinguishes real latents from center-pseudo ones
and is fooled by label swap.
"""

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .errors import UsageError


@dataclass
class PseudoBatch:
    """Synthesized latents plus both label views.

    Center batches train and score under ``target_labels``. Edge
    batches are target-labeled while training their convert net but
    source-labeled while training the compatibility head, so both label
    sets ride along. ``source_rows`` keeps per-vector provenance (which
    real row the vector was grown from).
    """

    vectors: np.ndarray
    target_labels: np.ndarray
    source_labels: np.ndarray
    kind: str                   # "center" or "edge"
    source_rows: np.ndarray


def convert_net(rng, semantic_dim, latent_dim, hidden, dtype=np.float32,
                name="convert"):
    """Semantic difference -> latent offset, 3 layers."""
    return nk.Net.create(rng, [semantic_dim, *hidden, latent_dim],
                         ["relu", "relu", "identity"], name=name, dtype=dtype)


def domain_net(rng, latent_dim, hidden, dtype=np.float32):
    """Real/pseudo discriminator: 2 layers, leaky activations, 2 logits."""
    return nk.Net.create(rng, [latent_dim, hidden, 2],
                         ["leaky_relu", "identity"], name="domain_id",
                         dtype=dtype)


def edge_clip_limit(h_cor, eps_edge):
    """Offset norm budget: eps times the batch-mean real latent norm."""
    norms = np.linalg.norm(h_cor.astype(np.float64), axis=1)
    return float(eps_edge * norms.mean())


def clip_rows(offset, limit):
    """Rescale rows whose norm exceeds the limit onto the limit sphere."""
    norms = np.linalg.norm(offset.astype(np.float64), axis=1, keepdims=True)
    scale = np.where(norms > limit, limit / np.maximum(norms, 1e-300), 1.0)
    clipped = (offset * scale).astype(offset.dtype)
    return clipped, (offset, norms, scale, limit)


def clip_rows_backward(d_clipped, cache):
    """Exact gradient through the row rescale.

    Unclipped rows pass through; clipped rows see the Jacobian of
    o -> L*o/|o|, which is L/|o| * (I - o o^T / |o|^2).
    """
    offset, norms, scale, limit = cache
    d = (d_clipped * scale).astype(d_clipped.dtype)
    active = scale[:, 0] < 1.0
    if np.any(active):
        o = offset[active].astype(np.float64)
        g = d_clipped[active].astype(np.float64)
        nrm2 = (norms[active] ** 2)
        proj = (np.sum(o * g, axis=1, keepdims=True) / nrm2) * o
        d[active] = ((g - proj) * scale[active]).astype(d_clipped.dtype)
    return d


def _check_membership(labels, allowed, role):
    bad = ~np.isin(labels, allowed)
    if np.any(bad):
        raise UsageError(
            f"class {int(np.asarray(labels)[bad][0])} is not a {role} class "
            "in the current split")


def make_offset(net, semantics, target_labels, source_labels, clip_limit=None):
    """Offsets from semantic differences, one row per (target, source)
    pair. Edge usage passes a clip limit; returns (offset, cache)."""
    diff = semantics[target_labels] - semantics[source_labels]
    offset, net_cache = net.forward(np.ascontiguousarray(diff))
    clip_cache = None
    if clip_limit is not None:
        offset, clip_cache = clip_rows(offset, clip_limit)
    return offset, (net_cache, clip_cache)


def offset_backward(net, d_offset, cache):
    """Convert-net parameter grads for an offset gradient."""
    net_cache, clip_cache = cache
    if clip_cache is not None:
        d_offset = clip_rows_backward(d_offset, clip_cache)
    _, grads = net.backward(d_offset, net_cache)
    return grads


def synth_center(h_cor, source_labels, semantics, net, target_labels,
                 split=None):
    """Center-pseudo batch: h_cor plus an unbounded learned offset,
    labeled as the target class."""
    if split is not None:
        _check_membership(target_labels, split.target_classes, "target")
        _check_membership(source_labels, split.source_classes, "source")
    offset, cache = make_offset(net, semantics, target_labels, source_labels)
    batch = PseudoBatch(
        vectors=h_cor + offset,
        target_labels=np.asarray(target_labels, dtype=np.int64),
        source_labels=np.asarray(source_labels, dtype=np.int64),
        kind="center",
        source_rows=np.arange(h_cor.shape[0]),
    )
    return batch, cache


def synth_edge(h_cor, source_labels, semantics, net, target_labels,
               eps_edge, split=None):
    """Edge-pseudo batch: h_cor plus a norm-clipped offset."""
    if split is not None:
        _check_membership(target_labels, split.target_classes, "target")
        _check_membership(source_labels, split.source_classes, "source")
    limit = edge_clip_limit(h_cor, eps_edge)
    offset, cache = make_offset(net, semantics, target_labels, source_labels,
                                clip_limit=limit)
    batch = PseudoBatch(
        vectors=h_cor + offset,
        target_labels=np.asarray(target_labels, dtype=np.int64),
        source_labels=np.asarray(source_labels, dtype=np.int64),
        kind="edge",
        source_rows=np.arange(h_cor.shape[0]),
    )
    return batch, cache


REAL_DOMAIN = 1
PSEUDO_DOMAIN = 0


def domain_loss(net, h_real, h_pseudo, swap=False):
    """2-way softmax cross-entropy of the domain identifier.

    Real rows carry label 1 and pseudo rows label 0; ``swap`` exchanges
    the labels (the fooling direction for the center net). Returns
    (loss, d_real, d_pseudo, net param grads).
    """
    n_real, n_pseudo = h_real.shape[0], h_pseudo.shape[0]
    if n_real == 0 or n_pseudo == 0:
        raise UsageError("domain classification needs both real and pseudo "
                         "rows in the batch")
    stacked = np.concatenate([h_real, h_pseudo], axis=0)
    logits, cache = net.forward(stacked)
    labels = np.concatenate([
        np.full(n_real, REAL_DOMAIN, dtype=np.int64),
        np.full(n_pseudo, PSEUDO_DOMAIN, dtype=np.int64)])
    if swap:
        labels = 1 - labels
    loss, d_logits = nk.softmax_ce(logits, labels)
    d_stacked, grads = net.backward(d_logits, cache)
    return loss, d_stacked[:n_real], d_stacked[n_real:], grads
