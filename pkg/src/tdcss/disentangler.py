"""Feature disentanglement into a task-correlated and a task-independent
factor.

A shared extractor feeds two encoder branches. Three mechanisms shape
the split: an adversarial entropy step that makes the independent
branch uninformative about classes, a reconstruction path proving no
content was dropped, and a neural mutual-information lower bound
(Donsker-Varadhan form) that is maximized by its statistics net and
minimized through the encoders.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from . import numkernel as nk
from .errors import ConfigError, UsageError

MINE_MIN_BATCH = 8


@dataclass
class LatentPair:
    """One batch's two latent factors."""

    h_cor: np.ndarray
    h_ind: np.ndarray


class DisentangleNets:
    """Extractor, the two encoder branches, reconstructor, statistics net."""

    def __init__(self, extractor, cor, ind, recon, mi_net):
        self.extractor = extractor
        self.cor = cor
        self.ind = ind
        self.recon = recon
        self.mi_net = mi_net

    @classmethod
    def create(cls, rng, dims, dtype=np.float32):
        d = dims
        extractor = nk.Net.create(
            rng, [d.feature_dim, d.extractor_hidden, d.extractor_out],
            ["relu", "relu"], name="extractor", dtype=dtype)
        cor = nk.Net.create(
            rng, [d.extractor_out, d.encoder_hidden, d.latent_dim],
            ["relu", "relu"], name="cor_encoder", dtype=dtype)
        ind = nk.Net.create(
            rng, [d.extractor_out, d.encoder_hidden, d.latent_dim],
            ["relu", "relu"], name="ind_encoder", dtype=dtype)
        recon = nk.Net.create(
            rng, [2 * d.latent_dim, *d.recon_hidden, d.feature_dim],
            ["relu", "relu", "identity"], name="reconstructor", dtype=dtype)
        mi_net = nk.Net.create(
            rng, [2 * d.latent_dim, d.mine_hidden, 1],
            ["relu", "identity"], name="mi_net", dtype=dtype)
        return cls(extractor, cor, ind, recon, mi_net)

    def astype(self, dtype):
        return DisentangleNets(*(
            net.astype(dtype) if net is not None else None
            for net in (self.extractor, self.cor, self.ind, self.recon,
                        self.mi_net)))


def encode(x, nets: DisentangleNets):
    """x -> (LatentPair, cache for encode_backward)."""
    shared, c_shared = nets.extractor.forward(x)
    h_cor, c_cor = nets.cor.forward(shared)
    h_ind, c_ind = nets.ind.forward(shared)
    return LatentPair(h_cor, h_ind), (c_shared, c_cor, c_ind)


def encode_backward(nets: DisentangleNets, d_hcor, d_hind, cache):
    """Chain latent gradients back to the encoder groups.

    Either latent gradient may be None to skip that branch. Returns
    {"extractor": grads, "cor": grads or None, "ind": grads or None}.
    """
    c_shared, c_cor, c_ind = cache
    d_shared = None
    g_cor = g_ind = None
    if d_hcor is not None:
        d_shared, g_cor = nets.cor.backward(d_hcor, c_cor)
    if d_hind is not None:
        d2, g_ind = nets.ind.backward(d_hind, c_ind)
        d_shared = d2 if d_shared is None else d_shared + d2
    if d_shared is None:
        raise UsageError("encode_backward needs at least one latent gradient")
    _, g_ext = nets.extractor.backward(d_shared, c_shared)
    return {"extractor": g_ext, "cor": g_cor, "ind": g_ind}


def encode_cor(x, nets: DisentangleNets):
    """Task-correlated latent only, no backward cache (prediction path)."""
    shared, _ = nets.extractor.forward(x)
    h_cor, _ = nets.cor.forward(shared)
    return h_cor


def reconstruction_loss(x, pair: LatentPair, nets: DisentangleNets):
    """Mean squared reconstruction error of x from the concatenated
    factors. Returns (loss, recon grads, d_hcor, d_hind)."""
    n = x.shape[0]
    joint = np.concatenate([pair.h_cor, pair.h_ind], axis=1)
    x_hat, cache = nets.recon.forward(joint)
    diff = x_hat - x
    loss = float(np.sum(diff.astype(np.float64) ** 2)) / n
    d_xhat = (2.0 / n) * diff
    d_joint, g_recon = nets.recon.backward(d_xhat, cache)
    d = pair.h_cor.shape[1]
    return loss, g_recon, d_joint[:, :d], d_joint[:, d:]


def adversarial_entropy_loss(score_matrix):
    """Negative entropy of the per-row class softmax.

    Minimized (by the encoders, with the scorer frozen) at the uniform
    distribution, where it equals -ln(C). Returns (loss, d_scores).
    """
    scores = score_matrix.scores
    if scores.shape[1] < 2:
        raise ConfigError("entropy over a single class is degenerate")
    n = scores.shape[0]
    p = K.softmax_rows(np.ascontiguousarray(scores.astype(np.float64)))
    log_p = np.log(np.maximum(p, 1e-300))
    neg_ent_rows = np.sum(p * log_p, axis=1)
    loss = float(np.mean(neg_ent_rows))
    d_scores = p * (log_p - neg_ent_rows[:, None]) / n
    return loss, d_scores.astype(scores.dtype)


@dataclass
class MineResult:
    estimate: float          # Donsker-Varadhan lower bound, in nats
    stat_grads: list         # d(surrogate)/d(statistics-net params)
    d_hcor: np.ndarray       # d(surrogate)/d(h_cor)
    d_hind: np.ndarray       # d(surrogate)/d(h_ind)
    log_ema: float           # updated moving-average denominator, log space


def _log_mean_exp(t):
    m = t.max()
    return float(np.log(np.mean(np.exp(t - m))) + m)


def mine_loss(nets: DisentangleNets, pair: LatentPair, perm, log_ema,
              ema_decay=0.99):
    """Mutual-information lower bound between the two factors.

    Joint pairs are the batch as-is; marginal pairs reuse h_ind through
    the given in-batch permutation. The returned gradients are of the
    debiased surrogate (moving-average denominator on the exp term,
    tracked in log space so extreme statistics cannot under/overflow):
    the statistics net ascends them, the encoders descend them.
    """
    n = pair.h_cor.shape[0]
    if n < MINE_MIN_BATCH:
        raise UsageError(
            f"mutual-information estimation needs a batch of at least "
            f"{MINE_MIN_BATCH}, got {n}")
    joint = np.concatenate([pair.h_cor, pair.h_ind], axis=1)
    marg = np.concatenate([pair.h_cor, pair.h_ind[perm]], axis=1)
    t_joint, c_joint = nets.mi_net.forward(joint)
    t_marg, c_marg = nets.mi_net.forward(marg)

    tj = t_joint.ravel().astype(np.float64)
    tm = t_marg.ravel().astype(np.float64)
    lme = _log_mean_exp(tm)
    estimate = float(tj.mean() - lme)
    if log_ema is None:
        log_ema = lme
    else:
        log_ema = float(np.logaddexp(np.log(ema_decay) + log_ema,
                                     np.log(1 - ema_decay) + lme))

    dtype = t_joint.dtype
    d_tj = np.full((n, 1), 1.0 / n, dtype=dtype)
    # d/dt of -mean(exp t)/exp(log_ema), computed as a stable ratio
    d_tm = (np.exp(tm - log_ema) * (-1.0 / n))[:, None].astype(dtype)
    d_joint, g_j = nets.mi_net.backward(d_tj, c_joint)
    d_marg, g_m = nets.mi_net.backward(d_tm, c_marg)
    d = pair.h_cor.shape[1]
    d_hcor = d_joint[:, :d] + d_marg[:, :d]
    d_hind = d_joint[:, d:].copy()
    np.add.at(d_hind, perm, d_marg[:, d:])
    nk.ensure_finite("mine_loss", np.asarray(estimate), d_hcor, d_hind)
    return MineResult(estimate, nk.add_grads(g_j, g_m), d_hcor, d_hind,
                      log_ema)


def estimate_mi(x, z, steps=500, batch=512, hidden=256, lr=1e-3, seed=0,
                ema_decay=0.99, dtype=np.float64):
    """Train a fresh statistics net on paired samples and return the
    final lower-bound estimate evaluated on the full sample."""
    x = np.atleast_2d(np.asarray(x, dtype))
    z = np.atleast_2d(np.asarray(z, dtype))
    if x.shape[0] == 1:
        x, z = x.T, z.T
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    net = nk.Net.create(rng, [x.shape[1] + z.shape[1], hidden, 1],
                        ["relu", "identity"], name="mi_probe", dtype=dtype)
    opt = nk.Adam(net.params(), lr=lr)
    log_ema = None
    batch = min(batch, n)
    for _ in range(steps):
        idx = rng.choice(n, size=batch, replace=False)
        perm = rng.permutation(batch)
        pair = LatentPair(x[idx], z[idx])
        holder = DisentangleNets(None, None, None, None, net)
        res = mine_loss(holder, pair, perm, log_ema, ema_decay)
        log_ema = res.log_ema
        opt.step(nk.scale_grads(res.stat_grads, -1.0))  # ascend the bound
    t_joint, _ = net.forward(np.concatenate([x, z], axis=1))
    big_perm = rng.permutation(n)
    t_marg, _ = net.forward(np.concatenate([x, z[big_perm]], axis=1))
    tm = t_marg.ravel().astype(np.float64)
    lse = float(np.log(np.mean(np.exp(tm - tm.max()))) + tm.max())
    return float(t_joint.mean() - lse)
