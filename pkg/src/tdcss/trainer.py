"""Two-stage alternating training schedule, ablation switches, and
checkpointing.

Stage 1 runs over a per-epoch split of the seen classes into sources
and targets: classification, the adversarial entropy step, the
reconstruction and mutual-information steps, pseudo-sample synthesis
with convert-net / compatibility / domain-identifier updates. Stage 2
treats seen classes as sources and unseen classes as targets, touching
only the center convert net and the compatibility head at a tenth of
the learning rate. Both stages run in every epoch, stage 1 first.

All randomness is re-derived per (seed, epoch, purpose), so a resumed
run replays exactly the same draws as an uninterrupted one.
"""

import hashlib
import json
import struct
import time
import zlib
from dataclasses import dataclass, field, asdict

import numpy as np

from . import compat as cp
from . import disentangler as dis
from . import numkernel as nk
from . import synthesis as sy
from .data import batch_stream, split_source_target, subsample_fszu
from .errors import ConfigError, FormatError, LeakageError, NumericError
from .evaluation import evaluate_gzsl
from .model import Model, ModelDims

CHECKPOINT_MAGIC = b"TDCK"
CHECKPOINT_VERSION = 1

_TAGS = {"init": 1, "split": 2, "source": 3, "target": 4, "pair": 5,
         "mine": 6, "s2batch": 7, "s2pair": 8, "fszu": 9, "geometry": 10}


def _rng(seed, epoch, tag):
    return np.random.default_rng([seed, epoch, _TAGS[tag]])


@dataclass
class TrainConfig:
    lr: float = 2e-4
    lr_stage2: float = 0.0        # 0 -> lr / 10
    lr_mine: float = 1e-3         # statistics net; 0 -> lr
    epochs: int = 200
    batches_stage1: int = 30
    batches_stage2: int = 10
    batch_size: int = 64
    n_target: int = 2
    n_edge: int = 2
    eps_edge: float = 0.5
    soft_temp: float = 1.0
    soft_mode: str = "softmax"
    lambda_rec: float = 1.0
    lambda_mine: float = 1.0
    lambda_adv: float = 1.0
    lambda_trans: float = 1.0
    lambda_di: float = 1.0
    ablate_tfd: bool = False
    ablate_eps: bool = False
    ablate_cps: bool = False
    rec_trains_encoders: bool = False
    cls_on_ind: bool = True
    fixed_split: bool = False
    eval_every: int = 10
    seed: int = 0
    latent_dim: int = 0           # 0 -> feature_dim (desk preset)
    compat_mode: str = "mlp"
    mine_ema_decay: float = 0.99
    paper_dims: bool = False
    fszu_shots: int = 0           # 0 -> all training rows

    def validate(self):
        if self.lr <= 0 or self.lr_stage2 < 0:
            raise ConfigError("learning rates must be positive")
        for name in ("epochs", "batches_stage1", "batches_stage2",
                     "batch_size", "n_target", "n_edge"):
            if getattr(self, name) < 0 or (getattr(self, name) == 0 and name
                                           not in ("epochs",)):
                raise ConfigError(f"{name} must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.eps_edge < 0:
            raise ConfigError("eps_edge must be >= 0")
        if self.soft_mode not in ("softmax", "linear"):
            raise ConfigError(f"unknown soft_mode {self.soft_mode!r}")
        if self.compat_mode not in ("mlp", "bilinear"):
            raise ConfigError(f"unknown compat_mode {self.compat_mode!r}")
        return self

    @property
    def stage2_lr(self):
        return self.lr_stage2 if self.lr_stage2 > 0 else self.lr / 10.0


@dataclass
class TrainReport:
    records: list = field(default_factory=list)   # per-epoch loss means
    evals: list = field(default_factory=list)     # periodic metric dicts
    wall_seconds: float = 0.0
    best_h: float = -1.0
    best_epoch: int = -1
    final_checkpoint_id: str = ""
    best_checkpoint_id: str = ""


def build_model(bundle, cfg: TrainConfig):
    if cfg.paper_dims:
        dims = ModelDims.paper(bundle.feature_dim, bundle.semantic_dim)
    else:
        dims = ModelDims.desk(bundle.feature_dim, bundle.semantic_dim,
                              cfg.latent_dim)
    return Model.create(
        _rng(cfg.seed, 0, "init"), dims, n_edge=cfg.n_edge,
        split_latent=cfg.ablate_tfd, with_center=not cfg.ablate_cps,
        with_edges=not cfg.ablate_eps, compat_mode=cfg.compat_mode)


def make_optimizers(model: Model, cfg: TrainConfig):
    return {name: nk.Adam(net.params(), lr=cfg.lr)
            for name, net in model.groups().items()}


def _step_group(opts, enc_grads, mapping):
    for key, opt_name in mapping.items():
        grads = enc_grads.get(key)
        if grads is not None:
            opts[opt_name].step(grads)


# --------------------------------------------------------------- stage 1

def step_classification(model, opts, cfg, x, y, semantics, seen_ids):
    """Compatibility cross-entropy on the latent factors.

    The task-correlated factor's loss updates the encoders and the
    head. The independent factor's loss updates the head only: the head
    must stay a competent class scorer on that factor for the entropy
    step to have anything to fool, but pulling the encoders toward
    class-separability there would fight the fooling objective head-on."""
    pair, cache = model.encode(x)
    sm, c_w = cp.compat_scores(model.compat, pair.h_cor, semantics, seen_ids)
    loss_cor, d_scores = cp.compat_ce_loss(sm, y)
    d_hcor, g_w = cp.compat_scores_backward(model.compat, d_scores, c_w)
    losses = {"cls_cor": loss_cor}
    if not model.split_latent and cfg.cls_on_ind:
        sm_i, c_wi = cp.compat_scores(model.compat, pair.h_ind, semantics,
                                      seen_ids)
        loss_ind, d_si = cp.compat_ce_loss(sm_i, y)
        _, g_w2 = cp.compat_scores_backward(model.compat, d_si, c_wi)
        g_w = nk.add_grads(g_w, g_w2)
        losses["cls_ind"] = loss_ind
    enc = model.encode_backward(d_hcor, None, cache)
    _step_group(opts, enc, {"extractor": "extractor", "cor": "cor"})
    opts["compat"].step(g_w)
    return losses


def step_adversarial(model, opts, cfg, x, semantics, source_ids):
    """Entropy-maximization on the independent factor's class scores;
    the compatibility head stays frozen."""
    pair, cache = model.encode(x)
    sm, c_w = cp.compat_scores(model.compat, pair.h_ind, semantics,
                               source_ids)
    loss, d_scores = dis.adversarial_entropy_loss(sm)
    d_hind, _ = cp.compat_scores_backward(
        model.compat, d_scores * d_scores.dtype.type(cfg.lambda_adv), c_w)
    enc = model.encode_backward(None, d_hind, cache)
    _step_group(opts, enc, {"extractor": "extractor", "ind": "ind"})
    return {"adv_entropy": loss}


def step_reconstruction(model, opts, cfg, x):
    pair, cache = model.encode(x)
    loss, g_recon, d_hcor, d_hind = dis.reconstruction_loss(
        x, pair, model.nets)
    opts["recon"].step(nk.scale_grads(g_recon, cfg.lambda_rec))
    if cfg.rec_trains_encoders:
        enc = model.encode_backward(
            d_hcor * d_hcor.dtype.type(cfg.lambda_rec),
            d_hind * d_hind.dtype.type(cfg.lambda_rec), cache)
        _step_group(opts, enc, {"extractor": "extractor", "cor": "cor",
                                "ind": "ind"})
    return {"rec": loss}


def step_mine(model, opts, cfg, x, perm):
    """Alternated mutual-information step: statistics net ascends the
    bound, then the encoders descend it against the updated net.

    The encoder half only runs while the bound is positive; mutual
    information cannot go below zero, so a non-positive bound carries
    no pressure and descending it just chases an unconverged critic."""
    pair, cache = model.encode(x)
    res = dis.mine_loss(model.nets, pair, perm, model.mine_ema,
                        cfg.mine_ema_decay)
    model.mine_ema = res.log_ema
    opts["mine"].step(nk.scale_grads(res.stat_grads, -1.0),
                      lr=cfg.lr_mine or cfg.lr)
    res2 = dis.mine_loss(model.nets, pair, perm, model.mine_ema,
                         cfg.mine_ema_decay)
    model.mine_ema = res2.log_ema
    if res2.estimate > 0:
        lam = cfg.lambda_mine
        enc = model.encode_backward(
            res2.d_hcor * res2.d_hcor.dtype.type(lam),
            res2.d_hind * res2.d_hind.dtype.type(lam), cache)
        _step_group(opts, enc, {"extractor": "extractor", "cor": "cor",
                                "ind": "ind"})
    return {"mi": res2.estimate}


def step_convert_train(model, opts, cfg, h_cor, y, tgt_assign, split,
                       semantics, seen_ids, source_ids):
    """Train the convert nets on their pseudo batches (encoders and
    compatibility head frozen)."""
    losses = {}
    src_cols = np.searchsorted(seen_ids, source_ids)
    if model.center is not None:
        pb, cache = sy.synth_center(h_cor, y, semantics, model.center,
                                    tgt_assign, split)
        sm, c_w = cp.compat_scores(model.compat, pb.vectors, semantics,
                                   seen_ids)
        loss_ce, d_scores = cp.compat_ce_loss(sm, pb.target_labels)
        soft = cp.soft_label_rows(
            semantics[source_ids], semantics[tgt_assign],
            cfg.soft_temp, cfg.soft_mode).astype(sm.scores.dtype)
        sm_src = cp.ScoreMatrix(np.ascontiguousarray(sm.scores[:, src_cols]),
                                source_ids)
        loss_tr, d_src = cp.transfer_loss(sm_src, soft)
        d_scores = d_scores.copy()
        d_scores[:, src_cols] += d_src * d_src.dtype.type(cfg.lambda_trans)
        d_h, _ = cp.compat_scores_backward(model.compat, d_scores, c_w)
        opts["center"].step(sy.offset_backward(model.center, d_h, cache))
        losses["center_ce"] = loss_ce
        losses["transfer"] = loss_tr
    edge_losses = []
    for k, net in enumerate(model.edges):
        pb, cache = sy.synth_edge(h_cor, y, semantics, net, tgt_assign,
                                  cfg.eps_edge, split)
        sm, c_w = cp.compat_scores(model.compat, pb.vectors, semantics,
                                   seen_ids)
        loss_e, d_scores = cp.compat_ce_loss(sm, pb.target_labels)
        d_h, _ = cp.compat_scores_backward(model.compat, d_scores, c_w)
        opts[f"edge{k}"].step(sy.offset_backward(net, d_h, cache))
        edge_losses.append(loss_e)
    if edge_losses:
        losses["edge_ce"] = float(np.mean(edge_losses))
    return losses


def step_compat_pseudo(model, opts, cfg, h_cor, y, tgt_assign, split,
                       semantics, seen_ids):
    """Update the compatibility head on freshly synthesized pseudo
    batches: center vectors keep their target labels, edge vectors are
    deliberately labeled as their source class."""
    vectors, labels = [], []
    center_pack = None
    if model.center is not None:
        pb, cache = sy.synth_center(h_cor, y, semantics, model.center,
                                    tgt_assign, split)
        vectors.append(pb.vectors)
        labels.append(pb.target_labels)
        center_pack = (pb, cache)
    for net in model.edges:
        pb, _ = sy.synth_edge(h_cor, y, semantics, net, tgt_assign,
                              cfg.eps_edge, split)
        vectors.append(pb.vectors)
        labels.append(pb.source_labels)
    if not vectors:
        return {}, None
    stacked = np.concatenate(vectors, axis=0)
    sm, c_w = cp.compat_scores(model.compat, stacked, semantics, seen_ids)
    loss, d_scores = cp.compat_ce_loss(sm, np.concatenate(labels))
    _, g_w = cp.compat_scores_backward(model.compat, d_scores, c_w)
    opts["compat"].step(g_w)
    return {"pseudo_ce": loss}, center_pack


def step_domain(model, opts, cfg, h_real_target, center_pack):
    """Domain-identifier update followed by the label-swapped fooling
    update of the center net. Edge batches stay out of this game."""
    pb, cache = center_pack
    loss_di, _, _, g_d = sy.domain_loss(model.domain, h_real_target,
                                        pb.vectors)
    opts["domain"].step(nk.scale_grads(g_d, cfg.lambda_di))
    loss_fool, _, d_pseudo, _ = sy.domain_loss(model.domain, h_real_target,
                                               pb.vectors, swap=True)
    g_center = sy.offset_backward(
        model.center, d_pseudo * d_pseudo.dtype.type(cfg.lambda_di), cache)
    opts["center"].step(g_center)
    return {"di": loss_di, "di_fool": loss_fool}


def stage1_epoch(model, opts, bundle, split, cfg: TrainConfig, epoch):
    """One pass of the source/target stage; returns mean losses."""
    if split.target_classes.size == 0:
        raise ConfigError("stage 1 needs a non-empty target split")
    semantics = bundle.semantics
    seen_ids = np.sort(np.concatenate([split.source_classes,
                                       split.target_classes]))
    source = batch_stream(bundle, split.source_classes, cfg.batch_size,
                          [cfg.seed, epoch, _TAGS["source"]])
    synth_on = model.center is not None or bool(model.edges)
    target = None
    if model.domain is not None:
        target = batch_stream(bundle, split.target_classes, cfg.batch_size,
                              [cfg.seed, epoch, _TAGS["target"]])
    pair_rng = _rng(cfg.seed, epoch, "pair")
    mine_rng = _rng(cfg.seed, epoch, "mine")

    sums, counts = {}, {}

    def tally(losses):
        for key, val in losses.items():
            sums[key] = sums.get(key, 0.0) + val
            counts[key] = counts.get(key, 0) + 1

    for _ in range(cfg.batches_stage1):
        x, y = next(source)
        tally(step_classification(model, opts, cfg, x, y, semantics,
                                  seen_ids))
        if not model.split_latent:
            tally(step_adversarial(model, opts, cfg, x, semantics,
                                   split.source_classes))
            tally(step_reconstruction(model, opts, cfg, x))
            tally(step_mine(model, opts, cfg, x,
                            mine_rng.permutation(x.shape[0])))
        if synth_on:
            h_cor = model.encode_cor(x)
            tgt_assign = pair_rng.choice(split.target_classes,
                                         size=x.shape[0])
            tally(step_convert_train(model, opts, cfg, h_cor, y, tgt_assign,
                                     split, semantics, seen_ids,
                                     split.source_classes))
            losses, center_pack = step_compat_pseudo(
                model, opts, cfg, h_cor, y, tgt_assign, split, semantics,
                seen_ids)
            tally(losses)
            if model.domain is not None and center_pack is not None:
                xt, _ = next(target)
                h_t = model.encode_cor(xt)
                tally(step_domain(model, opts, cfg, h_t, center_pack))
    return {k: sums[k] / counts[k] for k in sums}


# --------------------------------------------------------------- stage 2

def stage2_epoch(model, opts, bundle, cfg: TrainConfig, epoch):
    """Seen classes as sources, unseen classes as targets; only the
    center net and the compatibility head move, at a tenth of the rate.
    Unseen feature rows are never read."""
    semantics = bundle.semantics
    seen = bundle.seen_classes
    unseen = bundle.unseen_classes
    all_ids = np.arange(semantics.shape[0])
    stream = batch_stream(bundle, seen, cfg.batch_size,
                          [cfg.seed, epoch, _TAGS["s2batch"]])
    pair_rng = _rng(cfg.seed, epoch, "s2pair")
    lr2 = cfg.stage2_lr
    sums = {"s2_transfer": 0.0, "s2_ce": 0.0}
    for _ in range(cfg.batches_stage2):
        x, y = next(stream)
        if np.any(np.isin(y, unseen)):
            raise LeakageError(
                "stage 2 drew a batch containing unseen-class rows")
        h_cor = model.encode_cor(x)
        tgt = pair_rng.choice(unseen, size=x.shape[0])
        # transfer finetune of the center net
        pb, cache = sy.synth_center(h_cor, y, semantics, model.center, tgt)
        sm, c_w = cp.compat_scores(model.compat, pb.vectors, semantics, seen)
        soft = cp.soft_label_rows(semantics[seen], semantics[tgt],
                                  cfg.soft_temp,
                                  cfg.soft_mode).astype(sm.scores.dtype)
        loss_tr, d_scores = cp.transfer_loss(sm, soft)
        d_h, _ = cp.compat_scores_backward(
            model.compat, d_scores * d_scores.dtype.type(cfg.lambda_trans),
            c_w)
        opts["center"].step(sy.offset_backward(model.center, d_h, cache),
                            lr=lr2)
        # compatibility finetune over the full class table
        pb2, _ = sy.synth_center(h_cor, y, semantics, model.center, tgt)
        sm2, c_w2 = cp.compat_scores(model.compat, pb2.vectors, semantics,
                                     all_ids)
        loss_ce, d_s2 = cp.compat_ce_loss(sm2, pb2.target_labels)
        _, g_w = cp.compat_scores_backward(model.compat, d_s2, c_w2)
        opts["compat"].step(g_w, lr=lr2)
        sums["s2_transfer"] += loss_tr
        sums["s2_ce"] += loss_ce
    return {k: v / cfg.batches_stage2 for k, v in sums.items()}


# ----------------------------------------------------------------- train

def train(bundle, cfg: TrainConfig, out_dir=None, resume=None,
          progress=None):
    """Full run: per epoch a fresh source/target split, stage 1, then
    stage 2; periodic evaluation tracks the best-H checkpoint.

    Returns (model, TrainReport)."""
    cfg.validate()
    bundle.validate()
    if cfg.fszu_shots > 0:
        bundle = subsample_fszu(bundle, cfg.fszu_shots,
                                [cfg.seed, 0, _TAGS["fszu"]])
    start = time.perf_counter()
    report = TrainReport()
    start_epoch = 0
    if resume is not None:
        model, opts, meta = load_checkpoint(resume, with_optimizers=True)
        own = _config_echo(cfg)
        theirs = dict(meta["config"])
        for skip in ("epochs",):
            own.pop(skip, None)
            theirs.pop(skip, None)
        if own != theirs:
            raise ConfigError(
                "resume checkpoint was produced by a different configuration")
        start_epoch = meta["epochs_completed"]
        report.best_h = meta.get("best_h", -1.0)
        report.best_epoch = meta.get("best_epoch", -1)
    else:
        model = build_model(bundle, cfg)
        opts = make_optimizers(model, cfg)

    out_dir = _prep_dir(out_dir)
    for epoch in range(start_epoch, cfg.epochs):
        split_seed = [cfg.seed, 0 if cfg.fixed_split else epoch,
                      _TAGS["split"]]
        split = split_source_target(bundle, cfg.n_target, split_seed)
        record = {"epoch": epoch}
        record.update(stage1_epoch(model, opts, bundle, split, cfg, epoch))
        if model.center is not None:
            record.update(stage2_epoch(model, opts, bundle, cfg, epoch))
        for key, val in record.items():
            if key != "epoch" and not np.isfinite(val):
                raise NumericError(
                    f"loss term {key} became non-finite at epoch {epoch}")
        report.records.append(record)
        if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            metrics = evaluate_gzsl(model, bundle)
            entry = {"epoch": epoch, **metrics.to_dict()}
            report.evals.append(entry)
            if metrics.h > report.best_h:
                report.best_h = metrics.h
                report.best_epoch = epoch
                if out_dir is not None:
                    report.best_checkpoint_id = save_checkpoint(
                        model, opts, cfg, epoch + 1,
                        out_dir / "checkpoint_best.tdck",
                        best_h=report.best_h, best_epoch=report.best_epoch)
        if progress is not None:
            progress(epoch, record)
    report.wall_seconds = time.perf_counter() - start
    if out_dir is not None:
        report.final_checkpoint_id = save_checkpoint(
            model, opts, cfg, cfg.epochs, out_dir / "checkpoint_final.tdck",
            best_h=report.best_h, best_epoch=report.best_epoch)
    return model, report


def _prep_dir(out_dir):
    if out_dir is None:
        return None
    from pathlib import Path
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


# ----------------------------------------------------------- checkpoints

def _config_echo(cfg: TrainConfig):
    return asdict(cfg)


def config_digest(cfg_dict):
    canon = json.dumps(cfg_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _pack_entry(name, arr):
    arr = np.ascontiguousarray(arr, np.float32)
    blob = name.encode()
    head = struct.pack("<I", len(blob)) + blob
    head += struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(model: Model, opts, cfg: TrainConfig, epochs_completed,
                    path, best_h=-1.0, best_epoch=-1):
    """Serialize parameter groups (plus optimizer moments) with a CRC.

    Returns the content id (sha256 of the file)."""
    groups = model.groups()
    meta = {
        "config": _config_echo(cfg),
        "config_hash": config_digest(_config_echo(cfg)),
        "dims": model.dims.to_dict(),
        "split_latent": model.split_latent,
        "n_edge": len(model.edges),
        "with_center": model.center is not None,
        "with_edges": bool(model.edges),
        "compat_mode": model.compat.mode,
        "epochs_completed": int(epochs_completed),
        "mine_ema": model.mine_ema,
        "best_h": best_h,
        "best_epoch": best_epoch,
        "adam_t": {name: opts[name].t for name in groups} if opts else {},
        "has_optimizers": opts is not None,
    }
    entries = []
    for name, net in groups.items():
        for i, p in enumerate(net.params()):
            entries.append((f"{name}/p{i}", p))
        if opts:
            for i, m in enumerate(opts[name].m):
                entries.append((f"{name}/m{i}", m))
            for i, v in enumerate(opts[name].v):
                entries.append((f"{name}/v{i}", v))

    payload = bytearray()
    payload += struct.pack("<I", CHECKPOINT_VERSION)
    meta_blob = json.dumps(meta, sort_keys=True).encode()
    payload += struct.pack("<Q", len(meta_blob)) + meta_blob
    payload += struct.pack("<I", len(entries))
    for name, arr in entries:
        payload += _pack_entry(name, arr)
    blob = CHECKPOINT_MAGIC + bytes(payload) + struct.pack(
        "<I", zlib.crc32(bytes(payload)))
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()[:16]


def load_checkpoint(path, with_optimizers=False):
    """Rebuild (model, optimizers or None, meta) from a checkpoint."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(
            f"bad checkpoint magic {blob[:4]!r} at offset 0, expected "
            f"{CHECKPOINT_MAGIC!r}")
    if len(blob) < 8:
        raise FormatError("checkpoint truncated before version field")
    stored_crc, = struct.unpack("<I", blob[-4:])
    payload = blob[4:-4]
    actual = zlib.crc32(payload)
    if stored_crc != actual:
        raise FormatError(
            f"checkpoint checksum mismatch at offset {len(blob) - 4}: "
            f"stored {stored_crc:#010x}, computed {actual:#010x}")
    off = 0
    version, = struct.unpack_from("<I", payload, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    meta_len, = struct.unpack_from("<Q", payload, off)
    off += 8
    meta = json.loads(payload[off:off + meta_len].decode())
    off += meta_len
    n_entries, = struct.unpack_from("<I", payload, off)
    off += 4
    arrays = {}
    for _ in range(n_entries):
        name_len, = struct.unpack_from("<I", payload, off)
        off += 4
        name = payload[off:off + name_len].decode()
        off += name_len
        ndim, = struct.unpack_from("<I", payload, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", payload, off)
        off += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(payload, np.float32, count, off).reshape(shape)
        off += 4 * count
        arrays[name] = arr.copy()

    cfg = TrainConfig(**meta["config"])
    dims = ModelDims.from_dict(meta["dims"])
    model = Model.create(
        _rng(cfg.seed, 0, "init"), dims, n_edge=meta["n_edge"],
        split_latent=meta["split_latent"], with_center=meta["with_center"],
        with_edges=meta["with_edges"], compat_mode=meta["compat_mode"])
    model.mine_ema = meta["mine_ema"]
    opts = make_optimizers(model, cfg) if (
        with_optimizers and meta["has_optimizers"]) else None
    for name, net in model.groups().items():
        for i, p in enumerate(net.params()):
            stored = arrays.get(f"{name}/p{i}")
            if stored is None or stored.shape != p.shape:
                raise FormatError(
                    f"checkpoint entry {name}/p{i} missing or misshaped")
            p[...] = stored
        if opts is not None:
            opts[name].t = meta["adam_t"][name]
            for i in range(len(opts[name].m)):
                opts[name].m[i][...] = arrays[f"{name}/m{i}"]
                opts[name].v[i][...] = arrays[f"{name}/v{i}"]
    return model, opts, meta
