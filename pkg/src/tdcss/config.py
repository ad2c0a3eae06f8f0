"""Flat key=value run configuration.

Precedence: built-in defaults < config file < TDCSS_* environment
variables < command-line overrides. Unknown keys in a file or an
override are rejected; the environment is shared with runtime toggles
(TDCSS_KERNELS), so unrecognized TDCSS_* names there are ignored.
"""

import hashlib
import json
import os

from .data import SynthConfig
from .errors import ConfigError
from .trainer import TrainConfig

# key -> (default, documentation)
DEFAULTS = {
    # synthetic data
    "n_seen": (12, "number of seen classes in the synthetic testbed"),
    "n_unseen": (4, "number of unseen classes"),
    "semantic_dim": (16, "per-class semantic vector width"),
    "feature_dim": (64, "observed feature width"),
    "samples_per_class": (200, "rows generated per class"),
    "task_signal_dim": (24, "width of the class-driven latent block"),
    "nuisance_dim": (24, "width of the class-independent latent block"),
    "noise_std": (0.1, "within-class noise on the task signal"),
    "test_frac": (0.1, "held-out fraction of each seen class"),
    # model
    "latent_dim": (0, "latent width; 0 derives it from feature_dim"),
    "compat_mode": ("mlp", "compatibility head: mlp or bilinear"),
    "paper_dims": (False, "use the published full-scale layer widths"),
    "mine_ema_decay": (0.99, "moving-average momentum for the MI bound"),
    # training
    "lr": (2e-4, "stage-1 learning rate"),
    "lr_stage2": (0.0, "stage-2 learning rate; 0 means lr/10"),
    "lr_mine": (1e-3, "statistics-net learning rate; 0 means lr"),
    "epochs": (200, "training epochs (each = stage 1 then stage 2)"),
    "batches_stage1": (30, "stage-1 batches per epoch"),
    "batches_stage2": (10, "stage-2 batches per epoch"),
    "batch_size": (64, "rows per batch (shrinks if data is scarcer)"),
    "n_target": (2, "seen classes held out as targets each epoch"),
    "n_edge": (2, "number of edge convert nets"),
    "eps_edge": (0.5, "edge offset budget, relative to mean latent norm"),
    "soft_temp": (1.0, "soft-label softmax temperature"),
    "soft_mode": ("softmax", "soft-label normalization: softmax or linear"),
    "lambda_rec": (1.0, "reconstruction loss weight"),
    "lambda_mine": (1.0, "mutual-information loss weight"),
    "lambda_adv": (1.0, "adversarial entropy loss weight"),
    "lambda_trans": (1.0, "transfer loss weight"),
    "lambda_di": (1.0, "domain-identifier loss weight"),
    "ablate_tfd": (False, "drop disentanglement; split the extractor output"),
    "ablate_eps": (False, "drop edge-pseudo synthesis"),
    "ablate_cps": (False, "drop center synthesis, transfer loss, domain id"),
    "rec_trains_encoders": (False, "reconstruction gradients also reach the encoders"),
    "cls_on_ind": (True, "classification loss also scores the independent "
                         "factor"),
    "fixed_split": (False, "reuse the epoch-0 source/target split"),
    "eval_every": (10, "evaluate every N epochs; 0 disables"),
    "fszu_shots": (0, "few-shot training rows per seen class; 0 = all"),
    "seed": (0, "master seed for data, init, and batching"),
}

ENV_PREFIX = "TDCSS_"


def _coerce(key, raw):
    default = DEFAULTS[key][0]
    if isinstance(default, bool):
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"key {key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key}: {exc}") from None
    return str(raw)


def parse_config_text(text, origin="<config>"):
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(
                f"{origin}:{lineno}: expected 'key = value', got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, raw)
    return out


def load_run_config(path=None, overrides=None, env=None):
    """Resolve the full configuration dict."""
    cfg = {key: default for key, (default, _) in DEFAULTS.items()}
    if path is not None:
        with open(path) as fh:
            cfg.update(parse_config_text(fh.read(), origin=str(path)))
    env = os.environ if env is None else env
    for name, raw in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if key in DEFAULTS:
            cfg[key] = _coerce(key, raw)
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = value if not isinstance(value, str) else _coerce(key, value)
    return cfg


def config_hash(cfg):
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def synth_config(cfg):
    return SynthConfig(
        n_seen=cfg["n_seen"], n_unseen=cfg["n_unseen"],
        semantic_dim=cfg["semantic_dim"], feature_dim=cfg["feature_dim"],
        samples_per_class=cfg["samples_per_class"],
        task_signal_dim=cfg["task_signal_dim"],
        nuisance_dim=cfg["nuisance_dim"], noise_std=cfg["noise_std"],
        test_frac=cfg["test_frac"], seed=cfg["seed"])


def train_config(cfg):
    return TrainConfig(
        lr=cfg["lr"], lr_stage2=cfg["lr_stage2"], lr_mine=cfg["lr_mine"],
        epochs=cfg["epochs"],
        batches_stage1=cfg["batches_stage1"],
        batches_stage2=cfg["batches_stage2"], batch_size=cfg["batch_size"],
        n_target=cfg["n_target"], n_edge=cfg["n_edge"],
        eps_edge=cfg["eps_edge"], soft_temp=cfg["soft_temp"],
        soft_mode=cfg["soft_mode"], lambda_rec=cfg["lambda_rec"],
        lambda_mine=cfg["lambda_mine"], lambda_adv=cfg["lambda_adv"],
        lambda_trans=cfg["lambda_trans"], lambda_di=cfg["lambda_di"],
        ablate_tfd=cfg["ablate_tfd"], ablate_eps=cfg["ablate_eps"],
        ablate_cps=cfg["ablate_cps"],
        rec_trains_encoders=cfg["rec_trains_encoders"],
        cls_on_ind=cfg["cls_on_ind"], fixed_split=cfg["fixed_split"],
        eval_every=cfg["eval_every"], seed=cfg["seed"],
        latent_dim=cfg["latent_dim"], compat_mode=cfg["compat_mode"],
        mine_ema_decay=cfg["mine_ema_decay"], paper_dims=cfg["paper_dims"],
        fszu_shots=cfg["fszu_shots"])


def describe_defaults():
    lines = ["key                    default      description"]
    for key, (default, doc) in DEFAULTS.items():
        lines.append(f"{key:22s} {default!r:12} {doc}")
    return "\n".join(lines)
