"""Dataset model, synthetic confounded-feature generator, bundle I/O,
class splits, few-shot subsampling, and batching.

A bundle holds one recognition problem: row features, integer labels,
one semantic vector per class, and the seen/unseen class registry.
Class ids are dense (0..C-1) and double as row indices into the
semantics matrix. Seen-class rows carry an in-memory train/test mark;
the on-disk format has no such field, so loaders re-derive it from file
order (last ``test_frac`` rows of each seen class are the held-out
portion, exactly how the generator lays them out).
"""

import csv
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError

BUNDLE_MAGIC = b"ZSLB"
BUNDLE_VERSION = 1
DEFAULT_TEST_FRAC = 0.1


@dataclass
class SynthConfig:
    """Knobs for the synthetic confounded-feature testbed."""

    n_seen: int = 12
    n_unseen: int = 4
    semantic_dim: int = 16
    feature_dim: int = 64
    samples_per_class: int = 200
    task_signal_dim: int = 24
    nuisance_dim: int = 24
    noise_std: float = 0.1
    test_frac: float = DEFAULT_TEST_FRAC
    seed: int = 0

    def validate(self):
        counts = {
            "n_seen": self.n_seen, "n_unseen": self.n_unseen,
            "semantic_dim": self.semantic_dim, "feature_dim": self.feature_dim,
            "samples_per_class": self.samples_per_class,
            "task_signal_dim": self.task_signal_dim,
            "nuisance_dim": self.nuisance_dim,
        }
        for name, value in counts.items():
            if value < 1:
                raise ConfigError(f"{name} must be >= 1, got {value}")
        if self.task_signal_dim + self.nuisance_dim > self.feature_dim:
            raise ConfigError(
                f"task_signal_dim + nuisance_dim = "
                f"{self.task_signal_dim + self.nuisance_dim} exceeds "
                f"feature_dim = {self.feature_dim}")
        if not 0.0 <= self.test_frac < 1.0:
            raise ConfigError(f"test_frac must be in [0, 1), got {self.test_frac}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")


@dataclass
class DatasetBundle:
    features: np.ndarray        # (N, D_x) float32
    labels: np.ndarray          # (N,) int64
    semantics: np.ndarray       # (S+U, D_a) float32, row k = class k
    seen_classes: np.ndarray    # (S,) int64, sorted
    unseen_classes: np.ndarray  # (U,) int64, sorted
    test_mask: np.ndarray       # (N,) bool; True = held out from training

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def semantic_dim(self):
        return self.semantics.shape[1]

    @property
    def n_train(self):
        return int((~self.test_mask).sum())

    def train_indices(self, class_filter=None):
        keep = ~self.test_mask
        if class_filter is not None:
            keep &= np.isin(self.labels, np.asarray(list(class_filter)))
        return np.flatnonzero(keep)

    def test_indices(self):
        return np.flatnonzero(self.test_mask)

    def validate(self):
        seen = set(self.seen_classes.tolist())
        unseen = set(self.unseen_classes.tolist())
        if seen & unseen:
            raise DataError(f"seen/unseen class sets overlap: {seen & unseen}")
        n_classes = self.semantics.shape[0]
        if seen | unseen != set(range(n_classes)):
            raise DataError(
                "class ids must densely cover 0..C-1 and match the "
                f"semantics row count {n_classes}")
        members = np.unique(self.labels)
        if members.size and (members.min() < 0 or members.max() >= n_classes):
            raise DataError(f"labels outside 0..{n_classes - 1} present")
        if not np.all(np.isfinite(self.semantics)):
            raise DataError("semantic matrix contains non-finite values")
        norms = np.linalg.norm(self.semantics.astype(np.float64), axis=1)
        if np.any(norms == 0):
            bad = int(np.flatnonzero(norms == 0)[0])
            raise DataError(f"semantic vector of class {bad} is all zero")
        if self.test_mask.shape != (self.n_rows,):
            raise DataError("test_mask length does not match row count")
        return self


@dataclass
class SourceTargetSplit:
    """One epoch's partition of the seen classes."""

    source_classes: np.ndarray
    target_classes: np.ndarray
    seed: int = 0


@dataclass
class SynthFactors:
    """Ground-truth latent factors, kept for probe calibration tests."""

    task_signal: np.ndarray
    nuisance: np.ndarray


def _train_count(m, test_frac):
    n_test = int(round(m * test_frac))
    if test_frac > 0:
        n_test = min(max(n_test, 1), m - 1)
    return m - n_test


def generate_synthetic(cfg: SynthConfig, return_factors=False):
    """Build a confounded-feature bundle.

    Per class, a semantic vector a_k is drawn uniformly from [0,1]^D_a.
    Each sample's task signal is a fixed random linear image of a_k plus
    Gaussian noise; its nuisance block is class-independent noise; the
    observed feature is an orthonormal mixing of the two blocks, so the
    class evidence is recoverable but entangled with the nuisance.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n_classes = cfg.n_seen + cfg.n_unseen
    semantics = rng.uniform(0.0, 1.0, size=(n_classes, cfg.semantic_dim))
    sem_to_signal = rng.normal(
        size=(cfg.semantic_dim, cfg.task_signal_dim)) / np.sqrt(cfg.semantic_dim)
    gauss = rng.normal(
        size=(cfg.feature_dim, cfg.task_signal_dim + cfg.nuisance_dim))
    mixing, _ = np.linalg.qr(gauss)  # orthonormal columns: well conditioned

    m = cfg.samples_per_class
    feats, labels, mask = [], [], []
    signals, nuisances = [], []
    for k in range(n_classes):
        t = semantics[k] @ sem_to_signal + cfg.noise_std * rng.normal(
            size=(m, cfg.task_signal_dim))
        nuis = rng.normal(size=(m, cfg.nuisance_dim))
        x = np.concatenate([t, nuis], axis=1) @ mixing.T
        feats.append(x)
        labels.append(np.full(m, k, dtype=np.int64))
        if k < cfg.n_seen:
            n_train = _train_count(m, cfg.test_frac)
            cls_mask = np.zeros(m, dtype=bool)
            cls_mask[n_train:] = True  # train rows first, held-out rows last
        else:
            cls_mask = np.ones(m, dtype=bool)
        mask.append(cls_mask)
        signals.append(t)
        nuisances.append(nuis)

    bundle = DatasetBundle(
        features=np.concatenate(feats).astype(np.float32),
        labels=np.concatenate(labels),
        semantics=semantics.astype(np.float32),
        seen_classes=np.arange(cfg.n_seen, dtype=np.int64),
        unseen_classes=np.arange(cfg.n_seen, n_classes, dtype=np.int64),
        test_mask=np.concatenate(mask),
    ).validate()
    if return_factors:
        factors = SynthFactors(
            task_signal=np.concatenate(signals).astype(np.float32),
            nuisance=np.concatenate(nuisances).astype(np.float32),
        )
        return bundle, factors
    return bundle


def save_bundle(bundle: DatasetBundle, path):
    """Write the binary bundle format; returns the byte count."""
    n = bundle.n_rows
    s = bundle.seen_classes.size
    u = bundle.unseen_classes.size
    payload = bytearray()
    payload += struct.pack("<I", BUNDLE_VERSION)
    payload += struct.pack("<5Q", n, bundle.feature_dim, s, u,
                           bundle.semantic_dim)
    payload += np.ascontiguousarray(bundle.features, np.float32).tobytes()
    payload += np.ascontiguousarray(bundle.labels, np.uint32).tobytes()
    payload += np.ascontiguousarray(bundle.semantics, np.float32).tobytes()
    payload += np.ascontiguousarray(bundle.seen_classes, np.uint32).tobytes()
    payload += np.ascontiguousarray(bundle.unseen_classes, np.uint32).tobytes()
    blob = BUNDLE_MAGIC + bytes(payload) + struct.pack(
        "<I", zlib.crc32(bytes(payload)))
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.off = 0

    def take(self, count, what):
        if self.off + count > len(self.blob):
            raise FormatError(
                f"truncated bundle: {what} needs {count} bytes at offset "
                f"{self.off}, file has {len(self.blob) - self.off} left")
        out = self.blob[self.off:self.off + count]
        self.off += count
        return out


def derive_test_mask(labels, seen_classes, test_frac=DEFAULT_TEST_FRAC):
    """Mark the trailing ``test_frac`` rows of each seen class, in file
    order, as held out; unseen-class rows are always held out."""
    mask = ~np.isin(labels, seen_classes)
    for k in seen_classes:
        rows = np.flatnonzero(labels == k)
        if rows.size == 0:
            continue
        n_train = _train_count(rows.size, test_frac)
        mask[rows[n_train:]] = True
    return mask


def load_bundle(path, test_frac=DEFAULT_TEST_FRAC):
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != BUNDLE_MAGIC:
        raise FormatError(
            f"bad magic {magic!r} at offset 0, expected {BUNDLE_MAGIC!r}")
    payload_start = r.off
    version, = struct.unpack("<I", r.take(4, "version"))
    if version != BUNDLE_VERSION:
        raise FormatError(f"unsupported bundle version {version} at offset 4")
    n, d_x, s, u, d_a = struct.unpack("<5Q", r.take(40, "header counts"))
    feats = np.frombuffer(r.take(n * d_x * 4, "feature rows"),
                          np.float32).reshape(n, d_x).copy()
    labels = np.frombuffer(r.take(n * 4, "labels"),
                           np.uint32).astype(np.int64)
    semantics = np.frombuffer(r.take((s + u) * d_a * 4, "semantics"),
                              np.float32).reshape(s + u, d_a).copy()
    seen = np.frombuffer(r.take(s * 4, "seen class ids"),
                         np.uint32).astype(np.int64)
    unseen = np.frombuffer(r.take(u * 4, "unseen class ids"),
                           np.uint32).astype(np.int64)
    payload_end = r.off
    stored_crc, = struct.unpack("<I", r.take(4, "checksum"))
    actual_crc = zlib.crc32(blob[payload_start:payload_end])
    if stored_crc != actual_crc:
        raise FormatError(
            f"checksum mismatch at offset {payload_end}: stored "
            f"{stored_crc:#010x}, computed {actual_crc:#010x}")
    bundle = DatasetBundle(
        features=feats, labels=labels, semantics=semantics,
        seen_classes=np.sort(seen), unseen_classes=np.sort(unseen),
        test_mask=derive_test_mask(labels, seen, test_frac),
    )
    return bundle.validate()


def load_csv_bundle(features_path, semantics_path, seen_classes,
                    unseen_classes, test_frac=DEFAULT_TEST_FRAC):
    """Load hand-made fixtures: a `label,f0,...` row CSV plus a
    `class,a0,...` semantics CSV."""
    with open(features_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "label":
            raise FormatError(
                f"feature CSV must start with a 'label' column, got {header[:1]}")
        rows = [(int(r[0]), [float(v) for v in r[1:]]) for r in reader if r]
    with open(semantics_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "class":
            raise FormatError(
                f"semantics CSV must start with a 'class' column, got {header[:1]}")
        sem_rows = {int(r[0]): [float(v) for v in r[1:]] for r in reader if r}
    n_classes = len(sem_rows)
    if sorted(sem_rows) != list(range(n_classes)):
        raise DataError("semantics CSV must cover class ids 0..C-1 exactly once")
    labels = np.array([lab for lab, _ in rows], dtype=np.int64)
    seen = np.sort(np.asarray(list(seen_classes), dtype=np.int64))
    bundle = DatasetBundle(
        features=np.array([vals for _, vals in rows], dtype=np.float32),
        labels=labels,
        semantics=np.array([sem_rows[k] for k in range(n_classes)],
                           dtype=np.float32),
        seen_classes=seen,
        unseen_classes=np.sort(np.asarray(list(unseen_classes), dtype=np.int64)),
        test_mask=derive_test_mask(labels, seen, test_frac),
    )
    return bundle.validate()


def bundles_equal(a: DatasetBundle, b: DatasetBundle):
    return (np.array_equal(a.features, b.features)
            and np.array_equal(a.labels, b.labels)
            and np.array_equal(a.semantics, b.semantics)
            and np.array_equal(a.seen_classes, b.seen_classes)
            and np.array_equal(a.unseen_classes, b.unseen_classes)
            and np.array_equal(a.test_mask, b.test_mask))


def split_source_target(bundle: DatasetBundle, n_target, seed):
    """Partition the seen classes into this epoch's sources and targets."""
    s = bundle.seen_classes.size
    if not 1 <= n_target < s:
        raise ConfigError(
            f"n_target must be in [1, {s - 1}] for {s} seen classes, "
            f"got {n_target}")
    rng = np.random.default_rng(seed)
    targets = np.sort(rng.choice(bundle.seen_classes, size=n_target,
                                 replace=False))
    sources = np.setdiff1d(bundle.seen_classes, targets)
    return SourceTargetSplit(source_classes=sources, target_classes=targets,
                             seed=seed)


def subsample_fszu(bundle: DatasetBundle, k, seed):
    """Few-shot variant: keep exactly k training rows per seen class.

    Held-out rows (seen and unseen) are untouched; row order is
    preserved."""
    if k < 1:
        raise ConfigError(f"shot count must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    keep = bundle.test_mask.copy()
    for cls in bundle.seen_classes:
        rows = np.flatnonzero((bundle.labels == cls) & ~bundle.test_mask)
        if rows.size < k:
            raise DataError(
                f"class {int(cls)} has only {rows.size} training rows, "
                f"cannot keep {k}")
        keep[rng.choice(rows, size=k, replace=False)] = True
    retained = np.flatnonzero(keep)
    kept_mask = bundle.test_mask[retained]
    return DatasetBundle(
        features=bundle.features[retained],
        labels=bundle.labels[retained],
        semantics=bundle.semantics,
        seen_classes=bundle.seen_classes,
        unseen_classes=bundle.unseen_classes,
        test_mask=kept_mask,
    )


def batches(bundle: DatasetBundle, class_filter, n_b, seed):
    """Yield shuffled (features, labels) minibatches over the training
    rows of the given classes; a trailing short batch is dropped."""
    if n_b < 1:
        raise ConfigError(f"batch size must be >= 1, got {n_b}")
    rows = bundle.train_indices(class_filter)
    if rows.size == 0:
        raise DataError(
            f"no training rows for class filter {sorted(map(int, class_filter))}")
    order = np.random.default_rng(seed).permutation(rows)
    for start in range(0, rows.size - n_b + 1, n_b):
        idx = order[start:start + n_b]
        yield bundle.features[idx], bundle.labels[idx]


def batch_stream(bundle: DatasetBundle, class_filter, n_b, seed):
    """Endless batch source that reshuffles each pass.

    When the filtered training rows cannot fill one batch the effective
    batch size shrinks to what is available (few-shot regimes)."""
    rows = bundle.train_indices(class_filter)
    if rows.size == 0:
        raise DataError(
            f"no training rows for class filter {sorted(map(int, class_filter))}")
    eff = min(n_b, rows.size)
    base = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    pass_idx = 0
    while True:
        yield from batches(bundle, class_filter, eff, seed=base + [pass_idx])
        pass_idx += 1
