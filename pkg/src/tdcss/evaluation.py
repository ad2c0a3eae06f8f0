"""Per-class accuracy, harmonic mean, joint seen+unseen evaluation,
linear probes, and the 2-D embedding export.

Accuracies are stored as fractions; rendering as percentages (one
decimal, like the published tables) happens only at the CLI edge.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from . import synthesis as sy
from .errors import MetricError, UsageError


def harmonic_mean(u, s):
    """2us/(u+s), defined as 0 when both terms are 0."""
    if u + s == 0:
        return 0.0
    return 2.0 * u * s / (u + s)


def per_class_top1(preds, labels, class_set):
    """Unweighted per-class top-1 accuracy.

    Returns ({class: accuracy}, mean over classes). Every class in
    class_set must have at least one labeled sample."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    per_class = {}
    for cls in class_set:
        idx = labels == cls
        n = int(idx.sum())
        if n == 0:
            raise MetricError(f"class {int(cls)} has no evaluation samples")
        per_class[int(cls)] = float(np.mean(preds[idx] == cls))
    mean = float(np.mean(list(per_class.values())))
    return per_class, mean


@dataclass
class Metrics:
    per_class: dict
    counts: dict
    u: float
    s: float
    h: float

    def to_dict(self):
        return {"u": self.u, "s": self.s, "H": self.h,
                "per_class": {str(k): v for k, v in self.per_class.items()},
                "counts": {str(k): v for k, v in self.counts.items()}}


def evaluate_gzsl(model, bundle, rows=None):
    """Score held-out rows against the full class list.

    u averages over unseen classes, s over seen classes; H is their
    harmonic mean."""
    if rows is None:
        rows = bundle.test_indices()
    rows = np.asarray(rows)
    all_ids = np.arange(bundle.semantics.shape[0])
    x = np.ascontiguousarray(bundle.features[rows])
    labels = bundle.labels[rows]
    preds = model.predict(x, bundle.semantics, all_ids)
    pc_seen, s = per_class_top1(preds, labels, bundle.seen_classes)
    pc_unseen, u = per_class_top1(preds, labels, bundle.unseen_classes)
    per_class = {**pc_seen, **pc_unseen}
    counts = {int(c): int((labels == c).sum())
              for c in np.concatenate([bundle.seen_classes,
                                       bundle.unseen_classes])}
    return Metrics(per_class, counts, u, s, harmonic_mean(u, s))


def linear_probe_accuracy(train_x, train_y, test_x, test_y, classes,
                          seed=0, steps=300, lr=0.05):
    """Per-class accuracy of a single linear layer fit on encodings.

    Measures how linearly decodable the labels are from a
    representation; inputs are standardized with training statistics."""
    classes = np.sort(np.asarray(classes, dtype=np.int64))
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0) + 1e-6
    xtr = ((train_x - mu) / sd).astype(np.float32)
    xte = ((test_x - mu) / sd).astype(np.float32)
    cols_tr = np.searchsorted(classes, train_y)
    rng = np.random.default_rng(seed)
    net = nk.Net.create(rng, [xtr.shape[1], classes.size], ["identity"],
                        name="probe", dtype=np.float32)
    opt = nk.Adam(net.params(), lr=lr)
    for _ in range(steps):
        logits, cache = net.forward(xtr)
        _, d_logits = nk.softmax_ce(logits, cols_tr)
        _, grads = net.backward(d_logits, cache)
        opt.step(grads)
    logits, _ = net.forward(xte)
    preds = classes[np.argmax(logits, axis=1)]
    _, mean_acc = per_class_top1(preds, test_y, classes)
    return mean_acc


def probe_gap(model, bundle, seed=0):
    """Probe accuracy on the task-correlated factor minus the
    task-independent factor, over seen classes (fit on training rows,
    scored on seen held-out rows)."""
    seen = bundle.seen_classes
    tr = bundle.train_indices(seen)
    te_mask = bundle.test_mask & np.isin(bundle.labels, seen)
    te = np.flatnonzero(te_mask)
    pair_tr, _ = model.encode(np.ascontiguousarray(bundle.features[tr]))
    pair_te, _ = model.encode(np.ascontiguousarray(bundle.features[te]))
    acc_cor = linear_probe_accuracy(pair_tr.h_cor, bundle.labels[tr],
                                    pair_te.h_cor, bundle.labels[te],
                                    seen, seed=seed)
    acc_ind = linear_probe_accuracy(pair_tr.h_ind, bundle.labels[tr],
                                    pair_te.h_ind, bundle.labels[te],
                                    seen, seed=seed)
    return acc_cor, acc_ind


def pseudo_geometry(model, bundle, seed=0, n_samples=512, eps_edge=0.5):
    """Mean distance of center- and edge-pseudo vectors to their target
    class's real latent centroid, over seen classes."""
    if model.center is None and not model.edges:
        raise UsageError("model has no convert nets to synthesize with")
    rng = np.random.default_rng(seed)
    seen = bundle.seen_classes
    rows = bundle.train_indices(seen)
    h_all = model.encode_cor(np.ascontiguousarray(bundle.features[rows]))
    labels = bundle.labels[rows]
    centroids = {int(c): h_all[labels == c].mean(axis=0) for c in seen}

    pick = rng.choice(rows.size, size=min(n_samples, rows.size),
                      replace=False)
    h = h_all[pick]
    src = labels[pick]
    # target: a different seen class per row
    shift = rng.integers(1, seen.size, size=src.size)
    src_pos = np.searchsorted(seen, src)
    tgt = seen[(src_pos + shift) % seen.size]

    def mean_dist(vectors):
        cents = np.stack([centroids[int(c)] for c in tgt])
        return float(np.linalg.norm(
            vectors.astype(np.float64) - cents, axis=1).mean())

    out = {}
    if model.center is not None:
        pb, _ = sy.synth_center(h, src, bundle.semantics, model.center, tgt)
        out["center"] = mean_dist(pb.vectors)
    if model.edges:
        dists = []
        for net in model.edges:
            pb, _ = sy.synth_edge(h, src, bundle.semantics, net, tgt,
                                  eps_edge)
            dists.append(mean_dist(pb.vectors))
        out["edge"] = float(np.mean(dists))
    return out


def _pca_2d(pooled):
    centered = pooled - pooled.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    for i in range(comps.shape[0]):  # deterministic sign
        j = int(np.argmax(np.abs(comps[i])))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


def export_embeddings_2d(model, bundle, path, seed=0, max_rows=2048,
                         eps_edge=0.5):
    """Write (class, kind, pc1, pc2) rows: top-2 principal components of
    the pooled real/center/edge/h_ind latents."""
    rng = np.random.default_rng(seed)
    rows = bundle.test_indices()
    if rows.size > max_rows:
        rows = np.sort(rng.choice(rows, size=max_rows, replace=False))
    x = np.ascontiguousarray(bundle.features[rows])
    labels = bundle.labels[rows]
    pair, _ = model.encode(x)
    vectors = [pair.h_cor, pair.h_ind]
    tags = [("real", labels), ("h_ind", labels)]

    src_rows = bundle.train_indices(bundle.seen_classes)
    n_pseudo = min(src_rows.size, max_rows // 4 or 1)
    pick = np.sort(rng.choice(src_rows, size=n_pseudo, replace=False))
    h_src = model.encode_cor(np.ascontiguousarray(bundle.features[pick]))
    src_labels = bundle.labels[pick]
    tgt = rng.choice(bundle.unseen_classes, size=n_pseudo)
    if model.center is not None:
        pb, _ = sy.synth_center(h_src, src_labels, bundle.semantics,
                                model.center, tgt)
        vectors.append(pb.vectors)
        tags.append(("center", pb.target_labels))
    for net in model.edges:
        pb, _ = sy.synth_edge(h_src, src_labels, bundle.semantics, net, tgt,
                              eps_edge)
        vectors.append(pb.vectors)
        tags.append(("edge", pb.target_labels))

    pooled = np.concatenate(vectors, axis=0).astype(np.float64)
    if pooled.shape[0] < 3:
        raise UsageError("embedding export needs at least 3 vectors")
    pcs = _pca_2d(pooled)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "kind", "pc1", "pc2"])
        offset = 0
        for (kind, labs), vecs in zip(tags, vectors):
            for i in range(vecs.shape[0]):
                writer.writerow([int(labs[i]), kind,
                                 repr(float(pcs[offset + i, 0])),
                                 repr(float(pcs[offset + i, 1]))])
            offset += vecs.shape[0]
    return pooled.shape[0]
