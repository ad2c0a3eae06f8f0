import numpy as np
import pytest

from tdcss import data as d
from tdcss.errors import ConfigError, DataError, FormatError
from tdcss.evaluation import linear_probe_accuracy


@pytest.fixture(scope="module")
def small_cfg():
    return d.SynthConfig(n_seen=6, n_unseen=2, semantic_dim=8,
                         feature_dim=32, samples_per_class=30,
                         task_signal_dim=12, nuisance_dim=12, seed=5)


@pytest.fixture(scope="module")
def small_bundle(small_cfg):
    return d.generate_synthetic(small_cfg)


class TestGenerate:
    def test_shapes(self, small_cfg, small_bundle):
        n_classes = small_cfg.n_seen + small_cfg.n_unseen
        n = n_classes * small_cfg.samples_per_class
        assert small_bundle.features.shape == (n, small_cfg.feature_dim)
        assert small_bundle.labels.shape == (n,)
        assert small_bundle.semantics.shape == (n_classes,
                                                small_cfg.semantic_dim)

    def test_same_seed_bitwise_identical(self, small_cfg):
        a = d.generate_synthetic(small_cfg)
        b = d.generate_synthetic(small_cfg)
        assert d.bundles_equal(a, b)

    def test_different_seed_differs(self, small_cfg, small_bundle):
        other = d.SynthConfig(**{**small_cfg.__dict__, "seed": 6})
        assert not d.bundles_equal(small_bundle, d.generate_synthetic(other))

    def test_unseen_rows_are_all_held_out(self, small_bundle):
        unseen_rows = np.isin(small_bundle.labels,
                              small_bundle.unseen_classes)
        assert np.all(small_bundle.test_mask[unseen_rows])

    def test_invalid_dims_rejected(self):
        cfg = d.SynthConfig(task_signal_dim=40, nuisance_dim=40,
                            feature_dim=64)
        with pytest.raises(ConfigError, match="feature_dim"):
            d.generate_synthetic(cfg)

    def test_probe_oracle_signal_vs_nuisance(self):
        # calibration gate for the default noise level: the task signal
        # must be highly class-informative, the nuisance block near chance
        cfg = d.SynthConfig(seed=11)
        bundle, factors = d.generate_synthetic(cfg, return_factors=True)
        classes = np.arange(cfg.n_seen + cfg.n_unseen)
        tr = bundle.train_indices(bundle.seen_classes)
        te = np.flatnonzero(bundle.test_mask)
        labels = bundle.labels
        acc_t = linear_probe_accuracy(factors.task_signal[tr], labels[tr],
                                      factors.task_signal[te], labels[te],
                                      classes)
        acc_n = linear_probe_accuracy(factors.nuisance[tr], labels[tr],
                                      factors.nuisance[te], labels[te],
                                      classes)
        chance = 1.0 / classes.size
        assert acc_t >= 0.90
        assert acc_n <= chance + 0.10
        assert acc_t - acc_n >= 0.15


class TestBundleIO:
    def test_round_trip(self, small_bundle, tmp_path):
        path = tmp_path / "b.zslb"
        d.save_bundle(small_bundle, path)
        loaded = d.load_bundle(path)
        assert d.bundles_equal(small_bundle, loaded)

    def test_round_trip_bytes_stable(self, small_bundle, tmp_path):
        p1, p2 = tmp_path / "one.zslb", tmp_path / "two.zslb"
        d.save_bundle(small_bundle, p1)
        d.save_bundle(d.load_bundle(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, small_bundle, tmp_path):
        path = tmp_path / "b.zslb"
        d.save_bundle(small_bundle, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            d.load_bundle(path)

    def test_truncation_detected(self, small_bundle, tmp_path):
        path = tmp_path / "b.zslb"
        d.save_bundle(small_bundle, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(FormatError, match="offset"):
            d.load_bundle(path)

    def test_checksum_mismatch(self, small_bundle, tmp_path):
        path = tmp_path / "b.zslb"
        d.save_bundle(small_bundle, path)
        blob = bytearray(path.read_bytes())
        blob[100] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="checksum"):
            d.load_bundle(path)

    def test_csv_import(self, tmp_path):
        feats = tmp_path / "f.csv"
        feats.write_text(
            "label,f0,f1\n0,1.0,2.0\n0,1.5,2.5\n1,-1.0,0.5\n1,2.0,1.0\n"
            "2,0.0,3.0\n")
        sems = tmp_path / "a.csv"
        sems.write_text("class,a0,a1,a2\n0,1,0,0\n1,0,1,0\n2,0,0,1\n")
        bundle = d.load_csv_bundle(feats, sems, seen_classes=[0, 1],
                                   unseen_classes=[2], test_frac=0.5)
        assert bundle.features.shape == (5, 2)
        assert bundle.semantics.shape == (3, 3)
        assert np.array_equal(bundle.seen_classes, [0, 1])
        # one of the two rows of each seen class is held out
        assert bundle.test_mask.sum() == 3

    def test_csv_requires_label_header(self, tmp_path):
        feats = tmp_path / "f.csv"
        feats.write_text("f0,f1\n1.0,2.0\n")
        sems = tmp_path / "a.csv"
        sems.write_text("class,a0\n0,1\n")
        with pytest.raises(FormatError, match="label"):
            d.load_csv_bundle(feats, sems, [0], [])


class TestSplits:
    def test_single_target(self, small_bundle):
        split = d.split_source_target(small_bundle, 1, seed=0)
        assert split.target_classes.size == 1
        assert split.source_classes.size == 5

    def test_partition(self, small_bundle):
        for seed in range(20):
            split = d.split_source_target(small_bundle, 2, seed=seed)
            assert np.intersect1d(split.source_classes,
                                  split.target_classes).size == 0
            union = np.union1d(split.source_classes, split.target_classes)
            assert np.array_equal(union, small_bundle.seen_classes)

    def test_coverage_over_epochs(self):
        bundle = d.generate_synthetic(d.SynthConfig(
            n_seen=12, n_unseen=2, samples_per_class=4, semantic_dim=4,
            feature_dim=16, task_signal_dim=6, nuisance_dim=6, seed=0))
        seen_as_target = set()
        for epoch in range(1000):
            split = d.split_source_target(bundle, 1, seed=[3, epoch])
            seen_as_target.update(split.target_classes.tolist())
        assert seen_as_target == set(range(12))

    def test_n_target_out_of_range(self, small_bundle):
        with pytest.raises(ConfigError):
            d.split_source_target(small_bundle, 6, seed=0)


class TestFszu:
    @pytest.mark.parametrize("k", [10, 5, 2])
    def test_benchmark_grid(self, small_bundle, k):
        sub = d.subsample_fszu(small_bundle, k, seed=1)
        for cls in sub.seen_classes:
            rows = (sub.labels == cls) & ~sub.test_mask
            assert rows.sum() == k
        # held-out rows untouched
        assert sub.test_mask.sum() == small_bundle.test_mask.sum()
        assert sub.n_train == k * sub.seen_classes.size

    def test_full_size_is_noop(self):
        cfg = d.SynthConfig(n_seen=4, n_unseen=2, samples_per_class=8,
                            semantic_dim=4, feature_dim=16,
                            task_signal_dim=6, nuisance_dim=6,
                            test_frac=0.0, seed=2)
        bundle = d.generate_synthetic(cfg)
        sub = d.subsample_fszu(bundle, 8, seed=0)
        assert d.bundles_equal(bundle, sub)

    def test_deterministic(self, small_bundle):
        a = d.subsample_fszu(small_bundle, 3, seed=9)
        b = d.subsample_fszu(small_bundle, 3, seed=9)
        assert d.bundles_equal(a, b)

    def test_insufficient_rows_names_class(self, small_bundle):
        with pytest.raises(DataError, match="class 0"):
            d.subsample_fszu(small_bundle, 10_000, seed=0)


class TestBatches:
    def test_labels_respect_filter(self, small_bundle):
        flt = small_bundle.seen_classes[:3]
        for _, labels in d.batches(small_bundle, flt, 8, seed=0):
            assert np.all(np.isin(labels, flt))

    def test_no_duplicates_within_epoch(self, small_bundle):
        seen = small_bundle.seen_classes
        chunks = [f for f, _ in d.batches(small_bundle, seen, 16, seed=3)]
        rows = np.concatenate([c for c in chunks])
        # rows drawn without replacement: feature rows must be unique
        uniq = np.unique(rows, axis=0)
        assert uniq.shape[0] == rows.shape[0]

    def test_short_batch_dropped(self, small_bundle):
        seen = small_bundle.seen_classes
        n_rows = small_bundle.train_indices(seen).size
        batches = list(d.batches(small_bundle, seen, 32, seed=0))
        assert len(batches) == n_rows // 32
        assert all(f.shape[0] == 32 for f, _ in batches)

    def test_seen_batches_never_touch_unseen(self, small_bundle):
        for _, labels in d.batches(small_bundle, small_bundle.seen_classes,
                                   8, seed=1):
            assert not np.any(np.isin(labels, small_bundle.unseen_classes))

    def test_empty_filter_is_data_error(self, small_bundle):
        with pytest.raises(DataError):
            list(d.batches(small_bundle, [], 8, seed=0))

    def test_stream_shrinks_batch_when_scarce(self, small_bundle):
        few = d.subsample_fszu(small_bundle, 2, seed=0)
        stream = d.batch_stream(few, few.seen_classes, 64, seed=0)
        x, _ = next(stream)
        assert x.shape[0] == 12  # 6 seen classes x 2 rows

    def test_stream_determinism(self, small_bundle):
        s1 = d.batch_stream(small_bundle, small_bundle.seen_classes, 16, 7)
        s2 = d.batch_stream(small_bundle, small_bundle.seen_classes, 16, 7)
        for _ in range(25):  # crosses a reshuffle boundary
            (x1, y1), (x2, y2) = next(s1), next(s2)
            assert np.array_equal(x1, x2) and np.array_equal(y1, y2)