import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclezsl.datamodel import (
    Dataset,
    DatasetError,
    MinMaxScaler,
    Split,
    SynthConfig,
    class_means,
    generate_synthetic,
    load_dataset,
    load_split,
    make_split,
    partition,
    save_dataset,
    save_split,
    synthetic_truth,
)


def toy_dataset(super_class=None, c=12, per_class=3, seed=0):
    g = np.random.default_rng(seed)
    labels = np.repeat(np.arange(c), per_class)
    return Dataset(
        visual=g.standard_normal((labels.size, 5)).astype(np.float32),
        semantic=g.random((c, 4)).astype(np.float32),
        labels=labels,
        class_names=[f"c{i}" for i in range(c)],
        super_class=super_class,
    )


class TestPersistence:
    def test_round_trip(self, tmp_path):
        ds = toy_dataset(super_class=np.arange(12) // 3)
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(tmp_path / "d")
        assert back.visual.tobytes() == ds.visual.tobytes()
        assert back.semantic.tobytes() == ds.semantic.tobytes()
        np.testing.assert_array_equal(back.labels, ds.labels)
        np.testing.assert_array_equal(back.super_class, ds.super_class)
        assert back.class_names == ds.class_names

    def test_file_layout(self, tmp_path):
        ds = toy_dataset()
        save_dataset(ds, tmp_path)
        meta = json.loads((tmp_path / "meta.json").read_text())
        assert (meta["N"], meta["C"], meta["d_v"], meta["d_s"]) == (36, 12, 5, 4)
        assert meta["endianness"] == "little"
        raw = np.frombuffer((tmp_path / "labels.bin").read_bytes(), dtype="<u4")
        np.testing.assert_array_equal(raw, ds.labels)
        assert (tmp_path / "visual.bin").stat().st_size == 36 * 5 * 4

    def test_truncated_payload(self, tmp_path):
        save_dataset(toy_dataset(), tmp_path)
        blob = (tmp_path / "visual.bin").read_bytes()
        (tmp_path / "visual.bin").write_bytes(blob[:-4])
        with pytest.raises(DatasetError, match="expected"):
            load_dataset(tmp_path)

    def test_label_out_of_range(self, tmp_path):
        save_dataset(toy_dataset(c=10), tmp_path)
        labels = np.frombuffer((tmp_path / "labels.bin").read_bytes(), dtype="<u4").copy()
        labels[0] = 10
        (tmp_path / "labels.bin").write_bytes(labels.tobytes())
        with pytest.raises(DatasetError, match="out of range"):
            load_dataset(tmp_path)

    def test_missing_file(self, tmp_path):
        save_dataset(toy_dataset(), tmp_path)
        (tmp_path / "semantic.bin").unlink()
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)


class TestSplits:
    def test_sce_holds_out_one_whole_superclass(self):
        ds = toy_dataset(super_class=np.arange(12) // 3)
        split = make_split(ds, "SCE", 0.25, seed=3)
        assert len(split.unseen_classes) == 3
        assert len({int(ds.super_class[c]) for c in split.unseen_classes}) == 1
        split.check(ds)

    def test_sce_requires_superclasses(self):
        with pytest.raises(ValueError):
            make_split(toy_dataset(), "SCE", 0.25, seed=0)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.integers(0, 4), min_size=4, max_size=15), st.floats(0.05, 0.9), st.integers(0, 1000))
    def test_scs_keeps_a_seen_member(self, sup, frac, seed):
        ds = toy_dataset(super_class=np.asarray(sup), c=len(sup), per_class=1)
        split = make_split(ds, "SCS", frac, seed)
        split.check(ds)
        assert set(split.seen_classes).isdisjoint(split.unseen_classes)
        groups = {}
        for c, g in enumerate(sup):
            groups.setdefault(g, []).append(c)
        target = min(max(1, round(frac * len(sup))), len(sup) - 1)
        n_multi_slots = sum(len(m) - 1 for m in groups.values())
        if target <= n_multi_slots:
            for members in groups.values():
                if len(members) >= 2:
                    assert any(c in split.seen_classes for c in members)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=4, max_size=12), st.integers(0, 1000))
    def test_sce_never_shares_superclass(self, sup, seed):
        if len(set(sup)) < 2:
            return
        ds = toy_dataset(super_class=np.asarray(sup), c=len(sup), per_class=1)
        split = make_split(ds, "SCE", 0.3, seed)
        seen_sup = {sup[c] for c in split.seen_classes}
        unseen_sup = {sup[c] for c in split.unseen_classes}
        assert not seen_sup & unseen_sup
        assert split.seen_classes and split.unseen_classes

    def test_deterministic_and_order_invariant(self):
        ds = toy_dataset(super_class=np.arange(12) % 4)
        a = make_split(ds, "SCS", 0.3, seed=9)
        assert a == make_split(ds, "SCS", 0.3, seed=9)
        perm = np.random.default_rng(0).permutation(ds.labels.size)
        shuffled = Dataset(ds.visual[perm], ds.semantic, ds.labels[perm], ds.class_names, ds.super_class)
        assert make_split(shuffled, "SCS", 0.3, seed=9) == a

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            Split((0, 1), (1, 2))

    def test_split_file_round_trip(self, tmp_path):
        split = Split((0, 2, 3), (1,), "SCE", 4)
        save_split(split, tmp_path / "s.json")
        assert load_split(tmp_path / "s.json") == split
        assert json.loads((tmp_path / "s.json").read_text())["unseen_classes"] == [1]

    def test_partition(self):
        ds = toy_dataset(per_class=10)
        split = Split(tuple(range(9)), (9, 10, 11), seed=1)
        part = partition(ds, split)
        assert set(ds.labels[part.unseen_test]) == {9, 10, 11}
        assert not set(part.train) & set(part.seen_test)
        assert part.train.size + part.seen_test.size == 90
        assert part.seen_test.size == 18


class TestClassMeans:
    def test_single_sample(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(class_means(x, [0, 1], [0, 1]).means, x)

    def test_two_samples(self):
        stats = class_means(np.array([[0.0, 0.0], [2.0, 2.0]]), [5, 5], [5])
        np.testing.assert_array_equal(stats.mean(5), [1.0, 1.0])

    def test_naive_accumulation(self, rng):
        x = rng.standard_normal((20, 6))
        acc = np.zeros(6)
        for row in x:
            acc = acc + row
        stats = class_means(x, np.zeros(20, dtype=int), [0])
        np.testing.assert_allclose(stats.mean(0), acc / 20, rtol=0, atol=1e-12)

    def test_empty_class(self):
        with pytest.raises(ValueError):
            class_means(np.zeros((2, 2)), [0, 0], [0, 1])

    def test_missing_class_lookup(self):
        with pytest.raises(KeyError):
            class_means(np.zeros((2, 2)), [0, 0], [0]).mean(3)


class TestSynthetic:
    def test_noiseless_samples_equal_means(self):
        cfg = SynthConfig(noise_scale=0.0, seed=4)
        ds = generate_synthetic(cfg)
        truth = synthetic_truth(cfg)
        expected = (ds.semantic.astype(np.float64) @ truth.mapping)[ds.labels]
        np.testing.assert_allclose(ds.visual, expected, rtol=1e-5, atol=1e-5)
        for c in range(cfg.num_classes):
            rows = ds.visual[ds.labels == c]
            assert np.all(rows == rows[0])

    def test_distinct_seeds_distinct_maps(self):
        assert not np.allclose(synthetic_truth(SynthConfig(seed=1)).mapping,
                               synthetic_truth(SynthConfig(seed=2)).mapping)

    def test_semantics_are_sparse_nonnegative(self):
        ds = generate_synthetic(SynthConfig(seed=0))
        assert np.all(ds.semantic >= 0)
        assert np.mean(ds.semantic == 0) > 0.3
        assert ds.super_class.shape == (10,)
        assert set(ds.super_class.tolist()) <= set(range(4))

    def test_nearest_mean_is_perfect_on_held_out_draws(self):
        cfg = SynthConfig(seed=11, noise_scale=0.01)
        truth = synthetic_truth(cfg)
        g = np.random.default_rng(99)
        labels = np.repeat(np.arange(cfg.num_classes), 50)
        draws = truth.means[labels] + truth.noise_std * g.standard_normal((labels.size, cfg.d_v))
        d = ((draws[:, None, :] - truth.means[None]) ** 2).sum(-1)
        assert np.all(d.argmin(1) == labels)

    def test_relative_noise_scale(self):
        truth = synthetic_truth(SynthConfig(seed=0, noise_scale=0.1))
        m = truth.means
        dist = np.sqrt(((m[:, None] - m[None]) ** 2).sum(-1))[np.triu_indices(10, 1)]
        assert truth.noise_std == pytest.approx(0.1 * np.median(dist))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SynthConfig(num_seen=10)
        with pytest.raises(ValueError):
            SynthConfig(noise_scale=-1)


def test_scaler_round_trip(rng):
    x = rng.standard_normal((30, 4)) * 5 + 2
    x[:, 3] = 7.0  # constant column
    sc = MinMaxScaler.fit(x)
    y = sc.transform(x)
    assert y[:, :3].min() == pytest.approx(-1) and y[:, :3].max() == pytest.approx(1)
    np.testing.assert_allclose(sc.inverse(y), x, atol=1e-12)
    back = MinMaxScaler.from_dict(json.loads(json.dumps(sc.to_dict())))
    np.testing.assert_array_equal(back.lo, sc.lo)
