import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dilearn.errors import ConfigError, DataError
from dilearn.data import (
    SyntheticDomainSpec,
    batch_indices,
    batch_iter,
    class_prototype,
    generate_synthetic_domain,
    load_domain,
    load_features,
    load_manifest,
    nearest_centroid_accuracy,
    read_dataset,
    read_features,
    write_dataset,
    write_features,
)
from dilearn.model import TaskKind

CLASSES = ("dog", "rain", "siren")


def spec(**kw):
    return SyntheticDomainSpec(kw.pop("name", "A"), kw.pop("classes", CLASSES), n_train=4, n_test=2, **kw)


class TestGenerator:
    def test_zero_noise_identity_gives_prototypes(self):
        ds = generate_synthetic_domain(spec(noise=0.0), seed=3)
        for x, y in zip(ds.train.features, ds.train.labels):
            np.testing.assert_allclose(x[0], class_prototype(CLASSES[y], 16, 16), atol=1e-6)

    def test_same_seed_bit_identical(self):
        a, b = generate_synthetic_domain(spec(), 7), generate_synthetic_domain(spec(), 7)
        assert a.train.features.tobytes() == b.train.features.tobytes()
        assert a.test.labels.tobytes() == b.test.labels.tobytes()
        assert generate_synthetic_domain(spec(), 8).train.features.tobytes() != a.train.features.tobytes()

    def test_identity_domains_share_prototypes(self):
        a = generate_synthetic_domain(spec(name="A", noise=0.0), 1)
        b = generate_synthetic_domain(spec(name="B", noise=0.0), 1)
        np.testing.assert_array_equal(a.train.features, b.train.features)

    def test_affine_transform(self):
        plain = generate_synthetic_domain(spec(noise=0.0), 0).train.features
        shifted = generate_synthetic_domain(spec(noise=0.0, scale=2.0, offset=-1.0), 0).train.features
        np.testing.assert_allclose(shifted, 2 * plain - 1, atol=1e-5)

    def test_band_emphasis_rows(self):
        band = tuple(float(k) for k in range(16))
        plain = generate_synthetic_domain(spec(noise=0.0), 0).train.features
        out = generate_synthetic_domain(spec(noise=0.0, band_emphasis=band), 0).train.features
        np.testing.assert_allclose(out, plain * np.arange(16)[:, None], atol=1e-5)

    def test_variant_blend_keeps_unit_norm(self):
        s = spec(noise=0.0, variant_weight=0.6, variant_seed=4)
        x = generate_synthetic_domain(s, 0).train.features[:, 0]
        np.testing.assert_allclose(x.std(axis=(1, 2)), 1.0, atol=0.25)

    def test_multi_label_superposes(self):
        ds = generate_synthetic_domain(spec(noise=0.0, task_kind="multi"), 0)
        counts = ds.train.labels.sum(1)
        assert counts.min() >= 1 and counts.max() <= 3
        protos = np.stack([class_prototype(c, 16, 16) for c in CLASSES])
        expected = np.tensordot(ds.train.labels.astype(float), protos, axes=(1, 0))
        np.testing.assert_allclose(ds.train.features[:, 0], expected, atol=1e-5)

    def test_split_sizes(self):
        ds = generate_synthetic_domain(spec(), 0)
        assert ds.train.features.shape == (12, 1, 16, 16) and len(ds.test) == 6
        assert ds.train.features.dtype == np.float32

    @pytest.mark.parametrize("kw", [dict(scale=0.0), dict(noise=-1.0), dict(n_freq=4), dict(variant_weight=1.5), dict(offset=(1.0, 2.0))])
    def test_invalid_specs(self, kw):
        with pytest.raises(ConfigError):
            spec(**kw)


class TestNearestCentroid:
    def test_clean_domain_is_separable(self):
        ds = generate_synthetic_domain(spec(), 0)
        assert nearest_centroid_accuracy(ds.train, ds.test) == 1.0

    def test_multi_label_rejected(self):
        ds = generate_synthetic_domain(spec(task_kind="multi"), 0)
        with pytest.raises(DataError):
            nearest_centroid_accuracy(ds.train, ds.test)


class TestFeatureFiles:
    def test_round_trip(self, tmp_path):
        x = np.random.default_rng(0).standard_normal((1, 8, 12)).astype(np.float32)
        write_features(tmp_path / "x.dilf", x)
        np.testing.assert_array_equal(read_features(tmp_path / "x.dilf", 8, 12), x)
        assert (tmp_path / "x.dilf").read_bytes()[:4] == b"DILF"

    def test_dim_mismatch(self, tmp_path):
        write_features(tmp_path / "x.dilf", np.zeros((8, 12)))
        with pytest.raises(DataError, match="expected 16x12"):
            read_features(tmp_path / "x.dilf", 16, 12)

    def test_truncated(self, tmp_path):
        write_features(tmp_path / "x.dilf", np.zeros((8, 8)))
        (tmp_path / "x.dilf").write_bytes((tmp_path / "x.dilf").read_bytes()[:-4])
        with pytest.raises(DataError, match="payload"):
            read_features(tmp_path / "x.dilf")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.dilf").write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(DataError):
            read_features(tmp_path / "x.dilf")


class TestManifest:
    def write(self, tmp_path, text):
        write_features(tmp_path / "a.dilf", np.zeros((16, 16)))
        write_features(tmp_path / "b.dilf", np.ones((16, 16)))
        (tmp_path / "m.csv").write_text(text)
        return tmp_path / "m.csv"

    def test_parses_with_comments(self, tmp_path):
        m = load_manifest(self.write(tmp_path, "# header\na.dilf,A,dog\n\nb.dilf,B,dog;rain\n"), CLASSES)
        assert [r.labels for r in m.records] == [("dog",), ("dog", "rain")]
        assert m.domains() == ["A", "B"] and m.records[1].line == 4

    def test_unknown_label_names_line(self, tmp_path):
        with pytest.raises(DataError, match=r"m.csv:2: unknown label 'cat'"):
            load_manifest(self.write(tmp_path, "a.dilf,A,dog\nb.dilf,A,cat\n"), CLASSES)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match=":1: feature file c.dilf"):
            load_manifest(self.write(tmp_path, "c.dilf,A,dog\n"))

    def test_duplicate_path(self, tmp_path):
        with pytest.raises(DataError, match="duplicate"):
            load_manifest(self.write(tmp_path, "a.dilf,A,dog\na.dilf,A,rain\n"))

    def test_empty(self, tmp_path):
        with pytest.raises(DataError, match="no records"):
            load_manifest(self.write(tmp_path, "# nothing\n"))

    def test_malformed_line(self, tmp_path):
        with pytest.raises(DataError, match=":1: expected"):
            load_manifest(self.write(tmp_path, "a.dilf,A\n"))

    def test_load_features_dim_error_names_line(self, tmp_path):
        m = load_manifest(self.write(tmp_path, "a.dilf,A,dog\n"))
        with pytest.raises(DataError, match="line 1"):
            load_features(m.records[0], 8, 8)

    def test_single_label_domain_needs_one_label(self, tmp_path):
        m = load_manifest(self.write(tmp_path, "a.dilf,A,dog;rain\n"))
        with pytest.raises(DataError, match="exactly one"):
            load_domain(m, CLASSES)

    def test_dataset_round_trip(self, tmp_path):
        for kind in ("single", "multi"):
            ds = generate_synthetic_domain(spec(task_kind=kind), 0)
            write_dataset(ds, tmp_path / kind)
            back = read_dataset(tmp_path / kind, CLASSES, kind, 16, 16)
            np.testing.assert_array_equal(back.train.features, ds.train.features)
            np.testing.assert_array_equal(back.test.labels, ds.test.labels)
            assert back.test.task_kind == TaskKind(kind)


class TestBatching:
    def test_sizes(self):
        assert [len(b) for b in batch_indices(10, 4, 0)] == [4, 4, 2]

    def test_same_seed_same_order(self):
        a, b = batch_indices(10, 3, 5), batch_indices(10, 3, 5)
        assert all((x == y).all() for x, y in zip(a, b))

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            batch_indices(5, 0, 0)

    @given(st.integers(1, 60), st.integers(1, 17), st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_union_covers_once(self, n, size, seed):
        assert sorted(np.concatenate(batch_indices(n, size, seed)).tolist()) == list(range(n))

    def test_batch_iter_subsets(self):
        ds = generate_synthetic_domain(spec(), 0).train
        batches = list(batch_iter(ds, 5, 1))
        assert sum(len(b) for b in batches) == len(ds)
        assert batches[0].classes == ds.classes
