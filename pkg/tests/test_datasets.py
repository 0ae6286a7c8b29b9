import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nes_lab import datasets as dsm
from nes_lab.datasets import Dataset
from nes_lab.errors import ConfigError, DomainError, IdxFormatError, MissingTrackError
from nes_lab.noise import build_symmetric


def small(n=50, c=3, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, 4)), rng.integers(0, c, n), c)


class TestDataset:
    def test_labels_validated(self):
        with pytest.raises(DomainError):
            Dataset(np.zeros((3, 2)), np.array([0, 1, 3]), 3)
        with pytest.raises(DomainError):
            Dataset(np.zeros((3, 2)), np.array([0, 1]), 3)

    def test_missing_noisy_track(self):
        with pytest.raises(MissingTrackError):
            small().labels("noisy")
        with pytest.raises(MissingTrackError):
            small().labels("other")

    def test_with_noise_keeps_clean_track(self):
        ds = small(200)
        noisy = ds.with_noise(build_symmetric(3, 0.5), seed=1)
        np.testing.assert_array_equal(noisy.clean_labels, ds.clean_labels)
        assert np.any(noisy.noisy_labels != ds.clean_labels)
        assert noisy.provenance.noise_seed == 1

    def test_take_tracks_index(self):
        ds = small(10)
        sub = ds.take([7, 2])
        np.testing.assert_array_equal(sub.index, [7, 2])
        np.testing.assert_array_equal(sub.features, ds.features[[7, 2]])


class TestIdx:
    def write(self, tmp_path, n=5, gz=False):
        rng = np.random.default_rng(0)
        imgs = rng.integers(0, 256, size=(n, 3, 2), dtype=np.uint8)
        labs = rng.integers(0, 10, size=n, dtype=np.uint8)
        ip, lp = tmp_path / "img", tmp_path / "lab"
        dsm.write_idx(ip, lp, imgs, labs)
        if gz:
            for p in (ip, lp):
                p.write_bytes(gzip.compress(p.read_bytes()))
        return ip, lp, imgs, labs

    @pytest.mark.parametrize("gz", [False, True])
    def test_round_trip(self, tmp_path, gz):
        ip, lp, imgs, labs = self.write(tmp_path, gz=gz)
        np.testing.assert_array_equal(dsm.read_idx_images(ip), imgs)
        np.testing.assert_array_equal(dsm.read_idx_labels(lp), labs)
        ds = dsm.load_idx(ip, lp)
        np.testing.assert_allclose(ds.features, imgs.reshape(5, -1) / 255.0)
        assert ds.c == max(2, int(labs.max()) + 1)

    def test_header_is_big_endian(self, tmp_path):
        ip, lp, *_ = self.write(tmp_path)
        raw = ip.read_bytes()
        assert struct.unpack(">4I", raw[:16]) == (2051, 5, 3, 2)

    def test_bad_magic_reports_offset_zero(self, tmp_path):
        p = tmp_path / "bad"
        p.write_bytes(struct.pack(">2I", 1234, 0))
        with pytest.raises(IdxFormatError) as err:
            dsm.read_idx_labels(p)
        assert err.value.offset == 0

    def test_truncated_payload(self, tmp_path):
        ip, lp, *_ = self.write(tmp_path)
        lp.write_bytes(lp.read_bytes()[:-2])
        with pytest.raises(IdxFormatError) as err:
            dsm.read_idx_labels(lp)
        assert err.value.offset == 8 + 3

    def test_count_mismatch(self, tmp_path):
        ip, lp, imgs, labs = self.write(tmp_path)
        dsm.write_idx_labels(lp, labs[:4])
        with pytest.raises(IdxFormatError):
            dsm.load_idx(ip, lp)


class TestCache:
    def test_round_trip_with_noise(self, tmp_path):
        ds = small(40).with_noise(build_symmetric(3, 0.3), seed=2)
        path = tmp_path / "d.nesd"
        dsm.save_cache(ds, path)
        back = dsm.load_cache(path)
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.clean_labels, ds.clean_labels)
        np.testing.assert_array_equal(back.noisy_labels, ds.noisy_labels)
        assert back.provenance == ds.provenance

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "d.nesd"
        dsm.save_cache(small(5), path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(IdxFormatError):
            dsm.load_cache(path)

    def test_bad_tag(self, tmp_path):
        path = tmp_path / "d.nesd"
        dsm.save_cache(small(5), path)
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(IdxFormatError):
            dsm.load_cache(path)


class TestSplit:
    def test_sizes_and_disjointness(self):
        ds = small(1000).with_noise(build_symmetric(3, 0.2), seed=0)
        sp = dsm.split(ds, (0.7, 0.15, 0.15), seed=3)
        assert sp.sizes() == (700, 150, 150)
        ids = np.concatenate([sp.train.index, sp.noisy_val.index, sp.test.index])
        assert len(np.unique(ids)) == 1000

    def test_clean_views_hide_noisy_labels(self):
        ds = small(100).with_noise(build_symmetric(3, 0.2), seed=0)
        sp = dsm.split(ds, seed=0)
        assert sp.clean_val.noisy_labels is None and sp.test.noisy_labels is None
        np.testing.assert_array_equal(sp.clean_val.index, sp.noisy_val.index)

    def test_seeded(self):
        ds = small(100)
        a, b = dsm.split(ds, seed=4), dsm.split(ds, seed=4)
        np.testing.assert_array_equal(a.train.index, b.train.index)

    @pytest.mark.parametrize("fr", [(0.5, 0.5), (0.7, 0.2, 0.2), (1.0, 0.0, 0.0)])
    def test_bad_fractions(self, fr):
        with pytest.raises(ConfigError):
            dsm.split(small(100), fr)

    def test_too_small_for_three_parts(self):
        with pytest.raises(ConfigError):
            dsm.split(small(3), (0.8, 0.1, 0.1))

    @given(n=st.integers(10, 400), seed=st.integers(0, 1000))
    @settings(max_examples=40, deadline=None)
    def test_partition_property(self, n, seed):
        sp = dsm.split(small(n), seed=seed)
        assert sp.train.n + sp.noisy_val.n + sp.test.n == n


class TestGeneration:
    def test_synthetic_shape_and_scaling(self):
        ds = dsm.make_synthetic()
        assert (ds.n, ds.d, ds.c) == (2000, 20, 3)
        np.testing.assert_allclose(ds.features.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(ds.features.std(axis=0), 1, atol=1e-12)

    def test_synthetic_is_deterministic(self):
        a, b = dsm.make_synthetic(seed=42), dsm.make_synthetic(seed=42)
        np.testing.assert_array_equal(a.features, b.features)

    def test_informative_columns_carry_signal(self):
        ds = dsm.make_synthetic()
        means = np.array([ds.features[ds.clean_labels == k].mean(axis=0) for k in range(3)])
        assert np.ptp(means[:, :10], axis=0).max() > 1.0
        assert np.ptp(means[:, 10:], axis=0).max() < 0.3

    def test_subset_classes_relabels(self):
        ds = Dataset(np.zeros((6, 1)), np.array([0, 3, 5, 3, 1, 5]), 6)
        sub = dsm.subset_classes(ds, [5, 3])
        np.testing.assert_array_equal(sub.clean_labels, [0, 1, 0, 1])
        assert sub.c == 2

    def test_subsample_resets_index(self):
        sub = dsm.subsample(small(100), 30, seed=0)
        np.testing.assert_array_equal(sub.index, np.arange(30))
