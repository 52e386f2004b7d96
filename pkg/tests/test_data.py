"""Dataset generators, binary formats, and the config parser."""

import numpy as np
import pytest

from rodd.data import (
    Dataset,
    parse_config,
    read_cifar_binary,
    read_features,
    synth_gaussian_mixture,
    synth_ood_cluster,
    write_features,
)
from rodd.errors import ContractViolation, FormatError


class TestGaussianMixture:
    def test_zero_noise_collapses_to_means(self):
        ds = synth_gaussian_mixture(3, 5, 8, separation=4.0, noise_sigma=0.0, seed=1)
        for cls in range(3):
            block = ds.inputs[ds.labels == cls]
            assert np.abs(block - block[0]).max() == 0.0
            assert abs(np.linalg.norm(block[0]) - 4.0) <= 1e-9

    def test_nearest_mean_classifier_is_perfect_when_separated(self):
        ds = synth_gaussian_mixture(2, 100, 16, separation=10.0, noise_sigma=0.1, seed=2)
        means = np.stack([ds.inputs[ds.labels == c].mean(axis=0) for c in range(2)])
        d2 = ((ds.inputs[:, None, :] - means[None]) ** 2).sum(axis=2)
        assert (np.argmin(d2, axis=1) == ds.labels).mean() == 1.0

    def test_deterministic(self):
        a = synth_gaussian_mixture(2, 10, 6, 3.0, 0.5, seed=5)
        b = synth_gaussian_mixture(2, 10, 6, 3.0, 0.5, seed=5)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.labels, b.labels)

    def test_contract_violations(self):
        with pytest.raises(ContractViolation):
            synth_gaussian_mixture(1, 10, 6, 3.0, 0.5, seed=0)
        with pytest.raises(ContractViolation):
            synth_gaussian_mixture(8, 10, 6, 3.0, 0.5, seed=0)  # L > input_dim
        with pytest.raises(ContractViolation):
            synth_gaussian_mixture(2, 10, 6, 0.0, 0.5, seed=0)


class TestOodCluster:
    def test_zero_noise_degenerate(self):
        ds = synth_ood_cluster(8, 5, 3, offset_norm=6.0, noise_sigma=0.0, seed=1)
        assert np.abs(ds.inputs - ds.inputs[0]).max() == 0.0
        assert abs(np.linalg.norm(ds.inputs[0]) - 6.0) <= 1e-9
        assert ds.labels is None

    def test_deterministic(self):
        a = synth_ood_cluster(8, 20, 3, 6.0, 0.3, seed=9)
        b = synth_ood_cluster(8, 20, 3, 6.0, 0.3, seed=9)
        assert np.array_equal(a.inputs, b.inputs)

    def test_empirical_mean_norm(self):
        sigma, n = 0.5, 400
        ds = synth_ood_cluster(16, n, 3, offset_norm=8.0, noise_sigma=sigma, seed=21)
        assert abs(np.linalg.norm(ds.inputs.mean(axis=0)) - 8.0) <= 3 * sigma / np.sqrt(n)


class TestCifarBinary:
    def test_single_record(self, tmp_path):
        path = tmp_path / "one.bin"
        path.write_bytes(bytes([7]) + bytes(3072))
        ds = read_cifar_binary(path)
        assert ds.n == 1
        assert ds.labels[0] == 7
        assert ds.inputs.max() == 0.0

    def test_pixel_scaling(self, tmp_path):
        path = tmp_path / "max.bin"
        path.write_bytes(bytes([0]) + bytes([255] * 3072))
        ds = read_cifar_binary(path)
        assert ds.inputs.min() == 1.0

    def test_record_order(self, tmp_path):
        path = tmp_path / "two.bin"
        path.write_bytes(bytes([1]) + bytes([10] * 3072) + bytes([2]) + bytes([20] * 3072))
        ds = read_cifar_binary(path)
        assert list(ds.labels) == [1, 2]
        assert ds.inputs[0, 0] == 10 / 255.0
        assert ds.inputs[1, 0] == 20 / 255.0

    def test_bad_length(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(bytes(3072))  # one byte short of a record
        with pytest.raises(FormatError, match="3073"):
            read_cifar_binary(path)

    def test_bad_label(self, tmp_path):
        path = tmp_path / "lbl.bin"
        path.write_bytes(bytes([11]) + bytes(3072))
        with pytest.raises(FormatError, match="record 0"):
            read_cifar_binary(path)


class TestFeatureFile:
    def test_round_trip_with_labels(self, tmp_path):
        rng = np.random.default_rng(3)
        feats = rng.standard_normal((10, 4))
        labels = rng.integers(0, 5, size=10)
        path = tmp_path / "f.feat"
        write_features(path, feats, labels)
        back, lab = read_features(path)
        assert np.array_equal(back, feats.astype(np.float32).astype(np.float64))
        assert np.array_equal(lab, labels)

    def test_round_trip_without_labels(self, tmp_path):
        path = tmp_path / "f.feat"
        write_features(path, np.ones((3, 2)))
        back, lab = read_features(path)
        assert lab is None
        assert back.shape == (3, 2)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "f.feat"
        write_features(path, np.ones((4, 3)))
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(FormatError, match="5 missing"):
            read_features(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "f.feat"
        path.write_bytes(b"NOTAFEAT1" + bytes(12))
        with pytest.raises(FormatError, match="magic"):
            read_features(path)


class TestDataset:
    def test_label_range_checked(self):
        with pytest.raises(ContractViolation):
            Dataset(np.ones((2, 2)), np.array([0, 3]), class_count=2)

    def test_empty_rejected(self):
        with pytest.raises(ContractViolation):
            Dataset(np.ones((0, 2)), None, 0)


class TestConfigParser:
    def test_typed_values(self):
        cfg = parse_config("[train]\nepochs = 10\nlr = 0.05\ncontrastive = true\n")
        assert cfg.get("train.epochs") == 10
        assert cfg.get("train.lr") == 0.05
        assert cfg.get("train.contrastive") is True

    def test_unknown_key_names_line(self):
        with pytest.raises(FormatError, match="line 1"):
            parse_config("unknown_key = 1\n")

    def test_duplicate_key(self):
        with pytest.raises(FormatError, match="duplicate"):
            parse_config("[train]\nepochs = 1\nepochs = 2\n")

    def test_type_mismatch_names_line(self):
        with pytest.raises(FormatError, match="line 2"):
            parse_config("[train]\nepochs = soon\n")

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# comment\n\n[eval]\ntpr_target = 0.9  # inline\n")
        assert cfg.get("eval.tpr_target") == 0.9

    def test_missing_equals(self):
        with pytest.raises(FormatError, match="line 2"):
            parse_config("[train]\nepochs\n")

    def test_integer_accepted_for_float_key(self):
        cfg = parse_config("[train]\nlr = 1\n")
        assert cfg.get("train.lr") == 1.0
        assert isinstance(cfg.get("train.lr"), float)
