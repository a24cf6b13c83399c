"""Synthetic bar-pattern datasets and the manifest directory format."""

import logging

import numpy as np
import pytest

from wig.data import PATTERNS, generate_samples, load_dataset, pattern_mask, write_dataset
from wig.errors import FormatError
from wig.model import build_architecture, train_model


class TestPatterns:
    def test_shapes(self):
        assert np.flatnonzero(pattern_mask(0, 4).any(axis=1)).tolist() == [2]
        assert np.flatnonzero(pattern_mask(1, 4).any(axis=0)).tolist() == [2]
        assert np.array_equal(pattern_mask(2, 3), np.eye(3, dtype=bool))
        assert np.array_equal(pattern_mask(3, 3), np.eye(3, dtype=bool)[::-1])

    def test_all_patterns_distinct(self):
        masks = [pattern_mask(k, 5).tobytes() for k in range(len(PATTERNS))]
        assert len(set(masks)) == len(PATTERNS)


class TestGenerate:
    def test_ground_truth_is_pattern_inside_patch(self):
        for s in generate_samples(30, 9, 11, 2, 4, 0.3, 4, seed=1):
            r, c = s.origin
            assert s.image.shape == (2, 9, 11)
            assert s.ground_truth.sum() == 4
            assert np.array_equal(s.ground_truth[r:r + 4, c:c + 4], pattern_mask(s.label, 4))

    def test_noise_free_images_are_constants(self):
        for s in generate_samples(10, 6, 6, 1, 3, 0.0, 2, seed=2):
            assert set(np.unique(s.image).tolist()) <= {0.0, 1.0}
            assert np.array_equal(s.image[0] == 1.0, s.ground_truth)

    def test_deterministic(self):
        a = generate_samples(5, seed=3)
        b = generate_samples(5, seed=3)
        assert all(np.array_equal(x.image, y.image) and x.label == y.label for x, y in zip(a, b))

    @pytest.mark.parametrize("kw", [{"n_classes": 5}, {"n_classes": 1}, {"signal_size": 11},
                                    {"signal_size": 1}, {"count": 0}, {"noise_sigma": -1.0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            generate_samples(**{"count": 3, **kw})

    def test_signal_region_determines_label(self):
        """A linear probe on the signal patch alone separates the classes."""
        samples = generate_samples(400, 10, 10, 1, 4, 0.3, 4, seed=4)
        crops = np.stack([s.image[0, s.origin[0]:s.origin[0] + 4, s.origin[1]:s.origin[1] + 4].ravel()
                          for s in samples])
        labels = np.array([s.label for s in samples])
        rng = np.random.default_rng(0)
        model, _ = train_model(build_architecture("linear", (16,), 4, rng), crops[:200], labels[:200],
                               50, 0.5, rng)
        acc = np.mean(model.predict_batch(crops[200:]) == labels[200:])
        assert acc >= 0.95


class TestDirectory:
    def test_round_trip(self, tmp_path):
        samples = generate_samples(6, 5, 5, 2, 3, 0.2, 2, seed=5)
        manifest = write_dataset(tmp_path, samples)
        assert manifest.read_text().splitlines()[:2] == ["path,label,mask",
                                                          f"images/00000.ntf,{samples[0].label},masks/00000.ntf"]
        ds = load_dataset(tmp_path)
        assert len(ds) == 6 and ds.images.shape == (6, 2, 5, 5)
        assert np.array_equal(ds.images[3], samples[3].image)
        assert np.array_equal(ds.masks[4], samples[4].ground_truth)
        part = load_dataset(tmp_path, limit=2, offset=3)
        assert part.paths == ["images/00003.ntf", "images/00004.ntf"]

    def test_missing_masks_warn(self, tmp_path, caplog):
        write_dataset(tmp_path, generate_samples(3, seed=6))
        (tmp_path / "masks" / "00001.ntf").unlink()
        with caplog.at_level(logging.WARNING):
            ds = load_dataset(tmp_path)
        assert ds.masks is None and "overlap" in caplog.text

    def test_manifest_without_mask_column(self, tmp_path):
        write_dataset(tmp_path, generate_samples(2, seed=7))
        (tmp_path / "manifest.csv").write_text("path,label\nimages/00000.ntf,1\n")
        ds = load_dataset(tmp_path)
        assert ds.labels.tolist() == [1] and ds.masks is None

    @pytest.mark.parametrize("text,field", [("file,label\n", "header"), ("path,label\nimages/00000.ntf,x\n", "label"),
                                            ("path,label\n", "no samples")])
    def test_bad_manifest(self, tmp_path, text, field):
        write_dataset(tmp_path, generate_samples(1, seed=8))
        (tmp_path / "manifest.csv").write_text(text)
        with pytest.raises(FormatError, match=field):
            load_dataset(tmp_path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FormatError, match="manifest"):
            load_dataset(tmp_path)
