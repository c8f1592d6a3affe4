"""
Tests for gaussproto.datagen module.
"""

import numpy as np
import pytest

from gaussproto.datagen import (
    DatasetSpec,
    class_centroids,
    generate,
    generate_splits,
    stack_pixels,
)
from gaussproto.errors import ContractViolation


def _small_spec(**overrides):
    values = dict(
        num_scenes=20,
        labeled_fraction=0.25,
        num_classes=4,
        grid_size=8,
        feature_dim=5,
        seed=3,
    )
    values.update(overrides)
    return DatasetSpec(**values)


def _nearest_centroid_accuracy(scenes, centroids):
    features, labels, _ = stack_pixels(scenes)
    dists = ((features[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    return float(np.mean(np.argmin(dists, axis=1) == labels))


class TestDatasetSpec:
    """Tests for DatasetSpec validation."""

    def test_defaults(self):
        """Test the default benchmark settings."""
        spec = DatasetSpec()
        spec.validate()
        assert (spec.num_classes, spec.grid_size, spec.feature_dim) == (6, 16, 8)
        assert spec.labeled_fraction == 0.05

    def test_too_many_classes(self):
        """Test more classes than pixels is infeasible."""
        with pytest.raises(ContractViolation):
            generate(_small_spec(grid_size=2, num_classes=5))

    def test_labeled_fraction_range(self):
        """Test the labeled fraction must lie in (0, 1]."""
        with pytest.raises(ContractViolation):
            _small_spec(labeled_fraction=0.0).validate()
        with pytest.raises(ContractViolation):
            _small_spec(labeled_fraction=1.5).validate()

    def test_single_class(self):
        """Test at least two classes are required."""
        with pytest.raises(ContractViolation):
            _small_spec(num_classes=1).validate()


class TestGenerate:
    """Tests for generate and generate_splits."""

    def test_shapes_and_dtypes(self):
        """Test scenes carry (G, G, F) float32 features and uint8 labels."""
        labeled, unlabeled = generate(_small_spec())
        scene = (labeled + unlabeled)[0]
        assert scene.features.shape == (8, 8, 5)
        assert scene.features.dtype == np.float32
        assert scene.labels.dtype == np.uint8
        assert np.all(np.isfinite(scene.features))
        assert scene.labels.max() < 4

    def test_reproducible(self):
        """Test the same spec gives bit-identical scenes."""
        a_lab, a_unl = generate(_small_spec())
        b_lab, b_unl = generate(_small_spec())
        for a, b in zip(a_lab + a_unl, b_lab + b_unl):
            assert a.scene_id == b.scene_id
            assert a.features.tobytes() == b.features.tobytes()
            assert a.labels.tobytes() == b.labels.tobytes()

    def test_labeled_fraction_one(self):
        """Test labeling everything leaves the unlabeled set empty."""
        labeled, unlabeled = generate(_small_spec(labeled_fraction=1.0))
        assert len(labeled) == 20
        assert unlabeled == []

    def test_split_sizes(self):
        """Test the labeled share follows labeled_fraction."""
        labeled, unlabeled = generate(_small_spec())
        assert len(labeled) == 5
        assert len(unlabeled) == 15
        assert all(s.is_labeled for s in labeled)
        assert not any(s.is_labeled for s in unlabeled)

    def test_every_class_appears(self):
        """Test each class is present in at least one scene."""
        labeled, unlabeled = generate(_small_spec())
        seen = set()
        for scene in labeled + unlabeled:
            seen.update(np.unique(scene.labels).tolist())
        assert seen == {0, 1, 2, 3}

    def test_noiseless_data_is_separable(self):
        """Test zero noise and blur give perfect nearest-centroid accuracy."""
        spec = _small_spec(noise_sigma=0.0, boundary_blur=0.0)
        labeled, unlabeled = generate(spec)
        centroids = class_centroids(spec, np.random.default_rng(spec.seed))
        assert _nearest_centroid_accuracy(labeled + unlabeled, centroids) == 1.0

    def test_noise_does_not_help(self):
        """Test nearest-centroid accuracy does not rise with more noise."""
        accuracies = []
        for noise in (0.5, 1.5, 3.0):
            spec = _small_spec(noise_sigma=noise, boundary_blur=0.0)
            labeled, unlabeled = generate(spec)
            centroids = class_centroids(spec, np.random.default_rng(spec.seed))
            scenes = labeled + unlabeled
            accuracies.append(_nearest_centroid_accuracy(scenes, centroids))
        assert accuracies[0] >= accuracies[1] >= accuracies[2]

    def test_splits_partition_scenes(self):
        """Test validation, labeled and unlabeled scenes are disjoint and complete."""
        splits = generate_splits(_small_spec(), val_fraction=0.2)
        ids = [s.scene_id for s in splits.labeled + splits.unlabeled + splits.val]
        assert sorted(ids) == list(range(20))
        assert len(splits.val) == 4
        assert len(splits.labeled) == 4

    def test_invalid_val_fraction(self):
        """Test the validation share must be below one."""
        with pytest.raises(ContractViolation):
            generate_splits(_small_spec(), val_fraction=1.0)

    def test_empty_dataset(self):
        """Test zero scenes give empty splits."""
        splits = generate_splits(_small_spec(num_scenes=0))
        assert splits == ([], [], [])


class TestStackPixels:
    """Tests for stack_pixels."""

    def test_rows_per_pixel(self):
        """Test one row per pixel with its scene id."""
        labeled, _ = generate(_small_spec())
        features, labels, ids = stack_pixels(labeled[:2])
        assert features.shape == (128, 5)
        assert labels.shape == (128,)
        assert ids[0] == labeled[0].scene_id
        assert ids[-1] == labeled[1].scene_id

    def test_empty(self):
        """Test no scenes give empty arrays."""
        features, labels, ids = stack_pixels([])
        assert features.shape[0] == labels.shape[0] == ids.shape[0] == 0
