"""
Synthetic semi-supervised segmentation benchmark.

Each scene is a G x G grid of pixels. Classes occupy axis-aligned
rectangles layered on top of a background class; each pixel carries an
F-dimensional feature drawn around its class centroid. Pixels on a class
boundary may mix in the neighbouring class's centroid, producing
ambiguous ("fuzzy") pixels.
"""

import logging
import warnings
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, NamedTuple, Tuple

import numpy as np

from .errors import ContractViolation, get_diagnostics

logger = logging.getLogger(__name__)

MAX_COVERAGE_REROLLS = 16


@dataclass(frozen=True)
class DatasetSpec:
    """
    Parameters of a synthetic dataset.

    Args:
        num_scenes: Number of scenes to generate
        labeled_fraction: Fraction of training scenes that keep labels
        num_classes: Number of classes C
        grid_size: Scene side length G
        feature_dim: Pixel feature dimension F
        class_separation: Mean pairwise distance between class centroids
        noise_sigma: Standard deviation of pixel feature noise
        boundary_blur: Probability that a boundary pixel mixes features
            with a neighbouring class
        seed: Generation seed
    """

    num_scenes: int = 200
    labeled_fraction: float = 0.05
    num_classes: int = 6
    grid_size: int = 16
    feature_dim: int = 8
    class_separation: float = 4.0
    noise_sigma: float = 1.0
    boundary_blur: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        """
        Raises:
            ContractViolation: If ``spec`` cannot be realized
        """
        if self.num_scenes < 0:
            raise ContractViolation("num_scenes must be >= 0")
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ContractViolation("labeled_fraction must be in (0, 1]")
        if self.num_classes < 2:
            raise ContractViolation("at least two classes are required")
        if self.grid_size < 1 or self.feature_dim < 1:
            raise ContractViolation("grid_size and feature_dim must be >= 1")
        if self.num_classes > self.grid_size**2:
            raise ContractViolation(
                f"{self.num_classes} classes cannot fit in a "
                f"{self.grid_size}x{self.grid_size} grid"
            )
        if self.num_classes > 255:
            raise ContractViolation("class ids are stored as bytes (C <= 255)")
        if self.noise_sigma < 0 or self.class_separation < 0:
            raise ContractViolation("noise_sigma and class_separation must be >= 0")
        if not 0.0 <= self.boundary_blur <= 1.0:
            raise ContractViolation("boundary_blur must be in [0, 1]")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(eq=False)
class ToyScene:
    """
    One synthetic scene.

    ``features`` is ``(G, G, F)`` float32, ``labels`` is ``(G, G)`` uint8.
    """

    scene_id: int
    features: np.ndarray
    labels: np.ndarray
    is_labeled: bool

    def pixels(self) -> Tuple[np.ndarray, np.ndarray]:
        """Flattened ``(G*G, F)`` features and ``(G*G,)`` labels."""
        g = self.labels.shape[0]
        return (
            self.features.reshape(g * g, -1).astype(np.float64),
            self.labels.reshape(-1).astype(np.int64),
        )


class DatasetSplits(NamedTuple):
    """Labeled, unlabeled and held-out validation scenes."""

    labeled: List[ToyScene]
    unlabeled: List[ToyScene]
    val: List[ToyScene]


def class_centroids(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """``(C, F)`` centroids whose mean pairwise distance is the separation."""
    centroids = rng.standard_normal((spec.num_classes, spec.feature_dim))
    diffs = centroids[:, None, :] - centroids[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=-1))
    upper = dists[np.triu_indices(spec.num_classes, k=1)]
    mean_dist = float(upper.mean()) if upper.size else 1.0
    if mean_dist == 0.0:
        return centroids
    return centroids * (spec.class_separation / mean_dist)


def _layout(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    g = spec.grid_size
    labels = np.full((g, g), rng.integers(spec.num_classes), dtype=np.uint8)
    n_rects = int(rng.integers(2, 2 + spec.num_classes))
    for _ in range(n_rects):
        c = rng.integers(spec.num_classes)
        h = int(rng.integers(1, g + 1))
        w = int(rng.integers(1, g + 1))
        top = int(rng.integers(0, g - h + 1))
        left = int(rng.integers(0, g - w + 1))
        labels[top : top + h, left : left + w] = c
    return labels


def _boundary_partner(labels: np.ndarray) -> np.ndarray:
    """For each pixel a differing 4-neighbour class, or -1 if none."""
    g = labels.shape[0]
    partner = np.full(labels.shape, -1, dtype=np.int64)
    padded = np.pad(labels.astype(np.int64), 1, mode="edge")
    # fixed neighbour order: up, down, left, right
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        neigh = padded[1 + dy : 1 + dy + g, 1 + dx : 1 + dx + g]
        differs = (neigh != labels) & (partner < 0)
        partner[differs] = neigh[differs]
    return partner


def _render(
    spec: DatasetSpec, centroids: np.ndarray, noise_scale: np.ndarray, rng
) -> List[Tuple[np.ndarray, np.ndarray]]:
    scenes = []
    for _ in range(spec.num_scenes):
        labels = _layout(spec, rng)
        base = centroids[labels]
        partner = _boundary_partner(labels)
        blur = (partner >= 0) & (rng.random(labels.shape) < spec.boundary_blur)
        if np.any(blur):
            base[blur] = 0.5 * (base[blur] + centroids[partner[blur]])
        sigma = spec.noise_sigma * noise_scale[labels][..., None]
        noise = rng.standard_normal(base.shape)
        features = (base + sigma * noise).astype(np.float32)
        scenes.append((features, labels))
    return scenes


def _render_with_coverage(spec: DatasetSpec):
    rng = np.random.default_rng(spec.seed)
    centroids = class_centroids(spec, rng)
    # class-dependent noise level
    noise_scale = rng.uniform(0.75, 1.25, size=spec.num_classes)
    rendered = _render(spec, centroids, noise_scale, rng)
    if spec.num_scenes == 0:
        return rendered, rng
    for attempt in range(MAX_COVERAGE_REROLLS):
        seen = np.zeros(spec.num_classes, dtype=bool)
        for _, labels in rendered:
            seen[np.unique(labels)] = True
        if seen.all():
            return rendered, rng
        get_diagnostics().increment("class_coverage_reroll")
        logger.debug("class coverage reroll %d", attempt + 1)
        rendered = _render(spec, centroids, noise_scale, rng)
    warnings.warn(
        f"not every class appears after {MAX_COVERAGE_REROLLS} rerolls",
        RuntimeWarning,
    )
    return rendered, rng


def _split_labeled(
    scenes: List[Tuple[np.ndarray, np.ndarray]],
    ids: np.ndarray,
    fraction: float,
    rng: np.random.Generator,
) -> Tuple[List[ToyScene], List[ToyScene]]:
    if len(ids) == 0:
        return [], []
    n_labeled = max(1, int(round(fraction * len(ids))))
    labeled_ids = set(rng.permutation(ids)[:n_labeled].tolist())
    labeled, unlabeled = [], []
    for i in ids:
        features, labels = scenes[i]
        scene = ToyScene(int(i), features, labels, int(i) in labeled_ids)
        (labeled if scene.is_labeled else unlabeled).append(scene)
    return labeled, unlabeled


def generate(spec: DatasetSpec) -> Tuple[List[ToyScene], List[ToyScene]]:
    """
    Generate every scene and split it into labeled and unlabeled sets.

    The output is a pure function of ``spec`` (including its seed).

    Returns:
        ``(labeled, unlabeled)`` lists of ToyScene

    Raises:
        ContractViolation: If ``spec`` is infeasible
    """
    spec.validate()
    rendered, rng = _render_with_coverage(spec)
    ids = np.arange(len(rendered))
    return _split_labeled(rendered, ids, spec.labeled_fraction, rng)


def generate_splits(spec: DatasetSpec, val_fraction: float = 0.2) -> DatasetSplits:
    """
    Generate scenes, hold out ``val_fraction`` of them for validation, then
    split the rest into labeled and unlabeled sets.
    """
    spec.validate()
    if not 0.0 <= val_fraction < 1.0:
        raise ContractViolation("val_fraction must be in [0, 1)")
    rendered, rng = _render_with_coverage(spec)
    order = rng.permutation(len(rendered))
    n_val = int(round(val_fraction * len(rendered)))
    val_ids = np.sort(order[:n_val])
    train_ids = np.sort(order[n_val:])
    val = [ToyScene(int(i), rendered[i][0], rendered[i][1], True) for i in val_ids]
    labeled, unlabeled = _split_labeled(
        rendered, train_ids, spec.labeled_fraction, rng
    )
    return DatasetSplits(labeled, unlabeled, val)


def stack_pixels(scenes: List[ToyScene]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Concatenate the pixels of several scenes.

    Returns:
        ``(features, labels, scene_ids)`` with one row per pixel
    """
    if not scenes:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64), np.zeros(0, np.int64)
    feats, labels, ids = [], [], []
    for scene in scenes:
        f, y = scene.pixels()
        feats.append(f)
        labels.append(y)
        ids.append(np.full(y.shape[0], scene.scene_id, dtype=np.int64))
    return np.concatenate(feats), np.concatenate(labels), np.concatenate(ids)
