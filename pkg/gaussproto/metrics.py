"""
Evaluation metrics: mean IoU over a confusion matrix, and clustering
quality of representation means (silhouette score, Davies-Bouldin index).
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.metrics import confusion_matrix, davies_bouldin_score, silhouette_score

from .errors import ContractViolation

logger = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    """
    ``C x C`` pixel counts; rows are ground truth, columns are predictions.
    """

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ContractViolation("confusion matrix must be square")
        if np.any(counts < 0):
            raise ContractViolation("confusion matrix entries must be >= 0")
        self.counts = counts

    @classmethod
    def from_predictions(
        cls, ground_truth: np.ndarray, predicted: np.ndarray, num_classes: int
    ) -> "ConfusionMatrix":
        counts = confusion_matrix(
            np.asarray(ground_truth).reshape(-1),
            np.asarray(predicted).reshape(-1),
            labels=np.arange(num_classes),
        )
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """IoU per class; NaN for classes absent from both GT and prediction."""
    tp = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - tp
    iou = np.full(tp.shape, np.nan)
    present = union > 0
    iou[present] = tp[present] / union[present]
    return iou


def miou(cm: ConfusionMatrix) -> float:
    """
    Mean IoU over classes present in ground truth or prediction.

    Raises:
        ContractViolation: If the matrix is empty

    Examples:
        >>> round(miou(ConfusionMatrix(np.array([[3, 1], [2, 4]]))), 4)
        0.5357
    """
    if cm.total == 0:
        raise ContractViolation("cannot compute mIoU of an empty confusion matrix")
    return float(np.nanmean(per_class_iou(cm)))


def _check_clusters(points: np.ndarray, labels: np.ndarray):
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if points.ndim != 2 or points.shape[0] != labels.shape[0]:
        raise ContractViolation("points must be (n, D) with one label per point")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ContractViolation("clustering metrics need at least two classes")
    return points, labels, classes


def silhouette(points: np.ndarray, labels: np.ndarray) -> float:
    """
    Mean silhouette coefficient with Euclidean distances.

    Points in singleton classes contribute 0.

    Raises:
        ContractViolation: If fewer than two classes are present
    """
    points, labels, classes = _check_clusters(points, labels)
    if classes.size == points.shape[0]:
        # every point is a singleton
        return 0.0
    return float(silhouette_score(points, labels, metric="euclidean"))


def davies_bouldin(points: np.ndarray, labels: np.ndarray) -> float:
    """
    Davies-Bouldin index (lower is better).

    Scatter is the mean Euclidean distance to the class centroid.

    Raises:
        ContractViolation: If fewer than two classes are present or two
            class centroids coincide
    """
    points, labels, classes = _check_clusters(points, labels)
    centroids = np.stack([points[labels == c].mean(axis=0) for c in classes])
    diffs = centroids[:, None, :] - centroids[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=-1))
    off_diag = dists[~np.eye(len(classes), dtype=bool)]
    if np.any(off_diag == 0.0):
        raise ContractViolation("Davies-Bouldin index undefined: centroids coincide")
    return float(davies_bouldin_score(points, labels))


def representation_quality(
    mu: np.ndarray, labels: np.ndarray, max_points: Optional[int] = None
):
    """
    Silhouette and Davies-Bouldin scores of representation means.

    A deterministic strided subsample of at most ``max_points`` points is
    used. Returns ``(nan, nan)`` when the metrics are undefined.
    """
    mu = np.asarray(mu, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if max_points is not None and mu.shape[0] > max_points:
        idx = np.linspace(0, mu.shape[0] - 1, max_points).astype(np.int64)
        mu, labels = mu[idx], labels[idx]
    try:
        sil = silhouette(mu, labels)
    except ContractViolation as e:
        logger.debug("silhouette undefined: %s", e)
        sil = float("nan")
    try:
        dbi = davies_bouldin(mu, labels)
    except ContractViolation as e:
        logger.debug("Davies-Bouldin undefined: %s", e)
        dbi = float("nan")
    return sil, dbi
