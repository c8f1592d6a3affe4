"""
Sampling of valid representations, anchors and negatives, plus virtual
negatives drawn from global prototypes and the memory-bank baseline they
are compared against.

Every sampling function takes an explicit ``numpy.random.Generator`` so
that the same seed and inputs always give the same output.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional

import numpy as np

from .embedding import ReprBatch, mls_arrays
from .errors import ContractViolation, get_diagnostics
from .prototypes import GlobalPrototype, PrototypeBank

logger = logging.getLogger(__name__)

MAX_REDRAWS = 8


class NegativeStrategy(Enum):
    """Source of negatives beyond the current iteration."""

    NONE = "none"
    MEMORY_BANK = "memory_bank"
    VN = "vn"


class VNScale(Enum):
    """Noise scale used when drawing virtual negatives."""

    VARIANCE = "variance"
    STDDEV = "stddev"


@dataclass(frozen=True, eq=False)
class VirtualNegative:
    """A synthetic negative embedding with zero variance."""

    class_id: int
    value: np.ndarray

    @property
    def sigma2(self) -> np.ndarray:
        return np.zeros_like(self.value)


@dataclass
class AnchorSet:
    """
    Anchors of one class and the real negatives sampled for them.

    ``pixel_index`` maps each anchor back to its row in the training batch
    so contrastive gradients can be routed to the network outputs.
    """

    class_id: int
    anchors: ReprBatch
    confidence: np.ndarray
    pixel_index: np.ndarray
    real_negatives: ReprBatch


@dataclass
class SampleSet:
    """
    Everything the contrastive loss consumes in one iteration.

    ``global_negatives`` holds, per source class, either virtual negatives
    (zero variance) or memory-bank representations.
    """

    groups: Dict[int, AnchorSet] = field(default_factory=dict)
    global_negatives: Dict[int, ReprBatch] = field(default_factory=dict)
    global_is_virtual: bool = True

    @property
    def num_anchors(self) -> int:
        return sum(len(g.anchors) for g in self.groups.values())


def filter_valid(confidences: np.ndarray, delta_w: float) -> np.ndarray:
    """
    Indices of representations whose confidence is strictly above ``delta_w``.

    Examples:
        >>> filter_valid(np.array([0.6, 0.71, 0.9]), 0.7)
        array([1, 2])
    """
    confidences = np.asarray(confidences, dtype=np.float64)
    return np.flatnonzero(confidences > delta_w)


def sample_anchors(
    confidences: np.ndarray, delta_s: float, k: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Uniformly pick up to ``k`` hard representations (confidence below ``delta_s``).

    Args:
        confidences: Confidences of already-valid representations
        delta_s: Strong threshold
        k: Maximum number of anchors
        rng: Random generator

    Returns:
        Sorted indices into ``confidences``; the whole pool if it has at
        most ``k`` members
    """
    if k < 0:
        raise ContractViolation(f"anchor count must be >= 0, got {k}")
    pool = np.flatnonzero(np.asarray(confidences) < delta_s)
    if len(pool) <= k:
        return pool
    return np.sort(rng.choice(pool, size=k, replace=False))


def negative_class_distribution(
    anchor_class: int,
    bank: PrototypeBank,
    temperature_n: float = 1.0,
    candidates: Optional[Iterable[int]] = None,
) -> Dict[int, float]:
    """
    Softmax over MLS similarity between the anchor prototype and the others.

    Classes closer to the anchor class get more negatives.

    Args:
        anchor_class: Class of the anchors
        bank: Prototype bank
        temperature_n: Softmax temperature
        candidates: Optional restriction of the negative classes (for
            example the classes present in the current iteration)

    Returns:
        Mapping class id -> probability; empty if no other class has a
        prototype

    Raises:
        ContractViolation: If the anchor class has no prototype
    """
    if temperature_n <= 0:
        raise ContractViolation("negative sampling temperature must be positive")
    anchor = bank.get(anchor_class)
    if anchor is None:
        raise ContractViolation(f"class {anchor_class} has no prototype")
    allowed = set(bank.initialized_classes())
    if candidates is not None:
        allowed &= {int(c) for c in candidates}
    others = sorted(allowed - {anchor_class})
    if not others:
        return {}

    scores = mls_arrays(
        anchor.mu_hat[None, :],
        anchor.sigma2_hat[None, :],
        bank.mu[others],
        bank.sigma2[others],
    )
    logits = scores / temperature_n
    weights = np.exp(logits - logits.max())
    probs = weights / weights.sum()
    return {c: float(p) for c, p in zip(others, probs)}


def sample_real_negatives(
    valid_by_class: Dict[int, ReprBatch],
    distribution: Dict[int, float],
    k_total: int,
    rng: np.random.Generator,
    max_redraws: int = MAX_REDRAWS,
) -> Dict[int, ReprBatch]:
    """
    Draw ``k_total`` negatives: class labels i.i.d. from ``distribution``,
    then representations uniformly within each drawn class.

    A label whose pool is empty is redrawn up to ``max_redraws`` times and
    then dropped (counted as ``negative_redraw_skipped``).

    Returns:
        Mapping class id -> sampled representations (only non-empty classes)
    """
    if k_total <= 0 or not distribution:
        return {}
    classes = np.array(sorted(distribution), dtype=np.int64)
    probs = np.array([distribution[c] for c in classes], dtype=np.float64)
    probs = probs / probs.sum()
    drawn = rng.choice(classes, size=k_total, p=probs)

    def pool_size(c) -> int:
        pool = valid_by_class.get(int(c))
        return 0 if pool is None else len(pool)

    kept: List[int] = []
    for label in drawn:
        attempts = 0
        while pool_size(label) == 0 and attempts < max_redraws:
            label = rng.choice(classes, p=probs)
            attempts += 1
        if pool_size(label) == 0:
            get_diagnostics().increment("negative_redraw_skipped")
            continue
        kept.append(int(label))

    kept_arr = np.array(kept, dtype=np.int64)
    out: Dict[int, ReprBatch] = {}
    for c in classes:
        n_c = int(np.count_nonzero(kept_arr == c))
        if n_c == 0:
            continue
        pool = valid_by_class[int(c)]
        picks = rng.integers(0, len(pool), size=n_c)
        out[int(c)] = pool[picks]
    return out


def generate_vn_array(
    gdp: GlobalPrototype,
    beta: float,
    count: int,
    rng: np.random.Generator,
    scale: VNScale = VNScale.VARIANCE,
) -> np.ndarray:
    """
    Virtual negative values as a ``(count, D)`` array.

    Each row is ``mu_hat + beta * eps * s`` with ``eps`` standard normal and
    ``s`` the prototype variance (or its square root for ``stddev``).
    """
    if not gdp.initialized:
        raise ContractViolation(
            f"cannot draw virtual negatives from empty prototype {gdp.class_id}"
        )
    if beta < 0:
        raise ContractViolation(f"virtual radius must be >= 0, got {beta}")
    if count < 0:
        raise ContractViolation(f"virtual negative count must be >= 0, got {count}")
    scale = VNScale(scale)
    noise = gdp.sigma2_hat if scale is VNScale.VARIANCE else np.sqrt(gdp.sigma2_hat)
    eps = rng.standard_normal((count, gdp.dim))
    return gdp.mu_hat[None, :] + beta * eps * noise[None, :]


def generate_vn(
    gdp: GlobalPrototype,
    beta: float,
    count: int,
    rng: np.random.Generator,
    scale: VNScale = VNScale.VARIANCE,
) -> List[VirtualNegative]:
    """
    Draw ``count`` virtual negatives around a global prototype.

    Args:
        gdp: Initialized prototype of the source class
        beta: Virtual radius
        count: Number of negatives
        rng: Random generator
        scale: ``variance`` (default) or ``stddev`` noise scale

    Returns:
        List of VirtualNegative with zero variance

    Raises:
        ContractViolation: If the prototype is uninitialized
    """
    values = generate_vn_array(gdp, beta, count, rng, scale)
    return [VirtualNegative(gdp.class_id, row) for row in values]


class _ClassQueue:
    """Ring buffer of one class; grows until ``capacity`` and then overwrites."""

    def __init__(self, capacity: int, dim: int):
        self.capacity = capacity
        self.mu = np.zeros((0, dim))
        self.sigma2 = np.zeros((0, dim))
        # slot of the oldest entry once the buffer is full
        self.head = 0

    def __len__(self) -> int:
        return int(self.mu.shape[0])

    def push(self, mu: np.ndarray, sigma2: np.ndarray) -> None:
        if len(mu) >= self.capacity:
            self.mu = mu[-self.capacity :].copy()
            self.sigma2 = sigma2[-self.capacity :].copy()
            self.head = 0
            return
        free = self.capacity - len(self)
        if free:
            self.mu = np.concatenate([self.mu, mu[:free]])
            self.sigma2 = np.concatenate([self.sigma2, sigma2[:free]])
            mu, sigma2 = mu[free:], sigma2[free:]
        if len(mu):
            slots = (self.head + np.arange(len(mu))) % self.capacity
            self.mu[slots] = mu
            self.sigma2[slots] = sigma2
            self.head = int((self.head + len(mu)) % self.capacity)

    def oldest_first(self) -> np.ndarray:
        order = np.arange(len(self))
        return np.roll(order, -self.head)


class MemoryBank:
    """
    Per-class FIFO store of past representations, the baseline virtual
    negatives replace.

    Every class keeps its own queue of at most ``capacity`` entries, so a
    burst of one class never evicts another.

    Args:
        capacity: Maximum number of stored representations per class
        dim: Embedding dimension D
    """

    def __init__(self, capacity: int, dim: int):
        if capacity <= 0:
            raise ContractViolation(f"memory bank capacity must be > 0, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        self._queues: Dict[int, _ClassQueue] = {}

    def __len__(self) -> int:
        return sum(len(q) for q in self._queues.values())

    def count(self, class_id: int) -> int:
        queue = self._queues.get(class_id)
        return 0 if queue is None else len(queue)

    def enqueue(self, batch: ReprBatch, labels: np.ndarray) -> None:
        """Append ``batch`` to the queues of its labels, evicting the oldest."""
        if len(batch) == 0:
            return
        labels = np.asarray(labels, dtype=np.int64)
        for c in np.unique(labels):
            rows = labels == c
            queue = self._queues.get(int(c))
            if queue is None:
                queue = self._queues[int(c)] = _ClassQueue(self.capacity, self.dim)
            queue.push(batch.mu[rows], batch.sigma2[rows])

    def stored(self, class_id: int) -> ReprBatch:
        """Stored representations of ``class_id``, oldest first."""
        queue = self._queues.get(class_id)
        if queue is None:
            return ReprBatch.empty(self.dim)
        order = queue.oldest_first()
        return ReprBatch(queue.mu[order], queue.sigma2[order])

    def sample(self, class_id: int, count: int, rng: np.random.Generator) -> ReprBatch:
        """Uniformly draw ``count`` stored representations of ``class_id``."""
        queue = self._queues.get(class_id)
        if queue is None or len(queue) == 0 or count <= 0:
            return ReprBatch.empty(self.dim)
        picks = rng.integers(0, len(queue), size=count)
        return ReprBatch(queue.mu[picks], queue.sigma2[picks])

    @property
    def nbytes(self) -> int:
        return int(sum(q.mu.nbytes + q.sigma2.nbytes for q in self._queues.values()))

    @staticmethod
    def capacity_bytes(capacity: int, dim: int, num_classes: int = 1) -> int:
        """Bytes held by ``num_classes`` full queues of 64-bit means and variances."""
        return num_classes * capacity * 2 * dim * 8


def memory_bank_baseline(capacity: int, dim: int) -> MemoryBank:
    """Create the memory-bank negative provider used by the ablation runner."""
    return MemoryBank(capacity, dim)
