"""
Class prototypes: local fusion, streaming global distribution prototypes
(GDP), the closed-form batch posterior used as an equivalence oracle, and
the EMA prototype baseline.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Union

import numpy as np

from .embedding import ProbRepr, ReprBatch, ReprLike, fuse, fuse_arrays
from .errors import ContractViolation, get_diagnostics

logger = logging.getLogger(__name__)


class PrototypeStrategy(Enum):
    """How class prototypes are carried from one iteration to the next."""

    NONE = "none"
    EMA = "ema"
    GDP = "gdp"


@dataclass(frozen=True, eq=False)
class GlobalPrototype:
    """
    Streaming posterior of one class.

    ``mu_hat`` and ``sigma2_hat`` are meaningful only once ``n_updates > 0``.
    """

    class_id: int
    mu_hat: np.ndarray
    sigma2_hat: np.ndarray
    n_updates: int = 0

    @classmethod
    def uninitialized(cls, class_id: int, dim: int) -> "GlobalPrototype":
        return cls(class_id, np.zeros(dim), np.ones(dim), 0)

    @property
    def initialized(self) -> bool:
        return self.n_updates > 0

    @property
    def dim(self) -> int:
        return int(self.mu_hat.shape[0])

    def as_repr(self) -> ProbRepr:
        if not self.initialized:
            raise ContractViolation(f"prototype of class {self.class_id} is empty")
        return ProbRepr(self.mu_hat, self.sigma2_hat)


def local_prototype(reps_of_class: ReprLike) -> ProbRepr:
    """
    Fuse the current iteration's representations of one class.

    Args:
        reps_of_class: Non-empty list of ProbRepr (or a ReprBatch)

    Returns:
        The local prototype

    Raises:
        ContractViolation: If the input is empty
    """
    if len(reps_of_class) == 0:
        raise ContractViolation("local prototype needs at least one representation")
    return fuse(reps_of_class)


def gdp_update(prev: GlobalPrototype, local: ProbRepr) -> GlobalPrototype:
    """
    Absorb one local prototype into a global distribution prototype.

    An uninitialized prototype becomes a copy of ``local`` (an infinitely
    broad prior). Otherwise precisions add and the mean is the
    precision-weighted combination of the previous mean and ``local``.

    Args:
        prev: Prototype after iteration t-1
        local: Local prototype of iteration t

    Returns:
        The prototype after iteration t. If the update would produce
        non-finite values it is skipped and ``prev`` is returned.

    Raises:
        ContractViolation: On dimension mismatch
    """
    local_mu = np.asarray(local.mu, dtype=np.float64)
    local_sigma2 = np.asarray(local.sigma2, dtype=np.float64)
    if local_mu.shape != prev.mu_hat.shape:
        raise ContractViolation(
            f"prototype dimension {prev.dim} does not match local "
            f"dimension {local_mu.shape[0]}"
        )
    if not (np.all(np.isfinite(local_mu)) and np.all(np.isfinite(local_sigma2))):
        get_diagnostics().increment("gdp_update_skipped")
        logger.debug("skipping non-finite local prototype for class %d", prev.class_id)
        return prev

    if not prev.initialized:
        return GlobalPrototype(prev.class_id, local_mu.copy(), local_sigma2.copy(), 1)

    prev_precision = 1.0 / prev.sigma2_hat
    local_precision = 1.0 / local_sigma2
    sigma2_hat = 1.0 / (prev_precision + local_precision)
    mu_hat = sigma2_hat * (
        prev.mu_hat * prev_precision + local_mu * local_precision
    )
    if not (np.all(np.isfinite(mu_hat)) and np.all(sigma2_hat > 0.0)):
        get_diagnostics().increment("gdp_update_skipped")
        return prev
    # precisions only accumulate
    sigma2_hat = np.minimum(sigma2_hat, prev.sigma2_hat)
    return GlobalPrototype(prev.class_id, mu_hat, sigma2_hat, prev.n_updates + 1)


def gdp_batch_oracle(all_reps: ReprLike) -> ProbRepr:
    """
    Closed-form posterior of all representations under a flat prior.

    Deliberately written without the vectorized fusion helpers: it sums
    each dimension with ``math.fsum`` so it can serve as an independent
    reference for the streaming update.

    Raises:
        ContractViolation: If ``all_reps`` is empty
    """
    if isinstance(all_reps, ReprBatch):
        rows = [(all_reps.mu[i], all_reps.sigma2[i]) for i in range(len(all_reps))]
    else:
        rows = [(r.mu, r.sigma2) for r in all_reps]
    if not rows:
        raise ContractViolation("batch posterior needs at least one representation")
    if len(rows) == 1:
        return ProbRepr(rows[0][0], rows[0][1])

    dim = len(rows[0][0])
    mu_out = []
    sigma2_out = []
    for d in range(dim):
        precision = math.fsum(1.0 / float(s[d]) for _, s in rows)
        weighted = math.fsum(float(m[d]) / float(s[d]) for m, s in rows)
        mu_out.append(weighted / precision)
        sigma2_out.append(1.0 / precision)
    return ProbRepr(np.array(mu_out), np.array(sigma2_out))


def ema_prototype_update(
    prev: np.ndarray, local: np.ndarray, momentum: float
) -> np.ndarray:
    """
    Exponential moving average of prototype means.

    Returns:
        ``momentum * prev + (1 - momentum) * local``

    Raises:
        ContractViolation: If ``momentum`` is outside [0, 1]
    """
    if not 0.0 <= momentum <= 1.0:
        raise ContractViolation(f"EMA momentum must be in [0, 1], got {momentum}")
    prev = np.asarray(prev, dtype=np.float64)
    local = np.asarray(local, dtype=np.float64)
    if momentum == 1.0:
        return prev.copy()
    if momentum == 0.0:
        return local.copy()
    return momentum * prev + (1.0 - momentum) * local


class PrototypeBank:
    """
    One optional prototype per class, stored as fixed-size arrays.

    Storage is preallocated (``2 * C * D`` reals plus one counter per class),
    so its footprint does not change during training.

    Args:
        num_classes: Number of classes C
        dim: Embedding dimension D
        strategy: How ``absorb`` combines a new local prototype
        ema_momentum: Momentum used by the EMA strategy
    """

    def __init__(
        self,
        num_classes: int,
        dim: int,
        strategy: Union[PrototypeStrategy, str] = PrototypeStrategy.GDP,
        ema_momentum: float = 0.99,
    ):
        if num_classes < 1 or dim < 1:
            raise ContractViolation("prototype bank needs C >= 1 and D >= 1")
        self.num_classes = num_classes
        self.dim = dim
        self.strategy = PrototypeStrategy(strategy)
        self.ema_momentum = ema_momentum
        self.mu = np.zeros((num_classes, dim))
        self.sigma2 = np.ones((num_classes, dim))
        self.n_updates = np.zeros(num_classes, dtype=np.int64)

    def _check_class(self, class_id: int) -> None:
        if not 0 <= class_id < self.num_classes:
            raise ContractViolation(
                f"class id {class_id} outside [0, {self.num_classes})"
            )

    def get(self, class_id: int) -> Optional[GlobalPrototype]:
        """Return the prototype of ``class_id`` or None if not initialized."""
        self._check_class(class_id)
        if self.n_updates[class_id] == 0:
            return None
        return GlobalPrototype(
            class_id,
            self.mu[class_id].copy(),
            self.sigma2[class_id].copy(),
            int(self.n_updates[class_id]),
        )

    def get_or_empty(self, class_id: int) -> GlobalPrototype:
        found = self.get(class_id)
        if found is None:
            return GlobalPrototype.uninitialized(class_id, self.dim)
        return found

    def put(self, prototype: GlobalPrototype) -> None:
        self._check_class(prototype.class_id)
        self.mu[prototype.class_id] = prototype.mu_hat
        self.sigma2[prototype.class_id] = prototype.sigma2_hat
        self.n_updates[prototype.class_id] = prototype.n_updates

    def initialized_classes(self) -> List[int]:
        return [int(c) for c in np.flatnonzero(self.n_updates > 0)]

    def absorb(self, class_id: int, mu: np.ndarray, sigma2: np.ndarray) -> None:
        """
        Fold the local prototype ``(mu, sigma2)`` of one class into the bank.

        ``gdp`` applies the streaming posterior update, ``ema`` averages the
        means and takes the local variance, ``none`` replaces the entry.
        """
        prev = self.get_or_empty(class_id)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma2))):
            get_diagnostics().increment("gdp_update_skipped")
            return
        if self.strategy is PrototypeStrategy.GDP:
            updated = gdp_update(prev, ProbRepr(mu, sigma2))
        elif self.strategy is PrototypeStrategy.EMA and prev.initialized:
            updated = GlobalPrototype(
                class_id,
                ema_prototype_update(prev.mu_hat, mu, self.ema_momentum),
                np.asarray(sigma2, dtype=np.float64).copy(),
                prev.n_updates + 1,
            )
        else:
            updated = GlobalPrototype(
                class_id,
                np.asarray(mu, dtype=np.float64).copy(),
                np.asarray(sigma2, dtype=np.float64).copy(),
                prev.n_updates + 1,
            )
        self.put(updated)

    def absorb_batch(self, class_id: int, batch: ReprBatch) -> None:
        """Fuse ``batch`` into a local prototype and absorb it."""
        mu, sigma2 = fuse_arrays(batch.mu, batch.sigma2)
        self.absorb(class_id, mu, sigma2)

    def copy(self) -> "PrototypeBank":
        clone = PrototypeBank(
            self.num_classes, self.dim, self.strategy, self.ema_momentum
        )
        clone.mu = self.mu.copy()
        clone.sigma2 = self.sigma2.copy()
        clone.n_updates = self.n_updates.copy()
        return clone

    @property
    def nbytes(self) -> int:
        """Persistent state size in bytes: ``16 * C * D + 8 * C``."""
        return int(self.mu.nbytes + self.sigma2.nbytes + self.n_updates.nbytes)

    def to_records(self) -> np.ndarray:
        """
        Flatten initialized prototypes into float64 records.

        Each row is ``(class_id, n_updates, mu_hat[0..D), sigma2_hat[0..D))``.
        """
        classes = self.initialized_classes()
        records = np.zeros((len(classes), 2 + 2 * self.dim), dtype=np.float64)
        for row, c in enumerate(classes):
            records[row, 0] = c
            records[row, 1] = self.n_updates[c]
            records[row, 2 : 2 + self.dim] = self.mu[c]
            records[row, 2 + self.dim :] = self.sigma2[c]
        return records

    @classmethod
    def from_records(
        cls,
        records: np.ndarray,
        num_classes: int,
        dim: int,
        strategy: Union[PrototypeStrategy, str],
        ema_momentum: float = 0.99,
    ) -> "PrototypeBank":
        bank = cls(num_classes, dim, strategy, ema_momentum)
        records = np.asarray(records, dtype=np.float64).reshape(-1, 2 + 2 * dim)
        for row in records:
            bank.put(
                GlobalPrototype(
                    int(row[0]),
                    row[2 : 2 + dim].copy(),
                    row[2 + dim :].copy(),
                    int(row[1]),
                )
            )
        return bank


def prototype_shift(
    bank_t_minus_1: PrototypeBank, bank_t: PrototypeBank
) -> Dict[int, Optional[float]]:
    """
    Euclidean displacement of each class mean between consecutive banks.

    Returns:
        Mapping class id -> distance, or None when either bank has no
        prototype for that class
    """
    if bank_t_minus_1.num_classes != bank_t.num_classes:
        raise ContractViolation("prototype banks have different class counts")
    shifts: Dict[int, Optional[float]] = {}
    for c in range(bank_t.num_classes):
        if bank_t_minus_1.n_updates[c] == 0 or bank_t.n_updates[c] == 0:
            shifts[c] = None
            continue
        shifts[c] = float(np.linalg.norm(bank_t.mu[c] - bank_t_minus_1.mu[c]))
    return shifts


def mean_shift(shifts: Dict[int, Optional[float]]) -> float:
    """Average of the defined per-class shifts (0.0 if none are defined)."""
    values = [v for v in shifts.values() if v is not None]
    if not values:
        return 0.0
    return float(np.mean(values))
