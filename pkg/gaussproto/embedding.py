"""
Diagonal-Gaussian embedding algebra.

A pixel representation is a Gaussian with mean ``mu`` and per-dimension
variance ``sigma2``. This module provides the representation types, the
mutual likelihood score (MLS) between two Gaussians, its analytic
gradients, and precision-weighted fusion of several Gaussians.

All functions are pure and operate on float64 numpy arrays.
"""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import ContractViolation, get_diagnostics

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-8
VARIANCE_CEILING = 1e8
LOG_2PI = math.log(2.0 * math.pi)


def _clamp_variance(sigma2: np.ndarray) -> np.ndarray:
    """Validate positivity and clamp variances into the supported range."""
    if not np.all(np.isfinite(sigma2)):
        raise ContractViolation("variance contains non-finite values")
    if np.any(sigma2 <= 0.0):
        raise ContractViolation("variance must be strictly positive")
    out_of_range = (sigma2 < VARIANCE_FLOOR) | (sigma2 > VARIANCE_CEILING)
    n_clamped = int(np.count_nonzero(out_of_range))
    if n_clamped:
        get_diagnostics().increment("variance_clamped", n_clamped)
        sigma2 = np.clip(sigma2, VARIANCE_FLOOR, VARIANCE_CEILING)
    return sigma2


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ProbRepr:
    """
    One pixel embedding as a diagonal Gaussian.

    Args:
        mu: Mean vector of dimension D
        sigma2: Variance vector of dimension D, strictly positive

    Raises:
        ContractViolation: If shapes differ, entries are non-finite, or a
            variance is not positive
    """

    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma2 = np.asarray(self.sigma2, dtype=np.float64)
        if mu.ndim != 1 or sigma2.ndim != 1:
            raise ContractViolation("ProbRepr fields must be 1-D vectors")
        if mu.shape != sigma2.shape:
            raise ContractViolation(
                f"mu has dimension {mu.shape[0]} but sigma2 has {sigma2.shape[0]}"
            )
        if not np.all(np.isfinite(mu)):
            raise ContractViolation("mean contains non-finite values")
        sigma2 = _clamp_variance(sigma2)
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "sigma2", _frozen(sigma2))

    @property
    def dim(self) -> int:
        return int(self.mu.shape[0])

    @property
    def precision(self) -> np.ndarray:
        return 1.0 / self.sigma2


@dataclass(frozen=True, eq=False)
class ReprBatch:
    """
    A stack of representations sharing dimension D.

    This is the vectorized form of ``List[ProbRepr]`` used by the training
    loop. Row ``i`` of ``mu`` and ``sigma2`` is one representation.
    """

    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma2 = np.asarray(self.sigma2, dtype=np.float64)
        if mu.ndim != 2 or mu.shape != sigma2.shape:
            raise ContractViolation(
                f"ReprBatch needs matching (n, D) arrays, got {mu.shape} "
                f"and {sigma2.shape}"
            )
        if not np.all(np.isfinite(mu)):
            raise ContractViolation("mean contains non-finite values")
        if sigma2.size:
            sigma2 = _clamp_variance(sigma2)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", sigma2)

    @classmethod
    def empty(cls, dim: int) -> "ReprBatch":
        return cls(np.zeros((0, dim)), np.ones((0, dim)))

    @classmethod
    def from_reprs(cls, reprs: Sequence[ProbRepr]) -> "ReprBatch":
        """Stack a non-empty sequence of ProbRepr into a batch."""
        if len(reprs) == 0:
            raise ContractViolation("cannot stack an empty list of representations")
        dims = {r.dim for r in reprs}
        if len(dims) != 1:
            raise ContractViolation(f"representations have mixed dimensions {dims}")
        return cls(
            np.stack([r.mu for r in reprs]), np.stack([r.sigma2 for r in reprs])
        )

    @classmethod
    def concat(cls, batches: Sequence["ReprBatch"], dim: int) -> "ReprBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return cls.empty(dim)
        return cls(
            np.concatenate([b.mu for b in batches]),
            np.concatenate([b.sigma2 for b in batches]),
        )

    def to_reprs(self):
        return [ProbRepr(m, s) for m, s in zip(self.mu, self.sigma2)]

    @property
    def dim(self) -> int:
        return int(self.mu.shape[1])

    def __len__(self) -> int:
        return int(self.mu.shape[0])

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            return ProbRepr(self.mu[index], self.sigma2[index])
        return ReprBatch(self.mu[index], self.sigma2[index])


ReprLike = Union[ReprBatch, Sequence[ProbRepr]]


class MLSGradient(NamedTuple):
    """Partial derivatives of the mutual likelihood score."""

    d_mu_a: np.ndarray
    d_sigma2_a: np.ndarray
    d_mu_b: np.ndarray
    d_sigma2_b: np.ndarray


def _check_pair(a: ProbRepr, b: ProbRepr) -> None:
    if not isinstance(a, ProbRepr) or not isinstance(b, ProbRepr):
        raise ContractViolation("mls expects two ProbRepr instances")
    if a.dim != b.dim:
        raise ContractViolation(
            f"dimension mismatch: {a.dim} vs {b.dim} in mutual likelihood score"
        )


def mls_arrays(
    mu_a: np.ndarray, sigma2_a: np.ndarray, mu_b: np.ndarray, sigma2_b: np.ndarray
) -> np.ndarray:
    """
    Mutual likelihood score over the last axis, with numpy broadcasting.

    ``sigma2_b`` may be zero (virtual negatives) as long as the variance sum
    stays positive.

    Returns:
        Array of scores with the broadcast shape minus the last axis
    """
    diff = mu_a - mu_b
    var_sum = sigma2_a + sigma2_b
    dim = diff.shape[-1]
    quad = np.sum(diff * diff / var_sum + np.log(var_sum), axis=-1)
    return -0.5 * quad - 0.5 * dim * LOG_2PI


def mls_grad_arrays(
    mu_a: np.ndarray, sigma2_a: np.ndarray, mu_b: np.ndarray, sigma2_b: np.ndarray
):
    """
    Gradient of ``mls_arrays`` with respect to ``mu_a`` and ``sigma2_a``.

    The score depends on ``mu_b`` only through the difference, and on both
    variances only through their sum, so the ``b`` gradients are
    ``-d_mu_a`` and ``d_sigma2_a``.
    """
    diff = mu_a - mu_b
    var_sum = sigma2_a + sigma2_b
    d_mu_a = -diff / var_sum
    d_sigma2_a = 0.5 * diff * diff / (var_sum * var_sum) - 0.5 / var_sum
    return d_mu_a, d_sigma2_a


def mls(a: ProbRepr, b: ProbRepr) -> float:
    """
    Mutual likelihood score between two diagonal Gaussians.

    The constant ``-(D/2) log 2*pi`` is included.

    Args:
        a: First representation
        b: Second representation

    Returns:
        The score as a Python float

    Raises:
        ContractViolation: On dimension mismatch

    Examples:
        >>> r = ProbRepr([0.0], [0.5])
        >>> round(mls(r, r), 6)
        -0.918939
    """
    _check_pair(a, b)
    return float(mls_arrays(a.mu, a.sigma2, b.mu, b.sigma2))


def mls_grad(a: ProbRepr, b: ProbRepr) -> MLSGradient:
    """Analytic partial derivatives of ``mls(a, b)`` for all four inputs."""
    _check_pair(a, b)
    d_mu_a, d_sigma2 = mls_grad_arrays(a.mu, a.sigma2, b.mu, b.sigma2)
    return MLSGradient(d_mu_a, d_sigma2, -d_mu_a, d_sigma2.copy())


def _canonical_order(mu: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    # lexsort uses the last key as primary, so reverse to sort by mu[:, 0] first
    keys = np.concatenate([mu, sigma2], axis=1).T[::-1]
    return np.lexsort(keys)


def fuse_arrays(mu: np.ndarray, sigma2: np.ndarray):
    """
    Precision-weighted fusion of the rows of ``mu`` / ``sigma2``.

    Rows are put in a canonical order before summation so the result is
    bit-identical for every permutation of the input.

    Returns:
        Tuple ``(mu_hat, sigma2_hat)`` of 1-D arrays
    """
    if mu.shape[0] == 0:
        raise ContractViolation("cannot fuse an empty set of representations")
    if mu.shape[0] == 1:
        return mu[0].copy(), sigma2[0].copy()

    order = _canonical_order(mu, sigma2)
    mu = mu[order]
    sigma2 = sigma2[order]
    precision = 1.0 / sigma2
    total_precision = np.add.reduce(precision, axis=0)
    sigma2_hat = 1.0 / total_precision
    mu_hat = sigma2_hat * np.add.reduce(mu * precision, axis=0)
    # convexity can be lost by one ulp in the last multiply
    mu_hat = np.clip(mu_hat, mu.min(axis=0), mu.max(axis=0))
    return mu_hat, sigma2_hat


def fuse(reps: ReprLike) -> ProbRepr:
    """
    Fuse representations into one Gaussian by summing precisions.

    ``1/sigma2_hat = sum_i 1/sigma2_i`` and
    ``mu_hat = sigma2_hat * sum_i mu_i/sigma2_i`` per dimension.

    Args:
        reps: Non-empty list of ProbRepr or a ReprBatch

    Returns:
        The fused ProbRepr; a single input is returned unchanged

    Raises:
        ContractViolation: If ``reps`` is empty or dimensions differ
    """
    if isinstance(reps, ReprBatch):
        batch = reps
    else:
        if len(reps) == 1:
            return reps[0]
        batch = ReprBatch.from_reprs(reps)
    mu_hat, sigma2_hat = fuse_arrays(batch.mu, batch.sigma2)
    return ProbRepr(mu_hat, sigma2_hat)
