"""
Training objective: supervised and confidence-weighted unsupervised
cross-entropy, the MLS-based InfoNCE contrastive loss with global
prototypes as positives, the contrastive weight schedule, and the total
loss. Also houses the hyperparameter record.

Every loss returns its value together with its gradient; nothing is
accumulated into shared state.
"""

import logging
import math
from dataclasses import dataclass, fields
from typing import Dict, NamedTuple, Tuple

import numpy as np

from .embedding import mls_arrays, mls_grad_arrays
from .errors import ConfigError, ContractViolation, NumericFailure, get_diagnostics
from .negatives import SampleSet
from .prototypes import PrototypeBank

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HyperParams:
    """
    Every scalar knob of the method.

    Defaults follow the published settings where they exist (thresholds,
    virtual radius, VN count, learning rates, EMA momentum of the prototype
    baseline); the rest are desk-scale choices.
    """

    tau: float = 0.5
    delta_s: float = 0.8
    delta_w: float = 0.7
    delta_u: float = 0.8
    beta: float = 1.0
    lambda_c0: float = 0.1
    alpha_sched: float = math.log(10.0)
    vn_count: int = 4
    vn_scale: str = "variance"
    anchors_per_class: int = 32
    negatives_total: int = 64
    teacher_momentum: float = 0.99
    ema_proto_momentum: float = 0.99
    lr_main: float = 6.4e-3
    lr_prob_head: float = 5e-5
    temperature_n: float = 1.0
    fixed_sigma2: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Check every range constraint.

        Raises:
            ConfigError: Naming the first offending key
        """
        positive = ("tau", "lr_main", "lr_prob_head", "temperature_n", "fixed_sigma2")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0", key=name)
        unit = (
            "delta_s",
            "delta_w",
            "delta_u",
            "teacher_momentum",
            "ema_proto_momentum",
        )
        for name in unit:
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]", key=name)
        for name in ("beta", "lambda_c0"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0", key=name)
        for name in ("vn_count", "anchors_per_class", "negatives_total"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0", key=name)
        if self.delta_w > self.delta_s:
            raise ConfigError("delta_w must not exceed delta_s", key="delta_w")
        if self.vn_scale not in ("variance", "stddev"):
            raise ConfigError("vn_scale must be 'variance' or 'stddev'", key="vn_scale")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


class LossTerm(NamedTuple):
    """A scalar loss and its gradient with respect to the logits."""

    value: float
    grad: np.ndarray


class ContrastiveResult(NamedTuple):
    """
    Contrastive loss value and gradients per anchor class.

    ``grads[c]`` is ``(d_mu, d_sigma2)`` aligned with the anchors of class c.
    """

    value: float
    grads: Dict[int, Tuple[np.ndarray, np.ndarray]]
    classes_used: int


def lambda_schedule(
    t: float, t_total: float, lambda_c0: float, alpha_sched: float
) -> float:
    """
    Contrastive weight at epoch ``t``: ``lambda_c0 * exp(alpha * (t/T)^2)``.

    Raises:
        ContractViolation: If ``t_total`` is not positive or ``t`` is outside
            ``[0, t_total]``
    """
    if t_total <= 0:
        raise ContractViolation("total epoch count must be positive")
    if not 0 <= t <= t_total:
        raise ContractViolation(f"epoch {t} outside [0, {t_total}]")
    return lambda_c0 * math.exp(alpha_sched * (t / t_total) ** 2)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    # mean CE over rows and its gradient
    n = logits.shape[0]
    log_probs = _log_softmax(logits)
    rows = np.arange(n)
    loss = -float(np.mean(log_probs[rows, labels]))
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return loss, grad / n


def supervised_ce(logits: np.ndarray, labels: np.ndarray) -> LossTerm:
    """
    Mean cross-entropy over labeled pixels.

    Args:
        logits: ``(N, C)`` class scores
        labels: ``(N,)`` class ids; negative ids mark unlabeled pixels

    Returns:
        LossTerm; zero loss and zero gradient if no pixel is labeled
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != logits.shape[0]:
        raise ContractViolation("logits and labels disagree on pixel count")
    if np.any(labels >= logits.shape[1]):
        raise ContractViolation("label id exceeds number of classes")
    grad = np.zeros_like(logits)
    mask = labels >= 0
    if not np.any(mask):
        return LossTerm(0.0, grad)
    loss, sub_grad = _cross_entropy(logits[mask], labels[mask])
    grad[mask] = sub_grad
    return LossTerm(loss, grad)


def confidence_weight(confidences: np.ndarray, delta_u: float) -> float:
    """Fraction of pixels whose confidence is above ``delta_u``."""
    confidences = np.asarray(confidences, dtype=np.float64)
    if confidences.size == 0:
        return 0.0
    return float(np.count_nonzero(confidences > delta_u)) / confidences.size


def unsupervised_weighted_ce(
    logits: np.ndarray,
    pseudo_labels: np.ndarray,
    confidences: np.ndarray,
    delta_u: float,
) -> LossTerm:
    """
    Cross-entropy against pseudo-labels scaled by one batch-level weight.

    The weight is the fraction of pixels whose confidence exceeds
    ``delta_u``; the CE is averaged over all pixels of the batch.

    Args:
        logits: ``(N, C)`` student class scores on unlabeled pixels
        pseudo_labels: ``(N,)`` class ids or ``(N, C)`` one-hot rows
        confidences: ``(N,)`` teacher confidences in [0, 1]
        delta_u: Confidence threshold

    Returns:
        LossTerm; zero for an empty batch
    """
    logits = np.asarray(logits, dtype=np.float64)
    pseudo_labels = np.asarray(pseudo_labels)
    if pseudo_labels.ndim == 2:
        pseudo_labels = np.argmax(pseudo_labels, axis=1)
    if logits.shape[0] == 0:
        return LossTerm(0.0, np.zeros_like(logits))
    omega = confidence_weight(confidences, delta_u)
    if omega == 0.0:
        return LossTerm(0.0, np.zeros_like(logits))
    loss, grad = _cross_entropy(logits, pseudo_labels.astype(np.int64))
    return LossTerm(omega * loss, omega * grad)


def info_nce_terms(scores: np.ndarray, tau: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-row InfoNCE loss where column 0 holds the positive score.

    Returns:
        ``(terms, d_scores)``: the ``(n,)`` losses and their gradient with
        respect to ``scores``
    """
    logits = scores / tau
    log_probs = _log_softmax(logits)
    terms = -log_probs[:, 0]
    d_logits = np.exp(log_probs)
    d_logits[:, 0] -= 1.0
    return terms, d_logits / tau


def _stack_global_negatives(
    samples: SampleSet, dim: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # (n, D) means, (n, D) variances and (n,) source classes of all global
    # negatives; virtual negatives carry zero variance
    classes = sorted(samples.global_negatives)
    if not classes:
        return np.zeros((0, dim)), np.zeros((0, dim)), np.zeros(0, dtype=np.int64)
    batches = [samples.global_negatives[c] for c in classes]
    mu = np.concatenate([b.mu for b in batches])
    if samples.global_is_virtual:
        sigma2 = np.zeros_like(mu)
    else:
        sigma2 = np.concatenate([b.sigma2 for b in batches])
    source = np.repeat(np.array(classes, dtype=np.int64), [len(b) for b in batches])
    return mu, sigma2, source


def contrastive_loss(
    samples: SampleSet, bank: PrototypeBank, hp: HyperParams
) -> ContrastiveResult:
    """
    InfoNCE over mutual likelihood scores.

    For each anchor of class c the positive is the prototype of c; the
    negatives are the real negatives sampled for c plus the global
    negatives of every other class. Global virtual negatives enter the
    score with zero variance. Per-class means are averaged over the classes
    that contributed anchors. Prototypes and negatives are constants: the
    gradients returned concern anchor means and variances only.

    Returns:
        ContrastiveResult with value 0.0 when no class contributes
    """
    per_class: Dict[int, float] = {}
    raw_grads: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    global_mu, global_sigma2, global_class = _stack_global_negatives(samples, bank.dim)

    for c in sorted(samples.groups):
        group = samples.groups[c]
        if len(group.anchors) == 0:
            continue
        positive = bank.get(c)
        if positive is None:
            get_diagnostics().increment("contrast_class_skipped")
            logger.debug("no prototype for anchor class %d; skipped", c)
            continue

        targets_mu = [positive.mu_hat[None, :], group.real_negatives.mu]
        targets_sigma2 = [positive.sigma2_hat[None, :], group.real_negatives.sigma2]
        other = global_class != c
        targets_mu.append(global_mu[other])
        targets_sigma2.append(global_sigma2[other])
        mu_t = np.concatenate(targets_mu)[None, :, :]
        sigma2_t = np.concatenate(targets_sigma2)[None, :, :]

        mu_a = group.anchors.mu[:, None, :]
        sigma2_a = group.anchors.sigma2[:, None, :]
        scores = mls_arrays(mu_a, sigma2_a, mu_t, sigma2_t)
        terms, d_scores = info_nce_terms(scores, hp.tau)

        d_mu, d_sigma2 = mls_grad_arrays(mu_a, sigma2_a, mu_t, sigma2_t)
        n = len(group.anchors)
        per_class[c] = float(np.mean(terms))
        raw_grads[c] = (
            np.einsum("nk,nkd->nd", d_scores, d_mu) / n,
            np.einsum("nk,nkd->nd", d_scores, d_sigma2) / n,
        )

    if not per_class:
        return ContrastiveResult(0.0, {}, 0)

    n_classes = len(per_class)
    value = float(np.mean([per_class[c] for c in sorted(per_class)]))
    grads = {c: (g[0] / n_classes, g[1] / n_classes) for c, g in raw_grads.items()}
    if not math.isfinite(value):
        raise NumericFailure("contrastive loss is not finite")
    return ContrastiveResult(value, grads, n_classes)


def total_loss(ls: float, lu: float, lc: float, lambda_t: float) -> float:
    """``ls + lu + lambda_t * lc``."""
    return ls + lu + lambda_t * lc
