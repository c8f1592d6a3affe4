"""
Gaussproto - Teacher-student training with probabilistic representations

Core functionality: the training iteration (supervised and pseudo-label
cross-entropy, prototype updates, anchor and negative sampling, the
contrastive loss, backward pass, SGD and teacher EMA), evaluation on held
out scenes, and the negative-state cost meter.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .config import RunConfig
from .datagen import ToyScene, stack_pixels
from .embedding import ReprBatch
from .errors import ContractViolation, NumericFailure, get_diagnostics
from .metrics import ConfusionMatrix, miou, representation_quality
from .negatives import (
    AnchorSet,
    MemoryBank,
    SampleSet,
    VNScale,
    filter_valid,
    generate_vn_array,
    memory_bank_baseline,
    negative_class_distribution,
    sample_anchors,
    sample_real_negatives,
)
from .network import (
    ModelParams,
    TeacherState,
    backward,
    forward,
    pseudo_label,
    sgd_step,
    softmax,
    teacher_ema_step,
)
from .objective import (
    contrastive_loss,
    lambda_schedule,
    supervised_ce,
    total_loss,
    unsupervised_weighted_ce,
)
from .prototypes import PrototypeBank, mean_shift, prototype_shift

logger = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "iteration",
    "loss_sup",
    "loss_unsup",
    "loss_contrast",
    "lambda",
    "miou",
    "silhouette",
    "davies_bouldin",
    "prototype_shift",
    "negative_state_bytes",
]


class StepStats(NamedTuple):
    """Losses and bookkeeping of one training iteration."""

    iteration: int
    loss_sup: float
    loss_unsup: float
    loss_contrast: float
    lambda_t: float
    loss_total: float
    prototype_shift: float
    negative_state_bytes: int
    ms: float


class EvalResult(NamedTuple):
    """Validation metrics of one set of parameters."""

    miou: float
    silhouette: float
    davies_bouldin: float


@dataclass
class Checkpoint:
    """
    Everything needed to evaluate or inspect a trained model.

    ``prototypes`` holds flat prototype records (see
    ``PrototypeBank.to_records``); ``meta`` records the strategy flags and
    evaluation settings of the run.
    """

    student: ModelParams
    teacher: ModelParams
    prototypes: np.ndarray
    grid_size: int
    iteration: int
    meta: Dict[str, Any] = field(default_factory=dict)


@dataclass
class RunResult:
    """Rows produced by ``Trainer.run``."""

    metrics: List[Dict[str, Any]]
    timing: List[Dict[str, Any]]
    final: Optional[EvalResult]
    diagnostics: Dict[str, int]


def negative_state_bytes(
    strategy: str, bank: PrototypeBank, memory_bank: Optional[MemoryBank]
) -> int:
    """
    Bytes of persistent state that exists only to supply global negatives.

    Virtual negatives are drawn from the prototype bank, so their state is
    the bank itself (constant in time). The memory bank grows until it
    reaches capacity. Runs without global negatives hold none.
    """
    if strategy == "vn":
        return bank.nbytes
    if strategy == "memory_bank":
        return 0 if memory_bank is None else memory_bank.nbytes
    return 0


def _prepare_outputs(
    params: ModelParams, pixels: np.ndarray, probabilistic: bool, fixed_sigma2: float
):
    out = forward(params, pixels)
    if probabilistic:
        return out, out.reprs
    return out, ReprBatch(out.mu, np.full_like(out.mu, fixed_sigma2))


def evaluate_params(
    params: ModelParams,
    scenes: Sequence[ToyScene],
    num_classes: int,
    metric_points: Optional[int] = None,
) -> EvalResult:
    """
    mIoU of the segmentation head and clustering quality of the means.

    Raises:
        ContractViolation: If there are no scenes to evaluate
    """
    if not scenes:
        raise ContractViolation("no scenes to evaluate")
    features, labels, _ = stack_pixels(list(scenes))
    out = forward(params, features)
    predicted = np.argmax(out.logits, axis=1)
    cm = ConfusionMatrix.from_predictions(labels, predicted, num_classes)
    sil, dbi = representation_quality(out.mu, labels, metric_points)
    return EvalResult(miou(cm), sil, dbi)


class Trainer:
    """
    Runs the training loop for one configuration on one dataset.

    All randomness (initialization, batch selection, anchor and negative
    sampling, virtual negatives) comes from one generator seeded with
    ``config.hp.seed``, so identical inputs give identical trajectories.

    Args:
        config: Validated run configuration
        labeled: Labeled training scenes
        unlabeled: Unlabeled training scenes
        val: Held-out scenes used by ``evaluate``
        num_classes: Class count; inferred from the config if omitted
    """

    def __init__(
        self,
        config: RunConfig,
        labeled: Sequence[ToyScene],
        unlabeled: Sequence[ToyScene],
        val: Sequence[ToyScene] = (),
        num_classes: Optional[int] = None,
    ):
        if not labeled:
            raise ContractViolation("training needs at least one labeled scene")
        self.config = config
        self.hp = config.hp
        self.labeled = list(labeled)
        self.unlabeled = list(unlabeled)
        self.val = list(val)
        self.num_classes = num_classes or config.dataset.num_classes
        self.grid_size = int(self.labeled[0].labels.shape[0])
        feature_dim = int(self.labeled[0].features.shape[-1])

        self.rng = np.random.default_rng(self.hp.seed)
        self.student = ModelParams.init(
            feature_dim,
            config.hidden_dim,
            self.num_classes,
            config.embed_dim,
            config.head_hidden,
            self.rng,
        )
        self.teacher = TeacherState(self.student.copy(), self.hp.teacher_momentum)
        self.bank = PrototypeBank(
            self.num_classes,
            config.embed_dim,
            config.prototype,
            self.hp.ema_proto_momentum,
        )
        self.memory_bank: Optional[MemoryBank] = None
        if config.negatives == "memory_bank":
            self.memory_bank = memory_bank_baseline(
                config.memory_bank_capacity, config.embed_dim
            )
        self.iteration = 0

        self._labeled_pixels = [s.pixels() for s in self.labeled]
        self._unlabeled_pixels = [s.pixels()[0] for s in self.unlabeled]
        if config.batch_unlabeled > 0 and self.unlabeled:
            per_epoch = len(self.unlabeled) / config.batch_unlabeled
        else:
            per_epoch = len(self.labeled) / config.batch_labeled
        self.iters_per_epoch = max(1, math.ceil(per_epoch))
        self.total_epochs = max(1, math.ceil(config.total_iters / self.iters_per_epoch))

    # ----------------------------------------------------------------- batches

    def _draw(self, pool_size: int, count: int) -> np.ndarray:
        count = min(count, pool_size)
        if count == 0:
            return np.zeros(0, dtype=np.int64)
        return np.sort(self.rng.choice(pool_size, size=count, replace=False))

    def _next_batch(self):
        lab = self._draw(len(self.labeled), self.config.batch_labeled)
        unl = self._draw(len(self.unlabeled), self.config.batch_unlabeled)
        x_l = np.concatenate([self._labeled_pixels[i][0] for i in lab])
        y_l = np.concatenate([self._labeled_pixels[i][1] for i in lab])
        if len(unl):
            x_u = np.concatenate([self._unlabeled_pixels[i] for i in unl])
        else:
            x_u = np.zeros((0, x_l.shape[1]))
        return x_l, y_l, x_u

    def lambda_at(self, iteration: int) -> float:
        epoch = min(iteration // self.iters_per_epoch, self.total_epochs)
        return lambda_schedule(
            epoch, self.total_epochs, self.hp.lambda_c0, self.hp.alpha_sched
        )

    # --------------------------------------------------------------- sampling

    def _global_negatives(self) -> Dict[int, ReprBatch]:
        negatives: Dict[int, ReprBatch] = {}
        if self.config.negatives == "vn":
            scale = VNScale(self.hp.vn_scale)
            for c in self.bank.initialized_classes():
                values = generate_vn_array(
                    self.bank.get(c), self.hp.beta, self.hp.vn_count, self.rng, scale
                )
                # variance is replaced by zeros inside the loss
                negatives[c] = ReprBatch(values, np.ones_like(values))
        elif self.config.negatives == "memory_bank" and self.memory_bank is not None:
            for c in range(self.num_classes):
                stored = self.memory_bank.sample(c, self.hp.vn_count, self.rng)
                if len(stored):
                    negatives[c] = stored
        return negatives

    def _sample(
        self, reprs: ReprBatch, labels: np.ndarray, confidences: np.ndarray
    ) -> SampleSet:
        valid = filter_valid(confidences, self.hp.delta_w)
        valid_labels = labels[valid]
        present = [int(c) for c in np.unique(valid_labels)]

        valid_by_class: Dict[int, np.ndarray] = {}
        for c in present:
            valid_by_class[c] = valid[valid_labels == c]
            self.bank.absorb_batch(c, reprs[valid_by_class[c]])

        pools = {c: reprs[idx] for c, idx in valid_by_class.items()}
        samples = SampleSet(
            global_negatives=self._global_negatives(),
            global_is_virtual=self.config.negatives == "vn",
        )
        for c in present:
            if self.bank.get(c) is None:
                # absorb skipped a non-finite local prototype
                continue
            idx = valid_by_class[c]
            chosen = sample_anchors(
                confidences[idx], self.hp.delta_s, self.hp.anchors_per_class, self.rng
            )
            picks = idx[chosen]
            distribution = negative_class_distribution(
                c, self.bank, self.hp.temperature_n, candidates=present
            )
            real = sample_real_negatives(
                pools, distribution, self.hp.negatives_total, self.rng
            )
            samples.groups[c] = AnchorSet(
                class_id=c,
                anchors=reprs[picks],
                confidence=confidences[picks],
                pixel_index=picks,
                real_negatives=ReprBatch.concat(
                    [real[k] for k in sorted(real)], self.config.embed_dim
                ),
            )
        return samples

    # ------------------------------------------------------------------ steps

    def step(self) -> StepStats:
        """
        Run one training iteration.

        Raises:
            NumericFailure: If the total loss or any gradient is non-finite
        """
        started = time.perf_counter()
        hp = self.hp
        probabilistic = self.config.probabilistic
        x_l, y_l, x_u = self._next_batch()
        n_l = x_l.shape[0]
        x = np.concatenate([x_l, x_u])

        out, reprs = _prepare_outputs(self.student, x, probabilistic, hp.fixed_sigma2)
        teacher_logits = forward(self.teacher.params, x).logits
        teacher_probs = softmax(teacher_logits)

        sup = supervised_ce(out.logits[:n_l], y_l)
        one_hot, conf_u = pseudo_label(teacher_logits[n_l:])
        unsup = unsupervised_weighted_ce(out.logits[n_l:], one_hot, conf_u, hp.delta_u)

        labels = np.concatenate([y_l, np.argmax(one_hot, axis=1)]).astype(np.int64)
        confidences = np.concatenate([teacher_probs[np.arange(n_l), y_l], conf_u])

        previous_bank = self.bank.copy()
        samples = self._sample(reprs, labels, confidences)
        contrast = contrastive_loss(samples, self.bank, hp)
        lambda_t = self.lambda_at(self.iteration)

        d_mu = np.zeros_like(out.mu)
        d_sigma2 = np.zeros_like(out.mu)
        for c, (g_mu, g_sigma2) in contrast.grads.items():
            rows = samples.groups[c].pixel_index
            d_mu[rows] += lambda_t * g_mu
            d_sigma2[rows] += lambda_t * g_sigma2

        loss = total_loss(sup.value, unsup.value, contrast.value, lambda_t)
        if not math.isfinite(loss):
            raise NumericFailure(
                f"non-finite loss at iteration {self.iteration}: "
                f"sup={sup.value} unsup={unsup.value} contrast={contrast.value}; "
                f"diagnostics={get_diagnostics().snapshot()}"
            )

        grads = backward(
            out.cache,
            np.concatenate([sup.grad, unsup.grad]),
            d_mu,
            d_sigma2 if probabilistic else None,
        )
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise NumericFailure(f"non-finite gradient at iteration {self.iteration}")

        self.student = sgd_step(
            self.student,
            grads,
            hp.lr_main,
            hp.lr_prob_head,
            self.iteration,
            self.config.total_iters,
        )
        self.teacher = teacher_ema_step(self.teacher, self.student)

        if self.memory_bank is not None:
            valid = filter_valid(confidences, hp.delta_w)
            self.memory_bank.enqueue(reprs[valid], labels[valid])

        shift = mean_shift(prototype_shift(previous_bank, self.bank))
        self.iteration += 1
        return StepStats(
            iteration=self.iteration,
            loss_sup=sup.value,
            loss_unsup=unsup.value,
            loss_contrast=contrast.value,
            lambda_t=lambda_t,
            loss_total=loss,
            prototype_shift=shift,
            negative_state_bytes=self.negative_state_bytes(),
            ms=(time.perf_counter() - started) * 1000.0,
        )

    def negative_state_bytes(self) -> int:
        return negative_state_bytes(self.config.negatives, self.bank, self.memory_bank)

    def evaluate(self, scenes: Optional[Sequence[ToyScene]] = None) -> EvalResult:
        """Evaluate the student on ``scenes`` (the validation split by default)."""
        return evaluate_params(
            self.student,
            self.val if scenes is None else scenes,
            self.num_classes,
            self.config.metric_points,
        )

    def run(self) -> RunResult:
        """
        Train for ``total_iters`` iterations, evaluating every ``eval_every``
        iterations and after the last one.

        Loss columns of a metrics row average the iterations since the
        previous row.
        """
        metrics: List[Dict[str, Any]] = []
        timing: List[Dict[str, Any]] = []
        window: List[StepStats] = []
        final: Optional[EvalResult] = None
        logger.info(
            "Training %s for %d iterations (%d per epoch)",
            self.config.strategy_name,
            self.config.total_iters,
            self.iters_per_epoch,
        )
        while self.iteration < self.config.total_iters:
            window.append(self.step())
            done = self.iteration == self.config.total_iters
            if self.iteration % self.config.eval_every and not done:
                continue
            result = self.evaluate() if self.val else None
            last = window[-1]
            metrics.append(
                {
                    "iteration": self.iteration,
                    "loss_sup": float(np.mean([s.loss_sup for s in window])),
                    "loss_unsup": float(np.mean([s.loss_unsup for s in window])),
                    "loss_contrast": float(np.mean([s.loss_contrast for s in window])),
                    "lambda": last.lambda_t,
                    "miou": result.miou if result else float("nan"),
                    "silhouette": result.silhouette if result else float("nan"),
                    "davies_bouldin": result.davies_bouldin if result else float("nan"),
                    "prototype_shift": float(
                        np.mean([s.prototype_shift for s in window])
                    ),
                    "negative_state_bytes": last.negative_state_bytes,
                }
            )
            timing.append(
                {
                    "iteration": self.iteration,
                    "ms_per_iter": float(np.mean([s.ms for s in window])),
                }
            )
            logger.info(
                "iter %d: loss=%.4f miou=%.4f",
                self.iteration,
                last.loss_total,
                metrics[-1]["miou"],
            )
            final = result
            window = []

        diagnostics = get_diagnostics().snapshot()
        if diagnostics:
            logger.info("Diagnostics: %s", diagnostics)
        return RunResult(metrics, timing, final, diagnostics)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            student=self.student.copy(),
            teacher=self.teacher.params.copy(),
            prototypes=self.bank.to_records(),
            grid_size=self.grid_size,
            iteration=self.iteration,
            meta={
                "representation": self.config.representation,
                "prototype": self.config.prototype,
                "negatives": self.config.negatives,
                "metric_points": self.config.metric_points,
                "seed": self.hp.seed,
            },
        )

    def embedding_records(
        self, scenes: Optional[Sequence[ToyScene]] = None, limit: Optional[int] = None
    ) -> List[Dict[str, Any]]:
        """
        Per-pixel means, variances, predicted and true classes for a strided
        sample of at most ``limit`` pixels.
        """
        scenes = self.val if scenes is None else list(scenes)
        limit = self.config.dump_points if limit is None else limit
        if not scenes or limit <= 0:
            return []
        features, labels, scene_ids = stack_pixels(scenes)
        out, reprs = _prepare_outputs(
            self.student, features, self.config.probabilistic, self.hp.fixed_sigma2
        )
        predicted = np.argmax(out.logits, axis=1)
        n = features.shape[0]
        pixels_per_scene = self.grid_size * self.grid_size
        rows = np.arange(n)
        if n > limit:
            rows = np.linspace(0, n - 1, limit).astype(np.int64)
        return [
            {
                "scene_id": int(scene_ids[i]),
                "pixel": int(i % pixels_per_scene),
                "mu": out.mu[i].tolist(),
                "sigma2": reprs.sigma2[i].tolist(),
                "pred": int(predicted[i]),
                "gt": int(labels[i]),
            }
            for i in rows
        ]
