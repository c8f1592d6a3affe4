"""
A small per-pixel network with four parts: a shared encoder, a
segmentation head, a representation head producing means, and a
probability head producing variances. Forward and backward passes are
written out by hand in numpy.

Also provides the EMA teacher, pseudo-labelling, and the two-group SGD
step with poly learning-rate decay ("soft freeze": the probability head
trains with a much smaller learning rate).
"""

import logging
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from .embedding import ReprBatch
from .errors import ContractViolation, NumericFailure

logger = logging.getLogger(__name__)

LOG_VAR_MIN = -6.0
LOG_VAR_MAX = 6.0
POLY_POWER = 0.9

# name -> (fan-in dimension, output dimension) as keys into ModelParams dims
PARAM_LAYOUT = (
    ("encoder.W", ("F", "H")),
    ("encoder.b", ("F", None)),
    ("seg_head.W", ("H", "C")),
    ("seg_head.b", ("H", None)),
    ("repr_head.W1", ("H", "K")),
    ("repr_head.b1", ("H", None)),
    ("repr_head.W2", ("K", "D")),
    ("repr_head.b2", ("K", None)),
    ("prob_head.W1", ("H", "K")),
    ("prob_head.b1", ("H", None)),
    ("prob_head.W2", ("K", "D")),
    ("prob_head.b2", ("K", None)),
)

_BIAS_WIDTH = {
    "encoder.b": "H",
    "seg_head.b": "C",
    "repr_head.b1": "K",
    "repr_head.b2": "D",
    "prob_head.b1": "K",
    "prob_head.b2": "D",
}


def param_shapes(dims: Dict[str, int]) -> Dict[str, Tuple[int, ...]]:
    """Array shape of every parameter for the given network sizes."""
    shapes = {}
    for name, (fan_in_key, out_key) in PARAM_LAYOUT:
        if out_key is None:
            shapes[name] = (dims[_BIAS_WIDTH[name]],)
        else:
            shapes[name] = (dims[fan_in_key], dims[out_key])
    return shapes


@dataclass
class ModelParams:
    """
    Network weights keyed by ``<group>.<name>``.

    Args:
        dims: Sizes ``F`` (pixel features), ``H`` (encoder width), ``C``
            (classes), ``D`` (embedding), ``K`` (head hidden width)
        arrays: Parameter arrays keyed as in ``PARAM_LAYOUT``
    """

    dims: Dict[str, int]
    arrays: Dict[str, np.ndarray]

    @classmethod
    def init(
        cls,
        feature_dim: int,
        hidden_dim: int,
        num_classes: int,
        embed_dim: int,
        head_hidden: int,
        rng: np.random.Generator,
    ) -> "ModelParams":
        """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialization."""
        dims = {
            "F": feature_dim,
            "H": hidden_dim,
            "C": num_classes,
            "D": embed_dim,
            "K": head_hidden,
        }
        if min(dims.values()) < 1:
            raise ContractViolation(f"all network sizes must be >= 1, got {dims}")
        shapes = param_shapes(dims)
        arrays = {}
        for name, (fan_in_key, _) in PARAM_LAYOUT:
            bound = 1.0 / np.sqrt(dims[fan_in_key])
            arrays[name] = rng.uniform(-bound, bound, size=shapes[name])
        return cls(dims, arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(
            dict(self.dims), {k: v.copy() for k, v in self.arrays.items()}
        )

    def zeros_like(self) -> Dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]


@dataclass
class TeacherState:
    """Parameters tracked by EMA of the student; never trained directly."""

    params: ModelParams
    momentum: float = 0.99


class ForwardCache(NamedTuple):
    """Activations kept for the backward pass."""

    x: np.ndarray
    h: np.ndarray
    r: np.ndarray
    p: np.ndarray
    raw: np.ndarray
    sigma2: np.ndarray
    params: ModelParams


class ForwardOutput(NamedTuple):
    """Logits, representation means and variances for a batch of pixels."""

    logits: np.ndarray
    mu: np.ndarray
    sigma2: np.ndarray
    cache: ForwardCache

    @property
    def reprs(self) -> ReprBatch:
        return ReprBatch(self.mu, self.sigma2)


def forward(params: ModelParams, pixels: np.ndarray) -> ForwardOutput:
    """
    Run the network on ``(N, F)`` pixel features.

    The variance is ``exp(clip(raw, -6, 6))``, so it always lies in
    ``[e^-6, e^6]``.

    Raises:
        NumericFailure: If any activation is non-finite
    """
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.dims["F"]:
        raise ContractViolation(
            f"expected (N, {params.dims['F']}) pixel features, got {x.shape}"
        )
    a = params.arrays
    h = np.tanh(x @ a["encoder.W"] + a["encoder.b"])
    logits = h @ a["seg_head.W"] + a["seg_head.b"]
    r = np.tanh(h @ a["repr_head.W1"] + a["repr_head.b1"])
    mu = r @ a["repr_head.W2"] + a["repr_head.b2"]
    p = np.tanh(h @ a["prob_head.W1"] + a["prob_head.b1"])
    raw = p @ a["prob_head.W2"] + a["prob_head.b2"]
    sigma2 = np.exp(np.clip(raw, LOG_VAR_MIN, LOG_VAR_MAX))

    if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(mu))):
        raise NumericFailure("non-finite activations in forward pass")
    cache = ForwardCache(x, h, r, p, raw, sigma2, params)
    return ForwardOutput(logits, mu, sigma2, cache)


def backward(
    cache: ForwardCache,
    d_logits: np.ndarray,
    d_mu: Optional[np.ndarray] = None,
    d_sigma2: Optional[np.ndarray] = None,
) -> Dict[str, np.ndarray]:
    """
    Exact parameter gradients given upstream gradients of the outputs.

    Args:
        cache: Cache from the matching ``forward`` call
        d_logits: ``(N, C)`` gradient w.r.t. logits
        d_mu: ``(N, D)`` gradient w.r.t. means (zeros if None)
        d_sigma2: ``(N, D)`` gradient w.r.t. variances (zeros if None)

    Returns:
        Gradients keyed like ``ModelParams.arrays``

    Raises:
        ContractViolation: If a gradient shape does not match the cache
    """
    a = cache.params.arrays
    n = cache.x.shape[0]
    if d_mu is None:
        d_mu = np.zeros((n, cache.params.dims["D"]))
    if d_sigma2 is None:
        d_sigma2 = np.zeros((n, cache.params.dims["D"]))
    expected = {
        "d_logits": (d_logits, (n, cache.params.dims["C"])),
        "d_mu": (d_mu, (n, cache.params.dims["D"])),
        "d_sigma2": (d_sigma2, (n, cache.params.dims["D"])),
    }
    for label, (array, shape) in expected.items():
        if np.shape(array) != shape:
            raise ContractViolation(
                f"{label} has shape {np.shape(array)}, expected {shape}"
            )

    grads: Dict[str, np.ndarray] = {}

    # probability head; the clip passes gradient only strictly inside the bounds
    inside = (cache.raw > LOG_VAR_MIN) & (cache.raw < LOG_VAR_MAX)
    d_raw = d_sigma2 * cache.sigma2 * inside
    grads["prob_head.W2"] = cache.p.T @ d_raw
    grads["prob_head.b2"] = d_raw.sum(axis=0)
    d_pz = (d_raw @ a["prob_head.W2"].T) * (1.0 - cache.p**2)
    grads["prob_head.W1"] = cache.h.T @ d_pz
    grads["prob_head.b1"] = d_pz.sum(axis=0)
    d_h = d_pz @ a["prob_head.W1"].T

    # representation head
    grads["repr_head.W2"] = cache.r.T @ d_mu
    grads["repr_head.b2"] = d_mu.sum(axis=0)
    d_rz = (d_mu @ a["repr_head.W2"].T) * (1.0 - cache.r**2)
    grads["repr_head.W1"] = cache.h.T @ d_rz
    grads["repr_head.b1"] = d_rz.sum(axis=0)
    d_h = d_h + d_rz @ a["repr_head.W1"].T

    # segmentation head
    grads["seg_head.W"] = cache.h.T @ d_logits
    grads["seg_head.b"] = d_logits.sum(axis=0)
    d_h = d_h + d_logits @ a["seg_head.W"].T

    # encoder
    d_hz = d_h * (1.0 - cache.h**2)
    grads["encoder.W"] = cache.x.T @ d_hz
    grads["encoder.b"] = d_hz.sum(axis=0)
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def pseudo_label(teacher_logits: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    One-hot argmax labels and max-softmax confidences.

    Ties go to the lowest class index.

    Returns:
        ``(one_hot, confidence)`` of shapes ``(N, C)`` and ``(N,)``
    """
    logits = np.asarray(teacher_logits, dtype=np.float64)
    probs = softmax(logits)
    classes = np.argmax(logits, axis=1)
    one_hot = np.zeros_like(logits)
    one_hot[np.arange(logits.shape[0]), classes] = 1.0
    return one_hot, probs.max(axis=1)


def teacher_ema_step(teacher: TeacherState, student: ModelParams) -> TeacherState:
    """
    Move every teacher parameter towards the student:
    ``momentum * teacher + (1 - momentum) * student``.
    """
    m = teacher.momentum
    if not 0.0 <= m <= 1.0:
        raise ContractViolation(f"teacher momentum must be in [0, 1], got {m}")
    if m == 1.0:
        return TeacherState(teacher.params.copy(), m)
    if m == 0.0:
        return TeacherState(student.copy(), m)
    arrays = {
        name: m * value + (1.0 - m) * student.arrays[name]
        for name, value in teacher.params.arrays.items()
    }
    return TeacherState(ModelParams(dict(teacher.params.dims), arrays), m)


def poly_factor(iteration: int, total_iters: int) -> float:
    """Poly decay ``(1 - iteration / total_iters) ** 0.9``."""
    if total_iters <= 0:
        return 1.0
    progress = min(max(iteration / total_iters, 0.0), 1.0)
    return (1.0 - progress) ** POLY_POWER


def sgd_step(
    params: ModelParams,
    grads: Dict[str, np.ndarray],
    lr_main: float,
    lr_prob_head: float,
    iteration: int = 0,
    total_iters: int = 0,
) -> ModelParams:
    """
    One plain SGD step with separate base rates for the probability head.

    Both rates are multiplied by the poly factor of ``iteration``.

    Returns:
        New ModelParams; ``params`` is left untouched
    """
    if lr_main <= 0 or lr_prob_head <= 0:
        raise ContractViolation("learning rates must be positive")
    factor = poly_factor(iteration, total_iters)
    arrays = {}
    for name, value in params.arrays.items():
        base = lr_prob_head if name.startswith("prob_head.") else lr_main
        arrays[name] = value - (base * factor) * grads[name]
    return ModelParams(dict(params.dims), arrays)

