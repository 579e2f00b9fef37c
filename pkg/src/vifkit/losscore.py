"""Presence-masked loss models, targets, and deterministic training.

A loss L(theta, b) maps parameters plus a boolean presence vector b over the
data objects to a scalar; b_i = 0 means object i is excluded.  Everything
downstream (attribution, leave-one-out retraining) is phrased against this
interface, so a model only has to get value/gradient/hessian right under
masking to participate.
"""

from __future__ import annotations

import abc
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteError, SingularMatrixError
from .numkit import as_vector, require_finite, solve_spd

log = logging.getLogger("vifkit.losscore")


def derive_seed(master: int, *keys: int) -> int:
    """Stable per-key child seed, independent of scheduling order."""
    ss = np.random.SeedSequence([int(master), *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class PresenceVector:
    """Immutable boolean mask over the n data objects."""

    __slots__ = ("bits",)

    def __init__(self, bits):
        arr = np.array(bits, dtype=bool)
        if arr.ndim != 1 or arr.shape[0] == 0:
            raise ValueError("presence vector must be 1-d and non-empty")
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    def __setattr__(self, name, value):
        raise AttributeError("PresenceVector is immutable")

    @classmethod
    def all_ones(cls, n: int) -> "PresenceVector":
        return cls(np.ones(n, dtype=bool))

    @classmethod
    def drop(cls, n: int, i: int) -> "PresenceVector":
        bits = np.ones(n, dtype=bool)
        bits[i] = False
        return cls(bits)

    def without(self, i: int) -> "PresenceVector":
        if not self.bits[i]:
            raise ValueError(f"object {i} is already absent")
        bits = self.bits.copy()
        bits[i] = False
        return PresenceVector(bits)

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @property
    def is_full(self) -> bool:
        return bool(self.bits.all())

    def present_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def key(self) -> tuple:
        """Canonical encoding: the tuple of present object ids."""
        return tuple(int(i) for i in np.flatnonzero(self.bits))

    def __eq__(self, other):
        return isinstance(other, PresenceVector) and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.n, self.key()))

    def __repr__(self):
        return f"PresenceVector(n={self.n}, present={self.count})"


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 parameter vector plus a named segment map.

    layout maps a segment name to (offset, length) into theta; models define
    what shape each segment is reshaped to internally.
    """

    theta: np.ndarray
    layout: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "theta", as_vector(self.theta))
        end = 0
        for name, (off, length) in self.layout.items():
            if off < 0 or length < 0 or off + length > self.theta.shape[0]:
                raise ValueError(f"segment {name!r} out of bounds")
            end = max(end, off + length)

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    def segment(self, name: str) -> np.ndarray:
        off, length = self.layout[name]
        return self.theta[off : off + length]


class TargetFunction(abc.ABC):
    """Differentiable scalar function of the parameters, f(theta)."""

    @abc.abstractmethod
    def value(self, theta: np.ndarray) -> float: ...

    @abc.abstractmethod
    def gradient(self, theta: np.ndarray) -> np.ndarray: ...


class LossModel(abc.ABC):
    """Presence-masked loss over n_objects data objects.

    Subclasses must keep the parameter dimension fixed for every b: absent
    objects' parameters (if any) are frozen, never removed.
    """

    is_convex: bool = True

    @property
    @abc.abstractmethod
    def n_objects(self) -> int: ...

    @property
    @abc.abstractmethod
    def dim(self) -> int: ...

    @property
    def layout(self) -> dict:
        return {"theta": (0, self.dim)}

    @abc.abstractmethod
    def value(self, theta: np.ndarray, b: PresenceVector) -> float: ...

    @abc.abstractmethod
    def gradient(self, theta: np.ndarray, b: PresenceVector) -> np.ndarray: ...

    @abc.abstractmethod
    def hessian(self, theta: np.ndarray, b: PresenceVector) -> np.ndarray: ...

    def num_terms(self, b: PresenceVector) -> int:
        """Unit loss terms available to per-term samplers; 1 if monolithic."""
        return 1

    @property
    def supports_per_term_hvp(self) -> bool:
        return type(self).per_term_hvp is not LossModel.per_term_hvp

    def per_term_hvp(
        self, j: int, theta: np.ndarray, b: PresenceVector, v: np.ndarray
    ) -> np.ndarray:
        """Hessian-vector product of unit term j (unscaled, undamped)."""
        raise NotImplementedError(f"{type(self).__name__} has no per-term Hessian")

    def term_gradient_sum(
        self, theta: np.ndarray, b: PresenceVector, idx: np.ndarray
    ) -> np.ndarray:
        """Gradient summed over the unit terms in idx, for minibatch training."""
        raise NotImplementedError(f"{type(self).__name__} has no per-term gradients")

    def delta_gradient(self, theta: np.ndarray, i: int) -> np.ndarray:
        """grad L(theta, 1) - grad L(theta, 1 without i).

        The default takes the literal difference; models with exploitable
        term cancellation override this with a direct formula.
        """
        ones = PresenceVector.all_ones(self.n_objects)
        return self.gradient(theta, ones) - self.gradient(theta, ones.without(i))

    def initial_params(self, seed: int) -> np.ndarray:
        return np.zeros(self.dim)

    def reseeded(self, seed: int) -> "LossModel":
        """Clone with fresh internal randomness; identity for deterministic losses."""
        return self

    def param_vector(self, theta: np.ndarray) -> ParamVector:
        return ParamVector(theta, dict(self.layout))


class DecomposableLoss(abc.ABC):
    """Capability mixin: the loss is a sum of independent per-object terms."""

    @abc.abstractmethod
    def point_gradient(self, theta: np.ndarray, i: int) -> np.ndarray: ...

    def point_gradients(self, theta: np.ndarray) -> np.ndarray:
        return np.stack([self.point_gradient(theta, i) for i in range(self.n_objects)])


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "newton"
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int | None = None
    weight_decay: float = 0.0
    grad_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("newton", "gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 or None for full batch")
        if self.weight_decay < 0 or self.grad_tol <= 0:
            raise ValueError("weight_decay must be >= 0 and grad_tol > 0")


@dataclass(frozen=True)
class TrainResult:
    params: ParamVector
    grad_norm: float
    converged: bool
    iterations: int
    loss: float


def train(
    model: LossModel,
    b: PresenceVector,
    cfg: TrainConfig,
    init: np.ndarray | None = None,
) -> TrainResult:
    """Minimize L(theta, b) (+ weight_decay/2 |theta|^2) deterministically.

    Newton stops at |grad| <= grad_tol; gd/adam run for cfg.epochs and report
    the final gradient norm, with converged flagging whether it met grad_tol.
    weight_decay augments the objective itself; keep it at zero when the
    trained point feeds attribution against the bare model loss.
    """
    theta = np.array(
        model.initial_params(cfg.seed) if init is None else init, dtype=np.float64
    )
    if theta.shape != (model.dim,):
        raise ValueError(f"init has shape {theta.shape}, expected ({model.dim},)")

    if cfg.optimizer == "newton":
        return _train_newton(model, b, cfg, theta)
    return _train_first_order(model, b, cfg, theta)


def _objective(model, b, cfg, theta):
    val = model.value(theta, b)
    if cfg.weight_decay:
        val += 0.5 * cfg.weight_decay * float(theta @ theta)
    return val


def _grad(model, b, cfg, theta):
    g = model.gradient(theta, b)
    if cfg.weight_decay:
        g = g + cfg.weight_decay * theta
    return g


def _train_newton(model, b, cfg, theta):
    loss = _objective(model, b, cfg, theta)
    if not np.isfinite(loss):
        raise NonFiniteError("objective is non-finite at the initial point")
    g = _grad(model, b, cfg, theta)
    gn = float(np.linalg.norm(g))
    it = 0
    while gn > cfg.grad_tol and it < cfg.epochs:
        h = model.hessian(theta, b)
        if cfg.weight_decay:
            h = h + cfg.weight_decay * np.eye(model.dim)
        step = _newton_step(h, g)
        # Armijo backtracking keeps the iteration safe far from the optimum
        t = 1.0
        descent = float(g @ step)
        while t > 1e-10:
            cand = theta - t * step
            cand_loss = _objective(model, b, cfg, cand)
            if np.isfinite(cand_loss) and cand_loss <= loss - 1e-4 * t * descent:
                break
            t *= 0.5
        else:
            break
        theta, loss = cand, cand_loss
        g = _grad(model, b, cfg, theta)
        require_finite(g, context="gradient during Newton")
        gn = float(np.linalg.norm(g))
        it += 1
    return TrainResult(
        params=model.param_vector(theta),
        grad_norm=gn,
        converged=bool(gn <= cfg.grad_tol),
        iterations=it,
        loss=float(loss),
    )


def _newton_step(h, g):
    damping = 0.0
    scale = max(np.abs(np.diag(h)).max(), 1.0)
    for _ in range(20):
        try:
            step = solve_spd(h, g, damping=damping)
        except SingularMatrixError:
            damping = 1e-10 * scale if damping == 0.0 else damping * 100.0
            continue
        if step @ g > 0:
            return step
        damping = 1e-10 * scale if damping == 0.0 else damping * 100.0
    raise SingularMatrixError("could not produce a descent direction")


def _train_first_order(model, b, cfg, theta):
    rng = np.random.default_rng(derive_seed(cfg.seed, 0xBA7C4))
    use_batches = cfg.batch_size is not None
    if use_batches:
        n_terms = model.num_terms(b)
        if n_terms <= 1:
            raise ValueError("batch_size set but the model exposes no unit terms")

    m = np.zeros(model.dim)
    v = np.zeros(model.dim)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step_count = 0

    for _ in range(cfg.epochs):
        if use_batches:
            order = rng.permutation(n_terms)
            batches = [
                order[s : s + cfg.batch_size]
                for s in range(0, n_terms, cfg.batch_size)
            ]
        else:
            batches = [None]
        for batch in batches:
            if batch is None:
                g = _grad(model, b, cfg, theta)
            else:
                g = model.term_gradient_sum(theta, b, batch) * (n_terms / batch.size)
                if cfg.weight_decay:
                    g = g + cfg.weight_decay * theta
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(
                    "non-finite gradient during training (learning rate too high?)"
                )
            step_count += 1
            if cfg.optimizer == "gd":
                theta = theta - cfg.learning_rate * g
            else:
                m = beta1 * m + (1 - beta1) * g
                v = beta2 * v + (1 - beta2) * g * g
                mhat = m / (1 - beta1**step_count)
                vhat = v / (1 - beta2**step_count)
                theta = theta - cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)

    loss = _objective(model, b, cfg, theta)
    if not np.isfinite(loss):
        raise NonFiniteError("objective is non-finite after training")
    g = _grad(model, b, cfg, theta)
    gn = float(np.linalg.norm(g))
    return TrainResult(
        params=model.param_vector(theta),
        grad_norm=gn,
        converged=bool(gn <= cfg.grad_tol),
        iterations=cfg.epochs,
        loss=float(loss),
    )


def check_gradient(
    model: LossModel, theta: np.ndarray, b: PresenceVector, h: float = 1e-5
) -> float:
    """Max abs deviation between analytic and central-difference gradient,
    relative to the gradient's max magnitude (floored at 1e-8)."""
    theta = np.asarray(theta, dtype=np.float64)
    g = model.gradient(theta, b)
    fd = np.empty_like(g)
    for j in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[j] = h
        fd[j] = (model.value(theta + e, b) - model.value(theta - e, b)) / (2 * h)
    denom = max(float(np.abs(g).max()), 0.0) + 1e-8
    return float(np.abs(g - fd).max() / denom)


def check_hessian(
    model: LossModel, theta: np.ndarray, b: PresenceVector, h: float = 1e-5
) -> float:
    """Same as check_gradient but for the Hessian, differencing the gradient."""
    theta = np.asarray(theta, dtype=np.float64)
    hess = model.hessian(theta, b)
    fd = np.empty_like(hess)
    for j in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[j] = h
        fd[:, j] = (model.gradient(theta + e, b) - model.gradient(theta - e, b)) / (2 * h)
    denom = max(float(np.abs(hess).max()), 0.0) + 1e-8
    return float(np.abs(hess - fd).max() / denom)
