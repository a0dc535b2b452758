"""Boolean flip optimizer, AdamW for full-precision parameters, and the LR schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .layers import BackwardSignals, BooleanLinear


@dataclass
class FlipAccumulator:
    """Optimizer state for the Boolean kernels of one layer.

    ``m`` holds one real accumulator per trainable weight. ``beta`` is the
    fraction of the layer's weights left unchanged by the previous step.

    A weight flips when its accumulator agrees in sign with it. With a
    positive ``threshold`` the accumulator must additionally reach that
    magnitude (measured along the weight's sign) before a flip happens.
    """

    m: dict[int, np.ndarray] = field(default_factory=dict)
    beta: float = 1.0
    eta: float = 5e-3
    threshold: float = 0.0

    @classmethod
    def for_layer(cls, layer: BooleanLinear, **kwargs) -> FlipAccumulator:
        shape = (layer.out_features, layer.in_features)
        return cls(m={k: np.zeros(shape) for k in sorted(layer.trainable)}, **kwargs)

    def state_size(self) -> int:
        """Number of real values held per weight-bearing tensor, summed."""
        return sum(a.size for a in self.m.values())


@dataclass
class FlipReport:
    flips: dict[int, int]
    n_total: int
    n_unchanged: int
    beta: float


def bool_step(
    layer: BooleanLinear,
    signals: BackwardSignals,
    state: FlipAccumulator,
    eta: float | None = None,
) -> FlipReport:
    """Accumulate weight signals and flip the weights they agree with.

    For each trainable weight: ``M <- beta*M + eta*Q``; flip when
    ``embed(w) * M > 0`` (and ``>= threshold``), then reset ``M`` to zero.
    Afterwards ``beta`` becomes the fraction of unchanged weights.
    """
    if eta is not None:
        state.eta = eta
    n_total = n_unchanged = 0
    flips = {}
    for k, acc in state.m.items():
        q = signals.q.get(k)
        if q is None:
            raise ValueError(f"no weight signal for trainable kernel {k}")
        if q.shape != acc.shape:
            raise ValueError(f"signal shape {q.shape} does not match accumulator {acc.shape}")
        if not np.all(np.isfinite(q)):
            raise ValueError("weight signal has non-finite entries")
        acc *= state.beta
        acc += state.eta * q
        agreement = layer.signs(k) * acc
        flip = agreement > 0
        if state.threshold > 0:
            flip &= agreement >= state.threshold
        n_flip = int(flip.sum())
        if n_flip:
            layer.set_bits(k, layer.kernels[k].bits.flipped(flip))
            acc[flip] = 0.0
            layer.flip_counts[k] += n_flip
        flips[k] = n_flip
        n_total += acc.size
        n_unchanged += acc.size - n_flip
    if n_total:
        state.beta = n_unchanged / n_total
    return FlipReport(flips, n_total, n_unchanged, state.beta)


@dataclass
class AdaptiveMomentState:
    """AdamW state: first and second moments per parameter."""

    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def state_size(self) -> int:
        return sum(a.size for a in self.m.values()) + sum(a.size for a in self.v.values())


def adam_step(params: dict, grads: dict, state: AdaptiveMomentState, lr: float | None = None) -> dict:
    """One decoupled-weight-decay Adam update, applied in place.

    Parameters without a gradient entry are skipped.
    """
    lr = state.lr if lr is None else lr
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"gradient for {name!r} has non-finite entries")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} differs from parameter {p.shape} for {name!r}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if state.weight_decay:
            p *= 1.0 - lr * state.weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


@dataclass
class LrSchedule:
    """Linear warmup followed by cosine decay to zero."""

    max_lr: float
    total_steps: int
    warmup_fraction: float = 0.03

    @property
    def warmup_steps(self) -> int:
        if self.warmup_fraction <= 0:
            return 0
        return max(1, math.ceil(self.warmup_fraction * self.total_steps))


def lr_at(schedule: LrSchedule, step: int) -> float:
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    warm = schedule.warmup_steps
    if step < warm:
        return schedule.max_lr * step / warm
    span = schedule.total_steps - warm
    if span <= 0:
        return schedule.max_lr
    progress = (step - warm) / span
    return schedule.max_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
