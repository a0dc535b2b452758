"""Knowledge-distillation losses and the teacher-to-student finetuning loop.

The logits divergence applies to whatever the models emit last, so
regression MLPs are distilled by treating their outputs as logits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .models import Model, log_softmax
from .optim import (
    AdaptiveMomentState,
    FlipAccumulator,
    LrSchedule,
    adam_step,
    bool_step,
    lr_at,
)
from .training import evaluate

DIVERGENCES = ("forward_kl", "reverse_kl", "symmetric_kl", "js", "tv")
_LOG2 = math.log(2.0)
# accumulator magnitude a weight must build up before it flips during
# distillation; at 0 roughly half the weights with any signal flip each step
DESK_FLIP_THRESHOLD = 1e-3


class DivergenceError(RuntimeError):
    """Raised when a training loss becomes non-finite."""


@dataclass
class KdConfig:
    tau: float = 1.0
    gamma: float = 10.0
    hidden_set: object = "all"  # "all", "none" or a list of state indices
    divergence: str = "forward_kl"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.divergence not in DIVERGENCES:
            raise ValueError(f"unknown divergence {self.divergence!r}; choose from {DIVERGENCES}")


@dataclass
class KdBatchResult:
    loss_logits: float
    loss_is: float
    total: float
    per_token: np.ndarray = field(repr=False, default=None)


def softmax_tau(logits, tau: float = 1.0) -> np.ndarray:
    """Max-subtracted softmax at temperature ``tau`` over the last axis."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    return np.exp(log_softmax(z / tau))


def _softmax_chain(ps, g, tau):
    # gradient w.r.t. logits given gradient g w.r.t. the student probabilities
    return ps * (g - np.sum(ps * g, axis=-1, keepdims=True)) / tau


def divergence(lt, ls, kind: str, tau: float = 1.0):
    """Per-position divergence between teacher and student log-probabilities.

    Returns the divergence per row and its gradient with respect to the
    student logits (already divided by ``tau``).
    """
    pt, ps = np.exp(lt), np.exp(ls)
    if kind == "forward_kl":
        return np.sum(pt * (lt - ls), axis=-1), (ps - pt) / tau
    if kind == "reverse_kl":
        r = ls - lt
        return np.sum(ps * r, axis=-1), _softmax_chain(ps, r, tau)
    if kind == "symmetric_kl":
        fwd, gf = divergence(lt, ls, "forward_kl", tau)
        rev, gr = divergence(lt, ls, "reverse_kl", tau)
        return fwd + rev, gf + gr
    if kind == "js":
        d = ls - lt
        # log(m / p_teacher), exactly zero where the distributions agree
        lm_t = np.where(d == 0, 0.0, np.logaddexp(0.0, d) - _LOG2)
        lm_s = lm_t - d
        val = 0.5 * np.sum(-pt * lm_t - ps * lm_s, axis=-1)
        return val, _softmax_chain(ps, -0.5 * lm_s, tau)
    if kind == "tv":
        diff = pt - ps
        return 0.5 * np.sum(np.abs(diff), axis=-1), _softmax_chain(ps, -0.5 * np.sign(diff), tau)
    raise ValueError(f"unknown divergence {kind!r}")


def kd_logits_loss(teacher_logits, student_logits, config: KdConfig | None = None):
    """Mean divergence over positions, and its gradient w.r.t. the student logits."""
    config = config or KdConfig()
    t = np.asarray(teacher_logits, dtype=np.float64)
    s = np.asarray(student_logits, dtype=np.float64)
    if t.shape != s.shape:
        raise ValueError(f"logit shapes differ: {t.shape} vs {s.shape}")
    v = t.shape[-1]
    lt = log_softmax(t.reshape(-1, v) / config.tau)
    ls = log_softmax(s.reshape(-1, v) / config.tau)
    per, grad = divergence(lt, ls, config.divergence, config.tau)
    n = per.shape[0]
    return float(np.mean(per)), (grad / n).reshape(s.shape), per


def _select(hidden_set, n_states):
    if hidden_set in ("all", None):
        return list(range(n_states))
    if hidden_set == "none":
        return []
    idx = [int(i) for i in hidden_set]
    bad = [i for i in idx if not 0 <= i < n_states]
    if bad:
        raise ValueError(f"hidden states {bad} are not available (model exposes {n_states})")
    return idx


def kd_hidden_loss(teacher_states, student_states, hidden_set="all"):
    """Squared L2 distance of selected hidden states, summed, divided by the positions.

    Returns the loss and a list of gradients w.r.t. each student state
    (``None`` for states outside the selection).
    """
    if len(teacher_states) != len(student_states):
        raise ValueError("teacher and student expose different numbers of hidden states")
    chosen = _select(hidden_set, len(student_states))
    grads = [None] * len(student_states)
    if not chosen:
        return 0.0, grads
    positions = None
    total = 0.0
    for i in chosen:
        t = np.asarray(teacher_states[i], dtype=np.float64)
        s = np.asarray(student_states[i], dtype=np.float64)
        if t.shape != s.shape:
            raise ValueError(f"hidden state {i} shapes differ: {t.shape} vs {s.shape}")
        positions = int(np.prod(s.shape[:-1])) if s.ndim > 1 else 1
        diff = s - t
        total += float(np.sum(diff * diff))
        grads[i] = diff
    scale = 1.0 / positions
    grads = [None if g is None else 2.0 * scale * g for g in grads]
    return total * scale, grads


@dataclass
class DistillOptimizers:
    """Optimizer bundle used by :func:`distill_epoch`."""

    adam: AdaptiveMomentState
    accumulators: dict[str, FlipAccumulator]
    fp_schedule: LrSchedule
    bool_schedule: LrSchedule
    step: int = 0
    train_scales: str = "all"  # or "trainable": only scales of trainable kernels move


def make_optimizers(
    student: Model,
    total_steps: int,
    fp_lr: float = 2e-5,
    bool_lr: float = 5e-3,
    warmup_fraction: float = 0.03,
    weight_decay: float = 0.0,
    flip_threshold: float = DESK_FLIP_THRESHOLD,
    train_scales: str = "all",
) -> DistillOptimizers:
    accs = {
        name: FlipAccumulator.for_layer(layer, eta=0.0, threshold=flip_threshold)
        for name, layer in student.boolean_layers().items()
    }
    return DistillOptimizers(
        AdaptiveMomentState(lr=fp_lr, weight_decay=weight_decay),
        accs,
        LrSchedule(fp_lr, total_steps, warmup_fraction),
        LrSchedule(bool_lr, total_steps, warmup_fraction),
        train_scales=train_scales,
    )


def _student_gradients(student: Model, train_scales: str) -> dict:
    grads = student.named_gradients()
    if train_scales == "all":
        return grads
    keep = {}
    bool_layers = student.boolean_layers()
    for name, g in grads.items():
        lname, _, pname = name.rpartition(".")
        owner, _, kind = lname.rpartition(".")
        if kind in ("s_out", "s_in") and owner in bool_layers:
            if int(pname) not in bool_layers[owner].trainable:
                continue
        keep[name] = g
    return keep


def distill_batch(teacher: Model, student: Model, x, config: KdConfig) -> KdBatchResult:
    """Forward both models and backpropagate the combined loss through the student."""
    t_out, t_hidden = teacher.forward(x, cache=False)
    s_out, s_hidden = student.forward(x)
    loss_logits, dlogits, per = kd_logits_loss(t_out, s_out, config)
    loss_is, dh = kd_hidden_loss(t_hidden, s_hidden, config.hidden_set)
    total = loss_logits + config.gamma * loss_is
    if not math.isfinite(total):
        raise DivergenceError(f"non-finite loss: logits={loss_logits!r}, hidden={loss_is!r}")
    dh = [None if g is None else config.gamma * g for g in dh]
    student.backward(dlogits, dh)
    return KdBatchResult(loss_logits, loss_is, total, per)


def kd_validation_loss(teacher: Model, student: Model, data, config: KdConfig, batch_size: int = 32) -> float:
    """Combined distillation loss on the validation split, averaged over batches by size."""
    total, count = 0.0, 0
    for x, _ in data.batches(batch_size, split="val"):
        t_out, t_hidden = teacher.forward(x, cache=False)
        s_out, s_hidden = student.forward(x, cache=False)
        ll, _, _ = kd_logits_loss(t_out, s_out, config)
        li, _ = kd_hidden_loss(t_hidden, s_hidden, config.hidden_set)
        total += (ll + config.gamma * li) * len(x)
        count += len(x)
    return total / count


def distill_epoch(
    teacher: Model,
    student: Model,
    data,
    optimizers: DistillOptimizers,
    config: KdConfig,
    *,
    batch_size: int = 8,
    rng: np.random.Generator | None = None,
    metrics_file=None,
    epoch: int = 0,
) -> dict:
    """One pass over the training split.

    The teacher only runs inference. Boolean kernels are updated with the
    flip optimizer and every full-precision student parameter with AdamW.
    Per-step records are written as JSON lines to ``metrics_file`` if given.
    """
    sums = {"loss_logits": 0.0, "loss_is": 0.0, "total": 0.0}
    flips = {name: 0 for name in optimizers.accumulators}
    n = 0
    for x, _ in data.batches(batch_size, rng):
        res = distill_batch(teacher, student, x, config)
        step = optimizers.step
        fp_lr = lr_at(optimizers.fp_schedule, min(step, optimizers.fp_schedule.total_steps))
        b_lr = lr_at(optimizers.bool_schedule, min(step, optimizers.bool_schedule.total_steps))
        adam_step(student.named_parameters(), _student_gradients(student, optimizers.train_scales),
                  optimizers.adam, lr=fp_lr)
        step_flips = 0
        for name, layer in student.boolean_layers().items():
            report = bool_step(layer, layer.signals, optimizers.accumulators[name], eta=b_lr)
            f = sum(report.flips.values())
            flips[name] += f
            step_flips += f
        optimizers.step += 1
        n += 1
        for key in sums:
            sums[key] += getattr(res, key)
        if metrics_file is not None:
            rec = {"epoch": epoch, "step": step, "loss_logits": res.loss_logits, "loss_is": res.loss_is,
                   "flips": step_flips, "lr": fp_lr, "bool_lr": b_lr}
            metrics_file.write(json.dumps(rec) + "\n")
    val = evaluate(student, data, split="val")
    out = {key: val_ / max(n, 1) for key, val_ in sums.items()}
    out.update(epoch=epoch, steps=n, flips=sum(flips.values()), flips_by_layer=flips,
               val_loss=val.loss, val_perplexity=val.perplexity,
               val_kd_loss=kd_validation_loss(teacher, student, data, config))
    return out


def distill(
    teacher: Model,
    student: Model,
    data,
    epochs: int,
    config: KdConfig | None = None,
    *,
    batch_size: int = 8,
    seed: int = 0,
    fp_lr: float = 2e-5,
    bool_lr: float = 5e-3,
    warmup_fraction: float = 0.03,
    weight_decay: float = 0.0,
    flip_threshold: float = DESK_FLIP_THRESHOLD,
    train_scales: str = "all",
    metrics_file=None,
) -> list[dict]:
    """Run ``epochs`` of distillation and return the per-epoch metrics."""
    config = config or KdConfig()
    rng = np.random.default_rng(seed)
    total = max(1, epochs * data.num_batches(batch_size))
    opt = make_optimizers(student, total, fp_lr, bool_lr, warmup_fraction, weight_decay,
                          flip_threshold, train_scales)
    history = []
    for ep in range(epochs):
        history.append(distill_epoch(teacher, student, data, opt, config, batch_size=batch_size,
                                     rng=rng, metrics_file=metrics_file, epoch=ep))
    return history
