"""Teacher training and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import Model, log_softmax
from .optim import AdaptiveMomentState, adam_step


@dataclass
class EvalResult:
    loss: float
    perplexity: float | None  # None for regression targets
    tokens: int

    def as_dict(self) -> dict:
        return {"loss": self.loss, "perplexity": self.perplexity, "tokens": self.tokens}


def _is_token_model(model: Model) -> bool:
    return getattr(model.descriptor, "kind", None) == "transformer" or (
        getattr(model.descriptor, "task", None) == "classification"
    )


def evaluate(model: Model, data, split: str = "val", batch_size: int = 32) -> EvalResult:
    """Teacher-forced loss over a split.

    For token predictors the loss is mean cross-entropy per target and the
    perplexity is its exponential. Regression models report mean squared
    error and no perplexity.
    """
    x = data.x_val if split == "val" else data.x_train
    if len(x) == 0:
        raise ValueError(f"the {split!r} split is empty")
    total, count = 0.0, 0
    token_model = _is_token_model(model)
    for xb, yb in data.batches(batch_size, split=split):
        out, _ = model.forward(xb, cache=False)
        if token_model:
            lp = log_softmax(out).reshape(-1, out.shape[-1])
            tgt = np.asarray(yb).reshape(-1)
            total -= float(np.sum(lp[np.arange(tgt.size), tgt]))
            count += tgt.size
        else:
            diff = out - yb
            total += float(np.sum(diff * diff))
            count += diff.size
    loss = total / count
    return EvalResult(loss, math.exp(loss) if token_model else None, count)


@dataclass
class TrainHistory:
    initial_loss: float
    epoch_losses: list[float]


def train_teacher(
    model: Model,
    data,
    epochs: int,
    *,
    lr: float = 3e-3,
    batch_size: int = 8,
    seed: int = 0,
    weight_decay: float = 0.0,
) -> TrainHistory:
    """Fit a full-precision model in place with AdamW.

    Returns the training-split loss before training and the mean batch loss of
    each epoch.
    """
    if len(data) == 0:
        raise ValueError("training data is empty")
    rng = np.random.default_rng(seed)
    state = AdaptiveMomentState(lr=lr, weight_decay=weight_decay)
    initial = evaluate(model, data, split="train").loss
    losses = []
    for _ in range(epochs):
        acc, n = 0.0, 0
        for xb, yb in data.batches(batch_size, rng):
            out, _ = model.forward(xb)
            loss, dout = model.loss(out, yb)
            if not math.isfinite(loss):
                raise FloatingPointError(f"teacher training diverged (loss={loss!r})")
            model.backward(dout)
            adam_step(model.named_parameters(), model.named_gradients(), state)
            acc += loss
            n += 1
        losses.append(acc / n)
    return TrainHistory(initial, losses)
