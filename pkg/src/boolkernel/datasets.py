"""Deterministic synthetic datasets and the embedded character corpus."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np

# printable ASCII plus newline: 96 symbols
CHAR_VOCAB = "\n" + "".join(chr(c) for c in range(0x20, 0x7F))
_CHAR_INDEX = {ch: i for i, ch in enumerate(CHAR_VOCAB)}


def load_corpus() -> str:
    return resources.files("boolkernel").joinpath("data/corpus.txt").read_text(encoding="ascii")


def encode(text: str) -> np.ndarray:
    try:
        return np.array([_CHAR_INDEX[ch] for ch in text], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"character {exc.args[0]!r} is outside the byte vocabulary") from None


def decode(tokens) -> str:
    return "".join(CHAR_VOCAB[int(t)] for t in tokens)


@dataclass
class Dataset:
    """Train/validation split with inputs ``x`` and targets ``y``.

    For ``char_lm`` each row of ``x`` is a window of tokens and the matching
    row of ``y`` is the same window shifted by one.
    """

    kind: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.x_train)

    def batches(self, batch_size: int, rng: np.random.Generator | None = None, split: str = "train"):
        """Yield ``(x, y)`` batches; shuffled when ``rng`` is given."""
        x, y = (self.x_train, self.y_train) if split == "train" else (self.x_val, self.y_val)
        order = np.arange(len(x)) if rng is None else rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            idx = order[start : start + batch_size]
            yield x[idx], y[idx]

    def num_batches(self, batch_size: int) -> int:
        return -(-len(self.x_train) // batch_size)


def _windows(tokens: np.ndarray, context: int, stride: int):
    starts = np.arange(0, len(tokens) - context, stride)
    idx = starts[:, None] + np.arange(context + 1)[None, :]
    win = tokens[idx]
    return win[:, :-1], win[:, 1:]


def make_data(
    kind: str,
    seed: int,
    size: int,
    *,
    n_in: int = 8,
    n_out: int = 4,
    noise: float = 0.1,
    context: int = 64,
    stride: int = 16,
    val_fraction: float = 0.1,
) -> Dataset:
    """Build a dataset.

    ``size`` is the number of samples for ``regression`` and
    ``classification`` and the number of corpus characters for ``char_lm``.
    """
    if size <= 0:
        raise ValueError("size must be positive")
    rng = np.random.default_rng(seed)
    n_val = max(1, int(round(size * val_fraction)))
    if kind == "regression":
        a = rng.normal(size=(n_out, n_in))
        x = rng.normal(size=(size + n_val, n_in))
        y = x @ a.T + noise * rng.normal(size=(size + n_val, n_out))
        return Dataset(kind, x[:size], y[:size], x[size:], y[size:], {"A": a, "noise": noise})
    if kind == "classification":
        a = rng.normal(size=(n_out, n_in))
        x = rng.normal(size=(size + n_val, n_in))
        y = np.argmax(x @ a.T + noise * rng.normal(size=(size + n_val, n_out)), axis=1)
        return Dataset(kind, x[:size], y[:size], x[size:], y[size:], {"A": a, "classes": n_out})
    if kind == "char_lm":
        tokens = encode(load_corpus()[:size])
        split = int(len(tokens) * (1.0 - val_fraction))
        if split <= context or len(tokens) - split <= context:
            raise ValueError(f"corpus slice of {len(tokens)} characters is too short for context {context}")
        xt, yt = _windows(tokens[:split], context, stride)
        xv, yv = _windows(tokens[split:], context, context)
        meta = {"vocab": len(CHAR_VOCAB), "context": context, "stride": stride, "characters": len(tokens)}
        return Dataset(kind, xt, yt, xv, yv, meta)
    raise ValueError(f"unknown dataset kind {kind!r}")
