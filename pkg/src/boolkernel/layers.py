"""Linear layers: the multi-kernel Boolean layer and its dense counterpart.

Both use the ``(out, in)`` weight orientation with ``Y = X @ W.T + b`` and
accept inputs with any number of leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .svid import SvidKernel, reconstruct, successive_extract
from .tensor import matmul_bool


@dataclass
class BackwardSignals:
    """Signals produced by :meth:`BooleanLinear.backward`.

    ``q`` maps each trainable kernel index to the weight-variation signal
    (shape ``(m, n)``); ``p`` is the signal for the upstream layer.
    """

    q: dict[int, np.ndarray]
    p: np.ndarray
    grad_s_out: list[np.ndarray]
    grad_s_in: list[np.ndarray]
    grad_bias: np.ndarray | None = None


def resolve_trainable(policy, k: int) -> frozenset[int]:
    """Kernel indices (0-based) selected by a trainability policy."""
    if policy == "last":
        return frozenset({k - 1})
    if policy == "first":
        return frozenset({0})
    if policy == "all":
        return frozenset(range(k))
    if policy in ("none", None):
        return frozenset()
    idx = frozenset(int(i) for i in policy)
    if any(i < 0 or i >= k for i in idx):
        raise ValueError(f"trainable kernel indices {sorted(idx)} out of range for K={k}")
    return idx


class BooleanLinear:
    """Linear layer whose weight is a sum of Boolean kernels.

    ``Y = sum_k ((X * s_in[k]) @ embed(bits[k]).T) * s_out[k] + bias``.

    Only kernels listed in ``trainable`` receive weight-variation signals.
    Scales and bias are full precision and always get gradients.

    Set ``exact=True`` to route products through the bit-level
    :func:`~boolkernel.tensor.matmul_bool`; the default uses a BLAS product
    against the +1/-1 embedding, which gives the same values up to
    summation order.
    """

    def __init__(self, kernels, bias=None, trainable="last", exact: bool = False):
        kernels = list(kernels)
        if not kernels:
            raise ValueError("a Boolean layer needs at least one kernel")
        shape = kernels[0].shape
        for kern in kernels:
            if kern.shape != shape:
                raise ValueError("all kernels must share the same shape")
        self.kernels: list[SvidKernel] = kernels
        self.bias = None if bias is None else np.asarray(bias, dtype=np.float64).copy()
        if self.bias is not None and self.bias.shape != (shape[0],):
            raise ValueError("bias length must equal the output size")
        self.trainable = resolve_trainable(trainable, len(kernels))
        self.exact = exact
        self.flip_counts = np.zeros(len(kernels), dtype=np.int64)
        self._signs: list[np.ndarray | None] = [None] * len(kernels)
        self._cache = None
        self.signals: BackwardSignals | None = None

    @classmethod
    def from_dense(cls, w, k: int, trainable="last", bias=None, **kwargs) -> BooleanLinear:
        report = successive_extract(w, k)
        return cls(report.kernels, bias=bias, trainable=trainable, **kwargs)

    @property
    def out_features(self) -> int:
        return self.kernels[0].shape[0]

    @property
    def in_features(self) -> int:
        return self.kernels[0].shape[1]

    @property
    def num_kernels(self) -> int:
        return len(self.kernels)

    def weight(self) -> np.ndarray:
        """Dense reconstruction of the represented weight."""
        return reconstruct(self.kernels)

    def signs(self, k: int) -> np.ndarray:
        if self._signs[k] is None:
            self._signs[k] = self.kernels[k].bits.signs()
        return self._signs[k]

    def set_bits(self, k: int, bits) -> None:
        if bits.shape != self.kernels[k].shape:
            raise ValueError("bit matrix shape mismatch")
        self.kernels[k].bits = bits
        self._signs[k] = None

    def _product(self, xs: np.ndarray, k: int) -> np.ndarray:
        if self.exact:
            return matmul_bool(xs, self.kernels[k].bits)
        return xs @ self.signs(k).T

    def _run(self, x2: np.ndarray, keep: bool):
        y = np.zeros((x2.shape[0], self.out_features))
        scaled, products = [], []
        for k, kern in enumerate(self.kernels):
            xs = x2 * kern.s_in
            prod = self._product(xs, k)
            y += prod * kern.s_out
            if keep:
                scaled.append(xs)
                products.append(prod)
        if self.bias is not None:
            y += self.bias
        return y, scaled, products

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_features:
            raise ValueError(f"input has {x.shape[-1]} features, layer expects {self.in_features}")
        lead = x.shape[:-1]
        x2 = x.reshape(-1, self.in_features)
        y, scaled, products = self._run(x2, keep=True)
        self._cache = (x2, scaled, products, lead)
        return y.reshape(*lead, self.out_features)

    def infer(self, x) -> np.ndarray:
        """Forward pass without touching the backward cache."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_features:
            raise ValueError(f"input has {x.shape[-1]} features, layer expects {self.in_features}")
        y, _, _ = self._run(x.reshape(-1, self.in_features), keep=False)
        return y.reshape(*x.shape[:-1], self.out_features)

    __call__ = forward

    def backward(self, z) -> BackwardSignals:
        if self._cache is None:
            raise RuntimeError("backward called without a preceding forward")
        x2, scaled, products, lead = self._cache
        z2 = np.asarray(z, dtype=np.float64).reshape(-1, self.out_features)
        if z2.shape[0] != x2.shape[0]:
            raise ValueError("output signal does not match the cached batch")
        p = np.zeros_like(x2)
        q, g_out, g_in = {}, [], []
        for k, kern in enumerate(self.kernels):
            zs = z2 * kern.s_out
            if k in self.trainable:
                q[k] = zs.T @ scaled[k]
            back = zs @ self.signs(k)
            p += back * kern.s_in
            g_out.append(np.sum(z2 * products[k], axis=0))
            g_in.append(np.sum(back * x2, axis=0))
        g_bias = None if self.bias is None else z2.sum(axis=0)
        self._cache = None
        self.signals = BackwardSignals(q, p.reshape(*lead, self.in_features), g_out, g_in, g_bias)
        return self.signals

    # full-precision parameters, exposed by name for the adaptive optimizer
    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for k, kern in enumerate(self.kernels):
            params[f"s_out.{k}"] = kern.s_out
            params[f"s_in.{k}"] = kern.s_in
        if self.bias is not None:
            params["bias"] = self.bias
        return params

    def gradients(self) -> dict[str, np.ndarray]:
        if self.signals is None:
            raise RuntimeError("no gradients available before backward")
        grads = {}
        for k in range(self.num_kernels):
            grads[f"s_out.{k}"] = self.signals.grad_s_out[k]
            grads[f"s_in.{k}"] = self.signals.grad_s_in[k]
        if self.bias is not None:
            grads["bias"] = self.signals.grad_bias
        return grads

    def flip_stats(self) -> tuple[np.ndarray, int]:
        """Flips per kernel since the last reset, and weights per kernel."""
        return self.flip_counts.copy(), self.out_features * self.in_features

    def reset_flip_stats(self) -> None:
        self.flip_counts[:] = 0


@dataclass
class DenseLinear:
    """Full-precision linear layer with explicit backward."""

    weight: np.ndarray
    bias: np.ndarray | None = None
    _cache: np.ndarray | None = field(default=None, repr=False)
    grads: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        self._cache = x
        return self.infer(x)

    __call__ = forward

    def infer(self, x) -> np.ndarray:
        y = np.asarray(x, dtype=np.float64) @ self.weight.T
        if self.bias is not None:
            y = y + self.bias
        return y

    def backward(self, z) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called without a preceding forward")
        x = self._cache
        z = np.asarray(z, dtype=np.float64)
        x2 = x.reshape(-1, self.in_features)
        z2 = z.reshape(-1, self.out_features)
        self.grads = {"weight": z2.T @ x2}
        if self.bias is not None:
            self.grads["bias"] = z2.sum(axis=0)
        self._cache = None
        return z @ self.weight

    def parameters(self) -> dict[str, np.ndarray]:
        params = {"weight": self.weight}
        if self.bias is not None:
            params["bias"] = self.bias
        return params

    def gradients(self) -> dict[str, np.ndarray]:
        return self.grads


def linear_backward(layer, z) -> np.ndarray:
    """Run a layer's backward and return the upstream signal."""
    out = layer.backward(z)
    return out.p if isinstance(out, BackwardSignals) else out
