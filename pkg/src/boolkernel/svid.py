"""Sign-value independent decomposition and successive kernel extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import BitMatrix, as_dense, norms, sign_bits, top_singular_triplet


@dataclass
class SvidKernel:
    """One Boolean kernel: ``bits * outer(s_out, s_in)``."""

    bits: BitMatrix
    s_out: np.ndarray
    s_in: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        self.s_out = np.asarray(self.s_out, dtype=np.float64)
        self.s_in = np.asarray(self.s_in, dtype=np.float64)
        if self.s_out.shape != (self.bits.rows,) or self.s_in.shape != (self.bits.cols,):
            raise ValueError(
                f"scale shapes {self.s_out.shape}, {self.s_in.shape} do not match bits {self.bits.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def dense(self) -> np.ndarray:
        return self.bits.signs() * np.outer(self.s_out, self.s_in)


@dataclass
class ExtractionReport:
    kernels: list[SvidKernel]
    residual_frobenius: list[float]
    residual_l1_normalized: list[float]
    final_residual: np.ndarray
    source_frobenius: float = 0.0
    degenerate_steps: list[int] = field(default_factory=list)


def svid_extract(w, tol: float = 1e-10, max_iter: int = 1000) -> tuple[SvidKernel, np.ndarray]:
    """Split ``w`` into sign bits and a rank-1 fit of its magnitudes.

    Returns the kernel and the residual ``w - bits * outer(s_out, s_in)``.
    """
    w = as_dense(w, "W")
    if w.size == 0:
        raise ValueError("W must be nonempty")
    bits = sign_bits(w)
    trip = top_singular_triplet(np.abs(w), tol=tol, max_iter=max_iter)
    root = np.sqrt(trip.sigma)
    if trip.degenerate:
        kernel = SvidKernel(bits, np.zeros(w.shape[0]), np.zeros(w.shape[1]), degenerate=True)
        return kernel, np.zeros_like(w)
    kernel = SvidKernel(bits, root * trip.u, root * trip.v)
    return kernel, w - kernel.dense()


def successive_extract(w, k: int, tol: float = 1e-10, max_iter: int = 1000) -> ExtractionReport:
    """Extract ``k`` kernels, each one fitted to the residual of the previous ones."""
    if k < 1:
        raise ValueError("number of kernels must be at least 1")
    w = as_dense(w, "W")
    fro0, l1_0 = norms(w)
    kernels, fro, l1n, degenerate = [], [], [], []
    residual = w
    for step in range(k):
        kernel, residual = svid_extract(residual, tol=tol, max_iter=max_iter)
        kernels.append(kernel)
        if kernel.degenerate:
            degenerate.append(step)
        f, l1 = norms(residual)
        fro.append(f)
        l1n.append(l1 / l1_0 if l1_0 > 0 else 0.0)
    return ExtractionReport(kernels, fro, l1n, residual, fro0, degenerate)


def reconstruct(kernels, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Sum of the kernels' dense reconstructions."""
    if not kernels:
        if shape is None:
            raise ValueError("shape is required for an empty kernel list")
        return np.zeros(shape)
    shape = kernels[0].shape if shape is None else tuple(shape)
    out = np.zeros(shape)
    for kern in kernels:
        if kern.shape != shape:
            raise ValueError(f"kernel shape {kern.shape} differs from {shape}")
        out += kern.dense()
    return out


def approx_error(w, kernels) -> tuple[float, float]:
    """Frobenius error and L1 error normalized by ``||w||_1``."""
    w = as_dense(w, "W")
    _, l1_w = norms(w)
    if l1_w == 0:
        raise ValueError("normalized error is undefined for a zero matrix")
    fro, l1 = norms(w - reconstruct(kernels, w.shape))
    return fro, l1 / l1_w
