"""Dense and bit-packed matrices, products, norms and the leading singular triplet.

Dense matrices are plain ``float64`` numpy arrays. Boolean matrices are
packed into little-endian 64-bit words, row-major, least significant bit
first within a word. A set bit is TRUE (+1), a clear bit is FALSE (-1), and
each row is padded with clear bits up to a word boundary.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

WORD_BITS = 64
WORD_DTYPE = np.dtype("<u8")


def as_dense(a, name: str = "matrix") -> np.ndarray:
    """Validate and convert to a finite 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def words_per_row(cols: int) -> int:
    return -(-cols // WORD_BITS)


@dataclass(frozen=True, eq=False)
class BitMatrix:
    """Bit-packed Boolean matrix of shape ``(rows, cols)``."""

    rows: int
    cols: int
    words: np.ndarray  # (rows, words_per_row(cols)) of <u8
    _mask: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.words, dtype=WORD_DTYPE)
        if w.shape != (self.rows, words_per_row(self.cols)):
            raise ValueError(
                f"word array shape {w.shape} does not fit a {self.rows}x{self.cols} matrix"
            )
        w.setflags(write=False)
        object.__setattr__(self, "words", w)
        pad = self.cols % WORD_BITS
        if pad and self.rows and np.any(w[:, -1] >> np.uint64(pad)):
            raise ValueError("padding bits beyond the last column must be zero")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nbytes(self) -> int:
        return self.words.nbytes

    @classmethod
    def from_mask(cls, mask) -> BitMatrix:
        """Pack a boolean array (True = TRUE)."""
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be 2-D")
        rows, cols = mask.shape
        nw = words_per_row(cols)
        padded = np.zeros((rows, nw * WORD_BITS), dtype=bool)
        padded[:, :cols] = mask
        packed = np.packbits(padded, axis=1, bitorder="little")
        words = packed.view(WORD_DTYPE).reshape(rows, nw)
        return cls(rows, cols, words)

    @classmethod
    def from_bytes(cls, rows: int, cols: int, payload: bytes) -> BitMatrix:
        words = np.frombuffer(payload, dtype=WORD_DTYPE).reshape(rows, words_per_row(cols))
        return cls(rows, cols, words.copy())

    def to_bytes(self) -> bytes:
        return self.words.tobytes()

    def mask(self) -> np.ndarray:
        """Unpacked boolean view (cached, read-only)."""
        if self._mask is None:
            raw = np.ascontiguousarray(self.words).view(np.uint8).reshape(self.rows, -1)
            m = np.unpackbits(raw, axis=1, bitorder="little")[:, : self.cols].astype(bool)
            m.setflags(write=False)
            object.__setattr__(self, "_mask", m)
        return self._mask

    def signs(self) -> np.ndarray:
        """The +1/-1 embedding as float64."""
        return np.where(self.mask(), 1.0, -1.0)

    def popcount_rows(self) -> np.ndarray:
        return self.mask().sum(axis=1)

    def flipped(self, flip_mask) -> BitMatrix:
        """New matrix with the selected entries negated."""
        other = BitMatrix.from_mask(flip_mask)
        if other.shape != self.shape:
            raise ValueError("flip mask shape mismatch")
        return BitMatrix(self.rows, self.cols, self.words ^ other.words)

    def __eq__(self, other):
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.words, other.words)

    __hash__ = None


def pack(signs) -> BitMatrix:
    """Pack a matrix with entries in {+1, -1}."""
    s = as_dense(signs, "signs")
    if not np.all((s == 1.0) | (s == -1.0)):
        raise ValueError("pack expects entries in {+1, -1}")
    return BitMatrix.from_mask(s > 0)


def unpack(w: BitMatrix) -> np.ndarray:
    return w.signs()


def sign_bits(w) -> BitMatrix:
    """Signs of a real matrix as bits, with sign(0) taken as TRUE."""
    return BitMatrix.from_mask(np.asarray(w) >= 0)


def matmul_dense(a, b_t) -> np.ndarray:
    """``A @ B_T.T`` accumulated over the inner index in ascending order.

    The fixed order makes results reproducible bit for bit and comparable
    with :func:`matmul_bool`. Use ``@`` directly when order does not matter.
    """
    a = as_dense(a, "A")
    b_t = as_dense(b_t, "B_T")
    if a.shape[1] != b_t.shape[1]:
        raise ValueError(f"inner dimensions differ: {a.shape} vs {b_t.shape}")
    out = np.zeros((a.shape[0], b_t.shape[0]))
    for i in range(a.shape[1]):
        out += a[:, i : i + 1] * b_t[:, i]
    return out


def matmul_bool(x, w: BitMatrix) -> np.ndarray:
    """``X @ embed(W).T`` by sign-conditioned accumulation.

    Each input column is added or subtracted depending on the weight bit; no
    product against a weight is formed. Accumulation runs over columns in
    ascending order, matching :func:`matmul_dense`.
    """
    x = as_dense(x, "X")
    if x.shape[1] != w.cols:
        raise ValueError(f"inner dimensions differ: {x.shape} vs {w.shape}")
    mask = w.mask()
    out = np.zeros((x.shape[0], w.rows))
    for i in range(w.cols):
        xi = x[:, i : i + 1]
        out += np.where(mask[:, i], xi, -xi)
    return out


def norms(m) -> tuple[float, float]:
    """Frobenius norm and entrywise L1 norm."""
    m = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(m * m))), float(np.sum(np.abs(m)))


@dataclass
class SingularTriplet:
    sigma: float
    u: np.ndarray
    v: np.ndarray
    iterations: int = 0
    converged: bool = True
    degenerate: bool = False


def top_singular_triplet(m, tol: float = 1e-10, max_iter: int = 1000) -> SingularTriplet:
    """Leading singular triplet of a nonnegative matrix by power iteration.

    Alternates ``v <- normalize(M.T u)`` and ``u <- normalize(M v)`` from the
    all-ones start. Stops once two successive estimates of sigma differ by
    less than ``tol`` (relative to sigma when sigma exceeds one) and the left
    vector moves by less than ``10 * tol``.
    """
    m = as_dense(m, "M")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if np.any(m < 0):
        raise ValueError("top_singular_triplet expects a nonnegative matrix")
    rows, cols = m.shape
    if not np.any(m):
        e_u = np.zeros(rows)
        e_v = np.zeros(cols)
        e_u[0] = e_v[0] = 1.0
        return SingularTriplet(0.0, e_u, e_v, 0, True, True)

    # work on a copy scaled to unit max so tiny or huge entries cannot under/overflow
    scale = float(m.max())
    m = m / scale
    u = np.full(rows, 1.0 / np.sqrt(rows))
    sigma = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        v = m.T @ u
        v /= np.linalg.norm(v)
        mv = m @ v
        new_sigma = float(np.linalg.norm(mv))
        new_u = mv / new_sigma
        # sigma settles long before the vectors do; require both
        if abs(new_sigma - sigma) < tol * max(1.0, new_sigma) and np.linalg.norm(new_u - u) < 10 * tol:
            sigma, u = new_sigma, new_u
            converged = True
            break
        sigma, u = new_sigma, new_u
    # one last right update so that u, v, sigma are mutually consistent
    v = m.T @ u
    sigma_v = float(np.linalg.norm(v))
    v /= sigma_v
    if u.sum() < 0:
        u, v = -u, -v
    if not converged:
        warnings.warn(
            f"power iteration did not converge in {max_iter} iterations", RuntimeWarning
        )
    sigma, sigma_v = sigma * scale, sigma_v * scale
    return SingularTriplet(max(sigma, sigma_v), u, v, it, converged, False)


def leading_singular_pair(
    m, rng: np.random.Generator | None = None, tol: float = 1e-12, max_iter: int = 10000
) -> SingularTriplet:
    """Leading singular triplet of a general real matrix.

    Power iteration on ``M.T M`` from a random start; the overall sign is
    fixed so that the largest-magnitude entry of ``v`` is positive.
    """
    m = as_dense(m, "M")
    rng = np.random.default_rng(0) if rng is None else rng
    rows, cols = m.shape
    gram = m.T @ m
    v = rng.standard_normal(cols)
    v /= np.linalg.norm(v)
    lam = 0.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = gram @ v
        new_lam = float(np.linalg.norm(w))
        if new_lam == 0.0:
            break
        v = w / new_lam
        if abs(new_lam - lam) < tol * max(1.0, new_lam):
            converged = True
            break
        lam = new_lam
    mv = m @ v
    sigma = float(np.linalg.norm(mv))
    if sigma == 0.0:
        e_u = np.zeros(rows)
        e_u[0] = 1.0
        return SingularTriplet(0.0, e_u, v, it, True, True)
    u = mv / sigma
    if v[np.argmax(np.abs(v))] < 0:
        u, v = -u, -v
    return SingularTriplet(sigma, u, v, it, converged, False)
