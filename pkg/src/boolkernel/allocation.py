"""Weight importance via projection-weighted CCA, and budgeted kernel allocation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .layers import BooleanLinear, DenseLinear

RIDGE = 1e-8
PROBE_SAMPLES = 128
BRUTEFORCE_LIMIT = 10**6
# size ratios only sum to 1 up to rounding, so the budget check carries the same slack
RATIO_TOL = 1e-9


# ---------------------------------------------------------------- PWCCA


@dataclass
class PwccaResult:
    rho: np.ndarray
    alpha: np.ndarray
    weighted_mean: float
    degraded: bool = False


def _whiten(a: np.ndarray):
    # orthonormal basis of the column space: a @ (a^T a)^(-1/2); the ridge is
    # added only when the covariance is near rank deficient, so that
    # well-conditioned inputs are whitened exactly
    cov = a.T @ a
    evals, evecs = np.linalg.eigh(cov)
    top = max(float(evals[-1]), 0.0)
    ridge = RIDGE * top if top > 0 else RIDGE
    degraded = bool(evals[0] <= ridge)
    shift = ridge if degraded else 0.0
    inv_sqrt = evecs @ np.diag(1.0 / np.sqrt(np.clip(evals, 0.0, None) + shift)) @ evecs.T
    return a @ inv_sqrt, degraded


def pwcca(x, y) -> PwccaResult:
    """Canonical correlations between the columns of ``x`` (d, n) and ``y`` (d, m).

    Rows are samples. Returns the ``min(n, m)`` correlations, their projection
    weights ``alpha_i = sum_j |<h_i, x_j>|`` and the weighted mean.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("x and y must be 2-D with the same number of rows")
    d, n = x.shape
    m = y.shape[1]
    if d <= max(n, m):
        raise ValueError(f"need more samples ({d}) than features ({max(n, m)})")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("activations must be finite")
    xc = x - x.mean(axis=0)
    yc = y - y.mean(axis=0)
    qx, dx = _whiten(xc)
    qy, dy = _whiten(yc)
    u, s, _ = np.linalg.svd(qx.T @ qy, full_matrices=False)
    c = min(n, m)
    rho = np.clip(s[:c], 0.0, 1.0)
    canon = qx @ u[:, :c]  # canonical variables of x, one per column
    alpha = np.sum(np.abs(canon.T @ xc), axis=1)
    total = float(alpha.sum())
    mean = float(alpha @ rho / total) if total > 0 else 0.0
    return PwccaResult(rho, alpha, mean, dx or dy)


# ---------------------------------------------------------------- importance


class _Recorder:
    """Stands in for a linear layer and keeps its inputs and outputs."""

    def __init__(self, layer):
        self.layer = layer
        self.inputs, self.outputs = [], []

    def _record(self, x, y):
        self.inputs.append(np.asarray(x).reshape(-1, x.shape[-1]))
        self.outputs.append(np.asarray(y).reshape(-1, y.shape[-1]))
        return y

    def forward(self, x):
        return self._record(x, self.layer.infer(x))

    infer = forward
    __call__ = forward


@dataclass
class ImportanceReport:
    scores: dict[str, float]
    degraded: list[str] = field(default_factory=list)
    samples: int = 0

    def vector(self, names) -> np.ndarray:
        return np.array([self.scores[n] for n in names])


class CaptureError(RuntimeError):
    pass


def probe_batch(model, data=None, seed: int = 0, n: int = PROBE_SAMPLES) -> np.ndarray:
    """``n`` probe inputs: sampled training rows when ``data`` is given, random otherwise."""
    rng = np.random.default_rng(seed)
    if data is not None:
        idx = rng.choice(len(data.x_train), size=n, replace=len(data.x_train) < n)
        return data.x_train[idx]
    desc = model.descriptor
    if getattr(desc, "kind", None) == "transformer":
        return rng.integers(0, desc.vocab, size=(n, desc.context))
    return rng.normal(size=(n, desc.sizes[0]))


def importance(model, probe) -> ImportanceReport:
    """``h = 1 - weighted PWCCA mean`` between each designated layer's input and output.

    Every designated layer must have produced activations; missing captures
    raise :class:`CaptureError` naming the layers.
    """
    recorders = {}
    for name in model.designated:
        layer = model.linears[name]
        if not isinstance(layer, (DenseLinear, BooleanLinear)):
            raise CaptureError(f"layer {name!r} cannot be probed")
        recorders[name] = _Recorder(layer)
    saved = dict(model.linears)
    try:
        model.linears.update(recorders)
        model.forward(probe, cache=False)
    finally:
        model.linears.clear()
        model.linears.update(saved)
    missing = [n for n, r in recorders.items() if not r.inputs]
    if missing:
        raise CaptureError(f"no activations captured for {missing}")
    scores, degraded = {}, []
    for name, rec in recorders.items():
        res = pwcca(np.concatenate(rec.inputs), np.concatenate(rec.outputs))
        scores[name] = float(np.clip(1.0 - res.weighted_mean, 0.0, 1.0))
        if res.degraded:
            degraded.append(name)
    return ImportanceReport(scores, degraded, int(np.shape(probe)[0]))


# ---------------------------------------------------------------- allocation


def size_penalty(p) -> np.ndarray:
    """``(1/p) ln(1/p)``; zero at ``p = 1``."""
    p = np.asarray(p, dtype=np.float64)
    return np.where(p == 1.0, 0.0, -np.log(p) / p)


@dataclass
class AllocationProblem:
    """Residual table ``errors`` (N_W, K_max), importance, size ratios and budget."""

    errors: np.ndarray
    importance: np.ndarray
    sizes: np.ndarray
    budget: float
    k_max: int
    names: list[str] | None = None

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=np.float64)
        self.importance = np.asarray(self.importance, dtype=np.float64)
        self.sizes = np.asarray(self.sizes, dtype=np.float64)
        nw = self.importance.shape[0]
        if self.errors.shape != (nw, self.k_max):
            raise ValueError(f"error table must be ({nw}, {self.k_max}), got {self.errors.shape}")
        if self.sizes.shape != (nw,):
            raise ValueError("size ratios must have one entry per weight")
        if np.any(self.sizes <= 0) or abs(self.sizes.sum() - 1.0) > 1e-9:
            raise ValueError("size ratios must be positive and sum to 1")
        if np.any(self.importance < 0):
            raise ValueError("importance scores must be nonnegative")
        if np.any(np.diff(self.errors, axis=1) > 1e-9 * (1.0 + np.abs(self.errors).max(initial=0.0))):
            raise ValueError("each row of the error table must be non-increasing in k")
        if not self.budget >= 1:
            raise ValueError(f"budget {self.budget} is infeasible; it must be at least 1")
        if self.k_max < self.budget:
            raise ValueError("k_max must be at least the budget")
        if self.names is not None and len(self.names) != nw:
            raise ValueError("one name per weight required")

    @property
    def n_weights(self) -> int:
        return self.importance.shape[0]

    @classmethod
    def from_sizes(cls, errors, importance, sizes, budget, k_max, names=None):
        sizes = np.asarray(sizes, dtype=np.float64)
        return cls(errors, importance, sizes / sizes.sum(), budget, k_max, names)

    def cost_table(self) -> np.ndarray:
        return (size_penalty(self.sizes) * self.importance)[:, None] * self.errors


@dataclass
class Allocation:
    k: np.ndarray
    achieved_ratio: float
    energy: float

    def counts(self, names) -> dict[str, int]:
        return {n: int(k) for n, k in zip(names, self.k)}


def expansion_ratio(k, p) -> float:
    k = np.asarray(k)
    p = np.asarray(p, dtype=np.float64)
    if k.shape != p.shape:
        raise ValueError("k and p lengths differ")
    return math.fsum(k * p)


def energy(k, problem: AllocationProblem) -> float:
    k = np.asarray(k, dtype=np.int64)
    if k.shape != (problem.n_weights,) or np.any(k < 1) or np.any(k > problem.k_max):
        raise ValueError(f"kernel counts {k.tolist()} out of bounds [1, {problem.k_max}]")
    cost = problem.cost_table()
    return float(np.sum(cost[np.arange(problem.n_weights), k - 1]))


def _result(k, problem) -> Allocation:
    return Allocation(k, expansion_ratio(k, problem.sizes), energy(k, problem))


def allocate_greedy(problem: AllocationProblem) -> Allocation:
    """Grow kernel counts one at a time, largest cost reduction first.

    Ties in gain go to the lowest weight index. A candidate whose increment
    would break the budget is dropped for good. The greedy path can end
    slightly worse than the uniform allocation ``floor(T)`` on a few
    instances; when that allocation is feasible and cheaper it is returned
    instead.
    """
    cost = problem.cost_table()
    nw = problem.n_weights
    k = np.ones(nw, dtype=np.int64)
    feasible = k < problem.k_max
    while feasible.any():
        cand = np.flatnonzero(feasible)
        gains = cost[cand, k[cand] - 1] - cost[cand, k[cand]]
        order = cand[np.argsort(-gains, kind="stable")]
        for l in order:
            trial = k.copy()
            trial[l] += 1
            if expansion_ratio(trial, problem.sizes) <= problem.budget + RATIO_TOL:
                k[l] += 1
                break
            feasible[l] = False
        feasible &= k < problem.k_max
    best = _result(k, problem)
    uniform = np.full(nw, min(int(math.floor(problem.budget)), problem.k_max), dtype=np.int64)
    if expansion_ratio(uniform, problem.sizes) <= problem.budget + RATIO_TOL:
        alt = _result(uniform, problem)
        if alt.energy < best.energy:
            return alt
    return best


def allocate_bruteforce(problem: AllocationProblem) -> Allocation:
    """Exact minimizer by enumeration; ties go to the lexicographically smallest ``k``."""
    points = problem.k_max**problem.n_weights
    if points > BRUTEFORCE_LIMIT:
        raise ValueError(f"search space of {points} points exceeds the limit of {BRUTEFORCE_LIMIT}")
    cost = problem.cost_table()
    best, best_e = None, math.inf
    rows = np.arange(problem.n_weights)
    for combo in itertools.product(range(1, problem.k_max + 1), repeat=problem.n_weights):
        k = np.array(combo)
        if expansion_ratio(k, problem.sizes) > problem.budget + RATIO_TOL:
            continue
        e = float(np.sum(cost[rows, k - 1]))
        if e < best_e:
            best, best_e = k, e
    return _result(best, problem)


def format_manifest(names, alloc: Allocation) -> str:
    """Text manifest: one ``name count`` line per weight, then ratio and energy."""
    lines = [f"{n} {int(k)}" for n, k in zip(names, alloc.k)]
    lines.append(f"# achieved_ratio {alloc.achieved_ratio!r}")
    lines.append(f"# energy {alloc.energy!r}")
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> tuple[dict[str, int], float, float]:
    counts, ratio, en = {}, math.nan, math.nan
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition(" ")
            if key == "achieved_ratio":
                ratio = float(val)
            elif key == "energy":
                en = float(val)
            continue
        name, _, count = line.rpartition(" ")
        counts[name] = int(count)
    return counts, ratio, en
