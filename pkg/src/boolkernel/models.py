"""Desk-scale teacher and student models with hand-written backward passes.

Two architectures are provided: a multilayer perceptron and a pre-norm
decoder-only transformer. Their designated linear layers can be swapped
for :class:`~boolkernel.layers.BooleanLinear` to obtain a student.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass

import numpy as np

from .layers import BooleanLinear, DenseLinear, linear_backward

_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class MLPDescriptor:
    sizes: tuple[int, ...]
    task: str = "regression"  # or "classification"
    kind: str = "mlp"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.sizes}")
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")


@dataclass(frozen=True)
class TransformerDescriptor:
    n_blocks: int = 2
    d_model: int = 64
    n_heads: int = 4
    vocab: int = 96
    context: int = 64
    mlp_ratio: int = 4
    kind: str = "transformer"

    def __post_init__(self):
        if min(self.n_blocks, self.d_model, self.n_heads, self.vocab, self.context, self.mlp_ratio) < 1:
            raise ValueError("transformer dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")


def descriptor_to_dict(desc) -> dict:
    d = asdict(desc)
    if "sizes" in d:
        d["sizes"] = list(d["sizes"])
    return d


def descriptor_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "mlp":
        return MLPDescriptor(**d)
    if kind == "transformer":
        return TransformerDescriptor(**d)
    raise ValueError(f"unknown model kind {kind!r}")


def transformer_param_count(desc: TransformerDescriptor) -> int:
    d, v, c, h = desc.d_model, desc.vocab, desc.context, desc.mlp_ratio * desc.d_model
    per_block = 2 * 2 * d + 4 * (d * d + d) + (d * h + h) + (h * d + d)
    return v * d + c * d + desc.n_blocks * per_block + 2 * d + d * v + v


# ---------------------------------------------------------------- primitives


def _layernorm_forward(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, (xhat, rstd, gamma)


def _layernorm_backward(dy, cache):
    xhat, rstd, gamma = cache
    lead = tuple(range(dy.ndim - 1))
    dgamma = np.sum(dy * xhat, axis=lead)
    dbeta = np.sum(dy, axis=lead)
    dxhat = dy * gamma
    dx = rstd * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, dgamma, dbeta


def _gelu_forward(x):
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    return 0.5 * x * (1.0 + t), (x, t)


def _gelu_backward(dy, cache):
    x, t = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def cross_entropy(logits, targets):
    """Mean token cross-entropy and its gradient with respect to the logits."""
    v = logits.shape[-1]
    flat = logits.reshape(-1, v)
    t = np.asarray(targets).reshape(-1)
    lp = log_softmax(flat)
    n = flat.shape[0]
    loss = -float(np.mean(lp[np.arange(n), t]))
    grad = np.exp(lp)
    grad[np.arange(n), t] -= 1.0
    return loss, (grad / n).reshape(logits.shape)


def mse(pred, target):
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# ---------------------------------------------------------------- base model


class Model:
    """Common bookkeeping: named parameters, gradients and linear layers."""

    descriptor = None

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.linears: dict[str, DenseLinear | BooleanLinear] = {}

    designated: tuple[str, ...] = ()

    def named_parameters(self) -> dict[str, np.ndarray]:
        out = dict(self.params)
        for lname, layer in self.linears.items():
            for pname, arr in layer.parameters().items():
                out[f"{lname}.{pname}"] = arr
        return out

    def named_gradients(self) -> dict[str, np.ndarray]:
        out = dict(self.grads)
        for lname, layer in self.linears.items():
            for pname, arr in layer.gradients().items():
                out[f"{lname}.{pname}"] = arr
        return out

    def boolean_layers(self) -> dict[str, BooleanLinear]:
        return {n: l for n, l in self.linears.items() if isinstance(l, BooleanLinear)}

    def num_parameters(self) -> int:
        """Full-precision parameter count (Boolean bits counted as one per weight)."""
        total = sum(a.size for a in self.named_parameters().values())
        for layer in self.boolean_layers().values():
            total += layer.num_kernels * layer.out_features * layer.in_features
        return total

    def clone(self):
        return copy.deepcopy(self)


class MLP(Model):
    """Perceptron with ReLU hidden activations. All linear layers are designated."""

    def __init__(self, desc: MLPDescriptor, rng: np.random.Generator):
        super().__init__()
        self.descriptor = desc
        for i, (n_in, n_out) in enumerate(zip(desc.sizes[:-1], desc.sizes[1:])):
            bound = 1.0 / math.sqrt(n_in)
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
            b = rng.uniform(-bound, bound, size=n_out)
            self.linears[f"layers.{i}"] = DenseLinear(w, b)
        self.designated = tuple(self.linears)
        self._masks = None

    def forward(self, x, cache: bool = True):
        h = np.asarray(x, dtype=np.float64)
        hidden, masks = [], []
        names = list(self.linears)
        for i, name in enumerate(names):
            layer = self.linears[name]
            h = layer.forward(h) if cache else layer.infer(h)
            if i < len(names) - 1:
                mask = h > 0
                h = h * mask
                masks.append(mask)
                hidden.append(h)
        if cache:
            self._masks = masks
        return h, hidden

    def backward(self, dout, dhidden=None):
        names = list(self.linears)
        g = dout
        for i in range(len(names) - 1, -1, -1):
            if i < len(names) - 1:
                if dhidden is not None and dhidden[i] is not None:
                    g = g + dhidden[i]
                g = g * self._masks[i]
            g = linear_backward(self.linears[names[i]], g)
        self._masks = None
        return g

    def loss(self, out, target):
        if self.descriptor.task == "classification":
            return cross_entropy(out, target)
        return mse(out, target)


class TransformerLM(Model):
    """Pre-norm decoder-only transformer over a byte-level vocabulary.

    Designated linear layers per block: attention ``q``, ``k``, ``v``,
    ``out`` and the feed-forward ``fc1``, ``fc2``. Embeddings, layer norms
    and the output head stay full precision.
    """

    def __init__(self, desc: TransformerDescriptor, rng: np.random.Generator, init_std: float = 0.02):
        super().__init__()
        self.descriptor = desc
        d, v, hid = desc.d_model, desc.vocab, desc.mlp_ratio * desc.d_model
        self.params["tok_emb"] = rng.normal(0.0, init_std, size=(v, d))
        self.params["pos_emb"] = rng.normal(0.0, init_std, size=(desc.context, d))
        designated = []
        proj_std = init_std / math.sqrt(2 * desc.n_blocks)
        for b in range(desc.n_blocks):
            pre = f"blocks.{b}"
            for ln in ("ln1", "ln2"):
                self.params[f"{pre}.{ln}.gamma"] = np.ones(d)
                self.params[f"{pre}.{ln}.beta"] = np.zeros(d)
            for proj in ("q", "k", "v"):
                self.linears[f"{pre}.attn.{proj}"] = DenseLinear(rng.normal(0, init_std, (d, d)), np.zeros(d))
            self.linears[f"{pre}.attn.out"] = DenseLinear(rng.normal(0, proj_std, (d, d)), np.zeros(d))
            self.linears[f"{pre}.mlp.fc1"] = DenseLinear(rng.normal(0, init_std, (hid, d)), np.zeros(hid))
            self.linears[f"{pre}.mlp.fc2"] = DenseLinear(rng.normal(0, proj_std, (d, hid)), np.zeros(d))
            designated += [f"{pre}.attn.{p}" for p in ("q", "k", "v", "out")]
            designated += [f"{pre}.mlp.fc1", f"{pre}.mlp.fc2"]
        self.params["ln_f.gamma"] = np.ones(d)
        self.params["ln_f.beta"] = np.zeros(d)
        self.linears["head"] = DenseLinear(rng.normal(0, init_std, (v, d)), np.zeros(v))
        self.designated = tuple(designated)
        self._cache = None

    def _lin(self, name, x, cache):
        layer = self.linears[name]
        return layer.forward(x) if cache else layer.infer(x)

    def _attention(self, pre, h, cache):
        desc = self.descriptor
        bsz, seq, d = h.shape
        nh, dh = desc.n_heads, d // desc.n_heads
        q = self._lin(f"{pre}.attn.q", h, cache).reshape(bsz, seq, nh, dh).transpose(0, 2, 1, 3)
        k = self._lin(f"{pre}.attn.k", h, cache).reshape(bsz, seq, nh, dh).transpose(0, 2, 1, 3)
        v = self._lin(f"{pre}.attn.v", h, cache).reshape(bsz, seq, nh, dh).transpose(0, 2, 1, 3)
        scale = 1.0 / math.sqrt(dh)
        scores = (q @ k.transpose(0, 1, 3, 2)) * scale
        causal = np.triu(np.ones((seq, seq), dtype=bool), k=1)
        scores = np.where(causal, -np.inf, scores)
        att = softmax(scores)
        o = (att @ v).transpose(0, 2, 1, 3).reshape(bsz, seq, d)
        out = self._lin(f"{pre}.attn.out", o, cache)
        return out, (q, k, v, att, scale)

    def _attention_backward(self, pre, dout, acache):
        q, k, v, att, scale = acache
        bsz, nh, seq, dh = q.shape
        do = linear_backward(self.linears[f"{pre}.attn.out"], dout)
        do = do.reshape(bsz, seq, nh, dh).transpose(0, 2, 1, 3)
        datt = do @ v.transpose(0, 1, 3, 2)
        dv = att.transpose(0, 1, 3, 2) @ do
        dscores = att * (datt - np.sum(datt * att, axis=-1, keepdims=True)) * scale
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q

        def merge(t):
            return t.transpose(0, 2, 1, 3).reshape(bsz, seq, nh * dh)

        dh_ = linear_backward(self.linears[f"{pre}.attn.q"], merge(dq))
        dh_ = dh_ + linear_backward(self.linears[f"{pre}.attn.k"], merge(dk))
        dh_ = dh_ + linear_backward(self.linears[f"{pre}.attn.v"], merge(dv))
        return dh_

    def forward(self, tokens, cache: bool = True):
        """Logits of shape ``(B, L, vocab)`` and the list of block outputs."""
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        seq = tokens.shape[1]
        if seq > self.descriptor.context:
            raise ValueError(f"sequence length {seq} exceeds context {self.descriptor.context}")
        p = self.params
        x = p["tok_emb"][tokens] + p["pos_emb"][:seq]
        hidden, caches = [], []
        for b in range(self.descriptor.n_blocks):
            pre = f"blocks.{b}"
            h1, ln1 = _layernorm_forward(x, p[f"{pre}.ln1.gamma"], p[f"{pre}.ln1.beta"])
            a, acache = self._attention(pre, h1, cache)
            x = x + a
            h2, ln2 = _layernorm_forward(x, p[f"{pre}.ln2.gamma"], p[f"{pre}.ln2.beta"])
            f1 = self._lin(f"{pre}.mlp.fc1", h2, cache)
            g, gcache = _gelu_forward(f1)
            x = x + self._lin(f"{pre}.mlp.fc2", g, cache)
            hidden.append(x)
            caches.append((ln1, acache, ln2, gcache))
        hf, lnf = _layernorm_forward(x, p["ln_f.gamma"], p["ln_f.beta"])
        logits = self._lin("head", hf, cache)
        if cache:
            self._cache = (tokens, caches, lnf)
        return logits, hidden

    def backward(self, dlogits, dhidden=None):
        if self._cache is None:
            raise RuntimeError("backward called without a preceding forward")
        tokens, caches, lnf = self._cache
        grads = {}
        dhf = linear_backward(self.linears["head"], dlogits)
        dx, grads["ln_f.gamma"], grads["ln_f.beta"] = _layernorm_backward(dhf, lnf)
        for b in range(self.descriptor.n_blocks - 1, -1, -1):
            pre = f"blocks.{b}"
            ln1, acache, ln2, gcache = caches[b]
            if dhidden is not None and dhidden[b] is not None:
                dx = dx + dhidden[b]
            dg = linear_backward(self.linears[f"{pre}.mlp.fc2"], dx)
            df1 = _gelu_backward(dg, gcache)
            dh2 = linear_backward(self.linears[f"{pre}.mlp.fc1"], df1)
            dln2, grads[f"{pre}.ln2.gamma"], grads[f"{pre}.ln2.beta"] = _layernorm_backward(dh2, ln2)
            dx = dx + dln2
            dh1 = self._attention_backward(pre, dx, acache)
            dln1, grads[f"{pre}.ln1.gamma"], grads[f"{pre}.ln1.beta"] = _layernorm_backward(dh1, ln1)
            dx = dx + dln1
        seq = tokens.shape[1]
        grads["pos_emb"] = np.zeros_like(self.params["pos_emb"])
        grads["pos_emb"][:seq] = dx.sum(axis=0)
        grads["tok_emb"] = np.zeros_like(self.params["tok_emb"])
        np.add.at(grads["tok_emb"], tokens.reshape(-1), dx.reshape(-1, dx.shape[-1]))
        self.grads = grads
        self._cache = None
        return dx

    def loss(self, logits, targets):
        return cross_entropy(logits, targets)


def build_teacher(descriptor, seed: int) -> Model:
    """Deterministically initialized model for a descriptor."""
    rng = np.random.default_rng(seed)
    if isinstance(descriptor, MLPDescriptor):
        return MLP(descriptor, rng)
    if isinstance(descriptor, TransformerDescriptor):
        return TransformerLM(descriptor, rng)
    raise ValueError(f"unsupported descriptor {descriptor!r}")


def booleanize(teacher: Model, kernel_plan, trainable="last", exact: bool = False) -> Model:
    """Student copy of ``teacher`` with every designated linear layer made Boolean.

    ``kernel_plan`` is either a uniform kernel count or a mapping from
    designated layer name to kernel count (for instance an allocation).
    """
    if isinstance(kernel_plan, int):
        plan = {name: kernel_plan for name in teacher.designated}
    else:
        plan = dict(getattr(kernel_plan, "counts", kernel_plan))
    missing = set(teacher.designated) - set(plan)
    extra = set(plan) - set(teacher.designated)
    if missing or extra:
        raise ValueError(
            f"kernel plan does not match the model: missing {sorted(missing)}, unknown {sorted(extra)}"
        )
    student = teacher.clone()
    for name in teacher.designated:
        dense = teacher.linears[name]
        if not isinstance(dense, DenseLinear):
            raise ValueError(f"layer {name!r} of the teacher is not full precision")
        student.linears[name] = BooleanLinear.from_dense(
            dense.weight, int(plan[name]), trainable=trainable, bias=dense.bias, exact=exact
        )
    return student
