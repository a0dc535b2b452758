"""Run configuration: a flat ``key = value`` text file with ``#`` comments."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # general
    seed: int = 0
    # model: "transformer" or "mlp"
    model: str = "transformer"
    n_blocks: int = 2
    d_model: int = 64
    n_heads: int = 4
    context: int = 64
    mlp_ratio: int = 4
    mlp_sizes: str = "8,16,4"
    # data: "char_lm", "regression" or "classification"
    data: str = "char_lm"
    # corpus characters (char_lm) or samples (synthetic)
    data_size: int = 10000
    batch_size: int = 8
    # teacher training
    teacher_epochs: int = 4
    teacher_lr: float = 3e-3
    # extraction and allocation
    kernels: int = 2
    k_max: int = 4
    # expansion budget; 0 means uniform ``kernels`` per layer
    budget: float = 0.0
    probe_samples: int = 128
    # divide each residual row by the weight's Frobenius norm before allocating
    normalize_errors: bool = False
    # which kernels receive flips: last, first, all, none
    trainable: str = "last"
    # distillation
    epochs: int = 3
    tau: float = 1.0
    gamma: float = 10.0
    divergence: str = "forward_kl"
    # "all", "none" or comma-separated block indices
    hidden_set: str = "all"
    fp_lr: float = 2e-5
    bool_lr: float = 5e-3
    warmup_fraction: float = 0.03
    weight_decay: float = 0.0
    flip_threshold: float = 1e-3
    # checkpoint float width: f8 (bit-exact) or f4
    precision: str = "f8"
    # paths; empty means the default location under --out
    teacher: str = ""
    student: str = ""
    checkpoint: str = ""
    allocation: str = ""
    residuals: str = ""
    metrics: str = ""
    # microbenchmark
    bench_sizes: str = "64,128,256"
    bench_repeats: int = 5

    def hidden_selection(self):
        if self.hidden_set in ("all", "none"):
            return self.hidden_set
        return [int(v) for v in self.hidden_set.split(",") if v.strip()]

    def int_list(self, key: str) -> list[int]:
        return [int(v) for v in str(getattr(self, key)).split(",") if v.strip()]


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(f: dataclasses.Field, raw: str):
    kind = f.type if isinstance(f.type, type) else {"int": int, "float": float, "bool": bool, "str": str}[f.type]
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{f.name}: cannot read {raw!r} as {kind.__name__}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _coerce(known[key], val)
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def render_config(cfg: RunConfig) -> str:
    out = []
    for f in fields(cfg):
        val = getattr(cfg, f.name)
        if isinstance(val, bool):
            val = "true" if val else "false"
        out.append(f"{f.name} = {val}")
    return "\n".join(out) + "\n"
