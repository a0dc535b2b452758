"""On-disk checkpoint container.

A checkpoint is a directory holding ``manifest.json`` and one blob file per
tensor group:

``dense.bin``
    full-precision tensors of the model (embeddings, norms, dense weights, biases)
``scales.bin``
    ``s_out`` and ``s_in`` vectors of every Boolean kernel
``bits.bin``
    packed Boolean kernels, exactly the in-memory word layout of
    :class:`~boolkernel.tensor.BitMatrix`

Floating-point tensors are little-endian IEEE-754, 64-bit by default so that
a save/load roundtrip is bit-exact; ``precision="f4"`` writes 32-bit values.
The manifest lists every tensor with its group, byte offset, length, shape,
dtype and a 64-bit BLAKE2b checksum, plus a checksum for each whole blob.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .layers import BooleanLinear, DenseLinear
from .models import Model, build_teacher, descriptor_from_dict, descriptor_to_dict
from .svid import SvidKernel
from .tensor import WORD_DTYPE, BitMatrix

FORMAT = "boolkernel-checkpoint"
VERSION = 1
MANIFEST = "manifest.json"
GROUPS = ("dense", "scales", "bits")
_FLOAT = {"f4": "<f4", "f8": "<f8"}


class CheckpointError(ValueError):
    """Malformed or corrupted checkpoint."""


def checksum(data: bytes) -> str:
    return hashlib.blake2b(data, digest_size=8).hexdigest()


def _entries(model: Model):
    # (group, name, array) in a fixed order
    for name in sorted(model.params):
        yield "dense", name, model.params[name]
    for lname in sorted(model.linears):
        layer = model.linears[lname]
        if isinstance(layer, BooleanLinear):
            for k, kern in enumerate(layer.kernels):
                yield "bits", f"{lname}.bits.{k}", kern.bits
                yield "scales", f"{lname}.s_out.{k}", kern.s_out
                yield "scales", f"{lname}.s_in.{k}", kern.s_in
        else:
            yield "dense", f"{lname}.weight", layer.weight
        if layer.bias is not None:
            yield "dense", f"{lname}.bias", layer.bias


def save(model: Model, directory, precision: str = "f8") -> dict:
    """Write ``model`` to ``directory`` and return the manifest."""
    if precision not in _FLOAT:
        raise ValueError(f"precision must be one of {sorted(_FLOAT)}")
    fdtype = np.dtype(_FLOAT[precision])
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    buffers = {g: bytearray() for g in GROUPS}
    tensors = []
    for group, name, arr in _entries(model):
        if isinstance(arr, BitMatrix):
            payload = arr.to_bytes()
            entry = {"shape": [arr.rows, arr.cols], "dtype": "bits", "word_dtype": WORD_DTYPE.str}
        else:
            payload = np.ascontiguousarray(arr, dtype=fdtype).tobytes()
            entry = {"shape": list(np.shape(arr)), "dtype": fdtype.str}
        entry.update(name=name, group=group, offset=len(buffers[group]), nbytes=len(payload),
                     checksum=checksum(payload))
        buffers[group] += payload
        tensors.append(entry)
    layers = {}
    for lname, layer in sorted(model.linears.items()):
        if isinstance(layer, BooleanLinear):
            layers[lname] = {"kernels": layer.num_kernels, "trainable": sorted(layer.trainable),
                             "degenerate": [bool(k.degenerate) for k in layer.kernels]}
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "descriptor": descriptor_to_dict(model.descriptor),
        "kernel_counts": {n: v["kernels"] for n, v in layers.items()},
        "boolean_layers": layers,
        "blobs": {g: {"file": f"{g}.bin", "nbytes": len(b), "checksum": checksum(bytes(b))}
                  for g, b in buffers.items()},
        "tensors": tensors,
    }
    for g, b in buffers.items():
        (directory / f"{g}.bin").write_bytes(bytes(b))
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from None
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported format {manifest.get('format')!r} v{manifest.get('version')}")
    return manifest


def load(directory) -> Model:
    """Rebuild the model stored in ``directory``, verifying every checksum."""
    directory = Path(directory)
    manifest = read_manifest(directory)
    blobs = {}
    for g, info in manifest["blobs"].items():
        data = (directory / info["file"]).read_bytes()
        if len(data) != info["nbytes"] or checksum(data) != info["checksum"]:
            raise CheckpointError(f"blob {info['file']!r} fails its checksum")
        blobs[g] = data
    arrays = {}
    for t in manifest["tensors"]:
        raw = blobs[t["group"]][t["offset"] : t["offset"] + t["nbytes"]]
        if len(raw) != t["nbytes"] or checksum(raw) != t["checksum"]:
            raise CheckpointError(f"tensor {t['name']!r} fails its checksum")
        if t["dtype"] == "bits":
            arrays[t["name"]] = BitMatrix.from_bytes(*t["shape"], raw)
        else:
            arrays[t["name"]] = np.frombuffer(raw, dtype=t["dtype"]).astype(np.float64).reshape(t["shape"])

    def take(name):
        try:
            return arrays.pop(name)
        except KeyError:
            raise CheckpointError(f"tensor {name!r} missing from checkpoint") from None

    model = build_teacher(descriptor_from_dict(manifest["descriptor"]), seed=0)
    for name in list(model.params):
        model.params[name] = take(name)
    for lname, layer in list(model.linears.items()):
        has_bias = f"{lname}.bias" in arrays
        bias = take(f"{lname}.bias") if has_bias else None
        info = manifest["boolean_layers"].get(lname)
        if info is None:
            model.linears[lname] = DenseLinear(take(f"{lname}.weight"), bias)
            continue
        degenerate = info.get("degenerate", [False] * info["kernels"])
        kernels = [
            SvidKernel(take(f"{lname}.bits.{k}"), take(f"{lname}.s_out.{k}"), take(f"{lname}.s_in.{k}"),
                       degenerate=degenerate[k])
            for k in range(info["kernels"])
        ]
        model.linears[lname] = BooleanLinear(kernels, bias=bias, trainable=info["trainable"])
    if arrays:
        raise CheckpointError(f"unexpected tensors in checkpoint: {sorted(arrays)}")
    return model


def boolean_payload_bytes(directory) -> dict:
    """Byte sizes of the packed kernels and their scale vectors."""
    manifest = read_manifest(directory)
    return {"bits": manifest["blobs"]["bits"]["nbytes"], "scales": manifest["blobs"]["scales"]["nbytes"]}
