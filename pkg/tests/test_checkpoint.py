import json

import numpy as np
import pytest

from boolkernel import checkpoint
from boolkernel.checkpoint import CheckpointError, boolean_payload_bytes, load, read_manifest, save
from boolkernel.layers import BooleanLinear
from boolkernel.models import MLPDescriptor, TransformerDescriptor, booleanize, build_teacher
from boolkernel.svid import SvidKernel
from boolkernel.tensor import pack

SMALL = TransformerDescriptor(1, 16, 2, vocab=96, context=8, mlp_ratio=2)


def assert_models_identical(a, b):
    assert a.descriptor == b.descriptor
    pa, pb = a.named_parameters(), b.named_parameters()
    assert pa.keys() == pb.keys()
    for k in pa:
        assert pa[k].tobytes() == pb[k].tobytes(), k
    for name, la in a.linears.items():
        lb = b.linears[name]
        assert type(la) is type(lb)
        if isinstance(la, BooleanLinear):
            assert la.trainable == lb.trainable
            for ka, kb in zip(la.kernels, lb.kernels):
                assert ka.bits == kb.bits
                assert ka.bits.words.tobytes() == kb.bits.words.tobytes()
                assert ka.degenerate == kb.degenerate


@pytest.mark.parametrize("plan", [None, 1, 3])
def test_roundtrip_is_bit_exact(tmp_path, plan, rng):
    model = build_teacher(SMALL, 4)
    if plan is not None:
        model = booleanize(model, plan, trainable="all")
    save(model, tmp_path / "ck")
    back = load(tmp_path / "ck")
    assert_models_identical(model, back)
    tokens = rng.integers(0, 96, size=(2, 8))
    assert np.array_equal(model.forward(tokens, cache=False)[0], back.forward(tokens, cache=False)[0])


def test_resave_is_byte_identical(tmp_path):
    model = booleanize(build_teacher(SMALL, 0), 2)
    save(model, tmp_path / "a")
    save(load(tmp_path / "a"), tmp_path / "b")
    for f in ("manifest.json", "dense.bin", "scales.bin", "bits.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_packing_vector_survives_roundtrip(tmp_path):
    row = np.array([1, -1, 1, 1, -1, -1, -1, 1])
    teacher = build_teacher(MLPDescriptor((8, 1)), 0)
    student = booleanize(teacher, 1)
    kern = SvidKernel(pack(row[None, :]), np.ones(1), np.ones(8))
    student.linears["layers.0"] = BooleanLinear([kern], bias=np.zeros(1))
    save(student, tmp_path / "ck")
    manifest = read_manifest(tmp_path / "ck")
    bits = (tmp_path / "ck" / "bits.bin").read_bytes()
    entry = next(t for t in manifest["tensors"] if t["name"] == "layers.0.bits.0")
    assert bits[entry["offset"]] == 0x8D
    assert all(b == 0 for b in bits[entry["offset"] + 1 : entry["offset"] + entry["nbytes"]])
    back = load(tmp_path / "ck")
    np.testing.assert_array_equal(back.linears["layers.0"].kernels[0].bits.signs(), row[None, :])


def test_padding_bits_are_zero(tmp_path):
    model = booleanize(build_teacher(MLPDescriptor((5, 3)), 0), 2)
    save(model, tmp_path / "ck")
    back = load(tmp_path / "ck")
    for kern in back.linears["layers.0"].kernels:
        words = kern.bits.words
        valid = (1 << 5) - 1
        assert np.all(words[:, 0] & ~np.array(valid, dtype=words.dtype) == 0)


def test_manifest_contents(tmp_path):
    teacher = build_teacher(SMALL, 0)
    model = booleanize(teacher, {n: 1 + (i % 2) for i, n in enumerate(teacher.designated)})
    manifest = save(model, tmp_path / "ck")
    assert manifest == json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert manifest["format"] == checkpoint.FORMAT
    assert set(manifest["blobs"]) == {"dense", "scales", "bits"}
    assert manifest["kernel_counts"] == {n: l.num_kernels for n, l in model.boolean_layers().items()}
    for group in ("dense", "scales", "bits"):
        entries = sorted((t for t in manifest["tensors"] if t["group"] == group), key=lambda t: t["offset"])
        end = 0
        for t in entries:
            assert t["offset"] == end
            end += t["nbytes"]
        assert end == manifest["blobs"][group]["nbytes"]


@pytest.mark.parametrize("victim", ["dense.bin", "scales.bin", "bits.bin"])
def test_corruption_is_detected(tmp_path, victim):
    save(booleanize(build_teacher(SMALL, 0), 1), tmp_path / "ck")
    path = tmp_path / "ck" / victim
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="checksum"):
        load(tmp_path / "ck")


def test_truncated_and_foreign_manifests(tmp_path):
    save(build_teacher(MLPDescriptor((4, 2)), 0), tmp_path / "ck")
    (tmp_path / "ck" / "dense.bin").write_bytes(b"")
    with pytest.raises(CheckpointError):
        load(tmp_path / "ck")
    (tmp_path / "ck" / "manifest.json").write_text('{"format": "other", "version": 1}')
    with pytest.raises(CheckpointError, match="unsupported"):
        load(tmp_path / "ck")
    (tmp_path / "ck" / "manifest.json").write_text("{not json")
    with pytest.raises(CheckpointError):
        load(tmp_path / "ck")
    with pytest.raises(FileNotFoundError):
        load(tmp_path / "missing")


def test_single_precision_option(tmp_path):
    model = booleanize(build_teacher(SMALL, 0), 2)
    save(model, tmp_path / "f4", precision="f4")
    save(model, tmp_path / "f8")
    f4, f8 = boolean_payload_bytes(tmp_path / "f4"), boolean_payload_bytes(tmp_path / "f8")
    assert f4["bits"] == f8["bits"]
    assert 2 * f4["scales"] == f8["scales"]
    back = load(tmp_path / "f4")
    for name, arr in model.named_parameters().items():
        np.testing.assert_allclose(back.named_parameters()[name], arr, rtol=1e-6, atol=1e-7)
    with pytest.raises(ValueError):
        save(model, tmp_path / "bad", precision="f2")


@pytest.mark.parametrize("k", [1, 2, 4])
def test_boolean_payload_size(tmp_path, k):
    # word-aligned widths, so only the packing itself is measured
    teacher = build_teacher(TransformerDescriptor(1, 64, 2, context=8, mlp_ratio=2), 0)
    save(booleanize(teacher, k), tmp_path / "ck", precision="f4")
    sizes = boolean_payload_bytes(tmp_path / "ck")
    shapes = [teacher.linears[n].weight.shape for n in teacher.designated]
    bit_oracle = sum(k * m * n / 8 for m, n in shapes)
    scale_oracle = sum(k * (m + n) * 4 for m, n in shapes)
    assert abs(sizes["bits"] - bit_oracle) <= 0.01 * bit_oracle
    assert sizes["scales"] == scale_oracle


def test_narrow_rows_pay_word_padding(tmp_path):
    teacher = build_teacher(SMALL, 0)
    save(booleanize(teacher, 1), tmp_path / "ck")
    shapes = [teacher.linears[n].weight.shape for n in teacher.designated]
    padded = sum(m * -(-n // 64) * 8 for m, n in shapes)
    assert boolean_payload_bytes(tmp_path / "ck")["bits"] == padded
