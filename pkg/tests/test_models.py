import numpy as np
import pytest

from boolkernel.datasets import CHAR_VOCAB, decode, encode, load_corpus, make_data
from boolkernel.layers import BooleanLinear, DenseLinear
from boolkernel.models import (
    MLPDescriptor,
    TransformerDescriptor,
    booleanize,
    build_teacher,
    cross_entropy,
    descriptor_from_dict,
    descriptor_to_dict,
    transformer_param_count,
)
from boolkernel.training import evaluate, train_teacher

TINY = TransformerDescriptor(n_blocks=2, d_model=8, n_heads=2, vocab=96, context=6, mlp_ratio=2)


def params_equal(a, b):
    pa, pb = a.named_parameters(), b.named_parameters()
    return pa.keys() == pb.keys() and all(np.array_equal(pa[k], pb[k]) for k in pa)


# ------------------------------------------------------------- construction


def test_teacher_is_deterministic():
    assert params_equal(build_teacher(TransformerDescriptor(), 3), build_teacher(TransformerDescriptor(), 3))
    assert not params_equal(build_teacher(TINY, 3), build_teacher(TINY, 4))


def test_mlp_parameter_count():
    assert build_teacher(MLPDescriptor((8, 16, 4)), 0).num_parameters() == 212


def test_transformer_parameter_count():
    desc = TransformerDescriptor()
    # per block: 2 norms, 4 square projections, two feed-forward maps; plus embeddings, final norm, head
    d, v, c, h = 64, 96, 64, 256
    oracle = v * d + c * d + 2 * (4 * d + 4 * (d * d + d) + d * h + h + h * d + d) + 2 * d + v * d + v
    assert transformer_param_count(desc) == oracle == 116576
    assert build_teacher(desc, 0).num_parameters() == oracle
    assert oracle <= 500_000


def test_descriptor_validation_and_roundtrip():
    with pytest.raises(ValueError):
        MLPDescriptor((4,))
    with pytest.raises(ValueError):
        TransformerDescriptor(d_model=10, n_heads=3)
    for desc in (MLPDescriptor((3, 5, 2), "classification"), TINY):
        assert descriptor_from_dict(descriptor_to_dict(desc)) == desc
    with pytest.raises(ValueError):
        descriptor_from_dict({"kind": "rnn"})


# ------------------------------------------------------------- gradients


def _fd_check(model, loss_fn, names, rng, n_checks=6, rel=1e-5):
    loss_fn(model, backward=True)
    grads = model.named_gradients()
    params = model.named_parameters()
    for name in names:
        p = params[name]
        for _ in range(n_checks):
            idx = tuple(rng.integers(0, s) for s in p.shape)
            old = p[idx]
            h = 1e-6
            p[idx] = old + h
            up = loss_fn(model)
            p[idx] = old - h
            down = loss_fn(model)
            p[idx] = old
            num = (up - down) / (2 * h)
            assert grads[name][idx] == pytest.approx(num, rel=rel, abs=1e-8), name


def test_transformer_backward_matches_finite_differences(rng):
    model = build_teacher(TINY, 1)
    for p in model.named_parameters().values():
        p += rng.normal(scale=0.3, size=p.shape)
    tokens = rng.integers(0, 96, size=(2, 6))
    targets = rng.integers(0, 96, size=(2, 6))
    hid_w = [rng.normal(size=(2, 6, 8)) for _ in range(2)]

    def loss_fn(m, backward=False):
        logits, hidden = m.forward(tokens)
        loss, dlogits = cross_entropy(logits, targets)
        loss += sum(float(np.sum(w * h)) for w, h in zip(hid_w, hidden))
        if backward:
            m.backward(dlogits, hid_w)
        return loss

    _fd_check(model, loss_fn, list(model.named_parameters()), rng)


def test_boolean_transformer_scale_gradients(rng):
    model = booleanize(build_teacher(TINY, 2), 2)
    tokens = rng.integers(0, 96, size=(2, 6))
    targets = rng.integers(0, 96, size=(2, 6))

    def loss_fn(m, backward=False):
        logits, _ = m.forward(tokens)
        loss, dlogits = cross_entropy(logits, targets)
        if backward:
            m.backward(dlogits)
        return loss

    names = [n for n in model.named_parameters() if ".s_out." in n or ".s_in." in n][:8]
    _fd_check(model, loss_fn, names + ["tok_emb", "blocks.1.ln2.gamma"], rng)


@pytest.mark.parametrize("task", ["regression", "classification"])
def test_mlp_backward_matches_finite_differences(task, rng):
    model = build_teacher(MLPDescriptor((5, 7, 6, 3), task), 0)
    x = rng.normal(size=(4, 5))
    y = rng.normal(size=(4, 3)) if task == "regression" else rng.integers(0, 3, size=4)

    def loss_fn(m, backward=False):
        out, _ = m.forward(x)
        loss, dout = m.loss(out, y)
        if backward:
            m.backward(dout)
        return loss

    _fd_check(model, loss_fn, list(model.named_parameters()), rng)


# ------------------------------------------------------------- students


def test_booleanize_structure(rng):
    teacher = build_teacher(MLPDescriptor((8, 16, 4)), 0)
    student = booleanize(teacher, 1)
    assert all(isinstance(l, BooleanLinear) and l.num_kernels == 1 for l in student.linears.values())
    assert all(isinstance(l, DenseLinear) for l in teacher.linears.values())
    lm = build_teacher(TINY, 0)
    s = booleanize(lm, 3)
    assert set(s.boolean_layers()) == set(lm.designated)
    assert len(lm.designated) == 6 * TINY.n_blocks
    assert isinstance(s.linears["head"], DenseLinear)
    for name, arr in lm.params.items():
        assert np.array_equal(arr, s.params[name])
    for name in lm.designated:
        np.testing.assert_array_equal(s.linears[name].bias, lm.linears[name].bias)
        assert s.linears[name].trainable == {2}


def test_booleanize_plan_mismatch():
    lm = build_teacher(TINY, 0)
    with pytest.raises(ValueError):
        booleanize(lm, {"blocks.0.attn.q": 2})
    plan = {n: 1 + i % 3 for i, n in enumerate(lm.designated)}
    s = booleanize(lm, plan)
    assert {n: l.num_kernels for n, l in s.boolean_layers().items()} == plan


def test_large_k_student_matches_teacher_loss():
    data = make_data("regression", 0, 256)
    teacher = build_teacher(MLPDescriptor((8, 16, 4)), 0)
    train_teacher(teacher, data, 5, lr=1e-2)
    t = evaluate(teacher, data).loss
    s = evaluate(booleanize(teacher, 24), data).loss
    assert abs(s - t) <= 0.01 * t


def test_desk_student_k8_within_two_percent(desk_teacher, char_data):
    t = evaluate(desk_teacher, char_data).perplexity
    s = evaluate(booleanize(desk_teacher, 8), char_data).perplexity
    assert abs(s - t) / t <= 0.02


# ------------------------------------------------------------- training and evaluation


def test_zero_epochs_changes_nothing():
    data = make_data("regression", 0, 64)
    model = build_teacher(MLPDescriptor((8, 16, 4)), 0)
    ref = model.clone()
    train_teacher(model, data, 0)
    assert params_equal(model, ref)


def test_regression_reaches_noise_floor():
    data = make_data("regression", 5, 2000, noise=0.1)
    model = build_teacher(MLPDescriptor((8, 4)), 0)
    hist = train_teacher(model, data, 30, lr=1e-2, batch_size=32)
    # closed-form least squares on the same split is the oracle floor
    xa = np.hstack([data.x_train, np.ones((len(data.x_train), 1))])
    coef, *_ = np.linalg.lstsq(xa, data.y_train, rcond=None)
    floor = float(np.mean((xa @ coef - data.y_train) ** 2))
    final = evaluate(model, data, split="train").loss
    assert hist.epoch_losses[-1] < hist.initial_loss
    assert final <= floor * 1.05
    assert floor == pytest.approx(0.01, rel=0.15)


def test_char_lm_teacher_beats_uniform(desk_teacher, char_data):
    res = evaluate(desk_teacher, char_data)
    assert 1.0 <= res.perplexity < len(CHAR_VOCAB)
    assert res.tokens == char_data.x_val.size


def test_uniform_model_has_vocab_perplexity():
    data = make_data("char_lm", 0, 2000, context=6)
    model = build_teacher(TINY, 0)
    model.linears["head"].weight[:] = 0.0
    model.linears["head"].bias[:] = 0.0
    assert evaluate(model, data).perplexity == pytest.approx(96, rel=1e-12)


def test_evaluate_rejects_empty():
    data = make_data("regression", 0, 16)
    data.x_val = data.x_val[:0]
    with pytest.raises(ValueError):
        evaluate(build_teacher(MLPDescriptor((8, 4)), 0), data)


# ------------------------------------------------------------- data


@pytest.mark.parametrize("kind", ["regression", "classification", "char_lm"])
def test_make_data_deterministic(kind):
    a, b = make_data(kind, 3, 3000), make_data(kind, 3, 3000)
    for field in ("x_train", "y_train", "x_val", "y_val"):
        assert np.array_equal(getattr(a, field), getattr(b, field))


def test_regression_recovers_matrix():
    data = make_data("regression", 2, 5000, noise=0.05)
    coef, *_ = np.linalg.lstsq(data.x_train, data.y_train, rcond=None)
    np.testing.assert_allclose(coef.T, data.meta["A"], atol=0.01)


def test_char_vocab_and_corpus():
    assert len(CHAR_VOCAB) <= 256
    text = load_corpus()
    assert 9000 <= len(text) <= 12000
    assert decode(encode(text)) == text
    data = make_data("char_lm", 0, 3000)
    assert data.x_train.max() < len(CHAR_VOCAB)
    np.testing.assert_array_equal(data.x_train[:, 1:], data.y_train[:, :-1])
    with pytest.raises(ValueError):
        make_data("char_lm", 0, 50)
    with pytest.raises(ValueError):
        make_data("images", 0, 10)
    with pytest.raises(ValueError):
        make_data("regression", 0, 0)
