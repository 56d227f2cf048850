"""Checks for MLP plumbing, the loss, checkpoint io, and the optimizer."""

import numpy as np
import pytest

from seqseg import autodiff as ad
from seqseg import nn


def test_mlp_spec_validation():
    with pytest.raises(ValueError):
        nn.MlpSpec((4,))
    with pytest.raises(ValueError):
        nn.MlpSpec((4, 0))
    with pytest.raises(ValueError):
        nn.MlpSpec((4, 2), final_activation="tanh")
    spec = nn.MlpSpec([4, 8, 2], final_activation="relu")
    assert (spec.in_width, spec.out_width, spec.num_layers) == (4, 2, 2)


def test_mlp_forward_hand_cases():
    store = nn.ParamStore()
    store.add("id.layer0.weight", ad.Tensor(np.eye(2), requires_grad=True))
    store.add("id.layer0.bias", ad.Tensor(np.zeros(2), requires_grad=True))
    out = nn.mlp_forward(nn.MlpSpec((2, 2)), store, "id", ad.Tensor([[3.0, 4.0]]))
    assert out.data.tolist() == [[3.0, 4.0]]

    store2 = nn.ParamStore()
    store2.add("aff.layer0.weight", ad.Tensor([[2.0]], requires_grad=True))
    store2.add("aff.layer0.bias", ad.Tensor([1.0], requires_grad=True))
    out2 = nn.mlp_forward(nn.MlpSpec((1, 1)), store2, "aff", ad.Tensor([3.0]))
    assert out2.data.tolist() == [7.0]

    with pytest.raises(ad.ShapeError):
        nn.mlp_forward(nn.MlpSpec((2, 2)), store, "id", ad.Tensor([[1.0, 2.0, 3.0]]))
    with pytest.raises(KeyError):
        nn.mlp_forward(nn.MlpSpec((2, 2)), nn.ParamStore(), "id", ad.Tensor([[1.0, 2.0]]))


def test_init_bounds_and_determinism():
    spec = nn.MlpSpec((5, 7, 3))
    s1, s2 = nn.ParamStore(), nn.ParamStore()
    nn.init_mlp_params(spec, s1, "m", np.random.default_rng(42))
    nn.init_mlp_params(spec, s2, "m", np.random.default_rng(42))
    for name in s1.names():
        assert np.array_equal(s1[name].data, s2[name].data)
    w0 = s1["m.layer0.weight"].data
    assert np.abs(w0).max() <= np.sqrt(6.0 / (5 + 7))
    assert np.all(s1["m.layer0.bias"].data == 0.0)
    assert s1.total_values() == 5 * 7 + 7 + 7 * 3 + 3


def test_mlp_full_gradient_check():
    spec = nn.MlpSpec((3, 6, 5, 2), final_activation="relu")
    store = nn.ParamStore()
    rng = np.random.default_rng(0)
    nn.init_mlp_params(spec, store, "net", rng)
    x = rng.standard_normal((4, 3))
    wsum = rng.standard_normal((4, 2))

    def loss_value():
        out = nn.mlp_forward(spec, store, "net", ad.Tensor(x))
        return float((out.data * wsum).sum())

    store.zero_grad()
    with ad.Tape() as tape:
        out = nn.mlp_forward(spec, store, "net", ad.Tensor(x))
        loss = ad.sum_all(ad.mul(out, ad.constant(wsum)))
    ad.backward(loss, tape)

    eps = 1e-5
    for name, p in store.items():
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_value()
            flat[i] = orig - eps
            fm = loss_value()
            flat[i] = orig
            fd = (fp - fm) / (2 * eps)
            assert abs(gflat[i] - fd) < 1e-5, f"{name}[{i}]: {gflat[i]} vs {fd}"


def test_cross_entropy_hand_values():
    loss = nn.cross_entropy(ad.Tensor([[0.0, 0.0]]), np.array([0]))
    assert abs(float(loss.data) - np.log(2.0)) < 1e-12
    loss2 = nn.cross_entropy(ad.Tensor([[100.0, 0.0]]), np.array([0]))
    assert float(loss2.data) < 1e-10
    with pytest.raises(ValueError):
        nn.cross_entropy(ad.Tensor([[0.0, 0.0]]), np.array([2]))


def test_cross_entropy_against_brute_force():
    rng = np.random.default_rng(4)
    logits = rng.standard_normal((4, 3))
    labels = rng.integers(0, 3, size=4)
    loss = nn.cross_entropy(ad.Tensor(logits), labels)
    # direct formula, no shared code with the op
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    want = float(np.mean([-np.log(p[i, labels[i]]) for i in range(4)]))
    assert abs(float(loss.data) - want) < 1e-10


def test_cross_entropy_ignore_and_empty():
    logits = ad.Tensor([[5.0, 0.0], [0.0, 5.0], [1.0, 1.0]])
    full = nn.cross_entropy(logits, np.array([0, 1, 0]), ignore_index=255)
    part = nn.cross_entropy(logits, np.array([0, 1, 255]), ignore_index=255)
    assert float(part.data) < float(full.data)

    t = ad.Tensor(np.zeros((2, 2)), requires_grad=True)
    with ad.Tape() as tape:
        empty = nn.cross_entropy(t, np.array([255, 255]), ignore_index=255)
    assert float(empty.data) == 0.0
    ad.backward(empty, tape)
    assert np.all(t.grad == 0.0)


def test_cross_entropy_gradient():
    rng = np.random.default_rng(8)
    logits = rng.standard_normal((5, 4))
    labels = np.array([0, 3, 255, 1, 2])
    t = ad.Tensor(logits, requires_grad=True)
    with ad.Tape() as tape:
        loss = nn.cross_entropy(t, labels, ignore_index=255)
    ad.backward(loss, tape)

    eps = 1e-6
    for i in range(5):
        for j in range(4):
            pert = logits.copy()
            pert[i, j] += eps
            fp = float(nn.cross_entropy(ad.Tensor(pert), labels, ignore_index=255).data)
            pert[i, j] -= 2 * eps
            fm = float(nn.cross_entropy(ad.Tensor(pert), labels, ignore_index=255).data)
            fd = (fp - fm) / (2 * eps)
            assert abs(t.grad[i, j] - fd) < 1e-8


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    store = nn.ParamStore()
    nn.init_mlp_params(nn.MlpSpec((3, 4, 2)), store, "a.b", rng)
    store.add("scalarish", ad.Tensor(rng.standard_normal(7), requires_grad=True))

    p1 = tmp_path / "one.ckpt"
    p2 = tmp_path / "two.ckpt"
    nn.save_checkpoint(store, p1)
    loaded = nn.load_checkpoint(p1)
    assert loaded.names() == store.names()
    for name in store.names():
        assert np.array_equal(loaded[name].data, store[name].data)
    nn.save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()  # byte-identical round trip

    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT!" + b"\x00" * 16)
    with pytest.raises(ValueError):
        nn.load_checkpoint(bad)
    trunc = tmp_path / "trunc.ckpt"
    trunc.write_bytes(p1.read_bytes()[:-5])
    with pytest.raises(ValueError):
        nn.load_checkpoint(trunc)


def test_adam_hand_step_and_zero_grad():
    store = nn.ParamStore()
    w = store.add("w", ad.Tensor(np.array([1.0]), requires_grad=True))
    opt = nn.Adam(store, lr=0.1)
    w.grad = np.array([1.0])
    opt.step()
    # first bias-corrected step moves by ~lr regardless of grad scale
    assert abs(float(w.data[0]) - (1.0 - 0.1)) < 1e-8

    store2 = nn.ParamStore()
    z = store2.add("z", ad.Tensor(np.array([2.0, -3.0]), requires_grad=True))
    opt2 = nn.Adam(store2, lr=0.1)
    z.grad = np.zeros(2)
    opt2.step()
    assert np.array_equal(z.data, np.array([2.0, -3.0]))

    opt2.zero_grad()
    with pytest.raises(ValueError):
        opt2.step()


def test_adam_minimizes_quadratic():
    store = nn.ParamStore()
    w = store.add("w", ad.Tensor(np.array(0.0), requires_grad=True))
    opt = nn.Adam(store, lr=0.1)
    for _ in range(100):
        opt.zero_grad()
        with ad.Tape() as tape:
            d = ad.sub(w, ad.constant(np.array(3.0)))
            loss = ad.mul(d, d)
        ad.backward(loss, tape)
        opt.step()
    assert abs(float(w.data) - 3.0) < 0.1
