import numpy as np
import pytest

from lodet import checkpoint
from lodet.nn import MLP, Linear
from lodet.optim import AdamW
from lodet.tensor import (Parameter, Tensor, backward, bmm, concat, cross_entropy, grad_check,
                          log_softmax, matmul, maximum, minimum, relu, sigmoid, smooth_l1, softmax)
import lodet.tensor as T


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal(matmul(a, b).data, [[1, 2], [3, 4]])


def test_matmul_hand_product():
    assert matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_shape_mismatch_names_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_quadratic_gradient():
    w = Parameter([1.0, 2.0, 3.0], "w")
    backward((w * w).sum())
    np.testing.assert_array_equal(w.grad, [2, 4, 6])


def test_frozen_parameter_gets_no_grad():
    w = Parameter([1.0, 2.0], "w")
    frozen = Parameter([3.0, 4.0], "f", trainable=False)
    backward((w * frozen).sum())
    assert frozen.grad is None
    np.testing.assert_array_equal(w.grad, [3, 4])


def test_backward_needs_scalar():
    w = Parameter([1.0, 2.0])
    with pytest.raises(ValueError, match="scalar"):
        backward(w * 2.0)


def test_grads_accumulate_over_calls():
    w = Parameter([1.0])
    backward((w * 3.0).sum())
    backward((w * 3.0).sum())
    assert w.grad.tolist() == [6.0]


def _mlp(seed):
    rng = np.random.default_rng(seed)
    net = MLP([5, 7, 3], rng)
    net.assign_names()
    x = rng.normal(size=(4, 5))
    y = rng.normal(size=(4, 3))
    return net, x, y


def test_grad_check_quadratic_is_exact():
    w = Parameter(np.random.default_rng(0).normal(size=6))
    assert grad_check(lambda: (w * w).sum(), [w]) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_grad_check_mlp(seed):
    net, x, y = _mlp(seed)
    err = grad_check(lambda: ((net(Tensor(x)) - y) * (net(Tensor(x)) - y)).mean(), net.parameters())
    assert err < 1e-3


def test_grad_check_restores_buffers():
    net, x, y = _mlp(0)
    before = {n: p.data.copy() for n, p in net.named_parameters()}
    grad_check(lambda: net(Tensor(x)).sum(), net.parameters())
    for n, p in net.named_parameters():
        assert p.data.dtype == np.float32
        np.testing.assert_array_equal(p.data, before[n])


def test_grad_check_detects_corrupted_rule(monkeypatch):
    net, x, y = _mlp(1)

    def bad_relu(v):
        v = T.as_tensor(v)
        mask = v.data > 0
        return T._result(v.data * mask, (v,), lambda g: (g * mask * 0.5,), "relu")

    monkeypatch.setattr("lodet.nn.relu", bad_relu)
    assert grad_check(lambda: (net(Tensor(x)) ** 1 if False else net(Tensor(x))).sum(),
                      net.parameters()) > 1e-1


def test_grad_check_rejects_nonpositive_eps():
    w = Parameter([1.0])
    with pytest.raises(ValueError):
        grad_check(lambda: (w * w).sum(), [w], eps=0.0)


def test_grad_check_non_finite():
    w = Parameter([-1.0])
    with pytest.raises(FloatingPointError):
        grad_check(lambda: T.log(w).sum(), [w])


@pytest.mark.parametrize("build", [
    lambda p, c: softmax(p @ c, axis=1)[:, 0].sum(),
    lambda p, c: log_softmax(p @ c, axis=1).mean(),
    lambda p, c: sigmoid(p @ c).sum(),
    lambda p, c: smooth_l1(p @ c - 0.3, beta=0.5).sum(),
    lambda p, c: cross_entropy(p @ c, [0, 2, 1], [1.0, 0.1, 0.1]),
    lambda p, c: (maximum(p, 0.1) * minimum(p, 0.4)).sum(),
    lambda p, c: (concat([p, p * 2.0], axis=1) @ concat([c, c], axis=0)).sum(),
    lambda p, c: bmm(p.reshape(1, 3, 4), c.reshape(1, 4, 3)).sum(),
    lambda p, c: (p / (relu(p) + 1.0)).sum() + (p.T @ (p @ c)).mean(),
    lambda p, c: p[np.array([0, 0, 2]), 1:3].sum(),
])
def test_op_gradients(build):
    rng = np.random.default_rng(3)
    p = Parameter(rng.normal(size=(3, 4)))
    c = Tensor(rng.normal(size=(4, 3)))
    assert grad_check(lambda: build(p, c), [p]) < 1e-3


def test_broadcast_add_gradient():
    b = Parameter(np.zeros(3))
    x = Tensor(np.ones((4, 3)))
    backward((x + b).sum())
    np.testing.assert_array_equal(b.grad, [4, 4, 4])


def test_random_compositions_norm_bounded():
    rng = np.random.default_rng(11)
    for _ in range(20):
        a = Parameter(rng.normal(size=(3, 3)))
        a.data *= np.float32(min(1.0, 10.0 / np.linalg.norm(a.data)))
        b = Tensor(rng.normal(size=(3, 3)))
        f = lambda: (sigmoid(a @ b) * relu(a + 0.5) - softmax(a, axis=0)).sum()
        assert grad_check(f, [a]) < 1e-3


def test_debug_flag_rejects_non_finite(monkeypatch):
    monkeypatch.setattr(T, "DEBUG", True)
    with pytest.raises(T.NumericError):
        T.log(Tensor([0.0])) * 1.0


def test_determinism_bitwise():
    def run():
        net, x, _ = _mlp(7)
        return net(Tensor(x)).data.copy()
    np.testing.assert_array_equal(run(), run())


# -- optimizer -------------------------------------------------------------------

def test_adamw_first_step_hand_value():
    w = Parameter([1.0])
    w.grad = np.array([1.0], dtype=np.float32)
    AdamW([w], lr=0.1, betas=(0.9, 0.999), weight_decay=0.0).step()
    assert w.data[0] == pytest.approx(0.9, abs=1e-6)


def test_adamw_zero_lr_is_noop():
    w = Parameter([1.0, -2.0])
    before = w.data.copy()
    opt = AdamW([w], lr=0.0)
    for _ in range(3):
        w.grad = np.array([0.5, 0.5], dtype=np.float32)
        opt.step()
    np.testing.assert_array_equal(w.data, before)


def test_adamw_skips_frozen_with_stale_grad():
    w = Parameter([1.0])
    f = Parameter([5.0])
    opt = AdamW([w, f], lr=0.1)
    f.trainable = False
    f.grad = np.array([3.0], dtype=np.float32)  # stale buffer
    w.grad = np.array([1.0], dtype=np.float32)
    opt.step()
    assert f.data.tolist() == [5.0]
    assert w.data[0] != 1.0


def test_adamw_requires_grads():
    w = Parameter([1.0])
    with pytest.raises(RuntimeError):
        AdamW([w]).step()


def test_adamw_state_persists():
    w = Parameter([1.0])
    opt = AdamW([w], lr=0.1, weight_decay=0.0)
    for _ in range(2):
        w.grad = np.array([1.0], dtype=np.float32)
        opt.step()
    assert opt.t == 2
    # constant gradient: bias-corrected moments stay at 1 -> two steps of 0.1
    assert w.data[0] == pytest.approx(0.8, abs=1e-6)


def test_freeze_isolation_over_train_steps():
    rng = np.random.default_rng(0)
    net = MLP([4, 8, 2], rng)
    net.assign_names()
    net.layers[0].weight.trainable = False
    net.layers[0].bias.trainable = False
    frozen = {n: p.data.copy() for n, p in net.named_parameters() if not p.trainable}
    opt = AdamW(net.parameters(), lr=1e-2)
    x = Tensor(rng.normal(size=(6, 4)))
    for _ in range(5):
        opt.zero_grad()
        backward((net(x) * net(x)).mean())
        opt.step()
    for n, p in net.named_parameters():
        if n in frozen:
            assert p.data.tobytes() == frozen[n].tobytes()


# -- checkpoint container ---------------------------------------------------------

def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a.weight": rng.normal(size=(3, 5)).astype(np.float32),
               "scalar": np.array(1.5, dtype=np.float32),
               "ünïcode.bias": np.arange(4, dtype=np.float32),
               "empty": np.zeros((0, 3), dtype=np.float32)}
    checkpoint.save(tmp_path / "x.ldck", tensors, {"rank": 4.0, "selector": "head.*"})
    got, meta = checkpoint.load(tmp_path / "x.ldck")
    assert list(got) == list(tensors)
    for k in tensors:
        assert got[k].shape == tensors[k].shape
        assert got[k].tobytes() == tensors[k].tobytes()
    assert meta == {"rank": 4.0, "selector": "head.*"}


def test_checkpoint_layout():
    blob = checkpoint.dumps({"w": np.array([[1.0, 2.0]], dtype=np.float32)})
    assert blob[:4] == b"LDCK"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:12], "little") == 1
    assert int.from_bytes(blob[12:16], "little") == 1 and blob[16:17] == b"w"
    assert int.from_bytes(blob[17:21], "little") == 2
    assert int.from_bytes(blob[21:29], "little") == 1
    assert int.from_bytes(blob[29:37], "little") == 2
    assert np.frombuffer(blob[37:], "<f4").tolist() == [1.0, 2.0]


def test_checkpoint_rejects_bad_input():
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(b"NOPE\x01\x00\x00\x00")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.dumps({"w": np.array([np.nan], dtype=np.float32)})
    blob = checkpoint.dumps({"w": np.ones(8, dtype=np.float32)})
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(blob[:-4])


def test_linear_layout():
    lin = Linear(3, 2, np.random.default_rng(0))
    assert lin.weight.shape == (2, 3)
    x = np.ones((1, 3), dtype=np.float32)
    np.testing.assert_allclose(lin(Tensor(x)).data, x @ lin.weight.data.T + lin.bias.data)
