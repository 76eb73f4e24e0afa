import numpy as np
import pytest

from crossguard.autodiff import Tensor, concat, layer_norm, scaled_dot_attention
from crossguard.layers import (
    MLP,
    Affine,
    LayerNorm,
    Module,
    MultiHeadAttention,
    sinusoidal_positions,
)
from crossguard.checkpoint import load_module, save_module
from crossguard.optim import Adam
from fdcheck import check_gradients, rel_error

SEEDS = range(20)


def randn(rng, *shape):
    return rng.normal(size=shape)


# -- basic op gradients, 20 seeds each -------------------------------------------


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_arithmetic(seed):
    rng = np.random.default_rng(seed)
    a, b = randn(rng, 3, 4), randn(rng, 3, 4)
    check_gradients(lambda x, y: ((x * y + x / (y * y + 2.0) - y) ** 2).sum(), [a, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_broadcast_add_mul(seed):
    rng = np.random.default_rng(seed)
    a, b = randn(rng, 2, 3, 4), randn(rng, 4)
    check_gradients(lambda x, y: ((x + y) * (y * 0.5 + 1.0)).sum(), [a, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_matmul_batched(seed):
    rng = np.random.default_rng(seed)
    a, b = randn(rng, 2, 3, 4), randn(rng, 4, 5)
    check_gradients(lambda x, y: ((x @ y) ** 2).sum(), [a, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_reshape_transpose_slice(seed):
    rng = np.random.default_rng(seed)
    a = randn(rng, 4, 6)

    def f(x):
        y = x.reshape(2, 2, 6).transpose(1, 0, 2)
        return (y[0] * y[1]).sum() + y[:, 1, 2:4].sum()

    check_gradients(f, [a])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_reductions(seed):
    rng = np.random.default_rng(seed)
    a = randn(rng, 3, 5)
    check_gradients(lambda x: (x.mean(axis=1) * x.sum(axis=0).mean()).sum(), [a])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_elementwise_nonlinearities(seed):
    rng = np.random.default_rng(seed)
    a = randn(rng, 3, 4)
    a = np.where(np.abs(a) < 0.1, a + 0.3, a)  # keep clear of the relu kink

    def f(x):
        return (
            x.relu().sum()
            + x.tanh().sum()
            + x.sigmoid().sum()
            + x.softplus().sum()
            + (x * 0.1).exp().sum()
            + (x * x + 1.0).log().sum()
        )

    check_gradients(f, [a])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_softmax(seed):
    rng = np.random.default_rng(seed)
    a = randn(rng, 4, 6)
    w = randn(rng, 4, 6)
    check_gradients(lambda x: (x.softmax(-1) * w).sum(), [a])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_layer_norm(seed):
    rng = np.random.default_rng(seed)
    x, g, b = randn(rng, 3, 8), randn(rng, 8), randn(rng, 8)
    w = randn(rng, 3, 8)
    check_gradients(lambda xx, gg, bb: (layer_norm(xx, gg, bb) * w).sum(), [x, g, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_concat_clip(seed):
    rng = np.random.default_rng(seed)
    a, b = randn(rng, 3, 4), randn(rng, 3, 2)

    def f(x, y):
        z = concat([x, y], axis=-1)
        return (z.clip(-0.75, 0.75) * z).sum()

    # keep entries away from the clip boundaries where FD straddles the kink
    a = np.where(np.abs(np.abs(a) - 0.75) < 0.05, a * 2.0, a)
    b = np.where(np.abs(np.abs(b) - 0.75) < 0.05, b * 2.0, b)
    check_gradients(f, [a, b])


@pytest.mark.parametrize("seed", SEEDS)
def test_grad_attention_with_bias(seed):
    rng = np.random.default_rng(seed)
    q, k, v = randn(rng, 5, 4), randn(rng, 5, 4), randn(rng, 5, 4)
    bias = randn(rng, 5, 5) * 0.3
    w = randn(rng, 5, 4)
    check_gradients(
        lambda qq, kk, vv: (scaled_dot_attention(qq, kk, vv, bias) * w).sum(),
        [q, k, v],
    )


# -- op semantics -----------------------------------------------------------------


def test_attention_zero_bias_reduces_to_standard():
    rng = np.random.default_rng(0)
    q, k, v = (Tensor(randn(rng, 6, 4)) for _ in range(3))
    plain = scaled_dot_attention(q, k, v).data
    biased = scaled_dot_attention(q, k, v, np.zeros((6, 6))).data
    assert np.array_equal(plain, biased)


def test_attention_single_token_returns_v():
    rng = np.random.default_rng(1)
    q, k, v = (Tensor(randn(rng, 1, 8)) for _ in range(3))
    out = scaled_dot_attention(q, k, v)
    assert np.allclose(out.data, v.data, atol=1e-15)


def test_attention_rows_are_convex_combinations():
    rng = np.random.default_rng(2)
    q, k = Tensor(randn(rng, 5, 4)), Tensor(randn(rng, 5, 4))
    scores = (q @ k.swap_last()) * 0.5
    w = scores.softmax(-1).data
    assert np.allclose(w.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(w >= 0.0)


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(3)
    x = Tensor(randn(rng, 7, 9) * 30.0)
    s = x.softmax(-1).data
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-12)


def test_sigmoid_midpoint_and_range():
    assert Tensor(np.zeros(1)).sigmoid().data[0] == 0.5
    big = Tensor(np.array([-800.0, 800.0])).sigmoid().data
    assert 0.0 < big[0] < 1.0e-300 or big[0] == 0.0 or big[0] > 0.0
    assert np.all(np.isfinite(big))


def test_layer_norm_constant_vector_is_zero():
    x = Tensor(np.full((2, 6), 3.7))
    g, b = Tensor(np.ones(6)), Tensor(np.zeros(6))
    out = layer_norm(x, g, b).data
    assert np.allclose(out, 0.0, atol=1e-9)


def test_backward_seeds_own_grad_with_one():
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    y = (x * x).sum()
    y.backward()
    assert y.grad is not None and y.grad.item() == 1.0
    assert x.grad.item() == 4.0


def test_grad_accumulates_across_reuse():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = (x * x + x * 2.0).sum()
    y.backward()
    assert x.grad.item() == pytest.approx(8.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


# -- layers ------------------------------------------------------------------------


def test_affine_shapes_and_init_bounds():
    rng = np.random.default_rng(0)
    layer = Affine(9, 4, rng)
    bound = 1.0 / 3.0
    assert np.all(np.abs(layer.weight.data) <= bound)
    assert np.all(np.abs(layer.bias.data) <= bound)
    out = layer(Tensor(np.ones((5, 9))))
    assert out.shape == (5, 4)


def test_deterministic_initialization():
    p1 = MLP([4, 8, 2], np.random.default_rng(42)).named_parameters()
    p2 = MLP([4, 8, 2], np.random.default_rng(42)).named_parameters()
    assert set(p1) == set(p2)
    for k in p1:
        assert np.array_equal(p1[k].data, p2[k].data)


def test_mha_shape_and_head_count():
    rng = np.random.default_rng(0)
    mha = MultiHeadAttention(16, 4, rng)
    x = Tensor(np.random.default_rng(1).normal(size=(2, 6, 16)))
    out = mha(x)
    assert out.shape == (2, 6, 16)
    raw, biased, weights = mha.attention_scores(x)
    assert raw.shape == (2, 4, 6, 6)
    assert np.allclose(weights.sum(axis=-1), 1.0, atol=1e-12)
    assert np.array_equal(raw, biased)  # no bias passed


def test_mha_requires_divisible_width():
    with pytest.raises(ValueError):
        MultiHeadAttention(10, 4, np.random.default_rng(0))


@pytest.mark.parametrize("seed", range(5))
def test_grad_mha_end_to_end(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 4, 8))
    w = rng.normal(size=(2, 4, 8))
    bias = rng.normal(size=(4, 4)) * 0.2

    def f(xx):
        mha = MultiHeadAttention(8, 2, np.random.default_rng(seed + 100))
        return (mha(xx, bias) * w).sum()

    check_gradients(f, [x], tol=1e-3)


def test_sinusoidal_positions_shape_and_range():
    enc = sinusoidal_positions(10, 128)
    assert enc.shape == (10, 128)
    assert np.all(np.abs(enc) <= 1.0)
    assert not np.array_equal(enc[0], enc[1])


# -- optimizer -----------------------------------------------------------------------


def test_adam_zero_grad_leaves_params():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    opt.step()  # no grad accumulated
    assert np.array_equal(p.data, [1.0, 2.0])


def test_adam_first_step_is_signed_lr():
    p = Tensor(np.array([1.0, -1.0, 0.5]), requires_grad=True)
    opt = Adam([p], lr=0.01)
    p.grad = np.array([0.3, -0.2, 0.7])
    before = p.data.copy()
    opt.step()
    delta = p.data - before
    # bias-corrected first step is -lr * g/|g| up to the eps smoothing
    assert np.allclose(delta, -0.01 * np.sign([0.3, -0.2, 0.7]), rtol=1e-6)


def test_adam_quadratic_bowl_convergence():
    x = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([x], lr=1e-2)
    for _ in range(500):
        opt.zero_grad()
        loss = (x * x).sum()
        loss.backward()
        opt.step()
    assert abs(x.data.item()) < 1e-2


# -- checkpoints -----------------------------------------------------------------------


class _Net(Module):
    def __init__(self, rng):
        self.fc = Affine(3, 4, rng)
        self.norm = LayerNorm(4)
        self.blocks = [Affine(4, 4, rng), Affine(4, 2, rng)]


def test_checkpoint_round_trip(tmp_path):
    net = _Net(np.random.default_rng(0))
    meta_in = {"alpha": 0.12, "step": 17.0}
    save_module(tmp_path / "m.npz", net, meta=meta_in)

    other = _Net(np.random.default_rng(99))
    before = {k: v.data.copy() for k, v in other.named_parameters().items()}
    meta = load_module(tmp_path / "m.npz", other)
    assert meta == meta_in
    changed = 0
    for k, t in other.named_parameters().items():
        ref = net.named_parameters()[k].data
        assert np.array_equal(t.data, ref)
        if not np.array_equal(before[k], t.data):
            changed += 1
    assert changed > 0


def test_checkpoint_name_mismatch_rejected(tmp_path):
    net = _Net(np.random.default_rng(0))
    save_module(tmp_path / "m.npz", net)
    smaller = MLP([3, 2], np.random.default_rng(1))
    with pytest.raises(ValueError):
        load_module(tmp_path / "m.npz", smaller)


def test_rel_error_helper():
    assert rel_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert rel_error(np.array([1.0]), np.array([2.0])) == pytest.approx(0.5)
