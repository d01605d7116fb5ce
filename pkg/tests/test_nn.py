import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reward_ensemble.nn import (MLP, Adam, clip_by_global_norm, finite_difference, global_norm, load_checkpoint,
                                logsumexp, relative_error, save_checkpoint, softmax)


def test_mlp_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    net = MLP((5, 7, 4, 3), rng)
    x = rng.standard_normal((6, 5))
    target = rng.standard_normal((6, 3))

    def f():
        return float(np.sum((net.forward(x) - target) ** 2))

    out, acts = net.forward(x, keep=True)
    grads = net.backward(acts, 2 * (out - target))
    num = finite_difference(f, net.params)
    for g, n in zip(grads, num):
        assert relative_error(g, n) < 1e-6


def test_mlp_accepts_sparse_input():
    from scipy import sparse
    rng = np.random.default_rng(1)
    net = MLP((10, 4, 2), rng)
    dense = (rng.random((3, 10)) < 0.3).astype(float)
    np.testing.assert_allclose(net.forward(sparse.csr_matrix(dense)), net.forward(dense))


def test_flat_round_trip_and_copy_is_deep():
    net = MLP((3, 4, 2))
    v = net.flat()
    other = net.copy()
    other.params[0][0, 0] += 1.0
    assert net.params[0][0, 0] != other.params[0][0, 0]
    net.set_flat(v * 2)
    np.testing.assert_allclose(net.flat(), v * 2)


def test_mlp_needs_two_sizes():
    with pytest.raises(ValueError):
        MLP((3,))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_softmax_is_a_distribution(z):
    p = softmax(np.array(z))
    assert abs(p.sum() - 1.0) < 1e-9 and (p >= 0).all()
    assert abs(logsumexp(np.array(z)) - np.log(np.exp(np.array(z) - max(z)).sum()) - max(z)) < 1e-9


def test_clip_by_global_norm():
    g = [np.array([3.0]), np.array([4.0])]
    assert global_norm(g) == 5.0
    c = clip_by_global_norm(g, 1.0)
    assert abs(global_norm(c) - 1.0) < 1e-12
    assert clip_by_global_norm(g, None) is g
    assert clip_by_global_norm(g, 10.0) is g


def test_adam_minimises_a_quadratic():
    p = [np.array([5.0, -3.0])]
    opt = Adam(p, lr=0.1)
    for _ in range(500):
        opt.step([2 * p[0]])
    assert np.abs(p[0]).max() < 1e-2


def test_adam_first_step_has_size_lr():
    p = [np.array([1.0])]
    Adam(p, lr=0.01).step([np.array([123.0])])
    assert abs(p[0][0] - 0.99) < 1e-6


def test_checkpoint_round_trip(tmp_path):
    net = MLP((4, 3, 2), np.random.default_rng(2))
    save_checkpoint(tmp_path / "m.ckpt", {"kind": "test", "n": 1}, net.params)
    head, arrays = load_checkpoint(tmp_path / "m.ckpt")
    assert head["kind"] == "test" and head["shapes"] == [[4, 3], [3], [3, 2], [2]]
    for a, p in zip(arrays, net.params):
        np.testing.assert_array_equal(a, p.astype(np.float32))


def test_checkpoint_is_bytewise_deterministic(tmp_path):
    net = MLP((4, 3, 2), np.random.default_rng(2))
    save_checkpoint(tmp_path / "a", {"x": 1}, net.params)
    save_checkpoint(tmp_path / "b", {"x": 1}, net.params)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "bad"
    save_checkpoint(p, {}, [np.zeros(3)])
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(ValueError):
        load_checkpoint(p)
