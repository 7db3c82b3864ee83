import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import topomarl.autodiff as ad
from oracles import kl_diag_gauss, numeric_grad, relative_error

TOL = 1e-4


def check_gradients(fn, *arrays, seed=0):
    """Analytic vs central-difference gradients of sum(W * fn(*arrays)) for every input array."""
    rng = np.random.default_rng(seed)
    out_shape = np.shape(ad.value_of(fn(*arrays)))
    weights = rng.normal(size=out_shape)

    def loss(*xs):
        return ad.total(ad.mul(fn(*xs), weights))

    leaves = [ad.Var(a) for a in arrays]
    root = loss(*leaves)
    ad.backward(root)
    for leaf, arr in zip(leaves, arrays):
        numeric, mask = numeric_grad(lambda: float(loss(*arrays)), arr, step=1e-5, max_entries=60, rng=rng)
        analytic = np.zeros_like(arr) if leaf.grad is None else leaf.grad
        assert relative_error(analytic[mask], numeric[mask]) < TOL


def away_from_zero(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, margin * np.sign(x + 1e-12) * 2, x)


dims = st.integers(1, 5)


# ------------------------------------------------------------------ node-by-node gradient fidelity

@settings(max_examples=15)
@given(b=dims, i=dims, o=dims, seed=st.integers(0, 10_000))
def test_affine_and_matmul(b, i, o, seed):
    rng = np.random.default_rng(seed)
    x, w, bias = rng.normal(size=(b, i)), rng.normal(size=(i, o)), rng.normal(size=o)
    check_gradients(ad.affine, x, w, bias, seed=seed)
    check_gradients(ad.matmul, x, w, seed=seed)
    check_gradients(ad.matmul, rng.normal(size=(2, b, i)), rng.normal(size=(2, i, o)), seed=seed)
    check_gradients(lambda x3, w: ad.affine(x3, w, bias), rng.normal(size=(2, b, i)), w, seed=seed)


@settings(max_examples=15)
@given(shape=st.tuples(dims, dims), seed=st.integers(0, 10_000))
def test_elementwise_nodes(shape, seed):
    rng = np.random.default_rng(seed)
    x = away_from_zero(rng, shape)
    for op in (ad.relu, ad.elu, ad.tanh, ad.sigmoid, ad.exp, ad.absolute):
        check_gradients(op, x.copy(), seed=seed)
    y = rng.normal(size=shape)
    check_gradients(ad.add, x, y, seed=seed)
    check_gradients(ad.sub, x, y, seed=seed)
    check_gradients(ad.mul, x, y, seed=seed)
    check_gradients(ad.add, x, rng.normal(size=shape[1:]), seed=seed)      # broadcasting


@settings(max_examples=15)
@given(b=dims, i=dims, h=dims, seed=st.integers(0, 10_000))
def test_gru_cell_and_step(b, i, h, seed):
    rng = np.random.default_rng(seed)
    args = (rng.normal(size=(b, i)), rng.normal(size=(b, h)), rng.normal(size=(i, 3 * h)),
            rng.normal(size=(h, 3 * h)), rng.normal(size=3 * h), rng.normal(size=3 * h))
    check_gradients(ad.gru_cell, *args, seed=seed)
    check_gradients(ad.gru_step, rng.normal(size=(b, 3 * h)), args[1], args[3], args[5], seed=seed)


def test_gru_matches_explicit_equations():
    rng = np.random.default_rng(3)
    x, h = rng.normal(size=(2, 3)), rng.normal(size=(2, 4))
    wi, wh, bi, bh = rng.normal(size=(3, 12)), rng.normal(size=(4, 12)), rng.normal(size=12), rng.normal(size=12)
    sig = lambda v: 1 / (1 + np.exp(-v))   # noqa: E731
    gi, gh = x @ wi + bi, h @ wh + bh
    r = sig(gi[:, :4] + gh[:, :4])
    z = sig(gi[:, 4:8] + gh[:, 4:8])
    n = np.tanh(gi[:, 8:] + r * gh[:, 8:])
    assert np.allclose(ad.gru_cell(x, h, wi, wh, bi, bh), (1 - z) * n + z * h, atol=1e-12)


@settings(max_examples=15)
@given(a=dims, b=dims, c=dims, seed=st.integers(0, 10_000))
def test_structure_nodes(a, b, c, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(a, b)), rng.normal(size=(a, c))
    check_gradients(lambda u, v: ad.concat([u, v], axis=1), x, y, seed=seed)
    check_gradients(lambda u, v: ad.stack([u, v], axis=1), x, x + 1.0, seed=seed)
    check_gradients(lambda u: ad.reshape(u, (-1,)), x, seed=seed)
    check_gradients(lambda u: ad.take(u, (slice(None), slice(0, 1))), x, seed=seed)
    rows = rng.integers(0, a, size=4)
    check_gradients(lambda u: ad.take(u, rows), x, seed=seed)                 # repeated advanced index
    cols = rng.integers(0, b, size=a)
    check_gradients(lambda u: ad.take_along(u, cols, axis=1), x, seed=seed)
    check_gradients(lambda u: ad.mean(u, axis=0), x, seed=seed)
    check_gradients(lambda u: ad.total(u), x, seed=seed)


@settings(max_examples=15)
@given(a=dims, b=dims, seed=st.integers(0, 10_000))
def test_loss_nodes(a, b, seed):
    rng = np.random.default_rng(seed)
    p, t = rng.normal(size=(a, b)), rng.normal(size=(a, b))
    check_gradients(ad.mse, p, t, seed=seed)
    check_gradients(ad.gaussian_loglik, t, p, seed=seed)
    check_gradients(ad.kl_std_normal, p, 0.5 * t, seed=seed)


def test_shared_subgraph_accumulates():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 4))
    check_gradients(lambda u: ad.add(ad.mul(ad.tanh(u), u), ad.take(u, [0, 0, 2])), x)
    check_gradients(lambda u: ad.concat([ad.take(u, (0,)), ad.reshape(ad.take(u, [0, 0]), (-1,))], axis=0), x)


def test_random_two_layer_net():
    rng = np.random.default_rng(7)
    store = ad.ParamStore()
    store.add("w1", ad.seeded_init((6, 8), seed=1))
    store.add("b1", ad.seeded_init((8,), seed=2, fan_in=6))
    store.add("w2", ad.seeded_init((8, 3), seed=3))
    store.add("b2", ad.seeded_init((3,), seed=4, fan_in=8))
    x, target = rng.normal(size=(5, 6)), rng.normal(size=(5, 3))

    def net(p, inp):
        return ad.mse(ad.affine(ad.relu(ad.affine(inp, p["w1"], p["b1"])), p["w2"], p["b2"]), target)

    value, (grads, input_grads) = ad.forward_backward(net, store, x, wrt_inputs=True)
    assert value == pytest.approx(float(net(store.values, x)))
    for name in store:
        numeric, _ = numeric_grad(lambda: float(net(store.values, x)), store[name])
        assert relative_error(grads[name], numeric) < TOL
    numeric, _ = numeric_grad(lambda: float(net(store.values, x)), x)
    assert relative_error(input_grads[0], numeric) < TOL


# ------------------------------------------------------------------ examples and errors

def test_identity_affine_and_mse_minimum():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(ad.affine(x, np.eye(3), np.zeros(3)), x)
    leaf = ad.Var(x.copy())
    ad.backward(ad.mse(leaf, x))
    assert np.all(leaf.grad == 0.0)


def test_kl_closed_form():
    assert float(ad.kl_std_normal(np.zeros(4), np.zeros(4))) == 0.0
    rng = np.random.default_rng(0)
    mu, lv = rng.normal(size=5), rng.normal(size=5)
    assert float(ad.kl_std_normal(mu, lv)) == pytest.approx(kl_diag_gauss(mu, lv), rel=1e-12)


def test_gaussian_loglik_constant():
    t, m = np.ones((2, 3)), np.zeros((2, 3))
    assert np.allclose(ad.gaussian_loglik(t, m), -1.5)
    assert np.allclose(ad.gaussian_loglik(t, m, include_constant=True), -1.5 - 1.5 * np.log(2 * np.pi))


def test_untracked_ops_return_arrays():
    out = ad.tanh(ad.affine(np.ones((1, 2)), np.ones((2, 2)), np.zeros(2)))
    assert isinstance(out, np.ndarray) and not isinstance(out, ad.Var)


@pytest.mark.parametrize("call, node", [
    (lambda: ad.affine(np.ones((2, 3)), np.ones((4, 2)), np.zeros(2)), "affine"),
    (lambda: ad.matmul(np.ones((2, 3)), np.ones((2, 3))), "matmul"),
    (lambda: ad.mse(np.ones(3), np.ones(4)), "mse"),
    (lambda: ad.concat([np.ones((2, 3)), np.ones((3, 3))], axis=1), "concat"),
    (lambda: ad.gru_step(np.ones((1, 5)), np.ones((1, 2)), np.ones((2, 6)), np.ones(6)), "gru_cell"),
    (lambda: ad.kl_std_normal(np.ones(2), np.ones(3)), "kl_std_normal"),
    (lambda: ad.add(np.ones(2), np.ones(3)), "add"),
])
def test_shape_errors_name_the_node(call, node):
    with pytest.raises(ad.ShapeError, match=f"shape error in {node}") as info:
        call()
    assert info.value.node == node


# ------------------------------------------------------------------ optimiser and initialisation

def single_param(value):
    store = ad.ParamStore()
    store.add("p", np.array(value, dtype=float))
    return store


def test_rmsprop_first_step():
    store = single_param([1.0])
    ad.rmsprop_update(store, {"p": np.array([1.0])}, lr=5e-4)
    assert store["p"][0] == pytest.approx(1.0 - 5e-4 / np.sqrt(0.01 + 1e-8), rel=1e-12)
    assert store.accumulators["p"][0] == pytest.approx(0.01)


def test_rmsprop_zero_gradient_and_fixed_point():
    store = single_param([0.3, -0.2])
    ad.rmsprop_update(store, {"p": np.zeros(2)})
    assert np.array_equal(store["p"], [0.3, -0.2])
    store = single_param([0.0])
    g = np.array([-3.0])
    for _ in range(3000):
        before = store["p"][0]
        ad.rmsprop_update(store, {"p": g}, lr=5e-4)
    assert store["p"][0] - before == pytest.approx(5e-4, rel=1e-4)
    assert np.all(store.accumulators["p"] >= 0)


def test_rmsprop_shape_mismatch():
    with pytest.raises(ValueError):
        ad.rmsprop_update(single_param([1.0]), {"p": np.ones(2)})


def test_seeded_init():
    assert np.all(ad.seeded_init((3, 4), "zeros") == 0)
    a = ad.seeded_init((50, 40), seed=11)
    assert np.array_equal(a, ad.seeded_init((50, 40), seed=11))
    assert np.all(np.abs(a) <= 1 / np.sqrt(50))
    assert np.all(np.abs(ad.seeded_init((10, 4), seed=1, fan_in=400)) <= 0.05)
    with pytest.raises(ValueError):
        ad.seeded_init((2,), "xavier")


def test_param_store_load_values():
    store = single_param([1.0, 2.0])
    store.load_values({"p": np.array([5.0, 6.0])})
    assert np.array_equal(store["p"], [5.0, 6.0])
    with pytest.raises(KeyError):
        store.load_values({"q": np.zeros(2)})
    with pytest.raises(ValueError):
        store.load_values({"p": np.zeros(3)})


def test_clip_grad_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert ad.clip_grad_norm(grads, 1.0) == 5.0
    assert np.allclose([grads["a"][0], grads["b"][0]], [0.6, 0.8])


def test_determinism():
    def run():
        rng = np.random.default_rng(5)
        store = ad.ParamStore()
        store.add("w", ad.seeded_init((4, 2), seed=9))
        x = rng.normal(size=(3, 4))
        for _ in range(10):
            _, grads = ad.forward_backward(lambda p, inp: ad.mse(ad.tanh(ad.matmul(inp, p["w"])), np.ones((3, 2))),
                                           store, x)
            ad.rmsprop_update(store, grads)
        return store["w"].copy()
    assert np.array_equal(run(), run())


# ------------------------------------------------------------------ checkpoints

def test_checkpoint_round_trip(tmp_path):
    tensors = {"net.w": np.arange(6.0).reshape(2, 3), "net.b": np.array([1.5, -2.0]), "scalar": np.array(3.0)}
    path = ad.save_checkpoint(tmp_path / "c.tpck", tensors, {"episode": 4})
    loaded = ad.load_checkpoint(path)
    assert list(loaded) == list(tensors)
    for name in tensors:
        assert np.array_equal(loaded[name], tensors[name]) and loaded[name].shape == tensors[name].shape
    manifest = ad.read_manifest(path)
    assert manifest["format"] == "TPCK" and manifest["metadata"] == {"episode": 4}
    assert [e["name"] for e in manifest["tensors"]] == list(tensors)
    blob = path.read_bytes()
    first = manifest["tensors"][0]
    assert np.frombuffer(blob, "<f8", 6, first["offset"]).tolist() == list(range(6))


def test_checkpoint_corruption(tmp_path):
    path = ad.save_checkpoint(tmp_path / "c.tpck", {"w": np.ones((4, 4))})
    blob = path.read_bytes()
    (tmp_path / "magic.tpck").write_bytes(b"NOPE" + blob[4:])
    (tmp_path / "short.tpck").write_bytes(blob[:-9])
    (tmp_path / "long.tpck").write_bytes(blob + b"\0")
    for name in ("magic", "short", "long"):
        with pytest.raises(ad.CheckpointError):
            ad.load_checkpoint(tmp_path / f"{name}.tpck")
