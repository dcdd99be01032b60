import numpy as np
import pytest

from scatterdense import nn
from scatterdense.filters import build_bank
from scatterdense.metrics import phase_align_loss, phase_tv_loss

from gradcheck import check_grad

POINTS = 10
TOL = 1e-5


def _bn_train(x, g, b):
    return nn.batchnorm(x, g, b, nn.BatchNormState(x.shape[1]), training=True)


def _bn_eval(x, g, b):
    st = nn.BatchNormState(x.shape[1])
    st.mean = np.linspace(-0.2, 0.3, x.shape[1])
    st.var = np.linspace(0.5, 2.0, x.shape[1])
    st.updates = 1
    return nn.batchnorm(x, g, b, st, training=False)


_PSI = build_bank(2, 2, 0.5, 8, 8).psi_hat.reshape(4, 8, 8)

OPS = {
    "add": (lambda a, b: nn.add(a, b), [(2, 3, 4, 4), (1, 3, 1, 1)]),
    "sub": (lambda a, b: a - b, [(2, 3), (2, 3)]),
    "neg": (nn.neg, [(3, 4)]),
    "mul": (lambda a, b: nn.mul(a, b), [(2, 3, 4, 4), (2, 1, 4, 4)]),
    "relu": (nn.relu, [(2, 3, 4, 4)]),
    "leaky_relu": (nn.leaky_relu, [(2, 3, 4, 4)]),
    "sigmoid": (nn.sigmoid, [(2, 3, 4, 4)]),
    "cos": (nn.cos, [(2, 3, 4, 4)]),
    "roll": (lambda a: nn.roll(a, (1, -2), (2, 3)), [(1, 2, 4, 4)]),
    "avg_pool2": (nn.avg_pool2, [(2, 2, 4, 8)]),
    "sum_all": (nn.sum_all, [(3, 5)]),
    "mean_all": (nn.mean_all, [(3, 5)]),
    "conv3x3_in": (nn.conv3x3, [(2, 2, 4, 4), (3, 2, 3, 3), (3,)]),
    "conv3x3_out": (nn.conv3x3, [(2, 5, 4, 4), (2, 5, 3, 3), (2,)]),
    "batchnorm_train": (_bn_train, [(3, 2, 4, 4), (2,), (2,)]),
    "batchnorm_eval": (_bn_eval, [(3, 2, 4, 4), (2,), (2,)]),
    "bilinear_upsample": (lambda a: nn.bilinear_upsample(a, 8, 8), [(1, 2, 4, 4)]),
    "bilinear_identity": (lambda a: nn.bilinear_upsample(a, 4, 4), [(1, 2, 4, 4)]),
    "concat_channels": (lambda a, b: nn.concat_channels([a, b]), [(2, 1, 4, 4), (2, 3, 4, 4)]),
    "wavelet_phase": (lambda y: nn.wavelet_phase(y, _PSI), [(2, 1, 8, 8)]),
    "mse_loss": (nn.mse_loss, [(2, 1, 4, 4), (2, 1, 4, 4)]),
    "phase_tv_loss": (phase_tv_loss, [(2, 3, 4, 4)]),
    "phase_align_loss": (lambda a, b, c: phase_align_loss([a, b, c]), [(1, 2, 4, 4)] * 3),
    "phase_align_pooled": (lambda a, b: phase_align_loss([a, b], pool=True), [(1, 2, 8, 8), (1, 2, 4, 4)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_gradient(name):
    fn, shapes = OPS[name]
    rng = np.random.default_rng(sum(map(ord, name)))
    for _ in range(POINTS):
        arrays = [rng.standard_normal(s) for s in shapes]
        if name.startswith("batchnorm"):
            arrays[1] = 1.0 + 0.5 * arrays[1]
        assert check_grad(fn, arrays, rng) < TOL


def test_backward_accumulates_shared_inputs():
    x = nn.Tensor(np.array([2.0, -3.0]), requires_grad=True)
    y = nn.sum_all(x * x + x)
    y.backward()
    np.testing.assert_array_equal(x.grad, [5.0, -5.0])


def test_constants_get_no_gradient():
    c = nn.constant(np.ones(3))
    w = nn.Tensor(np.ones(3), requires_grad=True)
    nn.sum_all(nn.mul(c, w)).backward()
    assert c.grad is None and w.grad is not None


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        nn.Tensor(np.ones(3), requires_grad=True).backward()


def test_deep_chain_is_iterative():
    x = nn.Tensor(np.ones(2), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0
    nn.sum_all(y).backward()
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])


def test_batchnorm_statistics(rng):
    x = nn.constant(rng.standard_normal((4, 3, 4, 4)) * 2 + 1)
    st = nn.BatchNormState(3)
    g, b = nn.Tensor(np.ones(3)), nn.Tensor(np.zeros(3))
    with pytest.raises(RuntimeError):
        nn.batchnorm(x, g, b, st, training=False)
    y = nn.batchnorm(x, g, b, st, training=True).value
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1, rtol=1e-4)
    assert st.updates == 1
    n = 4 * 16
    np.testing.assert_allclose(st.mean, 0.1 * x.value.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(st.var, 0.9 + 0.1 * x.value.var(axis=(0, 2, 3)) * n / (n - 1))


def test_bilinear_upsample_constant_and_shape():
    x = nn.constant(np.full((1, 2, 4, 4), 0.7))
    y = nn.bilinear_upsample(x, 8, 16).value
    assert y.shape == (1, 2, 8, 16)
    np.testing.assert_allclose(y, 0.7)
    with pytest.raises(Exception):
        nn.bilinear_upsample(x, 2, 2)


def test_param_store_init(rng):
    store = nn.ParamStore(seed=3)
    w, b = store.conv("c", 4, 5)
    bound = np.sqrt(6 / 45)
    assert w.shape == (4, 5, 3, 3) and np.all(np.abs(w.value) <= bound) and np.all(b.value == 0)
    with pytest.raises(KeyError):
        store.conv("c", 4, 5)
    same = nn.ParamStore(seed=3).conv("c", 4, 5)[0]
    np.testing.assert_array_equal(same.value, w.value)
    assert store.count() == 4 * 5 * 9 + 4


def test_adam_minimises_quadratic():
    store = nn.ParamStore()
    p = store.add("p", np.array([3.0, -2.0]))
    opt = nn.Adam(store, lr=0.1)
    for _ in range(300):
        store.zero_grad()
        nn.sum_all(p * p).backward()
        opt.step()
    assert np.all(np.abs(p.value) < 1e-2)


def test_adam_first_step_is_lr_sign():
    store = nn.ParamStore()
    p = store.add("p", np.array([1.0, -1.0, 0.5]))
    p.grad = np.array([2.0, -0.1, 0.0])
    nn.adam_step(store, lr=0.01)
    np.testing.assert_allclose(p.value, [0.99, -0.99, 0.5], atol=1e-6)


def test_adam_requires_gradients():
    store = nn.ParamStore()
    store.add("p", np.ones(2))
    with pytest.raises(RuntimeError, match="missing gradient"):
        nn.Adam(store).step()


def test_checkpoint_round_trip(tmp_path, rng):
    store = nn.ParamStore(seed=1)
    store.conv("a", 2, 3)
    store.norm("n", 2)
    st = store.bn_state("n", 2)
    st.mean, st.var, st.updates = rng.standard_normal(2), rng.random(2) + 1, 7
    nn.save_checkpoint(tmp_path / "ck", store, {"note.txt": "hi"})
    back = nn.load_checkpoint(tmp_path / "ck")
    assert back.names() == store.names()
    for n, t in store.items():
        np.testing.assert_array_equal(back[n].value, t.value)
    assert back.bn["n"].updates == 7
    np.testing.assert_array_equal(back.bn["n"].mean, st.mean)
    header = (tmp_path / "ck" / "manifest.csv").read_text().splitlines()[0]
    assert header == "name,kind,shape,dtype"


def test_conv_identity_and_constant_kernels(rng):
    x = nn.constant(rng.standard_normal((1, 2, 8, 8)))
    w = np.zeros((2, 2, 3, 3))
    w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1.0
    np.testing.assert_array_equal(nn.conv3x3(x, nn.constant(w), nn.constant(np.zeros(2))).value, x.value)
    out = nn.conv3x3(x, nn.constant(np.zeros((3, 2, 3, 3))), nn.constant(np.full(3, 0.25))).value
    assert np.all(out == 0.25)


def test_conv_weight_gradient_of_sum(rng):
    x = rng.standard_normal((1, 2, 8, 8))
    w0 = rng.standard_normal((2, 2, 3, 3))
    b = nn.constant(np.zeros(2))
    w = nn.Tensor(w0, requires_grad=True)
    nn.sum_all(nn.conv3x3(nn.constant(x), w, b)).backward()
    from oracles import central_diff

    num = central_diff(lambda v: float(nn.conv3x3(nn.constant(x), nn.constant(v), b).value.sum()), w0, 1e-5)
    ref = np.array([num[i] for i in range(w0.size)]).reshape(w0.shape)
    assert np.max(np.abs(w.grad - ref)) / np.max(np.abs(ref)) < 1e-6


def test_activation_values():
    v = nn.constant(np.array([-1.0, 0.0, 2.0]))
    np.testing.assert_array_equal(nn.relu(v).value, [0.0, 0.0, 2.0])
    np.testing.assert_allclose(nn.leaky_relu(v, 0.1).value, [-0.1, 0.0, 2.0])
    assert nn.sigmoid(nn.constant(0.0)).value == 0.5
    s = nn.sigmoid(nn.constant(np.array([-800.0, 800.0]))).value
    assert np.all((s >= 0) & (s <= 1)) and np.all(np.isfinite(s))


def test_batchnorm_affine(rng):
    x = nn.constant(rng.standard_normal((4, 1, 8, 8)))
    y = nn.batchnorm(x, nn.constant([2.0]), nn.constant([3.0]), nn.BatchNormState(1), training=True).value
    assert y.mean() == pytest.approx(3.0, abs=1e-10)
    assert y.std() == pytest.approx(2.0, abs=1e-4)


def test_concat_single_and_backward_of_sum(rng):
    a = nn.Tensor(rng.standard_normal((1, 2, 4, 4)), requires_grad=True)
    b = nn.Tensor(rng.standard_normal((1, 3, 4, 4)), requires_grad=True)
    np.testing.assert_array_equal(nn.concat_channels([a]).value, a.value)
    out = nn.concat_channels([a, b])
    assert out.shape[1] == 5
    nn.sum_all(out).backward()
    assert np.all(a.grad == 1) and np.all(b.grad == 1)
    with pytest.raises(Exception):
        nn.concat_channels([a, nn.constant(np.zeros((1, 1, 2, 4)))])


def test_adam_zero_gradient_and_first_step():
    store = nn.ParamStore()
    p = store.add("p", np.array([0.7]))
    p.grad = np.zeros(1)
    opt = nn.Adam(store, lr=0.1)
    opt.step()
    assert p.value[0] == 0.7
    store2 = nn.ParamStore()
    q = store2.add("q", np.array([1.0]))
    q.grad = np.ones(1)
    nn.Adam(store2, lr=0.1).step()
    assert q.value[0] == pytest.approx(0.9, abs=1e-6)


def test_adam_runs_are_bit_identical():
    def run():
        store = nn.ParamStore(seed=9)
        w, b = store.conv("c", 2, 1)
        opt = nn.Adam(store, lr=0.01)
        x = nn.constant(np.random.default_rng(2).standard_normal((1, 1, 4, 4)))
        for _ in range(100):
            store.zero_grad()
            nn.mse_loss(nn.conv3x3(x, w, b), np.zeros((1, 2, 4, 4))).backward()
            opt.step()
        return w.value.copy()

    np.testing.assert_array_equal(run(), run())
