import numpy as np
import pytest

from reachbench.autodiff import NetParams, Tape, Tensor, adam_step, dump_params, parse_params
from reachbench.autodiff import tensor as T
from reachbench.autodiff.gradcheck import gradcheck
from reachbench.autodiff.layers import MLP, Conv2d, Dense

N_INSTANCES = 20


def _away_from(x, points, gap=1e-3):
    """Nudge values that sit within ``gap`` of a kink."""
    for p in points:
        close = np.abs(x - p) < gap
        x = np.where(close, p + np.sign(x - p + 1e-12) * 2 * gap, x)
    return x


def _weights(rng, shape):
    return Tensor(rng.standard_normal(shape))


# name -> (input builder, scalar-valued function of the inputs)
def _cases():
    def unary(op, low=-2.0, high=2.0, kinks=()):
        def build(rng):
            return [_away_from(rng.uniform(low, high, (3, 4)), kinks)]
        return build, op

    def weighted(op):
        # random projection so the root is not a plain sum
        def f(*xs):
            out = op(*xs)
            w = np.random.default_rng(out.value.size).standard_normal(out.shape)
            return T.sum(out * w)
        return f

    cases = {
        "add": (lambda r: [r.standard_normal((3, 4)), r.standard_normal((4,))], weighted(T.add)),
        "sub": (lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 1))], weighted(T.sub)),
        "mul": (lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 4))], weighted(T.mul)),
        "neg": (lambda r: [r.standard_normal((5,))], weighted(T.neg)),
        "matmul": (lambda r: [r.standard_normal((3, 5)), r.standard_normal((5, 2))], weighted(T.matmul)),
        "transpose": (lambda r: [r.standard_normal((3, 5))], weighted(T.transpose)),
        "conv2d": (lambda r: [r.standard_normal((2, 2, 7, 7)), r.standard_normal((3, 2, 3, 3)),
                              r.standard_normal(3)],
                   weighted(lambda x, w, b: T.conv2d(x, w, b, stride=2))),
        "conv2d_stride1": (lambda r: [r.standard_normal((1, 3, 5, 6)), r.standard_normal((2, 3, 2, 2))],
                           weighted(lambda x, w: T.conv2d(x, w, None, stride=1))),
        "relu": (*unary(None, kinks=(0.0,))[:1], weighted(T.relu)),
        "tanh": (*unary(None)[:1], weighted(T.tanh)),
        "exp": (*unary(None)[:1], weighted(T.exp)),
        "log": (*unary(None, 0.1, 3.0)[:1], weighted(T.log)),
        "square": (*unary(None)[:1], weighted(T.square)),
        "absolute": (*unary(None, kinks=(0.0,))[:1], weighted(T.absolute)),
        "clip": (*unary(None, kinks=(-1.0, 1.0))[:1], weighted(lambda x: T.clip(x, -1.0, 1.0))),
        "minimum": (lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 4)) + 0.05],
                    weighted(T.minimum)),
        "softmax": (lambda r: [r.standard_normal((3, 4))], weighted(T.softmax)),
        "log_softmax": (lambda r: [r.standard_normal((3, 4))], weighted(T.log_softmax)),
        "sum_axis": (lambda r: [r.standard_normal((3, 4))], weighted(lambda x: T.sum(x, axis=0))),
        "mean_axis": (lambda r: [r.standard_normal((3, 4))],
                      weighted(lambda x: T.mean(x, axis=1, keepdims=True))),
        "mean_all": (lambda r: [r.standard_normal((3, 4))], lambda x: T.mean(T.square(x))),
        "slice": (lambda r: [r.standard_normal((4, 5))], weighted(lambda x: x[1:3, ::2])),
        "fancy_index": (lambda r: [r.standard_normal((4, 5))], weighted(lambda x: x[[0, 2, 2], [1, 1, 4]])),
        "concat": (lambda r: [r.standard_normal((2, 3)), r.standard_normal((2, 2))],
                   weighted(lambda a, b: T.concat([a, b], axis=1))),
        "reshape": (lambda r: [r.standard_normal((2, 6))], weighted(lambda x: T.reshape(x, (3, 4)))),
    }
    return cases


CASES = _cases()


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradients_match_finite_differences(name):
    build, f = CASES[name]
    rng = np.random.default_rng(abs(hash(name)) % 2**32)
    for _ in range(N_INSTANCES):
        res = gradcheck(f, build(rng))
        assert res.passed, (name, res)


def test_tanh_at_zero():
    tape = Tape()
    x = tape.variable(np.array(0.0))
    y = T.tanh(x)
    tape.backward(y)
    assert y.value == 0.0
    assert x.grad == 1.0


def test_conv_counts_ones():
    out = T.conv2d(np.ones((1, 1, 5, 5)), np.ones((1, 1, 3, 3)), stride=1)
    np.testing.assert_array_equal(out.value, np.full((1, 1, 3, 3), 9.0))


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(0)
    x, w = rng.standard_normal((2, 3, 9, 9)), rng.standard_normal((4, 3, 3, 3))
    out = T.conv2d(x, w, stride=2).value
    ref = np.zeros((2, 4, 4, 4))
    for n in range(2):
        for f in range(4):
            for i in range(4):
                for j in range(4):
                    ref[n, f, i, j] = np.sum(x[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[f])
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_shape_errors_name_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(np.zeros((2, 3)), np.zeros((4, 5)))
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)"):
        T.add(np.zeros((2, 3)), np.zeros(4))


def test_backward_requires_scalar_root():
    tape = Tape()
    x = tape.variable(np.ones(3))
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(x * 2.0)


def test_sum_of_parameter_gives_ones_and_untouched_get_zero():
    params = NetParams()
    params.add("a", np.arange(6.0).reshape(2, 3))
    params.add("b", np.ones(4))
    tape = Tape()
    tape.backward(T.sum(tape.param(params, "a")))
    np.testing.assert_array_equal(params.entry("a").grad, np.ones((2, 3)))
    np.testing.assert_array_equal(params.entry("b").grad, np.zeros(4))


def test_least_squares_gradient_closed_form():
    rng = np.random.default_rng(3)
    params = NetParams()
    params.add("W", rng.standard_normal((4, 3)))
    x, y = rng.standard_normal(3), rng.standard_normal(4)
    tape = Tape()
    W = tape.param(params, "W")
    r = T.reshape(T.matmul(W, x.reshape(3, 1)), (4,)) - y
    tape.backward(0.5 * T.sum(T.square(r)))
    expected = np.outer(params["W"] @ x - y, x)
    np.testing.assert_allclose(params.entry("W").grad, expected, rtol=0, atol=1e-10)


def test_two_backward_calls_double_gradients():
    params = NetParams()
    params.add("w", np.array([1.0, -2.0, 3.0]))
    tape = Tape()
    loss = T.sum(T.square(tape.param(params, "w")))
    tape.backward(loss)
    once = params.entry("w").grad.copy()
    tape.backward(loss)
    np.testing.assert_array_equal(params.entry("w").grad, 2 * once)


def test_backward_is_linear():
    rng = np.random.default_rng(11)
    for _ in range(10):
        x0 = rng.standard_normal((3, 3))
        a, b = rng.standard_normal(2)

        def f(x):
            return T.sum(T.tanh(T.matmul(x, x)))

        def g(x):
            return T.sum(T.exp(x * 0.3) * x)

        grads = []
        for fn in (f, g, lambda x: a * f(x) + b * g(x)):
            tape = Tape()
            v = tape.variable(x0)
            tape.backward(fn(v))
            grads.append(v.grad)
        np.testing.assert_allclose(grads[2], a * grads[0] + b * grads[1], rtol=1e-12, atol=1e-12)


def test_each_node_visited_once_on_shared_subgraph():
    tape = Tape()
    x = tape.variable(np.array(2.0))
    y = x * x
    z = y + y + y  # y reused three times
    tape.backward(z)
    assert x.grad == pytest.approx(12.0)


# -- Adam ---------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    params = NetParams()
    params.add("w", np.array([0.3, -0.7]))
    before = params["w"].copy()
    adam_step(params, lr=0.1)
    np.testing.assert_array_equal(params["w"], before)


def test_adam_constant_gradient_step_tends_to_lr():
    params = NetParams()
    params.add("w", np.zeros(1))
    lr = 1e-3
    steps = []
    for _ in range(3000):
        before = params["w"].copy()
        params.entry("w").grad[:] = 0.5
        adam_step(params, lr)
        steps.append(float(before[0] - params["w"][0]))
    assert steps[0] == pytest.approx(lr, rel=1e-4)
    assert steps[-1] == pytest.approx(lr, rel=1e-4)


def test_adam_quadratic_bowl_converges():
    rng = np.random.default_rng(0)
    w0 = rng.standard_normal(5)
    params = NetParams()
    params.add("w", w0 / np.linalg.norm(w0))
    for _ in range(500):
        tape = Tape()
        tape.backward(T.sum(T.square(tape.param(params, "w"))))
        adam_step(params, lr=0.01)
    assert np.linalg.norm(params["w"]) < 1e-2


def test_adam_rejects_non_finite_gradient_by_name():
    params = NetParams()
    params.add("layer.w", np.zeros(2))
    params.entry("layer.w").grad[0] = np.nan
    with pytest.raises(FloatingPointError, match="layer.w"):
        adam_step(params, lr=0.1)


def test_adam_trajectory_deterministic():
    def run():
        rng = np.random.default_rng(5)
        params = NetParams()
        net = MLP(params, "m", 4, [8], 2, rng)
        x = rng.standard_normal((16, 4))
        for _ in range(20):
            tape = Tape()
            tape.backward(T.mean(T.square(net(x, tape))))
            adam_step(params, 0.01)
        return dump_params(params.values())

    assert run() == run()


# -- layers and checkpoints ----------------------------------------------------

def test_glorot_bounds_and_output_scaling():
    rng = np.random.default_rng(0)
    params = NetParams()
    Dense(params, "d", 30, 20, rng)
    Conv2d(params, "c", 3, 8, 5, 2, rng)
    MLP(params, "m", 10, [16], 4, rng, out_scale=0.01)
    assert np.abs(params["d.w"]).max() <= np.sqrt(6 / 50)
    assert np.abs(params["c.w"]).max() <= np.sqrt(6 / (3 * 25 + 8 * 25))
    assert np.abs(params["m.l1.w"]).max() <= 0.01 * np.sqrt(6 / 20)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    from reachbench.autodiff import load_checkpoint, save_checkpoint

    rng = np.random.default_rng(0)
    params = NetParams()
    params.add("scalar", np.array(np.pi))
    params.add("w", rng.standard_normal((3, 4, 2)))
    params.add("tiny", np.array([5e-324, -0.0, np.finfo(float).max]))
    path = tmp_path / "p.ckpt"
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert list(loaded) == params.names()
    for name in params.names():
        assert loaded[name].shape == params[name].shape
        assert loaded[name].tobytes() == params[name].tobytes()


def test_checkpoint_layout():
    import struct

    blob = dump_params({"ab": np.array([[1.0, 2.0]])})
    header = b"REACHBENCH-CKPT-v1\n"
    assert blob.startswith(header)
    body = blob[len(header):]
    expected = (struct.pack("<I", 1) + struct.pack("<I", 2) + b"ab" + struct.pack("<I", 2)
                + struct.pack("<2Q", 1, 2) + struct.pack("<2d", 1.0, 2.0))
    assert body == expected


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        parse_params(b"nope")
    blob = dump_params({"w": np.ones(3)})
    with pytest.raises(ValueError):
        parse_params(blob[:-3])
