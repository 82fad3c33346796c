import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eecfl.nnkernel import (DenseModel, Gradients, LossBreakdown, ShapeError, ce_from_logits,
                            ce_loss_grad, cross_entropy, distill_loss_grad, kl_div, kl_from_logits,
                            leaf_loss_grad, sgd_step, softmax_temp)
from tests.oracles import straight_line_forward

finite = st.floats(-50, 50, allow_nan=False)
logit_vectors = arrays(np.float64, st.integers(2, 10), elements=finite)


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_grad(model: DenseModel, loss_fn, h=1e-5) -> np.ndarray:
    base = model.flat_params()
    out = np.empty_like(base)
    probe = model.copy()
    for i in range(len(base)):
        w = base.copy()
        w[i] += h
        probe.set_flat_params(w)
        up = loss_fn(probe)
        w[i] -= 2 * h
        probe.set_flat_params(w)
        down = loss_fn(probe)
        out[i] = (up - down) / (2 * h)
    return out


def flat(grads: Gradients) -> np.ndarray:
    parts = []
    for w, b in zip(grads.weights, grads.biases):
        parts += [w.ravel(), b.ravel()]
    return np.concatenate(parts)


# -- forward ------------------------------------------------------------------

def test_zero_model_gives_zero_logits():
    model = DenseModel.zeros([3, 5, 4])
    assert np.array_equal(model.forward(np.random.default_rng(0).normal(size=(6, 3))), np.zeros((6, 4)))


def test_identity_layer():
    model = DenseModel([2, 2], [np.eye(2)], [np.zeros(2)])
    assert np.array_equal(model.forward(np.array([[1.0, 2.0]])), [[1.0, 2.0]])


def test_forward_matches_straight_line_evaluation():
    rng = np.random.default_rng(3)
    for _ in range(5):
        model = DenseModel.initialize([4, 6, 3], rng)
        x = rng.normal(size=(7, 4))
        np.testing.assert_allclose(model.forward(x), straight_line_forward(model.weights, model.biases, x),
                                   rtol=0, atol=1e-12)


def test_forward_rejects_wrong_width():
    with pytest.raises(ShapeError):
        DenseModel.zeros([3, 4]).forward(np.zeros((2, 5)))


def test_param_count_is_exact():
    model = DenseModel.zeros([16, 64, 48, 4])
    assert model.param_count == 16 * 64 + 64 + 64 * 48 + 48 + 48 * 4 + 4
    assert model.param_count == len(model.flat_params())


# -- softmax / CE / KL --------------------------------------------------------

@pytest.mark.parametrize("logits,T,expected", [
    ([0.0, 0.0, 0.0], 0.5, [1 / 3, 1 / 3, 1 / 3]),
    ([math.log(4), 0.0], 1.0, [0.8, 0.2]),
    ([2.0, 0.0], 2.0, [0.7310585786, 0.2689414214]),
])
def test_softmax_examples(logits, T, expected):
    np.testing.assert_allclose(softmax_temp(np.array(logits), T), expected, atol=1e-9)


def test_softmax_errors():
    with pytest.raises(ValueError):
        softmax_temp(np.array([1.0, 2.0]), 0.0)
    with pytest.raises(ValueError):
        softmax_temp(np.array([1.0, np.inf]), 1.0)


@given(logit_vectors, st.floats(0.05, 20))
def test_softmax_is_a_distribution_and_keeps_argmax(z, T):
    p = softmax_temp(z, T)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1) < 1e-9
    # ties can make argmax ambiguous; compare against the set of maximisers
    assert z[np.argmax(p)] == z.max() or np.isclose(p.max(), p[np.argmax(z)])


@pytest.mark.parametrize("probs,label,expected", [
    ([0.0, 1.0, 0.0], 1, 0.0),
    ([0.5, 0.5], 0, math.log(2)),
    ([0.25] * 4, 3, math.log(4)),
])
def test_cross_entropy_examples(probs, label, expected):
    assert cross_entropy(np.array(probs), label) == pytest.approx(expected, abs=1e-12)


def test_cross_entropy_floor_and_range():
    assert cross_entropy(np.array([1.0, 0.0]), 1) == pytest.approx(-math.log(1e-12))
    with pytest.raises(IndexError):
        cross_entropy(np.array([0.5, 0.5]), 2)


@pytest.mark.parametrize("p,q,expected", [
    ([1.0, 0.0], [0.5, 0.5], math.log(2)),
    ([0.5, 0.5], [0.25, 0.75], 0.5 * math.log(2) + 0.5 * math.log(2 / 3)),
])
def test_kl_examples(p, q, expected):
    assert kl_div(np.array(p), np.array(q)) == pytest.approx(expected, abs=1e-12)


def test_kl_length_mismatch():
    with pytest.raises(ShapeError):
        kl_div(np.array([0.5, 0.5]), np.array([1.0]))


@given(st.integers(2, 8).flatmap(lambda C: st.tuples(
    arrays(np.float64, C, elements=st.floats(0.01, 1)), arrays(np.float64, C, elements=st.floats(0.01, 1)))))
def test_kl_nonnegative_and_zero_on_self(pq):
    p, q = pq[0] / pq[0].sum(), pq[1] / pq[1].sum()
    assert kl_div(p, q) >= -1e-15
    assert abs(kl_div(p, p)) < 1e-15
    if np.abs(p - q).max() > 1e-6:
        assert kl_div(p, q) > 0


# -- gradients ----------------------------------------------------------------

def test_ce_logit_gradient_is_probs_minus_onehot():
    z = np.array([[1.0, -0.5, 2.0]])
    _, g = ce_from_logits(z, np.array([1]))
    expected = softmax_temp(z, 1.0)
    expected[0, 1] -= 1
    np.testing.assert_allclose(g, expected, atol=1e-15)


def test_unused_block_has_zero_gradient():
    # dead hidden unit: its outgoing weights cannot affect the loss
    model = DenseModel.initialize([3, 4, 2], np.random.default_rng(0))
    model.weights[0][:, 2] = 0.0
    model.biases[0][2] = -1.0
    _, g = ce_loss_grad(model, np.random.default_rng(1).normal(size=(5, 3)), np.array([0, 1, 0, 1, 1]))
    assert np.all(g.weights[1][2] == 0)


def _random_instance(rng):
    dims = [int(rng.integers(2, 6))] + [int(rng.integers(2, 7)) for _ in range(rng.integers(0, 3))] + \
        [int(rng.integers(2, 5))]
    model = DenseModel.initialize(dims, rng)
    # zero biases can leave a unit exactly at the rectifier kink, where the
    # one-sided derivative and the central difference legitimately disagree
    model.biases = [rng.normal(scale=0.5, size=b.shape) for b in model.biases]
    n = int(rng.integers(1, 6))
    C = dims[-1]
    x = rng.normal(size=(n, dims[0]))
    y = rng.integers(0, C, size=n)
    targets = rng.dirichlet(np.ones(C), size=n)
    return model, x, y, targets


LOSSES = ["ce", "distill", "leaf", "distill_student_T"]


@pytest.mark.parametrize("kind", LOSSES)
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    worst = 0.0
    for _ in range(25):
        model, x, y, targets = _random_instance(rng)
        beta, gamma = float(rng.uniform(0, 2)), float(rng.uniform(0, 2))
        if kind == "ce":
            def f(m): return ce_loss_grad(m, x, y)[0]
        elif kind == "distill":
            def f(m): return distill_loss_grad(m, x, y, targets, beta)[0].total
        elif kind == "distill_student_T":
            def f(m): return distill_loss_grad(m, x, y, targets, beta, 0.5)[0].total
        else:
            px = rng.normal(size=(3, x.shape[1]))
            py = rng.integers(0, targets.shape[1], size=3)
            def f(m): return leaf_loss_grad(m, px, py, x, y, targets, beta, gamma)[0].total
        if kind == "ce":
            analytic = flat(ce_loss_grad(model, x, y)[1])
        elif kind == "leaf":
            analytic = flat(leaf_loss_grad(model, px, py, x, y, targets, beta, gamma)[1])
        else:
            t = 0.5 if kind.endswith("_T") else None
            analytic = flat(distill_loss_grad(model, x, y, targets, beta, t)[1])
        worst = max(worst, grad_rel_error(analytic, numeric_grad(model, f)))
    assert worst < 1e-4


def test_kl_logit_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(3, 4))
    targets = rng.dirichlet(np.ones(4), size=3)
    _, g = kl_from_logits(z, targets, 0.7)
    num = np.zeros_like(z)
    for idx in np.ndindex(*z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += 1e-6
        zm[idx] -= 1e-6
        num[idx] = (kl_from_logits(zp, targets, 0.7)[0] - kl_from_logits(zm, targets, 0.7)[0]) / 2e-6
    assert grad_rel_error(g, num) < 1e-6


def test_loss_breakdown_composition():
    nl = LossBreakdown.non_leaf(0.4, 0.2, 1.5)
    assert nl.total == pytest.approx(0.4 + 1.5 * 0.2) and nl.local_ce_term == 0
    lf = LossBreakdown.leaf(0.3, 0.4, 0.2, 1.5, 2.0)
    assert lf.total == pytest.approx(0.3 + 2.0 * (0.4 + 1.5 * 0.2))


def test_identical_teacher_has_zero_kl():
    rng = np.random.default_rng(2)
    model = DenseModel.initialize([3, 5, 3], rng)
    x = rng.normal(size=(4, 3))
    loss, _ = distill_loss_grad(model, x, np.zeros(4, dtype=int), softmax_temp(model.forward(x), 1.0), 1.0)
    assert abs(loss.kl_term) < 1e-12


# -- sgd ----------------------------------------------------------------------

def _const_grads(model, value):
    return Gradients([np.full_like(w, value) for w in model.weights], [np.full_like(b, value) for b in model.biases])


def test_sgd_examples():
    model = DenseModel([1, 1], [np.array([[1.0]])], [np.array([1.0])])
    sgd_step(model, _const_grads(model, 2.0), 0.1)
    assert model.weights[0][0, 0] == pytest.approx(0.8)
    before = model.flat_params()
    sgd_step(model, _const_grads(model, 5.0), 0.0)
    assert np.array_equal(model.flat_params(), before)


def test_sgd_two_steps_equal_one_double_step():
    rng = np.random.default_rng(0)
    a = DenseModel.initialize([3, 4, 2], rng)
    b = a.copy()
    g = _const_grads(a, 0.25)
    sgd_step(sgd_step(a, g, 0.01), g, 0.01)
    sgd_step(b, g, 0.02)
    np.testing.assert_allclose(a.flat_params(), b.flat_params(), atol=1e-15)


def test_sgd_shape_mismatch():
    model = DenseModel.zeros([3, 2])
    with pytest.raises(ShapeError):
        sgd_step(model, _const_grads(DenseModel.zeros([4, 2]), 1.0), 0.1)


def test_forward_backward_sgd_are_deterministic():
    def trial():
        rng = np.random.default_rng(11)
        model = DenseModel.initialize([4, 8, 3], rng)
        x, y = rng.normal(size=(10, 4)), rng.integers(0, 3, 10)
        for _ in range(5):
            sgd_step(model, ce_loss_grad(model, x, y)[1], 0.05)
        return model.to_text()
    assert trial() == trial()


# -- serialization ------------------------------------------------------------

@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_text_round_trip_is_bit_exact(seed):
    model = DenseModel.initialize([5, 7, 3], np.random.default_rng(seed))
    back = DenseModel.from_text(model.to_text())
    assert back.layer_dims == model.layer_dims
    assert np.array_equal(back.flat_params(), model.flat_params())


def test_save_load(tmp_path):
    model = DenseModel.initialize([2, 3], np.random.default_rng(0))
    model.save(tmp_path / "m.txt")
    assert (tmp_path / "m.txt").read_text().startswith("layer_dims 2 3\n")
    assert np.array_equal(DenseModel.load(tmp_path / "m.txt").flat_params(), model.flat_params())
