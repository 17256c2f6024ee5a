import numpy as np
import pytest

from tccalign import diff
from tccalign.diff import (ContractError, ShapeError, Tape, Tensor, backward,
                           constant, grad_check)


def test_pairwise_sq_dist_identity():
    assert diff.pairwise_sq_dist([[0.0]], [[0.0]]).data.tolist() == [[0.0]]


def test_pairwise_sq_dist_forced_arithmetic():
    out = diff.pairwise_sq_dist([[1.0, 2.0]], [[3.0, 4.0]])
    assert out.data.tolist() == [[8.0]]


def test_pairwise_sq_dist_matches_scalar_double_loop():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 2))
    b = rng.normal(size=(4, 2))
    out = diff.pairwise_sq_dist(a, b).data
    for i in range(3):
        for j in range(4):
            expect = sum((a[i, c] - b[j, c]) ** 2 for c in range(2))
            assert abs(out[i, j] - expect) < 1e-12


def test_pairwise_sq_dist_swap_symmetry():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(5, 3)), rng.normal(size=(6, 3))
    d1 = diff.pairwise_sq_dist(a, b).data
    d2 = diff.pairwise_sq_dist(b, a).data
    assert np.max(np.abs(d1 - d2.T)) < 1e-12


def test_pairwise_sq_dist_shape_error():
    with pytest.raises(ShapeError):
        diff.pairwise_sq_dist([[1.0, 2.0]], [[1.0, 2.0, 3.0]])


def test_softmax_symmetry_and_singleton():
    assert diff.softmax([0.0, 0.0]).data.tolist() == [0.5, 0.5]
    assert diff.softmax([123.456]).data.tolist() == [1.0]


def test_softmax_large_logits_no_overflow():
    # extended-precision oracle via mpmath
    import mpmath
    x = [1000.0, 0.0]
    out = diff.softmax(x).data
    es = [mpmath.e ** mpmath.mpf(v) for v in x]
    total = sum(es)
    expect = [float(e / total) for e in es]
    assert np.all(np.isfinite(out))
    assert abs(out[0] - expect[0]) < 1e-15
    assert abs(out[1] - expect[1]) < 1e-15


def test_softmax_shift_invariance():
    rng = np.random.default_rng(2)
    x = rng.normal(size=7)
    s1 = diff.softmax(x).data
    s2 = diff.softmax(x + 123.25).data
    assert np.max(np.abs(s1 - s2)) < 1e-12


def test_softmax_empty_is_shape_error():
    with pytest.raises(ShapeError):
        diff.softmax(np.zeros(0))


def test_backward_constant_loss_gives_zero_grads():
    tape = Tape()
    p = tape.leaf([1.0, 2.0])
    loss = diff.sum_all(diff.mul(constant([3.0, 4.0]), constant([1.0, 1.0])))
    # loss does not involve p; it is not even on the tape, so build one that is
    loss = diff.mul(diff.sum_all(diff.mul(p, constant([0.0, 0.0]))), constant(1.0))
    grads = backward(tape, loss)
    assert np.array_equal(grads[p], np.zeros(2))


def test_backward_unreached_leaf_reports_zeros():
    tape = Tape()
    p = tape.leaf([1.0, 2.0])
    q = tape.leaf([5.0])
    loss = diff.sum_all(diff.mul(p, p))
    grads = backward(tape, loss)
    assert np.array_equal(grads[p], [2.0, 4.0])
    assert np.array_equal(grads[q], [0.0])


def test_backward_quadratic():
    tape = Tape()
    p = tape.leaf([1.0, 2.0])
    grads = backward(tape, diff.sum_all(diff.mul(p, p)))
    assert grads[p].tolist() == [2.0, 4.0]


def test_backward_requires_scalar_loss():
    tape = Tape()
    p = tape.leaf([1.0, 2.0])
    with pytest.raises(ContractError):
        backward(tape, diff.mul(p, p))


def test_grad_check_quadratic_passes():
    rep = grad_check(lambda t, ls: diff.sum_all(diff.mul(ls[0], ls[0])),
                     [np.array([1.0, 2.0, 3.0])], tol=1e-6)
    assert rep.passed


def test_grad_check_detects_wrong_gradient():
    # hand-build an op whose vjp is deliberately off by 2x
    def broken_square_sum(tape, leaves):
        (p,) = leaves
        out = np.asarray((p.data ** 2).sum())
        bad = Tensor(out, tape=tape, requires_grad=True, parents=(p,),
                     vjp=lambda g: ((p, 4.0 * g * p.data),))
        tape.nodes.append(bad)
        return bad

    rep = grad_check(broken_square_sum, [np.array([1.0, 2.0])], tol=1e-4)
    assert not rep.passed


@pytest.mark.parametrize("seed", range(6))
def test_primitive_gradients_match_finite_differences(seed):
    """Every primitive, random shapes up to 8x8, rel error < 1e-4."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    m = int(rng.integers(1, 9))
    a = rng.normal(size=(n, m))
    b = rng.normal(size=(n, m))
    w = rng.normal(size=(m, n))
    vec = rng.normal(size=m)
    pos = np.abs(rng.normal(size=(n, m))) + 0.5

    cases = {
        "add": (lambda t, ls: diff.sum_all(diff.add(ls[0], ls[1])), [a, b]),
        "sub": (lambda t, ls: diff.sum_all(diff.sub(ls[0], ls[1])), [a, b]),
        "mul": (lambda t, ls: diff.sum_all(diff.mul(ls[0], ls[1])), [a, b]),
        "div": (lambda t, ls: diff.sum_all(diff.div(ls[0], ls[1])), [a, pos]),
        "scalar_mix": (lambda t, ls: diff.sum_all(diff.mul(ls[0], ls[1])),
                       [a, np.asarray(0.7)]),
        "neg": (lambda t, ls: diff.sum_all(diff.neg(ls[0])), [a]),
        "exp": (lambda t, ls: diff.sum_all(diff.exp(ls[0])), [a]),
        "log": (lambda t, ls: diff.sum_all(diff.log(ls[0])), [pos]),
        "relu": (lambda t, ls: diff.sum_all(diff.relu(ls[0])), [a + 0.05]),
        "clamp_min": (lambda t, ls: diff.sum_all(diff.clamp_min(ls[0], 0.1)), [pos]),
        "matmul": (lambda t, ls: diff.sum_all(diff.matmul(ls[0], ls[1])), [a, w]),
        "add_rowvec": (lambda t, ls: diff.sum_all(diff.add_rowvec(ls[0], ls[1])),
                       [a, vec]),
        "pairwise": (lambda t, ls: diff.sum_all(
            diff.mul(diff.pairwise_sq_dist(ls[0], ls[1]), constant(rng.normal(size=(n, n))))),
            [a, b.copy()]),
        "softmax": (lambda t, ls: diff.sum_all(
            diff.mul(diff.softmax(ls[0]), constant(rng.normal(size=m)))), [vec]),
        "softmax_rows": (lambda t, ls: diff.sum_all(
            diff.mul(diff.softmax_rows(ls[0]), constant(rng.normal(size=(n, m))))), [a]),
        "weighted_sum": (lambda t, ls: diff.sum_all(diff.weighted_sum(ls[0], ls[1])),
                         [a, rng.normal(size=n)]),
        "mean": (lambda t, ls: diff.mean_all(ls[0]), [a]),
        "row_sums": (lambda t, ls: diff.sum_all(
            diff.mul(diff.row_sums(ls[0]), constant(rng.normal(size=n)))), [a]),
        "gather_rows": (lambda t, ls: diff.sum_all(
            diff.gather_rows(ls[0], [0, n - 1, 0])), [a]),
        "pick": (lambda t, ls: diff.pick(ls[0], m - 1), [vec]),
        "reshape": (lambda t, ls: diff.sum_all(
            diff.mul(diff.reshape(ls[0], (m, n)), constant(rng.normal(size=(m, n))))), [a]),
        "logsumexp": (lambda t, ls: diff.logsumexp(ls[0]), [vec]),
        "softplus": (lambda t, ls: diff.sum_all(diff.softplus(ls[0])), [a]),
    }
    for name, (f, params) in cases.items():
        rep = grad_check(f, params, tol=1e-4)
        assert rep.passed, f"{name}: {rep}"


def test_gradient_accumulates_over_multiple_uses():
    tape = Tape()
    p = tape.leaf([3.0])
    loss = diff.sum_all(diff.add(diff.mul(p, p), p))  # x^2 + x -> 2x + 1
    grads = backward(tape, loss)
    assert grads[p].tolist() == [7.0]


def test_constants_stay_off_tape():
    tape = Tape()
    p = tape.leaf([1.0])
    c = diff.mul(constant([2.0]), constant([3.0]))
    assert c.tape is None
    assert len(tape.nodes) == 1
    out = diff.mul(p, c)
    assert out.tape is tape


def test_mixing_tapes_raises():
    t1, t2 = Tape(), Tape()
    p1, p2 = t1.leaf([1.0]), t2.leaf([2.0])
    with pytest.raises(ContractError):
        diff.add(p1, p2)


def test_non_finite_input_rejected():
    with pytest.raises(ContractError):
        constant([np.inf])
    with pytest.raises(ContractError):
        Tape().leaf([np.nan])


def test_operator_sugar():
    tape = Tape()
    p = tape.leaf([2.0])
    loss = ((p * p + 1.0) / 2.0 - 0.5).sum()
    grads = backward(tape, loss)
    assert grads[p].tolist() == [2.0]
    assert loss.item() == pytest.approx(2.0)
