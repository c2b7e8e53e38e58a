import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import consistent_system, hyperplane_gap
from rkaccel.dense import build_matrix
from rkaccel.precond import (
    CLAMP_EPS,
    HistoryBuffer,
    adagrad_accumulate,
    adagrad_matrix,
    adagrad_precond,
    collect_history,
    fit_diagonal,
    objective_F,
)


def random_history(seed, m=6, n=4):
    A, b, _ = consistent_system(m, n, seed)
    rng = np.random.default_rng(seed)
    h = collect_history(A, b, rng.standard_normal(n) * 3, rng.permutation(m))
    return A, b, h


def quadratic_oracle(h, A, b, alpha):
    """Minimise F by dense least squares on the stacked diagonal blocks."""
    blocks, targets = [], []
    for t in range(len(h)):
        i = h.rows[t]
        a = A.data[i]
        xp = h.x_prev[t]
        coef = (b[i] - sum(a[q] * xp[q] for q in range(A.n))) / sum(v * v for v in a)
        blocks.append(np.diag(coef * a))
        targets.append(h.x_far[t] - xp)
    blocks.append(np.sqrt(alpha) * np.eye(A.n))
    targets.append(np.sqrt(alpha) * np.ones(A.n))
    s, *_ = np.linalg.lstsq(np.vstack(blocks), np.concatenate(targets), rcond=None)
    return s


def test_history_length_and_rows():
    A, b, h = random_history(0, m=9, n=5)
    assert len(h) == 8
    np.testing.assert_array_equal(h.ks, np.arange(2, 10))
    np.testing.assert_array_equal(h.rows, h.order[h.ks - 1])


def test_history_fixed_point():
    A, b, x_true = consistent_system(8, 5, 1)
    h = collect_history(A, b, x_true, np.arange(8))
    np.testing.assert_allclose(h.x_far - h.x_prev, 0.0, atol=1e-13)
    np.testing.assert_allclose(h.x_prev, np.broadcast_to(x_true, h.x_prev.shape), atol=1e-13)


def test_history_orthogonal_rows_hand_trace():
    A = build_matrix(np.eye(2))
    b = np.array([1.0, 2.0])
    h = collect_history(A, b, np.zeros(2), [0, 1])
    # x1 = (1, 0), x2 = x3 = x4 = (1, 2); single pair k = 2 on row 1
    assert len(h) == 1 and h.rows[0] == 1
    np.testing.assert_array_equal(h.x_prev[0], [1.0, 0.0])
    np.testing.assert_array_equal(h.x_far[0], [1.0, 2.0])
    np.testing.assert_array_equal(h.x_last, [1.0, 2.0])


def test_history_points_lie_on_their_hyperplanes():
    A, b, h = random_history(3, m=12, n=6)
    for t, k in enumerate(h.ks):
        # x_{k-1} was produced by row R(k-1); x_{k+m} by row R(k)
        assert hyperplane_gap(A, b, h.order[k - 2], h.x_prev[t]) <= 1e-8
        assert hyperplane_gap(A, b, h.order[k - 1], h.x_far[t]) <= 1e-8


def test_history_rejects_bad_order():
    A, b, _ = consistent_system(4, 3, 0)
    with pytest.raises(ValueError):
        collect_history(A, b, np.zeros(3), [0, 1, 1, 2])


def test_fit_zero_residuals_gives_identity():
    A, b, x_true = consistent_system(8, 5, 2)
    h = collect_history(A, b, x_true, np.arange(8))
    fit = fit_diagonal(h, A, b, 1.0)
    np.testing.assert_allclose(fit.s, 1.0, atol=1e-12)


def test_fit_large_regulariser_gives_identity():
    A, b, h = random_history(4)
    fit = fit_diagonal(h, A, b, 1e9)
    np.testing.assert_allclose(fit.s, 1.0, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_fit_matches_quadratic_oracle(seed):
    A, b, h = random_history(seed)
    for alpha in (0.1, 1.0, 7.5):
        fit = fit_diagonal(h, A, b, alpha)
        np.testing.assert_allclose(fit.s, quadratic_oracle(h, A, b, alpha), rtol=1e-8, atol=1e-8)


def test_fit_is_no_worse_than_identity():
    for seed in range(10):
        A, b, h = random_history(seed, m=10, n=6)
        fit = fit_diagonal(h, A, b, 0.5)
        assert fit.objective_value <= objective_F(np.ones(A.n), h, A, b, 0.5) + 1e-12
        assert fit.objective_value == pytest.approx(objective_F(fit.s, h, A, b, 0.5))


def test_fit_clamps_to_positive_window():
    # a tiny regulariser lets the unclamped solution go negative
    A = build_matrix([[1.0, 0.2], [0.3, 1.0], [1.0, 1.0]])
    b = np.array([1.0, -2.0, 0.5])
    h = collect_history(A, b, np.array([5.0, -4.0]), [2, 0, 1])
    h.x_far = h.x_prev - 10.0 * (h.x_far - h.x_prev)  # adversarial targets
    fit = fit_diagonal(h, A, b, 1e-6)
    assert np.all(fit.s >= CLAMP_EPS) and np.all(fit.s <= 1 / CLAMP_EPS)


def test_fit_requires_positive_regulariser():
    A, b, h = random_history(0)
    with pytest.raises(ValueError):
        fit_diagonal(h, A, b, 0.0)


def test_subset_selecting_everything_equals_full_fit():
    A, b, h = random_history(6, m=15, n=5)
    full = fit_diagonal(h, A, b, 1.0)
    sub = fit_diagonal(h.with_subset(len(h), np.random.default_rng(0)), A, b, 1.0)
    np.testing.assert_array_equal(full.s, sub.s)


def test_subset_uses_only_selected_pairs():
    A, b, h = random_history(7, m=30, n=5)
    sub = h.with_subset(10, np.random.default_rng(1))
    assert sub.subset_mask.sum() == 10
    sel = sub.selected()
    manual = HistoryBuffer(h.order, h.ks[sel], h.rows[sel], h.x_prev[sel], h.x_far[sel], h.x_last)
    np.testing.assert_allclose(fit_diagonal(sub, A, b, 1.0).s, fit_diagonal(manual, A, b, 1.0).s, rtol=1e-14)


def test_objective_empty_history():
    A = build_matrix([[2.0, 1.0]])
    h = collect_history(A, np.array([1.0]), np.zeros(2), [0])
    assert len(h) == 0
    assert objective_F(np.ones(2), h, A, np.array([1.0]), 3.0) == 0.0
    assert objective_F(np.array([2.0, 0.0]), h, A, np.array([1.0]), 3.0) == pytest.approx(3.0 * 2.0)


def test_fit_is_local_minimum_under_perturbation():
    A, b, h = random_history(8)
    fit = fit_diagonal(h, A, b, 1.0)
    rng = np.random.default_rng(0)
    for _ in range(100):
        d = rng.standard_normal(A.n)
        d *= 1e-3 / np.linalg.norm(d)
        assert fit.objective_value <= objective_F(fit.s + d, h, A, b, 1.0)


def test_objective_gradient_vanishes_at_fit():
    A, b, h = random_history(9)
    fit = fit_diagonal(h, A, b, 1.0)
    step = 1e-6
    grad = np.array(
        [
            (objective_F(fit.s + step * e, h, A, b, 1.0) - objective_F(fit.s - step * e, h, A, b, 1.0)) / (2 * step)
            for e in np.eye(A.n)
        ]
    )
    assert np.linalg.norm(grad) <= 1e-6 * (1 + abs(fit.objective_value))


def test_fit_record_is_json():
    A, b, h = random_history(1)
    rec = json.loads(fit_diagonal(h, A, b, 2.0).to_json())
    assert set(rec) == {"s", "objective_value", "alpha_reg"}
    assert rec["alpha_reg"] == 2.0 and len(rec["s"]) == A.n


# AdaGrad helpers


def test_adagrad_accumulate_zero_gradient():
    acc = np.array([1.0, 2.0])
    np.testing.assert_array_equal(adagrad_accumulate(acc, np.zeros(2)), acc)


def test_adagrad_accumulate_hand_values():
    acc = adagrad_accumulate(adagrad_accumulate(np.zeros(2), [3.0, 0.0]), [0.0, 4.0])
    np.testing.assert_array_equal(np.sqrt(acc), [3.0, 4.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_adagrad_accumulate_order_independent(seed):
    rng = np.random.default_rng(seed)
    grads = rng.integers(-50, 50, size=(8, 3)).astype(float)  # integer squares sum exactly
    fwd, rev = np.zeros(3), np.zeros(3)
    for g in grads:
        fwd = adagrad_accumulate(fwd, g)
    for g in grads[rng.permutation(8)]:
        rev = adagrad_accumulate(rev, g)
    np.testing.assert_array_equal(fwd, rev)


def test_adagrad_matrix_and_precond():
    H = adagrad_matrix(np.zeros(3), 0.5)
    np.testing.assert_array_equal(H, 0.5)
    np.testing.assert_allclose(adagrad_precond(H, 0.2), 0.2 + 2.0)
    C = adagrad_precond(adagrad_matrix([9.0, 16.0], 1.0), 0.0)
    np.testing.assert_allclose(C, [0.25, 0.2])
    assert np.all(adagrad_precond(adagrad_matrix([1e12, 0.0], 1e-8), 0.0) > 0)


def test_adagrad_parameter_checks():
    with pytest.raises(ValueError):
        adagrad_matrix(np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        adagrad_precond(np.ones(2), -0.1)
