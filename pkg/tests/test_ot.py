import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from extr.data import Dataset, DataError, GroupedData
from extr.ot import CostMatrix, barycentric_pairs, cost_matrix, solve_transport, total_repair


def _grouped(a, b):
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    return GroupedData(a, b, np.arange(len(a)), np.arange(len(a), len(a) + len(b)))


def _lp_optimum(C):
    n0, n1 = C.shape
    A = np.zeros((n0 + n1, n0 * n1))
    for i in range(n0):
        A[i, i * n1:(i + 1) * n1] = 1
    for j in range(n1):
        A[n0 + j, j::n1] = 1
    b = np.r_[np.full(n0, 1 / n0), np.full(n1, 1 / n1)]
    res = linprog(C.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    return res.fun, res.x.reshape(n0, n1)


def test_cost_matrix_identity_and_scalar():
    X = np.array([[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]])
    assert np.all(np.diag(cost_matrix(_grouped(X, X)).entries) == 0)
    assert cost_matrix(_grouped([[0.0]], [[3.0]])).entries.tolist() == [[9.0]]


def test_cost_matrix_matches_loop(rng):
    a, b = rng.standard_normal((5, 3)), rng.standard_normal((4, 3))
    C = cost_matrix(_grouped(a, b)).entries
    for i in range(5):
        for j in range(4):
            assert C[i, j] == pytest.approx(sum((a[i, k] - b[j, k]) ** 2 for k in range(3)), abs=1e-12)


def test_1d_sorted_is_monotone_matching(rng):
    a = np.sort(rng.standard_normal(7))[:, None]
    b = np.sort(rng.standard_normal(7) + 1)[:, None]
    plan = solve_transport(cost_matrix(_grouped(a, b)))
    assert np.allclose(plan.gamma, np.eye(7) / 7)
    assert plan.cost == pytest.approx(np.mean((a - b) ** 2), abs=1e-12)


def test_single_source_row():
    plan = solve_transport(cost_matrix(_grouped([[0.0]], [[1.0], [2.0], [5.0]])))
    assert np.allclose(plan.gamma, [[1 / 3, 1 / 3, 1 / 3]])


def test_square_matches_best_permutation(rng):
    for _ in range(20):
        a, b = rng.random((4, 2)), rng.random((4, 2))
        C = cost_matrix(_grouped(a, b)).entries
        plan = solve_transport(CostMatrix(C))
        best = min(sum(C[i, p[i]] for i in range(4)) for p in itertools.permutations(range(4))) / 4
        assert plan.cost == pytest.approx(best, abs=1e-12)


def test_rectangular_matches_lp(rng):
    for _ in range(20):
        a, b = rng.random((5, 2)), rng.random((3, 2))
        c = cost_matrix(_grouped(a, b))
        plan = solve_transport(c)
        assert plan.cost == pytest.approx(_lp_optimum(c.entries)[0], abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_plan_feasible_and_dual_certified(n0, n1, seed):
    r = np.random.default_rng(seed)
    c = cost_matrix(_grouped(r.standard_normal((n0, 2)), r.standard_normal((n1, 2))))
    plan = solve_transport(c)
    assert np.allclose(plan.gamma.sum(axis=1), 1 / n0)
    assert np.allclose(plan.gamma.sum(axis=0), 1 / n1)
    assert (plan.gamma >= 0).all()
    slack = c.entries - plan.u[:, None] - plan.v[None, :]
    tol = 1e-9 * max(1.0, np.abs(c.entries).max())
    assert slack.min() >= -tol
    assert np.all(np.abs(slack[plan.gamma > 0]) <= tol)
    # a vertex plan has at most n0 + n1 - 1 positive entries
    assert (plan.gamma > 0).sum() <= n0 + n1 - 1


def test_barycentric_identity_plan():
    X = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, -1.0]])
    g = _grouped(X, X)
    plan = solve_transport(cost_matrix(g))
    rm0, rm1 = barycentric_pairs(plan, g, (0.5, 0.5))
    assert np.allclose(rm0.anchors_dst, X) and np.allclose(rm1.anchors_dst, X)


def test_barycentric_1d_midpoints(rng):
    a = np.sort(rng.standard_normal(6))[:, None]
    b = np.sort(rng.standard_normal(6) * 2)[:, None]
    g = _grouped(a, b)
    rm0, rm1 = barycentric_pairs(solve_transport(cost_matrix(g)), g, (0.5, 0.5))
    assert np.allclose(rm0.anchors_dst, (a + b) / 2)
    assert np.allclose(rm1.anchors_dst, (a + b) / 2)


def test_barycentric_2x3_from_lp_plan(rng):
    a, b = rng.standard_normal((2, 2)), rng.standard_normal((3, 2))
    g = _grouped(a, b)
    _, gam = _lp_optimum(cost_matrix(g).entries)
    rm0, rm1 = barycentric_pairs(solve_transport(cost_matrix(g)), g, (0.4, 0.6))
    for i in range(2):
        want = sum(gam[i, j] * (0.4 * a[i] + 0.6 * b[j]) for j in range(3)) / gam[i].sum()
        assert np.allclose(rm0.anchors_dst[i], want, atol=1e-9)
    for j in range(3):
        want = sum(gam[i, j] * (0.4 * a[i] + 0.6 * b[j]) for i in range(2)) / gam[:, j].sum()
        assert np.allclose(rm1.anchors_dst[j], want, atol=1e-9)


def test_total_repair_rejects_empty_cols(e1a):
    with pytest.raises(DataError):
        total_repair(e1a, [])


def test_total_repair_fixed_point():
    X = np.array([[0.0, 1.0], [2.0, 0.5], [1.0, -1.0]])
    ds = Dataset(np.vstack([X, X]), ("a", "b"), [0, 0, 0, 1, 1, 1])
    out, _, _ = total_repair(ds)
    assert np.allclose(out.features, ds.features)


def test_total_repair_equalizes_group_means(e1a):
    out, rm0, rm1 = total_repair(e1a)
    assert rm0.weights == (0.5, 0.5)
    m0 = out.features[e1a.protected == 0].mean(axis=0)
    m1 = out.features[e1a.protected == 1].mean(axis=0)
    assert np.allclose(m0, m1, atol=1e-9)


def test_total_repair_column_subset_only_touches_subset(e1a):
    out, _, _ = total_repair(e1a, ["x2"])
    changed = np.any(out.features != e1a.features, axis=0)
    assert changed.tolist() == [False, True, False, False, False]


def test_duplicate_points_share_image():
    X = np.array([[0.0], [0.0], [1.0], [3.0], [2.0], [5.0]])
    ds = Dataset(X, ("x",), [0, 0, 0, 1, 1, 1])
    out, _, _ = total_repair(ds)
    assert out.features[0, 0] == out.features[1, 0]
