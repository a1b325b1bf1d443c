"""Discrete optimal transport between two groups and the barycenter repair.

The transportation LP with uniform marginals is solved exactly as an integer
min-cost flow: row ``i`` supplies ``n1`` units and column ``j`` demands
``n0`` units, so ``gamma = flow / (n0 * n1)``. Flow is pushed by successive
shortest paths with node potentials (dense Dijkstra). A final pass cancels
cycles in the support so the returned plan is a vertex of the polytope.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .data import DataError, Dataset, GroupedData, split_by_group


@dataclass(frozen=True)
class CostMatrix:
    entries: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.entries, dtype=float)
        if c.ndim != 2 or 0 in c.shape:
            raise ValueError("cost matrix must be a non-empty 2-D array")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost matrix entries must be finite")
        object.__setattr__(self, "entries", c)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class TransportPlan:
    """Optimal coupling plus the dual potentials certifying it.

    ``u[i] + v[j] <= c[i, j]`` everywhere, with equality on the support.
    ``flow`` is the integer plan on the ``n0 * n1`` mass scale.
    """

    gamma: np.ndarray
    flow: np.ndarray
    cost: float
    u: np.ndarray
    v: np.ndarray

    @property
    def n0(self) -> int:
        return self.gamma.shape[0]

    @property
    def n1(self) -> int:
        return self.gamma.shape[1]


@dataclass(frozen=True)
class RepairMap:
    group: int
    anchors_src: np.ndarray
    anchors_dst: np.ndarray
    weights: tuple[float, float]

    def __post_init__(self) -> None:
        if self.anchors_src.shape != self.anchors_dst.shape:
            raise ValueError("anchor source and destination shapes differ")
        w0, w1 = self.weights
        if w0 < 0 or w1 < 0 or abs(w0 + w1 - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")

    @property
    def n(self) -> int:
        return self.anchors_src.shape[0]


def cost_matrix(g: GroupedData, cols: Sequence[int] | None = None) -> CostMatrix:
    """Squared Euclidean distances between group-0 rows and group-1 rows."""
    if cols is None:
        a, b = g.group0, g.group1
    else:
        cols = list(cols)
        if not cols:
            raise DataError("empty column subset")
        a, b = g.group0[:, cols], g.group1[:, cols]
    out = np.empty((a.shape[0], b.shape[0]))
    # row blocks keep the temporary (rows, n1, d) array small
    step = max(1, 2_000_000 // max(1, b.shape[0] * a.shape[1]))
    for lo in range(0, a.shape[0], step):
        diff = a[lo:lo + step, None, :] - b[None, :, :]
        out[lo:lo + step] = (diff * diff).sum(axis=-1)
    return CostMatrix(out)


@numba.njit(cache=True)
def _ssp_transport(C, supply, demand):
    n0, n1 = C.shape
    flow = np.zeros((n0, n1), dtype=np.int64)
    pr = np.zeros(n0)
    pc = np.zeros(n1)
    # start from a feasible dual: pc[j] = min_i C[i, j]
    for j in range(n1):
        m = C[0, j]
        for i in range(1, n0):
            if C[i, j] < m:
                m = C[i, j]
        pc[j] = m
    sup = supply.copy()
    dem = demand.copy()
    remaining = sup.sum()
    inf = np.inf
    dr = np.empty(n0)
    dc = np.empty(n1)
    done_r = np.empty(n0, dtype=np.bool_)
    done_c = np.empty(n1, dtype=np.bool_)
    pred_c = np.empty(n1, dtype=np.int64)   # row feeding column j
    pred_r = np.empty(n0, dtype=np.int64)   # column feeding row i via a reverse arc, -1 = source
    while remaining > 0:
        for i in range(n0):
            dr[i] = 0.0 if sup[i] > 0 else inf
            done_r[i] = False
            pred_r[i] = -1
        for j in range(n1):
            dc[j] = inf
            done_c[j] = False
            pred_c[j] = -1
        target = -1
        dist_t = 0.0
        while True:
            best = inf
            bi = -1
            side = 0
            for i in range(n0):
                if not done_r[i] and dr[i] < best:
                    best = dr[i]
                    bi = i
                    side = 0
            for j in range(n1):
                if not done_c[j] and dc[j] < best:
                    best = dc[j]
                    bi = j
                    side = 1
            if bi < 0:
                break
            if side == 0:
                i = bi
                done_r[i] = True
                base = dr[i] + pr[i]
                for j in range(n1):
                    if not done_c[j]:
                        rc = C[i, j] + base - pc[j]
                        if rc < dr[i]:
                            rc = dr[i]
                        if rc < dc[j]:
                            dc[j] = rc
                            pred_c[j] = i
            else:
                j = bi
                done_c[j] = True
                if dem[j] > 0:
                    target = j
                    dist_t = dc[j]
                    break
                for i in range(n0):
                    if flow[i, j] > 0 and not done_r[i]:
                        rc = dc[j] - C[i, j] - pr[i] + pc[j]
                        if rc < dc[j]:
                            rc = dc[j]
                        if rc < dr[i]:
                            dr[i] = rc
                            pred_r[i] = j
        # potentials: clip labels at the target distance
        for i in range(n0):
            pr[i] += min(dr[i], dist_t)
        for j in range(n1):
            pc[j] += min(dc[j], dist_t)
        # bottleneck along the path
        j = target
        amount = dem[j]
        while True:
            i = pred_c[j]
            jj = pred_r[i]
            if jj < 0:
                if sup[i] < amount:
                    amount = sup[i]
                break
            if flow[i, jj] < amount:
                amount = flow[i, jj]
            j = jj
        j = target
        while True:
            i = pred_c[j]
            flow[i, j] += amount
            jj = pred_r[i]
            if jj < 0:
                sup[i] -= amount
                break
            flow[i, jj] -= amount
            j = jj
        dem[target] -= amount
        remaining -= amount
    return flow, pr, pc


def _cancel_support_cycles(flow: np.ndarray) -> np.ndarray:
    """Push flow around cycles of the support until it is a forest.

    Every support arc has zero reduced cost at optimality, so this keeps the
    plan optimal while reducing it to a basic (vertex) solution.
    """
    flow = flow.copy()
    n0, n1 = flow.shape
    while True:
        rows, cols = np.nonzero(flow)
        adj: dict[int, list[int]] = {}
        for i, j in zip(rows.tolist(), cols.tolist()):
            adj.setdefault(i, []).append(n0 + j)
            adj.setdefault(n0 + j, []).append(i)
        cycle = _find_cycle(adj)
        if cycle is None:
            return flow
        # alternate +/-; nodes alternate row/col
        arcs = []
        for a, b in zip(cycle, cycle[1:] + cycle[:1]):
            i, j = (a, b - n0) if a < n0 else (b, a - n0)
            arcs.append((i, j))
        minus = arcs[1::2]
        amount = min(flow[i, j] for i, j in minus)
        for k, (i, j) in enumerate(arcs):
            flow[i, j] += amount if k % 2 == 0 else -amount


def _find_cycle(adj: dict[int, list[int]]) -> list[int] | None:
    parent: dict[int, int] = {}
    for root in adj:
        if root in parent:
            continue
        parent[root] = -1
        stack = [(root, iter(adj[root]))]
        while stack:
            node, it = stack[-1]
            advanced = False
            for nxt in it:
                if nxt == parent[node]:
                    continue
                if nxt in parent:
                    # back edge closes a cycle: walk up from node to nxt
                    path = [node]
                    while path[-1] != nxt:
                        path.append(parent[path[-1]])
                        if path[-1] == -1:
                            break
                    if path[-1] == nxt:
                        return path[::-1]
                    continue
                parent[nxt] = node
                stack.append((nxt, iter(adj[nxt])))
                advanced = True
                break
            if not advanced:
                stack.pop()
    return None


def solve_transport(c: CostMatrix, mass0: np.ndarray | None = None,
                    mass1: np.ndarray | None = None) -> TransportPlan:
    """Exact optimal plan between two empirical measures.

    ``mass0``/``mass1`` are optional positive integer multiplicities (atoms
    with repeated points); by default every atom has mass one. The marginals
    are then ``mass0 / sum(mass0)`` and ``mass1 / sum(mass1)``.
    """
    C = c.entries
    n0, n1 = C.shape
    m0 = np.ones(n0, np.int64) if mass0 is None else np.asarray(mass0, np.int64)
    m1 = np.ones(n1, np.int64) if mass1 is None else np.asarray(mass1, np.int64)
    if m0.shape != (n0,) or m1.shape != (n1,) or (m0 <= 0).any() or (m1 <= 0).any():
        raise ValueError("masses must be positive integers, one per atom")
    t0, t1 = int(m0.sum()), int(m1.sum())
    flow, pr, pc = _ssp_transport(C, m0 * t1, m1 * t0)
    flow = _cancel_support_cycles(flow)
    total = float(t0) * float(t1)
    gamma = flow / total
    cost = float((C * gamma).sum())
    return TransportPlan(gamma, flow, cost, -pr, pc)


def barycentric_pairs(plan: TransportPlan, g: GroupedData,
                      weights: tuple[float, float] = (0.5, 0.5),
                      cols: Sequence[int] | None = None) -> tuple[RepairMap, RepairMap]:
    """Per-point images under the barycentric projection of ``plan``.

    Each group-0 point is sent to the plan-weighted average of the barycenter
    atoms ``w0 * x0_i + w1 * x1_j`` it is coupled with; symmetrically for
    group 1 over columns.
    """
    a = g.group0 if cols is None else g.group0[:, list(cols)]
    b = g.group1 if cols is None else g.group1[:, list(cols)]
    gam = plan.gamma
    if gam.shape != (a.shape[0], b.shape[0]):
        raise ValueError("plan shape does not match group sizes")
    w0, w1 = weights
    row_mass = gam.sum(axis=1)
    col_mass = gam.sum(axis=0)
    if (row_mass <= 0).any() or (col_mass <= 0).any():
        raise ValueError("plan has an empty row or column")
    cond1 = (gam @ b) / row_mass[:, None]         # E[x1 | x0_i]
    cond0 = (gam.T @ a) / col_mass[:, None]       # E[x0 | x1_j]
    dst0 = w0 * a + w1 * cond1
    dst1 = w0 * cond0 + w1 * b
    return RepairMap(0, a.copy(), dst0, (w0, w1)), RepairMap(1, b.copy(), dst1, (w0, w1))


def _collapse(points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    uniq, inverse, counts = np.unique(points, axis=0, return_inverse=True, return_counts=True)
    return uniq, inverse.reshape(-1), counts


def group_weights(g: GroupedData, mode: str = "empirical") -> tuple[float, float]:
    if mode == "empirical":
        n = g.n0 + g.n1
        return g.n0 / n, g.n1 / n
    if mode == "half":
        return 0.5, 0.5
    raise ValueError(f"unknown weights mode {mode!r}")


def total_repair(ds: Dataset, cols: Sequence[str | int] | None = None,
                 weights: tuple[float, float] | str = "empirical"
                 ) -> tuple[Dataset, RepairMap, RepairMap]:
    """Replace the selected columns of every row by its barycenter image.

    Identical points within a group are collapsed to one atom before solving
    (and re-expanded afterwards), so they always share a repaired value.
    """
    if cols is not None and len(cols) == 0:
        raise DataError("empty column subset")
    idx = ds.column_index(cols)
    g = split_by_group(ds)
    w = group_weights(g, weights) if isinstance(weights, str) else tuple(map(float, weights))
    a, b = g.group0[:, idx], g.group1[:, idx]
    ua, inv_a, ca = _collapse(a)
    ub, inv_b, cb = _collapse(b)
    ug = GroupedData(ua, ub, np.arange(len(ua)), np.arange(len(ub)))
    plan = solve_transport(cost_matrix(ug), ca, cb)
    rm0u, rm1u = barycentric_pairs(plan, ug, w)
    rm0 = RepairMap(0, a.copy(), rm0u.anchors_dst[inv_a], w)
    rm1 = RepairMap(1, b.copy(), rm1u.anchors_dst[inv_b], w)

    features = ds.features.copy()
    features[np.ix_(g.row_index0, idx)] = rm0.anchors_dst
    features[np.ix_(g.row_index1, idx)] = rm1.anchors_dst
    return ds.with_features(features), rm0, rm1
