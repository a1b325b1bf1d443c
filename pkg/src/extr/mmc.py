"""Minimum mean cycle of a complete weighted digraph.

Two solvers share the integer-scaled instance:

* :func:`karp_mcm` - Karp's walk-length dynamic program (reference, fallback).
* :func:`hybrid_mcm` - approximate bisection on the cycle mean where each
  probe value ``delta`` is decided by an assignment problem on the
  node-split bipartite graph (diagonal arcs cost ``delta``), solved by an
  auction phase followed by successive shortest paths.

Reduced costs follow ``c_red[i, j] = c[i, j] - pi1[i] + pi2[j]``. An assignment
state is eps-optimal when every unmatched arc has ``c_red >= -eps`` and every
matched arc has ``c_red <= eps``. For such a complete matching, an identity
matching certifies ``mean >= delta - 2 eps`` for all cycles, while any matched
cycle has ``mean <= delta + 2 eps``; these are exactly the bracket updates.

Reported means are recomputed exactly (``fractions.Fraction``) from the
original costs along the returned cycle.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numba
import numpy as np


@dataclass(frozen=True)
class WeightedDigraph:
    """Complete digraph given by a dense cost matrix; the diagonal is ignored."""

    costs: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.costs, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 2:
            raise ValueError("costs must be a square matrix with n >= 2")
        np.fill_diagonal(c, 0.0)
        if not np.all(np.isfinite(c)):
            raise ValueError("arc costs must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "costs", c)

    @property
    def n(self) -> int:
        return self.costs.shape[0]


@dataclass(frozen=True)
class ScaledInstance:
    int_costs: np.ndarray
    scale: float
    shift: float
    c_bound: int

    @property
    def n(self) -> int:
        return self.int_costs.shape[0]

    exact: bool = True

    @property
    def quantization(self) -> float:
        """Bound on the gap between the scaled optimum's true mean and the true optimum."""
        return 0.0 if self.exact else 1.0 / self.scale


@dataclass(frozen=True)
class CycleResult:
    cycle: tuple[int, ...]
    mean: float
    total: float
    length: int
    mean_exact: Fraction
    solver: str = "karp"
    iterations: int = 0
    fallback: bool = False
    scaled_mean: Fraction | None = None
    bracket: tuple[float, float] | None = None


@dataclass(frozen=True)
class ScalingConfig:
    scale_digits: int = 6
    k: int = 3
    max_iterations: int = 10_000
    trace: bool = False


@dataclass(frozen=True)
class AssignmentInstance:
    """Node-split bipartite assignment problem: ``costs[i, j]`` is arc ``(i, j')``."""

    costs: np.ndarray
    delta: float

    @property
    def n(self) -> int:
        return self.costs.shape[0]


@dataclass
class AssignmentState:
    pi1: np.ndarray
    pi2: np.ndarray
    match: np.ndarray            # N1 -> N2, -1 when unassigned
    eps: float
    delta: float = 0.0
    lb: float = -math.inf
    ub: float = math.inf
    relabels: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.relabels is None:
            self.relabels = np.zeros(len(self.pi1), dtype=np.int64)

    def copy(self) -> "AssignmentState":
        return replace(self, pi1=self.pi1.copy(), pi2=self.pi2.copy(),
                       match=self.match.copy(), relabels=self.relabels.copy())

    @property
    def owner(self) -> np.ndarray:
        own = np.full(len(self.pi2), -1, dtype=np.int64)
        m = self.match >= 0
        own[self.match[m]] = np.flatnonzero(m)
        return own

    def reduced_costs(self, inst: AssignmentInstance) -> np.ndarray:
        return inst.costs - self.pi1[:, None] + self.pi2[None, :]

    def is_complete(self) -> bool:
        return bool((self.match >= 0).all())

    def is_uniform(self) -> bool:
        return bool((self.match == np.arange(len(self.match))).all())


def _is_integral(c: np.ndarray) -> bool:
    return bool(np.all(c == np.round(c))) and float(np.abs(c).max(initial=0.0)) < 2**50


def scale_instance(g: WeightedDigraph, scale_digits: int = 6) -> ScaledInstance:
    """Shift costs to be non-negative and round them to integers.

    Integer-valued graphs are used as they are (scale 1, exact). Otherwise the
    shifted costs are scaled so the largest becomes ``10**scale_digits``.
    """
    off = ~np.eye(g.n, dtype=bool)
    c = g.costs
    shift = -min(0.0, float(c[off].min()))
    shifted = np.where(off, c + shift, 0.0)
    if _is_integral(c):
        scale, exact = 1.0, True
    else:
        top = float(shifted.max())
        scale = 10.0 ** scale_digits / top if top > 0 else 1.0
        exact = False
    ints = np.round(shifted * scale).astype(np.int64)
    np.fill_diagonal(ints, 0)
    c_bound = 1 + int(np.abs(ints).max())
    return ScaledInstance(ints, scale, shift, c_bound, exact)


def build_interp_graph(rm) -> WeightedDigraph:
    """Arc costs ``<x_i, y_i - y_j>`` over anchors with distinct images ``y``.

    Anchors sharing an image form one node; the arc cost out of such a node is
    the minimum over its members, which keeps every member's constraint.
    Use :func:`image_groups` to recover the node membership.
    """
    groups, images = image_groups(rm.anchors_dst)
    if len(groups) < 2:
        raise ValueError("need at least two distinct anchor images")
    src = rm.anchors_src
    m = len(groups)
    costs = np.empty((m, m))
    for a, members in enumerate(groups):
        # (members, m) matrix of <x_member, y_a - y_b>
        vals = src[members] @ (images[a][None, :] - images).T
        costs[a] = vals.min(axis=0)
    np.fill_diagonal(costs, 0.0)
    return WeightedDigraph(costs)


def image_groups(dst: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Group anchor rows by identical image, in order of first appearance."""
    _, first, inverse = np.unique(dst, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(first)
    groups = [np.flatnonzero(inverse == u) for u in order]
    images = dst[[g[0] for g in groups]]
    return groups, images


# ---------------------------------------------------------------------------
# exact helpers


def cycle_total_exact(costs: np.ndarray, cycle: tuple[int, ...]) -> Fraction:
    return sum((Fraction(float(costs[a, b])) for a, b in zip(cycle, cycle[1:])), Fraction(0))


def cycle_mean_exact(costs: np.ndarray, cycle: tuple[int, ...]) -> Fraction:
    return cycle_total_exact(costs, cycle) / (len(cycle) - 1)


def _result(g: WeightedDigraph, s: ScaledInstance, cycle: tuple[int, ...], **kw) -> CycleResult:
    total = cycle_total_exact(g.costs, cycle)
    length = len(cycle) - 1
    mean = total / length
    scaled = Fraction(int(sum(int(s.int_costs[a, b]) for a, b in zip(cycle, cycle[1:]))), length)
    return CycleResult(cycle, float(mean), float(total), length, mean, scaled_mean=scaled, **kw)


def _close(cycle: list[int]) -> tuple[int, ...]:
    # rotate so the smallest vertex leads; makes results canonical
    k = cycle.index(min(cycle))
    rot = cycle[k:] + cycle[:k]
    return tuple(rot + rot[:1])


def permutation_cycles(match: np.ndarray) -> list[tuple[int, ...]]:
    """Non-trivial cycles of a permutation ``i -> match[i]``, each closed."""
    seen = np.zeros(len(match), dtype=bool)
    out = []
    for start in range(len(match)):
        if seen[start] or match[start] == start:
            continue
        cyc = []
        v = start
        while not seen[v]:
            seen[v] = True
            cyc.append(v)
            v = int(match[v])
        out.append(_close(cyc))
    return out


def enumerate_simple_cycles(n: int):
    """Every simple directed cycle of the complete digraph on ``n`` vertices."""
    for k in range(2, n + 1):
        for subset in itertools.combinations(range(n), k):
            head, rest = subset[0], subset[1:]
            for perm in itertools.permutations(rest):
                yield (head, *perm, head)


def brute_force_mcm(costs: np.ndarray) -> Fraction:
    """Minimum cycle mean by exhaustive enumeration (small n only)."""
    return min(cycle_mean_exact(costs, c) for c in enumerate_simple_cycles(costs.shape[0]))


# ---------------------------------------------------------------------------
# Karp


def _karp_scaled(ints: np.ndarray) -> tuple[Fraction, tuple[int, ...]]:
    n = ints.shape[0]
    big = np.iinfo(np.int64).max // 4
    c = ints.astype(np.int64).copy()
    np.fill_diagonal(c, big)
    D = np.zeros((n + 1, n), dtype=np.int64)
    pred = np.zeros((n + 1, n), dtype=np.int64)
    for k in range(1, n + 1):
        cand = D[k - 1][:, None] + c          # cand[u, v]
        pred[k] = cand.argmin(axis=0)
        D[k] = cand[pred[k], np.arange(n)]
    # lambda* = min_v max_k (D_n(v) - D_k(v)) / (n - k); floats pick, Fractions confirm
    ks = np.arange(n)
    ratios = (D[n][None, :] - D[:n]).astype(float) / (n - ks)[:, None]
    kmax = ratios.argmax(axis=0)
    vals = [Fraction(int(D[n][v] - D[kmax[v]][v]), int(n - kmax[v])) for v in range(n)]
    lam = min(vals)
    for v in (u for u in range(n) if vals[u] == lam):
        walk = [v]
        for k in range(n, 0, -1):
            walk.append(int(pred[k][walk[-1]]))
        walk.reverse()
        for cyc in _walk_cycles(walk):
            if cycle_mean_exact(ints, cyc) == lam:
                return lam, cyc
    raise RuntimeError("Karp cycle recovery failed")  # pragma: no cover


def _walk_cycles(walk: list[int]):
    stack: list[int] = []
    pos: dict[int, int] = {}
    for v in walk:
        if v in pos:
            k = pos[v]
            cyc = stack[k:]
            yield _close(cyc)
            for u in cyc:
                del pos[u]
            del stack[k:]
        pos[v] = len(stack)
        stack.append(v)


def karp_mcm(g: WeightedDigraph, scale_digits: int = 6) -> CycleResult:
    """Exact minimum cycle mean via Karp's characterization, O(n^3)."""
    s = scale_instance(g, scale_digits)
    _, cyc = _karp_scaled(s.int_costs)
    return _result(g, s, cyc, solver="karp")


# ---------------------------------------------------------------------------
# assignment phases


def node_split(s: ScaledInstance, delta: float) -> AssignmentInstance:
    """Bipartite instance: arc ``(i, j')`` costs ``int_costs[i, j]``, ``(i, i')`` costs delta."""
    c = s.int_costs.astype(float)
    np.fill_diagonal(c, delta)
    return AssignmentInstance(c, float(delta))


@numba.njit(cache=True)
def _auction_kernel(C, pi1, pi2, match, owner, relabels, eps, k, L):
    n = C.shape[0]
    for j in range(n):
        pi2[j] += k * eps
    rounds = 0
    while True:
        i = -1
        for cand in range(n):
            if match[cand] < 0 and relabels[cand] < L:
                i = cand
                break
        if i < 0:
            break
        rounds += 1
        target = -1
        for j in range(n):
            if C[i, j] - pi1[i] + pi2[j] <= 0.0:
                target = j
                break
        if target >= 0:
            pi2[target] += eps
            prev = owner[target]
            if prev >= 0:
                match[prev] = -1
            owner[target] = i
            match[i] = target
        else:
            pi1[i] += eps
            relabels[i] += 1
    return rounds


@numba.njit(cache=True)
def _ssp_kernel(C, pi1, pi2, match, owner, eps):
    n = C.shape[0]
    inf = np.inf
    w1 = np.empty(n)
    w2 = np.empty(n)
    done1 = np.empty(n, dtype=np.bool_)
    done2 = np.empty(n, dtype=np.bool_)
    pred2 = np.empty(n, dtype=np.int64)
    augmentations = 0
    while True:
        src = -1
        for i in range(n):
            if match[i] < 0:
                src = i
                break
        if src < 0:
            break
        for v in range(n):
            w1[v] = inf
            w2[v] = inf
            done1[v] = False
            done2[v] = False
            pred2[v] = -1
        w1[src] = 0.0
        sink = -1
        while True:
            best = inf
            node = -1
            side = 0
            for v in range(n):
                if not done1[v] and w1[v] < best:
                    best = w1[v]
                    node = v
                    side = 1
            for v in range(n):
                if not done2[v] and w2[v] < best:
                    best = w2[v]
                    node = v
                    side = 2
            if node < 0:
                break
            if side == 1:
                u = node
                done1[u] = True
                for j in range(n):
                    if done2[j] or match[u] == j:
                        continue
                    d = (C[u, j] - pi1[u] + pi2[j]) / eps + 1.0
                    if d < 0.0:
                        d = 0.0
                    if w1[u] + d < w2[j]:
                        w2[j] = w1[u] + d
                        pred2[j] = u
            else:
                j = node
                done2[j] = True
                u = owner[j]
                if u < 0:
                    sink = j
                    break
                if not done1[u]:
                    d = -(C[u, j] - pi1[u] + pi2[j]) / eps + 1.0
                    if d < 0.0:
                        d = 0.0
                    if w2[j] + d < w1[u]:
                        w1[u] = w2[j] + d
        W = w2[sink]
        for v in range(n):
            if done1[v]:
                pi1[v] += eps * (W - w1[v])
            if done2[v]:
                pi2[v] += eps * (W - w2[v])
        # augment: walk back from the sink through alternating arcs
        j = sink
        while True:
            u = pred2[j]
            prev = match[u]
            match[u] = j
            owner[j] = u
            if u == src:
                break
            j = prev
        augmentations += 1
    return augmentations


def auction_phase(state: AssignmentState, inst: AssignmentInstance, k: int = 3,
                  L: int | None = None) -> AssignmentState:
    """Raise all object prices by ``k * eps``, then bid until no eligible bidder is left.

    A bidder scans for the lowest-index arc with ``c_red <= 0``; bidding raises
    that object's price by ``eps`` and evicts its owner. A bidder without such
    an arc raises its own potential by ``eps``; after ``L`` such raises it is
    no longer eligible and is left for :func:`ssp_phase`.
    """
    if state.eps <= 0:
        raise ValueError("eps must be positive")
    if L is None:
        L = 2 * (k + 1) * math.ceil(math.sqrt(inst.n))
    out = state.copy()
    out.relabels[:] = 0
    owner = out.owner
    _auction_kernel(inst.costs, out.pi1, out.pi2, out.match, owner, out.relabels,
                    float(out.eps), float(k), int(L))
    return out


def ssp_phase(state: AssignmentState, inst: AssignmentInstance) -> AssignmentState:
    """Complete the matching by shortest augmenting paths on lengths ``c_red / eps + 1``.

    Potentials of permanently labelled nodes move by ``eps * (w_sink - w)``,
    which keeps the state eps-optimal; each augmentation sets one more bidder.
    """
    out = state.copy()
    owner = out.owner
    _ssp_kernel(inst.costs, out.pi1, out.pi2, out.match, owner, float(out.eps))
    return out


def solve_assignment_eps(inst: AssignmentInstance, state: AssignmentState, k: int = 3,
                         L: int | None = None) -> AssignmentState:
    return ssp_phase(auction_phase(state, inst, k, L), inst)


# ---------------------------------------------------------------------------
# hybrid bisection


@dataclass
class BisectionStep:
    delta: float
    eps: float
    lb: float
    ub: float
    uniform: bool
    state: AssignmentState | None = None
    instance: AssignmentInstance | None = None


def hybrid_mcm(g: WeightedDigraph, cfg: ScalingConfig | None = None,
               trace: list[BisectionStep] | None = None) -> CycleResult:
    """Minimum mean cycle by assignment-based approximate bisection.

    The bracket ``[LB, UB]`` starts at ``[-C_bound, C_bound]`` on the scaled
    integer instance. Every probe decides whether an assignment better than
    the identity exists at diagonal cost ``delta``; non-identity matchings
    yield candidate cycles, the best of which also caps ``UB``. The loop stops
    once ``UB - LB < 1 / n**2``, which isolates the optimum among integer
    cycle means.

    Pass a list as ``trace`` to record each bisection step.
    """
    cfg = cfg or ScalingConfig()
    s = scale_instance(g, cfg.scale_digits)
    n = s.n
    k = cfg.k
    L = 2 * (k + 1) * math.ceil(math.sqrt(n))
    lb, ub = -float(s.c_bound), float(s.c_bound)
    pi1 = np.full(n, -s.c_bound / 2.0)
    pi2 = np.zeros(n)
    best: tuple[Fraction, tuple[int, ...]] | None = None
    it = 0
    while ub - lb >= 1.0 / n**2 and it < cfg.max_iterations:
        it += 1
        delta = 0.5 * (ub + lb)
        eps = (ub - lb) / 8.0
        inst = node_split(s, delta)
        state = AssignmentState(pi1, pi2, np.full(n, -1, dtype=np.int64), eps, delta, lb, ub)
        state = solve_assignment_eps(inst, state, k, L)
        pi1, pi2 = state.pi1, state.pi2
        uniform = state.is_uniform()
        if uniform:
            lb = delta - 2.0 * eps
        else:
            ub = delta + 2.0 * eps
            for cyc in permutation_cycles(state.match):
                m = cycle_mean_exact(s.int_costs, cyc)
                if best is None or m < best[0]:
                    best = (m, cyc)
            ub = min(ub, float(best[0]))
        if trace is not None:
            trace.append(BisectionStep(delta, eps, lb, ub, uniform,
                                       state if cfg.trace else None,
                                       inst if cfg.trace else None))
    if best is None:
        res = karp_mcm(g, cfg.scale_digits)
        return replace(res, solver="hybrid", iterations=it, fallback=True, bracket=(lb, ub))
    return _result(g, s, best[1], solver="hybrid", iterations=it, bracket=(lb, ub))


def min_mean_cycle(g: WeightedDigraph, solver: str = "hybrid", scale_digits: int = 6,
                   refine: bool = True) -> CycleResult:
    """Dispatch to a solver; ``refine`` removes the integer-scaling quantization error."""
    if solver == "karp":
        res = karp_mcm(g, scale_digits)
    elif solver == "hybrid":
        res = hybrid_mcm(g, ScalingConfig(scale_digits=scale_digits))
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return refine_cycle(g, res) if refine else res


# ---------------------------------------------------------------------------
# float refinement


def _tolerance(costs: np.ndarray) -> float:
    n = costs.shape[0]
    return 16.0 * n * np.finfo(float).eps * max(1.0, float(np.abs(costs).max()))


def bellman_ford(weights: np.ndarray, source: int = 0, tol: float = 0.0):
    """Shortest distances from ``source`` over the off-diagonal arcs of ``weights``.

    Returns ``(dist, pred, cycle)``: ``cycle`` is ``None`` unless a cycle of
    weight below ``-tol`` (roughly) is reachable, in which case it is one such
    cycle read off the predecessor graph.
    """
    n = weights.shape[0]
    w = np.array(weights, dtype=float)
    np.fill_diagonal(w, np.inf)
    dist = np.full(n, np.inf)
    dist[source] = 0.0
    pred = np.full(n, -1, dtype=np.int64)
    cols = np.arange(n)
    for _ in range(n):
        cand = dist[:, None] + w
        arg = cand.argmin(axis=0)
        new = cand[arg, cols]
        better = new < dist - tol
        if not better.any():
            return dist, pred, None
        dist[better] = new[better]
        pred[better] = arg[better]
    # still relaxing after n rounds: walk back into the predecessor cycle
    v = int(np.flatnonzero(better)[0])
    for _ in range(n):
        v = int(pred[v])
    cyc = [v]
    u = int(pred[v])
    while u != v:
        cyc.append(u)
        u = int(pred[u])
    cyc.reverse()
    return dist, pred, _close(cyc)


def refine_cycle(g: WeightedDigraph, res: CycleResult, max_rounds: int = 1000) -> CycleResult:
    """Lower ``res`` to the exact minimum mean over the original (float) costs.

    Integer scaling can merge cycles whose true means differ by less than the
    quantization step. Starting from the solver's cycle, repeatedly look for
    a negative cycle under ``c - mean`` and move to it; each move strictly
    lowers the mean, so the loop ends at the optimum up to float tolerance.
    """
    tol = _tolerance(g.costs)
    cur = res
    for _ in range(max_rounds):
        _, _, cyc = bellman_ford(g.costs - cur.mean, 0, tol)
        if cyc is None:
            return cur
        m = cycle_mean_exact(g.costs, cyc)
        if m >= cur.mean_exact:
            return cur
        total = cycle_total_exact(g.costs, cyc)
        cur = replace(cur, cycle=cyc, mean=float(m), total=float(total), length=len(cyc) - 1,
                      mean_exact=m, scaled_mean=None)
    return cur
