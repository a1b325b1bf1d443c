"""Continuous, cyclically monotone extension of a discrete repair map.

Given anchor pairs ``(x_i, y_i)`` from :mod:`extr.ot`, fitting finds
potentials ``psi`` and the largest margin ``eps*`` such that

    <x_i, y_i - y_j> >= psi_i - psi_j + eps*     for all i != j,

which is a minimum-mean-cycle problem (:mod:`extr.mmc`). The convex function
``phi(u) = max_j <u, y_j> - psi_j`` then gives two extensions:

* Step 1: ``T(x) = grad phi(x)``, the image of the maximizing anchor
  (piecewise constant).
* Regularized: ``T(x) = b + (x - prox(x)) / eps`` with ``prox`` the proximal
  point of ``eps * phi_b`` and ``phi_b`` the same max-affine function with
  images shifted by ``-b``; this is the gradient of a Moreau envelope, hence
  cyclically monotone and ``1/eps``-Lipschitz.

The Regularized map reproduces anchor ``i`` exactly when
``margin_ij >= eps * <y_i - b, y_i - y_j>`` for all ``j``. With images in the
unit ball and ``b = 0`` this holds at ``eps = eps0 = eps*/2``. Otherwise
fitting keeps ``eps0`` as the nominal smoothing value but uses the largest
``eps_reg <= eps0`` satisfying the condition, centering the images at their
mean when that allows a larger value.

The proximal point is computed by stochastic subgradient descent on
``h(u) = phi_b(u) + |u - x|^2 / (2 eps)``. Between chunks of iterations an
active-set solve tries to certify the exact minimizer. For ``d = 1`` an exact
breakpoint search replaces the descent in production evaluations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .data import Dataset, DataError
from .io import atomic_write_text
from .mmc import (
    WeightedDigraph,
    _tolerance,
    bellman_ford,
    build_interp_graph,
    image_groups,
    min_mean_cycle,
)
from .ot import RepairMap

OPTIONS = ("step1", "regularized", "hybrid")
FORMAT_NAME = "extr-model"
FORMAT_VERSION = 1


class InterpolationError(RuntimeError):
    """Fitting or evaluating the extension failed numerically."""


@dataclass(frozen=True)
class SgdConfig:
    """Stopping rules for the proximal descent.

    The loop stops when the best objective improves by less than ``rtol1``
    (relative) over a chunk, when the minimum-norm subgradient drops below
    ``rtol2`` (certified by the active-set solve), or after ``max_epochs``.
    """

    max_epochs: int = 100_000
    rtol1: float = 1e-9
    rtol2: float = 1e-7
    seed: int = 0
    chunk: int = 500
    polish: bool = True

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.rtol1 <= 0 or self.rtol2 <= 0:
            raise ValueError("tolerances must be positive")
        if self.chunk < 1:
            raise ValueError("chunk must be >= 1")


@dataclass(frozen=True)
class ProxResult:
    point: np.ndarray
    objective: float
    epochs: int
    certified: bool
    subgrad_norm: float


@dataclass(frozen=True)
class InterpolationModel:
    group: int
    anchors_src: np.ndarray
    anchors_dst: np.ndarray
    psi: np.ndarray
    eps_star: float
    eps0: float
    option: str = "regularized"
    density_threshold: float = 0.05
    radius: float | None = None
    interval: tuple[float, float] | None = None
    interval_col: int = 0
    sgd: SgdConfig = field(default_factory=SgdConfig)
    exact_1d: bool = True
    cycle: tuple[int, ...] = ()
    center: np.ndarray | None = None
    eps_reg: float | None = None

    def __post_init__(self) -> None:
        src = np.array(self.anchors_src, dtype=float)
        dst = np.array(self.anchors_dst, dtype=float)
        psi = np.array(self.psi, dtype=float)
        if src.ndim != 2 or src.shape != dst.shape or psi.shape != (src.shape[0],):
            raise ValueError("anchors_src, anchors_dst and psi have inconsistent shapes")
        if self.option not in OPTIONS:
            raise ValueError(f"option must be one of {OPTIONS}")
        if not self.eps0 > 0:
            raise ValueError("eps0 must be positive")
        for a in (src, dst, psi):
            a.setflags(write=False)
        object.__setattr__(self, "anchors_src", src)
        object.__setattr__(self, "anchors_dst", dst)
        object.__setattr__(self, "psi", psi)
        groups, images = image_groups(dst)
        first = np.array([g[0] for g in groups])
        center = np.zeros(self.d) if self.center is None else np.array(self.center, dtype=float)
        eps_reg = self.eps0 if self.eps_reg is None else float(self.eps_reg)
        if center.shape != (self.d,) or not 0 < eps_reg <= self.eps0:
            raise ValueError("center must have length d and 0 < eps_reg <= eps0")
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "eps_reg", eps_reg)
        object.__setattr__(self, "_images", np.ascontiguousarray(images))
        object.__setattr__(self, "_psi_u", np.ascontiguousarray(psi[first]))
        shifted = np.ascontiguousarray(images - center)
        object.__setattr__(self, "_shifted", shifted)
        object.__setattr__(self, "_env", _envelope(shifted[:, 0], psi[first]) if self.d == 1 else None)
        if self.radius is None:
            object.__setattr__(self, "radius", _median_nn_distance(src))

    @property
    def n(self) -> int:
        return self.anchors_src.shape[0]

    @property
    def d(self) -> int:
        return self.anchors_src.shape[1]

    @property
    def images(self) -> np.ndarray:
        """Distinct anchor images in order of first appearance."""
        return self._images  # type: ignore[attr-defined]

    @property
    def image_psi(self) -> np.ndarray:
        return self._psi_u  # type: ignore[attr-defined]

    @property
    def shifted_images(self) -> np.ndarray:
        """Images minus ``center``: the slopes of the function the Regularized option smooths."""
        return self._shifted  # type: ignore[attr-defined]

    def with_option(self, option: str, **kw) -> "InterpolationModel":
        return replace(self, option=option, **kw)

    def phi(self, u: np.ndarray) -> np.ndarray:
        """``max_j <u, y_j - center> - psi_j`` (the plain max-affine function when center = 0)."""
        u = np.atleast_2d(u)
        return (u @ self.shifted_images.T - self.image_psi).max(axis=1)

    def margins(self) -> np.ndarray:
        """Per-anchor gap between its own score and the best other image's score."""
        scores = self.anchors_src @ self.images.T - self.image_psi
        groups, _ = image_groups(self.anchors_dst)
        own = np.empty(self.n, dtype=np.int64)
        for k, g in enumerate(groups):
            own[g] = k
        rows = np.arange(self.n)
        mine = scores[rows, own]
        scores[rows, own] = -np.inf
        return mine - scores.max(axis=1)


def _median_nn_distance(src: np.ndarray) -> float:
    if src.shape[0] < 2:
        return 0.0
    sq = np.sum(src**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * src @ src.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    return float(np.median(np.sqrt(d2.min(axis=1))))


# ---------------------------------------------------------------------------
# fitting


def potentials_from_mcm(g: WeightedDigraph, eps_star: float) -> np.ndarray:
    """Potentials with ``c_ij >= psi_i - psi_j + eps_star`` for all arcs.

    Shortest paths from vertex 0 under ``c - eps_star`` (Bellman-Ford, since
    weights can be negative); ``psi = -dist`` so ``psi_0 = 0``.
    """
    dist, _, cyc = bellman_ford(g.costs - eps_star, 0, _tolerance(g.costs))
    if cyc is not None:
        raise InterpolationError(f"negative cycle under c - eps_star: {cyc}; eps_star too large")
    psi = -dist
    psi -= psi[0]
    return psi


def fit_interpolation(rm: RepairMap, option: str = "regularized", cfg: SgdConfig | None = None,
                      solver: str = "hybrid", scale_digits: int = 6,
                      density_threshold: float = 0.05,
                      interval: tuple[float, float] | None = None,
                      interval_col: int = 0) -> InterpolationModel:
    """Fit the extension of one group's repair map.

    Anchors sharing an image are merged into one graph node (see
    :func:`extr.mmc.build_interp_graph`) and share a potential. ``eps_star``
    is the minimum cycle mean of the anchor graph; ``eps0 = eps_used / 2``
    where ``eps_used`` is ``eps_star`` minus a float round-off allowance, so
    every anchor's margin is at least ``2 * eps0``.
    """
    if option not in OPTIONS:
        raise ValueError(f"option must be one of {OPTIONS}")
    try:
        g = build_interp_graph(rm)
    except ValueError as exc:
        raise InterpolationError(str(exc)) from None
    groups, _ = image_groups(rm.anchors_dst)
    res = min_mean_cycle(g, solver, scale_digits, refine=True)
    if res.mean <= 0:
        members = [int(groups[v][0]) for v in res.cycle]
        raise InterpolationError(
            f"anchors are not strictly cyclically monotone: cycle over anchors {members} "
            f"has mean {res.mean:.6g} <= 0")
    eps_star = float(res.mean_exact)
    slack = 0.0 if _integral(g.costs) else _tolerance(g.costs)
    eps_used = eps_star - slack
    if eps_used <= 0:
        raise InterpolationError(f"eps_star {eps_star:.3g} is below float resolution")
    psi_nodes = potentials_from_mcm(g, eps_used)
    psi = np.empty(rm.anchors_src.shape[0])
    for k, members in enumerate(groups):
        psi[members] = psi_nodes[k]
    eps0 = eps_used / 2.0
    center, eps_reg = _regularization(rm.anchors_src, rm.anchors_dst, psi, eps0)
    return InterpolationModel(
        rm.group, rm.anchors_src, rm.anchors_dst, psi, eps_star, eps0, option,
        density_threshold, None, interval, interval_col, cfg or SgdConfig(),
        cycle=tuple(int(groups[v][0]) for v in res.cycle), center=center, eps_reg=eps_reg)


def _largest_interpolating_eps(src, dst, psi, center, eps0) -> float:
    """Largest ``eps <= eps0`` with ``margin_ij >= eps * <y_i - b, y_i - y_j>`` for all pairs."""
    scores = src @ dst.T - psi
    own = np.diag(scores)
    best = eps0
    for i in range(src.shape[0]):
        margin = own[i] - scores[i]
        q = (dst[i] - center) @ (dst[i] - dst).T
        ok = (q > 0) & np.any(dst != dst[i], axis=1)
        if ok.any():
            best = min(best, float((margin[ok] / q[ok]).min()))
    return best


def _regularization(src, dst, psi, eps0) -> tuple[np.ndarray, float]:
    zero = np.zeros(src.shape[1])
    eps_plain = _largest_interpolating_eps(src, dst, psi, zero, eps0)
    if eps_plain >= eps0:
        return zero, eps0
    mean = dst.mean(axis=0)
    eps_mean = _largest_interpolating_eps(src, dst, psi, mean, eps0)
    if eps_mean > eps_plain:
        return mean, eps_mean
    return zero, eps_plain


def _integral(c: np.ndarray) -> bool:
    return bool(np.all(c == np.round(c)))


# ---------------------------------------------------------------------------
# Step 1


def eval_step1(m: InterpolationModel, x: np.ndarray) -> np.ndarray:
    """Image of the highest-scoring anchor; ties go to the lowest index."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    j = (X @ m.images.T - m.image_psi).argmax(axis=1)
    out = m.images[j]
    return out if np.ndim(x) == 2 else out[0]


# ---------------------------------------------------------------------------
# exact 1-D proximal point


@dataclass(frozen=True)
class _Envelope:
    slopes: np.ndarray       # increasing
    offsets: np.ndarray      # line k is slopes[k] * u - offsets[k]
    kinks: np.ndarray        # kinks[k] joins line k and k + 1


def _envelope(slopes: np.ndarray, offsets: np.ndarray) -> _Envelope:
    """Upper envelope of the lines ``s u - b``."""
    order = np.lexsort((offsets, slopes))
    s, b = slopes[order], offsets[order]
    # among equal slopes keep the smallest offset (the highest line)
    keep = np.ones(len(s), dtype=bool)
    keep[1:] = s[1:] != s[:-1]
    s, b = s[keep], b[keep]
    hs, hb = [], []
    for si, bi in zip(s, b):
        while len(hs) >= 2:
            # drop the middle line when it never rises above its neighbours
            x12 = (hb[-1] - hb[-2]) / (hs[-1] - hs[-2])
            x13 = (bi - hb[-2]) / (si - hs[-2])
            if x13 <= x12:
                hs.pop()
                hb.pop()
            else:
                break
        hs.append(si)
        hb.append(bi)
    hs, hb = np.array(hs), np.array(hb)
    kinks = (hb[1:] - hb[:-1]) / (hs[1:] - hs[:-1])
    return _Envelope(hs, hb, kinks)


def prox_1d_exact(m: InterpolationModel, x: np.ndarray, eps: float | None = None) -> np.ndarray:
    """Exact ``prox_{eps phi}`` for one-dimensional models by breakpoint search.

    On the piece with slope ``s_k`` the minimizer is ``x - eps s_k``; at the
    kink ``t_k`` it is ``t_k`` itself, for ``x`` in ``[t_k + eps s_k, t_k + eps s_{k+1}]``.
    """
    if m.d != 1:
        raise ValueError("exact prox is only available for d = 1")
    eps = m.eps_reg if eps is None else eps
    env: _Envelope = m._env  # type: ignore[attr-defined]
    xs = np.asarray(x, dtype=float).reshape(-1)
    if len(env.kinks) == 0:
        return (xs - eps * env.slopes[0]).reshape(np.shape(x))
    lo = env.kinks + eps * env.slopes[:-1]
    hi = env.kinks + eps * env.slopes[1:]
    bounds = np.empty(2 * len(lo))
    bounds[0::2], bounds[1::2] = lo, hi
    # pos counts bounds strictly below x: even -> on piece pos // 2, odd -> on a kink
    pos = np.searchsorted(bounds, xs, side="left")
    out = xs - eps * env.slopes[pos // 2]
    odd = pos % 2 == 1
    out[odd] = env.kinks[(pos[odd] - 1) // 2]
    return out.reshape(np.shape(x))


def moreau_envelope_1d(m: InterpolationModel, x: np.ndarray, eps: float | None = None) -> np.ndarray:
    """``min_u phi(u) + (u - x)^2 / (2 eps)`` evaluated through the exact prox."""
    eps = m.eps_reg if eps is None else eps
    xs = np.asarray(x, dtype=float).reshape(-1)
    u = prox_1d_exact(m, xs, eps)
    return (m.phi(u[:, None]) + (u - xs) ** 2 / (2 * eps)).reshape(np.shape(x))


# ---------------------------------------------------------------------------
# stochastic subgradient descent


@numba.njit(cache=True)
def _sgd_chunk(A, psi, x, u, eps0, t0, steps, seed):
    """Run ``steps`` subgradient steps from ``u`` (modified in place).

    Returns the best objective seen and writes the best iterate to the
    second half of the returned array pair.
    """
    np.random.seed(seed)
    n, d = A.shape
    best = np.inf
    best_u = u.copy()
    ties = np.empty(n, dtype=np.int64)
    for s in range(steps):
        t = t0 + s
        top = -np.inf
        cnt = 0
        for j in range(n):
            v = -psi[j]
            for k in range(d):
                v += u[k] * A[j, k]
            if v > top:
                top = v
                ties[0] = j
                cnt = 1
            elif v == top:
                ties[cnt] = j
                cnt += 1
        h = top
        for k in range(d):
            h += (u[k] - x[k]) ** 2 / (2.0 * eps0)
        if h < best:
            best = h
            best_u[:] = u
        J = ties[0] if cnt == 1 else ties[np.random.randint(cnt)]
        eta = eps0 / t
        for k in range(d):
            g = A[J, k] + (u[k] - x[k]) / eps0
            u[k] -= eta * g
        if not np.isfinite(u[0]):
            return np.nan, best_u
    return best, best_u


def _objective(A, psi, x, u, eps0) -> float:
    return float((A @ u - psi).max() + np.sum((u - x) ** 2) / (2 * eps0))


def _active_set_solve(A, psi, x, eps0, u_guess, scale):
    """Try to certify the exact prox from the scores at ``u_guess``.

    For a candidate active set S the minimizer is ``u = x - eps0 A_S^T lam``
    with ``lam`` on the simplex and equal scores on S; it is optimal iff
    ``lam >= 0`` and no index outside S scores higher.
    """
    scores = A @ u_guess - psi
    top = scores.max()
    tried = set()
    for tol in (0.0, 1e-12, 1e-9, 1e-6, 1e-4, 1e-3, 1e-2, 1e-1):
        S = np.flatnonzero(scores >= top - tol * scale)
        key = tuple(S)
        if key in tried or len(S) > A.shape[1] + 8:
            continue
        tried.add(key)
        sol = _solve_on_set(A, psi, x, eps0, S, scale)
        if sol is not None:
            return sol
    return None


def _solve_on_set(A, psi, x, eps0, S, scale):
    S = list(S)
    rhs_full = A @ x - psi
    while S:
        k = len(S)
        As = A[S]
        K = np.zeros((k + 1, k + 1))
        K[:k, :k] = eps0 * (As @ As.T)
        K[:k, k] = 1.0
        K[k, :k] = 1.0
        rhs = np.append(rhs_full[S], 1.0)
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        lam = sol[:k]
        if np.any(lam < -1e-12):
            S.pop(int(np.argmin(lam)))
            continue
        lam = np.clip(lam, 0.0, None)
        lam /= lam.sum()
        u = x - eps0 * (lam @ As)
        scores = A @ u - psi
        tol = 1e-12 * scale
        if scores.max() <= scores[S].max() + tol and np.ptp(scores[S]) <= tol * 10:
            return u, lam, S
        return None
    return None


def prox_sgd(m: InterpolationModel, x: np.ndarray, cfg: SgdConfig | None = None) -> ProxResult:
    """Proximal point of ``eps0 * phi`` at ``x`` by stochastic subgradient descent.

    Step size ``eps0 / t``; the subgradient of ``phi`` is the image of a
    maximizing anchor drawn uniformly among ties. The descent starts at the
    first anchor. Randomness is seeded from ``(cfg.seed, x)``, so a result
    depends only on the point and the seed.
    """
    cfg = cfg or m.sgd
    x = np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1))
    if x.shape != (m.d,):
        raise ValueError(f"point has dimension {x.size}, model expects {m.d}")
    A, psi, eps0 = m.shifted_images, m.image_psi, m.eps_reg
    scale = max(1.0, float(np.abs(A).max()) * max(1.0, float(np.abs(x).max())), float(np.abs(psi).max()))
    seed_seq = np.random.SeedSequence([cfg.seed, *np.frombuffer(x.tobytes(), dtype=np.uint32)])
    seed = int(seed_seq.generate_state(1)[0])

    u = np.ascontiguousarray(m.anchors_src[0].copy())
    best_h, best_u = math.inf, u.copy()
    t = 1
    prev_best = math.inf
    while t <= cfg.max_epochs:
        steps = min(cfg.chunk, cfg.max_epochs - t + 1)
        h, bu = _sgd_chunk(A, psi, x, u, eps0, t, steps, seed + t)
        if not math.isfinite(h):
            raise InterpolationError("non-finite iterate in proximal descent; check eps0")
        t += steps
        if h < best_h:
            best_h, best_u = h, bu.copy()
        if cfg.polish:
            sol = _active_set_solve(A, psi, x, eps0, best_u, scale)
            if sol is not None:
                up = sol[0]
                return ProxResult(up, _objective(A, psi, x, up, eps0), t - 1, True, 0.0)
        if prev_best - best_h <= cfg.rtol1 * max(1.0, abs(best_h)):
            break
        prev_best = best_h
    return ProxResult(best_u, best_h, t - 1, False, _min_norm_subgrad(A, psi, x, best_u, eps0))


def _min_norm_subgrad(A, psi, x, u, eps0) -> float:
    # norm of the subgradient built from the lowest-index maximizer (upper bound on the min norm)
    j = int((A @ u - psi).argmax())
    return float(np.linalg.norm(A[j] + (u - x) / eps0))


def prox(m: InterpolationModel, x: np.ndarray) -> np.ndarray:
    """Production proximal point: exact in 1-D (when enabled), certified descent otherwise."""
    if m.d == 1 and m.exact_1d:
        return prox_1d_exact(m, np.asarray(x, dtype=float).reshape(1))
    x = np.asarray(x, dtype=float).reshape(-1)
    A, psi, eps0 = m.shifted_images, m.image_psi, m.eps_reg
    # cheap exact attempt: the cell of the Step-1 argmax, moved by -eps0 * image
    j = int((A @ x - psi).argmax())
    u0 = x - eps0 * A[j]
    scale = max(1.0, float(np.abs(A).max()) * max(1.0, float(np.abs(x).max())), float(np.abs(psi).max()))
    sol = _active_set_solve(A, psi, x, eps0, u0, scale) if m.sgd.polish else None
    if sol is not None:
        return sol[0]
    return prox_sgd(m, x).point


# ---------------------------------------------------------------------------
# evaluation


def _local_density(m: InterpolationModel, X: np.ndarray) -> np.ndarray:
    d2 = np.sum((X[:, None, :] - m.anchors_src[None, :, :]) ** 2, axis=2)
    return (d2 <= m.radius**2).sum(axis=1) / m.n


def use_step1(m: InterpolationModel, X: np.ndarray) -> np.ndarray:
    """Boolean mask of rows the hybrid option routes to Step 1."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if m.interval is not None:
        a, b = m.interval
        v = X[:, m.interval_col]
        return (v >= a) & (v <= b)
    return _local_density(m, X) >= m.density_threshold


def eval_regularized(m: InterpolationModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if m.d == 1 and m.exact_1d:
        P = prox_1d_exact(m, X[:, 0])[:, None]
    else:
        P = _prox_batch(m, X)
    return m.center + (X - P) / m.eps_reg


def _prox_batch(m: InterpolationModel, X: np.ndarray) -> np.ndarray:
    """Proximal points of many rows.

    Most points have a single active piece at the optimum: ``u = x - eps A_j``
    with ``j`` still maximal at ``u``. That check is done for all rows at
    once; only the remaining rows go through :func:`prox`.
    """
    if len(X) == 0:
        return np.empty_like(X)
    A, psi, eps = m.shifted_images, m.image_psi, m.eps_reg
    j = (X @ A.T - psi).argmax(axis=1)
    U = X - eps * A[j]
    scores = U @ A.T - psi
    rows = np.arange(len(X))
    ok = scores.max(axis=1) <= scores[rows, j] if m.sgd.polish else np.zeros(len(X), dtype=bool)
    for r in np.flatnonzero(~ok):
        U[r] = prox(m, X[r])
    return U


def eval_extr(m: InterpolationModel, x: np.ndarray) -> np.ndarray:
    """Evaluate the extension at one point (1-D array) or a batch (2-D array)."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != m.d:
        raise ValueError(f"points have dimension {X.shape[1]}, model expects {m.d}")
    if m.option == "step1":
        out = eval_step1(m, X)
    elif m.option == "regularized":
        out = eval_regularized(m, X)
    else:
        out = np.empty_like(X)
        mask = use_step1(m, X)
        if mask.any():
            out[mask] = eval_step1(m, X[mask])
        if (~mask).any():
            out[~mask] = eval_regularized(m, X[~mask])
    return out if np.ndim(x) == 2 else out[0]


def repair_new(m0: InterpolationModel, m1: InterpolationModel, ds: Dataset,
               cols: Sequence[str | int] | None = None) -> Dataset:
    """Repair rows through their group's model; unselected columns are kept."""
    idx = ds.column_index(cols)
    for m in (m0, m1):
        if m.d != len(idx):
            raise DataError(f"model for group {m.group} expects {m.d} columns, got {len(idx)}")
    feats = np.array(ds.features)
    for s, m in ((0, m0), (1, m1)):
        rows = np.flatnonzero(ds.protected == s)
        if rows.size:
            feats[np.ix_(rows, idx)] = eval_extr(m, feats[np.ix_(rows, idx)])
    return ds.with_features(feats)


def fit_pair(rm0: RepairMap, rm1: RepairMap, option: str = "regularized", **kw):
    return fit_interpolation(rm0, option, **kw), fit_interpolation(rm1, option, **kw)


# ---------------------------------------------------------------------------
# persistence


def model_to_dict(m: InterpolationModel, columns: Sequence[str] | None = None) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "group": m.group,
        "columns": list(columns) if columns is not None else None,
        "option": m.option,
        "eps_star": m.eps_star,
        "eps0": m.eps0,
        "eps_reg": m.eps_reg,
        "center": m.center.tolist(),
        "density_threshold": m.density_threshold,
        "radius": m.radius,
        "interval": list(m.interval) if m.interval is not None else None,
        "interval_col": m.interval_col,
        "sgd": {"max_epochs": m.sgd.max_epochs, "rtol1": m.sgd.rtol1, "rtol2": m.sgd.rtol2,
                "seed": m.sgd.seed, "chunk": m.sgd.chunk, "polish": m.sgd.polish},
        "exact_1d": m.exact_1d,
        "cycle": list(m.cycle),
        "anchors_src": m.anchors_src.tolist(),
        "anchors_dst": m.anchors_dst.tolist(),
        "psi": m.psi.tolist(),
    }


def model_from_dict(obj: dict) -> InterpolationModel:
    if obj.get("format") != FORMAT_NAME:
        raise DataError("not an interpolation model file")
    if obj.get("version") != FORMAT_VERSION:
        raise DataError(f"unsupported model version {obj.get('version')!r}, expected {FORMAT_VERSION}")
    try:
        return InterpolationModel(
            int(obj["group"]), np.array(obj["anchors_src"], dtype=float),
            np.array(obj["anchors_dst"], dtype=float), np.array(obj["psi"], dtype=float),
            float(obj["eps_star"]), float(obj["eps0"]), obj["option"],
            float(obj["density_threshold"]), obj["radius"],
            tuple(obj["interval"]) if obj["interval"] is not None else None,
            int(obj["interval_col"]), SgdConfig(**obj["sgd"]), bool(obj["exact_1d"]),
            tuple(obj["cycle"]), np.array(obj["center"], dtype=float), float(obj["eps_reg"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed model file: {exc}") from None


def save_model(m: InterpolationModel, path: str | Path, columns: Sequence[str] | None = None) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(m, columns), indent=1) + "\n")


def load_model(path: str | Path) -> tuple[InterpolationModel, list[str] | None]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"model file is not valid JSON: {exc}") from None
    return model_from_dict(obj), obj.get("columns")
