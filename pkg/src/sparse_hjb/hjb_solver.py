"""Explicit monotone finite-difference solver for the terminal-value HJB problem.

The backward recursion is

    v(t_k) = v(t_{k+1}) - dt * H_h(x, v(t_{k+1}))

where ``H_h`` is the Hamiltonian with

* first differences upwinded against the sign of each drift contribution:
  the uncontrolled drift f0 per coordinate and, per control channel, the
  velocity ``u_j f_j`` separately for the negative and positive extreme
  control (``b_lo`` / ``b_hi`` below),
* centered second differences, and the 7-point cross stencil for mixed
  derivatives in 2-D.

With dt below the CFL bound every node update is a convex combination of
neighbouring values plus a bounded source, which is what makes the scheme
monotone and convergent to the viscosity solution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import core_model as cm
from ._io import atomic_write_text
from .errors import (
    ConfigurationError,
    DivergenceError,
    DomainError,
    InfeasibleResolutionError,
    UnsupportedError,
)

logger = logging.getLogger(__name__)

ONE_SIDED = "one-sided-stencil"
FROZEN_TERMINAL = "frozen-terminal"
BOUNDARY_POLICIES = (ONE_SIDED, FROZEN_TERMINAL)

DEFAULT_MAX_POINTS = 4_000_000
DEFAULT_MAX_STEPS = 10**7


@dataclass(frozen=True)
class SpatialGrid:
    """Tensor grid on a box in one or two dimensions."""

    lower: tuple
    upper: tuple
    points: tuple
    max_points: int = DEFAULT_MAX_POINTS

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        pts = tuple(int(v) for v in np.atleast_1d(self.points))
        if not (len(lo) == len(hi) == len(pts)):
            raise ConfigurationError("grid bounds and point counts must have equal length")
        if len(lo) not in (1, 2):
            raise UnsupportedError("only 1-D and 2-D grids are supported")
        for a, b, p in zip(lo, hi, pts):
            if not a < b:
                raise ConfigurationError(f"grid lower bound {a} must be below upper bound {b}")
            if p < 8:
                raise ConfigurationError("each grid dimension needs at least 8 points")
        if math.prod(pts) > self.max_points:
            raise ConfigurationError(f"grid has {math.prod(pts)} points, cap is {self.max_points}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return len(self.points)

    @property
    def shape(self) -> tuple:
        return self.points

    @property
    def size(self) -> int:
        return math.prod(self.points)

    @property
    def spacing(self) -> tuple:
        return tuple((b - a) / (p - 1) for a, b, p in zip(self.lower, self.upper, self.points))

    @property
    def axes(self) -> list:
        return [np.linspace(a, b, p) for a, b, p in zip(self.lower, self.upper, self.points)]

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (dim, *shape)."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"))

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        """Per-point membership for ``x`` of shape (dim, ...)."""
        x = np.asarray(x, dtype=float)
        ok = np.ones(x.shape[1:], dtype=bool)
        for i, (a, b) in enumerate(zip(self.lower, self.upper)):
            pad = tol * max(1.0, b - a)
            ok &= (x[i] >= a - pad) & (x[i] <= b + pad)
        return ok


@dataclass(frozen=True)
class SolverConfig:
    """Time stepping and boundary closure options.

    ``save_every`` keeps every k-th time slice (the first and last slice are
    always kept); it exists to bound memory on large 2-D grids.
    """

    time_steps: Optional[int] = None
    boundary_policy: str = ONE_SIDED
    cfl_safety: float = 0.5
    save_every: int = 1
    max_steps: int = DEFAULT_MAX_STEPS

    def __post_init__(self):
        if not 0.0 < self.cfl_safety <= 1.0:
            raise ConfigurationError("cfl_safety must lie in (0, 1]")
        if self.boundary_policy not in BOUNDARY_POLICIES:
            raise ConfigurationError(
                f"boundary_policy must be one of {BOUNDARY_POLICIES}, got {self.boundary_policy!r}"
            )
        if self.time_steps is not None and int(self.time_steps) < 1:
            raise ConfigurationError("time_steps must be a positive integer or None (auto)")
        if int(self.save_every) < 1:
            raise ConfigurationError("save_every must be a positive integer")


class ValueField:
    """Value function samples on ``grid`` at increasing ``times``.

    ``values`` has shape ``(len(times), *grid.shape)``; the last slice is the
    terminal cost sampled on the nodes.  Arrays are read-only.
    """

    def __init__(self, grid: SpatialGrid, times, values, spec: Optional[cm.ProblemSpec] = None, info=None):
        times = np.array(times, dtype=float)
        values = np.array(values, dtype=float).reshape((times.size,) + grid.shape)
        if times.ndim != 1 or times.size < 1 or np.any(np.diff(times) <= 0):
            raise ConfigurationError("field times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DivergenceError("value field contains non-finite entries")
        times.setflags(write=False)
        values.setflags(write=False)
        self.grid = grid
        self.times = times
        self.values = values
        self.spec = spec
        self.info = dict(info or {})
        self._grad_cache: dict = {}

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def slice_index(self, t: float) -> int:
        """Index of the stored slice nearest to ``t``."""
        if not (self.times[0] - 1e-9 <= t <= self.times[-1] + 1e-9):
            raise DomainError(f"time {t} outside [{self.times[0]}, {self.times[-1]}]")
        return int(np.argmin(np.abs(self.times - t)))

    def nodal_gradient(self, k: int) -> np.ndarray:
        """Gradient of slice ``k`` at the nodes, shape (dim, *shape)."""
        grad = self._grad_cache.get(k)
        if grad is None:
            g = np.gradient(self.values[k], *self.grid.spacing, edge_order=2)
            grad = np.stack(g) if self.grid.dim > 1 else np.asarray(g)[None]
            grad.setflags(write=False)
            self._grad_cache[k] = grad
        return grad

    def equals(self, other: "ValueField") -> bool:
        """Bitwise equality of grid, times and values."""
        return (
            self.grid.lower == other.grid.lower
            and self.grid.upper == other.grid.upper
            and self.grid.points == other.grid.points
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.values, other.values)
        )


# -- interpolation -------------------------------------------------------------


def _as_points(grid: SpatialGrid, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[:, None]
    if x.shape[0] != grid.dim:
        raise ConfigurationError(f"points have dimension {x.shape[0]}, grid has {grid.dim}")
    return x, single


def interpolate(grid: SpatialGrid, nodal: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of ``nodal`` (..., *shape) at ``x`` (dim, batch).

    Points outside the grid are clamped onto it.
    """
    lead = nodal.shape[: nodal.ndim - grid.dim]
    idx, wts = [], []
    for i, (a, h, p) in enumerate(zip(grid.lower, grid.spacing, grid.points)):
        s = np.clip((x[i] - a) / h, 0.0, p - 1.0)
        i0 = np.minimum(np.floor(s).astype(np.intp), p - 2)
        idx.append(i0)
        wts.append(s - i0)
    out = np.zeros(lead + x.shape[1:])
    flat = nodal.reshape(lead + (-1,))
    strides = np.cumprod((1,) + grid.shape[::-1])[:-1][::-1]
    for corner in np.ndindex(*(2,) * grid.dim):
        lin = np.zeros_like(idx[0])
        w = np.ones(x.shape[1:])
        for i, c in enumerate(corner):
            lin = lin + (idx[i] + c) * strides[i]
            w = w * (wts[i] if c else 1.0 - wts[i])
        out = out + flat[..., lin] * w
    return out


def _check_inside(grid: SpatialGrid, x: np.ndarray):
    inside = grid.contains(x)
    if not np.all(inside):
        bad = x[:, ~inside][:, 0]
        raise DomainError(f"point {bad} outside grid [{grid.lower}, {grid.upper}]")


def gradient_at(field: ValueField, t: float, x) -> np.ndarray:
    """Spatial gradient at (t, x) from the nearest stored slice.

    ``x`` may be one state (dim,) or a batch (dim, N); the result has the same
    shape.  Raises DomainError outside the grid.
    """
    pts, single = _as_points(field.grid, x)
    _check_inside(field.grid, pts)
    out = interpolate(field.grid, field.nodal_gradient(field.slice_index(t)), pts)
    return out[:, 0] if single else out


def value_at(field: ValueField, t: float, x, clamp: bool = False):
    """Value at (t, x) from the nearest stored slice, linear in space."""
    pts, single = _as_points(field.grid, x)
    if not clamp:
        _check_inside(field.grid, pts)
    out = interpolate(field.grid, field.values[field.slice_index(t)], pts)
    return float(out[0]) if single else out


# -- solver ----------------------------------------------------------------------


def _coefficients(spec: cm.ProblemSpec, grid: SpatialGrid):
    if spec.n != grid.dim:
        raise ConfigurationError(f"system state dimension {spec.n} does not match grid dimension {grid.dim}")
    X = grid.nodes()
    F0 = np.asarray(spec.system.f0(X), dtype=float)
    FJ = spec.system.control_matrix(X)
    A = spec.system.diffusion_matrix(X)
    ell = np.broadcast_to(spec.ell(X), grid.shape).astype(float)
    G = np.broadcast_to(np.asarray(spec.terminal_cost(X), dtype=float), grid.shape).copy()
    for name, arr in (("f0", F0), ("f_j", FJ), ("sigma sigma^T", A), ("running cost", ell), ("terminal cost", G)):
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError(f"{name} is not finite on the grid")
    return X, F0, FJ, A, ell, G


def _check_diagonal_dominance(A: np.ndarray, h: Sequence[float]):
    n = len(h)
    for i in range(n):
        off = sum(np.abs(A[i, j]) / (h[i] * h[j]) for j in range(n) if j != i)
        deficit = off - A[i, i] / h[i] ** 2
        if np.any(deficit > 1e-12 * (1.0 + np.abs(A[i, i]) / h[i] ** 2)):
            where = np.unravel_index(int(np.argmax(deficit)), deficit.shape)
            raise ConfigurationError(
                "diffusion is not diagonally dominant on this grid "
                f"(row {i}, node {where}); the cross-derivative stencil would not be monotone. "
                "Refine the grid anisotropically or rotate coordinates."
            )


def stability_rate(spec: cm.ProblemSpec, grid: SpatialGrid) -> np.ndarray:
    """Nodewise sum_i (|drift_i| bound)/h_i + sum_i a_ii/h_i^2."""
    _, F0, FJ, A, _, _ = _coefficients(spec, grid)
    mag = spec.controls.magnitude
    rate = np.zeros(grid.shape)
    for i, h in enumerate(grid.spacing):
        drift = np.abs(F0[i]) + np.einsum("j,j...->...", mag, np.abs(FJ[i]))
        rate += drift / h + A[i, i] / h**2
    return rate


def max_stable_dt(spec: cm.ProblemSpec, grid: SpatialGrid, cfl_safety: float = 0.5) -> float:
    r = float(np.max(stability_rate(spec, grid)))
    return math.inf if r == 0.0 else cfl_safety / r


def aligned_time_steps(spec: cm.ProblemSpec, grid: SpatialGrid, sim_dt: float, cfl_safety: float = 0.5) -> int:
    """Smallest CFL-compliant step count that is a multiple of T/sim_dt.

    Every simulation time then coincides with a solver slice.
    """
    n_sim = int(round(spec.horizon / sim_dt))
    if n_sim < 1 or abs(n_sim * sim_dt - spec.horizon) > 1e-9 * spec.horizon:
        raise ConfigurationError(f"simulation step {sim_dt} does not divide the horizon {spec.horizon}")
    dt_max = max_stable_dt(spec, grid, cfl_safety)
    k_min = 1 if math.isinf(dt_max) else math.ceil(spec.horizon / dt_max * (1 - 1e-12))
    return n_sim * max(1, math.ceil(k_min / n_sim))


class _Stepper:
    """Precomputed stencil data for one (spec, grid, policy)."""

    def __init__(self, spec: cm.ProblemSpec, grid: SpatialGrid, policy: str):
        self.spec = spec
        self.grid = grid
        self.policy = policy
        self.h = grid.spacing
        self.X, F0, FJ, A, self.ell, self.G = _coefficients(spec, grid)
        n = grid.dim
        if n == 2:
            _check_diagonal_dominance(A, self.h)
        self.F0 = F0
        self.f0_fwd = [F0[i] > 0 for i in range(n)]
        lo, hi = spec.controls.lower, spec.controls.upper
        # channel j, branch (lo/hi), coordinate i -> coefficient and forward mask
        self.channels = []
        for j in range(spec.m):
            fj = FJ[:, j]
            active = [i for i in range(n) if np.any(fj[i] != 0.0)]
            branches = []
            for u in (lo[j], hi[j]):
                branches.append([(i, fj[i], fj[i] * u > 0) for i in active])
            self.channels.append((lo[j], hi[j], branches[0], branches[1]))
        self.diag = [(i, 0.5 * A[i, i]) for i in range(n) if np.any(A[i, i] != 0.0)]
        self.cross = []
        if n == 2 and np.any(A[0, 1] != 0.0):
            self.cross.append((A[0, 1], A[0, 1] >= 0))
        self.boundary_mask = np.zeros(grid.shape, dtype=bool)
        for i in range(n):
            sl = [slice(None)] * n
            sl[i] = 0
            self.boundary_mask[tuple(sl)] = True
            sl[i] = -1
            self.boundary_mask[tuple(sl)] = True
        self.split_sup = cm._SPLIT_SUP[spec.penalty]

    def _first_differences(self, v: np.ndarray):
        dp, dm = [], []
        for i, h in enumerate(self.h):
            d = np.diff(v, axis=i) / h
            first = np.take(d, [0], axis=i)
            last = np.take(d, [-1], axis=i)
            # one-sided at the ends: the missing neighbour is replaced by the
            # inward difference
            dp.append(np.concatenate([d, last], axis=i))
            dm.append(np.concatenate([first, d], axis=i))
        return dp, dm

    def _second_difference(self, v: np.ndarray, i: int) -> np.ndarray:
        h = self.h[i]
        n = v.ndim
        c = [slice(1, -1) if k == i else slice(None) for k in range(n)]
        p = [slice(2, None) if k == i else slice(None) for k in range(n)]
        m = [slice(None, -2) if k == i else slice(None) for k in range(n)]
        inner = (v[tuple(p)] - 2.0 * v[tuple(c)] + v[tuple(m)]) / h**2
        pad = [(1, 1) if k == i else (0, 0) for k in range(n)]
        return np.pad(inner, pad, mode="edge")

    def _cross_difference(self, v: np.ndarray, positive: np.ndarray) -> np.ndarray:
        h1, h2 = self.h
        c = v[1:-1, 1:-1]
        xp, xm = v[2:, 1:-1], v[:-2, 1:-1]
        yp, ym = v[1:-1, 2:], v[1:-1, :-2]
        pos = (2.0 * c + v[2:, 2:] + v[:-2, :-2] - xp - xm - yp - ym) / (2.0 * h1 * h2)
        neg = (xp + xm + yp + ym - v[2:, :-2] - v[:-2, 2:] - 2.0 * c) / (2.0 * h1 * h2)
        inner = np.where(positive[1:-1, 1:-1], pos, neg)
        return np.pad(inner, 1, mode="edge")

    def hamiltonian(self, v: np.ndarray) -> np.ndarray:
        dp, dm = self._first_differences(v)
        H = -self.ell.copy()
        for i, fwd in enumerate(self.f0_fwd):
            H -= self.F0[i] * np.where(fwd, dp[i], dm[i])
        for i, half_a in self.diag:
            H -= half_a * self._second_difference(v, i)
        for a12, positive in self.cross:
            H -= a12 * self._cross_difference(v, positive)
        for lo, hi, br_lo, br_hi in self.channels:
            b_lo = sum(f * np.where(fwd, dp[i], dm[i]) for i, f, fwd in br_lo)
            b_hi = sum(f * np.where(fwd, dp[i], dm[i]) for i, f, fwd in br_hi)
            H += self.split_sup(b_lo, b_hi, lo, hi)
        return H

    def step(self, v: np.ndarray, dt: float) -> np.ndarray:
        out = v - dt * self.hamiltonian(v)
        if self.policy == FROZEN_TERMINAL:
            out[self.boundary_mask] = self.G[self.boundary_mask]
        return out


def solve_backward(spec: cm.ProblemSpec, grid: SpatialGrid, cfg: SolverConfig = SolverConfig()) -> ValueField:
    """March the HJB equation from v(T) = g back to t = 0."""
    stepper = _Stepper(spec, grid, cfg.boundary_policy)
    T = spec.horizon
    dt_max = max_stable_dt(spec, grid, cfg.cfl_safety)
    if cfg.time_steps is None:
        K = 1 if math.isinf(dt_max) else math.ceil(T / dt_max * (1 - 1e-12))
        if K > cfg.max_steps:
            raise InfeasibleResolutionError(
                f"stability bound needs {K} time steps (dt <= {dt_max:.3e}), cap is {cfg.max_steps}"
            )
    else:
        K = int(cfg.time_steps)
        if K > cfg.max_steps:
            raise InfeasibleResolutionError(f"time_steps={K} exceeds the cap of {cfg.max_steps}")
        if T / K > dt_max * (1 + 1e-12):
            raise ConfigurationError(
                f"time_steps={K} gives dt={T / K:.3e} above the stability bound {dt_max:.3e}"
            )
    dt = T / K
    keep = sorted(set(range(0, K + 1, int(cfg.save_every))) | {0, K})
    keep_set = set(keep)

    # discrete maximum principle bound, valid for the monotone closure
    mag = spec.controls.magnitude
    m_src = float(cm.control_cost(spec.penalty, mag[:, None])[0])
    bound = float(np.max(np.abs(stepper.G))) + T * (float(np.max(np.abs(stepper.ell))) + m_src)

    v = stepper.G.copy()
    slices = {K: v.copy()}
    for k in range(K - 1, -1, -1):
        with np.errstate(over="ignore", invalid="ignore"):  # reported below as DivergenceError
            v = stepper.step(v, dt)
        if not np.all(np.isfinite(v)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(v))[0])
            node = stepper.X[(slice(None),) + bad]
            raise DivergenceError(f"non-finite value at node {bad} (x={node}) at t={k * dt:.6g}")
        if cfg.boundary_policy == FROZEN_TERMINAL:
            vmax = float(np.max(np.abs(v)))
            if vmax > bound * (1 + 1e-9) + 1e-12:
                raise DivergenceError(
                    f"max|V|={vmax:.6g} exceeds the discrete maximum-principle bound {bound:.6g} at t={k * dt:.6g}"
                )
        if k in keep_set:
            slices[k] = v.copy()
    times = np.array([k * T / K for k in keep])
    values = np.stack([slices[k] for k in keep])
    info = {"time_steps": K, "dt": dt, "dt_max": dt_max, "max_bound": bound, "boundary_policy": cfg.boundary_policy}
    logger.info("solved HJB on %s grid with %d steps (dt=%.3e, bound %.3e)", grid.shape, K, dt, dt_max)
    return ValueField(grid, times, values, spec=spec, info=info)


# -- diagnostics ---------------------------------------------------------------


def hjb_residual(field: ValueField, t: float, x, spec: Optional[cm.ProblemSpec] = None) -> float:
    """-v_t + H(x, Dv, D^2 v) with centered differences on the stored field."""
    spec = spec or field.spec
    if spec is None:
        raise ConfigurationError("hjb_residual needs the problem spec")
    grid = field.grid
    k = field.slice_index(t)
    if k == 0 or k == field.times.size - 1:
        raise DomainError("residual is only defined strictly inside the time interval")
    pts, _ = _as_points(grid, x)
    for i, (a, b, h) in enumerate(zip(grid.lower, grid.upper, grid.spacing)):
        if not (a + 2 * h <= pts[i, 0] <= b - 2 * h):
            raise DomainError(f"point {pts[:, 0]} is within two nodes of the boundary")
    vt_nodes = (field.values[k + 1] - field.values[k - 1]) / (field.times[k + 1] - field.times[k - 1])
    V = field.values[k]
    n = grid.dim
    grads = np.gradient(V, *grid.spacing)
    grads = [grads] if n == 1 else list(grads)
    hess = np.empty((n, n) + grid.shape)
    for i in range(n):
        for j in range(n):
            if i != j:
                hess[i, j] = np.gradient(grads[i], grid.spacing[j], axis=j)
        # compact three-point stencil for the pure second derivative
        hess[i, i] = np.gradient(grads[i], grid.spacing[i], axis=i)
        c = tuple(slice(1, -1) if a == i else slice(None) for a in range(n))
        hi_ = tuple(slice(2, None) if a == i else slice(None) for a in range(n))
        lo_ = tuple(slice(None, -2) if a == i else slice(None) for a in range(n))
        hess[i, i][c] = (V[hi_] - 2.0 * V[c] + V[lo_]) / grid.spacing[i] ** 2
    vt = float(interpolate(grid, vt_nodes, pts)[0])
    p_ = interpolate(grid, np.stack(grads), pts)[:, 0]
    M = interpolate(grid, hess, pts)[:, :, 0]
    return -vt + cm.hamiltonian(spec, cm.HamiltonianArgs(pts[:, 0], p_, M))


def dpp_estimates(
    field: ValueField,
    spec: cm.ProblemSpec,
    t: float,
    x,
    tau: float,
    controls_to_try,
    n_paths: int = 2000,
    dt: Optional[float] = None,
    seed: int = 0,
):
    """Monte Carlo estimates of E[int_t^tau (l + psi) ds + V(tau, x_tau)] per constant control.

    Returns ``(V(t, x), [(u, mean, standard_error), ...])``.
    """
    from .sde_lab import ConstantController, monte_carlo

    if not t < tau <= spec.horizon:
        raise DomainError(f"need t < tau <= T, got t={t}, tau={tau}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if dt is None:
        dt = (tau - t) / max(1, int(round((tau - t) / 1e-3)))
    k_tau = field.slice_index(tau)

    def v_tau(X):
        return interpolate(field.grid, field.values[k_tau], np.asarray(X, dtype=float))

    sub = cm.ProblemSpec(spec.system, spec.controls, tau, v_tau, spec.running_cost, spec.penalty)
    out = []
    for u in controls_to_try:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if not spec.controls.contains(u):
            raise DomainError(f"trial control {u} is not admissible")
        rep = monte_carlo(sub, ConstantController(u), x, t, dt, n_paths, seed)
        out.append((u, rep.mean_cost[spec.penalty.value], rep.std_error[spec.penalty.value]))
    return value_at(field, t, x), out


def dpp_check(field: ValueField, spec: cm.ProblemSpec, t: float, x, tau: float, controls_to_try, **kw) -> float:
    """Gap between the best constant-control DPP estimate and V(t, x), clamped at 0."""
    v, est = dpp_estimates(field, spec, t, x, tau, controls_to_try, **kw)
    return max(0.0, min(mean for _, mean, _ in est) - v)


# -- serialization -------------------------------------------------------------


def field_to_text(field: ValueField) -> str:
    g = field.grid
    head = ["# grid", str(g.dim)]
    head += ["%.17g" % v for v in g.lower] + ["%.17g" % v for v in g.upper] + [str(p) for p in g.points]
    lines = [" ".join(head), "# times " + " ".join("%.17g" % t for t in field.times)]
    for sl in field.values.reshape(field.times.size, -1):
        lines.append(",".join("%.17g" % v for v in sl))
    return "\n".join(lines) + "\n"


def write_field(field: ValueField, path) -> Path:
    return atomic_write_text(path, field_to_text(field))


def read_field(path, spec: Optional[cm.ProblemSpec] = None) -> ValueField:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read value field {path}: {exc}") from exc
    if len(lines) < 3 or not lines[0].startswith("# grid") or not lines[1].startswith("# times"):
        raise ConfigurationError(f"{path} is not a value-field file")
    tok = lines[0].split()[2:]
    dim = int(tok[0])
    nums = tok[1:]
    if len(nums) != 3 * dim:
        raise ConfigurationError(f"{path}: malformed grid header")
    grid = SpatialGrid(
        tuple(float(v) for v in nums[:dim]),
        tuple(float(v) for v in nums[dim : 2 * dim]),
        tuple(int(v) for v in nums[2 * dim :]),
    )
    times = np.array([float(v) for v in lines[1].split()[2:]])
    rows = [ln for ln in lines[2:] if ln.strip()]
    if len(rows) != times.size:
        raise ConfigurationError(f"{path}: {len(rows)} slices for {times.size} time stamps")
    values = np.array([[float(v) for v in r.split(",")] for r in rows])
    if values.shape[1] != grid.size:
        raise ConfigurationError(f"{path}: slice length {values.shape[1]} does not match grid size {grid.size}")
    return ValueField(grid, times, values, spec=spec)
