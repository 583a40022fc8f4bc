"""Closed-loop Euler-Maruyama simulation and Monte Carlo cost estimation.

Randomness is counter based: path ``i`` of a run with seed ``s`` draws its
Wiener increments from a Philox stream keyed by ``(s, i)``, row ``k`` of
that stream being step ``k``.  A path therefore never depends on how many
other paths are simulated alongside it, nor in which order.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import core_model as cm
from ._io import write_csv
from .errors import ConfigurationError, DivergenceError, DomainError, HorizonTooLongError

PENALTIES = ("L0", "L1", "L2")


# -- controllers ---------------------------------------------------------------
# A controller maps (s, X) with X of shape (n, N) to controls of shape (m, N).
# An optional ``grid`` attribute enables the grid-exit policy.


@dataclass(frozen=True)
class ConstantController:
    u: np.ndarray
    grid = None

    def __call__(self, s, X):
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        return np.repeat(u[:, None], X.shape[1], axis=1)


def zero_controller(m: int = 1) -> ConstantController:
    return ConstantController(np.zeros(m))


@dataclass(frozen=True)
class RiccatiSchedule:
    """Gain P(t) of the scalar LQ problem on an RK4 time grid."""

    times: np.ndarray
    gains: np.ndarray
    r: float = 1.0

    def __call__(self, t: float) -> float:
        return float(np.interp(t, self.times, self.gains))


@dataclass(frozen=True)
class LinearFeedback:
    """u = -P(t) x / r, optionally clipped to a box (the fair-comparison variant)."""

    schedule: RiccatiSchedule
    clamp: Optional[cm.BoxControlSet] = None
    grid = None

    def __call__(self, s, X):
        u = -self.schedule(s) * X[:1] / self.schedule.r
        if self.clamp is not None:
            u = np.clip(u, self.clamp.lower[:, None], self.clamp.upper[:, None])
        return u


def riccati_baseline(c: float, sigma: float, T: float, r: float = 1.0, q_T: float = 1.0, steps: int = 1000) -> RiccatiSchedule:
    """Integrate -dP/dt = 2 c P - P^2 / r backward from P(T) = q_T with RK4.

    ``sigma`` only shifts the value function, not the gain; it is accepted so
    call sites can pass the full scalar model.
    """
    if not T > 0:
        raise ConfigurationError("horizon must be positive")
    if steps < 1000:
        raise ConfigurationError("use at least 1000 RK4 steps")

    def rhs(P):  # dP/d(tau) with tau = T - t
        return 2.0 * c * P - P * P / r

    h = T / steps
    P = np.empty(steps + 1)
    P[steps] = q_T
    for k in range(steps, 0, -1):
        p = P[k]
        with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported below
            k1 = rhs(p)
            k2 = rhs(p + 0.5 * h * k1)
            k3 = rhs(p + 0.5 * h * k2)
            k4 = rhs(p + h * k3)
            P[k - 1] = p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not math.isfinite(P[k - 1]):
            raise HorizonTooLongError(f"Riccati gain diverged at t={(k - 1) * h:.6g}")
    return RiccatiSchedule(np.linspace(0.0, T, steps + 1), P, r)


# -- paths ---------------------------------------------------------------------


@dataclass
class SdePath:
    """One simulated trajectory; ``controls[k]`` is held on [t_k, t_{k+1})."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    seed: int
    dt: float
    exited: np.ndarray
    path_id: int = 0

    @property
    def flagged(self) -> bool:
        return bool(np.any(self.exited))


def noise_stream(seed: int, path_id: int, steps: int, noise_dim: int) -> np.ndarray:
    key = np.array([int(seed) % 2**64, int(path_id) % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal((steps, noise_dim))


def _step_count(spec: cm.ProblemSpec, t0: float, dt: float) -> int:
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    span = spec.horizon - t0
    N = int(round(span / dt))
    if N < 1 or abs(N * dt - span) > 1e-9 * max(1.0, spec.horizon):
        raise ConfigurationError(f"dt={dt} does not divide the interval [{t0}, {spec.horizon}]")
    return N


def _run(spec, controller, x0, t0, dt, seed, path_ids, record=False, hasher=None):
    """Integrate a batch of paths; returns per-path statistics (and arrays if ``record``)."""
    sysm = spec.system
    n, m = spec.n, spec.m
    N = _step_count(spec, t0, dt)
    ids = list(path_ids)
    B = len(ids)
    noise = np.stack([noise_stream(seed, i, N, sysm.noise_dim) for i in ids], axis=-1)  # (N, d, B)
    if hasher is not None:
        for b in range(B):
            hasher.update(np.ascontiguousarray(noise[:, :, b]).tobytes())
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (n,):
        raise ConfigurationError(f"initial state has shape {x0.shape}, expected ({n},)")
    X = np.repeat(x0[:, None], B, axis=1)
    grid = getattr(controller, "grid", None)
    if grid is not None and not np.all(grid.contains(X)):
        raise DomainError(f"initial state {x0} outside the feedback grid")
    sq = math.sqrt(dt)
    cost = {p: np.zeros(B) for p in PENALTIES}
    ell_int = np.zeros(B)
    exited = np.zeros(B, dtype=bool)
    sup = np.sqrt(np.sum(X * X, axis=0))
    lo, hi = spec.controls.lower[:, None], spec.controls.upper[:, None]
    non_extreme = 0
    U_prev = None
    if record:
        states = np.empty((N + 1, n, B))
        controls = np.empty((N, m, B))
        flags = np.zeros((N + 1, B), dtype=bool)
        states[0] = X
    for k in range(N):
        t = t0 + k * dt
        U = np.asarray(controller(t, X), dtype=float)
        if grid is not None:
            out = ~grid.contains(X)
            if np.any(out):
                U = np.where(out[None], U_prev, U)
                exited |= out
        U_prev = U
        non_extreme += int(np.count_nonzero((U != 0.0) & (U != lo) & (U != hi)))
        cost["L0"] += np.sum(U != 0.0, axis=0) * dt
        cost["L1"] += np.sum(np.abs(U), axis=0) * dt
        cost["L2"] += np.sum(U * U, axis=0) * dt
        ell_int += spec.ell(X) * dt
        S = np.asarray(sysm.sigma(X), dtype=float)
        dW = noise[k]
        diff = S[:, 0] * dW[0]
        for q in range(1, sysm.noise_dim):
            diff = diff + S[:, q] * dW[q]
        with np.errstate(over="ignore", invalid="ignore"):  # reported below as DivergenceError
            X = X + sysm.drift(X, U) * dt + diff * sq
        if not np.all(np.isfinite(X)):
            raise DivergenceError(f"non-finite state at step {k + 1}")
        sup = np.maximum(sup, np.sqrt(np.sum(X * X, axis=0)))
        if record:
            states[k + 1] = X
            controls[k] = U
            flags[k + 1] = exited
    gT = np.asarray(spec.terminal_cost(X), dtype=float)
    res = {
        "cost": {p: cost[p] + ell_int + gT for p in PENALTIES},
        "on_time": cost["L0"],
        "terminal": X,
        "sup": sup,
        "exited": exited,
        "non_extreme": non_extreme,
        "N": N,
    }
    if record:
        res.update(states=states, controls=controls, flags=flags)
    return res


def simulate(spec: cm.ProblemSpec, controller, x0, t0: float, dt: float, seed: int, path_id: int = 0) -> SdePath:
    """Euler-Maruyama path under ``controller``.

    Leaving the controller's grid freezes the control at its last value and
    sets the path's exit flag from that step on.
    """
    r = _run(spec, controller, x0, t0, dt, seed, [path_id], record=True)
    N = r["N"]
    return SdePath(
        times=t0 + dt * np.arange(N + 1),
        states=r["states"][:, :, 0],
        controls=r["controls"][:, :, 0],
        seed=int(seed),
        dt=float(dt),
        exited=r["flags"][:, 0],
        path_id=int(path_id),
    )


def path_cost(spec: cm.ProblemSpec, path: SdePath, penalty="L0") -> float:
    """Left-endpoint quadrature of the running costs plus g(x_N) along a stored path."""
    pen = cm.Penalty.parse(penalty)
    U = path.controls.T
    X = path.states[:-1].T
    running = np.sum((cm.control_cost(pen, U) + spec.ell(X)) * path.dt)
    return float(running + spec.terminal_cost(path.states[-1]))


# -- Monte Carlo ---------------------------------------------------------------


@dataclass(frozen=True)
class SimulationReport:
    n_paths: int
    seed: int
    t0: float
    dt: float
    mean_cost: dict
    std_error: dict
    sparsity_fraction: float
    terminal_mean: tuple
    terminal_var: tuple
    max_sup_norm: float
    sup_moment: dict
    exit_fraction: float
    noise_checksum: str
    non_extreme_controls: int = 0

    def as_row(self) -> dict:
        row = {"n_paths": self.n_paths, "seed": self.seed, "t0": self.t0, "dt": self.dt}
        for p in PENALTIES:
            row[f"mean_cost_{p}"] = self.mean_cost[p]
            row[f"std_error_{p}"] = self.std_error[p]
        row["sparsity_fraction"] = self.sparsity_fraction
        for i, (mu, var) in enumerate(zip(self.terminal_mean, self.terminal_var), 1):
            row[f"terminal_mean_x{i}"] = mu
            row[f"terminal_var_x{i}"] = var
        row["max_sup_norm"] = self.max_sup_norm
        for p, v in sorted(self.sup_moment.items()):
            row[f"sup_moment_{p}"] = v
        row["exit_fraction"] = self.exit_fraction
        row["noise_checksum"] = self.noise_checksum
        row["non_extreme_controls"] = self.non_extreme_controls
        return row


def _mean_var(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = math.fsum(values.tolist()) / n
    return mean, math.fsum(((values - mean) ** 2).tolist()) / (n - 1)


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    mean, var = _mean_var(values)
    return mean, math.sqrt(var / values.size)


def monte_carlo(
    spec: cm.ProblemSpec,
    controller,
    x0,
    t0: float,
    dt: float,
    n_paths: int,
    seed: int,
    chunk_size: int = 4096,
) -> SimulationReport:
    """Aggregate ``n_paths`` independent paths (ids 0..n_paths-1) into a report.

    Means use exactly rounded sums, so the report is independent of chunking.
    """
    if n_paths < 2:
        raise ConfigurationError("monte_carlo needs at least two paths")
    hasher = hashlib.sha256()
    parts = []
    for start in range(0, n_paths, chunk_size):
        ids = range(start, min(n_paths, start + chunk_size))
        parts.append(_run(spec, controller, x0, t0, dt, seed, ids, hasher=hasher))
    costs = {p: np.concatenate([r["cost"][p] for r in parts]) for p in PENALTIES}
    on_time = np.concatenate([r["on_time"] for r in parts])
    term = np.concatenate([r["terminal"] for r in parts], axis=1)
    sup = np.concatenate([r["sup"] for r in parts])
    exited = np.concatenate([r["exited"] for r in parts])
    mean_cost, std_error = {}, {}
    for p in PENALTIES:
        mean_cost[p], std_error[p] = _mean_se(costs[p])
    span = spec.m * (spec.horizon - t0)
    sparsity = math.fsum((on_time / span).tolist()) / n_paths
    tm, tv = [], []
    for i in range(spec.n):
        mu, var = _mean_var(term[i])
        tm.append(mu)
        tv.append(var)
    return SimulationReport(
        n_paths=n_paths,
        seed=int(seed),
        t0=float(t0),
        dt=float(dt),
        mean_cost=mean_cost,
        std_error=std_error,
        sparsity_fraction=min(1.0, max(0.0, sparsity)),
        terminal_mean=tuple(tm),
        terminal_var=tuple(tv),
        max_sup_norm=float(np.max(sup)),
        sup_moment={p: math.fsum((sup**p).tolist()) / n_paths for p in (2, 4)},
        exit_fraction=float(np.count_nonzero(exited)) / n_paths,
        noise_checksum=hasher.hexdigest(),
        non_extreme_controls=sum(r["non_extreme"] for r in parts),
    )


def moment_check(report: SimulationReport, x0, p_order: int = 2) -> float:
    """E[sup_s |x_s|^p] / (1 + |x0|^p) from the report's pathwise maxima."""
    if p_order not in report.sup_moment:
        raise ConfigurationError(f"report carries sup moments for p in {sorted(report.sup_moment)}")
    r0 = float(np.linalg.norm(np.atleast_1d(np.asarray(x0, dtype=float))))
    return report.sup_moment[p_order] / (1.0 + r0**p_order)


# -- export --------------------------------------------------------------------


def write_path_csv(out, path: SdePath):
    n = path.states.shape[1]
    m = path.controls.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)] + ["flag"]
    rows = []
    for k, t in enumerate(path.times):
        u = list(path.controls[k]) if k < len(path.controls) else [""] * m
        rows.append([t, *path.states[k], *u, int(path.exited[k])])
    return write_csv(out, header, rows)


def write_report_csv(out, report: SimulationReport, label: Optional[str] = None):
    row = report.as_row()
    if label is not None:
        row = {"controller": label, **row}
    return write_csv(out, list(row), [list(row.values())])
