"""Acceptance battery: oracle and property checks with fixed tolerances.

Each ``check_*`` returns a :class:`CheckResult`; ``cli compare`` and the test
suite both run them.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import core_model as cm
from . import feedback_synthesis as fb
from . import hjb_solver as hs
from . import problems
from . import sde_lab as lab

SCALAR_GRID = hs.SpatialGrid(-2.0, 2.0, 401)
LFC_GRID = hs.SpatialGrid((-3.0, -3.0), (3.0, 3.0), (161, 161))
MC_DT = 1e-3
MC_PATHS = 10_000
MC_SEED = 20210531


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (
            f"[{tag}] {self.name}: measured={self.measured:.6g} tolerance={self.tolerance:.6g}"
            f" ({self.seconds:.2f}s){' ' + self.detail if self.detail else ''}"
        )


class _Timer:
    def __enter__(self):
        self.t = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t


# -- shared solves ---------------------------------------------------------------


def solve_scalar(sigma: float, penalty="L0", grid: hs.SpatialGrid = SCALAR_GRID, sim_dt: Optional[float] = None,
                 c: float = 1.0, T: float = 1.0):
    """Scalar-linear field; with ``sim_dt`` the steps are aligned to the simulation grid."""
    spec = problems.scalar_linear(c=c, sigma=sigma, T=T, penalty=penalty)
    K = None if sim_dt is None else hs.aligned_time_steps(spec, grid, sim_dt)
    return spec, hs.solve_backward(spec, grid, hs.SolverConfig(time_steps=K))


def random_hamiltonian_args(rng: np.random.Generator, n: int, scale: float = 10.0):
    x = rng.uniform(-scale, scale, n)
    p = rng.uniform(-scale, scale, n)
    M = rng.uniform(-scale, scale, (n, n))
    return cm.HamiltonianArgs(x, p, 0.5 * (M + M.T))


# -- criteria --------------------------------------------------------------------


def check_hamiltonian_oracle(n_draws: int = 1000, grid_per_dim: int = 10001, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    with _Timer() as tm:
        for spec in (problems.scalar_linear(), problems.lfc()):
            for _ in range(n_draws):
                args = random_hamiltonian_args(rng, spec.n)
                d = abs(cm.hamiltonian(spec, args) - cm.hamiltonian_bruteforce(spec, args, grid_per_dim))
                worst = max(worst, d)
    ok = worst <= 1e-9 and tm.seconds < 10.0
    return CheckResult("1 hamiltonian closed form vs brute force", ok, worst, 1e-9, "scalar+LFC", tm.seconds)


def check_l0_l1_identity(sigma: float = 0.1, grid: hs.SpatialGrid = SCALAR_GRID, c: float = 1.0,
                         T: float = 1.0) -> CheckResult:
    with _Timer() as tm:
        _, f0 = solve_scalar(sigma, "L0", grid, c=c, T=T)
        _, f1 = solve_scalar(sigma, "L1", grid, c=c, T=T)
        diff = float(np.max(np.abs(f0.values - f1.values)))
    ok = diff <= 1e-12 and tm.seconds < 30.0
    detail = "bitwise equal" if np.array_equal(f0.values, f1.values) else "not bitwise equal"
    return CheckResult("2 L0 field equals L1 field", ok, diff, 1e-12, detail, tm.seconds)


def check_deterministic_boundary(field: hs.ValueField, spec: cm.ProblemSpec, c: float = 1.0, n_times: int = 20) -> CheckResult:
    h = field.grid.spacing[0]
    fmap = fb.FeedbackMap(field, spec)
    T = spec.horizon
    worst = 0.0
    with _Timer() as tm:
        for s in np.linspace(0.0, T, n_times):
            root = fb.extract_boundary(fmap, s, 0).positive_root("-")
            exact = 0.5 * math.exp(-2.0 * c * (T - s))
            worst = max(worst, abs(root - exact) if math.isfinite(root) else math.inf)
    return CheckResult("3 deterministic switching boundary vs analytic law", worst <= 2 * h, worst, 2 * h,
                       f"{n_times} times", tm.seconds)


def value_probe_errors(field: hs.ValueField, spec: cm.ProblemSpec):
    v_err = abs(hs.value_at(field, 0.0, [0.05]) - 0.0025 * math.e**2)
    res = abs(hs.hjb_residual(field, 0.5, [0.05], spec))
    return v_err, res


def check_value_probe(field: hs.ValueField, spec: cm.ProblemSpec):
    v_err, res = value_probe_errors(field, spec)
    return [
        CheckResult("4a deterministic V(0,0.05) vs 0.0025 e^2", v_err <= 2e-3, v_err, 2e-3),
        CheckResult("4b HJB residual at (0.5,0.05)", res <= 5e-2, res, 5e-2),
    ]


def check_boundary_ordering(f_sto: hs.ValueField, spec_sto, f_det: hs.ValueField, spec_det) -> CheckResult:
    h = f_sto.grid.spacing[0]
    m_sto, m_det = fb.FeedbackMap(f_sto, spec_sto), fb.FeedbackMap(f_det, spec_det)
    worst = math.inf
    with _Timer() as tm:
        for s in f_sto.times:
            r_s = fb.extract_boundary(m_sto, s, 0).positive_root("-")
            r_d = fb.extract_boundary(m_det, s, 0).positive_root("-")
            worst = min(worst, r_s - r_d)
    return CheckResult("5 stochastic zero region contains deterministic one", worst >= -2 * h, worst, -2 * h,
                       f"min(stochastic-deterministic root) over {f_sto.times.size} slices", tm.seconds)


def l0_report(field, spec, x0=0.5, dt=MC_DT, n_paths=MC_PATHS, seed=MC_SEED):
    return lab.monte_carlo(spec, fb.FeedbackMap(field, spec), [x0], 0.0, dt, n_paths, seed)


def check_bang_off_bang(report: lab.SimulationReport, seconds: float = 0.0) -> CheckResult:
    ok = report.non_extreme_controls == 0 and seconds < 60.0
    return CheckResult("6 feedback emits only {U-,0,U+}", ok, report.non_extreme_controls, 0,
                       f"{report.n_paths} paths", seconds)


def check_value_consistency(report: lab.SimulationReport, field: hs.ValueField, x0=0.5, seconds: float = 0.0) -> CheckResult:
    v = hs.value_at(field, 0.0, [x0])
    gap = abs(report.mean_cost["L0"] - v)
    tol = 3 * report.std_error["L0"] + 0.05
    ok = gap <= tol and report.exit_fraction < 0.01 and seconds < 120.0
    return CheckResult("7 Monte Carlo L0 cost vs V(0,x0)", ok, gap, tol,
                       f"MC={report.mean_cost['L0']:.5f} V={v:.5f}", seconds)


def check_sparsity_contrast(field, spec, x0=0.5, dt=MC_DT, n_paths=MC_PATHS, seed=MC_SEED,
                            l0: Optional[lab.SimulationReport] = None, c: float = 1.0) -> CheckResult:
    with _Timer() as tm:
        if l0 is None:
            l0 = l0_report(field, spec, x0, dt, n_paths, seed)
        sched = lab.riccati_baseline(c, 0.0, spec.horizon)
        l2 = lab.monte_carlo(spec, lab.LinearFeedback(sched, spec.controls), [x0], 0.0, dt, n_paths, seed)
    paired = l0.noise_checksum == l2.noise_checksum
    ok = paired and l0.sparsity_fraction < l2.sparsity_fraction and l2.sparsity_fraction >= 0.99
    return CheckResult("8 L0 sparser than clamped L2 baseline", ok, l0.sparsity_fraction, l2.sparsity_fraction,
                       f"L2 fraction={l2.sparsity_fraction:.4f} paired={paired}", tm.seconds)


def lfc_zero_regions(grid: hs.SpatialGrid = LFC_GRID, T: float = 0.5, ds=(0.4, problems.LFC_LINEAR_D)):
    out = {}
    for d in ds:
        spec = problems.lfc(d=d, T=T)
        f = hs.solve_backward(spec, grid, hs.SolverConfig(save_every=10**9))
        b = fb._nodal_switching(fb.FeedbackMap(f, spec), 0.0, 0)
        out[d] = fb.bang_off_bang(b[None], spec.controls)[0] == 0.0
    return out


def lfc_containment(z_small: np.ndarray, z_large: np.ndarray, grid: hs.SpatialGrid):
    """Fraction of probe points of the small zero region whose 1-cell neighbourhood
    along the probe line lies in the large one, and whether the large region is
    strictly bigger on every probe line."""
    i0 = int(np.argmin(np.abs(grid.axes[0])))
    j0 = int(np.argmin(np.abs(grid.axes[1])))
    lines = [(z_small[:, j0], z_large[:, j0]), (z_small[i0, :], z_large[i0, :])]
    good = total = 0
    strict = True
    for small, large in lines:
        strict &= bool(large.sum() > small.sum() and np.all(large[small]))
        for k in np.nonzero(small)[0]:
            total += 1
            nb = large[max(k - 1, 0) : k + 2]
            good += bool(np.all(nb))
    return (good / total if total else 0.0), strict


def check_lfc_ordering(grid: hs.SpatialGrid = LFC_GRID, T: float = 0.5) -> CheckResult:
    with _Timer() as tm:
        z = lfc_zero_regions(grid, T)
        frac, strict = lfc_containment(z[0.4], z[problems.LFC_LINEAR_D], grid)
    ok = strict and frac >= 0.8 and tm.seconds < 600
    return CheckResult("9 LFC zero region: linear case contains d=0.4", ok, frac, 0.8,
                       f"strict={strict}", tm.seconds)


def check_convergence(coarse=SCALAR_GRID) -> list:
    fine = hs.SpatialGrid(coarse.lower, coarse.upper, 2 * coarse.points[0] - 1)
    errs = []
    for grid in (coarse, fine):
        spec, f = solve_scalar(0.0, grid=grid)
        errs.append(value_probe_errors(f, spec) + (f.info["dt"],))
    (v1, r1, dt1), (v2, r2, dt2) = errs
    halved = abs(dt2 - dt1 / 2) <= 1e-12
    return [
        CheckResult("10a value error ratio under refinement", halved and v1 / v2 >= 1.5, v1 / v2, 1.5,
                    f"{v1:.3e} -> {v2:.3e}"),
        CheckResult("10b residual ratio under refinement", halved and r1 / r2 >= 1.5, r1 / r2, 1.5,
                    f"{r1:.3e} -> {r2:.3e}"),
    ]


def check_determinism(field, spec, first: lab.SimulationReport, x0=0.5, dt=MC_DT, n_paths=MC_PATHS,
                      seed=MC_SEED) -> CheckResult:
    again = lab.monte_carlo(spec, fb.FeedbackMap(field, spec), [x0], 0.0, dt, n_paths, seed)
    same = again == first
    return CheckResult("11 repeated Monte Carlo report is bitwise identical", same, float(same), 1.0)


# -- batteries used by the CLI ----------------------------------------------------


def scalar_battery(spec: cm.ProblemSpec, field: hs.ValueField, x0: float, dt: float, n_paths: int, seed: int,
                   c: float, sigma: float) -> list:
    grid = field.grid
    results = [check_l0_l1_identity(sigma, grid, c, spec.horizon)]
    with _Timer() as tm:
        rep = lab.monte_carlo(spec, fb.FeedbackMap(field, spec), [x0], 0.0, dt, n_paths, seed)
    results.append(check_bang_off_bang(rep, tm.seconds))
    results.append(check_value_consistency(rep, field, x0, tm.seconds))
    if sigma == 0.0:
        results.append(check_deterministic_boundary(field, spec, c))
        if c == 1.0 and spec.horizon == 1.0:
            results.extend(check_value_probe(field, spec))
    else:
        spec_det, f_det = solve_scalar(0.0, grid=grid, c=c, T=spec.horizon)
        results.append(check_boundary_ordering(field, spec, f_det, spec_det))
        results.append(check_sparsity_contrast(field, spec, x0, dt, n_paths, seed, l0=rep, c=c))
    return results


def lfc_battery(grid: hs.SpatialGrid, T: float) -> list:
    return [check_hamiltonian_oracle(n_draws=200), check_lfc_ordering(grid, T)]
