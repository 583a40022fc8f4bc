import csv
import math

import numpy as np
import pytest

from sparse_hjb import core_model as cm
from sparse_hjb import feedback_synthesis as fb
from sparse_hjb import problems
from sparse_hjb import sde_lab as lab
from sparse_hjb.errors import ConfigurationError, DivergenceError, DomainError, HorizonTooLongError


def free_particle(sigma=0.0, T=1.0):
    """dx = u dt + sigma dw with g = 0."""
    return problems.custom_linear([[0.0]], [[1.0]], [[sigma]], [[0.0]], T, [-1.0], [1.0])


def test_deterministic_growth_matches_exponential():
    spec = problems.scalar_linear(c=1.0, sigma=0.0)
    path = lab.simulate(spec, lab.zero_controller(), [0.5], 0.0, 1e-4, seed=0)
    assert abs(path.states[-1, 0] - 0.5 * math.e) <= 1e-3
    assert path.states[-1, 0] == pytest.approx(0.5 * (1 + 1e-4) ** 10000, rel=1e-12)


def test_same_seed_same_path_bitwise():
    spec = problems.scalar_linear()
    a = lab.simulate(spec, lab.ConstantController([0.3]), [0.1], 0.0, 1e-3, seed=42, path_id=3)
    b = lab.simulate(spec, lab.ConstantController([0.3]), [0.1], 0.0, 1e-3, seed=42, path_id=3)
    c = lab.simulate(spec, lab.ConstantController([0.3]), [0.1], 0.0, 1e-3, seed=43, path_id=3)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.controls, b.controls)
    assert not np.array_equal(a.states, c.states)


def test_noise_stream_prefix_stable():
    assert np.array_equal(lab.noise_stream(5, 2, 10, 1), lab.noise_stream(5, 2, 30, 1)[:10])
    assert not np.array_equal(lab.noise_stream(5, 2, 10, 1), lab.noise_stream(5, 3, 10, 1))


def test_report_independent_of_chunking(sto_problem):
    spec, field = sto_problem
    fmap = fb.FeedbackMap(field, spec)
    a = lab.monte_carlo(spec, fmap, [0.5], 0.0, 1e-2, 300, seed=9, chunk_size=7)
    b = lab.monte_carlo(spec, fmap, [0.5], 0.0, 1e-2, 300, seed=9)
    assert a == b


def test_single_path_matches_batch_member():
    spec = problems.scalar_linear(sigma=0.4)
    ctrl = lab.ConstantController([-0.2])
    batch = lab._run(spec, ctrl, [0.1], 0.0, 1e-2, 11, range(5))
    single = lab.simulate(spec, ctrl, [0.1], 0.0, 1e-2, seed=11, path_id=3)
    assert batch["terminal"][0, 3] == single.states[-1, 0]


def test_weak_mean_with_constant_control():
    c, u, x0, dt, T = 1.0, 0.5, 0.2, 1e-3, 1.0
    spec = problems.scalar_linear(c=c, sigma=0.1, T=T)
    rep = lab.monte_carlo(spec, lab.ConstantController([u]), [x0], 0.0, dt, 4000, seed=2)
    exact = math.exp(c * T) * x0 + (math.exp(c * T) - 1) * u / c
    se = math.sqrt(rep.terminal_var[0] / rep.n_paths)
    assert abs(rep.terminal_mean[0] - exact) <= 3 * se + 10 * dt


def test_zero_controller_zero_cost():
    rep = lab.monte_carlo(free_particle(sigma=0.3), lab.zero_controller(), [0.5], 0.0, 1e-2, 200, seed=1)
    assert rep.mean_cost == {"L0": 0.0, "L1": 0.0, "L2": 0.0}
    assert rep.std_error["L0"] == 0.0 and rep.sparsity_fraction == 0.0


def test_l0_feedback_paths_are_bang_off_bang_and_costs_agree(sto_problem):
    spec, field = sto_problem
    fmap = fb.FeedbackMap(field, spec)
    T = spec.horizon
    for pid in range(5):
        path = lab.simulate(spec, fmap, [0.5], 0.0, 1e-3, seed=3, path_id=pid)
        assert set(np.unique(path.controls)) <= {-1.0, 0.0, 1.0}
        l0 = lab.path_cost(spec, path, "L0")
        g = spec.terminal_cost(path.states[-1][:, None])[0]
        assert l0 - g <= spec.m * T + 1e-12
        assert l0 == lab.path_cost(spec, path, "L1")
    rep = lab.monte_carlo(spec, fmap, [0.5], 0.0, 1e-3, 500, seed=3)
    assert rep.mean_cost["L0"] == rep.mean_cost["L1"] and rep.non_extreme_controls == 0


def test_path_cost_matches_report_for_one_path():
    spec = problems.scalar_linear(sigma=0.2)
    ctrl = lab.ConstantController([0.5])
    path = lab.simulate(spec, ctrl, [0.3], 0.0, 1e-2, seed=4, path_id=0)
    run = lab._run(spec, ctrl, [0.3], 0.0, 1e-2, 4, [0])
    for p in ("L0", "L1", "L2"):
        assert lab.path_cost(spec, path, p) == pytest.approx(run["cost"][p][0], rel=1e-12)


def test_grid_exit_freezes_control_and_flags(zero_problem):
    _, field = zero_problem
    spec = problems.custom_linear([[5.0]], [[1.0]], [[0.0]], [[0.0]], 1.0, [-1.0], [1.0])
    fmap = fb.FeedbackMap(field, spec)
    path = lab.simulate(spec, fmap, [1.0], 0.0, 1e-2, seed=0)
    k = int(np.argmax(path.exited))
    assert path.flagged and np.all(path.exited[k:]) and not np.any(path.exited[:k])
    with pytest.raises(DomainError):
        lab.simulate(spec, fmap, [2.5], 0.0, 1e-2, seed=0)
    rep = lab.monte_carlo(spec, fmap, [1.0], 0.0, 1e-2, 10, seed=0)
    assert rep.exit_fraction == 1.0


def test_divergence_reports_step():
    spec = problems.custom_linear([[1e200]], [[1.0]], [[0.0]], [[0.0]], 1.0, [-1.0], [1.0])
    with pytest.raises(DivergenceError, match="step"):
        lab.simulate(spec, lab.zero_controller(), [1e150], 0.0, 0.1, seed=0)


def test_step_must_divide_horizon():
    with pytest.raises(ConfigurationError):
        lab.simulate(problems.scalar_linear(), lab.zero_controller(), [0.0], 0.0, 0.3, seed=0)


# -- Riccati baseline --------------------------------------------------------------


def logistic_gain(c, q, tau):
    """Closed form of dP/dtau = 2 c P - P^2 with P(0) = q."""
    return 2 * c * q / (q + (2 * c - q) * math.exp(-2 * c * tau))


def test_riccati_zero_weight():
    sched = lab.riccati_baseline(0.0, 0.1, 1.0, q_T=0.0)
    assert np.all(sched.gains == 0.0)


def test_riccati_short_horizon_is_continuous():
    assert lab.riccati_baseline(1.0, 0.1, 1e-6)(0.0) == pytest.approx(1.0, abs=1e-5)


def test_riccati_self_convergence_and_closed_form():
    coarse = lab.riccati_baseline(1.0, 0.1, 1.0)
    fine = lab.riccati_baseline(1.0, 0.1, 1.0, steps=10_000)
    assert abs(coarse(0.0) - fine(0.0)) <= 1e-8
    assert coarse(0.0) == pytest.approx(logistic_gain(1.0, 1.0, 1.0), abs=1e-10)
    assert coarse(0.4) == pytest.approx(logistic_gain(1.0, 1.0, 0.6), abs=1e-10)


def test_riccati_blow_up():
    with pytest.raises(HorizonTooLongError):
        lab.riccati_baseline(0.0, 0.1, 2.0, q_T=-1.0)


def test_clamped_linear_feedback_stays_in_box():
    sched = lab.riccati_baseline(1.0, 0.1, 1.0)
    ctrl = lab.LinearFeedback(sched, cm.BoxControlSet.unit(1))
    X = np.linspace(-3, 3, 61)[None]
    assert np.all(np.abs(ctrl(0.0, X)) <= 1.0)
    assert np.allclose(lab.LinearFeedback(sched)(0.0, X), -sched(0.0) * X)


# -- moments -----------------------------------------------------------------------


def test_moment_ratio_constant_path():
    rep = lab.monte_carlo(free_particle(), lab.zero_controller(), [0.7], 0.0, 1e-2, 10, seed=0)
    assert lab.moment_check(rep, [0.7], 2) == rep.sup_moment[2] / (1 + 0.7 * 0.7)
    assert lab.moment_check(rep, [0.7], 2) == pytest.approx(0.49 / 1.49, rel=1e-15)
    with pytest.raises(ConfigurationError):
        lab.moment_check(rep, [0.7], 6)


def test_moment_ratio_stable_across_seeds():
    spec = problems.scalar_linear(sigma=0.5)
    r = [lab.moment_check(lab.monte_carlo(spec, lab.zero_controller(), [0.5], 0.0, 1e-2, 2000, seed=s), [0.5]) for s in (1, 2)]
    assert abs(r[0] - r[1]) <= 0.2 * r[0]


def test_moment_ratio_brownian_scaling():
    ratios = []
    for T in (0.5, 1.0):
        rep = lab.monte_carlo(free_particle(sigma=0.4, T=T), lab.zero_controller(), [0.0], 0.0, 1e-2, 4000, seed=5)
        ratios.append(lab.moment_check(rep, [0.0], 2))
    assert ratios[1] / ratios[0] == pytest.approx(2.0, rel=0.3)


# -- export ------------------------------------------------------------------------


def test_path_and_report_csv(tmp_path):
    spec = problems.scalar_linear()
    path = lab.simulate(spec, lab.ConstantController([1.0]), [0.0], 0.0, 0.1, seed=0)
    out = lab.write_path_csv(tmp_path / "p.csv", path)
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["t", "x1", "u1", "flag"]
    assert len(rows) == 12 and rows[-1][2] == "" and float(rows[1][1]) == 0.0
    rep = lab.monte_carlo(spec, lab.zero_controller(), [0.0], 0.0, 0.1, 5, seed=0)
    rows = list(csv.reader(lab.write_report_csv(tmp_path / "r.csv", rep, "zero").open()))
    assert rows[0][0] == "controller" and rows[1][0] == "zero" and len(rows) == 2
    assert dict(zip(*rows))["noise_checksum"] == rep.noise_checksum
