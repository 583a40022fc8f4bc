import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparse_hjb import core_model as cm
from sparse_hjb import feedback_synthesis as fb
from sparse_hjb import hjb_solver as hs
from sparse_hjb import problems
from sparse_hjb.errors import DomainError
from sparse_hjb.sde_lab import SdePath, simulate

UNIT = cm.BoxControlSet.unit(1)


@pytest.mark.parametrize("b, u", [(2.0, -1.0), (0.5, 0.0), (-2.0, 1.0), (1.0, 0.0), (-1.0, 0.0)])
def test_bang_off_bang_cases_and_ties(b, u):
    assert fb.bang_off_bang(np.array([[b]]), UNIT)[0, 0] == u


@given(st.floats(-50, 50), st.floats(-3, -0.1), st.floats(0.1, 3))
def test_bang_off_bang_maximises_channel_integrand(b, lo, hi):
    box = cm.BoxControlSet([lo], [hi])
    u = fb.bang_off_bang(np.array([[b]]), box)[0, 0]
    assert u in (lo, 0.0, hi)
    assert -b * u - (u != 0) == cm.channel_sup_L0(b, lo, hi)


@pytest.mark.parametrize("s, x, c, T, u", [(1.0, 0.6, 1.0, 1.0, -1.0), (0.0, 0.0, 3.0, 1.0, 0.0), (0.0, 0.2, 1.0, 1.0, -1.0)])
def test_deterministic_law_examples(s, x, c, T, u):
    assert fb.deterministic_scalar_law(s, x, c, T) == u


def test_batched_law_matches_scalar_law():
    law = fb.DeterministicScalarLaw(1.0, 1.0)
    xs = np.linspace(-1, 1, 101)
    for s in (0.0, 0.4, 1.0):
        batch = law(s, xs[None])[0]
        assert all(batch[i] == fb.deterministic_scalar_law(s, x, 1.0, 1.0) for i, x in enumerate(xs))


def test_switching_value_zero_field(zero_problem):
    spec, field = zero_problem
    fmap = fb.FeedbackMap(field, spec)
    for s, x in [(0.0, 0.0), (0.5, 1.3), (1.0, -1.9)]:
        assert fb.switching_value(fmap, s, [x], 0) == 0.0
        assert fb.feedback(fmap, s, [x])[0] == 0.0


def test_switching_value_terminal_slice(sto_problem):
    spec, field = sto_problem
    fmap = fb.FeedbackMap(field, spec)
    h = field.grid.spacing[0]
    assert fb.switching_value(fmap, 1.0, [1.0], 0) == pytest.approx(2.0, abs=10 * h * h)
    with pytest.raises(DomainError):
        fb.feedback(fmap, 0.0, [3.0])


def test_feedback_is_discrete_everywhere(sto_problem, rng):
    spec, field = sto_problem
    fmap = fb.FeedbackMap(field, spec)
    X = rng.uniform(-2, 2, (1, 5000))
    for s in rng.uniform(0, 1, 20):
        assert set(np.unique(fmap(s, X))) <= {-1.0, 0.0, 1.0}


def test_feedback_maximises_G(sto_problem, rng):
    spec, field = sto_problem
    fmap = fb.FeedbackMap(field, spec)
    grid_u = np.linspace(-1, 1, 51)
    for _ in range(1000):
        s, x = rng.uniform(0, 1), rng.uniform(-1.9, 1.9)
        p = hs.gradient_at(field, s, [x])
        u_star = fb.feedback(fmap, s, [x])
        best = cm.G_value(spec, [x], u_star, p, [[0.0]])
        assert all(best >= cm.G_value(spec, [x], [u], p, [[0.0]]) - 1e-9 for u in grid_u)


def test_feedback_agrees_with_analytic_law(det_problem):
    spec, field = det_problem
    fmap = fb.FeedbackMap(field, spec)
    h = field.grid.spacing[0]
    x = field.grid.axes[0]
    for s in field.times[::50]:
        u = fmap(s, x[None])[0]
        law = fb.DeterministicScalarLaw(1.0, 1.0)(s, x[None])[0]
        assert np.count_nonzero(u != law) * h <= 4 * h


def test_deterministic_boundary_roots(det_problem):
    spec, field = det_problem
    fmap = fb.FeedbackMap(field, spec)
    h = field.grid.spacing[0]
    for s in np.linspace(0, 1, 20):
        bd = fb.extract_boundary(fmap, s, 0)
        exact = 0.5 * math.exp(-2 * (1 - s))
        assert abs(bd.positive_root("-") - exact) <= 2 * h
        # the U+ branch mirrors it on the negative side
        neg = bd.branches["+"]
        assert abs(neg[neg < 0].max() + exact) <= 2 * h


def test_zero_field_has_empty_boundary(zero_problem, tmp_path):
    spec, field = zero_problem
    bd = fb.extract_boundary(fb.FeedbackMap(field, spec), 0.3, 0)
    assert bd.is_empty()
    out = fb.write_boundaries(tmp_path / "b.csv", [bd], 1)
    assert out.read_text() == "s,channel,branch,x1\n"


# -- marching squares -------------------------------------------------------------


def test_marching_squares_circle():
    xs = ys = np.linspace(-2, 2, 81)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    radius = 1.01  # keeps the level set off the nodes
    segs = fb.marching_squares(xs, ys, X**2 + Y**2, radius**2)
    r = np.hypot(segs[..., 0], segs[..., 1])
    assert segs.shape[1:] == (2, 2) and len(segs) > 50
    assert np.max(np.abs(r - radius)) < 0.01
    # each endpoint is shared by exactly two segments on a closed curve
    pts, counts = np.unique(np.round(segs.reshape(-1, 2), 12), axis=0, return_counts=True)
    assert np.all(counts == 2)


def test_marching_squares_saddle_and_empty():
    xs = ys = np.array([0.0, 1.0])
    saddle = fb.marching_squares(xs, ys, np.array([[1.0, -1.0], [-1.0, 1.0]]), 0.0)
    assert saddle.shape == (2, 2, 2)
    assert fb.marching_squares(xs, ys, np.ones((2, 2)), 0.0).shape == (0, 2, 2)


def test_lfc_boundary_export(tmp_path):
    spec = problems.lfc()
    grid = hs.SpatialGrid((-3.0, -3.0), (3.0, 3.0), (41, 41))
    field = hs.solve_backward(spec, grid, hs.SolverConfig(save_every=1000))
    bd = fb.extract_boundary(fb.FeedbackMap(field, spec), 0.0, 0)
    assert len(bd.branches["-"]) > 0 and len(bd.branches["+"]) > 0
    path = fb.write_boundaries(tmp_path / "lfc.csv", [bd], 2)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["s", "channel", "branch", "segment", "x1", "x2"]
    assert len(rows) - 1 == 2 * sum(len(v) for v in bd.branches.values())


# -- normality --------------------------------------------------------------------


def test_normality_margin_zero_field(zero_problem):
    spec, field = zero_problem
    path = simulate(spec, fb.FeedbackMap(field, spec), [0.5], 0.0, 0.01, seed=1)
    assert fb.normality_margin(fb.FeedbackMap(field, spec), path) == 1.0


def test_normality_margin_positive_along_optimal_path(det_problem):
    spec, field = det_problem
    fmap = fb.FeedbackMap(field, spec)
    path = simulate(spec, fmap, [0.5], 0.0, 1e-3, seed=0)
    assert fb.normality_margin(fmap, path) > 0.0


def test_normality_margin_vanishes_on_boundary(sto_problem):
    spec, field = sto_problem
    fmap = fb.FeedbackMap(field, spec)
    s = float(field.times[400])
    root = fb.extract_boundary(fmap, s, 0).positive_root("-")
    pinned = SdePath(np.array([s]), np.array([[root]]), np.zeros((0, 1)), 0, 1e-3, np.zeros(1, bool))
    assert fb.normality_margin(fmap, pinned) == pytest.approx(0.0, abs=1e-9)
