"""Bang-off-bang feedback from a solved value field, and switching boundaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from . import core_model as cm
from ._io import write_csv
from .hjb_solver import ValueField, _as_points, _check_inside, interpolate


@dataclass(frozen=True)
class FeedbackMap:
    """State feedback u(s, x) maximising the Hamiltonian integrand.

    Channel j emits U_j^- when b_j U_j^- < -1, U_j^+ when b_j U_j^+ < -1 and
    0 otherwise, with b_j = f_j(x) . D_x V(s, x).  Ties go to 0.

    Calling the map on a batch (n, N) of states is the simulation interface;
    states off the grid are clamped there instead of raising.
    """

    field: ValueField
    spec: cm.ProblemSpec
    tie_break: str = "off"

    @property
    def grid(self):
        return self.field.grid

    def switching(self, s: float, X: np.ndarray) -> np.ndarray:
        """b_j(s, x) for a batch of states, shape (m, N)."""
        grad = interpolate(self.field.grid, self.field.nodal_gradient(self.field.slice_index(s)), X)
        F = self.spec.system.control_matrix(X)
        return np.einsum("imN,iN->mN", F, grad)

    def __call__(self, s: float, X: np.ndarray) -> np.ndarray:
        return bang_off_bang(self.switching(s, X), self.spec.controls)


def bang_off_bang(b: np.ndarray, controls: cm.BoxControlSet) -> np.ndarray:
    """Per-channel argmax of -b u - |u|^0 on the box, preferring 0 at ties."""
    lo = controls.lower.reshape((-1,) + (1,) * (b.ndim - 1))
    hi = controls.upper.reshape((-1,) + (1,) * (b.ndim - 1))
    u = np.zeros(b.shape)
    u = np.where(b * lo < -1.0, lo, u)
    u = np.where(b * hi < -1.0, hi, u)
    return u


def switching_value(fmap: FeedbackMap, s: float, x, j: int) -> float:
    pts, _ = _as_points(fmap.grid, x)
    _check_inside(fmap.grid, pts)
    return float(fmap.switching(s, pts)[j, 0])


def feedback(fmap: FeedbackMap, s: float, x) -> np.ndarray:
    pts, _ = _as_points(fmap.grid, x)
    _check_inside(fmap.grid, pts)
    return fmap(s, pts)[:, 0]


def deterministic_scalar_law(s: float, x: float, c: float, T: float) -> float:
    """Analytic L0-optimal law for dx = (c x + u) dt, g = x^2, |u| <= 1."""
    thr = 0.5 * math.exp(-2.0 * c * (T - s))
    if x > thr:
        return -1.0
    if x < -thr:
        return 1.0
    return 0.0


@dataclass(frozen=True)
class DeterministicScalarLaw:
    """Batched controller form of :func:`deterministic_scalar_law`."""

    c: float
    T: float
    grid = None

    def __call__(self, s: float, X: np.ndarray) -> np.ndarray:
        thr = 0.5 * math.exp(-2.0 * self.c * (self.T - s))
        x = X[0]
        return np.where(x > thr, -1.0, np.where(x < -thr, 1.0, 0.0))[None]


# -- boundaries ------------------------------------------------------------------


@dataclass
class SwitchingBoundary:
    """Switching set of one channel at time ``s``.

    ``branches`` maps '-' (control U^-) and '+' (control U^+) to the level set
    b_j U^{+/-} = -1: an array of roots in 1-D, or of segments with shape
    (k, 2, 2) in 2-D.
    """

    s: float
    channel: int
    branches: Dict[str, np.ndarray] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return all(len(v) == 0 for v in self.branches.values())

    def positive_root(self, branch: str = "-") -> float:
        roots = self.branches[branch]
        pos = roots[roots > 0]
        return float(pos.min()) if pos.size else math.nan


def _roots_1d(xs: np.ndarray, q: np.ndarray) -> np.ndarray:
    roots = list(xs[q == 0.0])
    a, b = q[:-1], q[1:]
    idx = np.nonzero(a * b < 0.0)[0]
    for i in idx:
        roots.append(xs[i] - a[i] * (xs[i + 1] - xs[i]) / (b[i] - a[i]))
    return np.array(sorted(roots))


def marching_squares(xs: np.ndarray, ys: np.ndarray, F: np.ndarray, level: float = 0.0) -> np.ndarray:
    """Segments of the level set F = level on a tensor grid, shape (k, 2, 2).

    Linear interpolation along cell edges; saddle cells are resolved with the
    cell-centre average.
    """
    above = F > level
    segs: List = []

    def cross(p, q, fp, fq):
        w = (level - fp) / (fq - fp)
        return (p[0] + w * (q[0] - p[0]), p[1] + w * (q[1] - p[1]))

    mixed = (above[:-1, :-1] != above[1:, :-1]) | (above[:-1, :-1] != above[1:, 1:]) | (
        above[:-1, :-1] != above[:-1, 1:]
    )
    for i, j in zip(*np.nonzero(mixed)):
        corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)]
        pts = [(xs[a], ys[b]) for a, b in corners]
        vals = [F[a, b] for a, b in corners]
        ins = [above[a, b] for a, b in corners]
        edges = {}
        for e in range(4):
            a, b = e, (e + 1) % 4
            if ins[a] != ins[b]:
                edges[e] = cross(pts[a], pts[b], vals[a], vals[b])
        if len(edges) == 2:
            e0, e1 = sorted(edges)
            segs.append((edges[e0], edges[e1]))
        elif len(edges) == 4:
            centre = sum(vals) / 4.0 > level
            # pairs of edges isolating the corners that are not joined through the centre
            if ins[0] == centre:
                pairs = ((0, 1), (2, 3))
            else:
                pairs = ((3, 0), (1, 2))
            for e0, e1 in pairs:
                segs.append((edges[e0], edges[e1]))
    return np.array(segs, dtype=float).reshape(-1, 2, 2)


def _nodal_switching(fmap: FeedbackMap, s: float, j: int) -> np.ndarray:
    f = fmap.field
    X = f.grid.nodes()
    grad = f.nodal_gradient(f.slice_index(s))
    F = fmap.spec.system.control_matrix(X)
    return np.einsum("i...,i...->...", F[:, j], grad)


def extract_boundary(fmap: FeedbackMap, s: float, j: int) -> SwitchingBoundary:
    grid = fmap.grid
    b = _nodal_switching(fmap, s, j)
    lo, hi = fmap.spec.controls.lower[j], fmap.spec.controls.upper[j]
    out = SwitchingBoundary(s=float(fmap.field.times[fmap.field.slice_index(s)]), channel=j)
    for branch, u in (("-", lo), ("+", hi)):
        q = b * u + 1.0
        if grid.dim == 1:
            out.branches[branch] = _roots_1d(grid.axes[0], q)
        else:
            out.branches[branch] = marching_squares(grid.axes[0], grid.axes[1], q, 0.0)
    return out


def boundary_rows(boundary: SwitchingBoundary, extra=None):
    """CSV rows (s, channel, branch, coordinates...) for one boundary slice."""
    rows = []
    for branch, data in boundary.branches.items():
        if data.ndim == 1:
            for x in data:
                row = [boundary.s, boundary.channel, branch, x]
                if extra is not None:
                    row.append(extra(boundary.s, branch))
                rows.append(row)
        else:
            for k, seg in enumerate(data):
                for end in seg:
                    rows.append([boundary.s, boundary.channel, branch, k, end[0], end[1]])
    return rows


def boundary_header(dim: int, analytic: bool = False):
    if dim == 1:
        return ["s", "channel", "branch", "x1"] + (["analytic"] if analytic else [])
    return ["s", "channel", "branch", "segment", "x1", "x2"]


def write_boundaries(path, boundaries, dim: int, extra=None):
    rows = [r for b in boundaries for r in boundary_rows(b, extra)]
    return write_csv(path, boundary_header(dim, extra is not None), rows)


def normality_margin(fmap: FeedbackMap, path) -> float:
    """min over samples and channels of the distance of b_j U_j^{+/-} from -1."""
    lo = fmap.spec.controls.lower[:, None]
    hi = fmap.spec.controls.upper[:, None]
    best = math.inf
    for t, x in zip(path.times, path.states):
        pts = np.asarray(x, dtype=float)[:, None]
        _check_inside(fmap.grid, pts)
        b = fmap.switching(float(t), pts)
        d = np.minimum(np.abs(b * lo + 1.0), np.abs(b * hi + 1.0))
        best = min(best, float(np.min(d)))
    return best
