"""Control-affine stochastic systems, sparsity penalties and Hamiltonians.

State-dependent callables follow one batching convention throughout the
package: the state axis comes first and any number of trailing batch axes
may follow.  For ``x`` of shape ``(n, *batch)``

* ``f0(x)`` and every ``f_cols[j](x)`` return shape ``(n, *batch)``,
* ``sigma(x)`` returns shape ``(n, d, *batch)``,
* terminal and running costs return shape ``batch``.

A single state is simply ``batch == ()``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, UnsupportedError

StateMap = Callable[[np.ndarray], np.ndarray]


class Penalty(str, enum.Enum):
    """Control cost integrated over time."""

    L0 = "L0"
    L1 = "L1"
    L2 = "L2"

    @classmethod
    def parse(cls, value: "str | Penalty") -> "Penalty":
        if isinstance(value, Penalty):
            return value
        key = str(value).strip().upper()
        if key in ("L2-ENERGY", "L2ENERGY", "ENERGY"):
            key = "L2"
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(f"unknown penalty {value!r}; expected L0, L1 or L2") from None


@dataclass(frozen=True)
class ControlAffineSystem:
    """dx = (f0(x) + sum_j f_j(x) u_j) dt + sigma(x) dw."""

    state_dim: int
    control_dim: int
    noise_dim: int
    f0: StateMap
    f_cols: Sequence[StateMap]
    sigma: StateMap

    def __post_init__(self):
        for name in ("state_dim", "control_dim", "noise_dim"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if len(self.f_cols) != self.control_dim:
            raise ConfigurationError(
                f"expected {self.control_dim} control vector fields, got {len(self.f_cols)}"
            )
        object.__setattr__(self, "f_cols", tuple(self.f_cols))

    def drift(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """f(x, u) for batched ``x`` (n, ...) and ``u`` (m, ...)."""
        out = np.array(self.f0(x), dtype=float)
        for j, fj in enumerate(self.f_cols):
            out = out + fj(x) * u[j]
        return out

    def control_matrix(self, x: np.ndarray) -> np.ndarray:
        """Columns f_j(x) stacked to shape (n, m, ...)."""
        return np.stack([np.asarray(fj(x), dtype=float) for fj in self.f_cols], axis=1)

    def diffusion_matrix(self, x: np.ndarray) -> np.ndarray:
        """sigma sigma^T at ``x``, shape (n, n, ...)."""
        s = np.asarray(self.sigma(x), dtype=float)
        return np.einsum("ik...,jk...->ij...", s, s)


@dataclass(frozen=True)
class BoxControlSet:
    """Per-channel interval constraint lower[j] <= u_j <= upper[j]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigurationError("control bounds must be 1-D arrays of equal length")
        if not (np.all(lo < 0.0) and np.all(hi > 0.0)):
            raise ConfigurationError("box bounds must satisfy lower < 0 < upper in every channel")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, m: int = 1) -> "BoxControlSet":
        return cls(-np.ones(m), np.ones(m))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def magnitude(self) -> np.ndarray:
        """max(|U_j^-|, |U_j^+|) per channel."""
        return np.maximum(np.abs(self.lower), np.abs(self.upper))

    def contains(self, u, tol: float = 1e-12) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


@dataclass(frozen=True)
class ProblemSpec:
    """Finite-horizon problem: minimise E[int (l(x) + psi(u)) ds + g(x_T)]."""

    system: ControlAffineSystem
    controls: BoxControlSet
    horizon: float
    terminal_cost: StateMap
    running_cost: Optional[StateMap] = None
    penalty: Penalty = Penalty.L0

    def __post_init__(self):
        if not float(self.horizon) > 0.0:
            raise ConfigurationError("horizon must be positive")
        if self.controls.dim != self.system.control_dim:
            raise ConfigurationError(
                f"control set has {self.controls.dim} channels, system has {self.system.control_dim}"
            )
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "penalty", Penalty.parse(self.penalty))

    @property
    def n(self) -> int:
        return self.system.state_dim

    @property
    def m(self) -> int:
        return self.system.control_dim

    def with_penalty(self, penalty) -> "ProblemSpec":
        return ProblemSpec(
            self.system, self.controls, self.horizon, self.terminal_cost, self.running_cost, penalty
        )

    def ell(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.running_cost is None:
            return np.zeros(x.shape[1:])
        return np.asarray(self.running_cost(x), dtype=float)

    def control_cost(self, u: np.ndarray) -> np.ndarray:
        """psi(u) for ``u`` of shape (m, ...)."""
        return control_cost(self.penalty, u)


@dataclass(frozen=True)
class HamiltonianArgs:
    """Argument triple (x, p, M) of the Hamiltonian; M is symmetrised."""

    x: np.ndarray
    p: np.ndarray
    M: np.ndarray = field(default=None)

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if self.M is None:
            M = np.zeros((x.size, x.size))
        else:
            M = np.atleast_2d(np.asarray(self.M, dtype=float))
        M = 0.5 * (M + M.T)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "M", M)


# -- penalties ---------------------------------------------------------------


def psi0(u) -> float:
    """Number of nonzero entries (exact comparison, 0^0 = 0)."""
    return float(np.count_nonzero(np.asarray(u, dtype=float)))


def psi1(u) -> float:
    return float(np.sum(np.abs(np.asarray(u, dtype=float))))


def control_cost(penalty: Penalty, u: np.ndarray) -> np.ndarray:
    """Batched penalty; ``u`` has the channel axis first."""
    u = np.asarray(u, dtype=float)
    if penalty is Penalty.L0:
        return np.sum(u != 0.0, axis=0).astype(float)
    if penalty is Penalty.L1:
        return np.sum(np.abs(u), axis=0)
    return np.sum(u * u, axis=0)


# -- per-channel suprema -----------------------------------------------------
#
# For a channel with switching value b the Hamiltonian contains
#     sup_{lo <= u <= hi} { -b u - psi(u) }.
# The solver upwinds the affine term separately for negative and positive
# controls, so the split forms accept one b per branch.


def channel_sup_L0(b, lo, hi):
    """sup over [lo, hi] of -b u - |u|^0."""
    return channel_sup_L0_split(b, b, lo, hi)


def channel_sup_L0_split(b_lo, b_hi, lo, hi):
    return np.maximum(0.0, np.maximum(-b_lo * lo - 1.0, -b_hi * hi - 1.0))


def channel_sup_L1(b, lo, hi):
    """sup over [lo, hi] of -b u - |u|."""
    return np.maximum(0.0, np.maximum(-b * lo - abs(lo), -b * hi - abs(hi)))


def channel_sup_L1_split(b_lo, b_hi, lo, hi):
    # Enumerates the extreme points instead of reusing the L0 closed form so
    # that the L0/L1 field identity is checked against an independent route.
    best = np.zeros(np.broadcast(b_lo, b_hi).shape)
    for u, b in ((lo, b_lo), (hi, b_hi)):
        best = np.maximum(best, -b * u - np.abs(u))
    return best


def channel_sup_L2(b, lo, hi):
    """sup over [lo, hi] of -b u - u^2 (energy baseline)."""
    return channel_sup_L2_split(b, b, lo, hi)


def channel_sup_L2_split(b_lo, b_hi, lo, hi):
    u_neg = np.clip(-0.5 * np.asarray(b_lo, dtype=float), lo, 0.0)
    u_pos = np.clip(-0.5 * np.asarray(b_hi, dtype=float), 0.0, hi)
    return np.maximum(-b_lo * u_neg - u_neg * u_neg, -b_hi * u_pos - u_pos * u_pos)


_SPLIT_SUP = {
    Penalty.L0: channel_sup_L0_split,
    Penalty.L1: channel_sup_L1_split,
    Penalty.L2: channel_sup_L2_split,
}

_POINT_SUP = {
    Penalty.L0: channel_sup_L0,
    Penalty.L1: channel_sup_L1,
    Penalty.L2: channel_sup_L2,
}


def channel_sup_split(penalty: Penalty, b_lo, b_hi, lo, hi):
    return _SPLIT_SUP[penalty](b_lo, b_hi, lo, hi)


def max_channel_sup(penalty: Penalty, b_bound, lo, hi):
    """Upper bound of the channel supremum over |b| <= b_bound."""
    return np.maximum(
        _POINT_SUP[penalty](np.asarray(b_bound, dtype=float), lo, hi),
        _POINT_SUP[penalty](-np.asarray(b_bound, dtype=float), lo, hi),
    )


# -- Hamiltonian -------------------------------------------------------------


def _check_args(spec: ProblemSpec, x, p, M):
    n = spec.n
    if x.shape != (n,) or p.shape != (n,) or M.shape != (n, n):
        raise ConfigurationError(
            f"Hamiltonian arguments have shapes x{x.shape}, p{p.shape}, M{M.shape}; "
            f"system state dimension is {n}"
        )


def _smooth_part(spec: ProblemSpec, x, p, M) -> float:
    """-f0(x).p - 1/2 tr(sigma sigma^T M) - l(x)."""
    a = spec.system.diffusion_matrix(x)
    return float(-np.dot(spec.system.f0(x), p) - 0.5 * np.sum(a * M) - spec.ell(x))


def switching_values(spec: ProblemSpec, x, p) -> np.ndarray:
    """b_j = f_j(x) . p for every channel."""
    return np.einsum("im,i->m", spec.system.control_matrix(x), p)


def hamiltonian(spec: ProblemSpec, args: HamiltonianArgs) -> float:
    x, p, M = args.x, args.p, args.M
    _check_args(spec, x, p, M)
    b = switching_values(spec, x, p)
    sup = _POINT_SUP[spec.penalty](b, spec.controls.lower, spec.controls.upper)
    return _smooth_part(spec, x, p, M) + float(np.sum(sup))


def G_value(spec: ProblemSpec, x, u, p, M) -> float:
    """Integrand of the Hamiltonian before maximisation over controls."""
    args = HamiltonianArgs(x, p, M)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    _check_args(spec, args.x, args.p, args.M)
    if u.shape != (spec.m,):
        raise ConfigurationError(f"control has shape {u.shape}, expected ({spec.m},)")
    if not spec.controls.contains(u):
        raise DomainError(f"control {u} outside the box [{spec.controls.lower}, {spec.controls.upper}]")
    b = switching_values(spec, args.x, args.p)
    return _smooth_part(spec, args.x, args.p, args.M) - float(np.dot(b, u)) - float(
        spec.control_cost(u)
    )


def hamiltonian_bruteforce(spec: ProblemSpec, args: HamiltonianArgs, grid_per_dim: int = 10001) -> float:
    """Maximise G over a Cartesian control grid that contains {lo, 0, hi}."""
    if grid_per_dim < 3:
        raise ConfigurationError("grid_per_dim must be at least 3")
    if spec.m > 3:
        raise UnsupportedError("brute-force Hamiltonian supports at most 3 control channels")
    x, p, M = args.x, args.p, args.M
    _check_args(spec, x, p, M)
    axes = [
        np.union1d(np.linspace(lo, hi, grid_per_dim), [lo, 0.0, hi])
        for lo, hi in zip(spec.controls.lower, spec.controls.upper)
    ]
    U = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")])
    b = switching_values(spec, x, p)
    vals = -(b @ U) - control_cost(spec.penalty, U)
    return _smooth_part(spec, x, p, M) + float(np.max(vals))
