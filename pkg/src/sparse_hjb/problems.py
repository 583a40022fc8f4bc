"""Builtin problem families: scalar linear, load frequency control, custom linear."""

from __future__ import annotations

import numpy as np

from .core_model import BoxControlSet, ControlAffineSystem, Penalty, ProblemSpec
from .errors import ConfigurationError

# Saturation level used to emulate the unsaturated ("linear") LFC model.
LFC_LINEAR_D = 1e6


def _constant_field(values) -> callable:
    values = np.asarray(values, dtype=float)

    def field(x):
        x = np.asarray(x, dtype=float)
        shape = values.shape + x.shape[1:]
        return np.broadcast_to(values.reshape(values.shape + (1,) * (x.ndim - 1)), shape).copy()

    return field


def quadratic_cost(Q) -> callable:
    """x -> x^T Q x for batched states."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))

    def g(x):
        x = np.asarray(x, dtype=float)
        return np.einsum("i...,ij,j...->...", x, Q, x)

    return g


def zero_cost(x):
    return np.zeros(np.asarray(x).shape[1:])


def sat(x, d: float):
    """Rate limiter: clip to [-d, d]."""
    return np.clip(x, -d, d)


def scalar_linear_system(c: float = 1.0, sigma: float = 0.1) -> ControlAffineSystem:
    """dx = c x dt + u dt + sigma dw."""
    return ControlAffineSystem(
        state_dim=1,
        control_dim=1,
        noise_dim=1,
        f0=lambda x: c * np.asarray(x, dtype=float),
        f_cols=[_constant_field([1.0])],
        sigma=_constant_field([[sigma]]),
    )


def scalar_linear(
    c: float = 1.0,
    sigma: float = 0.1,
    T: float = 1.0,
    penalty="L0",
    terminal_weight: float = 1.0,
    lower: float = -1.0,
    upper: float = 1.0,
) -> ProblemSpec:
    return ProblemSpec(
        system=scalar_linear_system(c, sigma),
        controls=BoxControlSet([lower], [upper]),
        horizon=T,
        terminal_cost=quadratic_cost([[terminal_weight]]),
        penalty=Penalty.parse(penalty),
    )


def lfc_system(p: float = 1.0 / 3.0, k: float = 2.0, sigma: float = 0.5, d: float = 0.4) -> ControlAffineSystem:
    """Load frequency control with a rate-limited thermal compensation state.

    dx1 = (-p x1 - k x2) dt + k u dt + k sigma dw
    dx2 = sat_d(x1 - x2) dt
    """
    if d <= 0:
        raise ConfigurationError("rate limit d must be positive")

    def f0(x):
        x = np.asarray(x, dtype=float)
        return np.stack([-p * x[0] - k * x[1], sat(x[0] - x[1], d)])

    return ControlAffineSystem(
        state_dim=2,
        control_dim=1,
        noise_dim=1,
        f0=f0,
        f_cols=[_constant_field([k, 0.0])],
        sigma=_constant_field([[k * sigma], [0.0]]),
    )


def lfc(
    p: float = 1.0 / 3.0,
    k: float = 2.0,
    sigma: float = 0.5,
    d: float = 0.4,
    T: float = 0.5,
    penalty="L0",
) -> ProblemSpec:
    return ProblemSpec(
        system=lfc_system(p, k, sigma, d),
        controls=BoxControlSet.unit(1),
        horizon=T,
        terminal_cost=quadratic_cost(np.eye(2)),
        penalty=Penalty.parse(penalty),
    )


def linear_system(A, B, S) -> ControlAffineSystem:
    """dx = (A x + B u) dt + S dw with constant matrices."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or S.shape[0] != n:
        raise ConfigurationError(f"inconsistent shapes A{A.shape}, B{B.shape}, S{S.shape}")

    def f0(x):
        return np.einsum("ij,j...->i...", A, np.asarray(x, dtype=float))

    return ControlAffineSystem(
        state_dim=n,
        control_dim=B.shape[1],
        noise_dim=S.shape[1],
        f0=f0,
        f_cols=[_constant_field(B[:, j]) for j in range(B.shape[1])],
        sigma=_constant_field(S),
    )


def custom_linear(A, B, S, Q, T: float, lower, upper, penalty="L0") -> ProblemSpec:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    g = zero_cost if not np.any(Q) else quadratic_cost(Q)
    return ProblemSpec(
        system=linear_system(A, B, S),
        controls=BoxControlSet(lower, upper),
        horizon=T,
        terminal_cost=g,
        penalty=Penalty.parse(penalty),
    )
