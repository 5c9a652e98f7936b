"""Monotone finite-difference solver for ``d_t f = 2^(p-1) (d_h f)^p`` on h >= 0.

Explicit Euler in time with a local Lax-Friedrichs flux. For this sign
convention (``d_t f = H(d_h f)``) the monotone update is

    f_j <- f_j + dt * [H((q- + q+)/2) + alpha/2 * (q+ - q-)],

i.e. the flux of ``d_t f + G(d_h f) = 0`` with ``G = -H``; the
``alpha/2 (q+ - q-)`` term is a positive numerical viscosity.

Left boundary: ghost node ``f(-dh) = f(dh)`` (discrete Neumann condition).
Right boundary: linear extrapolation on a domain padded by
``max_speed * t_max`` so the reported window is outside its domain of
dependence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .scalar_channel import PsiCurve


class CFLViolation(RuntimeError):
    pass


class SolverBlowup(RuntimeError):
    pass


@dataclass(frozen=True)
class Scheme:
    name: str
    cfl: float
    dt: float
    max_speed: float
    dh: float


@dataclass(frozen=True)
class HJGrid:
    t_grid: np.ndarray
    h_grid: np.ndarray
    values: np.ndarray  # shape (len(t_grid), len(h_grid))
    p: int
    scheme: Scheme

    def slope(self) -> np.ndarray:
        """Forward differences in h, shape ``(nt, nh - 1)``."""
        return np.diff(self.values, axis=1) / np.diff(self.h_grid)[None, :]

    def boundary_slope(self) -> np.ndarray:
        """Second-order one-sided estimate of ``d_h f(t, 0)`` per slice."""
        dh = self.h_grid[1] - self.h_grid[0]
        f = self.values
        return (-3.0 * f[:, 0] + 4.0 * f[:, 1] - f[:, 2]) / (2.0 * dh)

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.t_grid - t)))
        if abs(self.t_grid[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"t={t} is not a stored slice")
        return self.values[k]


def hamiltonian(q, p: int):
    return 2.0 ** (p - 1) * q ** p


def hamiltonian_speed(q, p: int):
    """``|H'(q)|``."""
    if p == 1:
        return np.ones_like(q)
    return p * 2.0 ** (p - 1) * np.abs(q) ** (p - 1)


def max_speed_bound(p: int, lipschitz: float) -> float:
    return p * 2.0 ** (p - 1) * lipschitz ** (p - 1)


def grid_from_function(func: Callable, t_grid, h_grid, p: int = 2, label: str = "analytic") -> HJGrid:
    """Sample ``func(t, h)`` on a grid, e.g. an explicit super/subsolution."""
    t_grid = np.asarray(t_grid, float)
    h_grid = np.asarray(h_grid, float)
    vals = func(t_grid[:, None], h_grid[None, :])
    dh = float(h_grid[1] - h_grid[0]) if h_grid.size > 1 else 0.0
    return HJGrid(t_grid, h_grid, np.asarray(vals, float), p,
                  Scheme(label, 0.0, 0.0, 0.0, dh))


def _time_plan(t_slices: np.ndarray, dt_max: float) -> list[tuple[int, float]]:
    """Steps per slice interval so every output time is hit exactly."""
    plan = []
    for a, b in zip(t_slices[:-1], t_slices[1:]):
        n = max(1, int(math.ceil((b - a) / dt_max - 1e-12)))
        plan.append((n, (b - a) / n))
    return plan


def solve_hj(curve: PsiCurve | Callable, p: int, t_max: float, h_max: float, dh: float,
             cfl: float = 0.9, t_slices: Sequence[float] | None = None,
             lipschitz: float | None = None) -> HJGrid:
    """Solve the HJ equation and return solution slices on ``[0, h_max]``.

    ``curve`` is the initial condition (anything callable on arrays);
    ``lipschitz`` defaults to ``curve.lipschitz`` and fixes the global speed
    bound ``p 2^(p-1) L^(p-1)`` which sets both ``dt`` and the right padding.
    """
    if p < 1:
        raise ValueError("tensor order p must be >= 1")
    if not dh > 0:
        raise ValueError("dh must be positive")
    if not 0 < cfl <= 0.9:
        raise ValueError("cfl must lie in (0, 0.9]")
    if not (t_max >= 0 and h_max > 0):
        raise ValueError("need t_max >= 0 and h_max > 0")
    if lipschitz is None:
        lipschitz = curve.lipschitz
    speed = max_speed_bound(p, lipschitz)
    dt_max = cfl * dh / speed

    if t_slices is None:
        t_slices = np.linspace(0.0, t_max, 21) if t_max > 0 else np.array([0.0])
    t_slices = np.unique(np.asarray(t_slices, float))
    if t_slices[0] != 0.0:
        t_slices = np.concatenate([[0.0], t_slices])
    if t_slices[-1] > t_max * (1 + 1e-12):
        raise ValueError("t_slices exceed t_max")

    n_window = int(round(h_max / dh))
    if abs(n_window * dh - h_max) > 1e-9 * h_max:
        raise ValueError("h_max must be an integer multiple of dh")
    n_pad = int(math.ceil(speed * t_max / dh)) + 2
    n = n_window + 1 + n_pad
    h_all = dh * np.arange(n)
    f = np.array(curve(h_all), dtype=float)
    if not np.all(np.isfinite(f)):
        raise SolverBlowup("non-finite initial condition")

    out = np.empty((t_slices.size, n_window + 1))
    out[0] = f[: n_window + 1]
    ext = np.empty(n + 2)
    inv_dh = 1.0 / dh
    max_alpha = 0.0
    for k, (steps, dt) in enumerate(_time_plan(t_slices, dt_max), start=1):
        for _ in range(steps):
            ext[1:-1] = f
            ext[0] = f[1]
            ext[-1] = 2.0 * f[-1] - f[-2]
            q = np.diff(ext) * inv_dh
            qm, qp = q[:-1], q[1:]
            alpha = np.maximum(hamiltonian_speed(qm, p), hamiltonian_speed(qp, p))
            amax = float(alpha.max())
            if amax > speed * (1.0 + 1e-9):
                raise CFLViolation(f"local speed {amax:.6g} exceeds the bound {speed:.6g}; "
                                   "the Lipschitz estimate of the initial data is too small")
            max_alpha = max(max_alpha, amax)
            f = f + dt * (hamiltonian(0.5 * (qm + qp), p) + 0.5 * alpha * (qp - qm))
        if not np.all(np.isfinite(f)):
            raise SolverBlowup(f"non-finite values by t={t_slices[k]}")
        out[k] = f[: n_window + 1]
    scheme = Scheme("local-lax-friedrichs", cfl, dt_max, speed, dh)
    return HJGrid(t_slices, h_all[: n_window + 1].copy(), out, p, scheme)


def comparison_check(u: HJGrid, v: HJGrid) -> tuple[float, float]:
    """``(max(u - v) over the grid, max(u - v) at t = 0)``."""
    if (u.values.shape != v.values.shape or not np.allclose(u.t_grid, v.t_grid, rtol=0, atol=1e-12)
            or not np.allclose(u.h_grid, v.h_grid, rtol=0, atol=1e-12)):
        raise ValueError("comparison_check needs identical grids")
    d = u.values - v.values
    return float(d.max()), float(d[0].max())
