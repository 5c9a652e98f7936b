"""Hopf-Lax evaluation of the limit free energy for matrix estimation (p = 2).

The limit solves ``d_t f = 2 (d_h f)^2`` with ``f(0, .) = psi``; its convex
Hamiltonian ``H(q) = 2 q^2`` has dual ``H*(q) = q^2 / 8``, so

    f(t, h) = sup_{h' >= 0} psi(h') - (h - h')^2 / (8 t).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .scalar_channel import PsiCurve

SCAN_POINTS = 129
GOLDEN_TOL = 1e-10
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class HopfLaxResult:
    value: float
    maximizer: float
    optimizer_iterations: int
    bracket: tuple[float, float]


def hamiltonian(q):
    return 2.0 * np.square(q)


def hamiltonian_dual(q):
    return np.square(q) / 8.0


def maximize_scalar(objective: Callable, lo: float, hi: float,
                    scan_points: int = SCAN_POINTS, tol: float = GOLDEN_TOL):
    """Maximize a 1-D function on ``[lo, hi]``: coarse scan, then golden section.

    ``objective`` must accept arrays. Ties on the scan go to the smallest
    abscissa. Returns ``(value, argmax, iterations)``.
    """
    if hi <= lo:
        x = float(lo)
        return float(objective(np.array([x]))[0]), x, 0
    grid = np.linspace(lo, hi, scan_points)
    vals = np.asarray(objective(grid), dtype=float)
    k = int(np.argmax(vals))
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, scan_points - 1)]
    best_x, best_v = float(grid[k]), float(vals[k])

    def f(x):
        return float(objective(np.array([x]))[0])

    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    it = 0
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
        it += 1
    for x, v in ((c, fc), (d, fd)):
        if v > best_v or (v == best_v and x < best_x):
            best_x, best_v = float(x), float(v)
    return best_v, best_x, it


def _bracket(h: float, t: float, lipschitz: float) -> tuple[float, float]:
    half = 4.0 * t * lipschitz
    return max(0.0, h - half), h + half


def _check(t: float, h: float):
    if not (np.isfinite(t) and np.isfinite(h)) or t < 0 or h < 0:
        raise ValueError(f"need finite t, h >= 0, got t={t}, h={h}")


def hopf_lax_eval(curve: PsiCurve, t: float, h: float,
                  scan_points: int = SCAN_POINTS, debug: bool = False) -> HopfLaxResult:
    """Value and maximizer of the Hopf-Lax variational problem at ``(t, h)``.

    The maximizer obeys ``psi'(h*) = (h* - h) / (4 t)`` and ``|psi'| <= L``, so
    the search is confined to ``[h - 4 t L, h + 4 t L]`` intersected with
    ``h' >= 0``. With ``debug`` the scan density is doubled and a mismatch
    between the two runs is reported as a warning.
    """
    t, h = float(t), float(h)
    _check(t, h)
    if t == 0.0:
        return HopfLaxResult(float(curve(h)), h, 0, (h, h))
    lo, hi = _bracket(h, t, curve.lipschitz)
    if hi > curve.h_max:
        warnings.warn(f"Hopf-Lax bracket reaches h'={hi:g} beyond the tabulated "
                      f"range {curve.h_max:g}; using linear extrapolation", stacklevel=2)

    def objective(hp):
        return curve(hp) - (h - hp) ** 2 / (8.0 * t)

    value, arg, it = maximize_scalar(objective, lo, hi, scan_points)
    if debug:
        v2, a2, _ = maximize_scalar(objective, lo, hi, 2 * scan_points - 1)
        if abs(v2 - value) > 1e-9:
            warnings.warn(f"scan density changes maximum at (t={t}, h={h}): "
                          f"{value!r} vs {v2!r} (h*={arg}, {a2})", stacklevel=2)
            if v2 > value:
                value, arg = v2, a2
    return HopfLaxResult(value, arg, it, (lo, hi))


def hopf_lax_grid(curve: PsiCurve, t_values, h_values) -> tuple[np.ndarray, np.ndarray]:
    """Values and maximizers on the product grid, shape ``(len(t), len(h))``."""
    t_values = np.asarray(t_values, float)
    h_values = np.asarray(h_values, float)
    val = np.empty((t_values.size, h_values.size))
    arg = np.empty_like(val)
    for i, t in enumerate(t_values):
        for j, h in enumerate(h_values):
            r = hopf_lax_eval(curve, t, h)
            val[i, j], arg[i, j] = r.value, r.maximizer
    return val, arg


def hopf_lax_slice(curve: PsiCurve, t: float, h_max: float, n_points: int) -> PsiCurve:
    """Tabulate ``f(t, .)`` on ``[0, h_max]`` as a curve.

    Slopes come from the envelope theorem, ``d_h f = (h* - h) / (4 t)``, so the
    interpolant is a Hermite cubic with exact derivatives.
    """
    hs = np.linspace(0.0, h_max, n_points)
    vals, args = hopf_lax_grid(curve, [t], hs)
    slopes = (args[0] - hs) / (4.0 * t) if t > 0 else curve.derivative(hs)
    return PsiCurve(hs, vals[0], slopes, curve.prior, curve.quad_order,
                    curve.lipschitz, f"f(t={t:g})")


def dpp_check(curve: PsiCurve, t: float, s: float, h: float,
              n_points: int | None = None) -> float:
    """Residual of the dynamic programming principle.

    ``|f(t + s, h) - sup_{h'} (f(t, h') - (h - h')^2 / (8 s))|`` with the inner
    supremum taken over a tabulation of ``f(t, .)``.
    """
    if not (t > 0 and s > 0):
        raise ValueError("dpp_check needs t, s > 0")
    _check(t, h)
    L = curve.lipschitz
    reach = h + 4.0 * s * L
    h_tab = reach + 1.0
    if n_points is None:
        n_points = int(math.ceil(h_tab / 0.01)) + 1
    f_t = hopf_lax_slice(curve, t, h_tab, n_points)
    lo, hi = _bracket(h, s, L)

    def objective(hp):
        return f_t(hp) - (h - hp) ** 2 / (8.0 * s)

    inner, _, _ = maximize_scalar(objective, lo, hi)
    return abs(hopf_lax_eval(curve, t + s, h).value - inner)


def variational_forms_eval(curve: PsiCurve, t: float, h: float) -> tuple[float, float]:
    """The two sup / sup-inf representations of ``f(t, h)``.

    ``form1 = sup_{h'} psi(h') - t H*((h - h') / t)``;
    ``form2 = sup_{h'} inf_p psi(h') - p (h - h') + t H(p)`` with the inner
    infimum attained at ``p = (h - h') / (4 t)``.
    """
    t, h = float(t), float(h)
    _check(t, h)
    if t == 0.0:
        raise ValueError("variational forms divide by t; need t > 0")
    lo, hi = _bracket(h, t, curve.lipschitz)

    def form1(hp):
        return curve(hp) - t * hamiltonian_dual((h - hp) / t)

    def form2(hp):
        p = (h - hp) / (4.0 * t)
        return curve(hp) - p * (h - hp) + t * hamiltonian(p)

    v1, _, _ = maximize_scalar(form1, lo, hi)
    v2, _, _ = maximize_scalar(form2, lo, hi)
    return v1, v2
