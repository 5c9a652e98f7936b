"""Curie-Weiss model with an enriched external field.

    F_N(t, h) = (1/N) log sum_sigma 2^-N exp(t m^2 / N + h m),  m = sum_i sigma_i,

computed through the N + 1 magnetization classes. This convention gives
``d_t F - (d_h F)^2 = (1/N) d_h^2 F`` exactly, with Hamiltonian ``q^2``
(coefficient 1, unlike the ``2 q^2`` of the spiked matrix model).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .hopf_lax import maximize_scalar


@dataclass(frozen=True)
class CWRecord:
    N: int
    t: float
    h: float
    F: float
    dF_dt: float     # <m^2> / N^2
    dF_dh: float     # <m> / N
    d2F_dh2: float   # Var(m) / N


def _log_weights(N: int, t: float, h: float):
    k = np.arange(N + 1)
    m = (2 * k - N).astype(float)
    log_binom = gammaln(N + 1) - gammaln(k + 1) - gammaln(N - k + 1)
    return m, log_binom - N * math.log(2.0) + t * m * m / N + h * m


def _check(N, t, h):
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    if not (math.isfinite(t) and math.isfinite(h)):
        raise ValueError("t and h must be finite")
    if t < 0:
        raise ValueError("t must be >= 0")


def cw_free_energy(N: int, t: float, h: float) -> CWRecord:
    _check(N, t, h)
    N = int(N)
    # evaluate at |h| so that spin-flip symmetry holds bit for bit
    sign = -1.0 if h < 0 else 1.0
    m, lw = _log_weights(N, float(t), abs(float(h)))
    log_z = logsumexp(lw)
    w = np.exp(lw - log_z)
    mean = float(w @ m) if h != 0 else 0.0  # symmetric weights at h = 0
    var = float(w @ (m - mean) ** 2)
    return CWRecord(N, float(t), float(h), float(log_z / N),
                    (var + mean * mean) / N ** 2, sign * mean / N, var / N)


def cw_identity_check(N: int, t: float, h: float, fd_delta: float = 1e-4) -> tuple[float, float]:
    """Residuals of ``d_t F - (d_h F)^2 - (1/N) d_h^2 F``.

    The first uses the magnetization moments, the second central finite
    differences of ``F`` with step ``fd_delta``.
    """
    if not fd_delta > 0:
        raise ValueError("fd_delta must be positive")
    if t - fd_delta < 0:
        raise ValueError("centered t-differences need t >= fd_delta")
    if t + fd_delta == t or h + fd_delta == h:
        raise FloatingPointError(f"fd_delta={fd_delta} underflows at (t={t}, h={h})")
    r = cw_free_energy(N, t, h)
    exact = abs(r.dF_dt - r.dF_dh ** 2 - r.d2F_dh2 / N)

    def F(tt, hh):
        return cw_free_energy(N, tt, hh).F

    d = fd_delta
    ft = (F(t + d, h) - F(t - d, h)) / (2 * d)
    fh = (F(t, h + d) - F(t, h - d)) / (2 * d)
    fhh = (F(t, h + d) - 2 * r.F + F(t, h - d)) / (d * d)
    return exact, abs(ft - fh ** 2 - fhh / N)


def _log_cosh(x):
    x = np.abs(x)
    return x + np.log1p(np.exp(-2.0 * x)) - math.log(2.0)


def cw_limit_eval(t: float, h: float) -> float:
    """``sup_h' log cosh(h') - (h - h')^2 / (4 t)``; ``log cosh(h)`` at ``t = 0``."""
    if t < 0 or not (math.isfinite(t) and math.isfinite(h)):
        raise ValueError("need finite t >= 0 and finite h")
    if t == 0:
        return float(_log_cosh(h))
    # |tanh| <= 1 confines the maximizer to |h' - h| <= 2 t
    value, _, _ = maximize_scalar(lambda hp: _log_cosh(hp) - (h - hp) ** 2 / (4.0 * t),
                                  h - 2.0 * t, h + 2.0 * t)
    return value
