"""Wideband ULA primitives: steering vectors, PS/TTD precoders, beampatterns.

Angles are radians measured from the array axis, theta in [0, pi]. Antenna
index is 0-based, so element n carries phase exp(-j 2 pi n f (d/c) cos theta).
All functions here are pure and operate on plain numpy arrays.
"""

from __future__ import annotations

import numpy as np

from rainbowbeam.config import SPEED_OF_LIGHT, SystemConfig
from rainbowbeam.errors import OutOfVisibleRange

_ARCCOS_CLAMP = 1e-12


def steering_vector(theta: float, f: float, N: int, d: float) -> np.ndarray:
    """ULA steering vector at angle ``theta`` and absolute frequency ``f``.

    Element n equals exp(-j 2 pi n f (d/c) cos theta); the Euclidean norm is
    sqrt(N).
    """
    if not 0.0 <= theta <= np.pi:
        raise ValueError(f"theta must lie in [0, pi], got {theta}")
    if f <= 0:
        raise ValueError(f"frequency must be positive, got {f}")
    if N < 1:
        raise ValueError(f"antenna count must be >= 1, got {N}")
    n = np.arange(N)
    return np.exp(-2j * np.pi * n * f * (d / SPEED_OF_LIGHT) * np.cos(theta))


def ttd_vector(delta_kappa: float, f_m: float, N: int) -> np.ndarray:
    """Per-antenna true-time-delay phase vector for baseband frequency ``f_m``.

    Element n equals exp(-j 2 pi f_m n delta_kappa); all entries have unit
    modulus. The center subcarrier (f_m = 0) is unaffected.
    """
    if N < 1:
        raise ValueError(f"antenna count must be >= 1, got {N}")
    n = np.arange(N)
    return np.exp(-2j * np.pi * f_m * n * delta_kappa)


def ps_precoder(theta_c: float, cfg: SystemConfig) -> np.ndarray:
    """Frequency-independent phase-shifter vector steering the center subcarrier
    of the TX array towards ``theta_c``."""
    return steering_vector(theta_c, cfg.f_c, cfg.N_t, cfg.d)


def beampattern(theta: float, f_m: float, f_ps: np.ndarray, t_m: np.ndarray,
                cfg: SystemConfig) -> float:
    """Power gain |a^H(theta, f_c + f_m) (f_ps . t_m)|^2 of the combined precoder.

    Direct dense evaluation; bounded by N_t^2, attained when the per-element
    phases align exactly.
    """
    f_ps = np.asarray(f_ps)
    t_m = np.asarray(t_m)
    if f_ps.shape != (cfg.N_t,) or t_m.shape != (cfg.N_t,):
        raise ValueError(
            f"precoder vectors must have shape ({cfg.N_t},), "
            f"got {f_ps.shape} and {t_m.shape}")
    a = steering_vector(theta, cfg.f_c + f_m, cfg.N_t, cfg.d)
    return float(np.abs(np.conj(a) @ (f_ps * t_m)) ** 2)


def mainlobe_angle(delta_kappa: float, theta_c: float, f_m: float,
                   cfg: SystemConfig) -> float:
    """Analytic main-lobe peak angle of subcarrier ``f_m`` for a PS+TTD design.

    Returns arccos(((c/d) f_m delta_kappa + f_c cos theta_c) / (f_c + f_m)).
    Raises :class:`OutOfVisibleRange` when the argument leaves [-1, 1] beyond a
    1e-12 clamping tolerance.
    """
    arg = ((SPEED_OF_LIGHT / cfg.d) * f_m * delta_kappa
           + cfg.f_c * np.cos(theta_c)) / (cfg.f_c + f_m)
    if abs(arg) > 1.0 + _ARCCOS_CLAMP:
        raise OutOfVisibleRange(
            f"main lobe of f_m={f_m:.6g} Hz leaves the visible region (cos={arg:.6g})")
    return float(np.arccos(np.clip(arg, -1.0, 1.0)))


def complex_gains(theta: float, theta_c: float, delta_kappa: float,
                  f_m: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """Complex TX beam gains a^H(theta, f_c + f_m) (f_PS . t_m) for many subcarriers.

    Closed-form geometric sum, vectorized over ``f_m``; matches the direct
    dense evaluation of :func:`beampattern` to machine precision and is used
    on the hot path of echo synthesis.
    """
    f_m = np.asarray(f_m, dtype=float)
    doc = cfg.d / SPEED_OF_LIGHT
    # per-element phase increment (cycles)
    phi = ((cfg.f_c + f_m) * doc * np.cos(theta)
           - cfg.f_c * doc * np.cos(theta_c)
           - f_m * delta_kappa)
    return geometric_sum(phi, cfg.N_t)


def geometric_sum(phi: np.ndarray, N: int) -> np.ndarray:
    """Sum_{n=0}^{N-1} exp(j 2 pi n phi), elementwise in ``phi``."""
    phi = np.asarray(phi, dtype=float)
    # distance to the nearest integer decides degeneracy of the ratio form
    frac = phi - np.round(phi)
    degenerate = np.abs(frac) < 1e-12
    safe = np.where(degenerate, 0.5, phi)  # dummy non-degenerate value
    num = 1.0 - np.exp(2j * np.pi * N * safe)
    den = 1.0 - np.exp(2j * np.pi * safe)
    out = np.where(degenerate, complex(N), num / den)
    if out.ndim == 0:
        return out[()]
    return out


def array_factor_power(psi: np.ndarray, N: int) -> np.ndarray:
    """Normalized array-factor power |sin(N psi/2) / (N sin(psi/2))|^2.

    ``psi`` is the electrical angle (radians of phase per element); the value
    is 1 at psi = 0 and first reaches 0 at psi = 2 pi / N.
    """
    psi = np.asarray(psi, dtype=float)
    half = psi / 2.0
    small = np.abs(np.sin(half)) < 1e-15
    safe = np.where(small, 1.0, np.sin(half))
    af = np.where(small, 1.0, np.sin(N * half) / (N * safe))
    out = af**2
    if out.ndim == 0:
        return out[()]
    return out
