"""Rainbow-beam codebook design.

Two coupled design problems are solved here: *coverage* (choose the TTD delay
spacing and PS center angle so the edge subcarriers point exactly at the sector
bounds) and *resolution* (choose subcarrier spacing/count so that every angle
in the sector is covered by at least two beams within a power droop of
(1 - epsilon) N_t^2).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from rainbowbeam import array_core
from rainbowbeam.config import SPEED_OF_LIGHT, SystemConfig
from rainbowbeam.errors import InfeasibleDesign, OutOfVisibleRange


def epsilon_beamwidth(epsilon: float, N_t: int) -> float:
    """Electrical-angle beamwidth at power droop ``epsilon``.

    Returns the full width dpsi such that the normalized array-factor power at
    psi = dpsi/2 equals 1 - epsilon. Solved by bisection on the main lobe
    (monotone on (0, 2 pi / N_t)); at epsilon = 0.5 this reproduces the
    classical 0.886 (2 pi / N_t) 3 dB width.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    target = 1.0 - epsilon
    lo, hi = 0.0, 2.0 * np.pi / N_t
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if array_core.array_factor_power(mid, N_t) > target:
            lo = mid
        else:
            hi = mid
    return 2.0 * 0.5 * (lo + hi)


def design_coverage(theta_low: float, theta_high: float,
                    cfg: SystemConfig) -> tuple[float, float]:
    """TTD delay spacing and PS center angle covering [theta_low, theta_high].

    The edge subcarriers -B_sen/2 and +B_sen/2 then point exactly at
    ``theta_low`` and ``theta_high``. Assumes half-wavelength antenna spacing.
    """
    if not (0.0 <= theta_low <= theta_high <= np.pi):
        raise ValueError(
            f"sector must satisfy 0 <= theta_low <= theta_high <= pi, "
            f"got [{theta_low}, {theta_high}]")
    B = cfg.B_sen
    f_c = cfg.f_c
    cl = np.cos(theta_low)
    ch = np.cos(theta_high)
    delta_kappa = 0.5 * ((1.0 / B + 1.0 / (2.0 * f_c)) * ch
                         - (1.0 / B - 1.0 / (2.0 * f_c)) * cl)
    arg = (B / 2.0) * ((1.0 / B + 1.0 / (2.0 * f_c)) * ch
                       + (1.0 / B - 1.0 / (2.0 * f_c)) * cl)
    if abs(arg) > 1.0 + 1e-12:
        raise InfeasibleDesign(
            f"center-angle argument {arg:.6g} outside [-1, 1] for sector "
            f"[{theta_low}, {theta_high}]")
    theta_c = float(np.arccos(np.clip(arg, -1.0, 1.0)))
    return float(delta_kappa), theta_c


def min_subcarriers(theta_low: float, theta_high: float, epsilon: float,
                    cfg: SystemConfig) -> tuple[float, int]:
    """Largest admissible subcarrier spacing and minimum subcarrier count.

    The bound guarantees that adjacent beams intersect no lower than
    (1 - epsilon) N_t^2 anywhere in the sector. A degenerate sector
    (theta_low == theta_high) needs a single subcarrier.
    """
    dpsi = epsilon_beamwidth(epsilon, cfg.N_t)
    B = cfg.B_sen
    span = np.cos(theta_low) - np.cos(theta_high)
    shrink = 1.0 - B**2 / (4.0 * cfg.f_c**2)
    if span <= 0.0:
        return math.inf, 1
    df_max = dpsi / ((2.0 * np.pi / B) * shrink * span)
    x = 2.0 * np.pi * shrink * span / dpsi
    # the beamwidth itself is only meaningful to ~4 decimals of (N_t/2pi) dpsi;
    # evaluate the count bound with a matching relative slack
    M_min = math.ceil(x * (1.0 - 3e-4) + 1.0)
    return float(df_max), int(M_min)


@dataclass(frozen=True)
class RainbowCodebook:
    """Immutable per-subcarrier beam codebook over a sector.

    ``angles[m]`` is the analytic main-lobe peak of subcarrier m; angles ascend
    from ``theta_low`` (m = 0) to ``theta_high`` (m = M - 1). The PS/TTD
    hardware state is fully described by (``delta_kappa``, ``theta_c``) and
    never changes during tracking.
    """

    delta_kappa: float
    theta_c: float
    theta_low: float
    theta_high: float
    epsilon: float
    dpsi_eps: float
    cfg: SystemConfig
    angles: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.cfg.M

    @property
    def f_ps(self) -> np.ndarray:
        """Phase-shifter precoder (unit-modulus, length N_t)."""
        return array_core.ps_precoder(self.theta_c, self.cfg)

    def ttd(self, m: int) -> np.ndarray:
        """TTD vector of subcarrier m."""
        return array_core.ttd_vector(
            self.delta_kappa, self.cfg.baseband_frequency(m), self.cfg.N_t)

    def precoder(self, m: int) -> np.ndarray:
        """Combined analog precoder f_PS . t_m of subcarrier m."""
        return self.f_ps * self.ttd(m)

    def gains(self, theta: float, m=None) -> np.ndarray:
        """Complex TX beam gains a^H(theta, f_c + f_m) f_m, for all m by default."""
        if m is None:
            m = np.arange(self.M)
        f_m = self.cfg.baseband_frequency(m)
        return array_core.complex_gains(
            theta, self.theta_c, self.delta_kappa, f_m, self.cfg)

    def nearest_index(self, theta: float) -> int:
        """Codebook index whose beam angle is closest to ``theta`` (ties -> smaller m)."""
        i = int(np.searchsorted(self.angles, theta))
        if i <= 0:
            return 0
        if i >= self.M:
            return self.M - 1
        # strict '<' keeps the smaller index on exact midpoints
        if abs(self.angles[i] - theta) < abs(theta - self.angles[i - 1]):
            return i
        return i - 1

    def export_csv(self, path) -> None:
        """Write the codebook as CSV with columns (m, f_m_Hz, theta_deg)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["m", "f_m_Hz", "theta_deg"])
            for m in range(self.M):
                writer.writerow([m, float(self.cfg.baseband_frequency(m)),
                                 float(np.degrees(self.angles[m]))])


def build_codebook(theta_low: float, theta_high: float, epsilon: float,
                   cfg: SystemConfig) -> RainbowCodebook:
    """Design and materialize the codebook for a sector and overlap factor.

    The subcarrier spacing and count come from ``cfg``; the count is validated
    against the resolution bound rather than re-derived, so a caller fixing
    M = 579 keeps exactly that grid.
    """
    delta_kappa, theta_c = design_coverage(theta_low, theta_high, cfg)
    dpsi = epsilon_beamwidth(epsilon, cfg.N_t)
    _, M_min = min_subcarriers(theta_low, theta_high, epsilon, cfg)
    if cfg.M < M_min:
        raise InfeasibleDesign(
            f"M={cfg.M} subcarriers cannot guarantee overlap epsilon={epsilon} "
            f"over the sector (need at least {M_min})")
    f_all = cfg.baseband_frequency(np.arange(cfg.M))
    try:
        angles = np.array([
            array_core.mainlobe_angle(delta_kappa, theta_c, f, cfg) for f in f_all])
    except OutOfVisibleRange as exc:
        raise InfeasibleDesign(str(exc)) from exc
    return RainbowCodebook(
        delta_kappa=delta_kappa, theta_c=theta_c,
        theta_low=theta_low, theta_high=theta_high,
        epsilon=epsilon, dpsi_eps=dpsi, cfg=cfg, angles=angles)
