"""System-level configuration shared by every module.

The default constructor reproduces the headline simulation setup: a 100 GHz
carrier, 240 kHz sensing subcarrier spacing with M = 579 subcarriers
(B_sen = 138.72 MHz), a 256-element TX array at half-wavelength spacing and a
small RX array, plus the communication-band constants (120 kHz spacing,
Q = 1024 subcarriers per user, 4.8 MHz guard band).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

SPEED_OF_LIGHT = 3.0e8  # m/s


class ConfigError(ValueError):
    """Raised when a SystemConfig violates its structural invariants."""


@dataclass(frozen=True)
class SystemConfig:
    """Carrier, bandwidth, array and timing constants of the ISAC system.

    ``d`` defaults to half-wavelength spacing c/(2 f_c), which the coverage
    design assumes. ``T_cp`` defaults to one eighth of the elementary symbol
    duration (the 5G NR normal-CP ratio), giving the 4.69 us total symbol.
    """

    f_c: float = 100e9            # carrier frequency [Hz]
    df_sen: float = 240e3         # sensing subcarrier spacing [Hz]
    M: int = 579                  # number of sensing subcarriers
    N_t: int = 256                # TX antennas
    N_r: int = 10                 # RX antennas
    d: float | None = None        # antenna spacing [m]; None -> c/(2 f_c)
    T_cp: float | None = None     # cyclic prefix duration [s]; None -> T_sen/8
    B_guard: float = 4.8e6        # guard band between sensing and comm [Hz]
    df_com: float = 120e3         # communication subcarrier spacing [Hz]
    Q: int = 1024                 # communication subcarriers per user
    sigma_rcs: float = 1.0        # radar cross section [m^2]
    noise_psd: float = 3.98e-21   # noise power spectral density [W/Hz]

    def __post_init__(self):
        if self.f_c <= 0 or self.df_sen <= 0:
            raise ConfigError("carrier frequency and subcarrier spacing must be positive")
        if self.M < 2:
            raise ConfigError(f"need at least 2 sensing subcarriers, got M={self.M}")
        if self.N_t < 1 or self.N_r < 1:
            raise ConfigError("antenna counts must be >= 1")
        if self.d is None:
            object.__setattr__(self, "d", SPEED_OF_LIGHT / (2.0 * self.f_c))
        if self.d > SPEED_OF_LIGHT / (2.0 * self.f_c) * (1.0 + 1e-12):
            raise ConfigError("antenna spacing exceeds half a carrier wavelength")
        if self.T_cp is None:
            object.__setattr__(self, "T_cp", self.T_sen / 8.0)

    # ---- derived quantities -------------------------------------------------

    @property
    def B_sen(self) -> float:
        """Sensing bandwidth [Hz]; the M subcarriers span [-B_sen/2, +B_sen/2]."""
        return (self.M - 1) * self.df_sen

    @property
    def T_sen(self) -> float:
        """Elementary OFDM symbol duration 1/df_sen [s]."""
        return 1.0 / self.df_sen

    @property
    def T_sym(self) -> float:
        """Total symbol duration including the cyclic prefix [s]."""
        return self.T_sen + self.T_cp

    @property
    def lambda_c(self) -> float:
        """Carrier wavelength [m]."""
        return SPEED_OF_LIGHT / self.f_c

    @property
    def rayleigh_distance(self) -> float:
        """Far-field boundary 2*aperture^2/lambda of the TX array [m]."""
        aperture = (self.N_t - 1) * self.d
        return 2.0 * aperture**2 / self.lambda_c

    @property
    def max_unambiguous_distance(self) -> float:
        """Delay-ambiguity distance limit c/(2 df_sen) [m]."""
        return SPEED_OF_LIGHT / (2.0 * self.df_sen)

    @property
    def max_velocity_single_symbol(self) -> float:
        """Largest speed the single-symbol fractional search can resolve [m/s]."""
        return SPEED_OF_LIGHT * self.df_sen / (4.0 * self.f_c)

    def baseband_frequency(self, m) -> float:
        """Baseband frequency f_m = -B_sen/2 + m*df_sen of subcarrier m [Hz]."""
        import numpy as np

        return -self.B_sen / 2.0 + np.asarray(m) * self.df_sen

    def comm_frequency(self, k: int, q) -> float:
        """Baseband frequency of comm subcarrier q (1-based) of user k (1-based)."""
        import numpy as np

        return self.B_sen / 2.0 + self.B_guard + (self.Q * (k - 1) + np.asarray(q)) * self.df_com

    # ---- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def with_subcarriers(self, M: int, B_sen: float | None = None) -> "SystemConfig":
        """Return a copy with M subcarriers, keeping the bandwidth fixed.

        Used by the overlap-factor study, which trades subcarrier spacing
        against subcarrier count at constant B_sen.
        """
        if B_sen is None:
            B_sen = self.B_sen
        return dataclasses.replace(self, M=M, df_sen=B_sen / (M - 1), T_cp=None)
