"""Discrete-time radar echo synthesis for rainbow-beam training and tracking.

The sampled single-symbol echo of user k on RX antenna r is

    y_r[n] = a_r(theta_k) * sum_m c_{k,m} e^{j2pi(m-(M-1)/2)n/M} e^{j2pi f_d n T_sen/M}

with per-subcarrier amplitude c_{k,m} = sqrt(P_s) beta_k g_{k,m} S_m
e^{-j2pi f_m tau_k}; the inner sum is evaluated as a scaled IDFT. Echoes are
synthesized over *all* transmitted subcarriers, so sidelobe interference
between users arises naturally instead of being modeled separately.

For a two-symbol capture pair, the reflection-phase draw depends only on the
seed (not the symbol index) while the noise stream mixes in the symbol index,
so captures of symbols 1 and 2 under one seed share the same channel
realization.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from rainbowbeam.array_core import steering_vector
from rainbowbeam.codebook import RainbowCodebook
from rainbowbeam.config import SPEED_OF_LIGHT, SystemConfig
from rainbowbeam.errors import EmptyReflectionSet

_DUMP_MAGIC = b"RBECHO01"


class RangeGateWarning(UserWarning):
    """User delay exceeds the cyclic-prefix gate (known timing-table tension)."""


class NarrowbandWarning(UserWarning):
    """Velocity strains the narrowband (Doppler-scaling-free) approximation."""


@dataclass(frozen=True)
class UserState:
    """Ground truth of one user: angle [rad], distance [m], radial velocity [m/s]
    (positive = approaching)."""

    theta: float
    D: float
    v: float

    def doppler(self, cfg: SystemConfig) -> float:
        """Round-trip Doppler shift 2 v f_c / c [Hz]."""
        return 2.0 * self.v * cfg.f_c / SPEED_OF_LIGHT

    @property
    def tau(self) -> float:
        """Round-trip delay 2 D / c [s]."""
        return 2.0 * self.D / SPEED_OF_LIGHT

    def beta_power(self, cfg: SystemConfig) -> float:
        """Radar-equation power |beta|^2 = lambda^2 sigma_rcs / ((4 pi)^3 D^4)."""
        return cfg.lambda_c**2 * cfg.sigma_rcs / ((4.0 * np.pi) ** 3 * self.D**4)

    def validate(self, cfg: SystemConfig) -> None:
        """Check far-field placement and the narrowband approximation.

        Distance below the Rayleigh boundary is an error; a delay exceeding the
        cyclic prefix only warns, because the delay-ambiguity distance limit
        c/(2 df_sen) is far larger than the CP gate for the default timing.
        """
        if self.D <= cfg.rayleigh_distance:
            raise ValueError(
                f"user at D={self.D} m is inside the Rayleigh distance "
                f"{cfg.rayleigh_distance:.2f} m")
        if not 0.0 <= self.theta <= np.pi:
            raise ValueError(f"user angle {self.theta} outside [0, pi]")
        if self.tau > cfg.T_cp:
            warnings.warn(
                f"round-trip delay {self.tau:.3g} s exceeds the CP gate "
                f"{cfg.T_cp:.3g} s; the sampled model ignores inter-symbol leakage",
                RangeGateWarning, stacklevel=2)
        v = abs(self.v)
        if v > 0 and (cfg.T_sen * cfg.B_sen >= 0.1 * SPEED_OF_LIGHT / (2 * v)
                      or 2 * v / SPEED_OF_LIGHT >= 0.1 / cfg.M):
            warnings.warn(
                f"velocity {self.v} m/s strains the narrowband approximation",
                NarrowbandWarning, stacklevel=2)


@dataclass(frozen=True)
class EchoCapture:
    """Complex baseband samples of one OFDM sensing symbol.

    ``Y`` has shape (N_r, M); column n is the sample at t = n T_sen / M
    (symbol 1) or T_sym + n T_sen / M (symbol 2). ``subcarrier_mask`` lists
    the indices actually transmitted.
    """

    Y: np.ndarray = field(repr=False)
    symbol_index: int
    pilots: np.ndarray = field(repr=False)
    subcarrier_mask: np.ndarray = field(repr=False)
    P_s: float
    sigma_s2: float

    @property
    def N_r(self) -> int:
        return self.Y.shape[0]

    @property
    def M(self) -> int:
        return self.Y.shape[1]

    def single_antenna(self) -> np.ndarray:
        """The length-M sample vector; requires N_r == 1."""
        if self.N_r != 1:
            raise ValueError(f"capture has {self.N_r} antennas, expected 1")
        return self.Y[0]

    def dump(self, path) -> None:
        """Write a little-endian binary dump: 64-byte header, mask, complex64 samples."""
        header = struct.pack(
            "<8sIIII", _DUMP_MAGIC, self.N_r, self.M, self.symbol_index,
            len(self.subcarrier_mask))
        header = header.ljust(64, b"\0")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.asarray(self.subcarrier_mask, dtype="<u4").tobytes())
            fh.write(self.Y.astype("<c8").tobytes())

    @classmethod
    def load(cls, path) -> "EchoCapture":
        """Read a dump written by :meth:`dump`. Pilots and SNR context are not
        stored in the file; they default to all-ones pilots and unit powers."""
        with open(path, "rb") as fh:
            header = fh.read(64)
            magic, n_r, m, symbol_index, mask_len = struct.unpack_from("<8sIIII", header)
            if magic != _DUMP_MAGIC:
                raise ValueError(f"not an echo dump (magic={magic!r})")
            mask = np.frombuffer(fh.read(4 * mask_len), dtype="<u4").astype(int)
            Y = np.frombuffer(fh.read(8 * n_r * m), dtype="<c8").reshape(n_r, m)
        return cls(Y=Y.astype(complex), symbol_index=symbol_index,
                   pilots=np.ones(m, dtype=complex), subcarrier_mask=mask,
                   P_s=1.0, sigma_s2=1.0)


# ---- model building blocks --------------------------------------------------

def sample_phase_diag(M: int) -> np.ndarray:
    """Diagonal of the frequency-offset matrix, entries e^{-j pi (M-1) n / M}."""
    n = np.arange(M)
    return np.exp(-1j * np.pi * (M - 1) * n / M)


def doppler_diag(f_d: float, cfg: SystemConfig) -> np.ndarray:
    """Diagonal of the intrapulse Doppler matrix, entries e^{j 2 pi f_d n T_sen / M}."""
    n = np.arange(cfg.M)
    return np.exp(2j * np.pi * f_d * n * cfg.T_sen / cfg.M)


def idft_column(m: int, M: int) -> np.ndarray:
    """m-th column of the (unnormalized) inverse DFT matrix."""
    n = np.arange(M)
    return np.exp(2j * np.pi * m * n / M)


# ---- synthesis --------------------------------------------------------------

def reflection_set(user: UserState, cb: RainbowCodebook,
                   threshold_eps: float) -> np.ndarray:
    """Indices of subcarriers whose beams hit the user above ``threshold_eps``.

    ``threshold_eps`` is an absolute power-gain threshold (compare against
    (1 - epsilon) N_t^2 for the codebook's design droop).
    """
    gains = np.abs(cb.gains(user.theta)) ** 2
    idx = np.nonzero(gains > threshold_eps)[0]
    if idx.size == 0:
        raise EmptyReflectionSet(
            f"user at theta={user.theta:.4f} rad is outside sector coverage")
    return idx


def _amplitudes(user: UserState, cb: RainbowCodebook, cfg: SystemConfig,
                P_s: float, pilots: np.ndarray, beta_phase: float,
                symbol: int) -> np.ndarray:
    """Per-subcarrier complex amplitudes c_m of one user for one symbol."""
    f_m = cfg.baseband_frequency(np.arange(cfg.M))
    beta = np.sqrt(user.beta_power(cfg)) * np.exp(1j * beta_phase)
    c = (np.sqrt(P_s) * beta * cb.gains(user.theta) * pilots
         * np.exp(-2j * np.pi * f_m * user.tau))
    if symbol == 2:
        c = c * np.exp(2j * np.pi * user.doppler(cfg) * cfg.T_sym)
    return c


def synth_tracking_echo(users: list[UserState], cb: RainbowCodebook,
                        tracking_sets: list[np.ndarray] | None,
                        cfg: SystemConfig, P_s: float, sigma_s2: float,
                        seed: int, symbol: int = 1,
                        pilots: np.ndarray | None = None,
                        N_r: int | None = None) -> EchoCapture:
    """Synthesize one sensing symbol transmitted on a subset of subcarriers.

    ``tracking_sets`` lists per-user subcarrier index sets; their union is the
    transmitted mask (None means all subcarriers -> full-band training).
    Overlapping sets are allowed: users in similar directions share a sector.
    """
    if symbol not in (1, 2):
        raise ValueError(f"symbol index must be 1 or 2, got {symbol}")
    M = cfg.M
    if N_r is None:
        N_r = cfg.N_r
    if pilots is None:
        pilots = np.ones(M, dtype=complex)
    pilots = np.asarray(pilots, dtype=complex)
    if pilots.shape != (M,):
        raise ValueError(f"pilots must have shape ({M},), got {pilots.shape}")

    if tracking_sets is None:
        mask = np.arange(M)
    else:
        mask = np.unique(np.concatenate([np.asarray(s, dtype=int)
                                         for s in tracking_sets] or [np.array([], dtype=int)]))
    on = np.zeros(M)
    on[mask] = 1.0

    for u in users:
        u.validate(cfg)

    channel_rng = np.random.default_rng([seed, 0])
    beta_phases = channel_rng.uniform(0.0, 2.0 * np.pi, size=len(users))
    noise_rng = np.random.default_rng([seed, symbol])

    d_M = sample_phase_diag(M)
    Y = np.zeros((N_r, M), dtype=complex)
    for user, phase in zip(users, beta_phases):
        c = _amplitudes(user, cb, cfg, P_s, pilots, phase, symbol) * on
        base = M * np.fft.ifft(c)
        s = d_M * doppler_diag(user.doppler(cfg), cfg) * base
        a_r = steering_vector(user.theta, cfg.f_c, N_r, cfg.d)
        Y += np.outer(a_r, s)
    if sigma_s2 > 0:
        Y += np.sqrt(sigma_s2 / 2.0) * (noise_rng.standard_normal((N_r, M))
                                        + 1j * noise_rng.standard_normal((N_r, M)))
    return EchoCapture(Y=Y, symbol_index=symbol, pilots=pilots,
                       subcarrier_mask=mask, P_s=P_s, sigma_s2=sigma_s2)


def synth_training_echo(users: list[UserState], cb: RainbowCodebook,
                        cfg: SystemConfig, P_s: float, sigma_s2: float,
                        seed: int, symbol: int = 1,
                        pilots: np.ndarray | None = None,
                        N_r: int | None = None) -> EchoCapture:
    """Full-band training echo (every subcarrier transmitted)."""
    return synth_tracking_echo(users, cb, None, cfg, P_s, sigma_s2, seed,
                               symbol=symbol, pilots=pilots, N_r=N_r)


def sensing_snr(users: list[UserState], P_s: float, sigma_s2: float,
                cfg: SystemConfig) -> float:
    """Sensing SNR in dB: P_s * min_k |beta_k|^2 / sigma_s2 (weakest user rules)."""
    worst = min(u.beta_power(cfg) for u in users)
    return 10.0 * np.log10(P_s * worst / sigma_s2)


def power_for_snr(snr_db: float, users: list[UserState], sigma_s2: float,
                  cfg: SystemConfig) -> float:
    """Transmit power that realizes ``snr_db`` for the weakest user."""
    worst = min(u.beta_power(cfg) for u in users)
    return 10.0 ** (snr_db / 10.0) * sigma_s2 / worst
