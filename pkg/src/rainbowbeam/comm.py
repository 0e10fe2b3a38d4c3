"""Communication-band channels, analog precoding and achievable rate.

Each user owns a block of Q subcarriers above the sensing band plus guard
band. The channel follows a Rician model: a LoS ray at the user's geometric
angle/delay/Doppler plus a few NLoS scatterer paths, with the average power
split rho/(rho+1) versus 1/(rho+1). Precoding is purely analog (one PS chain
plus per-antenna TTD per user); the full-CSI optimizer alternates between the
phase-shifter vector and the delay vector, and the sensed-parameter precoder
is the closed-form squint-free LoS beam.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from rainbowbeam.array_core import steering_vector
from rainbowbeam.config import SPEED_OF_LIGHT, SystemConfig

# a 10 ms radio frame holds 80 slots of 14 symbols at 120 kHz spacing,
# so one communication symbol (with its cyclic prefix) lasts (15/14)/df_com
_CP_FRACTION = 1.0 / 14.0


def comm_symbol_duration(cfg: SystemConfig) -> float:
    """Communication OFDM symbol duration including cyclic prefix [s]."""
    return (1.0 + _CP_FRACTION) / cfg.df_com


def comm_frequencies(k: int, cfg: SystemConfig) -> np.ndarray:
    """Baseband frequencies of user k's Q subcarriers (k is 1-based)."""
    return np.asarray(cfg.comm_frequency(k, np.arange(1, cfg.Q + 1)),
                      dtype=float)


def los_gain_power(D: float, cfg: SystemConfig) -> float:
    """One-way LoS path power |alpha|^2 = lambda^2 / ((4 pi)^2 D^2)."""
    return cfg.lambda_c**2 / ((4.0 * np.pi) ** 2 * D**2)


def comm_power_for_snr(snr_db: float, distances: list[float], sigma_c2: float,
                       cfg: SystemConfig) -> float:
    """Transmit power realizing ``snr_db`` of LoS-path SNR for the farthest user."""
    worst = min(los_gain_power(D, cfg) for D in distances)
    return 10.0 ** (snr_db / 10.0) * sigma_c2 / worst


# ---- channel ----------------------------------------------------------------

@dataclass(frozen=True)
class CommChannelModel:
    """Rician channel generator for one user.

    The NLoS geometry (scatterer angles, complex gains, delays) is drawn once
    and held fixed; the LoS ray follows the user state passed per call. Gains
    are scaled so that E{||h||^2} = |alpha_los|^2 N_t with the rho/(rho+1)
    LoS share. ``rho = inf`` selects the pure-LoS channel.
    """

    k: int
    rho: float
    cfg: SystemConfig
    los_phase: float
    nlos_angles: np.ndarray = field(repr=False)
    nlos_gains: np.ndarray = field(repr=False)     # unit-average-power draws
    nlos_delays: np.ndarray = field(repr=False)

    @classmethod
    def draw(cls, k: int, rho: float, rng: np.random.Generator,
             cfg: SystemConfig, L: int = 4,
             sector: tuple[float, float] = (0.0, np.pi)) -> "CommChannelModel":
        gains = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) \
            / np.sqrt(2.0 * L)
        t_cp_com = _CP_FRACTION / cfg.df_com
        return cls(k=k, rho=float(rho), cfg=cfg,
                   los_phase=float(rng.uniform(0.0, 2.0 * np.pi)),
                   nlos_angles=rng.uniform(sector[0], sector[1], L),
                   nlos_gains=gains,
                   nlos_delays=rng.uniform(0.0, t_cp_com, L))

    def channel(self, theta: float, D: float, v: float = 0.0,
                symbol: int = 0) -> np.ndarray:
        """Channel matrix h_{k,q} for all q, shape (Q, N_t).

        ``symbol`` indexes communication OFDM symbols since the reference
        time; the LoS gain rotates by the one-way Doppler f_c v / c per
        symbol duration.
        """
        cfg = self.cfg
        f_q = comm_frequencies(self.k, cfg)
        alpha = np.sqrt(los_gain_power(D, cfg))
        f_dop = cfg.f_c * v / SPEED_OF_LIGHT
        phase = (self.los_phase
                 + 2.0 * np.pi * f_dop * symbol * comm_symbol_duration(cfg))
        tau = D / SPEED_OF_LIGHT

        a_los = _steering_rows(theta, f_q, cfg)
        los = (alpha * np.exp(1j * phase)
               * np.exp(-2j * np.pi * f_q * tau)[:, None] * a_los)
        if np.isinf(self.rho):
            return los

        nlos = np.zeros_like(los)
        for th_l, g_l, tau_l in zip(self.nlos_angles, self.nlos_gains,
                                    self.nlos_delays):
            a_l = _steering_rows(float(th_l), f_q, cfg)
            nlos += (alpha * g_l
                     * np.exp(-2j * np.pi * f_q * tau_l)[:, None] * a_l)
        w_los = np.sqrt(self.rho / (self.rho + 1.0))
        w_nlos = np.sqrt(1.0 / (self.rho + 1.0))
        return w_los * los + w_nlos * nlos


def _steering_rows(theta: float, f_q: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    """TX steering vectors at every comm subcarrier, shape (Q, N_t)."""
    n = np.arange(cfg.N_t)
    doc = cfg.d / SPEED_OF_LIGHT
    return np.exp(-2j * np.pi * np.outer(cfg.f_c + f_q, n) * doc * np.cos(theta))


# ---- precoders --------------------------------------------------------------

@dataclass(frozen=True)
class CommPrecoder:
    """Analog PS+TTD precoder of one user: unit-modulus ``w_ps`` and
    per-antenna delays ``kappa`` (seconds, within [0, 1/f_{k,Q}])."""

    k: int
    w_ps: np.ndarray = field(repr=False)
    kappa: np.ndarray = field(repr=False)
    cfg: SystemConfig = None

    def w(self, f_q: np.ndarray) -> np.ndarray:
        """Per-subcarrier precoders w_ps . t_q, shape (Q, N_t)."""
        f_q = np.atleast_1d(np.asarray(f_q, dtype=float))
        t = np.exp(-2j * np.pi * np.outer(f_q, self.kappa))
        return self.w_ps[None, :] * t


def kappa_box_limit(k: int, cfg: SystemConfig) -> float:
    """Upper bound of the per-antenna delay box, 1/f_{k,Q}."""
    return 1.0 / float(cfg.comm_frequency(k, cfg.Q))


def los_precoder(theta_hat: float, cfg: SystemConfig, k: int) -> CommPrecoder:
    """Closed-form squint-free beam at ``theta_hat``.

    kappa_n = n (d/c) cos theta makes w_q equal the steering vector at the
    exact subcarrier frequency, so the gain is N_t^2 at every q. A common
    delay offset keeps negative-cosine angles inside the box; it only changes
    each w_q by a scalar phase, which the rate is blind to.
    """
    if not 0.0 <= theta_hat <= np.pi:
        raise ValueError(f"theta must lie in [0, pi], got {theta_hat}")
    n = np.arange(cfg.N_t)
    kappa = n * (cfg.d / SPEED_OF_LIGHT) * np.cos(theta_hat)
    if kappa[-1] < 0.0:
        kappa = kappa - kappa[-1]
    return CommPrecoder(k=k, w_ps=steering_vector(theta_hat, cfg.f_c,
                                                  cfg.N_t, cfg.d),
                        kappa=kappa, cfg=cfg)


def optimize_fullcsi(H: np.ndarray, k: int, cfg: SystemConfig,
                     theta_init: float | None = None,
                     max_iter: int = 50, tol: float = 1e-6) -> CommPrecoder:
    """Alternating full-CSI precoder design maximizing sum_q |h_q^H w_q|^2.

    The phase-shifter step takes the principal eigenvector of the
    delay-compensated channel outer-product sum and projects it to unit
    modulus; the delay step is the per-antenna least-squares phase fit,
    projected onto the box. Updates that would decrease the objective are
    rejected, so the objective sequence is non-decreasing by construction.
    ``theta_init`` seeds w_ps with a steering vector (defaults to the
    strongest channel row's phase profile).
    """
    Q, N_t = H.shape
    f_q = comm_frequencies(k, cfg)
    box = kappa_box_limit(k, cfg)

    if theta_init is not None:
        seed = los_precoder(theta_init, cfg, k)
        w_ps = seed.w_ps
        kappa = np.clip(seed.kappa, 0.0, box)
    else:
        strongest = H[int(np.argmax(np.linalg.norm(H, axis=1)))]
        w_ps = np.exp(1j * np.angle(strongest))
        kappa = np.zeros(N_t)

    def objective(w_ps, kappa):
        t = np.exp(-2j * np.pi * np.outer(f_q, kappa))
        return float(np.sum(np.abs(np.sum(np.conj(H) * (w_ps[None, :] * t),
                                          axis=1)) ** 2))

    obj = objective(w_ps, kappa)
    for _ in range(max_iter):
        # phase-shifter step at fixed delays
        t = np.exp(-2j * np.pi * np.outer(f_q, kappa))
        Ht = np.conj(t) * H
        A = Ht.conj().T @ Ht
        _, V = np.linalg.eigh(A)
        cand_w = np.exp(1j * np.angle(V[:, -1]))
        if objective(cand_w, kappa) >= obj:
            w_ps = cand_w
        # delay step at fixed phase shifters: average per-antenna phase slope
        ph = np.angle(np.conj(w_ps)[None, :] * H)
        cand_k = np.clip(-np.mean(ph / (2.0 * np.pi * f_q[:, None]), axis=0),
                         0.0, box)
        new_obj = objective(w_ps, cand_k)
        if new_obj >= obj:
            kappa = cand_k
        new_obj = objective(w_ps, kappa)
        if new_obj - obj <= tol * max(obj, 1e-300):
            obj = new_obj
            break
        obj = new_obj
    return CommPrecoder(k=k, w_ps=w_ps, kappa=kappa, cfg=cfg)


# ---- rates ------------------------------------------------------------------

def achievable_rate(h: np.ndarray, w: np.ndarray, P_c: float,
                    sigma_c2: float) -> float:
    """Single-subcarrier rate log2(1 + (P_c/sigma_c2) |h^H w|^2) [bps/Hz]."""
    if h.shape != w.shape:
        raise ValueError(f"shape mismatch: {h.shape} vs {w.shape}")
    g = np.abs(np.vdot(h, w)) ** 2
    return float(np.log2(1.0 + P_c * g / sigma_c2))


def mean_rate(H: np.ndarray, precoder: CommPrecoder, P_c: float,
              sigma_c2: float, q_stride: int = 1) -> float:
    """Rate averaged over the user's subcarriers (optionally decimated)."""
    cfg = precoder.cfg
    f_q = comm_frequencies(precoder.k, cfg)[::q_stride]
    W = precoder.w(f_q)
    g = np.abs(np.sum(np.conj(H[::q_stride]) * W, axis=1)) ** 2
    return float(np.mean(np.log2(1.0 + P_c * g / sigma_c2)))


def rate_over_time(states, schedule, model: CommChannelModel, P_c: float,
                   sigma_c2: float, q_stride: int = 1) -> list[dict]:
    """Rate series of one user along a trajectory.

    ``states`` maps evaluation symbol indices to ground-truth (theta, D, v)
    tuples; ``schedule`` maps update symbol indices to the precoder installed
    from that point on (symbol indices count communication symbols). Returns
    one row per evaluated symbol with the active precoder's mean rate.
    """
    updates = sorted(schedule.items())
    rows = []
    for j in sorted(states):
        theta, D, v = states[j]
        active = None
        for j_u, pre in updates:
            if j_u <= j:
                active = pre
            else:
                break
        if active is None:
            raise ValueError(f"no precoder installed before symbol {j}")
        H = model.channel(theta, D, v, symbol=j)
        rows.append({"symbol": j,
                     "time_s": j * comm_symbol_duration(model.cfg),
                     "user": model.k,
                     "rate_bps_hz": mean_rate(H, active, P_c, sigma_c2,
                                              q_stride=q_stride)})
    return rows


def export_rate_csv(rows: list[dict], path) -> None:
    """Write a rate series as CSV (time_s, user, rate_bps_hz)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_s", "user", "rate_bps_hz"])
        for r in rows:
            writer.writerow([r["time_s"], r["user"], r["rate_bps_hz"]])
