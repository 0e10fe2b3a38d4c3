"""Single-antenna estimation pipelines.

Both schemes start from the DFT of the de-rotated sample vector, whose peaks
sit at the central reflection subcarriers of the users (plus the integer part
of the Doppler shift). The one-symbol scheme then runs a fractional velocity
search and a two-bin phase-ratio delay estimate; the two-symbol scheme adds an
interpulse phase comparison that resolves the integer Doppler ambiguity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from rainbowbeam.codebook import RainbowCodebook
from rainbowbeam.config import SPEED_OF_LIGHT, SystemConfig
from rainbowbeam.echo import EchoCapture, doppler_diag, sample_phase_diag
from rainbowbeam.errors import (DetectionFailure, IndexOutOfCodebook,
                                NumericalDegeneracy)


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs of the detection/estimation pipelines.

    ``K_expected`` may be an integer (evaluation mode, matched to ground
    truth) or "auto", which thresholds the spectrum at
    ``detection_threshold_factor`` times its median power.
    ``velocity_grid_step`` of None selects one DFT-bin-equivalent,
    c / (2 f_c T_sen M).
    """

    K_expected: int | str = 1
    peak_min_separation_bins: int = 8
    velocity_grid_step: float | None = None
    decision_threshold_eps: float = 0.05
    neighbor_choice: int | str = "auto"   # +1, -1 or "auto"
    detection_threshold_factor: float = 10.0
    velocity_prior: tuple[float, float] | None = None   # scenario range [m/s]


@dataclass(frozen=True)
class UserEstimate:
    """Estimated parameters of one detected user."""

    k_c_hat: int
    theta_hat: float
    v_hat: float
    D_hat: float
    detected: bool = True
    peak_power: float = 0.0


@dataclass(frozen=True)
class EstimationReport:
    """Result of one estimation pass over a capture."""

    scheme: str
    users: list[UserEstimate] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.users)


# ---- shared machinery -------------------------------------------------------

def derotated_spectrum(y: np.ndarray, f_d: float, cfg: SystemConfig) -> np.ndarray:
    """Per-subcarrier amplitudes (1/M) DFT(D(f_d)^H D_M^{-1} y).

    With exact Doppler compensation these are the transmitted-side complex
    amplitudes, by subcarrier orthogonality.
    """
    yp = y / sample_phase_diag(cfg.M)
    if f_d != 0.0:
        yp = yp * np.conj(doppler_diag(f_d, cfg))
    return np.fft.fft(yp) / cfg.M


def detect_central_bins(capture: EchoCapture, cfg: SystemConfig,
                        est: EstimatorConfig,
                        search_bins: np.ndarray | None = None) -> list[int]:
    """Peak-search the de-rotated power spectrum for central reflection bins.

    Returns the strongest separated local maxima (descending power). With a
    known user count, exactly that many peaks are returned or
    :class:`DetectionFailure` is raised; in auto mode all peaks above the
    median-based threshold are returned. ``search_bins`` optionally restricts
    the search (tracking windows).
    """
    y = capture.single_antenna() if capture.N_r == 1 else capture.Y[0]
    spec = np.abs(np.fft.fft(y / sample_phase_diag(cfg.M))) ** 2
    allowed = np.zeros(cfg.M, dtype=bool)
    if search_bins is None:
        allowed[:] = True
    else:
        allowed[np.asarray(search_bins, dtype=int)] = True

    order = np.argsort(spec)[::-1]
    sep = est.peak_min_separation_bins
    picked: list[int] = []
    if est.K_expected == "auto":
        threshold = est.detection_threshold_factor * np.median(spec)
        for b in order:
            if spec[b] <= threshold:
                break
            if allowed[b] and all(abs(b - p) >= sep for p in picked):
                picked.append(int(b))
        return picked

    K = int(est.K_expected)
    for b in order:
        if allowed[b] and spec[b] > 0 and all(abs(b - p) >= sep for p in picked):
            picked.append(int(b))
            if len(picked) == K:
                return picked
    raise DetectionFailure(
        f"found {len(picked)} separated peaks, expected {K}")


def estimation_bins(cb: RainbowCodebook, k_hat: int,
                    mask: np.ndarray | None = None) -> np.ndarray:
    """Subcarrier indices carrying useful energy for a user detected at bin
    ``k_hat``: the beams covering the bin's codebook angle above the design
    droop, always including the bin and its in-range neighbors. ``mask``
    restricts the result to transmitted subcarriers (tracking captures)."""
    gains = np.abs(cb.gains(cb.angles[k_hat])) ** 2
    idx = set(np.nonzero(gains >= (1.0 - cb.epsilon) * cb.cfg.N_t**2)[0].tolist())
    idx.add(k_hat)
    for nb in (k_hat - 1, k_hat + 1):
        if 0 <= nb < cb.M:
            idx.add(nb)
    out = np.array(sorted(idx), dtype=int)
    if mask is not None:
        out = np.intersect1d(out, np.asarray(mask, dtype=int))
    return out


def expected_weights(cb: RainbowCodebook, theta: float, bins: np.ndarray,
                     pilots: np.ndarray) -> np.ndarray:
    """Model amplitude envelope over ``bins`` for a user at ``theta``: complex
    beam gain times pilot symbol."""
    return cb.gains(theta, bins) * pilots[bins]


def wide_estimation_bins(cb: RainbowCodebook, theta: float,
                         rel: float = 1e-3, margin: int = 2) -> np.ndarray:
    """Contiguous subcarrier range holding essentially all reflected energy of
    a user at ``theta``: beams above ``rel`` of the peak gain plus a margin.
    Matched-filter searches need this wide support so the model truncation
    does not bias the fit."""
    g = np.abs(cb.gains(theta)) ** 2
    idx = np.nonzero(g >= rel * g.max())[0]
    lo = max(int(idx.min()) - margin, 0)
    hi = min(int(idx.max()) + margin, cb.M - 1)
    return np.arange(lo, hi + 1)


def _velocity_grid(cfg: SystemConfig, est: EstimatorConfig) -> np.ndarray:
    vmax = cfg.max_velocity_single_symbol
    step = est.velocity_grid_step
    if step is None:
        step = SPEED_OF_LIGHT / (2.0 * cfg.f_c * cfg.T_sen * cfg.M)
    n = max(int(np.ceil(2.0 * vmax / step)), 8)
    return np.linspace(-vmax, vmax, n, endpoint=False)


def _parabolic_refine(x: np.ndarray, y: np.ndarray, i: int) -> float:
    """Vertex abscissa of the parabola through three samples around index i."""
    if i <= 0 or i >= len(x) - 1:
        return float(x[i])
    denom = y[i - 1] - 2.0 * y[i] + y[i + 1]
    if denom >= 0 or abs(denom) < 1e-300:
        return float(x[i])
    delta = 0.5 * (y[i - 1] - y[i + 1]) / denom
    return float(x[i] + delta * (x[1] - x[0]))


_TAU_POINTS = 512


def _compensated_rows(yp: np.ndarray, bins: np.ndarray, grid: np.ndarray,
                      cfg: SystemConfig) -> np.ndarray:
    """Doppler-compensated DFT amplitudes r_m(v) at ``bins``; shape (G, |bins|)."""
    n = np.arange(cfg.M)
    fd = 2.0 * grid[:, None] * cfg.f_c / SPEED_OF_LIGHT
    chirps = np.exp(-2j * np.pi * fd * n[None, :] * cfg.T_sen / cfg.M)
    E = np.exp(-2j * np.pi * np.outer(n, bins) / cfg.M)
    return (chirps * yp[None, :]) @ E


def _projection_objective(yp: np.ndarray, bins: np.ndarray, grid: np.ndarray,
                          cfg: SystemConfig) -> np.ndarray:
    return np.sum(np.abs(_compensated_rows(yp, bins, grid, cfg)) ** 2, axis=1)


def _matched_objective(yp: np.ndarray, bins: np.ndarray, weights: np.ndarray,
                       grid: np.ndarray, cfg: SystemConfig,
                       tau_free: bool) -> np.ndarray:
    B = _compensated_rows(yp, bins, grid, cfg) * np.conj(weights)[None, :]
    if not tau_free:
        return np.abs(np.sum(B, axis=1)) ** 2
    tau = np.arange(_TAU_POINTS) / (_TAU_POINTS * cfg.df_sen)
    ramp = np.exp(2j * np.pi * np.outer(bins * cfg.df_sen, tau))
    return np.max(np.abs(B @ ramp) ** 2, axis=1)


def _grid_ascent(grid, obj_fn, zoom: int) -> float:
    obj = obj_fn(grid)
    i = int(np.argmax(obj))
    v = _parabolic_refine(grid, -obj, i)
    half = grid[1] - grid[0]
    for _ in range(zoom):
        local = np.linspace(v - half, v + half, 21)
        lobj = obj_fn(local)
        j = int(np.argmax(lobj))
        v = _parabolic_refine(local, -lobj, j)
        half /= 10.0
    return v


def fractional_velocity_search(y: np.ndarray, bins: np.ndarray,
                               cfg: SystemConfig, est: EstimatorConfig,
                               zoom: int = 0) -> float:
    """Fractional velocity over the unambiguous interval
    [-c df/(4 f_c), +c df/(4 f_c)) by projection-power maximization onto the
    IDFT columns of ``bins``, with one parabolic interpolation step.

    Known limitation: for users between codebook grid angles the objective is
    nearly flat in the shift and its maximum is biased by the asymmetric
    energy capture at the set edges; errors of tens of m/s occur. The
    single-symbol schemes that depend on this number inherit the bias; the
    two-symbol and multi-antenna schemes obtain velocity through sharper
    routes and use this value only coarsely, if at all.
    """
    yp = y / sample_phase_diag(cfg.M)
    return _grid_ascent(_velocity_grid(cfg, est),
                        lambda g: _projection_objective(yp, bins, g, cfg),
                        zoom)


def matched_velocity_search(y: np.ndarray, bins: np.ndarray,
                            weights: np.ndarray, cfg: SystemConfig,
                            est: EstimatorConfig, zoom: int = 0,
                            tau_free: bool = True,
                            v_center: float | None = None,
                            v_half: float | None = None) -> float:
    """Structured matched-filter velocity search.

    Correlates the compensated per-bin amplitudes against the expected
    envelope ``weights`` (beam gain times pilot, optionally including the
    delay phase ramp). With ``tau_free`` the delay ramp is maximized out on a
    grid; with a delay already folded into ``weights``, pass
    ``tau_free=False`` for the sharper anchored objective. ``v_center`` and
    ``v_half`` restrict the search to a local bracket.
    """
    yp = y / sample_phase_diag(cfg.M)
    if v_center is None:
        grid = _velocity_grid(cfg, est)
    else:
        step = est.velocity_grid_step
        if step is None:
            step = SPEED_OF_LIGHT / (2.0 * cfg.f_c * cfg.T_sen * cfg.M)
        n = max(41, int(np.ceil(2.0 * v_half / step)))
        grid = np.linspace(v_center - v_half, v_center + v_half, n)
    return _grid_ascent(grid,
                        lambda g: _matched_objective(yp, bins, weights, g,
                                                     cfg, tau_free),
                        zoom)


def _amplitude_at(y: np.ndarray, m: int, f_d: float, cfg: SystemConfig) -> complex:
    """Doppler-compensated amplitude estimate at bin m (row of the DFT matrix)."""
    yp = y / sample_phase_diag(cfg.M)
    yp = yp * np.conj(doppler_diag(f_d, cfg))
    n = np.arange(cfg.M)
    return complex(np.sum(yp * np.exp(-2j * np.pi * m * n / cfg.M)) / cfg.M)


# ---- one-symbol scheme ------------------------------------------------------

def sa1o_velocity(capture: EchoCapture, k_bins: list[int],
                  cb: RainbowCodebook, est: EstimatorConfig) -> list[float]:
    """Per-user fractional velocity estimates (valid for |v| below the
    single-symbol ambiguity limit)."""
    y = capture.single_antenna()
    return [fractional_velocity_search(
        y, estimation_bins(cb, k, capture.subcarrier_mask), cb.cfg, est)
        for k in k_bins]


def sa1o_distance(capture: EchoCapture, k_c: int, f_d: float, theta_hat: float,
                  cb: RainbowCodebook, est: EstimatorConfig,
                  center_gain: complex | None = None) -> float:
    """Distance from the phase ratio of the central and one adjacent subcarrier.

    Both amplitudes are Doppler-compensated and gain-normalized; the center
    gain defaults to N_t (the codebook beam is aligned there by construction),
    but callers that know the exact off-grid angle can pass the true complex
    gain to remove the residual phase bias.
    """
    cfg = cb.cfg
    y = capture.single_antenna()
    s_c = _amplitude_at(y, k_c, f_d, cfg)
    g_c = cfg.N_t if center_gain is None else center_gain

    transmitted = np.zeros(cfg.M, dtype=bool)
    transmitted[np.asarray(capture.subcarrier_mask, dtype=int)] = True
    choice = est.neighbor_choice
    candidates = []
    for sign in (+1, -1):
        nb = k_c + sign
        if 0 <= nb < cfg.M and transmitted[nb]:
            candidates.append((sign, nb, _amplitude_at(y, nb, f_d, cfg)))
    if not candidates:
        raise NumericalDegeneracy(f"bin {k_c} has no in-range neighbor")
    if choice == "auto":
        sign, nb, s_n = max(candidates, key=lambda t: abs(t[2]))
    else:
        matching = [t for t in candidates if t[0] == int(choice)]
        if not matching:
            raise NumericalDegeneracy(f"requested neighbor {choice} of bin {k_c} out of range")
        sign, nb, s_n = matching[0]
    if abs(s_n) < 1e-6 * abs(s_c):
        raise NumericalDegeneracy(
            f"neighbor amplitude {abs(s_n):.3g} vanishes next to center {abs(s_c):.3g}")

    g_n = cb.gains(theta_hat, np.array([nb]))[0]
    pilots = capture.pilots
    ratio = (s_c / (g_c * pilots[k_c])) / (s_n / (g_n * pilots[nb]))
    # S_m carries e^{-j 2 pi f_m tau}: the (c)/(c+1) ratio advances by +2 pi df tau
    phase = sign * np.angle(ratio)
    tau = (phase % (2.0 * np.pi)) / (2.0 * np.pi * cfg.df_sen)
    return SPEED_OF_LIGHT * tau / 2.0


def sa1o_estimate(capture: EchoCapture, cb: RainbowCodebook,
                  est: EstimatorConfig,
                  search_bins: np.ndarray | None = None) -> EstimationReport:
    """Full one-symbol pipeline: bins -> codebook angles -> velocity -> distance."""
    cfg = cb.cfg
    bins = detect_central_bins(capture, cfg, est, search_bins=search_bins)
    users = []
    y = capture.single_antenna()
    spec = np.abs(np.fft.fft(y / sample_phase_diag(cfg.M))) ** 2
    for k in bins:
        theta_hat = float(cb.angles[k])
        v_hat = fractional_velocity_search(
            y, estimation_bins(cb, k, capture.subcarrier_mask), cfg, est)
        f_d = 2.0 * v_hat * cfg.f_c / SPEED_OF_LIGHT
        try:
            D_hat = sa1o_distance(capture, k, f_d, theta_hat, cb, est)
        except NumericalDegeneracy:
            users.append(UserEstimate(k, theta_hat, v_hat, np.nan,
                                      detected=False, peak_power=float(spec[k])))
            continue
        users.append(UserEstimate(k, theta_hat, v_hat, D_hat,
                                  peak_power=float(spec[k])))
    return EstimationReport(scheme="sa1o", users=users)


# ---- two-symbol scheme ------------------------------------------------------

def sa2o_doppler(capture1: EchoCapture, capture2: EchoCapture, k_ci: int,
                 eps_f: float, cb: RainbowCodebook,
                 est: EstimatorConfig) -> tuple[float, float]:
    """Ambiguity-resolved Doppler frequency and velocity from two symbols.

    The interpulse phase ratio yields a frequency known modulo 1/T_sym; the
    measurable two-symbol range is f_temp itself or f_temp + 1/T_sym (an
    approaching-biased window of width 3/(2 T_sym)). The branch is decided by
    comparing f_temp T_sym against the fractional-shift estimate within the
    decision threshold; when the estimator carries a velocity prior narrower
    than the c/(2 f_c T_sym) candidate spacing, the prior overrides a
    thresholded pick that falls outside it. The prior matters because the
    fractional shift of a user between grid angles is weakly identifiable
    (its echo is time-localized to roughly M over the envelope width samples,
    on which a fractional comb shift acts as a near-constant phase).
    """
    cfg = cb.cfg
    v_f = SPEED_OF_LIGHT * eps_f / (2.0 * cfg.f_c * cfg.T_sen)
    f_comp = 2.0 * v_f * cfg.f_c / SPEED_OF_LIGHT
    y1 = capture1.single_antenna()
    s1 = _amplitude_at(y1, k_ci, f_comp, cfg)
    s2 = _amplitude_at(capture2.single_antenna(), k_ci, f_comp, cfg)
    if abs(s1) == 0.0:
        raise NumericalDegeneracy("vanishing first-symbol amplitude")
    ratio = (s2 / capture2.pilots[k_ci]) / (s1 / capture1.pilots[k_ci])
    f_temp = np.angle(ratio) / (2.0 * np.pi * cfg.T_sym)

    candidates = (f_temp, f_temp + 1.0 / cfg.T_sym)
    pick = 0 if abs(f_temp * cfg.T_sym - eps_f) < est.decision_threshold_eps \
        else 1
    if est.velocity_prior is not None:
        lo, hi = est.velocity_prior
        in_prior = [lo <= SPEED_OF_LIGHT * f / (2.0 * cfg.f_c) <= hi
                    for f in candidates]
        if not in_prior[pick] and in_prior[1 - pick]:
            pick = 1 - pick
    f_d = candidates[pick]
    v_hat = SPEED_OF_LIGHT * f_d / (2.0 * cfg.f_c)
    return float(f_d), float(v_hat)


def sa2o_resolve_center(k_ci: int, eps_f: float, f_d: float,
                        cfg: SystemConfig) -> int:
    """Central bin k_c = round(k_ci + eps_f - f_d T_sen); the rounding absorbs
    fractional-estimate noise below half a bin."""
    k_c = int(np.round(k_ci + eps_f - f_d * cfg.T_sen))
    if not 0 <= k_c < cfg.M:
        raise IndexOutOfCodebook(
            f"resolved center bin {k_c} outside [0, {cfg.M - 1}]")
    return k_c


def sa2o_estimate(capture1: EchoCapture, capture2: EchoCapture,
                  cb: RainbowCodebook, est: EstimatorConfig,
                  search_bins: np.ndarray | None = None) -> EstimationReport:
    """Full two-symbol pipeline with Doppler-ambiguity resolution."""
    cfg = cb.cfg
    bins = detect_central_bins(capture1, cfg, est, search_bins=search_bins)
    y1 = capture1.single_antenna()
    spec = np.abs(np.fft.fft(y1 / sample_phase_diag(cfg.M))) ** 2
    users = []
    for k_ci in bins:
        v_f = fractional_velocity_search(
            y1, estimation_bins(cb, k_ci, capture1.subcarrier_mask), cfg, est)
        eps_f = 2.0 * cfg.f_c * cfg.T_sen * v_f / SPEED_OF_LIGHT
        try:
            f_d, v_hat = sa2o_doppler(capture1, capture2, k_ci, eps_f, cb, est)
            # once f_d is pinned down, the consistent fractional shift is its
            # own fractional part; the coarse search value only seeded the
            # candidate ranking
            eps_hat = f_d * cfg.T_sen - np.round(f_d * cfg.T_sen)
            k_c = sa2o_resolve_center(k_ci, eps_hat, f_d, cfg)
            theta_hat = float(cb.angles[k_c])
            D_hat = sa1o_distance(capture1, k_c, f_d, theta_hat, cb, est)
        except (IndexOutOfCodebook, NumericalDegeneracy):
            users.append(UserEstimate(k_ci, float(cb.angles[k_ci]), np.nan,
                                      np.nan, detected=False,
                                      peak_power=float(spec[k_ci])))
            continue
        users.append(UserEstimate(k_c, theta_hat, v_hat, D_hat,
                                  peak_power=float(spec[k_ci])))
    return EstimationReport(scheme="sa2o", users=users)
