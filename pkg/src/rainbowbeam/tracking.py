"""Frame-by-frame user tracking over the frozen rainbow codebook.

Tracking never touches the PS/TTD hardware: each frame only picks which
subcarriers are transmitted, namely those whose beams span the predicted
angular window of each user. Estimation inside a frame reuses the training
estimators, restricted to the tracked windows; a user whose window contains
no detectable peak raises :class:`TrackLost`, which callers answer with a
full-band re-training symbol.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from rainbowbeam.codebook import RainbowCodebook
from rainbowbeam.echo import EchoCapture
from rainbowbeam.errors import (DetectionFailure, NumericalDegeneracy,
                                TrackLost)
from rainbowbeam.est_single import (EstimationReport, EstimatorConfig,
                                    UserEstimate, sa1o_estimate, sa2o_estimate)
from rainbowbeam.est_multi import ma1o_estimate

FRAME_DURATION = 10e-3  # radio frame [s]


@dataclass(frozen=True)
class TrackState:
    """Per-user tracking state carried across frames."""

    user: int
    theta_est: float
    v_est: float
    D_est: float
    alpha: float
    tracking_set: np.ndarray
    frame_index: int = 0
    lost: bool = False


def predict_window(state: TrackState, frame_duration: float,
                   cb: RainbowCodebook, safety: float = 3.0,
                   alpha_min: float | None = None) -> float:
    """Half-width of the next frame's angular window [rad].

    Worst-case tangential motion changes the angle by at most
    v t / D (small-angle); the safety factor covers estimate error and the
    floor keeps at least one codebook step of slack for a parked user.
    """
    if alpha_min is None:
        alpha_min = float(np.max(np.abs(np.diff(cb.angles))))
    drift = abs(state.v_est) * frame_duration / max(state.D_est, 1e-6)
    return safety * drift + alpha_min


def select_subcarriers(theta_center: float, alpha: float,
                       cb: RainbowCodebook, mode: str = "window",
                       count: int = 21) -> np.ndarray:
    """Contiguous subcarrier indices whose beams cover the angular window.

    ``window`` mode spans [theta_center - alpha, theta_center + alpha];
    ``fixed`` mode returns exactly ``count`` indices centered on the nearest
    codebook angle, one-sided at sector edges. At least 3 indices are always
    returned (delay estimation needs the center bin plus a neighbor).
    """
    center = cb.nearest_index(theta_center)
    if mode == "fixed":
        half = count // 2
        lo = center - half
        hi = lo + count - 1
        if lo < 0:
            lo, hi = 0, min(count - 1, cb.M - 1)
        elif hi > cb.M - 1:
            hi = cb.M - 1
            lo = max(0, hi - count + 1)
    elif mode == "window":
        lo = int(np.searchsorted(cb.angles, theta_center - alpha, side="left"))
        hi = int(np.searchsorted(cb.angles, theta_center + alpha, side="right")) - 1
        lo = min(lo, center - 1)
        hi = max(hi, center + 1)
        lo = max(lo, 0)
        hi = min(hi, cb.M - 1)
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    while hi - lo < 2:
        lo = max(lo - 1, 0)
        hi = min(hi + 1, cb.M - 1)
    return np.arange(lo, hi + 1)


def init_track_states(report: EstimationReport, cb: RainbowCodebook,
                      mode: str = "window", count: int = 21) -> list[TrackState]:
    """Seed tracking states from a full-band training estimate."""
    states = []
    for i, e in enumerate(report.users):
        st = TrackState(user=i, theta_est=e.theta_hat, v_est=e.v_hat,
                        D_est=e.D_hat, alpha=0.0,
                        tracking_set=np.arange(cb.M))
        alpha = predict_window(st, FRAME_DURATION, cb)
        states.append(replace(
            st, alpha=alpha,
            tracking_set=select_subcarriers(e.theta_hat, alpha, cb,
                                            mode=mode, count=count)))
    return states


def _update(state: TrackState, e: UserEstimate, cb: RainbowCodebook,
            mode: str, count: int) -> TrackState:
    st = replace(state, theta_est=e.theta_hat, v_est=e.v_hat, D_est=e.D_hat,
                 frame_index=state.frame_index + 1, lost=False)
    alpha = predict_window(st, FRAME_DURATION, cb)
    return replace(st, alpha=alpha,
                   tracking_set=select_subcarriers(st.theta_est, alpha, cb,
                                                   mode=mode, count=count))


def track_frame(states: list[TrackState], capture: EchoCapture,
                cb: RainbowCodebook, est: EstimatorConfig, scheme: str,
                capture2: EchoCapture | None = None, mode: str = "window",
                count: int = 21) -> tuple[list[TrackState], EstimationReport]:
    """One tracking update for all users sharing a masked capture.

    SA1O/SA2O run per user with the peak search confined to that user's
    window; MA1O runs once on the multi-antenna capture and assigns
    estimates to states by nearest angle. Raises :class:`TrackLost` (with
    the offending user in ``args``) when a window holds no usable estimate.
    """
    if scheme == "sa2o" and capture2 is None:
        raise ValueError("sa2o tracking needs two captures")

    if scheme in ("sa1o", "sa2o"):
        single = replace(est, K_expected=1)
        new_states, users = [], []
        for st in states:
            try:
                if scheme == "sa1o":
                    rep = sa1o_estimate(capture, cb, single,
                                        search_bins=st.tracking_set)
                else:
                    rep = sa2o_estimate(capture, capture2, cb, single,
                                        search_bins=st.tracking_set)
                e = rep.users[0]
                if not e.detected:
                    raise TrackLost(st.user)
            except (DetectionFailure, NumericalDegeneracy) as exc:
                raise TrackLost(st.user) from exc
            users.append(e)
            new_states.append(_update(st, e, cb, mode, count))
        return new_states, EstimationReport(scheme=scheme, users=users)

    if scheme != "ma1o":
        raise ValueError(f"unknown scheme {scheme!r}")
    rep = ma1o_estimate(capture, cb, replace(est, K_expected=len(states)))
    pool = list(rep.users)
    new_states, users = [], []
    for st in states:
        j = int(np.argmin([abs(e.theta_hat - st.theta_est) for e in pool]))
        e = pool.pop(j)
        window = cb.angles[st.tracking_set]
        if not (e.detected and window[0] - st.alpha <= e.theta_hat
                <= window[-1] + st.alpha):
            raise TrackLost(st.user)
        users.append(e)
        new_states.append(_update(st, e, cb, mode, count))
    return new_states, EstimationReport(scheme="ma1o", users=users)


def export_track_csv(rows: list[dict], path) -> None:
    """Write the per-frame track log as CSV."""
    cols = ["frame", "user", "theta_true", "theta_est", "v_true", "v_est",
            "D_true", "D_est", "mask_lo", "mask_hi", "lost_flag"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for r in rows:
            writer.writerow([r[c] for c in cols])
