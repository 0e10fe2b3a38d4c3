"""Multi-antenna estimation: gridless angle recovery plus per-user refinement.

The receive array observes a sum of K steering vectors. A reduced-snapshot
atomic-norm denoising step (solved by ADMM on the standard semidefinite lift)
produces a clean Toeplitz covariance surrogate, root-MUSIC extracts off-grid
angles from it, and the per-user sample vectors recovered by least-squares
combining feed the same fractional-shift machinery as the single-antenna
schemes. Knowing the angle pins down the central subcarrier directly, so one
symbol suffices for unambiguous Doppler.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rainbowbeam.array_core import steering_vector
from rainbowbeam.codebook import RainbowCodebook
from rainbowbeam.config import SPEED_OF_LIGHT, SystemConfig
from rainbowbeam.echo import EchoCapture, sample_phase_diag
from rainbowbeam.errors import (DegenerateSubspace, NonConvergence,
                                NumericalDegeneracy, RankDeficiency)
from rainbowbeam.est_single import (EstimationReport, EstimatorConfig,
                                    UserEstimate, matched_velocity_search,
                                    sa1o_distance, wide_estimation_bins)


@dataclass(frozen=True)
class AnmProblem:
    """Input of the atomic-norm denoising step: the reduced observation
    X (N_r x K) and the regularization weight nu."""

    X: np.ndarray = field(repr=False)
    nu: float

    @property
    def N_r(self) -> int:
        return self.X.shape[0]

    @property
    def K(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class AnmSolution:
    """Output of the ADMM solver.

    ``z`` is the first column of the recovered Hermitian Toeplitz block,
    ``Z`` the denoised observation, ``W`` the PSD lift certificate,
    ``iterations``/``residual`` the stopping diagnostics.
    """

    z: np.ndarray = field(repr=False)
    Z: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    iterations: int
    residual: float

    def toeplitz(self) -> np.ndarray:
        return _toeplitz_from_column(self.z)


def default_nu(sigma2: float, N_r: int) -> float:
    """Noise-scaled regularization weight sqrt(sigma^2 N_r log N_r)."""
    return float(np.sqrt(sigma2 * N_r * np.log(N_r)))


def _toeplitz_from_column(z: np.ndarray) -> np.ndarray:
    n = len(z)
    idx = np.subtract.outer(np.arange(n), np.arange(n))
    T = np.empty((n, n), dtype=complex)
    T[idx >= 0] = z[idx[idx >= 0]]
    T[idx < 0] = np.conj(z[-idx[idx < 0]])
    return T


def _diagonal_average(G: np.ndarray) -> np.ndarray:
    """Hermitian-symmetrized per-diagonal means, returned as a first column."""
    n = G.shape[0]
    z = np.empty(n, dtype=complex)
    z[0] = np.mean(np.diag(G)).real
    for l in range(1, n):
        lower = np.mean(np.diagonal(G, offset=-l))
        upper = np.mean(np.diagonal(G, offset=l))
        z[l] = 0.5 * (lower + np.conj(upper))
    return z


def anm_denoise(problem: AnmProblem, rho: float = 1.0,
                max_iter: int = 5000, tol: float = 1e-7) -> AnmSolution:
    """ADMM for the semidefinite form of atomic-norm denoising.

        min  (nu/2)(Tr U + Tr T(z)) + (1/2) ||X - Z||_F^2
        s.t. [[U, Z^H], [Z, T(z)]] >= 0

    All subproblem minimizers are closed-form: a diagonal shift for U, a
    convex blend for Z, diagonal averaging with a trace shift for the Toeplitz
    generator, and an eigenvalue clip for the PSD lift.
    """
    # normalize the problem so rho is dimensionless; everything scales linearly
    norm = float(np.linalg.norm(problem.X))
    if norm == 0.0:
        raise NumericalDegeneracy("all-zero observation")
    X = problem.X / norm
    nu = problem.nu / norm
    N_r, K = X.shape
    dim = K + N_r

    W = np.zeros((dim, dim), dtype=complex)
    Lam = np.zeros((dim, dim), dtype=complex)
    U = np.zeros((K, K), dtype=complex)
    Z = X.copy()
    z = np.zeros(N_r, dtype=complex)

    def assemble(U, Z, z):
        M = np.empty((dim, dim), dtype=complex)
        M[:K, :K] = U
        M[:K, K:] = Z.conj().T
        M[K:, :K] = Z
        M[K:, K:] = _toeplitz_from_column(z)
        return M

    residual = np.inf
    M_prev = None
    for it in range(1, max_iter + 1):
        G = W + Lam / rho
        U = G[:K, :K] - (nu / (2.0 * rho)) * np.eye(K)
        U = 0.5 * (U + U.conj().T)
        Z = (X + rho * (G[K:, :K] + G[:K, K:].conj().T)) / (1.0 + 2.0 * rho)
        z = _diagonal_average(G[K:, K:])
        z[0] = z[0].real - nu / (2.0 * rho)

        M = assemble(U, Z, z)
        H = M - Lam / rho
        H = 0.5 * (H + H.conj().T)
        w, V = np.linalg.eigh(H)
        W = (V * np.clip(w, 0.0, None)) @ V.conj().T

        Lam = Lam + rho * (W - M)
        scale = max(np.linalg.norm(M), np.linalg.norm(X), 1e-300)
        primal = np.linalg.norm(W - M) / scale
        dual = 0.0 if M_prev is None else rho * np.linalg.norm(M - M_prev) / scale
        M_prev = M
        residual = max(primal, dual) if it > 1 else np.inf
        if residual < tol:
            return AnmSolution(z=z * norm, Z=Z * norm, W=W * norm,
                               iterations=it, residual=residual)
        # residual balancing keeps the penalty in the regime where both
        # residuals shrink at a comparable rate
        if it % 10 == 0 and it > 1:
            if primal > 10.0 * dual:
                rho *= 2.0
            elif dual > 10.0 * primal:
                rho /= 2.0
    raise NonConvergence(
        f"ADMM residual {residual:.3g} after {max_iter} iterations (tol {tol:g})")


def root_music(T: np.ndarray, K: int, cfg: SystemConfig) -> np.ndarray:
    """Angles (ascending, radians) of the K strongest sources in a Toeplitz
    covariance surrogate, via the noise-subspace root polynomial.

    Roots arrive in conjugate-reciprocal pairs; the K roots inside the unit
    circle nearest to it carry the source phases. Element n of the steering
    vector is e^{-j 2 pi n f_c (d/c) cos theta}, so a root phase omega maps to
    cos theta = -omega / (2 pi f_c d / c).
    """
    N = T.shape[0]
    if K >= N:
        raise DegenerateSubspace(f"need K < N_r, got K={K}, N_r={N}")
    w, V = np.linalg.eigh(0.5 * (T + T.conj().T))
    E_n = V[:, : N - K]
    C = E_n @ E_n.conj().T
    coeffs = np.array([np.sum(np.diagonal(C, offset=l))
                       for l in range(N - 1, -N, -1)])
    roots = np.roots(coeffs)
    inside = roots[np.abs(roots) <= 1.0 + 1e-9]
    # a rank-deficient (exactly low-rank) T puts conjugate-reciprocal root
    # pairs right on the circle; keep one representative per phase
    picked = []
    for r in inside[np.argsort(np.abs(np.abs(inside) - 1.0))]:
        if all(abs(np.angle(r * np.conj(p))) > 1e-3 for p in picked):
            picked.append(r)
            if len(picked) == K:
                break
    if len(picked) < K:
        raise DegenerateSubspace(
            f"only {len(picked)} distinct candidate roots inside the unit "
            f"circle, need {K}")
    picked = np.array(picked)
    scale = 2.0 * np.pi * cfg.f_c * cfg.d / SPEED_OF_LIGHT
    cosines = np.clip(-np.angle(picked) / scale, -1.0, 1.0)
    return np.sort(np.arccos(cosines))


def polish_angles(thetas: np.ndarray, capture: EchoCapture, K: int,
                  cfg: SystemConfig, cb: RainbowCodebook) -> np.ndarray:
    """Refine denoiser angles on the full-data sample covariance.

    The reduced-snapshot denoising step trades some asymptotic accuracy for
    robustness; with all M columns available the sample-covariance noise
    subspace is sharper. Each input angle moves to the nearest full-data
    root if that root lies within one codebook spacing, otherwise it is kept.
    """
    R = capture.Y @ capture.Y.conj().T / capture.M
    try:
        cand = root_music(R, K, cfg)
    except DegenerateSubspace:
        return thetas
    spacing = float(np.max(np.abs(np.diff(cb.angles))))
    out = []
    for t in thetas:
        j = int(np.argmin(np.abs(cand - t)))
        out.append(cand[j] if abs(cand[j] - t) < spacing else t)
    return np.sort(np.array(out))


def snap_to_codebook(thetas: np.ndarray, cb: RainbowCodebook) -> np.ndarray:
    """Nearest codebook indices for off-grid angle estimates."""
    return np.array([cb.nearest_index(float(t)) for t in thetas], dtype=int)


def extract_user_signal(capture: EchoCapture, thetas: np.ndarray,
                        cfg: SystemConfig) -> np.ndarray:
    """Least-squares separation of per-user sample vectors, shape (K, M).

    Solves A s = Y columnwise with A the receive steering matrix at the
    estimated angles; the pseudoinverse averages the N_r antennas coherently,
    which is where the array gain of the multi-antenna scheme comes from.
    """
    A = np.stack([steering_vector(float(t), cfg.f_c, capture.N_r, cfg.d)
                  for t in thetas], axis=1)
    cond = np.linalg.cond(A)
    if cond > 1e8:
        raise RankDeficiency(
            f"steering matrix condition number {cond:.3g}; angles too close "
            "for least-squares separation")
    return np.linalg.pinv(A) @ capture.Y


def ma1o_refine(y: np.ndarray, k_c: int, theta_hat: float,
                capture: EchoCapture, cb: RainbowCodebook,
                est: EstimatorConfig) -> tuple[float, float]:
    """Velocity and distance of one user from its separated sample vector.

    With the angle (hence the central subcarrier ``k_c``) known precisely,
    the spectral peak fixes the integer Doppler shift and the structured
    matched filter over the exact gain envelope fixes the fractional part:
    f_d T_sen = shift + eps_f. Distance then comes from the adjacent-bin
    phase ratio; two alternating passes re-anchor the fractional search on
    the current delay estimate, which sharpens the otherwise delay-coupled
    velocity objective.
    """
    cfg = cb.cfg
    spec = np.abs(np.fft.fft(y / sample_phase_diag(cfg.M))) ** 2
    k_peak = int(np.argmax(spec))
    base = cb.nearest_index(theta_hat)
    shift = k_peak - base
    if shift > cfg.M / 2:
        shift -= cfg.M
    elif shift < -cfg.M / 2:
        shift += cfg.M

    # tone m of the envelope appears at DFT row m + shift after the
    # fractional part is compensated; correlate rows against the envelope
    env_bins = wide_estimation_bins(cb, theta_hat)
    transmitted = np.zeros(cfg.M, dtype=bool)
    transmitted[np.asarray(capture.subcarrier_mask, dtype=int)] = True
    env_bins = env_bins[transmitted[env_bins]]
    rows = env_bins + shift
    ok = (rows >= 0) & (rows < cfg.M)
    env_bins, rows = env_bins[ok], rows[ok]
    w = cb.gains(theta_hat, env_bins) * capture.pilots[env_bins]

    sub = EchoCapture(Y=y[None, :], symbol_index=capture.symbol_index,
                      pilots=capture.pilots,
                      subcarrier_mask=capture.subcarrier_mask,
                      P_s=capture.P_s, sigma_s2=capture.sigma_s2)
    g_c = complex(cb.gains(theta_hat, np.array([k_c]))[0])
    f_m = cfg.baseband_frequency(env_bins)

    bin_v = SPEED_OF_LIGHT / (2.0 * cfg.f_c * cfg.T_sen)
    v_f = matched_velocity_search(y, rows, w, cfg, est, zoom=2,
                                  v_center=0.0, v_half=1.5 * bin_v)
    f_d = shift / cfg.T_sen + 2.0 * v_f * cfg.f_c / SPEED_OF_LIGHT
    D_hat = sa1o_distance(sub, k_c, f_d, theta_hat, cb, est, center_gain=g_c)
    for _ in range(2):
        tau = 2.0 * D_hat / SPEED_OF_LIGHT
        w_tau = w * np.exp(-2j * np.pi * f_m * tau)
        v_f = matched_velocity_search(y, rows, w_tau, cfg, est, zoom=2,
                                      tau_free=False, v_center=v_f, v_half=2.0)
        f_d = shift / cfg.T_sen + 2.0 * v_f * cfg.f_c / SPEED_OF_LIGHT
        D_hat = sa1o_distance(sub, k_c, f_d, theta_hat, cb, est,
                              center_gain=g_c)
    v_hat = SPEED_OF_LIGHT * f_d / (2.0 * cfg.f_c)
    return float(v_hat), D_hat


def ma1o_estimate(capture: EchoCapture, cb: RainbowCodebook,
                  est: EstimatorConfig, rho: float = 1.0,
                  max_iter: int = 5000, tol: float = 1e-7) -> EstimationReport:
    """Full multi-antenna one-symbol pipeline.

    SVD snapshot reduction, atomic-norm denoising, root-MUSIC angles,
    least-squares user separation, then per-user Doppler/delay refinement.
    ``est.K_expected`` must be an integer here (the subspace dimension).
    """
    cfg = cb.cfg
    K = int(est.K_expected)
    _, _, Vh = np.linalg.svd(capture.Y, full_matrices=False)
    X = capture.Y @ Vh[:K].conj().T
    nu = default_nu(capture.sigma_s2, capture.N_r) if capture.sigma_s2 > 0 else \
        1e-4 * np.linalg.norm(X)
    sol = anm_denoise(AnmProblem(X=X, nu=nu), rho=rho,
                      max_iter=max_iter, tol=tol)
    thetas = root_music(sol.toeplitz(), K, cfg)
    thetas = polish_angles(thetas, capture, K, cfg, cb)
    k_cs = snap_to_codebook(thetas, cb)
    signals = extract_user_signal(capture, thetas, cfg)

    users = []
    for theta_hat, k_c, y in zip(thetas, k_cs, signals):
        try:
            v_hat, D_hat = ma1o_refine(y, int(k_c), float(theta_hat),
                                       capture, cb, est)
        except NumericalDegeneracy:
            users.append(UserEstimate(int(k_c), float(theta_hat), np.nan,
                                      np.nan, detected=False))
            continue
        users.append(UserEstimate(int(k_c), float(theta_hat), v_hat, D_hat))
    return EstimationReport(scheme="ma1o", users=users)
