"""Work-distribution reconstruction from a sampled magnetization series.

Pipeline: discrete Fourier periodogram for initialization, then a separable
least-squares fit of the damped four-tone model

    m(u) = exp(-gamma*u) * sum_k alpha_k * exp(+i*2*pi*omega_k*u)

and finally the amplitude-to-probability inversion. The four tone frequencies
always come in opposite-sign pairs (work values of a two-level quench are
+-(nu1+nu2) and +-(nu1-nu2)), so the nonlinear search runs over just
(gamma, omega_small, omega_big); the complex amplitudes are linear parameters
recovered by an exact solve at each step (variable projection). That makes
11 real parameters, whose covariance is the residual-variance-scaled inverse
Gauss-Newton Hessian.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .errors import FitError
from .quench import Direction
from .tpm import TransitionTable
from .interferometer import MagnetizationSeries

COV_ORDER = "gamma, omega_small, omega_big, then (Re, Im) of the four amplitudes"
N_REAL_PARAMS = 11


@dataclass(frozen=True)
class FitModel:
    """Damped four-tone model: decay rate, +-paired frequencies, amplitudes."""

    gamma: float
    omegas: np.ndarray
    alphas: np.ndarray
    covariance: np.ndarray
    residual_rms: float
    meta: dict | None = None

    def __post_init__(self) -> None:
        omegas = np.asarray(self.omegas, dtype=float)
        alphas = np.asarray(self.alphas, dtype=complex)
        cov = np.asarray(self.covariance, dtype=float)
        object.__setattr__(self, "omegas", omegas)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "covariance", cov)
        if omegas.shape != (4,) or alphas.shape != (4,):
            raise ValueError("FitModel expects exactly four tones")
        if np.any(np.diff(omegas) <= 0.0):
            raise ValueError("tone frequencies must be strictly ascending")
        if cov.shape != (N_REAL_PARAMS, N_REAL_PARAMS):
            raise ValueError(f"covariance must be {N_REAL_PARAMS}x{N_REAL_PARAMS} ({COV_ORDER})")

    @property
    def omega_small(self) -> float:
        return float(self.omegas[2])

    @property
    def omega_big(self) -> float:
        return float(self.omegas[3])


@dataclass(frozen=True)
class ReconstructedDistribution:
    """Work atoms with first-order uncertainties from the fit covariance."""

    w: np.ndarray
    prob: np.ndarray
    sigma_w: np.ndarray
    sigma_prob: np.ndarray
    meta: dict | None = None

    def __post_init__(self) -> None:
        for name in ("w", "prob", "sigma_w", "sigma_prob"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (self.w.shape == self.prob.shape == self.sigma_w.shape == self.sigma_prob.shape):
            raise ValueError("atom arrays must share one shape")
        if abs(float(self.prob.sum()) - 1.0) > 1e-6:
            raise ValueError(f"normalized probabilities sum to {self.prob.sum()!r}")
        if np.any(self.sigma_w < 0.0) or np.any(self.sigma_prob < 0.0):
            raise ValueError("uncertainties must be >= 0")


def periodogram(series: MagnetizationSeries) -> tuple[np.ndarray, np.ndarray]:
    """Amplitude-normalized DFT power on frequencies spanning (-rate/2, +rate/2].

    A unit complex tone on a grid frequency yields power 1 in its bin, and
    sum(power) equals mean(|samples|^2) (Parseval).
    """
    n = len(series.u_ms)
    if n < 8:
        raise ValueError("periodogram needs at least 8 samples")
    rate = series.rate_khz
    amplitudes = np.fft.fft(series.samples) / n
    freqs = np.fft.fftfreq(n, d=1.0 / rate)
    # map the +-rate/2 ambiguity of even n to +rate/2 so the span is (-rate/2, rate/2]
    freqs = np.where(np.isclose(freqs, -0.5 * rate), 0.5 * rate, freqs)
    order = np.argsort(freqs, kind="stable")
    return freqs[order], np.abs(amplitudes[order]) ** 2


def pick_peaks(spectrum: tuple[np.ndarray, np.ndarray], k: int = 4) -> np.ndarray:
    """k strongest local maxima, refined by quadratic interpolation of log power.

    Maxima closer than 2 bins to an already accepted (stronger) one are
    suppressed. Raises if fewer than k candidates survive.
    """
    freqs, power = spectrum
    n = len(freqs)
    if k > n // 4:
        raise ValueError("k is too large for this spectrum")
    floor = 1e-8 * float(np.max(power)) if np.max(power) > 0 else 0.0
    candidates = [
        i
        for i in range(1, n - 1)
        if power[i] > power[i - 1] and power[i] >= power[i + 1] and power[i] > floor
    ]
    candidates.sort(key=lambda i: power[i], reverse=True)
    accepted: list[int] = []
    for i in candidates:
        if all(abs(i - j) >= 2 for j in accepted):
            accepted.append(i)
        if len(accepted) == k:
            break
    if len(accepted) < k:
        raise ValueError(f"found only {len(accepted)} separated local maxima, need {k}")
    df = freqs[1] - freqs[0]
    refined = []
    for i in accepted:
        window = np.log(np.maximum(power[i - 1 : i + 2], 1e-300))
        denom = window[0] - 2.0 * window[1] + window[2]
        shift = 0.5 * (window[0] - window[2]) / denom if denom < 0.0 else 0.0
        refined.append(float(freqs[i] + shift * df))
    return np.sort(np.array(refined))


def symmetric_peak_guess(spectrum: tuple[np.ndarray, np.ndarray]) -> tuple[float, float]:
    """(omega_small, omega_big) initial guess from the +-folded periodogram.

    Folding makes the guess usable even when one sign of the spectrum is
    empty (e.g. a ground-state preparation has only positive work atoms).
    Spectra too short for interior local maxima fall back to the two
    strongest well-separated bins.
    """
    freqs, power = spectrum
    pos = freqs > 0.0
    f = freqs[pos]
    folded = power[pos].copy()
    for i, fi in enumerate(f):
        j = np.argmin(np.abs(freqs + fi))
        folded[i] += power[j]
    try:
        peaks = pick_peaks((f, folded), 2)
    except ValueError:
        order = np.argsort(folded)[::-1]
        first = order[0]
        second = next((i for i in order[1:] if abs(i - first) >= 1), None)
        if second is None:
            raise
        peaks = np.sort(f[[first, second]])
    return float(peaks[0]), float(peaks[1])


def model_series(u: np.ndarray, gamma: float, omegas: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    phases = np.exp(np.outer(u, 2j * math.pi * np.asarray(omegas)))
    return np.exp(-gamma * u) * (phases @ np.asarray(alphas, dtype=complex))


def _design(u: np.ndarray, gamma: float, omegas: np.ndarray) -> np.ndarray:
    return np.exp(-gamma * u)[:, None] * np.exp(np.outer(u, 2j * math.pi * omegas))


def _solve_amplitudes(u, y, gamma, omegas):
    phi = _design(u, gamma, omegas)
    gram = phi.conj().T @ phi
    if np.linalg.cond(gram) > 1e12:
        raise FitError(f"rank-deficient tone design (omegas {omegas}); cannot solve amplitudes")
    alphas = np.linalg.solve(gram, phi.conj().T @ y)
    return alphas, y - phi @ alphas


def _full_jacobian(u, gamma, omegas, alphas):
    """d(model)/d(11 real params), stacked (Re; Im), shape (2n, 11)."""
    phi = _design(u, gamma, omegas)
    m = phi @ alphas
    cols = [-u * m]
    d_small = 2j * math.pi * u * (phi[:, 2] * alphas[2] - phi[:, 1] * alphas[1])
    d_big = 2j * math.pi * u * (phi[:, 3] * alphas[3] - phi[:, 0] * alphas[0])
    cols += [d_small, d_big]
    for k in range(4):
        cols += [phi[:, k], 1j * phi[:, k]]
    jc = np.stack(cols, axis=1)
    return np.vstack([jc.real, jc.imag])


def fit_model(
    series: MagnetizationSeries,
    init_omegas,
    init_gamma: float = 0.0,
    max_outer: int = 200,
) -> FitModel:
    """Separable nonlinear least squares for the damped four-tone model.

    init_omegas may be the four ascending tone guesses or a (small, big) pair;
    the solver enforces the +- pairing. Amplitudes are eliminated exactly at
    every step; Levenberg-Marquardt drives (gamma, omega_small, omega_big)
    until the relative cost change falls below 1e-12 (or 200 outer rounds).
    """
    init = np.atleast_1d(np.asarray(init_omegas, dtype=float))
    if init.shape == (4,):
        small0 = 0.5 * (init[2] - init[1])
        big0 = 0.5 * (init[3] - init[0])
    elif init.shape == (2,):
        small0, big0 = float(init[0]), float(init[1])
    else:
        raise ValueError("init_omegas must have 2 or 4 entries")
    if not (0.0 < small0 < big0):
        raise FitError(f"initial frequencies must satisfy 0 < small < big, got {small0}, {big0}")

    u = series.u_ms
    y = series.samples
    n = len(u)

    def residual(params):
        gamma, small, big = params
        omegas = np.array([-big, -small, small, big])
        if not (0.0 < small < big):
            return np.full(2 * n, 1e6)
        try:
            _, res = _solve_amplitudes(u, y, gamma, omegas)
        except FitError:
            return np.full(2 * n, 1e6)
        return np.concatenate([res.real, res.imag])

    x0 = np.array([init_gamma, small0, big0])
    result = least_squares(
        residual,
        x0,
        method="lm",
        ftol=1e-12,
        xtol=1e-14,
        gtol=1e-15,
        max_nfev=max_outer * 4,
    )
    if result.status <= 0:
        raise FitError(f"tone fit did not converge: {result.message}; best cost {result.cost:.3e}")

    gamma, small, big = result.x
    omegas = np.array([-big, -small, small, big])
    alphas, res = _solve_amplitudes(u, y, gamma, omegas)
    rss = float(np.sum(np.abs(res) ** 2))
    dof = max(2 * n - N_REAL_PARAMS, 1)
    jac = _full_jacobian(u, gamma, omegas, alphas)
    hess = jac.T @ jac
    cov = float(rss / dof) * np.linalg.pinv(hess, hermitian=True)
    cov = 0.5 * (cov + cov.T)
    meta = None
    if series.meta is not None:
        meta = {
            "direction": series.meta.protocol.direction.value,
            "nu1_khz": series.meta.protocol.nu1_khz,
            "nu2_khz": series.meta.protocol.nu2_khz,
            "tau_ms": series.meta.protocol.tau_ms,
            "beta_per_khz": series.meta.beta_per_khz,
            "seed": series.meta.seed,
        }
    return FitModel(float(gamma), omegas, alphas, cov, math.sqrt(rss / n), meta)


def _aligned_probs(alphas: np.ndarray) -> np.ndarray:
    total = complex(np.sum(alphas))
    if abs(total) < 1e-12 * max(1.0, float(np.sum(np.abs(alphas)))):
        raise ValueError("amplitude sum is ~0; probabilities undefined")
    rotated = alphas * np.exp(-1j * np.angle(total))
    return rotated.real / float(np.sum(rotated.real))


def distribution_from_fit(m: FitModel) -> ReconstructedDistribution:
    """Atoms W_k = omega_k with probabilities Re(alpha_k)/Re(sum alpha).

    The global phase is first rotated so the amplitude sum is real positive;
    ideal amplitudes are then real, and taking the real part avoids the upward
    bias of |alpha| under noise. Uncertainties come from the fit covariance by
    the first-order delta method.
    """
    probs = _aligned_probs(m.alphas)
    sigma_small = math.sqrt(max(m.covariance[1, 1], 0.0))
    sigma_big = math.sqrt(max(m.covariance[2, 2], 0.0))
    sigma_w = np.array([sigma_big, sigma_small, sigma_small, sigma_big])

    cov_alpha = m.covariance[3:, 3:]
    x0 = np.empty(8)
    x0[0::2] = m.alphas.real
    x0[1::2] = m.alphas.imag
    jac = np.empty((4, 8))
    step = 1e-7 * max(1.0, float(np.max(np.abs(x0))))
    for j in range(8):
        x = x0.copy()
        x[j] += step
        jac[:, j] = (_aligned_probs(x[0::2] + 1j * x[1::2]) - probs) / step
    sigma_prob = np.sqrt(np.maximum(np.diag(jac @ cov_alpha @ jac.T), 0.0))
    return ReconstructedDistribution(m.omegas, probs, sigma_w, sigma_prob, meta=m.meta)


def conditionals_from_distribution(
    d: ReconstructedDistribution, direction: Direction = Direction.FORWARD
) -> TransitionTable:
    """Invert the four-atom distribution back into the transition table.

    Atom order is ascending in W. For the forward process the atoms read
    (p1*p01, p1*p11, p0*p00, p0*p10); the backward process swaps the middle
    pair because its initial and final gaps are exchanged.
    """
    if d.w.shape != (4,):
        raise ValueError("need exactly four atoms")
    if np.any(np.diff(d.w) <= 0.0):
        raise ValueError("atoms must be ordered ascending in W")
    q = d.prob
    if direction is Direction.FORWARD:
        pairs = {(1, 0): q[0], (1, 1): q[1], (0, 0): q[2], (0, 1): q[3]}
    else:
        pairs = {(1, 0): q[0], (0, 0): q[1], (1, 1): q[2], (0, 1): q[3]}
    p1 = pairs[(1, 0)] + pairs[(1, 1)]
    p0 = pairs[(0, 0)] + pairs[(0, 1)]
    if p1 <= 0.0:
        raise ValueError("excited-state marginal is zero; its conditional row is undefined")
    if p0 <= 0.0:
        raise ValueError("ground-state marginal is zero; its conditional row is undefined")
    total = p0 + p1  # renormalization residual |total - 1| is reported by the CLI
    pcond = np.array(
        [
            [pairs[(0, 0)] / p0, pairs[(0, 1)] / p0],
            [pairs[(1, 0)] / p1, pairs[(1, 1)] / p1],
        ]
    )
    return TransitionTable(np.array([p0 / total, p1 / total]), pcond)
