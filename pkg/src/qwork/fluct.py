"""Fluctuation-relation verification with uncertainty propagation.

Three independent estimates of exp(-beta*dF) are compared:

  1. analytic continuation of the fitted characteristic function at u = i*beta,
     i.e. sum_k prob_k * exp(-beta*W_k) with the decay envelope excluded;
  2. exp(intercept) of the weighted linear fit of ln(P_F(W)/P_B(-W)) against W
     (the intercept is -beta*dF, the slope recovers beta itself);
  3. the two-level partition-function ratio at the preparation temperature.

Uncertainties for (1) come from a Monte Carlo over the fit covariance plus an
independent Gaussian for beta; (2) and (3) use first-order propagation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PairingError, QworkError
from .quench import QuenchProtocol
from .spectral import FitModel, ReconstructedDistribution, distribution_from_fit
from .tpm import delta_f_theory

PAIRING_TOL_KHZ = 0.2
COALESCE_TOL_KHZ = 1e-6
DEGENERATE_SLOPE = 1e-9
AGREEMENT_FLOOR = 1e-6


@dataclass(frozen=True)
class CrooksFit:
    """Weighted linear fit of the log probability ratio against work."""

    beta_est: float
    delta_f_est: float
    sigma_beta: float
    sigma_delta_f: float
    cov_beta_delta_f: float
    intercept: float
    sigma_intercept: float
    points: tuple[tuple[float, float, float], ...]
    degenerate: bool = False


@dataclass(frozen=True)
class JarzynskiRow:
    """Three-way comparison of exp(-beta*dF) for one preparation temperature."""

    beta_per_khz: float
    lhs_continuation: tuple[float, float]
    rhs_crooks: tuple[float, float]
    rhs_theory: tuple[float, float]
    flags: dict[str, bool]


def _coalesce(w: np.ndarray, prob: np.ndarray, sigma: np.ndarray):
    """Merge atoms whose W coincide within the analytic tolerance."""
    order = np.argsort(w, kind="stable")
    out_w, out_p, out_s = [], [], []
    for i in order:
        if out_w and abs(w[i] - out_w[-1]) <= COALESCE_TOL_KHZ:
            out_p[-1] += prob[i]
            out_s[-1] = math.hypot(out_s[-1], sigma[i])
        else:
            out_w.append(float(w[i]))
            out_p.append(float(prob[i]))
            out_s.append(float(sigma[i]))
    return np.array(out_w), np.array(out_p), np.array(out_s)


def crooks_points(
    d_forward: ReconstructedDistribution, d_backward: ReconstructedDistribution
) -> list[tuple[float, float, float]]:
    """(W, ln(P_F(W)/P_B(-W)), sigma) for atoms paired by |W|.

    Atoms at analytically equal W are merged first (a null quench puts two
    atoms at W = 0). Pairing beyond 0.2 kHz, or a zero probability on either
    side, is an error.
    """
    wf, pf, sf = _coalesce(d_forward.w, d_forward.prob, d_forward.sigma_prob)
    wb, pb, sb = _coalesce(-d_backward.w, d_backward.prob, d_backward.sigma_prob)
    order = np.argsort(wb, kind="stable")
    wb, pb, sb = wb[order], pb[order], sb[order]
    if len(wf) != len(wb):
        raise PairingError(f"cannot pair {len(wf)} forward atoms with {len(wb)} backward atoms")
    points = []
    for k in range(len(wf)):
        if abs(wf[k] - wb[k]) > PAIRING_TOL_KHZ:
            raise PairingError(
                f"forward atom at {wf[k]:.4f} kHz has no backward partner within "
                f"{PAIRING_TOL_KHZ} kHz (nearest {wb[k]:.4f})"
            )
        if pf[k] <= 0.0 or pb[k] <= 0.0:
            raise QworkError(f"zero probability at W = {wf[k]:.4f} kHz; log ratio undefined")
        sigma = math.hypot(sf[k] / pf[k], sb[k] / pb[k])
        points.append((0.5 * (wf[k] + wb[k]), math.log(pf[k] / pb[k]), sigma))
    return points


def crooks_fit(points) -> CrooksFit:
    """Weighted least squares of the log ratio: slope = beta, -intercept/slope = dF.

    Exact inputs (all sigmas ~ 0) fall back to an unweighted fit with zero
    reported uncertainty. A vanishing slope (infinite temperature) flags the
    fit as degenerate instead of producing a dF estimate.
    """
    points = list(points)
    if len(points) < 2:
        raise QworkError("need at least two (W, ln-ratio) points")
    w = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    sigma = np.array([p[2] for p in points])
    if np.ptp(w) < 1e-9:
        raise QworkError("degenerate W spread; cannot fit a line")
    exact = bool(np.max(sigma) < 1e-13)
    weights = np.ones_like(w) if exact else 1.0 / np.maximum(sigma, 1e-13) ** 2
    x = np.column_stack([np.ones_like(w), w])
    gram = x.T @ (weights[:, None] * x)
    cov = np.linalg.inv(gram)
    coef = cov @ (x.T @ (weights * y))
    intercept, slope = float(coef[0]), float(coef[1])
    if exact:
        cov = np.zeros((2, 2))
    sigma_a = math.sqrt(max(cov[0, 0], 0.0))
    sigma_b = math.sqrt(max(cov[1, 1], 0.0))
    degenerate = abs(slope) < DEGENERATE_SLOPE
    if degenerate:
        delta_f = math.nan
        sigma_df = math.nan
        cov_bdf = math.nan
    else:
        delta_f = -intercept / slope
        grad = np.array([-1.0 / slope, intercept / slope**2])
        sigma_df = math.sqrt(max(float(grad @ cov @ grad), 0.0))
        cov_bdf = float(cov[1, 0] * grad[0] + cov[1, 1] * grad[1])
    return CrooksFit(
        beta_est=slope,
        delta_f_est=delta_f,
        sigma_beta=sigma_b,
        sigma_delta_f=sigma_df,
        cov_beta_delta_f=cov_bdf,
        intercept=intercept,
        sigma_intercept=sigma_a,
        points=tuple(points),
        degenerate=degenerate,
    )


def jarzynski_continuation(m: FitModel, beta_per_khz: float) -> float:
    """Fitted exponential work average sum_k prob_k*exp(-beta*omega_k).

    The decay envelope is instrumental, not part of P(W), so gamma is dropped
    at the evaluation point; the result is the fitted chi at u = i*beta up to
    that exclusion.
    """
    if math.isinf(beta_per_khz):
        raise QworkError("continuation undefined at beta = inf")
    d = distribution_from_fit(m)
    return float(np.sum(d.prob * np.exp(-beta_per_khz * d.w)))


def _probs_from_alphas(alphas: np.ndarray) -> np.ndarray:
    rotated = alphas * np.exp(-1j * np.angle(np.sum(alphas)))
    return rotated.real / np.sum(rotated.real)


def monte_carlo(
    m: FitModel,
    beta_per_khz: float,
    sigma_beta: float = 0.0,
    trials: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Mean and standard deviation of the continuation under parameter draws.

    The (omega_small, omega_big, Re/Im alpha) block of the fit covariance is
    sampled with a multivariate Gaussian; beta is drawn independently. All
    draws are generated up front from the seed, so the result is reproducible
    regardless of evaluation order.
    """
    if trials < 1:
        raise QworkError("need at least one trial")
    cov = m.covariance[1:, 1:]
    scale = float(np.max(np.abs(cov)))
    eigvals = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    if eigvals[0] < -1e-9 * max(scale, 1.0):
        raise QworkError(f"fit covariance is not positive semi-definite (min eig {eigvals[0]:.3e})")
    root = _psd_root(cov)
    rng = np.random.Generator(np.random.PCG64(seed))
    draws = rng.standard_normal((trials, 10)) @ root.T
    betas = beta_per_khz + sigma_beta * rng.standard_normal(trials)
    center = np.empty(10)
    center[0] = m.omega_small
    center[1] = m.omega_big
    center[2::2] = m.alphas.real
    center[3::2] = m.alphas.imag
    params = center + draws
    alphas = params[:, 2::2] + 1j * params[:, 3::2]
    rotated = alphas * np.exp(-1j * np.angle(np.sum(alphas, axis=1)))[:, None]
    probs = rotated.real / np.sum(rotated.real, axis=1)[:, None]
    omegas = np.column_stack([-params[:, 1], -params[:, 0], params[:, 0], params[:, 1]])
    values = np.sum(probs * np.exp(-betas[:, None] * omegas), axis=1)
    return float(np.mean(values)), float(np.std(values))


def _psd_root(cov: np.ndarray) -> np.ndarray:
    sym = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def jarzynski_report(
    fit_forward: FitModel,
    crooks: CrooksFit,
    p: QuenchProtocol,
    beta_per_khz: float,
    trials: int = 1000,
    seed: int = 0,
) -> JarzynskiRow:
    """Assemble the three-way exp(-beta*dF) comparison for one temperature.

    The continuation column is centered on the Crooks-estimated beta (the
    in-silico analog of reading the temperature off the Crooks line) with its
    uncertainty folded into the Monte Carlo; the theory column sits at the
    preparation beta with the Crooks beta uncertainty propagated through the
    partition-function ratio. Flags mark pairwise agreement within twice the
    combined uncertainty (with a 1e-6 absolute floor for exact chains).
    """
    beta_mc = crooks.beta_est if not crooks.degenerate else beta_per_khz
    lhs = monte_carlo(fit_forward, beta_mc, crooks.sigma_beta, trials, seed)
    rhs_crooks = (
        math.exp(crooks.intercept),
        math.exp(crooks.intercept) * crooks.sigma_intercept,
    )
    df = delta_f_theory(beta_per_khz, p.nu1_khz, p.nu2_khz)
    theory = math.exp(-beta_per_khz * df)
    # d/dbeta of exp(-ln(cosh b*nu1 / cosh b*nu2)) = -theory*(nu1*tanh(b*nu1) - nu2*tanh(b*nu2))
    dtheory = -theory * (
        p.nu1_khz * math.tanh(beta_per_khz * p.nu1_khz)
        - p.nu2_khz * math.tanh(beta_per_khz * p.nu2_khz)
    )
    rhs_theory = (theory, abs(dtheory) * crooks.sigma_beta)
    values = {"continuation": lhs, "crooks": rhs_crooks, "theory": rhs_theory}
    flags = {}
    names = list(values)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            va, sa = values[a]
            vb, sb = values[b]
            tol = 2.0 * math.hypot(sa, sb) + AGREEMENT_FLOOR * max(1.0, abs(va), abs(vb))
            flags[f"{a}_vs_{b}"] = bool(abs(va - vb) <= tol)
    return JarzynskiRow(beta_per_khz, lhs, rhs_crooks, rhs_theory, flags)
