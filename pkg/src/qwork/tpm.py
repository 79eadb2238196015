"""Exact two-point-measurement bookkeeping for the two-level quench.

Work is the difference between final and initial projective energy outcomes,
W = e_m(tau) - e_n(0), with probability p0_n * p_{m|n}. The characteristic
function follows the convention chi(u) = <exp(+i*2*pi*W*u)> so that the
exponential average for the free-energy check reads sum_k prob_k*exp(-beta*W_k).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .pauli import check_unitary, projector
from .quench import (
    QuenchProtocol,
    Spectrum,
    eigensystem,
    gibbs_populations,
    hamiltonian,
    propagator,
)

NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True)
class TransitionTable:
    """Initial populations p0 (2,) and conditional probabilities pcond (2, 2).

    Row = initial eigenstate index n, column = final index m, both ordered by
    ascending energy.
    """

    p0: np.ndarray
    pcond: np.ndarray

    def __post_init__(self) -> None:
        p0 = np.asarray(self.p0, dtype=float)
        pcond = np.asarray(self.pcond, dtype=float)
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "pcond", pcond)
        if p0.shape != (2,) or pcond.shape != (2, 2):
            raise ValueError("TransitionTable expects p0 of shape (2,) and pcond of shape (2,2)")
        if abs(float(p0.sum()) - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"initial populations sum to {p0.sum()!r}, not 1")
        if np.any(p0 < -NORMALIZATION_TOL) or np.any(pcond < -NORMALIZATION_TOL):
            raise ValueError("probabilities must be non-negative")
        rows = pcond.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > NORMALIZATION_TOL:
            raise ValueError(f"conditional rows sum to {rows!r}, not 1")


@dataclass(frozen=True)
class DiscreteWorkDistribution:
    """Atoms (W_k in kHz, prob_k); four atoms for a two-level quench."""

    w: np.ndarray
    prob: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=float)
        prob = np.asarray(self.prob, dtype=float)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "prob", prob)
        if w.shape != prob.shape or w.ndim != 1 or len(w) < 1:
            raise ValueError("work distribution needs matching 1-d atom arrays")
        if abs(float(prob.sum()) - 1.0) > NORMALIZATION_TOL:
            raise ValueError(f"atom probabilities sum to {prob.sum()!r}, not 1")


def spectra(p: QuenchProtocol) -> tuple[Spectrum, Spectrum]:
    """Eigensystems of H(0) and H(tau) for the given protocol."""
    return eigensystem(hamiltonian(p, 0.0)), eigensystem(hamiltonian(p, p.tau_ms))


def table_from_bases(
    p0: np.ndarray, s0: Spectrum, s1: Spectrum, u: np.ndarray
) -> TransitionTable:
    """Conditional probabilities |<m(tau)|U|n(0)>|^2 for explicit bases."""
    check_unitary(u, 1e-10, "propagator")
    amps = s1.states.conj().T @ u @ s0.states
    return TransitionTable(np.asarray(p0, dtype=float), np.abs(amps.T) ** 2)


def transition_table(p: QuenchProtocol, beta_per_khz: float, u: np.ndarray) -> TransitionTable:
    """Transition table of a protocol: thermal p0 at beta plus |<m|U|n>|^2."""
    s0, s1 = spectra(p)
    populations = np.array(gibbs_populations(beta_per_khz, s0.energies[1]))
    return table_from_bases(populations, s0, s1, u)


def transition_table_from_channel(
    p: QuenchProtocol,
    beta_per_khz: float,
    channel: Callable[[np.ndarray], np.ndarray],
) -> TransitionTable:
    """Transition table when the evolution is a (possibly non-unitary) channel."""
    s0, s1 = spectra(p)
    populations = np.array(gibbs_populations(beta_per_khz, s0.energies[1]))
    pcond = np.empty((2, 2))
    basis0 = (s0.ground, s0.excited)
    basis1 = (s1.ground, s1.excited)
    for n in range(2):
        out = channel(projector(basis0[n]))
        for m in range(2):
            pcond[n, m] = float(np.real(basis1[m].conj() @ out @ basis1[m]))
    pcond /= pcond.sum(axis=1, keepdims=True)
    return TransitionTable(populations, pcond)


def work_distribution(t: TransitionTable, s0: Spectrum, s1: Spectrum) -> DiscreteWorkDistribution:
    """Four-atom P(W) from a table and the initial/final spectra, sorted by W."""
    w = np.array([s1.energies[m] - s0.energies[n] for n in range(2) for m in range(2)])
    prob = np.array([t.p0[n] * t.pcond[n, m] for n in range(2) for m in range(2)])
    order = np.argsort(w, kind="stable")
    return DiscreteWorkDistribution(w[order], prob[order])


def exact_distribution(
    p: QuenchProtocol, beta_per_khz: float, u: np.ndarray | None = None
) -> DiscreteWorkDistribution:
    """Convenience oracle: distribution of the converged propagator at beta."""
    if u is None:
        u = propagator(p)
    s0, s1 = spectra(p)
    return work_distribution(transition_table(p, beta_per_khz, u), s0, s1)


def chi_exact(d: DiscreteWorkDistribution, u_ms) -> complex:
    """Characteristic function sum_k prob_k * exp(i*2*pi*W_k*u)."""
    u = np.asarray(u_ms, dtype=float)
    value = np.sum(d.prob * np.exp(2j * math.pi * u[..., None] * d.w), axis=-1)
    return complex(value) if value.ndim == 0 else value


def jarzynski_lhs(d: DiscreteWorkDistribution, beta_per_khz: float) -> float:
    """Exponential work average sum_k prob_k * exp(-beta*W_k) for finite beta."""
    if math.isinf(beta_per_khz):
        raise ValueError("the exponential work average is undefined at beta = inf")
    if beta_per_khz < 0.0:
        raise ValueError("beta must be >= 0")
    return float(np.sum(d.prob * np.exp(-beta_per_khz * d.w)))


def _log_cosh(x: float) -> float:
    ax = abs(x)
    return ax + math.log1p(math.exp(-2.0 * ax)) - math.log(2.0)


def beta_delta_f(beta_per_khz: float, nu1_khz: float, nu2_khz: float) -> float:
    """beta*dF = ln(Z0/Z_tau) for two-level gaps 2*nu1 -> 2*nu2 (finite beta)."""
    if math.isinf(beta_per_khz):
        raise ValueError("beta*dF diverges at beta = inf; use delta_f_theory")
    return _log_cosh(beta_per_khz * nu1_khz) - _log_cosh(beta_per_khz * nu2_khz)


def delta_f_theory(beta_per_khz: float, nu1_khz: float, nu2_khz: float) -> float:
    """Free-energy change (kHz): (1/beta) * ln(cosh(beta*nu1)/cosh(beta*nu2)).

    Limits: 0 at beta = 0 (both partition functions -> 2) and nu1 - nu2 at
    beta = inf (ground-state gap difference).
    """
    if beta_per_khz < 0.0 or math.isnan(beta_per_khz):
        raise ValueError(f"beta must be >= 0 or inf, got {beta_per_khz!r}")
    if beta_per_khz == 0.0:
        return 0.0
    if math.isinf(beta_per_khz):
        return nu1_khz - nu2_khz
    return beta_delta_f(beta_per_khz, nu1_khz, nu2_khz) / beta_per_khz
