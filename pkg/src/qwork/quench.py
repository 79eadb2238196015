"""Quench Hamiltonians, time-ordered propagators and thermal preparation.

The drive ramps an rf frequency nu(t) = nu1*(1 - t/tau) + nu2*t/tau while the
field axis rotates from sigma_y to sigma_x:

    H_F(t) = nu(t) * (sigma_x * sin(pi*t/(2*tau)) + sigma_y * cos(pi*t/(2*tau)))

in h-units (kHz). The backward drive is H_B(t) = -H_F(tau - t). Propagators
accumulate phase 2*pi*H*dt per slice, so a slice is a closed-form Pauli
exponential and unitarity holds by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache

import numpy as np

from .pauli import IDENTITY_2, SIGMA_X, SIGMA_Y, is_hermitian, projector

PROPAGATOR_TOL = 1e-12
PROPAGATOR_START_STEPS = 64
PROPAGATOR_MAX_STEPS = 2**22


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass(frozen=True)
class QuenchProtocol:
    """Drive parameters: endpoint frequencies (kHz), duration (ms) and direction."""

    nu1_khz: float
    nu2_khz: float
    tau_ms: float
    direction: Direction = Direction.FORWARD

    def __post_init__(self) -> None:
        for name in ("nu1_khz", "nu2_khz", "tau_ms"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"QuenchProtocol.{name} must be finite and > 0, got {value!r}")
        if not isinstance(self.direction, Direction):
            object.__setattr__(self, "direction", Direction(self.direction))

    def reversed(self) -> "QuenchProtocol":
        other = (
            Direction.BACKWARD if self.direction is Direction.FORWARD else Direction.FORWARD
        )
        return replace(self, direction=other)

    @property
    def initial_gap_khz(self) -> float:
        """Full gap of H(0): 2*nu1 forward, 2*nu2 backward."""
        return 2.0 * (self.nu1_khz if self.direction is Direction.FORWARD else self.nu2_khz)


@dataclass(frozen=True)
class Spectrum:
    """Sorted eigenvalues (kHz) and eigenvectors (columns) of a 2x2 Hamiltonian."""

    energies: tuple[float, float]
    states: np.ndarray

    @property
    def ground(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def excited(self) -> np.ndarray:
        return self.states[:, 1]


def _field(p: QuenchProtocol, t):
    """(h_x, h_y) drive components in kHz; accepts scalars or arrays in [0, tau]."""
    if p.direction is Direction.BACKWARD:
        hx, hy = _field(replace(p, direction=Direction.FORWARD), p.tau_ms - np.asarray(t))
        return -hx, -hy
    t = np.asarray(t, dtype=float)
    nu = p.nu1_khz + (p.nu2_khz - p.nu1_khz) * (t / p.tau_ms)
    angle = 0.5 * math.pi * t / p.tau_ms
    return nu * np.sin(angle), nu * np.cos(angle)


def hamiltonian(p: QuenchProtocol, t_ms: float) -> np.ndarray:
    """Drive Hamiltonian at time t in h-units (kHz); Hermitian and traceless."""
    if not (-1e-12 <= t_ms <= p.tau_ms + 1e-12):
        raise ValueError(f"t={t_ms!r} ms outside the protocol window [0, {p.tau_ms}]")
    hx, hy = _field(p, float(np.clip(t_ms, 0.0, p.tau_ms)))
    return float(hx) * SIGMA_X + float(hy) * SIGMA_Y


def eigensystem(h: np.ndarray) -> Spectrum:
    """Diagonalize a Hermitian 2x2 matrix; energies sorted ascending."""
    if not is_hermitian(h):
        raise ValueError("eigensystem requires a Hermitian matrix")
    energies, states = np.linalg.eigh(h)
    return Spectrum((float(energies[0]), float(energies[1])), states)


def _slice_quaternions(ax: np.ndarray, ay: np.ndarray) -> np.ndarray:
    """exp(-i(ax*sx + ay*sy)) as SU(2) quaternions (w, x, y, z), shape (n, 4).

    Composing in quaternion form (with renormalization) keeps long slice
    products unitary to machine precision; raw 2x2 products drift by O(n*eps).
    """
    r = np.hypot(ax, ay)
    sinc = np.ones_like(r)
    nz = r > 0.0
    sinc[nz] = np.sin(r[nz]) / r[nz]
    q = np.zeros((len(r), 4))
    q[:, 0] = np.cos(r)
    q[:, 1] = sinc * ax
    q[:, 2] = sinc * ay
    return q


def _compose_quaternions(q2: np.ndarray, q1: np.ndarray) -> np.ndarray:
    """Quaternion of U(q2) @ U(q1) where U(q) = w*I - i*(x*sx + y*sy + z*sz)."""
    w = q2[:, :1] * q1[:, :1] - np.sum(q2[:, 1:] * q1[:, 1:], axis=1, keepdims=True)
    v = (
        q2[:, :1] * q1[:, 1:]
        + q1[:, :1] * q2[:, 1:]
        + np.cross(q2[:, 1:], q1[:, 1:])
    )
    return np.concatenate([w, v], axis=1)


def _ordered_product(quats: np.ndarray) -> np.ndarray:
    """Quaternion of U_{n-1} ... U_1 U_0, renormalized at every tree level."""
    while quats.shape[0] > 1:
        n = quats.shape[0]
        even = n - (n % 2)
        paired = _compose_quaternions(quats[1:even:2], quats[0:even:2])
        paired /= np.linalg.norm(paired, axis=1, keepdims=True)
        quats = np.concatenate([paired, quats[even:]]) if n % 2 else paired
    return quats[0]


def _matrix_from_quaternion(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [[w - 1j * z, -1j * x - y], [-1j * x + y, w + 1j * z]], dtype=complex
    )


def _propagator_fixed(p: QuenchProtocol, steps: int, scale: float = 1.0) -> np.ndarray:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    dt = p.tau_ms / steps
    t_mid = (np.arange(steps) + 0.5) * dt
    hx, hy = _field(p, t_mid)
    phase = 2.0 * math.pi * dt * scale
    return _matrix_from_quaternion(_ordered_product(_slice_quaternions(phase * hx, phase * hy)))


@lru_cache(maxsize=None)
def _propagator_converged(p: QuenchProtocol) -> np.ndarray:
    steps = PROPAGATOR_START_STEPS
    u = _propagator_fixed(p, steps)
    while steps <= PROPAGATOR_MAX_STEPS:
        steps *= 2
        refined = _propagator_fixed(p, steps)
        if float(np.max(np.abs(refined - u))) < PROPAGATOR_TOL:
            return refined
        u = refined
    raise RuntimeError(f"propagator failed to converge below {PROPAGATOR_TOL} for {p}")


def propagator(p: QuenchProtocol, steps: int | None = None, scale: float = 1.0) -> np.ndarray:
    """Time-ordered propagator of the drive (midpoint slicing).

    With explicit `steps` the slicing is fixed; otherwise the step count is
    doubled from 64 until successive refinements agree to 1e-12 per entry.
    `scale` multiplies the drive amplitude (rf-inhomogeneity surrogate).
    """
    if steps is not None:
        return _propagator_fixed(p, int(steps), scale)
    if scale != 1.0:
        return _propagator_fixed(p, 4096, scale)
    return _propagator_converged(p).copy()


def gibbs_populations(beta_per_khz: float, gap_half_width_khz: float) -> tuple[float, float]:
    """(ground, excited) Boltzmann weights of a two-level system, beta in (kHz)^-1.

    beta may be 0 (maximum entropy) or math.inf (ground state); both are exact.
    """
    if beta_per_khz < 0.0 or math.isnan(beta_per_khz):
        raise ValueError(f"beta must be >= 0 or inf, got {beta_per_khz!r}")
    x = math.tanh(beta_per_khz * gap_half_width_khz) if not math.isinf(beta_per_khz) else 1.0
    return 0.5 * (1.0 + x), 0.5 * (1.0 - x)


def gibbs(p: QuenchProtocol, beta_per_khz: float) -> np.ndarray:
    """Thermal state of the initial Hamiltonian H(0) at inverse temperature beta."""
    spec = eigensystem(hamiltonian(p, 0.0))
    p_ground, p_excited = gibbs_populations(beta_per_khz, spec.energies[1])
    return p_ground * projector(spec.ground) + p_excited * projector(spec.excited)


def temperature_from_population(p1: float, nu_khz: float) -> float:
    """k_B*T/h in kHz from the excited-state population of a gap-2*nu system.

    Uses k_B*T/h = 2*nu / ln((1-p1)/p1); p1 = 1/2 maps to infinite temperature
    and p1 > 1/2 (population inversion) has no positive temperature.
    """
    if not (0.0 < p1 < 1.0):
        raise ValueError(f"population must lie strictly inside (0, 1), got {p1!r}")
    if p1 == 0.5:
        return math.inf
    if p1 > 0.5:
        raise ValueError(f"population {p1!r} > 1/2 is inverted; no positive temperature")
    return 2.0 * nu_khz / math.log((1.0 - p1) / p1)
