"""Single-qubit process tomography and channel diagnostics.

Channels are expressed as E(rho) = sum_kl xi_kl * B_k rho B_l^dag in the
operator basis (i*I, sx, sy, sz); with the i*I convention any unitary channel
has a real xi matrix, which makes the residual imaginary part a direct
witness of non-unitary content. Reconstruction is plain linear inversion from
the four probe states {|0>, |1>, |+>, |+i>}.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .pauli import IDENTITY_2, SIGMA_X, SIGMA_Y, SIGMA_Z, trace_distance
from .tpm import TransitionTable

PROCESS_BASIS = np.stack([1j * IDENTITY_2, SIGMA_X, SIGMA_Y, SIGMA_Z])
TP_TOL = 1e-9
HERM_TOL = 1e-9

Channel = Callable[[np.ndarray], np.ndarray]

_KET_0 = np.array([1.0, 0.0], dtype=complex)
_KET_1 = np.array([0.0, 1.0], dtype=complex)
_KET_PLUS = np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0)
_KET_PLUS_I = np.array([1.0, 1.0j], dtype=complex) / math.sqrt(2.0)
PROBE_STATES = tuple(np.outer(k, k.conj()) for k in (_KET_0, _KET_1, _KET_PLUS, _KET_PLUS_I))


@dataclass(frozen=True)
class ProcessMatrix:
    """xi coefficients of a qubit channel in the (i*I, sx, sy, sz) basis."""

    xi: np.ndarray

    def __post_init__(self) -> None:
        xi = np.asarray(self.xi, dtype=complex)
        object.__setattr__(self, "xi", xi)
        if xi.shape != (4, 4):
            raise ValueError("xi must be 4x4")
        tp = sum(
            xi[k, l] * PROCESS_BASIS[l].conj().T @ PROCESS_BASIS[k]
            for k in range(4)
            for l in range(4)
        )
        if np.max(np.abs(tp - IDENTITY_2)) > TP_TOL:
            raise ValueError("xi does not describe a trace-preserving map")
        s = superoperator(xi)
        herm_defect = 0.0
        for rho in PROBE_STATES:
            out = (s @ rho.reshape(4)).reshape(2, 2)
            herm_defect = max(herm_defect, float(np.max(np.abs(out - out.conj().T))))
        if herm_defect > HERM_TOL:
            raise ValueError("xi does not describe a Hermiticity-preserving map")

    @property
    def imag_norm(self) -> float:
        return float(np.max(np.abs(self.xi.imag)))


@dataclass(frozen=True)
class ChannelMetrics:
    worst_case_distance: float
    unitality_deviation: float
    imag_norm: float

    def __post_init__(self) -> None:
        for name in ("worst_case_distance", "unitality_deviation", "imag_norm"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")


def superoperator(xi: np.ndarray) -> np.ndarray:
    """Row-major superoperator: vec(E(rho)) = S @ vec(rho)."""
    s = np.zeros((4, 4), dtype=complex)
    for k, l in itertools.product(range(4), range(4)):
        if xi[k, l] != 0.0:
            s += xi[k, l] * np.kron(PROCESS_BASIS[k], PROCESS_BASIS[l].conj())
    return s


def _xi_from_superoperator(s: np.ndarray) -> np.ndarray:
    xi = np.empty((4, 4), dtype=complex)
    for k, l in itertools.product(range(4), range(4)):
        basis = np.kron(PROCESS_BASIS[k], PROCESS_BASIS[l].conj())
        xi[k, l] = np.trace(basis.conj().T @ s) / 4.0
    return xi


def apply_process(xi: ProcessMatrix | np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Evaluate the channel on a 2x2 operator."""
    mat = xi.xi if isinstance(xi, ProcessMatrix) else np.asarray(xi, dtype=complex)
    out = (superoperator(mat) @ rho.reshape(4)).reshape(2, 2)
    tr_in, tr_out = complex(np.trace(rho)), complex(np.trace(out))
    if abs(tr_out - tr_in) > 1e-9 * max(1.0, abs(tr_in)):
        raise ValueError(f"channel changed the trace by {abs(tr_out - tr_in):.3e}")
    return out


def reconstruct(channel: Channel) -> ProcessMatrix:
    """Linear-inversion tomography from the probes {|0>, |1>, |+>, |+i>}.

    A fifth probe (|->) cross-checks linearity of the supplied map; an
    inconsistent response is rejected.
    """
    out0, out1, out_plus, out_plus_i = (channel(rho) for rho in PROBE_STATES)
    e01 = out_plus + 1j * out_plus_i - 0.5 * (1.0 + 1j) * (out0 + out1)
    e10 = out_plus - 1j * out_plus_i - 0.5 * (1.0 - 1j) * (out0 + out1)
    s = np.zeros((4, 4), dtype=complex)
    s[:, 0] = out0.reshape(4)
    s[:, 1] = e01.reshape(4)
    s[:, 2] = e10.reshape(4)
    s[:, 3] = out1.reshape(4)
    # row-major vec: columns indexed by the input basis element E_ij at 2*i+j
    minus = np.array([1.0, -1.0], dtype=complex) / math.sqrt(2.0)
    rho_minus = np.outer(minus, minus.conj())
    predicted = (s @ rho_minus.reshape(4)).reshape(2, 2)
    actual = channel(rho_minus)
    if np.max(np.abs(predicted - actual)) > 1e-8:
        raise ValueError("channel responses are inconsistent with a linear map")
    return ProcessMatrix(_xi_from_superoperator(s))


def unitary_channel(u: np.ndarray) -> Channel:
    return lambda rho: u @ rho @ u.conj().T


def depolarizing_channel(p: float) -> Channel:
    return lambda rho: (1.0 - p) * rho + p * 0.5 * complex(np.trace(rho)) * IDENTITY_2


def amplitude_damping_channel(p: float) -> Channel:
    k0 = np.array([[1.0, 0.0], [0.0, math.sqrt(1.0 - p)]], dtype=complex)
    k1 = np.array([[0.0, math.sqrt(p)], [0.0, 0.0]], dtype=complex)
    return lambda rho: k0 @ rho @ k0.conj().T + k1 @ rho @ k1.conj().T


def unitality_deviation(xi: ProcessMatrix) -> float:
    """Trace distance between E(I/2) and I/2; zero for every unital map."""
    return trace_distance(apply_process(xi, 0.5 * IDENTITY_2), 0.5 * IDENTITY_2)


def _bloch_states(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Pure-state density matrices for spherical angles, stacked (n, 2, 2)."""
    nx = np.sin(theta) * np.cos(phi)
    ny = np.sin(theta) * np.sin(phi)
    nz = np.cos(theta)
    rho = np.empty((len(theta), 2, 2), dtype=complex)
    rho[:, 0, 0] = 0.5 * (1.0 + nz)
    rho[:, 1, 1] = 0.5 * (1.0 - nz)
    rho[:, 0, 1] = 0.5 * (nx - 1j * ny)
    rho[:, 1, 0] = 0.5 * (nx + 1j * ny)
    return rho


def _distance_2x2_batch(delta: np.ndarray) -> np.ndarray:
    """Trace distances 0.5*||delta||_1 for a stack of Hermitian 2x2 matrices."""
    half_tr = 0.5 * np.real(delta[:, 0, 0] + delta[:, 1, 1])
    half_diff = 0.5 * np.real(delta[:, 0, 0] - delta[:, 1, 1])
    radius = np.sqrt(half_diff**2 + np.abs(delta[:, 0, 1]) ** 2)
    return 0.5 * (np.abs(half_tr + radius) + np.abs(half_tr - radius))


def worst_case_distance(e1: Channel | ProcessMatrix, e2: Channel | ProcessMatrix) -> float:
    """max_rho trace_distance(E1(rho), E2(rho)) over the Bloch sphere.

    Trace distance is convex, so pure states attain the maximum; a 2-degree
    grid brackets it and a Nelder-Mead polish refines the best grid point.
    Callable channels are tomographed once (they are linear by precondition)
    so the whole grid evaluates as a single superoperator product.
    """
    s1 = superoperator(e1.xi if isinstance(e1, ProcessMatrix) else reconstruct(e1).xi)
    s2 = superoperator(e2.xi if isinstance(e2, ProcessMatrix) else reconstruct(e2).xi)
    s_diff = s1 - s2
    theta = np.deg2rad(np.arange(0.0, 180.0 + 1e-9, 2.0))
    phi = np.deg2rad(np.arange(0.0, 360.0, 2.0))
    tg, pg = np.meshgrid(theta, phi, indexing="ij")
    tg, pg = tg.ravel(), pg.ravel()
    states = _bloch_states(tg, pg)
    delta = (states.reshape(-1, 4) @ s_diff.T).reshape(-1, 2, 2)
    distances = _distance_2x2_batch(delta)
    best = int(np.argmax(distances))

    def objective(angles):
        rho = _bloch_states(np.array([angles[0]]), np.array([angles[1]]))
        d = (rho.reshape(1, 4) @ s_diff.T).reshape(1, 2, 2)
        return -float(_distance_2x2_batch(d)[0])

    result = minimize(
        objective,
        x0=np.array([tg[best], pg[best]]),
        method="Nelder-Mead",
        options={"xatol": 1e-7, "fatol": 1e-14, "maxiter": 400},
    )
    return max(float(distances[best]), -float(result.fun))


def microreversibility_deviation(t_forward: TransitionTable, t_backward: TransitionTable) -> float:
    """max_{m,n} |p_B(n|m) - p_F(m|n)|: transpose symmetry of the two tables."""
    return float(np.max(np.abs(t_backward.pcond.T - t_forward.pcond)))


def channel_metrics(ideal: Channel | ProcessMatrix, xi: ProcessMatrix) -> ChannelMetrics:
    return ChannelMetrics(
        worst_case_distance=worst_case_distance(ideal, xi),
        unitality_deviation=unitality_deviation(xi),
        imag_norm=xi.imag_norm,
    )
