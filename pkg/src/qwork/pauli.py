"""Fixed-dimension complex linear algebra for one ancilla + one system qubit.

Everything is a plain complex ndarray. Tensor products always put the ancilla
factor first. Operations are pure and inputs are never mutated.
"""
from __future__ import annotations

import math

import numpy as np

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)
IDENTITY_4 = np.eye(4, dtype=complex)

KET_0 = np.array([1.0, 0.0], dtype=complex)
KET_1 = np.array([0.0, 1.0], dtype=complex)

HERMITICITY_TOL = 1e-12
TRACE_TOL = 1e-12
EIGENVALUE_TOL = 1e-10


def pauli_exp(a: float, b: float, c: float) -> np.ndarray:
    """Closed-form exp(-i(a*sx + b*sy + c*sz)); (0,0,0) gives the identity."""
    for name, value in (("a", a), ("b", b), ("c", c)):
        if not math.isfinite(value):
            raise ValueError(f"pauli_exp coefficient {name} must be finite, got {value!r}")
    r = math.sqrt(a * a + b * b + c * c)
    if r == 0.0:
        return IDENTITY_2.copy()
    s = math.sin(r) / r
    return math.cos(r) * IDENTITY_2 - 1j * s * (a * SIGMA_X + b * SIGMA_Y + c * SIGMA_Z)


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with the ancilla factor first."""
    if a.shape != (2, 2) or b.shape != (2, 2):
        raise ValueError("tensor expects two 2x2 matrices")
    return np.kron(a, b)


def partial_trace_system(rho: np.ndarray) -> np.ndarray:
    """Trace out the system factor of an (ancilla x system) 4x4 operator."""
    if rho.shape != (4, 4):
        raise ValueError("partial_trace_system expects a 4x4 matrix")
    return np.einsum("acbc->ab", rho.reshape(2, 2, 2, 2))


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Half the trace norm of rho - sigma (via eigenvalues of the Hermitian difference)."""
    if rho.shape != sigma.shape:
        raise ValueError("trace_distance requires equal dimensions")
    delta = rho - sigma
    delta = 0.5 * (delta + delta.conj().T)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(delta))))


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def projector(ket: np.ndarray) -> np.ndarray:
    return np.outer(ket, ket.conj())


def is_hermitian(a: np.ndarray, tol: float = HERMITICITY_TOL) -> bool:
    return bool(np.max(np.abs(a - a.conj().T)) <= tol * max(1.0, float(np.max(np.abs(a)))))


def check_unitary(u: np.ndarray, tol: float = 1e-12, name: str = "matrix") -> None:
    dim = u.shape[0]
    err = float(np.max(np.abs(u.conj().T @ u - np.eye(dim))))
    if err > tol:
        raise ValueError(f"{name} is not unitary (max deviation {err:.3e} > {tol:.1e})")


def check_density_matrix(rho: np.ndarray, name: str = "state") -> None:
    """Validate Hermiticity, unit trace and positivity up to the module tolerances."""
    if rho.shape not in ((2, 2), (4, 4)):
        raise ValueError(f"{name} must be 2x2 or 4x4, got shape {rho.shape}")
    if not is_hermitian(rho):
        raise ValueError(f"{name} is not Hermitian within {HERMITICITY_TOL:.1e}")
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"{name} trace {tr!r} differs from 1 beyond {TRACE_TOL:.1e}")
    lo = float(np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))))
    if lo < -EIGENVALUE_TOL:
        raise ValueError(f"{name} has negative eigenvalue {lo:.3e}")
