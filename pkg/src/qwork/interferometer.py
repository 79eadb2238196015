"""Ancilla-based reconstruction circuit and its pulse-sequence compilation.

The abstract circuit prepares |0><0|_A (x) gibbs, applies an ancilla Hadamard,
the two ancilla-controlled phase gates around the quench propagator, a final
ancilla Hadamard, and reads the ancilla. After the final mixing pulse the real
part of the characteristic function sits on the ancilla population difference
and the imaginary part on <sigma_y>, so the normalized readout

    chi(u) = <sigma_z_A> + i * <sigma_y_A>

equals the two-point-measurement characteristic function exactly.

The compiled variant realizes each controlled phase with the always-on
coupling H_J = 2*pi*J*sigma_z_A*sigma_z_S (J = 215.1 Hz): a zz free evolution
plus a system z-rotation gives the |0>-controlled phase, and sandwiching the
coupling between ancilla pi_x flips inverts its sign for the |1>-controlled
one. Hadamard-type blocks (sigma_x+sigma_z)/sqrt(2) and (sigma_y+sigma_z)/sqrt(2)
rotate the system between the computational basis and the drive eigenbases.
Coupling angles are proportional to nu*u, so the first free evolution is
nu1/nu2 = 2.5 times longer than the second for the forward process and the
inverse for the backward one.

Noise model: a static per-molecule rf-amplitude scale (drawn once per ensemble
member) multiplies every transverse pulse angle and the quench drive; phase
damping of strength c acts on the system after each coupling interval; a
phenomenological envelope exp(-gamma*u) multiplies the readout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .pauli import (
    IDENTITY_2,
    KET_0,
    check_unitary,
    dagger,
    pauli_exp,
    partial_trace_system,
    projector,
    tensor,
)
from .quench import Direction, QuenchProtocol, _field, gibbs, propagator
from .tpm import TransitionTable

J_COUPLING_KHZ = 0.2151
ENSEMBLE_MEMBERS = 256
ENSEMBLE_PROPAGATOR_STEPS = 4096
DEFAULT_SAMPLES = 360
DEFAULT_RATE_KHZ = 17.9

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_ZZ_PATTERN = np.array([1.0, -1.0, -1.0, 1.0])
_ZSYS_PATTERN = np.array([1.0, -1.0, 1.0, -1.0])


@dataclass(frozen=True)
class NoiseModel:
    """Phenomenological imperfections of the pulse-sequence simulator."""

    gamma_f_per_ms: float = 0.0
    gamma_b_per_ms: float = 0.0
    rf_sigma: float = 0.0
    c_dephasing: float = 0.0

    def __post_init__(self) -> None:
        for name in ("gamma_f_per_ms", "gamma_b_per_ms", "rf_sigma", "c_dephasing"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"NoiseModel.{name} must be >= 0")
        if self.c_dephasing > 1.0:
            raise ValueError("NoiseModel.c_dephasing must lie in [0, 1]")

    def gamma_for(self, direction: Direction) -> float:
        return self.gamma_f_per_ms if direction is Direction.FORWARD else self.gamma_b_per_ms


NOISELESS = NoiseModel()


@dataclass(frozen=True)
class PulseElement:
    """One labeled step of the compiled sequence.

    kind is one of "pulse" (transverse rotation, rf-scaled), "zrot" (software
    frame shift, never scaled), "coupling" (zz free evolution with a duration)
    and "quench" (the embedded drive propagator).
    """

    label: str
    kind: str
    matrix: np.ndarray
    side: str | None = None
    axis: tuple[float, float, float] | None = None
    angle: float | None = None
    phase: complex = 1.0
    z_angle: float | None = None
    zz_angle: float | None = None
    duration_ms: float | None = None


@dataclass(frozen=True)
class GateSequence:
    elements: tuple[PulseElement, ...]
    protocol: QuenchProtocol
    u_ms: float
    s_angle: float  # Fig-2-style coupling angle 2*pi*nu1*u, metadata only


@dataclass(frozen=True)
class SeriesMeta:
    protocol: QuenchProtocol
    beta_per_khz: float
    noise: NoiseModel
    seed: int
    rate_khz: float


@dataclass(frozen=True)
class MagnetizationSeries:
    """Sampled complex readout over a uniform grid of conjugate times u (ms)."""

    u_ms: np.ndarray
    samples: np.ndarray
    meta: SeriesMeta | None = None

    def __post_init__(self) -> None:
        u = np.asarray(self.u_ms, dtype=float)
        s = np.asarray(self.samples, dtype=complex)
        object.__setattr__(self, "u_ms", u)
        object.__setattr__(self, "samples", s)
        if u.ndim != 1 or u.shape != s.shape or len(u) < 2:
            raise ValueError("series needs matching 1-d grids with >= 2 points")
        spacing = np.diff(u)
        if np.any(spacing <= 0.0):
            raise ValueError("u grid must be strictly ascending")
        if np.max(np.abs(spacing - spacing[0])) > 1e-12 * max(1.0, abs(spacing[0])):
            raise ValueError("u grid must be uniform")

    @property
    def rate_khz(self) -> float:
        return 1.0 / float(self.u_ms[1] - self.u_ms[0])


def _rotation_2x2(axis, angle: float, phase: complex) -> np.ndarray:
    ax, ay, az = axis
    half = 0.5 * angle
    return phase * pauli_exp(half * ax, half * ay, half * az)


def _embed(matrix2: np.ndarray, side: str) -> np.ndarray:
    if side == "ancilla":
        return tensor(matrix2, IDENTITY_2)
    return tensor(IDENTITY_2, matrix2)


def _pulse(label: str, side: str, axis, angle: float = math.pi, phase: complex = 1j) -> PulseElement:
    matrix = _embed(_rotation_2x2(axis, angle, phase), side)
    return PulseElement(label, "pulse", matrix, side=side, axis=tuple(axis), angle=angle, phase=phase)


HADAMARD_2 = _rotation_2x2((_INV_SQRT2, 0.0, _INV_SQRT2), math.pi, 1j)

_HAD_A = _pulse("ancilla_hadamard", "ancilla", (_INV_SQRT2, 0.0, _INV_SQRT2))
_K_SYS = _pulse("system_yz_hadamard", "system", (0.0, _INV_SQRT2, _INV_SQRT2))
_L_SYS = _pulse("system_xz_hadamard", "system", (_INV_SQRT2, 0.0, _INV_SQRT2))
_FLIP_A = _pulse("ancilla_pi_x", "ancilla", (1.0, 0.0, 0.0), phase=1.0)


def _zrot(delta: float) -> PulseElement:
    matrix = tensor(IDENTITY_2, np.diag(np.exp(-1j * delta * np.array([1.0, -1.0]))))
    return PulseElement("system_z_rotation", "zrot", matrix, z_angle=delta)


def _coupling(theta: float) -> PulseElement:
    matrix = np.diag(np.exp(-1j * theta * _ZZ_PATTERN))
    duration = theta / (2.0 * math.pi * J_COUPLING_KHZ)
    return PulseElement("zz_coupling", "coupling", matrix, zz_angle=theta, duration_ms=duration)


def _quench_element(p: QuenchProtocol) -> PulseElement:
    return PulseElement("quench_propagator", "quench", tensor(IDENTITY_2, propagator(p)))


def _endpoint_axes(p: QuenchProtocol):
    """((axis, signed coefficient) at t=0, same at t=tau); axis is 'x' or 'y'."""
    out = []
    for t in (0.0, p.tau_ms):
        hx, hy = _field(p, t)
        hx, hy = float(hx), float(hy)
        out.append(("x", hx) if abs(hx) > abs(hy) else ("y", hy))
    return out[0], out[1]


def conditional_gates(p: QuenchProtocol, u_ms: float) -> tuple[np.ndarray, np.ndarray]:
    """Ancilla-controlled phase gates around the quench.

    G1 applies exp(-i*2*pi*u*H(0)) on the system when the ancilla is |0>,
    G2 applies exp(-i*2*pi*u*H(tau)) when it is |1>.
    """
    p0, p1 = projector(KET_0), projector(np.array([0.0, 1.0], dtype=complex))
    gates = []
    for t, branch in ((0.0, p0), (p.tau_ms, p1)):
        hx, hy = _field(p, t)
        v = pauli_exp(2.0 * math.pi * u_ms * float(hx), 2.0 * math.pi * u_ms * float(hy), 0.0)
        other = p1 if branch is p0 else p0
        gates.append(tensor(branch, v) + tensor(other, IDENTITY_2))
    return gates[0], gates[1]


def _readout(rho_ancilla: np.ndarray) -> complex:
    z = float(np.real(rho_ancilla[..., 0, 0] - rho_ancilla[..., 1, 1]))
    y = float(-2.0 * np.imag(rho_ancilla[..., 0, 1]))
    return z + 1j * y


def run_abstract(p: QuenchProtocol, beta_per_khz: float, u_ms: float) -> complex:
    """Ideal circuit output, normalized to the characteristic function chi(u)."""
    g1, g2 = conditional_gates(p, u_ms)
    had = _HAD_A.matrix
    total = had @ g2 @ tensor(IDENTITY_2, propagator(p)) @ g1 @ had
    rho0 = tensor(projector(KET_0), gibbs(p, beta_per_khz))
    rho = total @ rho0 @ dagger(total)
    return _readout(partial_trace_system(rho))


def compile_pulse_sequence(p: QuenchProtocol, u_ms: float) -> GateSequence:
    """Pulse-level realization of the abstract circuit (equal up to global phase)."""
    if u_ms < 0.0:
        raise ValueError("u must be >= 0")
    (axis0, c0), (axis1, c1) = _endpoint_axes(p)
    elements: list[PulseElement] = [_HAD_A]
    elements += _conditional_block(axis0, 2.0 * math.pi * c0, u_ms, branch=0)
    elements.append(_quench_element(p))
    elements += _conditional_block(axis1, 2.0 * math.pi * c1, u_ms, branch=1)
    elements.append(_HAD_A)
    return GateSequence(tuple(elements), p, u_ms, 2.0 * math.pi * p.nu1_khz * u_ms)


def _conditional_block(axis: str, phi_rate: float, u_ms: float, branch: int) -> list[PulseElement]:
    """Controlled phase exp(-i*phi_rate*u*sigma_z) on the given ancilla branch.

    zz(phi/2) * Rz_S(phi/2) phases the |0> branch; flipping the coupling sign
    with an ancilla pi_x sandwich moves the phase to the |1> branch. Negative
    coupling angles are likewise realized by the sandwich so every emitted zz
    evolution has a non-negative duration. Whether the sandwich is present
    depends only on the sign of the angle *rate*: the pulse program is the
    same for every u, including the u = 0 point (duration-zero coupling with
    the flips still applied).
    """
    rot = _K_SYS if axis == "y" else _L_SYS
    theta_rate = 0.5 * phi_rate if branch == 0 else -0.5 * phi_rate
    inner: list[PulseElement] = [_zrot(0.5 * phi_rate * u_ms)]
    if theta_rate >= 0.0:
        inner.append(_coupling(theta_rate * u_ms))
    else:
        inner += [_FLIP_A, _coupling(-theta_rate * u_ms), _FLIP_A]
    return [rot, *inner, rot]


def sequence_unitary(seq: GateSequence) -> np.ndarray:
    """Total 4x4 unitary of a compiled sequence (application order)."""
    total = np.eye(4, dtype=complex)
    for elem in seq.elements:
        total = elem.matrix @ total
    return total


def abstract_unitary(p: QuenchProtocol, u_ms: float) -> np.ndarray:
    g1, g2 = conditional_gates(p, u_ms)
    had = _HAD_A.matrix
    return had @ g2 @ tensor(IDENTITY_2, propagator(p)) @ g1 @ had


@lru_cache(maxsize=512)
def _rf_scales(rf_sigma: float, seed: int) -> np.ndarray:
    """Static per-member drive-amplitude factors 1 + sigma*z, z ~ N(0,1)."""
    if rf_sigma == 0.0:
        scales = np.ones(1)
    else:
        rng = np.random.Generator(np.random.PCG64(seed))
        scales = 1.0 + rf_sigma * rng.standard_normal(ENSEMBLE_MEMBERS)
    scales.setflags(write=False)
    return scales


@lru_cache(maxsize=512)
def _member_propagators(p: QuenchProtocol, rf_sigma: float, seed: int) -> np.ndarray:
    """(members, 2, 2) quench propagators at the member drive scales."""
    if rf_sigma == 0.0:
        mats = propagator(p)[None]
    else:
        scales = _rf_scales(rf_sigma, seed)
        mats = np.stack([propagator(p, ENSEMBLE_PROPAGATOR_STEPS, s) for s in scales])
    mats.setflags(write=False)
    return mats


def ensemble_quench_channel(p: QuenchProtocol, rf_sigma: float = 0.0, seed: int = 0):
    """Quench evolution averaged over the rf-inhomogeneity ensemble, as a map."""
    mats = _member_propagators(p, rf_sigma, seed)
    mats_dag = mats.conj().transpose(0, 2, 1)

    def channel(rho: np.ndarray) -> np.ndarray:
        return np.mean(mats @ rho @ mats_dag, axis=0)

    return channel


def _pulse_matrices(elem: PulseElement, scales: np.ndarray) -> np.ndarray:
    """(members, 4, 4) embedded pulse matrices with scaled rotation angles."""
    ax, ay, az = elem.axis
    half = 0.5 * elem.angle * scales
    cos_h = np.cos(half)
    sin_h = np.sin(half)
    u = np.empty((len(scales), 2, 2), dtype=complex)
    u[:, 0, 0] = cos_h - 1j * sin_h * az
    u[:, 1, 1] = cos_h + 1j * sin_h * az
    u[:, 0, 1] = -1j * sin_h * (ax - 1j * ay)
    u[:, 1, 0] = -1j * sin_h * (ax + 1j * ay)
    u *= elem.phase
    out = np.zeros((len(scales), 4, 4), dtype=complex)
    if elem.side == "ancilla":
        out[:, :2, :2] = u[:, 0, 0, None, None] * IDENTITY_2
        out[:, :2, 2:] = u[:, 0, 1, None, None] * IDENTITY_2
        out[:, 2:, :2] = u[:, 1, 0, None, None] * IDENTITY_2
        out[:, 2:, 2:] = u[:, 1, 1, None, None] * IDENTITY_2
    else:
        out[:, :2, :2] = u
        out[:, 2:, 2:] = u
    return out


def _embed_system_stack(mats: np.ndarray) -> np.ndarray:
    out = np.zeros((mats.shape[0], 4, 4), dtype=complex)
    out[:, :2, :2] = mats
    out[:, 2:, 2:] = mats
    return out


def _dephasing_mask(c: float) -> np.ndarray:
    return (1.0 - 0.5 * c) + 0.5 * c * np.outer(_ZSYS_PATTERN, _ZSYS_PATTERN)


def run_pulse_sequence(
    seq: GateSequence, beta_per_khz: float, noise: NoiseModel = NOISELESS, rng_seed: int = 0
) -> complex:
    """Ensemble-averaged readout of a compiled sequence at one conjugate time.

    The rf-amplitude factors are drawn once per ensemble member from the seed,
    phase damping of strength c acts on the system after each coupling, and
    the decay envelope exp(-gamma*u) multiplies the averaged readout.
    """
    scales = _rf_scales(noise.rf_sigma, rng_seed)
    props = _member_propagators(seq.protocol, noise.rf_sigma, rng_seed)
    members = len(scales)
    rho = np.broadcast_to(
        tensor(projector(KET_0), gibbs(seq.protocol, beta_per_khz)), (members, 4, 4)
    ).copy()
    mask = _dephasing_mask(noise.c_dephasing)
    for elem in seq.elements:
        if elem.kind == "pulse":
            mats = _pulse_matrices(elem, scales)
        elif elem.kind == "quench":
            mats = _embed_system_stack(props)
        else:
            mats = elem.matrix[None]
        rho = mats @ rho @ mats.conj().transpose(0, 2, 1)
        if elem.kind == "coupling" and noise.c_dephasing > 0.0:
            rho = rho * mask
    rho_a = np.einsum("macbc->mab", rho.reshape(members, 2, 2, 2, 2))
    z = np.mean(np.real(rho_a[:, 0, 0] - rho_a[:, 1, 1]))
    y = np.mean(-2.0 * np.imag(rho_a[:, 0, 1]))
    decay = math.exp(-noise.gamma_for(seq.protocol.direction) * seq.u_ms)
    return decay * (z + 1j * y)


def _series_samples(
    p: QuenchProtocol, beta: float, noise: NoiseModel, seed: int, u_grid: np.ndarray
) -> np.ndarray:
    """Whole-grid evaluation of the compiled circuit, batched over (member, u).

    Equals run_pulse_sequence point by point; coupling and z-rotation angles
    are linear in u, so the template compiled at u = 1 provides the rates.
    """
    template = compile_pulse_sequence(p, 1.0)
    scales = _rf_scales(noise.rf_sigma, seed)
    props = _member_propagators(p, noise.rf_sigma, seed)
    members = len(scales)

    segments: list[tuple[str, np.ndarray | None]] = []
    pending: np.ndarray | None = None
    for elem in template.elements:
        if elem.kind == "pulse":
            mats = _pulse_matrices(elem, scales)
        elif elem.kind == "quench":
            mats = _embed_system_stack(props)
        else:
            rate = elem.zz_angle * _ZZ_PATTERN if elem.kind == "coupling" else elem.z_angle * _ZSYS_PATTERN
            if pending is not None:
                segments.append(("const", pending))
                pending = None
            segments.append(("diag", rate))
            if elem.kind == "coupling":
                segments.append(("dephase", None))
            continue
        pending = mats if pending is None else mats @ pending
    if pending is not None:
        segments.append(("const", pending))

    rho = tensor(projector(KET_0), gibbs(p, beta))[None, None, :, :]
    mask = _dephasing_mask(noise.c_dephasing)
    for kind, payload in segments:
        if kind == "const":
            mats = payload[:, None, :, :]
            rho = mats @ rho @ mats.conj().transpose(0, 1, 3, 2)
        elif kind == "diag":
            d = np.exp(-1j * np.outer(u_grid, payload))
            rho = rho * (d[:, :, None] * d.conj()[:, None, :])[None]
        elif noise.c_dephasing > 0.0:
            rho = rho * mask
    rho_a = np.einsum("mtacbc->mtab", rho.reshape(members, len(u_grid), 2, 2, 2, 2))
    z = np.mean(np.real(rho_a[:, :, 0, 0] - rho_a[:, :, 1, 1]), axis=0)
    y = np.mean(-2.0 * np.imag(rho_a[:, :, 0, 1]), axis=0)
    decay = np.exp(-noise.gamma_for(p.direction) * u_grid)
    return decay * (z + 1j * y)


def sample_series(
    p: QuenchProtocol,
    beta_per_khz: float,
    noise: NoiseModel = NOISELESS,
    n: int = DEFAULT_SAMPLES,
    rate_khz: float = DEFAULT_RATE_KHZ,
    seed: int = 0,
) -> MagnetizationSeries:
    """Readout sampled on the uniform grid u_k = k/rate, k = 0..n-1."""
    if n < 2:
        raise ValueError("need at least 2 samples")
    if rate_khz <= 0.0:
        raise ValueError("sampling rate must be > 0")
    u = np.arange(n) / rate_khz
    samples = _series_samples(p, beta_per_khz, noise, seed, u)
    meta = SeriesMeta(p, beta_per_khz, noise, seed, rate_khz)
    return MagnetizationSeries(u, samples, meta)


def magnetization_closed_form(
    t: TransitionTable, p: QuenchProtocol, u_ms, gamma_per_ms: float = 0.0
):
    """Closed-form ancilla magnetization: half the four-tone sum with decay.

    Independent check for the circuit simulators; the circuit's normalized
    readout equals twice this value.
    """
    u = np.asarray(u_ms, dtype=float)
    w = 2.0 * math.pi * u
    big = p.nu1_khz + p.nu2_khz
    small = p.nu1_khz - p.nu2_khz
    sign = 1.0 if p.direction is Direction.FORWARD else -1.0
    q_down = t.p0[1] * t.pcond[1, 0]
    q_stay1 = t.p0[1] * t.pcond[1, 1]
    q_stay0 = t.p0[0] * t.pcond[0, 0]
    q_up = t.p0[0] * t.pcond[0, 1]
    m = 0.5 * (
        q_down * np.exp(-1j * big * w)
        + q_stay1 * np.exp(-1j * sign * small * w)
        + q_stay0 * np.exp(1j * sign * small * w)
        + q_up * np.exp(1j * big * w)
    )
    m = m * np.exp(-gamma_per_ms * u)
    return complex(m) if m.ndim == 0 else m
