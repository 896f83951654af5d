"""Ideal pulse algebra: local rotations, cyclic permutations, state
preparation, the diagonal entangling gate and its target states."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .hilbert import phase_distance


# --- pulse types ----------------------------------------------------------

@dataclass(frozen=True)
class LocalRotation:
    """Resonant rotation on the |j> <-> |k> transition of one or both ions."""
    levels: tuple
    angle: float
    phase: float = 0.0
    ion: Union[int, str] = "both"
    duration: float = 0.0

    def __post_init__(self):
        j, k = self.levels
        if j == k:
            raise ValueError("rotation needs two distinct levels")
        if self.ion not in (0, 1, "both"):
            raise ValueError(f"ion must be 0, 1 or 'both', got {self.ion!r}")
        if self.duration < 0:
            raise ValueError("negative pulse duration")

    def single_ion(self, d: int) -> np.ndarray:
        return local_rotation(d, self.levels[0], self.levels[1], self.angle, self.phase)

    def operator(self, d: int) -> np.ndarray:
        u = self.single_ion(d)
        eye = np.eye(d, dtype=complex)
        if self.ion == "both":
            return np.kron(u, u)
        return np.kron(u, eye) if self.ion == 0 else np.kron(eye, u)

    def inverse(self) -> "LocalRotation":
        return LocalRotation(self.levels, self.angle, self.phase + np.pi, self.ion, self.duration)


@dataclass(frozen=True)
class LightShiftPulse:
    """Placeholder for one state-dependent-force pulse; its propagator comes
    from the light-shift model."""
    duration: float = 0.0
    label: str = "LS"


Pulse = Union[LocalRotation, LightShiftPulse]


@dataclass(frozen=True)
class PulseSequence:
    pulses: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))

    def __add__(self, other: "PulseSequence") -> "PulseSequence":
        return PulseSequence(self.pulses + tuple(other.pulses))

    def __mul__(self, n: int) -> "PulseSequence":
        return PulseSequence(self.pulses * int(n))

    def __len__(self):
        return len(self.pulses)

    def __iter__(self):
        return iter(self.pulses)

    @property
    def total_duration(self) -> float:
        return float(sum(p.duration for p in self.pulses))

    @property
    def n_local(self) -> int:
        return sum(isinstance(p, LocalRotation) for p in self.pulses)

    @property
    def n_lightshift(self) -> int:
        return sum(isinstance(p, LightShiftPulse) for p in self.pulses)

    def inverse(self) -> "PulseSequence":
        out = []
        for p in reversed(self.pulses):
            if isinstance(p, LightShiftPulse):
                raise ValueError("cannot invert a sequence containing light-shift pulses")
            out.append(p.inverse())
        return PulseSequence(out)

    def with_pi_time(self, t_pi: float) -> "PulseSequence":
        """Assign durations to local pulses in proportion to their rotation angle."""
        out = []
        for p in self.pulses:
            if isinstance(p, LocalRotation):
                p = LocalRotation(p.levels, p.angle, p.phase, p.ion, abs(p.angle) / np.pi * t_pi)
            out.append(p)
        return PulseSequence(out)

    def unitary(self, d: int, ls_unitary: np.ndarray | None = None) -> np.ndarray:
        """Spin-space product of the pulses in time order (first pulse acts first)."""
        u = np.eye(d * d, dtype=complex)
        for p in self.pulses:
            if isinstance(p, LocalRotation):
                u = p.operator(d) @ u
            else:
                if ls_unitary is None:
                    raise ValueError("sequence contains light-shift pulses; pass ls_unitary")
                u = ls_unitary @ u
        return u


# --- rotations ------------------------------------------------------------

def _check_levels(d: int, j: int, k: int) -> None:
    if not (0 <= j < d and 0 <= k < d) or j == k:
        raise ValueError(f"invalid transition levels ({j}, {k}) for d={d}")


def transition_generator(d: int, j: int, k: int, phi: float) -> np.ndarray:
    """cos(phi) sigma_x + sin(phi) sigma_y embedded on levels (j, k)."""
    _check_levels(d, j, k)
    s = np.zeros((d, d), dtype=complex)
    s[j, k] = np.exp(-1j * phi)
    s[k, j] = np.exp(1j * phi)
    return s


def local_rotation(d: int, j: int, k: int, angle: float, phi: float) -> np.ndarray:
    """Single-ion exp(-i angle/2 sigma_phi^{jk}); identity outside {j, k}."""
    s = transition_generator(d, j, k, phi)
    # sigma^2 is the projector onto span{j, k}, which gives a closed form
    proj = np.zeros((d, d))
    proj[j, j] = proj[k, k] = 1.0
    c, sn = np.cos(angle / 2), np.sin(angle / 2)
    return np.eye(d, dtype=complex) + (c - 1) * proj - 1j * sn * s


def rotation_R(d: int, j: int, k: int, angle: float, phi: float) -> np.ndarray:
    """The same rotation applied to both ions (generators commute, so it factorizes)."""
    u = local_rotation(d, j, k, angle, phi)
    return np.kron(u, u)


def cyclic_X(d: int) -> np.ndarray:
    """Permutation |j> -> |j+1 mod d>."""
    if d < 2:
        raise ValueError("d must be >= 2")
    x = np.zeros((d, d), dtype=complex)
    for j in range(d):
        x[(j + 1) % d, j] = 1.0
    return x


def cyclic_X_as_pulses(d: int, t_pi: float = 0.0) -> PulseSequence:
    """pi-pulses on 0<->1, 0<->2, ..., 0<->d-1 applied on both ions in that
    order; for d > 2 the first pulse carries a pi phase offset."""
    if d < 2:
        raise ValueError("d must be >= 2")
    pulses = []
    for j in range(1, d):
        phase = np.pi if (j == 1 and d > 2) else 0.0
        pulses.append(LocalRotation((0, j), np.pi, phase, "both", t_pi))
    return PulseSequence(pulses)


def preparation_angles(d: int) -> np.ndarray:
    j = np.arange(1, d)
    return 2 * np.arcsin(1 / np.sqrt(j + 1))


def preparation_pulses(d: int, t_pi: float = 0.0) -> PulseSequence:
    """Rotations R^{0,j}(angle_j, 0) in time order: j = d-1 first, j = 1 last."""
    ang = preparation_angles(d)
    pulses = [LocalRotation((0, j), ang[j - 1], 0.0, "both", ang[j - 1] / np.pi * t_pi)
              for j in range(d - 1, 0, -1)]
    return PulseSequence(pulses)


def preparation_P(d: int) -> np.ndarray:
    """Product R^{0,1} R^{0,2} ... R^{0,d-1}; maps |00> to a uniform superposition."""
    ang = preparation_angles(d)
    u = np.eye(d * d, dtype=complex)
    for j in range(1, d):
        u = u @ rotation_R(d, 0, j, ang[j - 1], 0.0)
    return u


def ideal_gate_G(d: int, theta: float) -> np.ndarray:
    """Diagonal gate: phase 0 on |jj>, e^{i theta} on |jk>, j != k."""
    g = np.full((d, d), np.exp(1j * theta))
    np.fill_diagonal(g, 1.0)
    return np.diag(g.ravel())


def two_ion(op1: np.ndarray, op2: np.ndarray | None = None) -> np.ndarray:
    return np.kron(op1, op1 if op2 is None else op2)


# --- phase bookkeeping of the symmetrized sequence -----------------------

def phase_orbit(d: int, j: int, k: int) -> list:
    """Index pairs whose per-pulse phases add up on |jk> after d cycles."""
    return [((j + m) % d, (k + m) % d) for m in range(d)]


def symmetrized_phases(phi: np.ndarray) -> np.ndarray:
    """Composed phases of (X_d (x) X_d * diag(e^{i phi}))^d for a d x d phase table."""
    phi = np.asarray(phi, dtype=float)
    d = phi.shape[0]
    out = np.zeros_like(phi)
    for m in range(d):
        out += np.roll(np.roll(phi, -m, axis=0), -m, axis=1)
    return out


def composed_cycle(d: int, u_diag: np.ndarray, x: np.ndarray | None = None) -> np.ndarray:
    """(X (x) X . U)^d with U given as a d^2 x d^2 matrix."""
    x = cyclic_X(d) if x is None else x
    step = np.kron(x, x) @ u_diag
    return np.linalg.matrix_power(step, d)


# --- targets --------------------------------------------------------------

@dataclass(frozen=True)
class TargetState:
    d: int
    lambdas: tuple

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        if lam.shape != (self.d,):
            raise ValueError("need one Schmidt coefficient per level")
        if np.any(lam < 0) or np.any(np.diff(lam) > 1e-15):
            raise ValueError("Schmidt coefficients must be non-negative and descending")
        if abs(np.sum(lam ** 2) - 1) > 1e-12:
            raise ValueError("Schmidt coefficients must be normalized")
        object.__setattr__(self, "lambdas", tuple(float(x) for x in lam))

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.lambdas)

    def vector(self) -> np.ndarray:
        v = np.zeros(self.d * self.d, dtype=complex)
        for i, l in enumerate(self.lambdas):
            v[i * self.d + i] = l
        return v


def target_state(d: int) -> TargetState:
    if not 2 <= d <= 5:
        raise ValueError("target states are defined for 2 <= d <= 5")
    if d == 5:
        return TargetState(5, (0.6, 0.4, 0.4, 0.4, 0.4))
    return TargetState(d, tuple([1 / np.sqrt(d)] * d))


def maximally_entangled(d: int) -> np.ndarray:
    return TargetState(d, tuple([1 / np.sqrt(d)] * d)).vector()


def local_phase_fidelity(psi: np.ndarray, target: TargetState) -> float:
    """Fidelity to sum_i lambda_i |ii> maximized over local diagonal phases."""
    d = target.d
    amp = np.abs(np.asarray(psi).reshape(d, d).diagonal())
    return float(np.dot(target.lam, amp) ** 2)


def local_phase_correction(psi: np.ndarray, d: int) -> np.ndarray:
    """Diagonal single-ion unitary on ion 1 that makes every |jj> amplitude of
    ``psi`` real and non-negative."""
    diag = np.asarray(psi).reshape(d, d).diagonal()
    ph = np.where(np.abs(diag) > 0, np.exp(-1j * np.angle(diag)), 1.0)
    return np.diag(ph)


def gate_output(d: int, theta: float, n: int = 1) -> np.ndarray:
    """P^dag G(theta)^n P |00> as a d^2 vector."""
    p = preparation_P(d)
    psi0 = np.zeros(d * d, dtype=complex)
    psi0[0] = 1.0
    g = np.diag(ideal_gate_G(d, theta).diagonal() ** n)
    return p.conj().T @ (g @ (p @ psi0))


@dataclass(frozen=True)
class PhaseTarget:
    theta: float
    fidelity: float
    state: np.ndarray = field(repr=False, compare=False)
    target: TargetState = None


def _polish_maximum(f, x0: float, half_width: float = 1e-4, eps: float = 1e-6) -> float:
    """Refine a maximum of ``f`` by locating the root of its central-difference
    derivative; returns ``x0`` if no sign change is bracketed."""
    def g(x):
        return f(x + eps) - f(x - eps)
    a, b = x0 - half_width, x0 + half_width
    ga, gb = g(a), g(b)
    if not (ga > 0 > gb):
        return x0
    return float(brentq(g, a, b, xtol=1e-15, rtol=1e-15))


def entangling_phase_target(d: int, n_grid: int = 720) -> PhaseTarget:
    """Smallest theta in (0, 2 pi) maximizing the local-phase fidelity of the
    single-gate output to the target state.

    Grid scan, golden-section refinement, then a derivative-root polish.  When
    the output reaches the target without any local phase correction, the
    polish uses the plain overlap, whose maximum is quadratic rather than
    flat, so the returned angle is accurate to ~1e-10.
    """
    tgt = target_state(d)
    tvec = tgt.vector()

    def lp_fid(th):
        return local_phase_fidelity(gate_output(d, th), tgt)

    def plain_fid(th):
        return abs(np.vdot(tvec, gate_output(d, th))) ** 2

    grid = np.linspace(0, 2 * np.pi, n_grid, endpoint=False)[1:]
    vals = np.array([1.0 - lp_fid(t) for t in grid])
    best = vals.min()
    # first grid point tied with the best value gives the smallest maximizer
    i = int(np.flatnonzero(vals <= best + 1e-12)[0])
    h = grid[1] - grid[0]
    lo, hi = grid[i] - h, grid[i] + h
    try:
        res = minimize_scalar(lambda t: 1.0 - lp_fid(t), bracket=(lo, grid[i], hi),
                              method="golden", options={"xtol": 1e-12})
        theta = float(res.x)
    except ValueError:
        theta = float(grid[i])
    if not lo <= theta <= hi or 1.0 - lp_fid(theta) > vals[i]:
        theta = float(grid[i])
    if plain_fid(theta) > 1 - 1e-4:
        theta = _polish_maximum(plain_fid, theta, half_width=h)
    else:
        theta = _polish_maximum(lp_fid, theta, half_width=h)
    state = gate_output(d, theta)
    return PhaseTarget(theta, lp_fid(theta), state, tgt)


def gate_phases_equivalent(a: np.ndarray, b: np.ndarray, atol: float = 1e-9) -> bool:
    return phase_distance(a, b) <= atol
