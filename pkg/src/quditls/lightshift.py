"""State-dependent optical-dipole force on the shared motional mode.

In the interaction frame of the mode the Hamiltonian is spin diagonal,

    H(t) = (i eta/2) sum_N sum_j Delta_{N,j} |j><j|_N e^{i phi_N} a^dag e^{-i delta t} + h.c.,

so each two-ion basis state |jk> sees a driven oscillator with complex force
F_jk = Delta_{0,j} e^{i phi_0} + Delta_{1,k} e^{i phi_1}.  The exact propagator
of that block is e^{i Phi(t)} D(alpha(t)) with

    alpha(t) = (eta F / (2 i delta)) (1 - e^{-i delta t})
    Phi(t)   = -(eta^2 |F|^2 / (4 delta^2)) (delta t - sin(delta t)).

The loop closes at |delta| t = 2 pi where Phi = -sign(delta) pi eta^2 |F|^2 / (2 delta^2).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .gates import cyclic_X, ideal_gate_G
from .hilbert import OscillatorSpace, create, destroy, displacement, phase_distance


class InfeasibleError(ValueError):
    """The requested gate cannot be realized with the given constraints."""


class ConvergenceError(RuntimeError):
    """The fixed-step integrator did not converge within the step budget."""


@dataclass(frozen=True)
class TrapConfig:
    omega_com: float = 2 * np.pi * 1.1e6
    omega_breathing: float | None = None
    ion_spacing_phase: float = np.pi

    def __post_init__(self):
        if self.omega_breathing is None:
            object.__setattr__(self, "omega_breathing", np.sqrt(3.0) * self.omega_com)


@dataclass(frozen=True)
class LightShiftParams:
    """Symbols of the force Hamiltonian.  ``shifts[N, j]`` is the light shift
    (rad/s) of level j on ion N; ``delta`` is the detuning from the mode."""
    delta: float
    eta: float
    shifts: np.ndarray
    t_g: float
    spatial_phase: tuple = (0.0, np.pi)
    mode: OscillatorSpace = field(default_factory=OscillatorSpace)

    def __post_init__(self):
        sh = np.array(self.shifts, dtype=float)
        if sh.ndim != 2 or sh.shape[0] != 2 or sh.shape[1] < 2:
            raise ValueError("shifts must have shape (2, d)")
        sh.setflags(write=False)
        object.__setattr__(self, "shifts", sh)
        object.__setattr__(self, "spatial_phase", tuple(float(x) for x in self.spatial_phase))
        if self.t_g < 0:
            raise ValueError("negative gate time")

    @classmethod
    def closed_loop(cls, delta: float, eta: float, shifts, spatial_phase=(0.0, np.pi),
                    mode: OscillatorSpace | None = None) -> "LightShiftParams":
        """Parameters with t_g = 2 pi / |delta| so every phase-space loop closes."""
        if delta == 0:
            raise InfeasibleError("no loop closure exists for delta = 0")
        return cls(delta, eta, shifts, 2 * np.pi / abs(delta), spatial_phase,
                   mode or OscillatorSpace())

    @property
    def d(self) -> int:
        return self.shifts.shape[1]

    def perturbed(self, rabi_scale: float = 1.0, delta_offset: float = 0.0) -> "LightShiftParams":
        """Same pulse duration with scaled light shifts and shifted detuning."""
        return replace(self, shifts=self.shifts * rabi_scale, delta=self.delta + delta_offset)

    def forces(self) -> np.ndarray:
        """d x d array of complex force sums F_jk."""
        p0, p1 = self.spatial_phase
        return (self.shifts[0][:, None] * np.exp(1j * p0)
                + self.shifts[1][None, :] * np.exp(1j * p1))

    def displacements(self, t: float) -> np.ndarray:
        f = self.eta * self.forces() / 2
        if self.delta == 0:
            return f * t
        return f * (1 - np.exp(-1j * self.delta * t)) / (1j * self.delta)

    def geometric_phases(self, t: float) -> np.ndarray:
        f2 = (self.eta * np.abs(self.forces()) / 2) ** 2
        if self.delta == 0:
            return np.zeros_like(f2)
        x = self.delta * t
        return -f2 * (x - np.sin(x)) / self.delta ** 2

    def per_pulse_phases(self) -> np.ndarray:
        return self.geometric_phases(self.t_g)


def complex_square_phase(p: LightShiftParams) -> np.ndarray:
    """pi eta^2 F^2 / (2 delta^2) with the force squared as a complex number;
    real-valued only for spacing phases that are multiples of pi/2."""
    return np.pi * p.eta ** 2 * p.forces() ** 2 / (2 * p.delta ** 2)


def ls_propagator_analytic(p: LightShiftParams, t: float | None = None) -> np.ndarray:
    """Spin (x) motion propagator, block diagonal in the spin basis.

    ``t=None`` means the closing time t_g and requires delta != 0.
    """
    if t is None:
        if p.delta == 0:
            raise InfeasibleError("loop closure requested but delta = 0")
        t = p.t_g
    if t < 0:
        raise ValueError("negative time")
    d, n = p.d, p.mode.dim
    alpha = p.displacements(t).ravel()
    phase = p.geometric_phases(t).ravel()
    out = np.zeros((d * d * n, d * d * n), dtype=complex)
    for a in range(d * d):
        blk = np.exp(1j * phase[a]) * displacement(alpha[a], n, leakage_threshold=None)
        out[a * n:(a + 1) * n, a * n:(a + 1) * n] = blk
    return out


def spin_part(u: np.ndarray, d: int, n_dim: int) -> np.ndarray:
    """Spin operator <vac| U |vac> restricted to the motional ground state."""
    idx = np.arange(d * d) * n_dim
    return u[np.ix_(idx, idx)]


def unleaked_columns(p: LightShiftParams, t: float | None = None,
                     threshold: float = 1e-10) -> np.ndarray:
    """Composite column indices whose image under the analytic propagator keeps
    less than ``threshold`` population in the top two Fock levels at every
    sampled time along the pulse (the loop can swing out further mid-pulse)."""
    t = p.t_g if t is None else t
    n = p.mode.dim
    worst = np.zeros(n)
    for s in np.linspace(0, t, 65)[1:]:
        for al in p.displacements(s).ravel():
            dm = displacement(al, n, leakage_threshold=None)
            worst = np.maximum(worst, np.sum(np.abs(dm[-2:, :]) ** 2, axis=0))
    good = np.flatnonzero(worst < threshold)
    return np.array([a * n + m for a in range(p.d * p.d) for m in good], dtype=int)


def _block_hamiltonians(p: LightShiftParams):
    """Coefficient c_a per spin state with H_a(t) = c_a e^{-i delta t} a^dag + h.c."""
    return (1j * p.eta * p.forces() / 2).ravel()


def _rk4_blocks(p: LightShiftParams, t: float, n_steps: int) -> np.ndarray:
    n = p.mode.dim
    a = destroy(n)
    ad = create(n)
    c = _block_hamiltonians(p)[:, None, None]
    u = np.broadcast_to(np.eye(n, dtype=complex), (c.shape[0], n, n)).copy()
    h = t / n_steps

    def rhs(s, v):
        e = np.exp(-1j * p.delta * s)
        ham = c * e * ad + np.conj(c) * np.conj(e) * a
        return -1j * ham @ v

    s = 0.0
    for _ in range(n_steps):
        k1 = rhs(s, u)
        k2 = rhs(s + h / 2, u + h / 2 * k1)
        k3 = rhs(s + h / 2, u + h / 2 * k2)
        k4 = rhs(s + h, u + h * k3)
        u = u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        s += h
    return u


def ls_propagator_numeric(p: LightShiftParams, t: float | None = None, n_steps: int = 256,
                          tol: float = 1e-8, max_doublings: int = 8) -> np.ndarray:
    """Direct fixed-step RK4 integration of each spin block; the step count is
    doubled until successive results agree to ``tol`` in max-norm."""
    if t is None:
        t = p.t_g
    if t == 0 or not np.any(p.shifts):
        return np.eye(p.d * p.d * p.mode.dim, dtype=complex)
    prev = _rk4_blocks(p, t, n_steps)
    for _ in range(max_doublings):
        n_steps *= 2
        cur = _rk4_blocks(p, t, n_steps)
        if np.max(np.abs(cur - prev)) < tol:
            break
        prev = cur
    else:
        raise ConvergenceError(f"RK4 did not converge to {tol} within {n_steps} steps")
    d, n = p.d, p.mode.dim
    out = np.zeros((d * d * n, d * d * n), dtype=complex)
    for i in range(d * d):
        out[i * n:(i + 1) * n, i * n:(i + 1) * n] = cur[i]
    return out


def trajectory_numeric(p: LightShiftParams, j: int, k: int, times: np.ndarray,
                       substeps: int = 32) -> np.ndarray:
    """<a>(t) for spin state |jk> from the motional ground state, integrated
    with RK4 through the ascending sample times."""
    n = p.mode.dim
    a = destroy(n)
    ad = create(n)
    c = (1j * p.eta * p.forces() / 2)[j, k]
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be ascending and non-negative")

    def rhs(s, v):
        e = np.exp(-1j * p.delta * s)
        return -1j * (c * e * (ad @ v) + np.conj(c * e) * (a @ v))

    psi = np.zeros(n, dtype=complex)
    psi[0] = 1.0
    s = 0.0
    out = []
    for tt in times:
        if tt > s:
            h = (tt - s) / substeps
            for _ in range(substeps):
                k1 = rhs(s, psi)
                k2 = rhs(s + h / 2, psi + h / 2 * k1)
                k3 = rhs(s + h / 2, psi + h / 2 * k2)
                k4 = rhs(s + h, psi + h * k3)
                psi = psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                s += h
            s = tt
        out.append(np.vdot(psi, a @ psi))
    return np.array(out)


def fit_circle(z: np.ndarray):
    """Algebraic least-squares circle through complex points; returns (center, radius)."""
    x, y = z.real, z.imag
    m = np.column_stack([x, y, np.ones_like(x)])
    rhs = x ** 2 + y ** 2
    sol, *_ = np.linalg.lstsq(m, rhs, rcond=None)
    cx, cy = sol[0] / 2, sol[1] / 2
    r = np.sqrt(sol[2] + cx ** 2 + cy ** 2)
    return complex(cx, cy), float(r)


def composed_gate(p: LightShiftParams, x: np.ndarray | None = None) -> np.ndarray:
    """(X (x) X (x) 1 . U_LS(t_g))^d on spin (x) motion."""
    d, n = p.d, p.mode.dim
    x = cyclic_X(d) if x is None else x
    step = np.kron(np.kron(x, x), np.eye(n)) @ ls_propagator_analytic(p)
    return np.linalg.matrix_power(step, d)


def composed_spin_gate(p: LightShiftParams) -> np.ndarray:
    """Spin-only form of the composed sequence, valid once the loops close."""
    d = p.d
    x = np.kron(cyclic_X(d), cyclic_X(d))
    u = np.diag(np.exp(1j * p.per_pulse_phases().ravel()))
    return np.linalg.matrix_power(x @ u, d)


def gate_error(p: LightShiftParams, theta: float) -> float:
    """Max-norm distance of the composed spin (x) motion gate from G(theta) (x) 1,
    minimized over global phase."""
    n = p.mode.dim
    target = np.kron(ideal_gate_G(p.d, theta), np.eye(n))
    return phase_distance(composed_gate(p), target)


# --- parameter solver ----------------------------------------------------

def relative_phase_per_shift2(delta: float, eta: float, spacing_phase: float) -> float:
    """Composed unequal-minus-equal phase per unit Delta^2 under the default
    illumination (only level 0 shifted, equally on both ions)."""
    return np.sign(delta) * np.cos(spacing_phase) * np.pi * eta ** 2 / delta ** 2


def solve_gate_params(d: int, theta: float, eta: float, *, fix_delta: float | None = None,
                      fix_shift: float | None = None, spacing_phase: float = np.pi,
                      mode: OscillatorSpace | None = None,
                      min_abs_delta: float = 0.0) -> LightShiftParams:
    """Closed-form light shift or detuning that imprints G(theta).

    Only level 0 is shifted, equally on both ions.  The sign of the detuning
    is chosen so the phase branch theta (not theta - 2 pi) is used, which
    keeps the required power minimal; ``fix_delta`` fixes its magnitude.
    """
    if not 0 < theta < 2 * np.pi:
        raise InfeasibleError("theta must lie in (0, 2 pi)")
    if (fix_delta is None) == (fix_shift is None):
        raise ValueError("fix exactly one of delta or shift")
    c = np.cos(spacing_phase)
    if abs(c) < 1e-9:
        raise InfeasibleError("differential drive vanishes at this ion spacing")
    mode = mode or OscillatorSpace()
    if fix_delta is not None:
        if fix_delta == 0:
            raise InfeasibleError("delta = 0 admits no loop closure")
        delta = np.sign(c) * abs(fix_delta)
        k = relative_phase_per_shift2(delta, eta, spacing_phase)
        shift = np.sqrt(theta / k)
    else:
        if fix_shift <= 0:
            raise InfeasibleError("shift must be positive")
        shift = float(fix_shift)
        delta = np.sign(c) * shift * eta * np.sqrt(np.pi * abs(c) / theta)
        if abs(delta) < min_abs_delta:
            raise InfeasibleError(
                f"light shift {shift:.3g} rad/s too small for theta={theta:.3g}: "
                f"required |delta|={abs(delta):.3g} < {min_abs_delta:.3g}")
    shifts = np.zeros((2, d))
    shifts[:, 0] = shift
    return LightShiftParams.closed_loop(delta, eta, shifts, (0.0, spacing_phase), mode)


def default_gate_params(d: int, theta: float, t_g: float = 35e-6, eta: float = 0.17,
                        n_max: int = 20) -> LightShiftParams:
    return solve_gate_params(d, theta, eta, fix_delta=2 * np.pi / t_g,
                             mode=OscillatorSpace(n_max))


# --- spacing calibration -------------------------------------------------

def spacing_scan(trap: TrapConfig, p: LightShiftParams, t: float, spin=(0, 0)):
    """Mean phonon numbers of the COM and breathing modes after a resonant
    force pulse of length t on the spin state ``spin``.

    Each mode is driven independently; the ions move in phase for COM and
    out of phase for breathing, giving drive sums Delta_0 e^{i phi_0} +/-
    Delta_1 e^{i phi_1}.  The spacing phase comes from ``trap``.
    """
    j, k = spin
    phi0 = p.spatial_phase[0]
    phi1 = phi0 + trap.ion_spacing_phase
    d0 = p.shifts[0, j] * np.exp(1j * phi0)
    d1 = p.shifts[1, k] * np.exp(1j * phi1)
    com = p.eta / 2 * (d0 + d1) * t
    br = p.eta / 2 * (d0 - d1) * t
    return float(abs(com) ** 2), float(abs(br) ** 2)
