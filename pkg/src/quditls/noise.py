"""Error model: motional Lindblad terms, quasi-static parameter offsets,
fast per-pulse Rabi noise and Monte Carlo averaging over realizations.

Sampling semantics
------------------
* slow sources (gate Rabi, gate detuning, local Rabi, Rabi imbalance, local
  frequency) are drawn once per realization and held for the whole sequence
  P -> n gates -> P^dag;
* the fast local Rabi noise is redrawn for every local pulse from a stream
  that is independent of the slow draws;
* heating and motional dephasing act as Lindblad terms throughout.
Standard-normal draws are always taken in the same order, whatever the
magnitudes, so runs with scaled noise are paired sample by sample.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .gates import (LightShiftPulse, LocalRotation, PulseSequence, cyclic_X_as_pulses,
                    local_rotation, preparation_pulses)
from .hilbert import (OscillatorSpace, TruncationError, create, destroy, displacement, number,
                      thermal_populations)
from .lightshift import LightShiftParams

TWO_PI = 2 * np.pi

# Zeeman coefficient g_S m_S - g_D m_D of S_{1/2}(m=-1/2) -> D_{5/2}(m), in Bohr magnetons
G_S, G_D = 2.00226, 1.20033
DEFAULT_D_SUBLEVELS = (-0.5, -1.5, 0.5, -2.5)


def zeeman_coefficients(d_sublevels: Sequence[float] = DEFAULT_D_SUBLEVELS,
                        ground_m: float = -0.5) -> np.ndarray:
    return np.array([G_S * ground_m - G_D * m for m in d_sublevels])


def default_transition_sensitivity(d_sublevels: Sequence[float] = DEFAULT_D_SUBLEVELS) -> tuple:
    """Per-level scale factors (level 0 first, fixed to 0), proportional to the
    Zeeman shift of each 0 <-> j transition with the most sensitive set to 1."""
    z = zeeman_coefficients(d_sublevels)
    return (0.0,) + tuple(float(x) for x in z / np.max(np.abs(z)))


class IntegrationError(RuntimeError):
    pass


# --- configuration --------------------------------------------------------

SOURCES = (
    ("heating", "Motional heating rate"),
    ("motional_coherence", "Motional coherence"),
    ("mode_occupation", "Motional mode occupation"),
    ("gate_rabi", "Gate Rabi frequency"),
    ("slow_local_rabi", "Slow local Rabi frequency"),
    ("fast_local_rabi", "Fast local Rabi frequency"),
    ("local_rabi_imbalance", "Local Rabi imbalance"),
    ("gate_freq_noise", "Gate laser frequency noise"),
    ("local_freq_noise", "Local operation frequency noise"),
)

_SOURCE_FIELD = {
    "heating": "heating_rate",
    "motional_coherence": "motional_coherence",
    "mode_occupation": "initial_nbar",
    "gate_rabi": "gate_rabi_frac",
    "slow_local_rabi": "slow_local_rabi_frac",
    "fast_local_rabi": "fast_local_rabi_frac",
    "local_rabi_imbalance": "local_rabi_imbalance_frac",
    "gate_freq_noise": "gate_freq_noise",
    "local_freq_noise": "local_freq_noise",
}
_STOCHASTIC = ("gate_rabi", "slow_local_rabi", "fast_local_rabi", "local_rabi_imbalance",
               "gate_freq_noise", "local_freq_noise")


@dataclass(frozen=True)
class NoiseConfig:
    """Noise magnitudes; rates in 1/s, frequencies in rad/s, fractions as std.

    ``motional_coherence`` is a time (s); ``inf`` switches dephasing off.
    """
    heating_rate: float = 15.0
    motional_coherence: float = 16e-3
    initial_nbar: float = 0.1
    gate_rabi_frac: float = 0.01
    slow_local_rabi_frac: float = 0.006
    fast_local_rabi_frac: float = 0.007
    local_rabi_imbalance_frac: float = 0.01
    gate_freq_noise: float = TWO_PI * 200
    local_freq_noise: float = TWO_PI * 19
    transition_sensitivity: tuple = field(default_factory=default_transition_sensitivity)
    n_samples: int = 100
    rng_seed: int = 20240501
    local_pi_time: float = 10e-6
    leakage_threshold: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "transition_sensitivity",
                           tuple(float(x) for x in self.transition_sensitivity))
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ValueError(f"{f.name} must be non-negative, got {v}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.motional_coherence == 0:
            raise ValueError("motional_coherence must be positive (use inf to disable)")

    @classmethod
    def quiet(cls, **kw) -> "NoiseConfig":
        """Every source switched off."""
        base = dict(heating_rate=0.0, motional_coherence=np.inf, initial_nbar=0.0,
                    gate_rabi_frac=0.0, slow_local_rabi_frac=0.0, fast_local_rabi_frac=0.0,
                    local_rabi_imbalance_frac=0.0, gate_freq_noise=0.0, local_freq_noise=0.0)
        base.update(kw)
        return cls(**base)

    def only(self, *sources: str) -> "NoiseConfig":
        """Copy with every source except ``sources`` switched off."""
        keep = {}
        for s in sources:
            if s not in _SOURCE_FIELD:
                raise KeyError(f"unknown noise source {s!r}")
            keep[_SOURCE_FIELD[s]] = getattr(self, _SOURCE_FIELD[s])
        q = NoiseConfig.quiet()
        return replace(self, **{_SOURCE_FIELD[s]: getattr(q, _SOURCE_FIELD[s])
                                for s in _SOURCE_FIELD if s not in sources}, **keep)

    def scaled(self, s: float) -> "NoiseConfig":
        """Every std and rate multiplied by ``s`` (coherence time divided by ``s``)."""
        kw = {n: getattr(self, n) * s for n in _SOURCE_FIELD.values() if n != "motional_coherence"}
        kw["motional_coherence"] = np.inf if s == 0 else self.motional_coherence / s
        return replace(self, **kw)

    @property
    def dephasing_rate(self) -> float:
        """Rate kappa of the collapse operator sqrt(kappa) a^dag a."""
        return 0.0 if np.isinf(self.motional_coherence) else 2.0 / self.motional_coherence

    @property
    def dissipative(self) -> bool:
        return self.heating_rate > 0 or self.dephasing_rate > 0

    @property
    def stochastic(self) -> bool:
        return any(getattr(self, _SOURCE_FIELD[s]) > 0 for s in _STOCHASTIC)

    def active_sources(self) -> list:
        q = NoiseConfig.quiet()
        return [s for s, f in _SOURCE_FIELD.items() if getattr(self, f) != getattr(q, f)]

    def sensitivity(self, d: int) -> np.ndarray:
        s = np.asarray(self.transition_sensitivity, dtype=float)
        if s.size < d:
            raise ValueError(f"transition_sensitivity has {s.size} entries, need {d}")
        return s[:d]


# --- realizations ---------------------------------------------------------

@dataclass(frozen=True)
class StaticOffsets:
    gate_rabi: float = 0.0
    gate_detuning: float = 0.0
    local_rabi: float = 0.0
    imbalance: float = 0.0
    local_detuning: np.ndarray = field(default_factory=lambda: np.zeros(2))
    fast_std: float = 0.0
    fast_entropy: int = 0

    def fast_stream(self, key: int = 0) -> np.random.Generator:
        """Independent generator for per-pulse Rabi draws; ``key`` separates
        the main sequence from the decoding pulses of each snapshot."""
        return np.random.default_rng(np.random.SeedSequence(self.fast_entropy, spawn_key=(key,)))

    @property
    def is_zero(self) -> bool:
        return (self.gate_rabi == 0 and self.gate_detuning == 0 and self.local_rabi == 0
                and self.imbalance == 0 and not np.any(self.local_detuning) and self.fast_std == 0)


def _as_generator(rng_state) -> np.random.Generator:
    if isinstance(rng_state, np.random.Generator):
        return rng_state
    if isinstance(rng_state, np.random.SeedSequence):
        return np.random.default_rng(rng_state)
    return np.random.default_rng(rng_state)


def sample_noise_realization(cfg: NoiseConfig, d: int, rng_state) -> StaticOffsets:
    """One draw of every slow parameter plus a seed for the fast stream."""
    rng = _as_generator(rng_state)
    z = rng.standard_normal(5)
    fast_entropy = int(rng.integers(0, 2 ** 63 - 1))
    det = z[4] * cfg.local_freq_noise * cfg.sensitivity(d)
    return StaticOffsets(
        gate_rabi=float(z[0] * cfg.gate_rabi_frac),
        gate_detuning=float(z[1] * cfg.gate_freq_noise),
        local_rabi=float(z[2] * cfg.slow_local_rabi_frac),
        imbalance=float(z[3] * cfg.local_rabi_imbalance_frac),
        local_detuning=det,
        fast_std=float(cfg.fast_local_rabi_frac),
        fast_entropy=fast_entropy,
    )


def realization_seeds(cfg: NoiseConfig) -> list:
    return np.random.SeedSequence(cfg.rng_seed).spawn(cfg.n_samples)


# --- generic Lindblad integration ----------------------------------------

def heating_collapse_ops(rate: float, dim: int) -> list:
    """sqrt(rate) a and sqrt(rate) a^dag; with equal weights d<n>/dt = rate."""
    if rate <= 0:
        return []
    a = destroy(dim)
    return [np.sqrt(rate) * a, np.sqrt(rate) * a.conj().T]


def dephasing_collapse_op(tau: float, dim: int) -> list:
    """sqrt(2/tau) a^dag a; Fock coherences |n><m| decay as exp(-(n-m)^2 t/tau)."""
    if np.isinf(tau):
        return []
    return [np.sqrt(2.0 / tau) * number(dim)]


def embed_motion(op: np.ndarray, spin_dim: int) -> np.ndarray:
    return np.kron(np.eye(spin_dim), op)


def lindblad_rhs(rho: np.ndarray, h: np.ndarray, collapse: Sequence[np.ndarray]) -> np.ndarray:
    out = -1j * (h @ rho - rho @ h)
    for c in collapse:
        cd = c.conj().T
        cdc = cd @ c
        out += c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)
    return out


def lindblad_evolve(rho: np.ndarray, H, collapse: Sequence[np.ndarray], t: float,
                    rtol: float = 1e-10, atol: float = 1e-12) -> np.ndarray:
    """Integrate the master equation for time ``t``.

    ``H`` is a matrix or a callable ``H(s)``.  Uses an adaptive 8th-order
    Runge-Kutta scheme; raises IntegrationError on failure.
    """
    rho = np.asarray(rho, dtype=complex)
    n = rho.shape[0]
    if t == 0:
        return rho.copy()
    collapse = [np.asarray(c, dtype=complex) for c in collapse]
    hfun = H if callable(H) else (lambda s, _h=np.asarray(H, dtype=complex): _h)

    def f(s, y):
        return lindblad_rhs(y.reshape(n, n), hfun(s), collapse).ravel()

    sol = solve_ivp(f, (0.0, t), rho.ravel(), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(sol.message)
    out = sol.y[:, -1].reshape(n, n)
    return 0.5 * (out + out.conj().T)


@lru_cache(maxsize=128)
def _idle_superop(dim: int, heating: float, kappa: float, t: float) -> np.ndarray:
    """exp(L t) of the motion-only Lindbladian, acting on row-major vec(rho)."""
    a = destroy(dim)
    eye = np.eye(dim)
    ops = heating_collapse_ops(heating, dim)
    if kappa > 0:
        ops.append(np.sqrt(kappa) * number(dim))
    gen = np.zeros((dim * dim, dim * dim), dtype=complex)
    for c in ops:
        cd = c.conj().T
        cdc = cd @ c
        # row-major vec: vec(A X B) = (A kron B^T) vec(X)
        gen += np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T)
    out = expm(gen * t)
    out.setflags(write=False)
    return out


# --- ladder-operator helpers on stacks of matrices ------------------------

class _Ladder:
    def __init__(self, dim: int):
        self.dim = dim
        self.sq = np.sqrt(np.arange(dim, dtype=float))
        self.n = np.arange(dim, dtype=float)

    def a_left(self, r):
        out = np.zeros_like(r)
        out[..., :-1, :] = self.sq[1:, None] * r[..., 1:, :]
        return out

    def ad_left(self, r):
        out = np.zeros_like(r)
        out[..., 1:, :] = self.sq[1:, None] * r[..., :-1, :]
        return out

    def a_right(self, r):
        out = np.zeros_like(r)
        out[..., :, 1:] = r[..., :, :-1] * self.sq[None, 1:]
        return out

    def ad_right(self, r):
        out = np.zeros_like(r)
        out[..., :, :-1] = r[..., :, 1:] * self.sq[None, 1:]
        return out

    def a_rho_ad(self, r):
        out = np.zeros_like(r)
        out[..., :-1, :-1] = (self.sq[1:, None] * self.sq[None, 1:]) * r[..., 1:, 1:]
        return out

    def ad_rho_a(self, r):
        out = np.zeros_like(r)
        out[..., 1:, 1:] = (self.sq[1:, None] * self.sq[None, 1:]) * r[..., :-1, :-1]
        return out


def displaced_frame_rhs(rho: np.ndarray, alpha: np.ndarray, heating: float, kappa: float,
                        lad: _Ladder) -> np.ndarray:
    """Dissipator in the frame displaced by alpha_a on spin block a.

    ``rho`` has shape (D, D, N, N); ``alpha`` has shape (D,).
    """
    out = np.zeros_like(rho)
    al = alpha[:, None, None, None]
    be = alpha[None, :, None, None]
    n_l = lad.n[:, None]
    n_r = lad.n[None, :]
    if heating > 0:
        da = al - be
        h = (lad.a_rho_ad(rho) + lad.ad_rho_a(rho) - (n_l + n_r + 1) * rho
             - np.conj(da) * (lad.a_left(rho) - lad.a_right(rho))
             - da * (lad.ad_left(rho) - lad.ad_right(rho))
             - np.abs(da) ** 2 * rho)
        out += heating * h
    if kappa > 0:
        absdiff = np.abs(al) ** 2 - np.abs(be) ** 2

        def comm(x):
            # L_a x - x L_b with L = n + alpha a^dag + alpha* a + |alpha|^2
            return ((n_l - n_r + absdiff) * x
                    + al * lad.ad_left(x) + np.conj(al) * lad.a_left(x)
                    - be * lad.ad_right(x) - np.conj(be) * lad.a_right(x))

        out += -0.5 * kappa * comm(comm(rho))
    return out


# --- the gate simulator ---------------------------------------------------

@dataclass
class SimulationResult:
    states: list
    ideal_states: list
    fidelities: np.ndarray
    peak_leakage: float
    n_realizations: int

    @property
    def gate_counts(self) -> np.ndarray:
        return np.arange(len(self.states))


def _single_ion_pulse(d: int, levels, angle: float, phase: float, detuning: np.ndarray,
                      duration: float) -> np.ndarray:
    j, k = levels
    if duration == 0 or not np.any(detuning):
        return local_rotation(d, j, k, angle, phase)
    h = np.diag(detuning * duration).astype(complex)
    h[j, k] += angle / 2 * np.exp(-1j * phase)
    h[k, j] += angle / 2 * np.exp(1j * phase)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w)) @ v.conj().T


class GateSimulator:
    """Time-ordered simulation of P -> (X_d U_LS)^{d n} -> P^dag for one or many
    noise realizations.

    Pure-state propagation is used when there is no motional dissipation (a
    thermal start becomes an incoherent mixture of Fock states); otherwise the
    state is a spin-blocked density matrix and each force pulse is integrated
    in the frame displaced by the realization's own coherent trajectory.
    """

    def __init__(self, d: int, params: LightShiftParams, cfg: NoiseConfig,
                 n_max: int | None = None, ls_steps: int = 12):
        if params.d != d:
            raise ValueError("parameter dimension does not match d")
        self.d = d
        self.p = params
        self.cfg = cfg
        self.dim = (params.mode.n_max if n_max is None else int(n_max)) + 1
        self.ls_steps = int(ls_steps)
        t_pi = cfg.local_pi_time
        self.prep = preparation_pulses(d, t_pi)
        self.unprep = self.prep.inverse()
        self.cycle = cyclic_X_as_pulses(d, t_pi)
        self.lad = _Ladder(self.dim)
        self.kappa = cfg.dephasing_rate
        self.heating = cfg.heating_rate
        self.dissipative = cfg.dissipative
        pops = thermal_populations(cfg.initial_nbar, self.dim)
        keep = np.flatnonzero(pops > 1e-12)
        self.fock = keep
        self.weights = pops[keep] / pops[keep].sum()
        self.init_pops = pops

    # pulse trains ------------------------------------------------------
    def _train(self, pulses: Iterable, off: StaticOffsets, rng: np.random.Generator):
        d = self.d
        u0 = np.eye(d, dtype=complex)
        u1 = np.eye(d, dtype=complex)
        total = 0.0
        for p in pulses:
            fast = rng.standard_normal() * off.fast_std
            r = (1 + off.local_rabi) * (1 + fast)
            ang0 = p.angle * r * (1 + off.imbalance / 2)
            ang1 = p.angle * r * (1 - off.imbalance / 2)
            if p.ion in ("both", 0):
                u0 = _single_ion_pulse(d, p.levels, ang0, p.phase, off.local_detuning, p.duration) @ u0
            elif np.any(off.local_detuning):
                u0 = np.diag(np.exp(-1j * off.local_detuning * p.duration)) @ u0
            if p.ion in ("both", 1):
                u1 = _single_ion_pulse(d, p.levels, ang1, p.phase, off.local_detuning, p.duration) @ u1
            elif np.any(off.local_detuning):
                u1 = np.diag(np.exp(-1j * off.local_detuning * p.duration)) @ u1
            total += p.duration
        return u0, u1, total

    # state representations --------------------------------------------
    def _initial(self):
        d, n = self.d, self.dim
        if self.dissipative:
            rho = np.zeros((d, d, d, d, n, n), dtype=complex)
            rho[0, 0, 0, 0] = np.diag(self.init_pops)
            return rho
        psi = np.zeros((len(self.fock), d, d, n), dtype=complex)
        for i, m in enumerate(self.fock):
            psi[i, 0, 0, m] = 1.0
        return psi

    def _apply_spin(self, state, u0, u1):
        if self.dissipative:
            s = np.tensordot(u0, state, axes=(1, 0))
            s = np.moveaxis(np.tensordot(u1, s, axes=(1, 1)), 0, 1)
            s = np.moveaxis(np.tensordot(s, u0.conj(), axes=(2, 1)), -1, 2)
            s = np.moveaxis(np.tensordot(s, u1.conj(), axes=(3, 1)), -1, 3)
            return s
        s = np.einsum("ab,kbcn->kacn", u0, state)
        return np.einsum("ab,kcbn->kcan", u1, s)

    def _idle(self, state, t: float):
        if not self.dissipative or t == 0:
            return state
        n = self.dim
        sup = _idle_superop(n, float(self.heating), float(self.kappa), float(t))
        flat = state.reshape(-1, n * n) @ sup.T
        return flat.reshape(state.shape)

    def _ls(self, state, off: StaticOffsets):
        d, n = self.d, self.dim
        p = self.p.perturbed(1 + off.gate_rabi, off.gate_detuning)
        t = self.p.t_g
        eps = off.local_detuning
        free = -(eps[:, None] + eps[None, :]) * t
        phase = (p.geometric_phases(t) + free).ravel()
        alpha_end = p.displacements(t).ravel()
        moving = np.max(np.abs(alpha_end)) > 1e-13
        dmats = None
        if moving:
            dmats = np.stack([displacement(a, n, leakage_threshold=None) for a in alpha_end])
        if not self.dissipative:
            s = state.reshape(state.shape[0], d * d, n) * np.exp(1j * phase)[None, :, None]
            if moving:
                s = np.einsum("amn,kan->kam", dmats, s)
            return s.reshape(state.shape)
        rho = state.reshape(d * d, d * d, n, n)
        rho = self._integrate_displaced(rho, p, t)
        ph = np.exp(1j * phase)
        rho = rho * (ph[:, None] * ph.conj()[None, :])[:, :, None, None]
        if moving:
            rho = np.matmul(dmats[:, None], rho)
            rho = np.matmul(rho, dmats.conj().transpose(0, 2, 1)[None, :])
        return rho.reshape(state.shape)

    def _integrate_displaced(self, rho, p: LightShiftParams, t: float):
        delta = p.delta
        u = (p.eta * p.forces() / 2).ravel()
        if delta == 0:
            def alpha(s):
                return u * s
        else:
            def alpha(s):
                return u * (1 - np.exp(-1j * delta * s)) / (1j * delta)
        steps = self.ls_steps
        h = t / steps
        s = 0.0
        lad, g, k = self.lad, self.heating, self.kappa
        for _ in range(steps):
            a0, am, a1 = alpha(s), alpha(s + h / 2), alpha(s + h)
            k1 = displaced_frame_rhs(rho, a0, g, k, lad)
            k2 = displaced_frame_rhs(rho + h / 2 * k1, am, g, k, lad)
            k3 = displaced_frame_rhs(rho + h / 2 * k2, am, g, k, lad)
            k4 = displaced_frame_rhs(rho + h * k3, a1, g, k, lad)
            rho = rho + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            s += h
        return rho

    def _spin_state(self, state) -> np.ndarray:
        dd = self.d * self.d
        if self.dissipative:
            r = state.reshape(dd, dd, self.dim, self.dim)
            return np.einsum("abnn->ab", r)
        s = state.reshape(state.shape[0], dd, self.dim)
        return np.einsum("k,kan,kbn->ab", self.weights, s, s.conj())

    def _leakage(self, state) -> float:
        dd = self.d * self.d
        if self.dissipative:
            r = state.reshape(dd, dd, self.dim, self.dim)
            diag = np.einsum("aann->n", r).real
            return float(diag[-2:].sum())
        s = state.reshape(state.shape[0], dd, self.dim)
        pop = np.einsum("k,kan->n", self.weights, np.abs(s) ** 2)
        return float(pop[-2:].sum())

    # one realization ---------------------------------------------------
    def run(self, off: StaticOffsets, n_gates: int):
        """Spin density matrices after decoding for n = 0..n_gates, and the
        peak motional leakage."""
        main = off.fast_stream(0)
        state = self._initial()
        u0, u1, tt = self._train(self.prep.pulses, off, main)
        state = self._idle(self._apply_spin(state, u0, u1), tt)
        out = []
        leak = self._leakage(state)

        def snapshot(st, n):
            v0, v1, t2 = self._train(self.unprep.pulses, off, off.fast_stream(n + 1))
            s2 = self._idle(self._apply_spin(st, v0, v1), t2)
            return self._spin_state(s2)

        out.append(snapshot(state, 0))
        for g in range(n_gates):
            for _ in range(self.d):
                state = self._ls(state, off)
                u0, u1, tt = self._train(self.cycle.pulses, off, main)
                state = self._idle(self._apply_spin(state, u0, u1), tt)
            leak = max(leak, self._leakage(state))
            out.append(snapshot(state, g + 1))
        return out, leak


def ideal_sequence_states(d: int, params: LightShiftParams, n_gates: int,
                          t_pi: float = 0.0) -> list:
    """Noise-free decoded spin states (pure vectors) for n = 0..n_gates."""
    cfg = NoiseConfig.quiet(local_pi_time=t_pi, n_samples=1)
    sim = GateSimulator(d, params, cfg, n_max=1)
    states, _ = sim.run(StaticOffsets(local_detuning=np.zeros(d)), n_gates)
    out = []
    for rho in states:
        w, v = np.linalg.eigh(rho)
        out.append(v[:, -1])
    return out


def _run_chunk(args):
    d, p, cfg, n_gates, n_max, ls_steps, seeds = args
    sim = GateSimulator(d, p, cfg, n_max=n_max, ls_steps=ls_steps)
    acc = None
    peak = 0.0
    for ss in seeds:
        states, leak = sim.run(sample_noise_realization(cfg, d, ss), n_gates)
        peak = max(peak, leak)
        if acc is None:
            acc = [s.copy() for s in states]
        else:
            for x, s in zip(acc, states):
                x += s
    return acc, peak


def simulate_noisy_gate(d: int, p: LightShiftParams, cfg: NoiseConfig, n_gates: int,
                        n_max: int | None = None, ls_steps: int = 12,
                        workers: int = 1) -> SimulationResult:
    """Sample-averaged decoded spin states for n = 0..n_gates gate applications.

    A configuration without stochastic sources is run once.  With
    ``workers > 1`` realizations are split into contiguous chunks run in
    separate processes; chunk sums are reduced in a fixed order, so results
    do not depend on scheduling beyond floating-point summation order, which
    is itself fixed by the chunking.  Raises TruncationError if the peak
    motional leakage exceeds the configured threshold.
    """
    if n_gates < 0:
        raise ValueError("n_gates must be >= 0")
    seeds = realization_seeds(cfg if cfg.stochastic else replace(cfg, n_samples=1))
    if workers > 1 and len(seeds) > 1:
        from concurrent.futures import ProcessPoolExecutor
        chunks = [c for c in np.array_split(np.arange(len(seeds)), workers) if len(c)]
        jobs = [(d, p, cfg, n_gates, n_max, ls_steps, [seeds[i] for i in c]) for c in chunks]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk((d, p, cfg, n_gates, n_max, ls_steps, seeds))]
    acc = [sum(x) for x in zip(*[pt[0] for pt in parts])]
    peak = max(pt[1] for pt in parts)
    states = [a / len(seeds) for a in acc]
    if peak > cfg.leakage_threshold:
        raise TruncationError(f"peak Fock leakage {peak:.2e} exceeds {cfg.leakage_threshold:.1e}")
    ideal = ideal_sequence_states(d, p, n_gates, cfg.local_pi_time)
    fid = np.array([np.real(np.vdot(v, r @ v)) for v, r in zip(ideal, states)])
    return SimulationResult(states, ideal, fid, peak, len(seeds))


def entangled_gate_counts(d: int, theta: float, n_gates: int = 9) -> list:
    """Gate counts n in 1..n_gates whose ideal output is entangled."""
    from .gates import gate_output
    out = []
    for n in range(1, n_gates + 1):
        s = np.linalg.svd(gate_output(d, theta, n).reshape(d, d), compute_uv=False)
        if s[1] > 1e-6:
            out.append(n)
    return out


def per_gate_infidelity(fidelities: np.ndarray, counts: Sequence[int]) -> float:
    """1 - f from the exponential decay fit over the listed gate counts."""
    from .measure import decay_fit
    fit = decay_fit(np.asarray(fidelities)[list(counts)], list(counts))
    return float(1.0 - fit.f)


# --- analytic rows --------------------------------------------------------

@dataclass(frozen=True)
class AnalyticErrorParams:
    """Scattering is scaled from a qubit reference by LS exposure, i.e. the
    sum over force pulses of duration x light shift x mean ground-state
    population; D decay is the D-population-weighted sequence time over the
    lifetime.  ``reference_exposure=None`` uses the default qubit gate."""
    qubit_scattering_error: float = 1.6e-4
    d_state_lifetime: float = 1.0
    reference_exposure: float | None = None

    def __post_init__(self):
        if self.qubit_scattering_error < 0 or self.d_state_lifetime < 0:
            raise ValueError("analytic error parameters must be non-negative")


def gate_pulse_sequence(d: int, params: LightShiftParams, t_pi: float) -> PulseSequence:
    """One application of G: d repetitions of (force pulse, X_d pulses)."""
    ls = LightShiftPulse(params.t_g, "LS")
    cycle = cyclic_X_as_pulses(d, t_pi)
    return PulseSequence((ls,) + cycle.pulses) * d


def _population_exposure(d: int, seq: PulseSequence, shift: float, samples: int = 17):
    """Time integrals of the D population (both ions) and of light shift x
    ground population (mean over ions) along the ideal sequence, starting from
    the uniform superposition."""
    from .gates import preparation_P
    psi = preparation_P(d)[:, 0]
    d_time = 0.0
    exposure = 0.0

    def pops(v):
        p = np.abs(v.reshape(d, d)) ** 2
        return p.sum(axis=1), p.sum(axis=0)

    for pulse in seq:
        if isinstance(pulse, LightShiftPulse):
            a, b = pops(psi)
            d_time += pulse.duration * ((1 - a[0]) + (1 - b[0]))
            exposure += pulse.duration * shift * 0.5 * (a[0] + b[0])
            continue
        if pulse.duration == 0:
            psi = pulse.operator(d) @ psi
            continue
        vals = []
        for x in np.linspace(0, 1, samples):
            part = LocalRotation(pulse.levels, pulse.angle * x, pulse.phase, pulse.ion)
            a, b = pops(part.operator(d) @ psi)
            vals.append((1 - a[0]) + (1 - b[0]))
        # Simpson rule over the pulse
        w = np.ones(samples)
        w[1:-1:2] = 4
        w[2:-1:2] = 2
        d_time += pulse.duration * np.dot(w, vals) / (3 * (samples - 1))
        psi = pulse.operator(d) @ psi
    return d_time, exposure


def _reference_exposure() -> float:
    from .lightshift import default_gate_params
    p = default_gate_params(2, np.pi / 2)
    seq = gate_pulse_sequence(2, p, 0.0)
    return _population_exposure(2, seq, p.shifts[0, 0])[1]


def analytic_error_budget(d: int, params: AnalyticErrorParams, seq: PulseSequence,
                          shift: float | None = None) -> tuple:
    """(scattering_error, d_decay_error) for one gate described by ``seq``.

    ``shift`` is the ground-state light shift during force pulses (rad/s);
    without it the qubit reference shift is assumed.
    """
    ref = params.reference_exposure
    if ref is None:
        ref = _reference_exposure()
    if shift is None:
        from .lightshift import default_gate_params
        shift = default_gate_params(2, np.pi / 2).shifts[0, 0]
    d_time, exposure = _population_exposure(d, seq, shift)
    scat = params.qubit_scattering_error * exposure / ref if ref > 0 else 0.0
    if params.d_state_lifetime == 0 or np.isinf(params.d_state_lifetime):
        dec = 0.0
    else:
        dec = d_time / params.d_state_lifetime
    return float(scat), float(dec)


# --- budget table ---------------------------------------------------------

@dataclass
class BudgetTable:
    dims: tuple
    rows: dict            # source key -> {d: infidelity}
    labels: dict          # source key -> printable name
    row_sum: dict         # d -> sum of all rows
    joint: dict | None = None   # d -> jointly simulated per-gate infidelity

    def as_records(self) -> list:
        out = []
        for key, vals in self.rows.items():
            out.append({"source": key, "label": self.labels[key],
                        **{f"d{d}": vals[d] for d in self.dims}})
        out.append({"source": "total", "label": "Total",
                    **{f"d{d}": self.row_sum[d] for d in self.dims}})
        if self.joint is not None:
            out.append({"source": "joint_total", "label": "Total (joint simulation)",
                        **{f"d{d}": self.joint[d] for d in self.dims}})
        return out


ANALYTIC_LABELS = {"scattering": "Elastic & inelastic scattering",
                   "d_decay": "D state decay"}


def gate_setup(d: int, gate_time: float = 35e-6, eta: float = 0.17, n_max: int = 20):
    """Optimal phase and solved force parameters for dimension d."""
    from .gates import entangling_phase_target
    from .lightshift import default_gate_params
    theta = entangling_phase_target(d).theta
    return theta, default_gate_params(d, theta, t_g=gate_time, eta=eta, n_max=n_max)


def error_budget_table(cfg: NoiseConfig, dims: Sequence[int] = (2, 3, 4, 5), *,
                       n_gates: int = 9, analytic: AnalyticErrorParams | None = None,
                       gate_time: float = 35e-6, eta: float = 0.17, n_max: int = 20,
                       sources: Sequence[str] | None = None, joint: bool = False,
                       joint_n_max: int | None = None, workers: int = 1,
                       progress=None) -> BudgetTable:
    """Per-source infidelities, each from one source switched on at a time and
    extracted with the decay fit; scattering and D decay are analytic.  Rows
    for sources that are off in ``cfg`` are reported as 0.  The total is the
    row sum; ``joint`` adds a run with every source on."""
    analytic = analytic or AnalyticErrorParams()
    keys = [s for s, _ in SOURCES] if sources is None else list(sources)
    labels = dict(SOURCES)
    labels.update(ANALYTIC_LABELS)
    rows = {k: {} for k in keys}
    rows.update({k: {} for k in ANALYTIC_LABELS})
    joint_vals = {} if joint else None
    active = set(cfg.active_sources())
    for d in dims:
        theta, p = gate_setup(d, gate_time, eta, n_max)
        counts = entangled_gate_counts(d, theta, n_gates)
        for k in keys:
            if k not in active:
                rows[k][d] = 0.0
                continue
            res = simulate_noisy_gate(d, p, cfg.only(k), n_gates, workers=workers)
            rows[k][d] = per_gate_infidelity(res.fidelities, counts)
            if progress:
                progress(d, k, rows[k][d])
        seq = gate_pulse_sequence(d, p, cfg.local_pi_time)
        scat, dec = analytic_error_budget(d, analytic, seq, shift=p.shifts[0, 0])
        rows["scattering"][d] = scat
        rows["d_decay"][d] = dec
        if joint:
            res = simulate_noisy_gate(d, p, cfg, n_gates, n_max=joint_n_max, workers=workers)
            joint_vals[d] = per_gate_infidelity(res.fidelities, counts) + scat + dec
    row_sum = {d: float(sum(rows[k][d] for k in rows)) for d in dims}
    return BudgetTable(tuple(dims), rows, {k: labels[k] for k in rows}, row_sum, joint_vals)
