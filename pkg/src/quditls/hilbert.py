"""Operator algebra for two qudits sharing one truncated motional mode.

Basis ordering is fixed: (ion 0 spin) x (ion 1 spin) x (motion), row-major.
The composite index of |j, k, n> is ``(j*d + k)*(n_max + 1) + n``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import Sequence

import numpy as np


class TruncationError(RuntimeError):
    """Raised when a state leaks too far into the top of the Fock space."""


@dataclass(frozen=True)
class QuditDims:
    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"qudit dimension must be an integer >= 2, got {self.d}")

    @property
    def spin_dim(self) -> int:
        return self.d * self.d


@dataclass(frozen=True)
class OscillatorSpace:
    n_max: int = 20
    mode_label: str = "COM"

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.mode_label not in ("COM", "breathing"):
            raise ValueError(f"unknown mode label {self.mode_label!r}")

    @property
    def dim(self) -> int:
        return self.n_max + 1


def composite_index(d: int, j: int, k: int, n: int, n_max: int) -> int:
    return (j * d + k) * (n_max + 1) + n


# --- elementary operators -------------------------------------------------

def destroy(dim: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def create(dim: int) -> np.ndarray:
    return destroy(dim).conj().T


def number(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim, dtype=float)).astype(complex)


def basis(dim: int, i: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[i] = 1.0
    return v


def tensor(*ops: np.ndarray) -> np.ndarray:
    """Kronecker product of operators or vectors, left factor most significant."""
    if not ops:
        raise ValueError("tensor needs at least one factor")
    return reduce(np.kron, ops)


def ket2dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def thermal_populations(nbar: float, dim: int) -> np.ndarray:
    """Bose-Einstein populations truncated to ``dim`` levels and renormalized."""
    if nbar < 0:
        raise ValueError("mean occupation must be non-negative")
    if nbar == 0:
        p = np.zeros(dim)
        p[0] = 1.0
        return p
    q = nbar / (1.0 + nbar)
    p = q ** np.arange(dim)
    return p / p.sum()


def thermal_state(nbar: float, space: OscillatorSpace) -> np.ndarray:
    return np.diag(thermal_populations(nbar, space.dim)).astype(complex)


# --- displacement ---------------------------------------------------------

@lru_cache(maxsize=64)
def _quadrature_eig(dim: int):
    # a^dag - a is anti-Hermitian; i(a^dag - a) is Hermitian and diagonalized once.
    a = destroy(dim)
    herm = 1j * (a.conj().T - a)
    w, v = np.linalg.eigh(herm)
    w.setflags(write=False)
    v.setflags(write=False)
    return w, v


def displacement(alpha: complex, space: OscillatorSpace | int,
                 leakage_threshold: float | None = 1e-6) -> np.ndarray:
    """Truncated displacement operator exp(alpha a^dag - alpha* a).

    Computed as R(arg) exp(|alpha| (a^dag - a)) R(arg)^dag with a cached
    eigendecomposition, so it is exactly unitary in the truncated space.
    """
    dim = space.dim if isinstance(space, OscillatorSpace) else int(space)
    alpha = complex(alpha)
    if alpha == 0:
        return np.eye(dim, dtype=complex)
    r, ang = abs(alpha), np.angle(alpha)
    w, v = _quadrature_eig(dim)
    # exp(r (a^dag - a)) = exp(-i r H) with H = i(a^dag - a)
    core = (v * np.exp(-1j * r * w)) @ v.conj().T
    rot = np.exp(1j * ang * np.arange(dim))
    op = rot[:, None] * core * rot.conj()[None, :]
    if leakage_threshold is not None:
        col = op[:, 0]
        leak = float(np.sum(np.abs(col[-2:]) ** 2))
        if leak > leakage_threshold:
            raise TruncationError(
                f"displacement |alpha|={r:.3g} leaks {leak:.2e} into the top Fock levels "
                f"(dim={dim}); increase n_max")
    return op


def fock_leakage(rho_motion: np.ndarray, levels: int = 2) -> float:
    """Population in the top ``levels`` Fock states of a motional state."""
    rho_motion = np.asarray(rho_motion)
    if rho_motion.ndim == 1:
        return float(np.sum(np.abs(rho_motion[-levels:]) ** 2))
    return float(np.real(np.trace(rho_motion[-levels:, -levels:])))


# --- partial trace and validation ----------------------------------------

def partial_trace(rho: np.ndarray, dims: Sequence[int], keep: Sequence[int]) -> np.ndarray:
    """Reduced density matrix on the subsystems listed in ``keep``.

    ``dims`` lists subsystem dimensions in basis order.
    """
    dims = [int(x) for x in dims]
    keep = sorted(set(int(k) for k in keep))
    n = len(dims)
    for k in keep:
        if k < 0 or k >= n:
            raise IndexError(f"subsystem index {k} out of range for {n} subsystems")
    rho = np.asarray(rho)
    total = int(np.prod(dims))
    if rho.shape != (total, total):
        raise ValueError(f"matrix shape {rho.shape} does not match dims {dims}")
    t = rho.reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    # trace out from the highest index so axis numbers stay valid
    current = n
    for i in sorted(traced, reverse=True):
        t = np.trace(t, axis1=i, axis2=i + current)
        current -= 1
    kd = int(np.prod([dims[i] for i in keep])) if keep else 1
    return t.reshape(kd, kd)


def check_density_matrix(rho: np.ndarray, herm_tol: float = 1e-10, trace_tol: float = 1e-9,
                         eig_floor: float = -1e-8) -> None:
    """Raise ValueError if ``rho`` violates Hermiticity, trace or positivity bounds."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError("density matrix must be square")
    h = np.max(np.abs(rho - rho.conj().T))
    if h > herm_tol:
        raise ValueError(f"density matrix not Hermitian (deviation {h:.2e})")
    tr = np.trace(rho).real
    if abs(tr - 1) > trace_tol:
        raise ValueError(f"density matrix trace {tr!r} != 1")
    ev = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if ev.min() < eig_floor:
        raise ValueError(f"density matrix has negative eigenvalue {ev.min():.2e}")


def check_state_vector(psi: np.ndarray, tol: float = 1e-10) -> None:
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1) > tol:
        raise ValueError(f"state vector norm {nrm!r} != 1")


# --- global-phase-insensitive comparison ---------------------------------

def strip_global_phase(a: np.ndarray) -> np.ndarray:
    """Rotate ``a`` so its largest-magnitude entry is real and positive."""
    a = np.asarray(a, dtype=complex)
    flat = a.ravel()
    i = int(np.argmax(np.abs(flat)))
    if flat[i] == 0:
        return a.copy()
    return a * (abs(flat[i]) / flat[i])


def phase_distance(a: np.ndarray, b: np.ndarray) -> float:
    """min over global phase c of max|a - c b|, using the optimal overlap phase."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    ov = np.vdot(b.ravel(), a.ravel())
    c = ov / abs(ov) if abs(ov) > 0 else 1.0
    return float(np.max(np.abs(a - c * b)))


def equal_up_to_global_phase(a, b, atol: float = 1e-9) -> bool:
    return phase_distance(a, b) <= atol


def unitarity_error(u: np.ndarray) -> float:
    u = np.asarray(u)
    return float(np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))))
