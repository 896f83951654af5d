"""Entanglement certification from fidelity and diagonal-block data.

Fidelity witness for the Schmidt number, pure-state concurrence, a
concurrence lower bound computable from populations and |jj>-|kk>
coherences, and the Renyi-2 route to an entanglement-of-formation bound.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .gates import TargetState
from .measure import CoherenceEstimate, StateEstimate


def max_concurrence(d: int) -> float:
    return float(np.sqrt(2 * (d - 1) / d))


def schmidt_threshold(target: TargetState, r: int) -> float:
    """Largest fidelity with ``target`` reachable by states of Schmidt rank r."""
    if not 0 <= r <= target.d:
        raise ValueError(f"r must lie in 0..{target.d}")
    lam2 = np.sort(target.lam ** 2)[::-1]
    return float(lam2[:r].sum())


def certify_schmidt_number(F: float, sigma: float, target: TargetState) -> tuple:
    """(certified at F, certified at F - sigma): the largest r with
    F > schmidt_threshold(target, r - 1), strict inequality with a 1e-12
    margin against rounding in the threshold."""
    if not 0 <= F <= 1 + 1e-12:
        raise ValueError("fidelity must lie in [0, 1]")

    def cert(f):
        r = 1
        for k in range(2, target.d + 1):
            if f > schmidt_threshold(target, k - 1) + 1e-12:
                r = k
        return r

    return cert(F), cert(F - abs(sigma))


def _schmidt(psi: np.ndarray, d: int) -> np.ndarray:
    return np.linalg.svd(np.asarray(psi, dtype=complex).reshape(d, d), compute_uv=False)


def concurrence_pure(psi: np.ndarray, d: int | None = None) -> float:
    """sqrt(2 (1 - Tr rho_A^2)) of a pure two-qudit state."""
    psi = np.asarray(psi, dtype=complex)
    if d is None:
        d = int(round(np.sqrt(psi.size)))
    if d * d != psi.size:
        raise ValueError("state is not a two-qudit vector")
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1) > 1e-8:
        raise ValueError("state must be normalized")
    s2 = _schmidt(psi, d) ** 2
    return float(np.sqrt(max(2 * (1 - np.sum(s2 ** 2)), 0.0)))


def entanglement_entropy(psi: np.ndarray, d: int) -> float:
    """von Neumann entropy of the reduced state, in bits."""
    s2 = _schmidt(psi, d) ** 2
    s2 = s2[s2 > 1e-15]
    return float(-np.sum(s2 * np.log2(s2)))


def _coh_value(c) -> float:
    return c.magnitude if isinstance(c, CoherenceEstimate) else float(c)


def concurrence_lower_bound(populations, coherences: Mapping, d: int) -> float:
    """sqrt(2/(d(d-1))) * 2 * sum_{j<k} (|rho_{jj,kk}| - sqrt(p_jk p_kj)), clamped at 0.

    ``populations`` is the d x d matrix of |jk> populations (or its flattened
    d^2 vector); ``coherences`` maps (j, k), j < k, to |rho_{jj,kk}|.
    """
    p = np.asarray(populations, dtype=float).reshape(d, d)
    if p.sum() > 1 + 1e-6 or np.any(p < -1e-9):
        raise ValueError("populations must be non-negative and sum to at most 1")
    p = np.clip(p, 0, None)
    tot = 0.0
    for j in range(d):
        for k in range(j + 1, d):
            if (j, k) not in coherences:
                raise ValueError(f"missing coherence ({j},{k})")
            tot += _coh_value(coherences[(j, k)]) - np.sqrt(p[j, k] * p[k, j])
    return float(max(0.0, np.sqrt(2 / (d * (d - 1))) * 2 * tot))


def _concurrence_bound_err(p, perr, coherences, d) -> float:
    k = np.sqrt(2 / (d * (d - 1))) * 2
    var = 0.0
    for j in range(d):
        for m in range(j + 1, d):
            c = coherences[(j, m)]
            if isinstance(c, CoherenceEstimate):
                var += (k * c.std) ** 2
            a, b = p[j, m], p[m, j]
            sa, sb = perr[j, m], perr[m, j]
            if a * b > 0:
                var += k ** 2 * (b * sa ** 2 + a * sb ** 2) / (4 * a * b)
            else:
                var += k ** 2 * sa * sb
    return float(np.sqrt(var))


def eof_lower_bound(C: float, d: int) -> float:
    """-log2(1 - C^2 / 2) bits."""
    cmax = max_concurrence(d)
    if C < 0 or C > cmax + 1e-9:
        raise ValueError(f"concurrence {C} outside [0, {cmax:.4f}]")
    return float(-np.log2(1 - min(C, cmax) ** 2 / 2))


def _eof_err(C: float, sigma: float) -> float:
    return float(C / ((1 - C ** 2 / 2) * np.log(2)) * sigma)


@dataclass(frozen=True)
class EntanglementReport:
    d: int
    fidelity: float
    fidelity_err: float
    schmidt_number_certified: int
    schmidt_number_certified_1sigma: int
    fidelity_threshold: float
    concurrence: float
    concurrence_err: float
    max_concurrence: float
    eof_lower_bound: float
    eof_err: float
    path: str
    pure: bool = False

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _report(target, F, Ferr, C, Cerr, path, pure=False, eof=None) -> EntanglementReport:
    d = target.d
    cmax = max_concurrence(d)
    C = float(min(max(C, 0.0), cmax))
    r, r1 = certify_schmidt_number(float(np.clip(F, 0, 1)), Ferr, target)
    e = eof_lower_bound(C, d) if eof is None else eof
    return EntanglementReport(d, float(F), float(Ferr), r, r1, schmidt_threshold(target, d - 1),
                              C, float(Cerr), cmax, float(e), _eof_err(C, Cerr), path, pure)


def report_from_summary(fidelity: float, fidelity_err: float, concurrence: float,
                        concurrence_err: float, target: TargetState) -> EntanglementReport:
    return _report(target, fidelity, fidelity_err, concurrence, concurrence_err, "summary")


def report_from_estimate(est: StateEstimate, target: TargetState) -> EntanglementReport:
    d = target.d
    if est.populations.shape != (d, d):
        raise ValueError("population matrix does not match target dimension")
    C = concurrence_lower_bound(est.populations, est.coherences, d)
    Cerr = _concurrence_bound_err(est.populations, est.population_err, est.coherences, d)
    return _report(target, est.fidelity.value, est.fidelity.std, C, Cerr, "measured")


def diagonal_data(rho: np.ndarray, d: int) -> tuple:
    """Exact populations (d x d) and |jj>-|kk> coherence magnitudes."""
    pops = np.real(np.diag(rho)).reshape(d, d)
    idx = [i * d + i for i in range(d)]
    coh = {(j, k): float(abs(rho[idx[j], idx[k]])) for j in range(d) for k in range(j + 1, d)}
    return pops, coh


def full_report(source, target: TargetState, local_phases: np.ndarray | None = None,
                ) -> EntanglementReport:
    """Report for an exact density matrix (or state vector) or a StateEstimate.

    On the exact path the fidelity is <psi_T|rho|psi_T> after an optional
    diagonal local-phase correction ``local_phases`` (a d^2 vector of phase
    factors applied as a diagonal unitary); pure inputs use the exact
    concurrence and entanglement entropy.
    """
    if isinstance(source, StateEstimate):
        return report_from_estimate(source, target)
    d = target.d
    a = np.asarray(source, dtype=complex)
    if a.ndim == 1:
        a = np.outer(a, a.conj())
    if a.shape != (d * d, d * d):
        raise ValueError(f"state dimension {a.shape} does not match target d={d}")
    if local_phases is not None:
        u = np.asarray(local_phases, dtype=complex)
        a = (u[:, None] * a) * u.conj()[None, :]
    psi_t = target.vector()
    F = float(np.real(np.vdot(psi_t, a @ psi_t)))
    purity = float(np.real(np.trace(a @ a)))
    if purity > 1 - 1e-10:
        w, v = np.linalg.eigh(a)
        psi = v[:, -1]
        C = concurrence_pure(psi, d)
        return _report(target, F, 0.0, C, 0.0, "exact", True, entanglement_entropy(psi, d))
    pops, coh = diagonal_data(a, d)
    C = concurrence_lower_bound(pops, coh, d)
    return _report(target, F, 0.0, C, 0.0, "exact")


def alignment_phases(psi_ref: np.ndarray, d: int) -> np.ndarray:
    """Diagonal phase factors (d^2 vector) that rotate ``psi_ref`` onto real,
    non-negative |jj> amplitudes; pass as ``local_phases`` to full_report."""
    from .gates import local_phase_correction
    return np.kron(np.ones(d), np.diag(local_phase_correction(psi_ref, d)))
