"""Simulated readout and estimation: bright/dark detection, transfer and
analysis pulses, parity scans, grid-Bayesian coherence estimation, the
magnitude-based fidelity estimator and the exponential decay fit.

Readout is ideal: an ion is bright iff it is in level 0.  Passing
``shots=None`` to any readout returns exact Born probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .gates import LocalRotation, PulseSequence, TargetState, gate_output

OUTCOMES = ("bb", "bd", "db", "dd")


class IncompleteDataError(ValueError):
    """Not enough measurement data for the requested estimate."""


@dataclass(frozen=True)
class ShotRecord:
    """Two-ion bright/dark outcomes of one measurement setting.

    ``counts`` follows OUTCOMES; with ``shots = inf`` it holds probabilities.
    """
    label: str
    counts: np.ndarray
    shots: float
    levels: tuple | None = None
    phase: float | None = None

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        if c.shape != (4,):
            raise ValueError("counts must have one entry per outcome")
        if np.isinf(self.shots):
            if abs(c.sum() - 1) > 1e-9:
                raise ValueError("exact record probabilities must sum to 1")
        elif abs(c.sum() - self.shots) > 0 or np.any(c != np.round(c)):
            raise ValueError("counts must be integers summing to shots")
        object.__setattr__(self, "counts", c)

    @property
    def exact(self) -> bool:
        return bool(np.isinf(self.shots))

    @property
    def even(self) -> float:
        """Number (or probability) of even-parity outcomes."""
        return float(self.counts[0] + self.counts[3])


# --- pulses ---------------------------------------------------------------

def _check_level(d: int | None, j: int) -> None:
    if j < 1 or (d is not None and j > d - 1):
        raise ValueError(f"level {j} outside 1..d-1")


def transfer_T(j: int, d: int | None = None, ion="both") -> PulseSequence:
    """Resonant pi pulse on 0 <-> j."""
    _check_level(d, j)
    return PulseSequence([LocalRotation((0, j), np.pi, 0.0, ion)])


def analysis_A(j: int, phi: float, d: int | None = None, ion="both") -> PulseSequence:
    """Resonant pi/2 pulse on 0 <-> j with phase phi."""
    _check_level(d, j)
    return PulseSequence([LocalRotation((0, j), np.pi / 2, float(phi), ion)])


def _apply(rho: np.ndarray, seq: PulseSequence, d: int) -> np.ndarray:
    if len(seq) == 0:
        return rho
    u = seq.unitary(d)
    return u @ rho @ u.conj().T


# --- readout --------------------------------------------------------------

def _dims(rho: np.ndarray) -> int:
    n = rho.shape[0]
    d = int(round(np.sqrt(n)))
    if d * d != n:
        raise ValueError("expected a two-qudit spin density matrix")
    return d


def outcome_probabilities(rho: np.ndarray) -> np.ndarray:
    d = _dims(rho)
    p = np.clip(np.real(np.diag(rho)), 0, None).reshape(d, d)
    bb = p[0, 0]
    bd = p[0, 1:].sum()
    db = p[1:, 0].sum()
    dd = p[1:, 1:].sum()
    out = np.array([bb, bd, db, dd])
    return out / out.sum()


def _sample(probs: np.ndarray, shots, rng) -> tuple:
    if shots is None or np.isinf(shots):
        return probs.copy(), np.inf
    shots = int(shots)
    if shots < 1:
        raise ValueError("shots must be >= 1")
    return rng.multinomial(shots, probs).astype(float), shots


def readout_population(rho: np.ndarray, shots: int | None, rng=None,
                       label: str = "population") -> ShotRecord:
    """Projective bright/dark readout of both ions."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    counts, n = _sample(outcome_probabilities(rho), shots, rng)
    return ShotRecord(label, counts, n)


def population_scan(rho: np.ndarray, shots: int | None, rng=None) -> dict:
    """Readouts with level j of ion 0 and level k of ion 1 moved to 0, for all
    (j, k); the bright-bright fraction estimates the population of |jk>."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    d = _dims(rho)
    out = {}
    for j in range(d):
        for k in range(d):
            seq = PulseSequence()
            if j:
                seq = seq + transfer_T(j, d, ion=0)
            if k:
                seq = seq + transfer_T(k, d, ion=1)
            out[(j, k)] = readout_population(_apply(rho, seq, d), shots, rng, f"pop({j},{k})")
    return out


def populations_from_scan(scan: Mapping) -> tuple:
    """(population matrix, standard errors) from a population scan."""
    d = int(round(np.sqrt(len(scan))))
    p = np.zeros((d, d))
    err = np.zeros((d, d))
    for (j, k), rec in scan.items():
        if rec.exact:
            p[j, k] = rec.counts[0]
        else:
            f = rec.counts[0] / rec.shots
            p[j, k] = f
            # Laplace-smoothed binomial error so zero counts keep a finite width
            g = (rec.counts[0] + 1) / (rec.shots + 2)
            err[j, k] = np.sqrt(g * (1 - g) / rec.shots)
    # settings are sampled independently; renormalize the matrix
    tot = p.sum()
    if tot > 0:
        p, err = p / tot, err / tot
    return p, err


def parity_chain(d: int, j: int, k: int, phi: float) -> PulseSequence:
    """Pulses that map the |jj>, |kk> coherence onto a parity fringe."""
    if not 0 <= j < k < d:
        raise ValueError("need 0 <= j < k < d")
    if j == 0:
        return analysis_A(k, phi, d)
    return transfer_T(k, d) + analysis_A(j, phi, d)


def parity_scan(rho: np.ndarray, j: int, k: int, phases: Sequence[float],
                shots: int | None, rng=None) -> list:
    """Readouts after the transfer + analysis chain for each phase.

    P_even(phi) = (1 + b + c cos(2 phi + chi)) / 2 with c = 2|<jj|rho|kk>| and
    b the population with neither ion in {j, k}, assuming no coherence
    between |jk> and |kj>.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    d = _dims(rho)
    recs = []
    for phi in phases:
        r = _apply(rho, parity_chain(d, j, k, phi), d)
        counts, n = _sample(outcome_probabilities(r), shots, rng)
        recs.append(ShotRecord(f"coherence({j},{k})", counts, n, (j, k), float(phi)))
    return recs


def parity_baseline(pops: np.ndarray, j: int, k: int) -> float:
    d = pops.shape[0]
    out = [m for m in range(d) if m not in (j, k)]
    return float(pops[np.ix_(out, out)].sum()) if out else 0.0


# --- Bayesian coherence estimate ----------------------------------------

@dataclass(frozen=True)
class CoherenceEstimate:
    """Off-diagonal magnitude |<jj|rho|kk>| = contrast / 2."""
    levels: tuple
    magnitude: float
    std: float
    interval68: tuple
    interval95: tuple
    phase: float = 0.0

    @property
    def contrast(self) -> float:
        return 2 * self.magnitude


def bayes_coherence(records: Sequence[ShotRecord], baseline: float = 0.0,
                    n_contrast: int = 201, n_phase: int = 201) -> CoherenceEstimate:
    """Posterior over (contrast, fringe phase) on a grid with a uniform prior
    and binomial likelihood per setting.

    The contrast grid spans [0, 1 - baseline], the range that keeps every
    predicted probability in [0, 1].  Exact (infinite-shot) records are
    fitted by linear least squares instead.
    """
    recs = list(records)
    if len({r.phase for r in recs}) < 3:
        raise IncompleteDataError("need at least 3 distinct analysis phases")
    levels = recs[0].levels
    phi = np.array([r.phase for r in recs])
    if not 0 <= baseline < 1:
        raise ValueError("baseline must lie in [0, 1)")
    cmax = 1.0 - baseline
    if all(r.exact for r in recs):
        y = 2 * np.array([r.even for r in recs]) - 1 - baseline
        a = np.column_stack([np.cos(2 * phi), -np.sin(2 * phi)])
        (x, yv), *_ = np.linalg.lstsq(a, y, rcond=None)
        c = min(float(np.hypot(x, yv)), cmax)
        return CoherenceEstimate(levels, c / 2, 0.0, (c / 2, c / 2), (c / 2, c / 2),
                                 float(np.arctan2(yv, x)))
    if any(r.exact for r in recs):
        raise ValueError("cannot mix exact and sampled records")
    shots = np.array([r.shots for r in recs])
    if np.any(shots <= 0):
        raise ValueError("degenerate record with zero shots")
    k = np.array([r.even for r in recs])
    cg = np.linspace(0.0, cmax, n_contrast)
    chi = np.linspace(0.0, 2 * np.pi, n_phase, endpoint=False)
    cos = np.cos(2 * phi[None, :] + chi[:, None])            # (phase, setting)
    p = 0.5 * (1 + baseline + cg[:, None, None] * cos[None])  # (c, phase, setting)
    p = np.clip(p, 1e-12, 1 - 1e-12)
    ll = (k * np.log(p) + (shots - k) * np.log1p(-p)).sum(axis=-1)
    post = np.exp(ll - ll.max())
    marg = post.sum(axis=1)
    marg = marg / marg.sum()
    mean = float(np.dot(marg, cg))
    std = float(np.sqrt(max(np.dot(marg, (cg - mean) ** 2), 0.0)))
    # distribute each grid mass over its cell for quantiles
    edges = np.concatenate([[0.0], 0.5 * (cg[1:] + cg[:-1]), [cmax]])
    cdf = np.concatenate([[0.0], np.cumsum(marg)])

    def q(x):
        return float(np.interp(x, cdf, edges))

    ph_marg = post.sum(axis=0)
    ph = float(np.angle(np.dot(ph_marg, np.exp(1j * chi))))
    half = lambda a, b: (a / 2, b / 2)
    return CoherenceEstimate(levels, mean / 2, std / 2, half(q(0.16), q(0.84)),
                             half(q(0.025), q(0.975)), ph)


# --- fidelity -------------------------------------------------------------

@dataclass(frozen=True)
class FidelityEstimate:
    value: float
    std: float


def state_fidelity_estimate(populations, coherences: Mapping, target: TargetState,
                            population_err=None) -> FidelityEstimate:
    """F = sum_i lambda_i^2 p_ii + 2 sum_{i<j} lambda_i lambda_j |rho_{ii,jj}|.

    ``populations`` is the d x d population matrix or the d values p_ii;
    ``coherences`` maps (i, j) with i < j to a CoherenceEstimate or a number.
    Coherence magnitudes stand in for the real parts, which makes this an
    upper-bound-flavoured estimate.
    """
    d = target.d
    lam = target.lam
    p = np.asarray(populations, dtype=float)
    if p.shape == (d, d):
        pii = np.diag(p)
        perr = None if population_err is None else np.diag(np.asarray(population_err))
    elif p.shape == (d,):
        pii = p
        perr = None if population_err is None else np.asarray(population_err, dtype=float)
    else:
        raise IncompleteDataError(f"need {d} diagonal populations")
    missing = [(i, j) for i in range(d) for j in range(i + 1, d) if (i, j) not in coherences]
    if missing:
        raise IncompleteDataError(f"missing coherences for pairs {missing}")
    f = float(np.dot(lam ** 2, pii))
    var = 0.0 if perr is None else float(np.dot(lam ** 4, perr ** 2))
    for (i, j), c in coherences.items():
        if not (0 <= i < j < d):
            raise ValueError(f"invalid pair {(i, j)}")
        mag = c.magnitude if isinstance(c, CoherenceEstimate) else float(c)
        f += 2 * lam[i] * lam[j] * mag
        if isinstance(c, CoherenceEstimate):
            var += (2 * lam[i] * lam[j] * c.std) ** 2
    return FidelityEstimate(float(np.clip(f, 0.0, 1.0)), float(np.sqrt(var)))


@dataclass
class StateEstimate:
    populations: np.ndarray
    population_err: np.ndarray
    coherences: dict
    fidelity: FidelityEstimate


def default_phases(n: int = 12) -> np.ndarray:
    return np.linspace(0, np.pi, n, endpoint=False)


def estimate_state(rho: np.ndarray, target: TargetState, shots: int | None = 500,
                   rng=None, phases: Sequence[float] | None = None) -> StateEstimate:
    """Full readout pipeline on one state: populations, all pairwise parity
    scans, Bayesian coherences and the fidelity estimate."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    d = target.d
    phases = default_phases() if phases is None else phases
    pops, perr = populations_from_scan(population_scan(rho, shots, rng))
    coh = {}
    for i in range(d):
        for j in range(i + 1, d):
            recs = parity_scan(rho, i, j, phases, shots, rng)
            b = min(parity_baseline(pops, i, j), 0.999)
            coh[(i, j)] = bayes_coherence(recs, baseline=b)
    fid = state_fidelity_estimate(pops, coh, target, perr if shots else None)
    return StateEstimate(pops, perr, coh, fid)


# --- decay fit ------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    f: float
    A: float
    f_err: float
    A_err: float
    counts: tuple
    residuals: tuple
    rms_log_residual: float
    curvature: float
    chi2_red: float | None
    p_value: float | None
    non_exponential: bool
    clipped: bool
    spam_point: float | None = None

    @property
    def infidelity(self) -> float:
        return 1.0 - self.f


def decay_fit(fidelities, counts: Sequence[int], sigmas=None,
              resid_tol: float = 1e-3, alpha: float = 0.01) -> DecayFit:
    """Weighted least squares of log F(n) = log A + n log f.

    A point at n = 0 is excluded from the fit and reported as ``spam_point``.
    With ``sigmas`` the weights are (F/sigma)^2 and deviation from a pure
    exponential is flagged by a chi-square test; without them it is flagged
    when the rms log residual exceeds ``resid_tol``.
    """
    F = np.asarray(fidelities, dtype=float)
    n = np.asarray(counts, dtype=float)
    if F.shape != n.shape:
        raise ValueError("fidelities and counts differ in length")
    spam = None
    if np.any(n == 0):
        spam = float(F[n == 0][0])
    keep = n != 0
    sig = None if sigmas is None else np.asarray(sigmas, dtype=float)[keep]
    F, n = F[keep], n[keep]
    if F.size < 3:
        raise ValueError("decay fit needs at least 3 non-zero gate counts")
    if np.any(F <= 0):
        raise ValueError("fidelities must be positive for a log-domain fit")
    y = np.log(F)
    X = np.column_stack([np.ones_like(n), n])
    if sig is not None:
        if np.any(sig <= 0):
            raise ValueError("sigmas must be positive")
        w = (F / sig) ** 2
    else:
        w = np.ones_like(F)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    res = y - X @ coef
    dof = F.size - 2
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    chi2 = float(np.sum(w * res ** 2))
    if sig is None:
        cov = cov * (chi2 / dof if dof > 0 else 0.0)
        chi2_red = pval = None
    else:
        chi2_red = chi2 / dof if dof > 0 else None
        pval = float(stats.chi2.sf(chi2, dof)) if dof > 0 else None
    rms = float(np.sqrt(np.mean(res ** 2)))
    curv = float(np.polyfit(n, y, 2, w=sw)[0]) if F.size >= 3 else 0.0
    flag = (pval is not None and pval < alpha) if sig is not None else rms > resid_tol
    f = float(np.exp(coef[1]))
    a = float(np.exp(coef[0]))
    clipped = f > 1.0
    return DecayFit(min(f, 1.0), a, f * float(np.sqrt(cov[1, 1])), a * float(np.sqrt(cov[0, 0])),
                    tuple(int(x) for x in n), tuple(float(r) for r in res), rms, curv,
                    chi2_red, pval, bool(flag), bool(clipped), spam)


def magnitude_fidelity(rho: np.ndarray, target: TargetState) -> float:
    """The estimator formula evaluated on exact matrix elements."""
    d = target.d
    idx = [i * d + i for i in range(d)]
    pops = np.real(np.diag(rho))[idx]
    coh = {(i, j): abs(rho[idx[i], idx[j]]) for i in range(d) for j in range(i + 1, d)}
    return state_fidelity_estimate(pops, coh, target).value


def entangled_gate_counts(d: int, theta: float, n_gates: int = 9, target: TargetState | None = None,
                          threshold: float | None = None) -> list:
    """Gate counts n in 1..n_gates whose ideal decoded state passes the
    maximal-Schmidt-number fidelity threshold for ``target``."""
    from .entangle import schmidt_threshold
    from .gates import target_state
    target = target or target_state(d)
    thr = schmidt_threshold(target, d - 1) if threshold is None else threshold
    out = []
    for n in range(1, n_gates + 1):
        psi = gate_output(d, theta, n)
        if magnitude_fidelity(np.outer(psi, psi.conj()), target) > thr + 1e-9:
            out.append(n)
    return out


@dataclass
class DecayExperiment:
    counts: list
    estimates: dict
    fit: DecayFit
    spam: StateEstimate | None = None


def decay_experiment(states: Sequence[np.ndarray], counts: Sequence[int], target: TargetState,
                     shots: int | None = 500, rng=None, phases=None,
                     include_spam: bool = True) -> DecayExperiment:
    """Estimate the fidelity of each decoded state ``states[n]`` for n in
    ``counts`` and fit the decay."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    est = {n: estimate_state(states[n], target, shots, rng, phases) for n in counts}
    spam = estimate_state(states[0], target, shots, rng, phases) if include_spam else None
    F = [est[n].fidelity.value for n in counts]
    sig = None
    if shots:
        sig = [max(est[n].fidelity.std, 1e-6) for n in counts]
    fit = decay_fit(F, counts, sig)
    return DecayExperiment(list(counts), est, fit, spam)
