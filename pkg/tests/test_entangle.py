import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quditls.entangle import (alignment_phases, certify_schmidt_number, concurrence_lower_bound,
                              concurrence_pure, diagonal_data, entanglement_entropy,
                              eof_lower_bound, full_report, max_concurrence, report_from_summary,
                              schmidt_threshold)
from quditls.gates import TargetState, gate_output, target_state

# measured values printed for the experiment: F, F err, C, C err, EoF, EoF err
TABLE = {2: (0.989, 0.005, 0.98, 0.01, 0.97, 0.08),
         3: (0.978, 0.012, 1.12, 0.02, 1.50, 0.12),
         4: (0.947, 0.012, 1.14, 0.01, 1.61, 0.13),
         5: (0.884, 0.012, 1.08, 0.01, 1.26, 0.06)}


def test_thresholds():
    assert [round(schmidt_threshold(target_state(d), d - 1), 3) for d in (2, 3, 4)] == \
        [0.5, 0.667, 0.75]
    # unbalanced d = 5 target: 0.6^2 + 3 * 0.4^2
    assert schmidt_threshold(target_state(5), 4) == pytest.approx(0.84)
    with pytest.raises(ValueError):
        schmidt_threshold(target_state(3), 4)


def test_max_concurrence():
    assert [round(max_concurrence(d), 4) for d in (2, 3, 4, 5)] == [1.0, 1.1547, 1.2247, 1.2649]


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_table_rows_certify_full_schmidt_number(d):
    F, Fe, C, Ce, _, _ = TABLE[d]
    rep = report_from_summary(F, Fe, C, Ce, target_state(d))
    assert rep.schmidt_number_certified == d


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_eof_bound_against_table(d):
    _, _, C, Ce, E, Ee = TABLE[d]
    assert eof_lower_bound(C, d) == pytest.approx(E, abs=Ee)


def test_eof_bound_values():
    assert eof_lower_bound(0.0, 2) == 0.0
    assert eof_lower_bound(1.08, 5) == pytest.approx(1.2626, abs=1e-4)
    assert eof_lower_bound(max_concurrence(3), 3) == pytest.approx(np.log2(3))
    with pytest.raises(ValueError):
        eof_lower_bound(1.2, 2)


def test_strict_threshold():
    tgt = target_state(2)
    assert certify_schmidt_number(0.5, 0.0, tgt)[0] == 1
    assert certify_schmidt_number(0.5 + 1e-9, 0.0, tgt)[0] == 2
    assert certify_schmidt_number(0.55, 0.1, tgt) == (2, 1)


def _random_rank_limited(rng, d, r, n):
    """n random pure states of Schmidt rank <= r as (n, d, d) arrays."""
    a = rng.normal(size=(n, d, r)) + 1j * rng.normal(size=(n, d, r))
    b = rng.normal(size=(n, r, d)) + 1j * rng.normal(size=(n, r, d))
    m = a @ b
    return m / np.linalg.norm(m, axis=(1, 2), keepdims=True)


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_witness_soundness(d):
    rng = np.random.default_rng(100 + d)
    tgt = target_state(d)
    lam = tgt.lam
    for r in range(1, d):
        psi = _random_rank_limited(rng, d, r, 10_000)
        # a share of near-optimal rank-r states probes the boundary
        eye = np.eye(d)[:, :r]
        a = eye[None] + 0.05 * rng.normal(size=(2000, d, r))
        b = (lam[:r, None] * eye.T)[None] + 0.05 * rng.normal(size=(2000, r, d))
        psi[:2000] = a @ b
        psi /= np.linalg.norm(psi, axis=(1, 2), keepdims=True)
        F = np.abs(np.einsum("i,nii->n", lam, psi)) ** 2
        assert F.max() <= schmidt_threshold(tgt, r) + 1e-12
        assert all(certify_schmidt_number(float(f), 0.0, tgt)[0] <= r for f in F[:50])


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_concurrence_bound_below_pure_concurrence(d):
    rng = np.random.default_rng(7 + d)
    n = 10_000 if d < 5 else 5000
    psi = rng.normal(size=(n, d * d)) + 1j * rng.normal(size=(n, d * d))
    psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    # mix in near-maximally entangled states so the bound is not trivially 0
    psi[: n // 4] = (psi[: n // 4] * 0.2 + np.eye(d).ravel() / np.sqrt(d))
    psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    idx = np.arange(d) * (d + 1)
    for v in psi:
        pops = (np.abs(v) ** 2).reshape(d, d)
        coh = {(j, k): abs(v[idx[j]] * np.conj(v[idx[k]])) for j in range(d) for k in range(j + 1, d)}
        assert concurrence_lower_bound(pops, coh, d) <= concurrence_pure(v, d) + 1e-12


@given(st.integers(2, 5), st.integers(0, 2 ** 31))
@settings(max_examples=30)
def test_pure_concurrence_range(d, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=d * d) + 1j * rng.normal(size=d * d)
    v /= np.linalg.norm(v)
    assert 0 <= concurrence_pure(v, d) <= max_concurrence(d) + 1e-12
    assert 0 <= entanglement_entropy(v, d) <= np.log2(d) + 1e-12


def test_bound_tight_on_maximal_states():
    for d in (2, 3, 4):
        v = target_state(d).vector()
        pops, coh = diagonal_data(np.outer(v, v.conj()), d)
        assert concurrence_lower_bound(pops, coh, d) == pytest.approx(max_concurrence(d))


def test_bound_rejects_bad_populations():
    with pytest.raises(ValueError):
        concurrence_lower_bound(np.full((2, 2), 0.5), {(0, 1): 0.1}, 2)
    with pytest.raises(ValueError):
        concurrence_lower_bound(np.full((2, 2), 0.25), {}, 2)


@pytest.mark.parametrize("d,theta", [(2, np.pi / 2), (3, 2 * np.pi / 3), (4, np.pi)])
def test_full_report_on_ideal_gate_output(d, theta):
    psi = gate_output(d, theta)
    rep = full_report(psi, target_state(d), alignment_phases(psi, d))
    assert rep.fidelity == pytest.approx(1.0, abs=1e-9)
    assert rep.pure and rep.path == "exact"
    assert rep.concurrence == pytest.approx(max_concurrence(d), abs=1e-9)
    assert rep.eof_lower_bound == pytest.approx(np.log2(d), abs=1e-8)
    assert rep.schmidt_number_certified == d


def test_full_report_mixed_state():
    d = 3
    v = target_state(d).vector()
    rho = 0.9 * np.outer(v, v) + 0.1 * np.eye(9) / 9
    rep = full_report(rho, target_state(d))
    assert not rep.pure
    assert rep.fidelity == pytest.approx(0.9 + 0.1 / 9)
    with pytest.raises(ValueError):
        full_report(np.eye(4) / 4, target_state(3))


def test_custom_target():
    tgt = TargetState(2, (np.sqrt(0.8), np.sqrt(0.2)))
    assert schmidt_threshold(tgt, 1) == pytest.approx(0.8)


def test_product_and_mixed_states_have_no_concurrence():
    v = np.zeros(4)
    v[1] = 1                                        # |01>
    assert concurrence_pure(v, 2) == pytest.approx(0.0, abs=1e-12)
    for d in (2, 3, 5):
        pops, coh = diagonal_data(np.eye(d * d) / d ** 2, d)
        assert concurrence_lower_bound(pops, coh, d) == 0.0


@given(st.integers(2, 5), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=40)
def test_eof_bound_increasing(d, u, w):
    lo, hi = sorted((u, w))
    assume_gap = hi - lo > 1e-6
    c_lo, c_hi = lo * max_concurrence(d), hi * max_concurrence(d)
    if assume_gap:
        assert eof_lower_bound(c_lo, d) < eof_lower_bound(c_hi, d)


def test_bound_decreases_along_depolarizing_family():
    v = target_state(2).vector()
    vis = np.linspace(1.0, 0.4, 13)
    vals = []
    for p in vis:
        rho = p * np.outer(v, v) + (1 - p) * np.eye(4) / 4
        vals.append(concurrence_lower_bound(*diagonal_data(rho, 2), 2))
    positive = [x for x in vals if x > 0]
    assert np.all(np.diff(positive) < 0)
    assert vals[0] == pytest.approx(1.0)
