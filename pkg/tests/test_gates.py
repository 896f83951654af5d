import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from quditls.gates import (LightShiftPulse, LocalRotation, PulseSequence, TargetState,
                           composed_cycle, cyclic_X, cyclic_X_as_pulses, entangling_phase_target,
                           gate_output, gate_phases_equivalent, ideal_gate_G, local_phase_correction,
                           local_phase_fidelity, local_rotation, maximally_entangled, phase_orbit,
                           preparation_P, preparation_pulses, rotation_R, symmetrized_phases,
                           target_state, transition_generator)
from quditls.hilbert import unitarity_error

dims = st.integers(2, 5)


@given(dims, st.data(), st.floats(-7, 7), st.floats(-np.pi, np.pi))
def test_local_rotation_is_matrix_exponential(d, data, angle, phi):
    j = data.draw(st.integers(0, d - 1))
    k = data.draw(st.integers(0, d - 1).filter(lambda x: x != j))
    ref = expm(-0.5j * angle * transition_generator(d, j, k, phi))
    assert np.allclose(local_rotation(d, j, k, angle, phi), ref, atol=1e-12)


def test_rotation_levels_validated():
    with pytest.raises(ValueError):
        local_rotation(3, 1, 1, 1.0, 0.0)
    with pytest.raises(ValueError):
        local_rotation(3, 0, 3, 1.0, 0.0)
    with pytest.raises(ValueError):
        LocalRotation((0, 1), 1.0, ion=2)


def test_pi_pulse_swaps_levels():
    u = local_rotation(3, 0, 2, np.pi, 0.0)
    assert abs(u[2, 0]) == pytest.approx(1.0)
    assert u[1, 1] == pytest.approx(1.0)


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_cyclic_pulses_realize_permutation_up_to_local_phases(d):
    u = cyclic_X_as_pulses(d).unitary(d)
    x = np.kron(cyclic_X(d), cyclic_X(d))
    residual = x.conj().T @ u
    # the residual is diagonal and a product of single-ion phases
    assert np.allclose(residual, np.diag(residual.diagonal()), atol=1e-12)
    ph = residual.diagonal().reshape(d, d)
    assert np.allclose(ph * ph[0, 0], np.outer(ph[:, 0], ph[0, :]), atol=1e-12)
    assert len(cyclic_X_as_pulses(d)) == d - 1


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_preparation_gives_uniform_superposition(d):
    p = preparation_P(d)
    psi = p[:, 0]
    assert np.allclose(np.abs(psi), 1 / d, atol=1e-12)
    assert np.allclose(preparation_pulses(d).unitary(d), p, atol=1e-12)
    assert unitarity_error(p) < 1e-12


def test_sequence_algebra():
    s = preparation_pulses(4, t_pi=1e-5)
    assert np.allclose(s.inverse().unitary(4) @ s.unitary(4), np.eye(16), atol=1e-12)
    assert len(s * 3) == 3 * len(s)
    assert len(s + s) == 2 * len(s)
    assert s.with_pi_time(2e-5).total_duration == pytest.approx(2 * s.total_duration)
    ls = PulseSequence([LightShiftPulse(1.0)])
    with pytest.raises(ValueError):
        ls.unitary(2)
    with pytest.raises(ValueError):
        ls.inverse()


def test_ideal_gate_structure():
    g = ideal_gate_G(3, 0.4).diagonal().reshape(3, 3)
    assert np.allclose(np.diag(g), 1)
    assert np.allclose(g[~np.eye(3, dtype=bool)], np.exp(0.4j))


@given(dims, st.integers(0, 2 ** 31))
def test_symmetrized_phases_match_composed_cycle(d, seed):
    phi = np.random.default_rng(seed).uniform(-np.pi, np.pi, (d, d))
    u = composed_cycle(d, np.diag(np.exp(1j * phi.ravel())))
    # dual route: matrix power of the step versus the orbit sum
    assert np.allclose(u, np.diag(np.exp(1j * symmetrized_phases(phi).ravel())), atol=1e-10)


@given(dims, st.data())
def test_orbit_sum_leaves_two_classes_for_symmetric_illumination(d, data):
    # equal light shift on both ions -> phi symmetric; after symmetrization
    # only "same level" and "different level" classes remain (for the
    # default illumination with a single shifted level)
    v = data.draw(st.floats(0.01, 2.0))
    phi = np.zeros((d, d))
    phi[0, 1:] = phi[1:, 0] = v
    out = symmetrized_phases(phi)
    assert np.allclose(np.diag(out), 0)
    assert np.allclose(out[~np.eye(d, dtype=bool)], 2 * v)


def test_phase_orbit_content():
    assert phase_orbit(3, 0, 1) == [(0, 1), (1, 2), (2, 0)]


def test_target_state_validation():
    with pytest.raises(ValueError):
        TargetState(2, (0.5, 0.5))
    with pytest.raises(ValueError):
        TargetState(2, (0.6, 0.8))
    assert np.linalg.norm(target_state(5).vector()) == pytest.approx(1.0)
    assert np.allclose(maximally_entangled(2), [1 / np.sqrt(2), 0, 0, 1 / np.sqrt(2)])


# theta values found by an independent brute-force scan of the local-phase
# fidelity (fine grid, separate construction of P via expm), then frozen
THETA_STAR = {2: np.pi / 2, 3: 2 * np.pi / 3, 4: np.pi, 5: np.pi}


def _brute_theta(d, n=20000):
    ang = 2 * np.arcsin(1 / np.sqrt(np.arange(2, d + 1)))
    a = np.eye(d * d, dtype=complex)
    for j in range(1, d):
        s = np.zeros((d, d), complex)
        s[0, j] = s[j, 0] = 1
        single = expm(-0.5j * ang[j - 1] * s)
        a = a @ np.kron(single, single)
    lam = target_state(d).lam
    best, arg = -1, None
    for th in np.linspace(0, 2 * np.pi, n, endpoint=False)[1:]:
        g = np.full((d, d), np.exp(1j * th))
        np.fill_diagonal(g, 1)
        out = a.conj().T @ (g.ravel() * a[:, 0])
        f = np.dot(lam, np.abs(out.reshape(d, d).diagonal())) ** 2
        if f > best + 1e-12:
            best, arg = f, th
    return arg


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_entangling_phase_oracle(d):
    assert _brute_theta(d, 4000) == pytest.approx(THETA_STAR[d], abs=2 * np.pi / 4000)
    assert entangling_phase_target(d).theta == pytest.approx(THETA_STAR[d], abs=1e-9)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_gate_output_maximally_entangled(d):
    psi = gate_output(d, THETA_STAR[d])
    assert local_phase_fidelity(psi, target_state(d)) == pytest.approx(1.0, abs=1e-9)
    corr = np.kron(np.eye(d), local_phase_correction(psi, d)) @ psi
    assert abs(np.vdot(target_state(d).vector(), corr)) ** 2 == pytest.approx(1.0, abs=1e-9)


def test_d5_output_is_unbalanced_state():
    psi = gate_output(5, np.pi)
    ref = np.zeros(25)
    ref[0] = 3 / 5
    for j in range(1, 5):
        ref[6 * j] = 2 / 5
    assert gate_phases_equivalent(psi, ref, atol=1e-9)


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_gate_period(d):
    # G(theta*)^n is the identity at n = 2 pi / theta*
    period = int(round(2 * np.pi / THETA_STAR[d]))
    assert gate_phases_equivalent(gate_output(d, THETA_STAR[d], period),
                                  np.eye(d * d)[:, 0], atol=1e-9)
