import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from quditls.gates import preparation_pulses, cyclic_X_as_pulses
from quditls.hilbert import OscillatorSpace, create, destroy, partial_trace, thermal_state
from quditls.lightshift import default_gate_params
from quditls.noise import (AnalyticErrorParams, GateSimulator, NoiseConfig, StaticOffsets,
                           analytic_error_budget, default_transition_sensitivity,
                           dephasing_collapse_op, error_budget_table, gate_pulse_sequence,
                           heating_collapse_ops, lindblad_evolve, realization_seeds,
                           sample_noise_realization, simulate_noisy_gate, zeeman_coefficients)

THETA = {2: np.pi / 2, 3: 2 * np.pi / 3, 4: np.pi, 5: np.pi}


def test_sensitivity_from_zeeman_shifts():
    # oracle: g_S m_S - g_D m_D by hand for S(-1/2) -> D(m), m = -1/2, -3/2, 1/2, -5/2
    gs, gd = 2.00226, 1.20033
    raw = [gs * -0.5 - gd * m for m in (-0.5, -1.5, 0.5, -2.5)]
    assert np.allclose(zeeman_coefficients(), raw)
    sens = default_transition_sensitivity()
    assert sens[0] == 0.0
    assert max(abs(x) for x in sens) == pytest.approx(1.0)
    assert np.allclose(sens, (0.0, -0.2005, 0.3997, -0.8008, 1.0), atol=1e-4)


def test_config_validation_and_selection():
    with pytest.raises(ValueError):
        NoiseConfig(heating_rate=-1)
    with pytest.raises(ValueError):
        NoiseConfig(n_samples=0)
    with pytest.raises(ValueError):
        NoiseConfig(motional_coherence=0)
    cfg = NoiseConfig()
    assert cfg.only("heating").active_sources() == ["heating"]
    assert NoiseConfig.quiet().active_sources() == []
    with pytest.raises(KeyError):
        cfg.only("nonsense")
    assert cfg.scaled(2).motional_coherence == pytest.approx(8e-3)
    assert cfg.scaled(0).motional_coherence == np.inf
    assert cfg.dephasing_rate == pytest.approx(2 / 16e-3)


def test_draws_are_paired_under_scaling():
    cfg = NoiseConfig()
    seed = realization_seeds(cfg)[3]
    a = sample_noise_realization(cfg, 5, seed)
    b = sample_noise_realization(cfg.scaled(2.0), 5, seed)
    assert b.gate_rabi == pytest.approx(2 * a.gate_rabi)
    assert np.allclose(b.local_detuning, 2 * a.local_detuning)
    assert a.fast_entropy == b.fast_entropy
    # same seed, same draw
    assert sample_noise_realization(cfg, 5, seed).gate_detuning == a.gate_detuning


def test_fast_streams_independent():
    off = StaticOffsets(fast_entropy=123)
    x = off.fast_stream(0).standard_normal(4)
    y = off.fast_stream(1).standard_normal(4)
    assert not np.allclose(x, y)
    assert np.allclose(x, off.fast_stream(0).standard_normal(4))


def test_heating_rate_calibration():
    # d<n>/dt equals the configured rate
    n = 30
    rho = thermal_state(0.1, OscillatorSpace(n - 1))
    rho /= np.trace(rho)
    out = lindblad_evolve(rho, np.zeros((n, n)), heating_collapse_ops(1000.0, n), 1e-3)
    nbar = np.real(np.trace(out @ create(n) @ destroy(n)))
    assert nbar == pytest.approx(1.1, rel=1e-6)


def test_dephasing_decay():
    n = 4
    rho = np.full((n, n), 0.25, dtype=complex)
    tau = 2e-3
    out = lindblad_evolve(rho, np.zeros((n, n)), dephasing_collapse_op(tau, n), 1e-3)
    assert abs(out[0, 1]) == pytest.approx(0.25 * np.exp(-0.5), rel=1e-8)
    assert abs(out[0, 2]) == pytest.approx(0.25 * np.exp(-2.0), rel=1e-8)
    assert dephasing_collapse_op(np.inf, n) == []


@given(st.integers(0, 2 ** 31))
@settings(max_examples=15)
def test_lindblad_preserves_trace_and_positivity(seed):
    rng = np.random.default_rng(seed)
    n = 5
    m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = m + m.conj().T
    c = [rng.normal(size=(n, n)) * 0.5 + 1j * rng.normal(size=(n, n)) * 0.5 for _ in range(2)]
    v = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = v @ v.conj().T
    rho /= np.trace(rho)
    out = lindblad_evolve(rho, h, c, rng.uniform(0.1, 2.0))
    assert np.trace(out).real == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(out, out.conj().T, atol=1e-12)
    assert np.linalg.eigvalsh(out).min() > -1e-9


def _brute_force(d, p, cfg, n_gates, dim):
    """Whole-sequence master equation in the full spin (x) motion space."""
    dd = d * d
    a = destroy(dim)
    coll = [np.kron(np.eye(dd), c) for c in
            heating_collapse_ops(cfg.heating_rate, dim) + dephasing_collapse_op(cfg.motional_coherence, dim)]
    coef = (1j * p.eta * p.forces() / 2).ravel()
    proj = [np.diag(np.eye(dd)[i]) for i in range(dd)]

    def h_ls(s):
        e = np.exp(-1j * p.delta * s)
        blk = sum(np.kron(proj[i], coef[i] * e * a.conj().T) for i in range(dd))
        return blk + blk.conj().T

    def local(rho, pulses):
        for q in pulses:
            u = np.kron(q.operator(d), np.eye(dim))
            rho = u @ rho @ u.conj().T
            rho = lindblad_evolve(rho, np.zeros_like(rho), coll, q.duration)
        return rho

    m0 = thermal_state(cfg.initial_nbar, OscillatorSpace(dim - 1))
    spin0 = np.zeros((dd, dd))
    spin0[0, 0] = 1
    rho = np.kron(spin0, m0 / np.trace(m0))
    prep = preparation_pulses(d, cfg.local_pi_time)
    cyc = cyclic_X_as_pulses(d, cfg.local_pi_time)
    rho = local(rho, prep.pulses)
    outs = []
    for g in range(n_gates + 1):
        if g:
            for _ in range(d):
                rho = lindblad_evolve(rho, h_ls, coll, p.t_g)
                rho = local(rho, cyc.pulses)
        outs.append(partial_trace(local(rho, prep.inverse().pulses), [dd, dim], [0]))
    return outs


def test_simulator_matches_brute_force_master_equation():
    d, dim = 2, 12
    p = default_gate_params(d, THETA[d], n_max=dim - 1)
    cfg = NoiseConfig.quiet(heating_rate=400.0, motional_coherence=2e-3, initial_nbar=0.1,
                            n_samples=1)
    ref = _brute_force(d, p, cfg, 2, dim)
    sim = GateSimulator(d, p, cfg, n_max=dim - 1, ls_steps=24)
    got, _ = sim.run(StaticOffsets(local_detuning=np.zeros(d)), 2)
    for r, g in zip(ref, got):
        assert np.max(np.abs(r - g)) < 1e-6


@pytest.mark.parametrize("d", [2, 4])
def test_noiseless_simulation_is_perfect(d):
    p = default_gate_params(d, THETA[d])
    res = simulate_noisy_gate(d, p, NoiseConfig.quiet(), 4)
    assert np.allclose(res.fidelities, 1.0, atol=1e-10)
    assert res.n_realizations == 1


def test_parallel_map_matches_serial():
    d = 2
    p = default_gate_params(d, THETA[d], n_max=6)
    cfg = NoiseConfig(n_samples=6).only("gate_rabi", "fast_local_rabi")
    a = simulate_noisy_gate(d, p, cfg, 3, workers=1)
    b = simulate_noisy_gate(d, p, cfg, 3, workers=2)
    assert np.allclose(a.fidelities, b.fidelities, atol=1e-13)
    assert a.n_realizations == 6


def test_dissipative_states_are_physical():
    d = 3
    p = default_gate_params(d, THETA[d], n_max=8)
    cfg = NoiseConfig.quiet(heating_rate=200.0, motional_coherence=5e-3, n_samples=1)
    res = simulate_noisy_gate(d, p, cfg, 3, n_max=8)
    for rho in res.states:
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-6)
        assert np.linalg.eigvalsh(rho).min() > -1e-8
    assert np.all(np.diff(res.fidelities) < 1e-9)


def test_analytic_rows_qubit_reference():
    p = default_gate_params(2, THETA[2])
    seq = gate_pulse_sequence(2, p, 10e-6)
    scat, dec = analytic_error_budget(2, AnalyticErrorParams(), seq, shift=p.shifts[0, 0])
    assert scat == pytest.approx(1.6e-4, rel=1e-9)
    # both ions hold half their population in level 1 throughout: 90 us of D time
    assert dec == pytest.approx(90e-6, rel=1e-9)
    assert seq.n_local == 2 and seq.n_lightshift == 2
    _, dec0 = analytic_error_budget(2, AnalyticErrorParams(d_state_lifetime=np.inf), seq)
    assert dec0 == 0.0


def test_single_source_budget_has_one_stochastic_row():
    cfg = NoiseConfig(n_samples=4).only("gate_rabi")
    t = error_budget_table(cfg, dims=(2,), n_max=6)
    nonzero = [k for k in ("gate_rabi", "slow_local_rabi", "fast_local_rabi",
                           "local_rabi_imbalance", "gate_freq_noise", "local_freq_noise")
               if t.rows[k][2] != 0]
    assert nonzero == ["gate_rabi"]
    assert t.row_sum[2] == pytest.approx(sum(v[2] for v in t.rows.values()))
    recs = t.as_records()
    assert recs[-1]["source"] == "total"


@pytest.mark.parametrize("rate_t", [0.02, 0.1])
def test_heating_from_ground_state(rate_t):
    n = 12
    rho = np.zeros((n, n), dtype=complex)
    rho[0, 0] = 1.0
    rate, t = 1000.0, rate_t / 1000.0
    out = lindblad_evolve(rho, np.zeros((n, n)), heating_collapse_ops(rate, n), t)
    nbar = np.real(np.trace(out @ create(n) @ destroy(n)))
    assert nbar == pytest.approx(rate * t, rel=0.02)


def test_zero_std_gives_zero_offsets():
    off = sample_noise_realization(NoiseConfig.quiet(), 5, 7)
    assert off.is_zero
    assert not np.any(off.local_detuning)


def test_gate_rabi_offsets_unbiased():
    cfg = NoiseConfig()
    rng = np.random.default_rng(99)
    draws = np.array([sample_noise_realization(cfg, 2, rng).gate_rabi for _ in range(100_000)])
    assert abs(draws.mean()) < 3 * cfg.gate_rabi_frac / np.sqrt(draws.size)
    assert draws.std() == pytest.approx(cfg.gate_rabi_frac, rel=0.01)


def test_quiet_budget_is_analytic_rows_only():
    t = error_budget_table(NoiseConfig.quiet(), dims=(2, 3), n_max=8)
    for d in (2, 3):
        assert t.row_sum[d] == pytest.approx(t.rows["scattering"][d] + t.rows["d_decay"][d])
        assert t.rows["scattering"][d] > 0


def test_motional_coherence_qubit_row():
    t = error_budget_table(NoiseConfig(), dims=(2,), sources=["motional_coherence"])
    assert t.rows["motional_coherence"][2] == pytest.approx(1.2e-3, rel=0.3)


@pytest.mark.slow
def test_fidelity_monotone_in_noise_scale():
    # paired realizations: every scale uses the same seeds
    d = 2
    p = default_gate_params(d, THETA[d], n_max=12)
    cfg = NoiseConfig(n_samples=200)
    fid = [simulate_noisy_gate(d, p, cfg.scaled(s), 1, n_max=12).fidelities[1]
           for s in (0.0, 0.5, 1.0, 2.0)]
    assert fid[0] == pytest.approx(1.0, abs=1e-9)
    assert all(a >= b for a, b in zip(fid, fid[1:])), fid


@pytest.mark.parametrize("d", [2, 3, 5])
def test_gate_pulse_counts(d):
    # d light-shift pulses, each followed by a cyclic shift of d - 1 pi pulses
    p = default_gate_params(d, THETA[d], n_max=8)
    seq = gate_pulse_sequence(d, p, 10e-6)
    assert seq.n_lightshift == d
    assert seq.n_local == d * (d - 1)
