import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundsel.elastodynamics import GreenBank
from groundsel.inversion import (
    BasisConfig,
    Coefficients,
    Estimate,
    LaggedDesign,
    NormalSystem,
    build_normal_system,
    compute_err,
    compute_objective,
    estimate_for_model,
    input_error,
    read_estimate,
    reconstruct_input,
    synthesize_response,
    truncated_svd_solve,
    write_estimate,
)
from groundsel.waveform import Waveform

DT = 0.02
BASIS = BasisConfig(dt=0.1, pulse_width=0.4, input_duration=1.0)


def random_bank(seed=0, ns=2, n=60):
    rng = np.random.default_rng(seed)
    return GreenBank(DT, 0.4, rng.standard_normal((ns, 3, 3, n)), model_id="rand")


def random_coefficients(seed, L=BASIS.n_lags):
    return Coefficients(np.random.default_rng(seed).standard_normal((3, L)))


def as_waveforms(U):
    return [Waveform(DT, U[k].T) for k in range(U.shape[0])]


def brute_response(G, c, stride, n):
    ns = G.shape[0]
    U = np.zeros((ns, 3, n))
    for k in range(ns):
        for i in range(3):
            for t in range(n):
                for j in range(3):
                    for l in range(c.shape[1]):
                        m = t - l * stride
                        if 0 <= m < G.shape[3]:
                            U[k, i, t] += G[k, j, i, m] * c[j, l]
    return U


def test_basis_defaults_and_stride():
    b = BasisConfig()
    assert b.n_lags == 80 and b.stride(0.02) == 5 and b.stride(0.1) == 1
    with pytest.raises(ValueError):
        b.stride(0.03)
    with pytest.raises(ValueError):
        BasisConfig(n_lags=79)
    with pytest.raises(ValueError):
        Coefficients(np.zeros((2, 5)))


def test_synthesis_matches_brute_sum():
    bank = random_bank(1, n=40)
    c = random_coefficients(2)
    got = synthesize_response(bank, c, BASIS, n_samples=50)
    want = brute_response(bank.samples, c.c, 5, 50)
    for k, w in enumerate(got):
        np.testing.assert_allclose(w.samples.T, want[k], rtol=1e-12, atol=1e-12)


def test_normal_system_entries_match_definition():
    bank = random_bank(3, n=30)
    obs = as_waveforms(np.random.default_rng(4).standard_normal((2, 3, 30)))
    sysm = build_normal_system(bank, obs, BASIS)
    L = BASIS.n_lags
    o = np.stack([w.samples.T for w in obs])
    energy = (o**2).sum(-1) * DT
    w = 1.0 / energy
    # column (j, l) is the response to a unit coefficient
    cols = {}
    for j in range(3):
        for l in range(L):
            e = np.zeros((3, L))
            e[j, l] = 1.0
            cols[j * L + l] = brute_response(bank.samples, e, 5, 30)
    A = np.zeros((3 * L, 3 * L))
    b = np.zeros(3 * L)
    for p in range(3 * L):
        b[p] = np.sum(w[:, :, None] * cols[p] * o) * DT
        for q in range(3 * L):
            A[p, q] = np.sum(w[:, :, None] * cols[p] * cols[q]) * DT
    np.testing.assert_allclose(sysm.A, A, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(sysm.b, b, rtol=1e-10, atol=1e-12)


def test_exact_data_recovers_coefficients():
    bank = random_bank(5)
    c = random_coefficients(6)
    obs = synthesize_response(bank, c, BASIS)
    est = estimate_for_model(bank, obs, BASIS)
    assert est.rank == 3 * BASIS.n_lags
    np.testing.assert_allclose(est.coefficients.c, c.c, rtol=1e-8, atol=1e-8)
    assert est.err < 1e-8 and est.objective < 1e-14


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_solution_is_stationary_and_objective_consistent(seed):
    rng = np.random.default_rng(seed)
    bank = random_bank(seed % 1000, ns=1, n=40)
    obs = as_waveforms(rng.standard_normal((1, 3, 40)))
    sysm = build_normal_system(bank, obs, BASIS)
    c, rank = truncated_svd_solve(sysm, 1e-12)
    x = c.c.ravel()
    grad = 2 * (sysm.A @ x - sysm.b)
    assert np.linalg.norm(grad) <= 1e-8 * np.linalg.norm(sysm.b)
    # J from the normal system agrees with J from synthesised records
    other = Coefficients(rng.standard_normal((3, BASIS.n_lags)))
    syn = synthesize_response(bank, other, BASIS, n_samples=40)
    assert sysm.objective(other) == pytest.approx(compute_objective(syn, obs), rel=1e-9)
    assert sysm.objective(c) <= sysm.objective(other) + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
def test_synthesis_linear_and_err_scale_invariant(seed, alpha):
    bank = random_bank(seed % 97, n=30)
    c1, c2 = random_coefficients(seed), random_coefficients(seed + 1)
    u1 = synthesize_response(bank, c1, BASIS)
    u2 = synthesize_response(bank, c2, BASIS)
    u12 = synthesize_response(bank, Coefficients(c1.c + alpha * c2.c), BASIS)
    for a, b, s in zip(u1, u2, u12):
        np.testing.assert_allclose(s.samples, a.samples + alpha * b.samples, rtol=1e-9, atol=1e-9 * alpha)
    err = compute_err(u1, u2)
    err_s = compute_err([w.scaled(alpha) for w in u1], [w.scaled(alpha) for w in u2])
    assert err_s == pytest.approx(err, rel=1e-9)


def test_err_examples():
    o = Waveform(DT, np.array([[1.0, 2.0, 0.0], [1.0, -2.0, 0.0], [0.0, 0.0, 0.0]]))
    assert compute_err([o], [o]) == 0.0
    # silent vertical component is excluded; x1 off by 50 %, x2 exact
    u = Waveform(DT, np.array([[0.5, 2.0, 7.0], [0.5, -2.0, 0.0], [0.0, 0.0, 0.0]]))
    assert compute_err([u], [o]) == pytest.approx(0.25)
    assert compute_objective([u], [o]) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        compute_err([o], [Waveform.zeros(DT, 3)])


def test_zero_observations_rejected():
    bank = random_bank(7, ns=1)
    with pytest.raises(ValueError, match="zero energy"):
        estimate_for_model(bank, [Waveform.zeros(DT, 60)], BASIS)
    with pytest.raises(ValueError):
        estimate_for_model(bank, [Waveform.zeros(0.01, 60)], BASIS)


def test_truncated_svd_minimum_norm():
    rng = np.random.default_rng(8)
    B = rng.standard_normal((30, 12))
    A = B @ B.T  # rank 12
    b = A @ rng.standard_normal(30)
    sysm = NormalSystem(A, b, np.ones((1, 3)), np.ones((1, 3)), 10)
    c, rank = truncated_svd_solve(sysm, 1e-10)
    assert rank == 12
    np.testing.assert_allclose(c.c.ravel(), np.linalg.pinv(A, rcond=1e-10) @ b, rtol=1e-8, atol=1e-10)
    c0, r0 = truncated_svd_solve(sysm, 0.999)
    assert r0 == 1
    with pytest.raises(ValueError):
        truncated_svd_solve(NormalSystem(np.zeros((30, 30)), b, np.ones((1, 3)), np.ones((1, 3)), 10))


def test_subset_design_matches_fresh_design():
    bank = random_bank(9, ns=4)
    full = LaggedDesign(bank, BASIS)
    full.gram()
    obs = as_waveforms(np.random.default_rng(10).standard_normal((4, 3, 60)))
    sub = full.subset([3, 1])
    fresh = LaggedDesign(bank.subset([3, 1]), BASIS)
    s1 = sub.normal_system([obs[3], obs[1]])
    s2 = fresh.normal_system([obs[3], obs[1]])
    np.testing.assert_allclose(s1.A, s2.A, rtol=1e-13)
    np.testing.assert_allclose(s1.b, s2.b, rtol=1e-13)


def test_reconstruct_input_pulses():
    c = np.zeros((3, BASIS.n_lags))
    c[0, 2] = 1.5
    c[2, 7] = -0.5
    f = reconstruct_input(Coefficients(c), BASIS, DT)
    assert f.n == 50
    # Hann peaks at the pulse centre l*Δt + W/2
    assert f.samples[int(round((0.2 + 0.2) / DT)), 0] == pytest.approx(1.5)
    assert f.samples[int(round((0.7 + 0.2) / DT)), 2] == pytest.approx(-0.5)
    assert np.all(f.samples[:, 1] == 0)
    assert input_error(f, f) == 0.0
    assert input_error(f.scaled(1.1), f) == pytest.approx(0.1)


def test_estimate_file_round_trip(tmp_path):
    est = Estimate(random_coefficients(11), 0.125, 0.5, 29, "model000003", "ev002")
    write_estimate(tmp_path / "e.json", est, BASIS)
    back, basis = read_estimate(tmp_path / "e.json")
    assert back.coefficients.c.tobytes() == est.coefficients.c.tobytes()
    assert (back.err, back.objective, back.rank, back.model_id, back.event_id) == (0.125, 0.5, 29, "model000003", "ev002")
    assert basis == BASIS
