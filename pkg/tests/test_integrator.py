import numpy as np
import pytest
from scipy.linalg import expm

import collapse_lab as cl
from collapse_lab.errors import NumericalError, StabilityError
from collapse_lab.integrator import (
    IntegrationPlan,
    Observable,
    lindblad_oracle,
    run_ensemble,
    run_trajectory,
    trace_distance,
)
from collapse_lab.operators import AssembledOperator
from collapse_lab.scenarios import builtin_scenario, realize

from conftest import SIGMA_X, SIGMA_Z, make_realized


def as_op(space, mat, hermitian=True):
    return AssembledOperator(space, np.asarray(mat, dtype=complex), hermitian=hermitian)


class TestItoStep:
    def test_unitary_limit_phases(self, qubit_space):
        # collapse operator proportional to identity contributes nothing
        h = as_op(qubit_space, SIGMA_Z)
        v = as_op(qubit_space, np.eye(2) * 2.0)
        psi = cl.make_product_state(qubit_space, {"q": [1.0, 1.0]})
        dt = 1e-3
        out = cl.ito_step(psi, h, v, dt, noise=0.1 + 0.05j)
        expected = np.array([np.exp(-1j * dt), np.exp(1j * dt)]) / np.sqrt(2.0)
        assert np.allclose(out.amplitudes, expected, atol=dt**2)

    def test_hand_expanded_weight_shift(self, qubit_space):
        v_eig = 0.8
        v = as_op(qubit_space, np.diag([v_eig, -v_eig]))
        psi = cl.make_product_state(qubit_space, {"q": [1.0, 1.0]})
        dt = 1e-4
        eps = 0.02
        out = cl.ito_step(psi, None, v, dt, noise=complex(eps))
        w0 = abs(out.amplitudes[0]) ** 2
        ve = v_eig * eps
        expected = (1 + ve) ** 2 / ((1 + ve) ** 2 + (1 - ve) ** 2)
        assert w0 == pytest.approx(expected, abs=5 * dt)

    def test_joint_eigenstate_fixed_point(self, qubit_space):
        h = as_op(qubit_space, SIGMA_Z)
        v = as_op(qubit_space, np.diag([0.5, -0.5]))
        psi = cl.make_product_state(qubit_space, {"q": [1.0, 0.0]})
        out = cl.ito_step(psi, h, v, 1e-3, noise=0.3 - 0.2j)
        overlap = abs(np.vdot(psi.amplitudes, out.amplitudes))
        assert overlap == pytest.approx(1.0, abs=1e-12)

    def test_stability_guard(self, qubit_space):
        v = as_op(qubit_space, np.diag([50.0, -50.0]))
        psi = cl.make_product_state(qubit_space, {"q": [1.0, 1.0]})
        with pytest.raises(StabilityError):
            cl.ito_step(psi, None, v, 1e-3, noise=0.0)


class TestRunTrajectory:
    def qnd(self, weights=(0.3, 0.7), n_steps=3000, dt=1e-3, seed=5):
        sc = realize(builtin_scenario("qnd-two-level"))
        plan = IntegrationPlan(dt=dt, n_steps=n_steps, seed=seed, record_every=50)
        space = sc.space
        psi0 = cl.make_product_state(
            space, {"spin": [np.sqrt(weights[0]), np.sqrt(weights[1])],
                    "pointer": [0.0, 1.0]}
        )
        import dataclasses

        return dataclasses.replace(sc, plan=plan, psi0=psi0)

    def test_qnd_reaches_terminal_branch(self):
        sc = self.qnd(n_steps=6000)
        rec = run_trajectory(sc, seed=8)
        assert rec.collapsed_branch in ("up", "down")
        winner = rec.branch_weights[rec.collapsed_branch][-1]
        assert winner > 1.0 - 1e-6

    def test_eigenstate_start_weights_constant(self):
        sc = self.qnd(weights=(1.0, 0.0), n_steps=500)
        rec = run_trajectory(sc, seed=3)
        assert np.allclose(rec.branch_weights["up"], 1.0, atol=1e-12)
        assert rec.collapsed_branch == "up"
        assert rec.collapse_step == 0

    def test_free_evolution_matches_exponential_oracle(self, qubit_space):
        h = 0.7 * SIGMA_X + 0.2 * SIGMA_Z
        dt, n = 1e-4, 2000
        plan = IntegrationPlan(dt=dt, n_steps=n, seed=0, record_every=n)
        sc = make_realized(qubit_space, h, None, [0.6, 0.8j], plan)
        rec = run_trajectory(sc)
        exact = expm(-1j * h * dt * n) @ sc.psi0.amplitudes
        # explicit Euler phase error accumulates ~ t * ||H||^3 dt^2 / 3
        assert np.linalg.norm(rec.final_state.amplitudes - exact) < 1e-5

    def test_deterministic_given_seed(self):
        sc = self.qnd()
        r1 = run_trajectory(sc, seed=123)
        r2 = run_trajectory(sc, seed=123)
        assert np.array_equal(r1.observables["sz"], r2.observables["sz"])
        assert np.array_equal(r1.norms_pre_renorm, r2.norms_pre_renorm)

    def test_norm_drift_is_order_dt(self):
        sc = self.qnd(n_steps=200)
        rec = run_trajectory(sc, seed=2)
        drifts = np.abs(rec.norms_pre_renorm[1:] - 1.0)
        assert np.max(drifts) < 50 * sc.plan.dt

    def test_branch_weights_partition(self):
        rec = run_trajectory(self.qnd(n_steps=500), seed=9)
        total = rec.branch_weights["up"] + rec.branch_weights["down"]
        assert np.max(np.abs(total - 1.0)) < 1e-9

    def test_record_lengths(self):
        rec = run_trajectory(self.qnd(n_steps=500), seed=9)
        n_rec = 1 + 500 // 50
        assert len(rec.times) == n_rec
        assert all(len(s) == n_rec for s in rec.observables.values())
        assert all(len(s) == n_rec for s in rec.entropy_series.values())


class TestRunEnsemble:
    def test_no_noise_zero_variance(self, qubit_space):
        h = SIGMA_X
        plan = IntegrationPlan(dt=1e-3, n_steps=100, seed=0, record_every=20)
        sc = make_realized(
            qubit_space, h, None, [1.0, 0.0], plan,
            observables=[Observable("sz", "matrix", matrix=SIGMA_Z)],
        )
        stats, _ = run_ensemble(sc, 8, base_seed=0)
        # identical trajectories; variance is zero up to one-pass cancellation
        assert np.max(stats.observable_var["sz"]) < 1e-14

    def test_seed_layout_and_reproducibility(self, qubit_space):
        plan = IntegrationPlan(dt=1e-3, n_steps=200, seed=0, record_every=40)
        sc = make_realized(
            qubit_space, None, SIGMA_Z, [0.6, 0.8], plan,
            observables=[Observable("sz", "matrix", matrix=SIGMA_Z)],
        )
        stats1, recs = run_ensemble(sc, 6, base_seed=100, keep_records=True)
        assert [r.seed for r in recs] == [100 + i for i in range(6)]
        stats2, _ = run_ensemble(sc, 6, base_seed=100)
        assert np.array_equal(stats1.observable_mean["sz"], stats2.observable_mean["sz"])

    def test_batched_matches_serial_trajectory(self):
        sc = realize(builtin_scenario("qnd-two-level"))
        serial = run_trajectory(sc, seed=77)
        _, recs = run_ensemble(sc, 3, base_seed=77, keep_records=True)
        batched = recs[0]
        assert batched.collapsed_branch == serial.collapsed_branch
        assert batched.collapse_step == serial.collapse_step
        assert np.allclose(
            batched.observables["sz"], serial.observables["sz"], atol=1e-12
        )

    def test_parallel_workers_reduce_identically(self):
        sc = realize(builtin_scenario("qnd-two-level"))
        import dataclasses

        sc = dataclasses.replace(
            sc, plan=IntegrationPlan(dt=1e-3, n_steps=300, seed=0, record_every=50)
        )
        stats_serial, _ = run_ensemble(sc, 6, base_seed=5, max_workers=1)
        stats_par, _ = run_ensemble(sc, 6, base_seed=5, max_workers=2)
        for k in stats_serial.observable_mean:
            assert np.allclose(
                stats_serial.observable_mean[k], stats_par.observable_mean[k],
                atol=1e-12,
            )
        assert stats_serial.outcome_counts == stats_par.outcome_counts

    def test_thread_env_var_caps_parallelism(self, monkeypatch):
        sc = realize(builtin_scenario("qnd-two-level"))
        import dataclasses

        sc = dataclasses.replace(
            sc, plan=IntegrationPlan(dt=1e-3, n_steps=200, seed=0, record_every=50)
        )
        monkeypatch.setenv("COLLAPSE_LAB_THREADS", "2")
        stats_env, _ = run_ensemble(sc, 4, base_seed=11)
        monkeypatch.setenv("COLLAPSE_LAB_THREADS", "1")
        stats_one, _ = run_ensemble(sc, 4, base_seed=11)
        assert stats_env.outcome_counts == stats_one.outcome_counts
        for k in stats_one.observable_mean:
            assert np.allclose(
                stats_env.observable_mean[k], stats_one.observable_mean[k],
                atol=1e-12,
            )

    def test_mean_vhat_matches_oracle(self, qubit_space):
        h = SIGMA_X
        v = SIGMA_Z
        plan = IntegrationPlan(dt=2e-3, n_steps=250, seed=0, record_every=50)
        sc = make_realized(
            qubit_space, h, v, [0.6, 0.8], plan,
            observables=[Observable("vhat", "matrix", matrix=SIGMA_Z)],
        )
        stats, _ = run_ensemble(sc, 3000, base_seed=900)
        rho0 = np.outer(sc.psi0.amplitudes, sc.psi0.amplitudes.conj())
        rhos = lindblad_oracle(h, v, rho0, plan.dt, plan.n_steps)
        for i, k in enumerate(range(0, plan.n_steps + 1, plan.record_every)):
            oracle_val = float(np.real(np.trace(SIGMA_Z @ rhos[k])))
            se = max(stats.observable_stderr["vhat"][i], 1e-12)
            assert abs(stats.observable_mean["vhat"][i] - oracle_val) <= 3 * se


class TestLindbladOracle:
    def test_pure_unitary_keeps_spectrum(self):
        h = 0.9 * SIGMA_X
        rho0 = np.diag([0.7, 0.3]).astype(complex)
        rhos = lindblad_oracle(h, None, rho0, 1e-3, 500)
        eigs0 = np.sort(np.linalg.eigvalsh(rhos[0]))
        eigsT = np.sort(np.linalg.eigvalsh(rhos[-1]))
        assert np.allclose(eigs0, eigsT, atol=1e-9)
        assert abs(np.trace(rhos[-1]).real - 1.0) < 1e-9

    def test_diagonal_states_fixed_under_dephasing(self):
        v = np.diag([0.6, -1.1]).astype(complex)
        rho0 = np.diag([0.25, 0.75]).astype(complex)
        rhos = lindblad_oracle(None, v, rho0, 1e-3, 400)
        assert np.allclose(rhos[-1], rho0, atol=1e-12)

    def test_offdiagonal_dephasing_closed_form(self):
        v0, v1 = 0.9, -0.4
        v = np.diag([v0, v1]).astype(complex)
        rho0 = np.array([[0.6, 0.3 - 0.1j], [0.3 + 0.1j, 0.4]])
        dt, n = 1e-3, 2000
        rhos = lindblad_oracle(None, v, rho0, dt, n)
        expected = rho0[0, 1] * np.exp(-((v0 - v1) ** 2) * n * dt / 2.0)
        assert rhos[-1][0, 1] == pytest.approx(expected, abs=1e-6)

    def test_rejects_non_psd(self):
        bad = np.diag([1.2, -0.2]).astype(complex)
        with pytest.raises(NumericalError):
            lindblad_oracle(None, SIGMA_Z, bad, 1e-3, 10)


def test_trace_distance():
    a = np.diag([1.0, 0.0]).astype(complex)
    b = np.diag([0.0, 1.0]).astype(complex)
    assert trace_distance(a, b) == pytest.approx(1.0)
    assert trace_distance(a, a) == 0.0


def test_plan_validation():
    with pytest.raises(ValueError):
        IntegrationPlan(dt=-1.0, n_steps=10)
    with pytest.raises(ValueError):
        IntegrationPlan(dt=1e-3, n_steps=10, record_every=3)
    with pytest.raises(ValueError):
        IntegrationPlan(dt=1e-3, n_steps=10, noise_kind="pink")
    with pytest.raises(ValueError):
        IntegrationPlan(dt=1e-3, n_steps=10, collapse_threshold=1.5)


def test_real_noise_option(qubit_space):
    plan = IntegrationPlan(dt=1e-3, n_steps=400, seed=4, noise_kind="real",
                           record_every=100)
    sc = make_realized(qubit_space, None, SIGMA_Z, [1.0, 1.0], plan)
    rec = run_trajectory(sc)
    assert np.isfinite(rec.norms_pre_renorm).all()
    # martingale still holds with real increments
    assert abs(rec.norm_drift_mean) < 1e-2
