import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfsim import optimizer as opt
from nfsim.cascade import PhaseState, assemble_cascade, partial_products
from nfsim.channel import ChannelSet
from nfsim.config import SystemConfig
from nfsim.errors import ConfigurationError, NumericalError
from nfsim.harness import ScenarioSpec, generate_scenario
from nfsim.rate import mse_matrices, mse_matrix, weighted_sum_rate, wmmse_objective

from oracles import (crandn, direct_weighted_mse, grid_power_oracle, power_objective,
                     random_hpd, random_phase_instance, theta_derivative, theta_fd)


def full_forms(inst, l):
    ch = inst.channels
    c, d, e_bar = opt.phase_aggregates(ch.users, ch.feed, inst.u, inst.z, inst.p, inst.eta)
    r, j = partial_products(inst.phases, ch.inter, l)
    return c, d, e_bar, r, j


def layer_fun(inst, l, which="full"):
    """``F`` as a function of the angles of layer ``l`` only."""
    ch = inst.channels
    c, d, e_bar, *_ = full_forms(inst, l)

    def f(theta):
        g = assemble_cascade(inst.phases.with_layer(l, np.exp(1j * theta)), ch.inter)
        if which == "quad":
            return float(np.real(np.trace(g.conj().T @ c @ g @ d)))
        return opt.phase_objective(g, c, d, e_bar)
    return f


class TestConfig:
    def test_defaults(self):
        cfg = opt.BcdConfig()
        assert (cfg.epsilon, cfg.max_outer, cfg.step_init, cfg.backtrack_ratio, cfg.max_backtracks,
                cfg.inner_phase_steps) == (1e-4, 200, 1.0, 0.5, 30, 1)

    @pytest.mark.parametrize("kw", [dict(epsilon=0), dict(backtrack_ratio=1.0), dict(step_init=0),
                                    dict(max_outer=0), dict(sweep_order="sideways"),
                                    dict(step_rule="newton")])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            opt.BcdConfig(**kw)


class TestCombiners:
    def test_scalar_wiener(self):
        t = np.array([[0.6 + 0.2j]])
        p = np.array([[1.5]])
        u = opt.update_combiners(t, p, 0.3)
        assert u[0, 0, 0] == pytest.approx(t[0, 0] * 1.5 / (0.3 + 2.25 * abs(t[0, 0]) ** 2), rel=1e-14)

    def test_zero_power(self):
        rng = np.random.default_rng(0)
        assert np.array_equal(opt.update_combiners(crandn(rng, 4, 4), np.zeros((2, 2)), 0.1),
                              np.zeros((2, 2, 2)))

    def test_perturbation_oracle(self):
        rng = np.random.default_rng(1)
        t, p = crandn(rng, 6, 6), rng.uniform(0.2, 1, (3, 2))
        u = opt.update_combiners(t, p, 0.1)
        for k in range(3):
            best = np.trace(mse_matrix(u[k], t, p, k, 0.1)).real
            for _ in range(100):
                du = 0.05 * crandn(rng, 2, 2)
                assert best <= np.trace(mse_matrix(u[k] + du, t, p, k, 0.1)).real + 1e-12


class TestAux:
    def test_identity_and_diagonal(self):
        assert np.allclose(opt.update_aux(np.eye(2)[None]), np.eye(2))
        assert np.allclose(opt.update_aux(np.diag([0.5, 0.25])[None]), np.diag([2.0, 4.0]))

    def test_inverse_oracle(self):
        rng = np.random.default_rng(2)
        e = np.stack([random_hpd(rng, 2) for _ in range(3)])
        z = opt.update_aux(e)
        for zk, ek in zip(z, e):
            assert np.allclose(zk @ ek, np.eye(2), atol=1e-10)
            assert np.allclose(zk, zk.conj().T, atol=0)

    def test_singular_is_regularized(self):
        z = opt.update_aux(np.diag([1.0, 0.0])[None])
        assert np.all(np.isfinite(z))
        assert z[0, 1, 1].real == pytest.approx(1e12, rel=1e-6)

    def test_indefinite_raises(self):
        with pytest.raises(NumericalError):
            opt.update_aux(np.diag([1.0, -1.0])[None])


class TestPower:
    def test_all_negative_b(self):
        p, mu = opt.bisect_power(np.ones(3), -np.ones(3), 1.0)
        assert np.array_equal(p, np.zeros(3)) and mu == 0.0

    def test_interior(self):
        p, mu = opt.bisect_power(np.array([1.0]), np.array([1.0]), 4.0)
        assert p == pytest.approx([1.0]) and mu == 0.0

    def test_symmetric_kkt(self):
        p, mu = opt.bisect_power(np.array([1.0, 1.0]), np.array([2.0, 2.0]), 2.0, tol=1e-12)
        assert p == pytest.approx([1.0, 1.0], rel=1e-6)
        assert mu == pytest.approx(1.0, rel=1e-6)
        oracle = grid_power_oracle(np.array([1.0, 1.0]), np.array([2.0, 2.0]), 2.0)
        assert power_objective(np.ones(2), 2 * np.ones(2), p) <= oracle + 1e-4 * abs(oracle)

    def test_dead_stream_warns(self):
        with pytest.warns(RuntimeWarning):
            p, _ = opt.bisect_power(np.array([0.0, 1.0]), np.array([1.0, 1.0]), 10.0)
        assert p[0] == 0.0 and p[1] == pytest.approx(1.0)

    def test_zero_budget(self):
        p, mu = opt.bisect_power(np.ones(2), np.ones(2), 0.0)
        assert np.array_equal(p, np.zeros(2)) and mu == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_feasibility_and_slackness(self, dim, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(0.01, 2, dim), rng.normal(size=dim)
        budget = float(rng.uniform(0.1, 5))
        p, mu = opt.bisect_power(a, b, budget)
        assert np.all(p >= 0)
        assert np.sum(p ** 2) <= budget * (1 + 1e-9)
        assert abs(mu * (np.sum(p ** 2) - budget)) <= 1e-6 * budget * max(mu, 1.0)

    def test_grid_oracle(self):
        rng = np.random.default_rng(3)
        for dim in (1, 2, 3, 4):
            a, b = rng.uniform(0.05, 1, dim), rng.uniform(-0.5, 2, dim)
            p, _ = opt.bisect_power(a, b, 1.0)
            oracle = grid_power_oracle(a, b, 1.0, max_points=300_000)
            assert power_objective(a, b, p) <= oracle + 1e-4 * abs(oracle)

    def test_coefficients_reproduce_weighted_mse(self):
        # Σ η tr(Z E) = Σ a p^2 - 2 Σ b p + const for every p
        rng = np.random.default_rng(4)
        t = crandn(rng, 6, 6)
        u = crandn(rng, 3, 2, 2)
        z = np.stack([random_hpd(rng, 2) for _ in range(3)])
        eta = rng.uniform(0.5, 2, 3)
        a, b = opt.power_coefficients(t, u, z, eta)

        def wmse(p):
            return sum(eta[k] * np.trace(z[k] @ mse_matrix(u[k], t, p, k, 0.1)).real for k in range(3))
        p1, p2 = rng.uniform(0, 1, (3, 2)), rng.uniform(0, 1, (3, 2))
        lhs = wmse(p1) - wmse(p2)
        assert lhs == pytest.approx(power_objective(a, b, p1) - power_objective(a, b, p2), rel=1e-10)
        a_pr, _ = opt.power_coefficients(t, u, z, eta, printed=True)
        assert not np.allclose(a_pr, a)
        assert np.allclose(a_pr, a_pr[0])

    def test_solve_power_allocation(self):
        rng = np.random.default_rng(5)
        t, u = crandn(rng, 4, 4), crandn(rng, 2, 2, 2)
        z = np.stack([random_hpd(rng, 2) for _ in range(2)])
        sol = opt.solve_power(t, u, z, np.ones(2), 0.5)
        assert sol.total <= 0.5 * (1 + 1e-9)
        assert sol.amplitudes.shape == (2, 2)

    def test_equal_allocation(self):
        pa = opt.PowerAllocation.equal(4, 2, 0.01)
        assert pa.total == pytest.approx(0.01)
        assert np.all(pa.amplitudes == pa.amplitudes[0, 0])


class TestPhaseObjective:
    def test_zero_power_or_combiner(self):
        inst = random_phase_instance(np.random.default_rng(6))
        ch = inst.channels
        g = inst.g
        for p, u in ((0 * inst.p, inst.u), (inst.p, 0 * inst.u)):
            c, d, e_bar = opt.phase_aggregates(ch.users, ch.feed, u, inst.z, p, inst.eta)
            assert opt.phase_objective(g, c, d, e_bar) == pytest.approx(0.0, abs=1e-14)

    def test_direct_mse_oracle(self):
        rng = np.random.default_rng(7)
        inst = random_phase_instance(rng, n=6, layers=3, k=2, m=2)
        ch = inst.channels
        c, d, e_bar = opt.phase_aggregates(ch.users, ch.feed, inst.u, inst.z, inst.p, inst.eta)
        const = opt.mse_constant(inst.u, inst.z, inst.noise_var, inst.eta)
        for _ in range(10):
            ph = inst.phases.with_layer(1, np.exp(1j * rng.uniform(0, 2 * np.pi, 6)))
            f = opt.phase_objective(assemble_cascade(ph, ch.inter), c, d, e_bar)
            assert f + const == pytest.approx(direct_weighted_mse(inst, ph), rel=1e-11)

    def test_printed_aggregate_breaks_identity(self):
        rng = np.random.default_rng(8)
        inst = random_phase_instance(rng, n=5, layers=2, k=3, m=2)
        ch = inst.channels
        c, d, e_bar = opt.phase_aggregates(ch.users, ch.feed, inst.u, inst.z, inst.p, inst.eta, printed=True)
        const = opt.mse_constant(inst.u, inst.z, inst.noise_var, inst.eta)
        f = opt.phase_objective(inst.g, c, d, e_bar)
        assert abs(f + const - direct_weighted_mse(inst, inst.phases)) > 1e-6


class TestPhaseGradient:
    def test_zero_power(self):
        inst = random_phase_instance(np.random.default_rng(9))
        inst.p[:] = 0
        c, d, e_bar, r, j = full_forms(inst, 0)
        assert np.allclose(opt.phase_gradient(r, j, inst.g, c, d, e_bar), 0.0, atol=0)

    def test_small_fd(self):
        inst = random_phase_instance(np.random.default_rng(10), n=4, layers=2, k=1, m=1)
        for l in range(2):
            c, d, e_bar, r, j = full_forms(inst, l)
            grad = opt.phase_gradient(r, j, inst.g, c, d, e_bar)
            fd = theta_fd(layer_fun(inst, l), inst.phases.theta[l].copy())
            ana = theta_derivative(grad, inst.phases.phi[l])
            assert np.linalg.norm(ana - fd) <= 1e-5 * np.linalg.norm(fd)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_fd_random(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_phase_instance(rng)
        l = int(rng.integers(inst.channels.layers))
        c, d, e_bar, r, j = full_forms(inst, l)
        quad, lin = opt.phase_gradient(r, j, inst.g, c, d, e_bar, split=True)
        theta = inst.phases.theta[l].copy()
        phi = inst.phases.phi[l]
        fd = theta_fd(layer_fun(inst, l), theta)
        assert np.linalg.norm(theta_derivative(quad + lin, phi) - fd) <= 1e-5 * np.linalg.norm(fd)
        fd_q = theta_fd(layer_fun(inst, l, "quad"), theta)
        assert np.linalg.norm(theta_derivative(quad, phi) - fd_q) <= 1e-5 * np.linalg.norm(fd_q)
        assert np.allclose(opt.quadratic_gradient(r, j, inst.g, c, d), quad, rtol=1e-10, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_layer_problem_matches_full_forms(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_phase_instance(rng)
        ch = inst.channels
        phi = inst.phases.phi
        hr = opt._backward_rows(ch.stacked_users(), ch.inter, phi)
        jw = opt._forward_cols(ch.feed, ch.inter, phi)
        for l in range(ch.layers):
            prob = opt.LayerProblem(hr[l], jw[l], inst.u, inst.z, inst.p, inst.eta)
            c, d, e_bar, r, j = full_forms(inst, l)
            g = inst.g
            assert prob.objective(phi[l]) == pytest.approx(opt.phase_objective(g, c, d, e_bar),
                                                           rel=1e-10, abs=1e-10)
            assert np.allclose(prob.gradient(phi[l]), opt.phase_gradient(r, j, g, c, d, e_bar),
                               rtol=1e-9, atol=1e-10)
            assert np.allclose(prob.cross(phi[l]), ch.stacked_users() @ g @ ch.feed, rtol=1e-10, atol=1e-12)


class TestArmijo:
    def test_zero_gradient_fixed_point(self):
        phi = np.exp(1j * np.arange(3.0))
        x, mu, tries, ok = opt.armijo_step(phi, lambda v: 0.0, lambda v: np.zeros(3), opt.BcdConfig())
        assert x is phi and ok and tries == 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_sufficient_decrease_on_quadratic(self, seed):
        rng = np.random.default_rng(seed)
        inst = random_phase_instance(rng)
        l = int(rng.integers(inst.channels.layers))
        c, d, _, r, j = full_forms(inst, l)
        phases = inst.phases
        inter = inst.channels.inter

        def quad(v):
            g = assemble_cascade(phases.with_layer(l, v), inter)
            return float(np.real(np.trace(g.conj().T @ c @ g @ d)))

        def grad(v):
            g = assemble_cascade(phases.with_layer(l, v), inter)
            return opt.quadratic_gradient(r, j, g, c, d)

        phi = phases.phi[l]
        x, mu, _, ok = opt.armijo_step(phi, quad, grad, opt.BcdConfig())
        assert ok
        assert np.allclose(np.abs(x), 1.0, atol=1e-12)
        step = x - phi
        assert quad(x) <= quad(phi) - np.vdot(step, step).real / (2 * mu) + 1e-12 * abs(quad(phi))
        assert quad(x) < quad(phi)

    def test_exhausted_backtracking_keeps_iterate(self):
        phi = np.exp(1j * np.array([0.1, 0.2]))
        cfg = opt.BcdConfig(max_backtracks=3)
        x, _, tries, ok = opt.armijo_step(phi, lambda v: float(np.sum(np.abs(v - phi))),
                                          lambda v: np.array([1.0, -1.0]), cfg)
        assert not ok and tries == 3 and x is phi


class TestUpdatePhases:
    @pytest.mark.parametrize("order", ["forward", "reverse"])
    @pytest.mark.parametrize("rule", ["fixed", "bb"])
    def test_sweep_never_increases_f(self, order, rule):
        rng = np.random.default_rng(11)
        for _ in range(10):
            inst = random_phase_instance(rng)
            cfg = opt.BcdConfig(sweep_order=order, step_rule=rule, inner_phase_steps=3)
            before = direct_weighted_mse(inst, inst.phases)
            after_state = opt.update_phases(inst.phases, inst.channels, inst.u, inst.z, inst.p,
                                            inst.eta, cfg)
            after = direct_weighted_mse(inst, after_state)
            assert after <= before + 1e-10 * abs(before)
            assert np.allclose(np.abs(after_state.phi), 1.0, atol=1e-12)

    def test_zero_inner_steps_is_identity(self):
        inst = random_phase_instance(np.random.default_rng(12))
        out = opt.update_phases(inst.phases, inst.channels, inst.u, inst.z, inst.p, inst.eta,
                                opt.BcdConfig(inner_phase_steps=0))
        assert np.allclose(out.theta, inst.phases.theta)

    def test_cross_channel(self):
        inst = random_phase_instance(np.random.default_rng(13))
        ch = inst.channels
        assert np.allclose(opt.cross_channel(ch, inst.phases), ch.stacked_users() @ inst.g @ ch.feed)


def small_scenario(k=2, m=2, n=16, layers=2, trial=0):
    spec = ScenarioSpec(users=k, user_antennas=m, elements=n, layers=layers, bs_antennas=k * m)
    return generate_scenario(spec, trial)


NOISE = SystemConfig().noise_var


class TestRunBcd:
    def test_zero_budget(self):
        sc = small_scenario()
        res = opt.run_bcd(sc.channels, NOISE, 0.0, rng=np.random.default_rng(0))
        assert res.iterations == 1 and res.converged
        assert res.trace.records[0].objective == 0.0 and res.wsr == 0.0

    def test_single_user_improves(self):
        sc = small_scenario(k=1, m=1, n=4, layers=1)
        res = opt.run_bcd(sc.channels, NOISE, 0.01, rng=np.random.default_rng(1))
        assert res.wsr >= res.trace.initial_wsr

    def test_beats_random_search(self):
        sc = small_scenario()
        rng = np.random.default_rng(2)
        res = opt.run_bcd(sc.channels, NOISE, 0.01, rng=rng)
        p = opt.PowerAllocation.equal(2, 2, 0.01).amplitudes
        best = max(weighted_sum_rate(opt.cross_channel(sc.channels, PhaseState.random(2, 16, rng)),
                                     p, NOISE) for _ in range(200))
        assert res.wsr >= best

    def test_trace_invariants(self):
        sc = small_scenario(trial=3)
        res = opt.run_bcd(sc.channels, NOISE, 0.01, rng=np.random.default_rng(3))
        recs = res.trace.records
        chain = [res.trace.initial_wsr]
        for r in recs:
            chain += [r.objective_after_uz, r.objective, r.wsr]
        for a, b in zip(chain, chain[1:]):
            assert b >= a - 1e-6 * abs(a)
        obj = res.trace.objectives()
        assert np.all(np.diff(obj) >= -1e-6 * np.abs(obj[:-1]))
        assert res.power.total <= 0.01 * (1 + 1e-9)
        assert abs(res.power.multiplier * (res.power.total - 0.01)) <= 1e-6 * 0.01 * max(res.power.multiplier, 1)

    def test_deterministic(self):
        sc = small_scenario(trial=4)
        a = opt.run_bcd(sc.channels, NOISE, 0.01, rng=np.random.default_rng(9))
        b = opt.run_bcd(sc.channels, NOISE, 0.01, rng=np.random.default_rng(9))
        assert a.phases == b.phases
        assert np.array_equal(a.trace.rates(), b.trace.rates())

    def test_nan_channel_aborts(self):
        sc = small_scenario()
        bad = ChannelSet(sc.channels.inter, sc.channels.feed * np.nan, sc.channels.users)
        with pytest.raises(opt.BcdAbort) as info:
            opt.run_bcd(bad, NOISE, 0.01, rng=np.random.default_rng(0))
        assert "phases" in info.value.state
        assert isinstance(info.value, NumericalError)

    def test_warm_start_from_given_point(self):
        sc = small_scenario(trial=5)
        first = opt.run_bcd(sc.channels, NOISE, 0.01, rng=np.random.default_rng(0))
        again = opt.run_bcd(sc.channels, NOISE, 0.01, phases=first.phases, power=first.power)
        assert again.trace.initial_wsr == pytest.approx(first.wsr, rel=1e-9)
        assert again.wsr >= first.wsr - 1e-9

    def test_trace_csv(self, tmp_path):
        sc = small_scenario()
        res = opt.run_bcd(sc.channels, NOISE, 0.01, config=opt.BcdConfig(max_outer=5),
                          rng=np.random.default_rng(0))
        path = tmp_path / "trace.csv"
        res.trace.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iteration,objective,wsr,mu,backtracks,millis"
        assert len(lines) == res.iterations + 1
        assert float(lines[-1].split(",")[2]) == res.wsr


def test_uz_update_gives_rate():
    # after the U/Z block the surrogate equals the rate at the current point
    sc = small_scenario(trial=6)
    rng = np.random.default_rng(0)
    phases = PhaseState.random(2, 16, rng)
    t = opt.cross_channel(sc.channels, phases)
    p = opt.PowerAllocation.equal(2, 2, 0.01).amplitudes
    u = opt.update_combiners(t, p, NOISE)
    z = opt.update_aux(mse_matrices(u, t, p, NOISE))
    wsr = weighted_sum_rate(t, p, NOISE)
    assert abs(wmmse_objective(z, u, t, p, NOISE) - wsr) <= 1e-6 * wsr
