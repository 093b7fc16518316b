import numpy as np
import pytest

from pareto_beam import channel as chan
from pareto_beam import optimizer as opt
from pareto_beam.exceptions import ConfigurationError
from pareto_beam.manifold import SimplexPoint, StiefelPoint

from conftest import make_params


def utility_oracle(ch, rb, u_list, lam_list, w):
    """Weighted sum rate through the naive inverse+determinant path."""
    qs = []
    for i in range(ch.K):
        b = rb[i].Upsilon @ u_list[i]
        qs.append((b * lam_list[i]) @ b.conj().T)
    total = 0.0
    for i in range(ch.K):
        phi = np.eye(ch.M[i], dtype=complex)
        for j in range(ch.K):
            if j != i:
                phi = phi + ch.H[i][j] @ qs[j] @ ch.H[i][j].conj().T
        sig = ch.H[i][i] @ qs[i] @ ch.H[i][i].conj().T
        det = np.linalg.det(np.eye(ch.M[i]) + np.linalg.inv(phi) @ sig)
        total += w[i] * float(np.log(np.real(det)))
    return total


def fd_directional(ch, rb, u_list, lam_list, w, k, du=None, dlam=None, h=1e-5):
    def at(sign):
        us = list(u_list)
        ls = list(lam_list)
        if du is not None:
            us[k] = u_list[k] + sign * h * du
        if dlam is not None:
            ls[k] = lam_list[k] + sign * h * dlam
        return utility_oracle(ch, rb, us, ls, w)

    return (at(+1) - at(-1)) / (2 * h)


def fd_with_noise(ch, rb, u_list, lam_list, w, k, du=None, dlam=None, h=1e-5):
    """Central difference plus an estimate of its own rounding-noise floor."""

    def at(sign):
        us = list(u_list)
        ls = list(lam_list)
        if du is not None:
            us[k] = u_list[k] + sign * h * du
        if dlam is not None:
            ls[k] = lam_list[k] + sign * h * dlam
        return utility_oracle(ch, rb, us, ls, w)

    up, down = at(+1), at(-1)
    noise = 16 * np.finfo(float).eps * max(abs(up), abs(down), 1.0) / (2 * h)
    return (up - down) / (2 * h), noise


def fd_agrees(fd, analytic, noise, rtol=1e-4):
    """True when the analytic value matches the difference quotient up to the
    stated relative tolerance or within the quotient's own noise floor."""
    return abs(fd - analytic) <= max(rtol * max(abs(fd), abs(analytic)), noise)


def tangent_noise(rng, u):
    z = chan.complex_gaussian(rng, *u.shape)
    a = u.conj().T @ z
    return z - u @ (0.5 * (a + a.conj().T))


def wf_capacity(h, power):
    """Water-filling capacity in nats by bisection on the water level."""
    gains = np.linalg.svd(h, compute_uv=False) ** 2
    gains = gains[gains > 0]
    lo, hi = 0.0, power + float(np.max(1.0 / gains))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sum(np.maximum(mid - 1.0 / gains, 0.0)) > power:
            hi = mid
        else:
            lo = mid
    alloc = np.maximum(mid - 1.0 / gains, 0.0)
    return float(np.sum(np.log1p(alloc * gains)))


class TestWsrUtility:
    def test_zero_power(self, two_user_channel):
        ch = two_user_channel
        rb = [chan.reduced_basis(ch, i) for i in range(2)]
        us = tuple(
            StiefelPoint(np.eye(rb[i].rank_m, ch.M[i], dtype=complex))
            for i in range(2)
        )
        ls = tuple(
            SimplexPoint(np.zeros(ch.M[i]), ch.P[i], exact_budget=False)
            for i in range(2)
        )
        params = opt.BeamParams(U=us, lam=ls)
        assert opt.wsr_utility(ch, rb, params, (0.5, 0.5)) == 0.0

    def test_degenerate_weights_silent_partner(self, two_user_channel, rng):
        ch = two_user_channel
        rb = [chan.reduced_basis(ch, i) for i in range(2)]
        params = make_params(ch, rb, rng)
        silent = SimplexPoint(np.zeros(ch.M[1]), ch.P[1], exact_budget=False)
        params = opt.BeamParams(U=params.U, lam=(params.lam[0], silent))
        got = opt.wsr_utility(ch, rb, params, (1.0, 0.0))
        q0 = chan.covariance_arrays(rb[0], params.U[0].U, params.lam[0].lam)
        zeros = np.zeros((ch.N, ch.N), dtype=complex)
        single = chan.rates(ch, [q0, zeros]).rates[0]
        assert abs(got - single) < 1e-12

    def test_compositional_identity(self, three_user_channel, rng):
        ch = three_user_channel
        rb = [chan.reduced_basis(ch, i) for i in range(3)]
        params = make_params(ch, rb, rng)
        w = (0.2, 0.5, 0.3)
        got = opt.wsr_utility(ch, rb, params, w)
        qs = [
            chan.covariance_from_params(
                rb[i], params.U[i].U, params.lam[i].lam, budget=ch.P[i]
            )
            for i in range(3)
        ]
        want = float(np.dot(w, chan.rates(ch, qs).rates))
        assert abs(got - want) < 1e-12


class TestGradients:
    @pytest.mark.parametrize(
        "K,N,M", [(1, 4, (2,)), (2, 5, (2, 2)), (3, 6, (2, 2, 1))]
    )
    def test_grad_U_matches_finite_differences(self, K, N, M):
        rng = np.random.default_rng(hash((K, N)) % 2**32)
        ch = chan.generate_channels(K, N, M, tuple(5.0 for _ in range(K)), seed=K)
        rb = [chan.reduced_basis(ch, i) for i in range(K)]
        params = make_params(ch, rb, rng)
        u_list = [p.U for p in params.U]
        lam_list = [s.lam for s in params.lam]
        w = opt.equal_weights(K)
        for k in range(K):
            g = opt.grad_U(ch, rb, params, w, k)
            for _ in range(10 if K == 2 else 4):
                delta = tangent_noise(rng, u_list[k])
                fd = fd_directional(ch, rb, u_list, lam_list, w, k, du=delta)
                analytic = 2.0 * float(np.real(np.vdot(g, delta)))
                assert abs(fd - analytic) <= 1e-4 * max(abs(fd), 1e-8)

    def test_grad_Lambda_matches_finite_differences(self):
        rng = np.random.default_rng(99)
        ch = chan.generate_channels(3, 7, (2, 2, 2), (4.0, 6.0, 8.0), seed=31)
        rb = [chan.reduced_basis(ch, i) for i in range(3)]
        params = make_params(ch, rb, rng)
        u_list = [p.U for p in params.U]
        lam_list = [s.lam for s in params.lam]
        w = (0.4, 0.4, 0.2)
        for k in range(3):
            g = opt.grad_Lambda(ch, rb, params, w, k)
            for l in range(ch.M[k]):
                e = np.zeros(ch.M[k])
                e[l] = 1.0
                fd = fd_directional(ch, rb, u_list, lam_list, w, k, dlam=e)
                assert abs(fd - g[l]) <= 1e-5 * max(abs(fd), 1e-8)

    def test_small_power_marginal_is_mode_gain(self):
        # single user, powers near zero: the power partial of each stream
        # approaches the effective channel gain of its column
        ch = chan.generate_channels(1, 4, (2,), (1.0,), seed=17)
        rb = [chan.reduced_basis(ch, 0)]
        rng = np.random.default_rng(5)
        g = chan.complex_gaussian(rng, rb[0].rank_m, 2)
        u, _ = np.linalg.qr(g)
        lam = np.full(2, 1e-9)
        params = opt.BeamParams(
            U=(StiefelPoint(u),),
            lam=(SimplexPoint(lam, 1.0, exact_budget=False),),
        )
        grad = opt.grad_Lambda(ch, rb, params, (1.0,), 0)
        eff = ch.H[0][0] @ rb[0].Upsilon @ u
        for l in range(2):
            gain = float(np.linalg.norm(eff[:, l]) ** 2)
            assert abs(grad[l] - gain) <= 1e-6 * gain

    def test_unweighted_nonvictim_user_has_zero_gradient(self):
        rng = np.random.default_rng(2)
        h00 = chan.complex_gaussian(rng, 2, 5)
        h01 = chan.complex_gaussian(rng, 2, 5)
        h10 = np.zeros((2, 5), dtype=complex)  # user 0 cannot hurt user 1
        h11 = chan.complex_gaussian(rng, 2, 5)
        ch = chan.ChannelSet(
            K=2, N=5, M=(2, 2), H=((h00, h01), (h10, h11)), P=(3.0, 3.0)
        )
        rb = [chan.reduced_basis(ch, i) for i in range(2)]
        params = make_params(ch, rb, rng)
        w = (0.0, 1.0)
        assert np.max(np.abs(opt.grad_U(ch, rb, params, w, 0))) == 0.0
        assert np.max(np.abs(opt.grad_Lambda(ch, rb, params, w, 0))) == 0.0

    def test_shipped_selfcheck(self):
        assert opt.gradient_selfcheck(seed=1) < 1e-4


class TestInnerSolve:
    def test_stationary_entry_returns_immediately(self):
        ch = chan.generate_channels(1, 1, (1,), (2.0,), seed=1)
        rb = [chan.reduced_basis(ch, 0)]
        params = opt.default_params(ch, rb, exact_budget=True)
        cfg = opt.SolverConfig(weights=(1.0,))
        res = opt.inner_solve(ch, rb, params, (1.0,), 0, cfg)
        assert res.converged
        assert len(res.utilities) == 2  # entry value plus one confirming pass
        assert res.utilities[0] == res.utilities[-1]

    def test_scalar_channel_optimum(self):
        ch = chan.generate_channels(1, 1, (1,), (2.0,), seed=1)
        rb = [chan.reduced_basis(ch, 0)]
        params = opt.default_params(ch, rb, exact_budget=True)
        cfg = opt.SolverConfig(weights=(1.0,))
        res = opt.inner_solve(ch, rb, params, (1.0,), 0, cfg)
        h2 = float(np.abs(ch.H[0][0][0, 0]) ** 2)
        assert abs(res.utilities[-1] - np.log(1 + 2.0 * h2)) < 1e-6

    def test_miso_trace_monotone(self, rng):
        ch = chan.generate_channels(2, 2, (1, 1), (5.0, 5.0), seed=3)
        rb = [chan.reduced_basis(ch, i) for i in range(2)]
        params = make_params(ch, rb, rng)
        cfg = opt.SolverConfig(weights=(0.5, 0.5))
        res = opt.inner_solve(ch, rb, params, (0.5, 0.5), 0, cfg)
        diffs = np.diff(res.utilities)
        assert diffs.size == 0 or diffs.min() >= -1e-12

    def test_never_worse_than_entry(self, rng):
        ch = chan.generate_channels(3, 6, (2, 2, 1), (4.0, 4.0, 4.0), seed=8)
        rb = [chan.reduced_basis(ch, i) for i in range(3)]
        w = opt.equal_weights(3)
        cfg = opt.SolverConfig(weights=w)
        for k in range(3):
            params = make_params(ch, rb, rng)
            entry = opt.wsr_utility(ch, rb, params, w)
            res = opt.inner_solve(ch, rb, params, w, k, cfg)
            after = opt.wsr_utility(
                ch, rb, params.replaced(k, res.U, res.lam), w
            )
            assert after >= entry - 1e-12


class TestSolve:
    def test_single_user_matches_water_filling(self):
        for seed in range(3):
            ch = chan.generate_channels(1, 5, (2,), (10.0,), seed=seed)
            cfg = opt.SolverConfig(weights=(1.0,))
            trace = opt.solve(ch, cfg)
            cap = wf_capacity(ch.H[0][0], 10.0)
            assert (cap - trace.final_utility()) / np.log(2) < 1e-3
            # never below the equal-power eigen-beam rate
            sp = np.linalg.svd(ch.H[0][0], compute_uv=False)
            equal_power = float(np.sum(np.log1p(5.0 * sp**2)))
            assert trace.final_utility() >= equal_power - 1e-9

    def test_decoupled_users_reach_water_filling(self, rng):
        h00 = chan.complex_gaussian(rng, 2, 6)
        h11 = chan.complex_gaussian(rng, 2, 6)
        zero = np.zeros((2, 6), dtype=complex)
        ch = chan.ChannelSet(
            K=2, N=6, M=(2, 2), H=((h00, zero), (zero, h11)), P=(8.0, 8.0)
        )
        cfg = opt.SolverConfig(weights=(0.5, 0.5))
        trace = opt.solve(ch, cfg)
        for i, h in enumerate((h00, h11)):
            want = wf_capacity(h, 8.0)
            got = trace.rates[-1][i]
            assert (want - got) / np.log(2) < 1e-3

    def test_three_user_convergence(self):
        ch = chan.generate_channels(3, 8, (2, 2, 2), (30.0,) * 3, seed=2)
        cfg = opt.SolverConfig(weights=opt.equal_weights(3))
        trace = opt.solve(ch, cfg)
        assert trace.converged
        assert trace.n_outer <= 200
        diffs = np.diff(trace.utilities)
        assert diffs.min() >= -1e-9

    def test_certified_structure_at_convergence(self, two_user_channel):
        from pareto_beam.verify import check_pareto_necessary

        cfg = opt.SolverConfig(weights=(0.5, 0.5))
        trace = opt.solve(two_user_channel, cfg)
        for rep in check_pareto_necessary(two_user_channel, trace.covariances):
            assert rep.subspace_residual <= 1e-8
            assert abs(rep.power_gap) <= 1e-6

    def test_deterministic_with_restarts(self, two_user_channel):
        cfg = opt.SolverConfig(weights=(0.5, 0.5))
        t1 = opt.solve(two_user_channel, cfg, restarts=2, seed=5)
        t2 = opt.solve(two_user_channel, cfg, restarts=2, seed=5)
        assert t1.utilities == t2.utilities
        for a, b in zip(t1.params.U, t2.params.U):
            assert np.array_equal(a.U, b.U)

    def test_weight_count_checked(self, two_user_channel):
        cfg = opt.SolverConfig(weights=(1.0,))
        with pytest.raises(ConfigurationError):
            opt.solve(two_user_channel, cfg)

    def test_trace_shapes(self, two_user_channel):
        cfg = opt.SolverConfig(weights=(0.5, 0.5))
        trace = opt.solve(two_user_channel, cfg)
        n_rows = len(trace.utilities)
        assert len(trace.rates) == n_rows
        assert len(trace.grad_norms) == n_rows
        assert len(trace.lambdas) == n_rows
        assert len(trace.stream_ranks) == 2
        assert len(trace.beamformers) == 2
        for i, gamma in enumerate(trace.beamformers):
            assert gamma.shape[0] == two_user_channel.N
            assert gamma.shape[1] == trace.stream_ranks[i]
        assert trace.wall_time > 0

    def test_monotone_over_random_instances(self):
        for seed in range(8):
            K = 2 + seed % 2
            M = (2,) * K
            ch = chan.generate_channels(K, 2 * K + 2, M, (5.0,) * K, seed=seed)
            cfg = opt.SolverConfig(weights=opt.equal_weights(K))
            trace = opt.solve(ch, cfg)
            diffs = np.diff(trace.utilities)
            assert diffs.size == 0 or diffs.min() >= -1e-9

    def test_half_space_mode(self):
        # fewer transmit antennas than total receive antennas: the power
        # constraint relaxes to a ceiling and full spend is no longer forced
        from pareto_beam.baselines import eigen_beamforming
        from pareto_beam.verify import check_pareto_necessary

        for seed in range(3):
            ch = chan.generate_channels(3, 4, (2, 2, 2), (5.0,) * 3, seed=seed)
            w = opt.equal_weights(3)
            trace = opt.solve(ch, opt.SolverConfig(weights=w))
            assert not trace.exact_budget_mode
            assert trace.converged
            diffs = np.diff(trace.utilities)
            assert diffs.min() >= -1e-9
            for point, budget in zip(trace.params.lam, ch.P):
                assert np.all(point.lam >= 0)
                assert point.lam.sum() <= budget + 1e-10
            eig = [eigen_beamforming(ch, i) for i in range(3)]
            u_eig = float(np.dot(w, chan.rates(ch, eig).rates))
            assert trace.final_utility() >= u_eig - 1e-9
            for rep in check_pareto_necessary(ch, trace.covariances):
                assert rep.subspace_residual <= 1e-8


class TestSolverConfig:
    def test_weight_validation(self):
        with pytest.raises(ConfigurationError):
            opt.SolverConfig(weights=(0.5, 0.6))
        with pytest.raises(ConfigurationError):
            opt.SolverConfig(weights=(-0.1, 1.1))
        with pytest.raises(ConfigurationError):
            opt.SolverConfig(weights=(0.5, 0.5), eps_outer=0.0)
