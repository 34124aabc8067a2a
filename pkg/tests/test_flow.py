import numpy as np
import pytest

from filamentlab.flow import (
    FlowConfig,
    FlowError,
    evolve,
    evolve_batch,
    evolve_dense,
    export_trajectory_csv,
    gauge,
    jacobian_fd,
    nonlinear_sum,
    rhs,
    smoothing_increment,
)
from filamentlab.spectral import CoefficientState, mass, mode_indices

TIGHT = FlowConfig(rtol=1e-12, atol=1e-12)


def decaying_state(rng, N, scale=0.5, t=1.0):
    B = scale * (rng.normal(size=2 * N + 1) + 1j * rng.normal(size=2 * N + 1)) \
        / (1.0 + mode_indices(N) ** 2)
    return CoefficientState(t=t, N=N, B=B)


def closed_form_resonant(a, k_abs2_minus, M, t):
    # mode with |a_k|^2 on a fully resonant sector rotates by (2M - |a_k|^2) ln t
    return a * np.exp(-1j * (2 * M - k_abs2_minus) * np.log(t))


class TestRhs:
    def test_zero_state(self):
        st = CoefficientState(t=1.0, N=3, B=np.zeros(7, dtype=complex))
        assert np.all(rhs(st) == 0)

    def test_single_resonant_term(self):
        a = 0.7 - 0.2j
        st = CoefficientState(t=2.0, N=0, B=np.array([a]))
        assert rhs(st)[0] == pytest.approx(-1j / 2.0 * abs(a) ** 2 * a)

    @pytest.mark.parametrize("N", [1, 4, 16])
    def test_direct_vs_dealiased(self, N):
        rng = np.random.default_rng(N)
        st = decaying_state(rng, N, scale=1.0)
        direct = nonlinear_sum(st.t, st.B, N, dealias=False)
        trans = nonlinear_sum(st.t, st.B, N, dealias=True)
        assert np.max(np.abs(direct - trans)) <= 1e-11

    def test_direct_vs_dealiased_batch(self):
        rng = np.random.default_rng(5)
        B = np.stack([decaying_state(rng, 6).B for _ in range(4)])
        direct = nonlinear_sum(1.3, B, 6, dealias=False)
        trans = nonlinear_sum(1.3, B, 6, dealias=True)
        assert np.max(np.abs(direct - trans)) <= 1e-12

    def test_brute_force_triple_sum_oracle(self):
        # independent O(N^3) loop, written from the interaction definition
        rng = np.random.default_rng(9)
        N = 3
        st = decaying_state(rng, N, scale=1.0, t=1.7)
        expect = np.zeros(2 * N + 1, dtype=complex)
        for k in range(-N, N + 1):
            for j1 in range(-N, N + 1):
                for j2 in range(-N, N + 1):
                    j3 = k - j1 + j2
                    if abs(j3) > N:
                        continue
                    w = k * k - j1 * j1 + j2 * j2 - j3 * j3
                    expect[k + N] += np.exp(-1j * st.t * w) * st.B[j1 + N] * \
                        np.conj(st.B[j2 + N]) * st.B[j3 + N]
        expect *= -1j / st.t
        assert np.max(np.abs(rhs(st) - expect)) <= 1e-13


class TestEvolve:
    def test_single_mode_closed_form(self):
        a = 0.7 + 0.2j
        st = CoefficientState(t=1.0, N=0, B=np.array([a]))
        for t in (2.0, 10.0, 100.0):
            out = evolve(st, t, TIGHT)
            exact = a * np.exp(-1j * abs(a) ** 2 * np.log(t))
            assert abs(out.B[0] - exact) <= 1e-8

    def test_two_mode_fully_resonant_sector(self):
        a, b = 0.5 + 0.1j, -0.3 + 0.4j
        st = CoefficientState(t=1.0, N=1, B=np.array([0.0, a, b]))
        M = abs(a) ** 2 + abs(b) ** 2
        out = evolve(st, 50.0, TIGHT, active=(0, 1))
        assert abs(out.B[1] - closed_form_resonant(a, abs(a) ** 2, M, 50.0)) <= 1e-8
        assert abs(out.B[2] - closed_form_resonant(b, abs(b) ** 2, M, 50.0)) <= 1e-8
        assert abs(out.B[0]) <= 1e-10

    def test_symmetric_truncation_excites_third_mode(self):
        # without the mode mask the pair {0, 1} is not invariant
        a, b = 0.5 + 0.1j, -0.3 + 0.4j
        st = CoefficientState(t=1.0, N=1, B=np.array([0.0, a, b]))
        out = evolve(st, 5.0, TIGHT)
        assert abs(out.B[0]) > 1e-3

    def test_round_trip(self):
        rng = np.random.default_rng(3)
        st = decaying_state(rng, 6)
        cfg = FlowConfig(rtol=1e-11, atol=1e-11)
        back = evolve(evolve(st, 10.0, cfg), 1.0, cfg)
        assert np.sqrt(np.sum(np.abs(back.B - st.B) ** 2)) <= 1e-8

    def test_flow_property(self):
        rng = np.random.default_rng(4)
        st = decaying_state(rng, 4)
        cfg = FlowConfig(rtol=1e-11, atol=1e-11)
        two_leg = evolve(evolve(st, 4.0, cfg), 10.0, cfg)
        one_leg = evolve(st, 10.0, cfg)
        assert np.sqrt(np.sum(np.abs(two_leg.B - one_leg.B) ** 2)) <= 1e-7

    def test_mass_conservation(self):
        rng = np.random.default_rng(6)
        st = decaying_state(rng, 16)
        cfg = FlowConfig(rtol=1e-11, atol=1e-11)
        traj = evolve_dense(st, np.geomspace(1, 100, 8), cfg)
        assert np.max(np.abs(traj.mass_series - traj.mass_series[0])) <= 1e-9

    def test_fixed_rk4_matches_adaptive(self):
        rng = np.random.default_rng(7)
        st = decaying_state(rng, 4)
        fixed = evolve(st, 2.0, FlowConfig(scheme="fixed_rk4", max_step=1e-3))
        adapt = evolve(st, 2.0, TIGHT)
        assert np.max(np.abs(fixed.B - adapt.B)) <= 1e-6

    def test_bad_target_time(self):
        st = CoefficientState(t=1.0, N=0, B=np.array([0.1 + 0j]))
        with pytest.raises(ValueError):
            evolve(st, -1.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FlowConfig(rtol=0.0)
        with pytest.raises(ValueError):
            FlowConfig(scheme="leapfrog")
        with pytest.raises(ValueError):
            FlowConfig(scheme="fixed_rk4")  # needs finite max_step


class TestEvolveDense:
    def test_single_entry_ladder(self):
        st = CoefficientState(t=1.0, N=0, B=np.array([0.5 + 0j]))
        traj = evolve_dense(st, np.array([1.0]))
        assert len(traj.states) == 1
        assert traj.states[0] is st

    def test_matches_independent_evolutions(self):
        rng = np.random.default_rng(8)
        st = decaying_state(rng, 5)
        cfg = FlowConfig(rtol=1e-11, atol=1e-11)
        times = np.array([1.0, 2.5, 5.0, 9.0])
        traj = evolve_dense(st, times, cfg)
        for t, dense_state in zip(times[1:], traj.states[1:]):
            solo = evolve(st, float(t), cfg)
            assert np.max(np.abs(solo.B - dense_state.B)) <= 1e-8

    def test_mass_series_recorded(self):
        rng = np.random.default_rng(9)
        st = decaying_state(rng, 4)
        traj = evolve_dense(st, np.linspace(1, 3, 5),
                            FlowConfig(rtol=1e-10, atol=1e-10))
        assert traj.mass_series.shape == (5,)
        assert np.max(np.abs(traj.mass_series - mass(st))) <= 1e-9

    def test_non_monotone_rejected(self):
        st = CoefficientState(t=1.0, N=0, B=np.array([0.5 + 0j]))
        with pytest.raises(ValueError):
            evolve_dense(st, np.array([1.0, 3.0, 2.0]))


class TestGauge:
    def test_identity_at_t1(self):
        st = CoefficientState(t=1.0, N=1, B=np.array([0.1, 0.2j, 0.3]))
        out = gauge(st, "forward")
        assert np.array_equal(out.B, st.B)

    def test_single_mode_phase_magnitude(self):
        st = CoefficientState(t=np.e, N=0, B=np.array([1.0 + 0j]))
        out = gauge(st, "forward")
        # phase factor has |2 mu ln t| = 2 with mu = 1
        assert out.B[0] == pytest.approx(np.exp(2j), rel=1e-12)
        assert out.gauge_phase == pytest.approx(2.0)

    def test_forward_backward_identity(self):
        rng = np.random.default_rng(10)
        st = decaying_state(rng, 3, t=4.2)
        back = gauge(gauge(st, "forward"), "backward")
        assert np.max(np.abs(back.B - st.B)) <= 1e-12
        assert back.gauge_phase == pytest.approx(st.gauge_phase, abs=1e-12)

    def test_gauged_single_mode_solves_renormalized_equation(self):
        # w(t) = a e^{+i |a|^2 ln t} satisfies i w' = (|w|^2 - 2 mu) w / t
        a = 0.8 - 0.1j
        st = CoefficientState(t=1.0, N=0, B=np.array([a]))
        out = evolve(st, 7.0, TIGHT, renormalized=True)
        assert abs(out.B[0] - a * np.exp(1j * abs(a) ** 2 * np.log(7.0))) <= 1e-9

    def test_gauge_equivariance(self):
        # gauging then evolving (renormalized) equals evolving then gauging
        rng = np.random.default_rng(11)
        st = decaying_state(rng, 3)
        cfg = FlowConfig(rtol=1e-11, atol=1e-11)
        t1 = 6.0
        lhs = evolve(gauge(st, "forward"), t1, cfg, renormalized=True)
        rhs_ = gauge(evolve(st, t1, cfg), "forward")
        assert np.max(np.abs(lhs.B - rhs_.B)) <= 1e-7


class TestJacobian:
    def test_identity_at_same_time(self):
        st = CoefficientState(t=1.0, N=0, B=np.array([0.4 + 0.1j]))
        J = jacobian_fd(st, 1.0, 1e-4)
        assert np.max(np.abs(J - np.eye(2))) <= 1e-9

    def test_single_mode_unit_determinant(self):
        st = CoefficientState(t=1.0, N=0, B=np.array([0.8 - 0.5j]))
        J = jacobian_fd(st, 2.0, 1e-4)
        assert abs(np.linalg.det(J) - 1.0) <= 1e-6

    def test_n1_unit_determinant(self):
        rng = np.random.default_rng(12)
        st = decaying_state(rng, 1)
        J = jacobian_fd(st, 1.5, 1e-4)
        assert abs(np.linalg.det(J) - 1.0) <= 1e-5

    def test_consistency_across_steps(self):
        rng = np.random.default_rng(13)
        st = decaying_state(rng, 1)
        d1 = np.linalg.det(jacobian_fd(st, 1.5, 2e-4))
        d2 = np.linalg.det(jacobian_fd(st, 1.5, 5e-5))
        assert abs(d1 - 1.0) <= 1e-5 and abs(d2 - 1.0) <= 1e-5

    def test_dimension_guard(self):
        st = CoefficientState(t=1.0, N=4, B=np.zeros(9, dtype=complex))
        with pytest.raises(ValueError, match="N <= 3"):
            jacobian_fd(st, 2.0, 1e-4)

    def test_step_guard(self):
        st = CoefficientState(t=1.0, N=0, B=np.array([0.1 + 0j]))
        with pytest.raises(ValueError):
            jacobian_fd(st, 2.0, 1e-2)


class TestSmoothing:
    def test_single_mode_identically_zero(self):
        st = CoefficientState(t=1.0, N=0, B=np.array([0.7 + 0.1j]))
        traj = evolve_dense(st, np.geomspace(1, 20, 6), TIGHT)
        mon = smoothing_increment(traj, 0.5)
        assert np.max(mon["increment"]) <= 1e-10

    def test_frozen_coefficients_zero(self):
        # moduli frozen (no evolution): increment defined to vanish
        rng = np.random.default_rng(14)
        st = decaying_state(rng, 8)
        traj = evolve_dense(st, np.array([1.0]))
        mon = smoothing_increment(traj, 0.5)
        assert np.all(mon["increment"] == 0)

    def test_bound_proxy_positive(self):
        rng = np.random.default_rng(15)
        st = decaying_state(rng, 8)
        traj = evolve_dense(st, np.array([1.0, 2.0]),
                            FlowConfig(rtol=1e-9, atol=1e-9))
        mon = smoothing_increment(traj, 0.5)
        assert mon["bound_proxy"] > 0


class TestBatch:
    def test_matches_single_state_evolution(self):
        rng = np.random.default_rng(16)
        sts = [decaying_state(rng, 5) for _ in range(3)]
        B = np.stack([s.B for s in sts])
        out, snaps = evolve_batch(B, 1.0, 3.0, 5, 5e-4, checkpoints=np.array([2.0]))
        assert len(snaps) == 1
        for i, s in enumerate(sts):
            solo = evolve(s, 3.0, TIGHT)
            assert np.max(np.abs(out[i] - solo.B)) <= 1e-7
            mid = evolve(s, 2.0, TIGHT)
            assert np.max(np.abs(snaps[0][i] - mid.B)) <= 1e-7

    def test_backward_direction(self):
        rng = np.random.default_rng(17)
        B = np.stack([decaying_state(rng, 3).B])
        fwd, _ = evolve_batch(B, 1.0, 4.0, 3, 5e-4)
        back, _ = evolve_batch(fwd, 4.0, 1.0, 3, 5e-4)
        assert np.max(np.abs(back - B)) <= 1e-7


class TestExport:
    def test_trajectory_csv(self, tmp_path):
        rng = np.random.default_rng(18)
        st = decaying_state(rng, 1)
        traj = evolve_dense(st, np.array([1.0, 2.0]), FlowConfig(rtol=1e-10, atol=1e-10))
        path = tmp_path / "traj.csv"
        export_trajectory_csv(traj, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,mass,re_-1,re_0,re_1,im_-1,im_0,im_1"
        assert len(lines) == 3
        # 17-significant-digit round trip
        first = lines[1].split(",")
        assert float(first[0]) == traj.times[0]
        assert float(first[2]) == st.B[0].real
