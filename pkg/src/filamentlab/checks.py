"""Fast self-verification battery behind the `verify` experiment.

Each check is a small, seconds-scale invariant probe drawn from every
subsystem; the full quantitative gates live in the test suite.
"""

from __future__ import annotations

import numpy as np

from . import flow, hasimoto, measures, singularity, spectral

__all__ = ["run_all_checks"]


def _check_resonance(rng):
    for _ in range(2000):
        k, j1, j2 = rng.integers(-50, 51, size=3)
        j3 = k - j1 + j2
        w = spectral.resonance_phase(int(k), int(j1), int(j2), int(j3))
        if w != k * k - j1 * j1 + j2 * j2 - j3 * j3:
            return False, f"identity mismatch at {(k, j1, j2, j3)}"
    return True, "2000 random quadruples"


def _check_norm_identity(rng):
    B = rng.normal(size=9) + 1j * rng.normal(size=9)
    st = spectral.CoefficientState(t=1.0, N=4, B=B)
    lhs = spectral.weighted_norm(st, 0.0)
    rhs = np.sqrt(spectral.mass(st))
    return abs(lhs - rhs) < 1e-12, f"|l^{{2,0}} - sqrt(mass)| = {abs(lhs - rhs):.2e}"


def _check_synthesis_roundtrip(rng):
    N = 6
    B = (rng.normal(size=2 * N + 1) + 1j * rng.normal(size=2 * N + 1)) * 0.3
    st = spectral.CoefficientState(t=1.3, N=N, B=B)
    n = 2 * N + 1
    grid = np.arange(n) * 2 * np.pi / n
    f = spectral.synthesize_v(st, grid)
    rec = np.exp(-1j * np.outer(st.k, grid)) @ f.values / n
    rec = rec * np.exp(-1j * st.t * st.k.astype(float) ** 2)
    err = np.max(np.abs(rec - B)) / np.max(np.abs(B))
    return err < 1e-12, f"roundtrip rel err {err:.2e}"


def _check_multiplier_selfadjoint(rng):
    N = 5
    a = rng.normal(size=2 * N + 1) + 1j * rng.normal(size=2 * N + 1)
    b = rng.normal(size=2 * N + 1) + 1j * rng.normal(size=2 * N + 1)
    sa = spectral.CoefficientState(t=1.0, N=N, B=a)
    sb = spectral.CoefficientState(t=1.0, N=N, B=b)
    s = 0.7
    lhs = np.sum(spectral.apply_multiplier_d(sa, s).B * np.conj(b))
    rhs = np.sum(a * np.conj(spectral.apply_multiplier_d(sb, s).B))
    return abs(lhs - rhs) < 1e-12 * abs(lhs), f"pairing defect {abs(lhs - rhs):.2e}"


def _check_kernels_agree(rng):
    N = 12
    B = (rng.normal(size=2 * N + 1) + 1j * rng.normal(size=2 * N + 1)) / (
        1 + np.abs(spectral.mode_indices(N)))
    s1 = flow.nonlinear_sum(1.7, B, N, dealias=False)
    s2 = flow.nonlinear_sum(1.7, B, N, dealias=True)
    err = np.max(np.abs(s1 - s2))
    return err < 1e-11, f"direct vs transform {err:.2e}"


def _check_closed_form(rng):
    a = 0.6 + 0.3j
    st = spectral.CoefficientState(t=1.0, N=0, B=np.array([a]))
    out = flow.evolve(st, 20.0, flow.FlowConfig(rtol=1e-12, atol=1e-12))
    exact = a * np.exp(-1j * abs(a) ** 2 * np.log(20.0))
    err = abs(out.B[0] - exact)
    return err < 1e-9, f"single-mode err {err:.2e}"


def _check_mass_and_roundtrip(rng):
    N = 8
    B = (rng.normal(size=2 * N + 1) + 1j * rng.normal(size=2 * N + 1)) / (
        1 + spectral.mode_indices(N) ** 2)
    st = spectral.CoefficientState(t=1.0, N=N, B=B)
    cfg = flow.FlowConfig(rtol=1e-11, atol=1e-11)
    out = flow.evolve(st, 10.0, cfg)
    back = flow.evolve(out, 1.0, cfg)
    drift = abs(spectral.mass(out) - spectral.mass(st))
    rt = np.max(np.abs(back.B - st.B))
    return drift < 1e-9 and rt < 1e-8, f"mass drift {drift:.2e}, roundtrip {rt:.2e}"


def _check_gauge(rng):
    B = np.array([0.3 - 0.2j, 0.5 + 0.1j, -0.4 + 0.4j])
    st = spectral.CoefficientState(t=2.5, N=1, B=B)
    back = flow.gauge(flow.gauge(st, "forward"), "backward")
    err = np.max(np.abs(back.B - st.B)) + abs(back.gauge_phase - st.gauge_phase)
    return err < 1e-12, f"forward/backward defect {err:.2e}"


def _check_frames(rng):
    c = 0.9
    x = np.linspace(0, 2, 129)
    u = hasimoto.FilamentSample(t=1.0, x_nodes=x,
                                u_values=np.full(x.size, c, dtype=complex))
    ff = hasimoto.frame_transport_x(u, np.eye(3))
    T_exact = np.stack([np.cos(c * x), np.sin(c * x), np.zeros_like(x)], axis=1)
    err = np.max(np.abs(ff.T - T_exact))
    defect = ff.orthonormality_defect()
    return err < 1e-10 and defect < 1e-9, f"closed form {err:.2e}, gram {defect:.2e}"


def _check_corner_detector(rng):
    xs = np.linspace(-2, 2, 401)
    P = np.zeros((401, 3))
    P[:, 0] = np.where(xs < 0, xs, 0.0)
    P[:, 1] = np.where(xs < 0, 0.0, xs)
    cs = singularity.polygon_corners(xs, P, spacing_hint=1.0)
    ok = len(cs) == 1 and abs(cs[0].location) < 0.02 and \
        abs(np.degrees(cs[0].turning_angle) - 90) < 1.0
    detail = f"{len(cs)} corner(s)" + (
        f", loc {cs[0].location:.3f}, angle {np.degrees(cs[0].turning_angle):.2f}"
        if cs else "")
    return ok, detail


def _check_sampling_determinism(rng):
    p = measures.MeasureParams(s=0.5, M=8.0, N=4, seed=2024)
    b1 = measures.sample_gamma(p, 6)
    b2 = measures.sample_gamma(p, 6)
    same = all(np.array_equal(x.B, y.B) for x, y in zip(b1.states, b2.states))
    return same, "bit-identical across reruns"


def _check_density_single_mode(rng):
    p = measures.MeasureParams(s=0.5, M=8.0, N=0, seed=5)
    st = measures.sample_gamma(p, 1).states[0]
    est = measures.density_log(st, 10.0, s=p.s)
    return abs(est.log_f[-1]) < 1e-10, f"|log f| = {abs(est.log_f[-1]):.2e}"


def _check_density_oracle(rng):
    p = measures.MeasureParams(s=0.5, M=8.0, N=3, seed=11)
    st = measures.sample_gamma(p, 1).states[0]
    est = measures.density_log(st, 6.0, s=p.s, tol=1e-9)
    exact = measures.density_log_exact(st, 6.0, s=p.s,
                                       config=flow.FlowConfig(rtol=1e-12, atol=1e-12))
    diff = abs(est.log_f[-1] - exact)
    return diff < 1e-6, f"quadrature vs norm-difference {diff:.2e}"


_CHECKS = [
    ("resonance-identity", _check_resonance),
    ("weighted-norm-collapses-to-mass", _check_norm_identity),
    ("synthesis-orthogonality-roundtrip", _check_synthesis_roundtrip),
    ("multiplier-self-adjoint", _check_multiplier_selfadjoint),
    ("nonlinear-kernels-agree", _check_kernels_agree),
    ("single-mode-closed-form", _check_closed_form),
    ("mass-conservation-and-reversibility", _check_mass_and_roundtrip),
    ("gauge-involution", _check_gauge),
    ("frame-transport-closed-form", _check_frames),
    ("corner-detector-right-angle", _check_corner_detector),
    ("sampling-determinism", _check_sampling_determinism),
    ("density-single-mode-trivial", _check_density_single_mode),
    ("density-quadrature-vs-oracle", _check_density_oracle),
]


def run_all_checks(seed: int = 0, log=None) -> list[dict]:
    """Run every check; returns [{name, passed, detail}] and logs one line each."""
    results = []
    for name, fn in _CHECKS:
        rng = np.random.default_rng(seed)
        try:
            passed, detail = fn(rng)
        except Exception as exc:  # a crash is a failure, not an abort
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append({"name": name, "passed": bool(passed), "detail": detail})
        if log is not None:
            log(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
    return results
