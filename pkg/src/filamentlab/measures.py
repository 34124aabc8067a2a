"""Gaussian ensembles, Radon-Nikodym densities and Monte Carlo transport checks.

The reference ensemble draws coefficients

    B_k = g_k / (1 + |k|^{2s+1})^{1/2},      g_k = (h_k + i l_k) / sqrt(2),

with independent standard normals h, l (a standard complex Gaussian per
mode), restricted by the rigid mass cutoff sum |B_k|^2 <= M.  Sampling is
keyed per (master seed, sample index) through a counter-based generator,
so batches are independent of evaluation order and thread count.

For the flow of :mod:`filamentlab.flow` the transported cutoff ensemble
has, with respect to itself, the density

    log f(tau, v) = -2 int_1^tau Im G(lambda) dlambda / lambda,
    G(lambda) = sum_k (1 + |k|^{2s+1}) conj(vhat_k) (|v|^2 v)^hat_k,

which integrates exactly to the difference of the homogeneous weighted
masses:  log f = -( sum |k|^{2s+1} |B_k(tau)|^2 - sum |k|^{2s+1} |B_k(1)|^2 ).
The quadrature route and the exact-difference route are kept as
independent cross-checks of each other; the mode-sum pairing carries no
2*pi factor.  The "1" part of the multiplier integrates to the mass
change, which vanishes identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import FlowConfig, TrajectoryRecord, evolve, evolve_batch, evolve_dense, nonlinear_sum
from .hasimoto import (
    Anchor,
    anchor_trajectory,
    anchor_trajectory_with_limit,
    curve_time,
    flow_time,
    reconstruct_curve,
)
from .singularity import RateFit, curve_limit, holder_exponent, loglog_fit
from .spectral import (
    CoefficientState,
    GridField,
    holder_seminorm,
    mass,
    mode_indices,
    multiplier_symbol,
    synthesize_profile,
    weighted_norm,
)

__all__ = [
    "DensityEstimate",
    "MeasureParams",
    "SampleBatch",
    "density_limit",
    "density_log",
    "holder_growth_experiment",
    "quasi_invariance_check",
    "random_curve_experiment",
    "randomize_bf_data",
    "sample_gamma",
]


@dataclass(frozen=True)
class MeasureParams:
    """Ensemble parameters: regularity s, mass cutoff M, truncation N, seed."""

    s: float
    M: float
    N: int
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"regularity s must lie in (0, 1), got {self.s}")
        if not self.M > 0:
            raise ValueError(f"mass cutoff must be positive, got {self.M}")
        if self.N < 0:
            raise ValueError(f"truncation must be >= 0, got {self.N}")

    @property
    def weights(self) -> np.ndarray:
        return 1.0 / np.sqrt(multiplier_symbol(mode_indices(self.N), 2 * self.s + 1))


@dataclass(frozen=True)
class SampleBatch:
    """Seeded draws from the Gaussian ensemble with their cutoff flags."""

    params: MeasureParams
    states: list[CoefficientState]
    accepted: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "accepted", np.asarray(self.accepted, dtype=bool))
        if len(self.states) != self.accepted.size:
            raise ValueError("one acceptance flag per state is required")

    @property
    def coefficients(self) -> np.ndarray:
        return np.stack([st.B for st in self.states])

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))


def _rng(seed: int, index: int) -> np.random.Generator:
    # counter-based stream split by (master seed, sample index)
    key = np.array([np.uint64(seed & (2**64 - 1)), np.uint64(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _gaussian_coefficients(params: MeasureParams, index: int) -> np.ndarray:
    z = _rng(params.seed, index).standard_normal((2 * params.N + 1, 2))
    g = (z[:, 0] + 1j * z[:, 1]) / np.sqrt(2.0)
    return g * params.weights


def sample_gamma(params: MeasureParams, count: int, *, t: float = 1.0) -> SampleBatch:
    """Draw ``count`` ensemble samples at time t=1 and flag the mass cutoff."""
    if count < 1:
        raise ValueError("count must be >= 1")
    states = []
    flags = np.empty(count, dtype=bool)
    for i in range(count):
        B = _gaussian_coefficients(params, i)
        st = CoefficientState(t=t, N=params.N, B=B)
        states.append(st)
        flags[i] = mass(st) <= params.M
    return SampleBatch(params=params, states=states, accepted=flags)


def randomize_bf_data(params: MeasureParams, index: int = 0) -> CoefficientState:
    """One ensemble draw with the deterministic per-mode phase e^{i j^2 / 4}.

    This is the randomized coefficient data feeding the curve pipeline;
    the unimodular phase leaves every modulus distribution unchanged.
    """
    ks = mode_indices(params.N).astype(float)
    B = _gaussian_coefficients(params, index) * np.exp(1j * ks**2 / 4.0)
    return CoefficientState(t=1.0, N=params.N, B=B)


# ---------------------------------------------------------------------------
# Radon-Nikodym densities


@dataclass(frozen=True)
class DensityEstimate:
    """log f on an increasing tau grid with per-entry quadrature errors."""

    tau_grid: np.ndarray
    log_f: np.ndarray
    quadrature_error: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tau_grid", np.asarray(self.tau_grid, dtype=float))
        object.__setattr__(self, "log_f", np.asarray(self.log_f, dtype=float))
        object.__setattr__(self, "quadrature_error",
                           np.asarray(self.quadrature_error, dtype=float))
        if self.tau_grid[0] != 1.0 or abs(self.log_f[0]) > 0.0:
            raise ValueError("the density grid starts at tau=1 with log f = 0")

    def tail_increments(self) -> tuple[np.ndarray, np.ndarray]:
        """(tau_i, |log f(tau_{i+1}) - log f(tau_i)|) for the ladder steps."""
        return self.tau_grid[:-1], np.abs(np.diff(self.log_f))


def _density_integrand(dense, N: int, s: float):
    w = multiplier_symbol(mode_indices(N), 2 * s + 1)

    def g(lam: float) -> float:
        B = dense.coefficients_at(lam)
        S = nonlinear_sum(lam, B, N)
        G = np.sum(w * np.conj(B) * S)
        return -2.0 * float(np.imag(G)) / lam

    return g


def _adaptive_simpson(g, a: float, b: float, tol: float, depth: int = 24):
    fa, fm, fb = g(a), g(0.5 * (a + b)), g(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = g(lm), g(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        err = (left + right - whole) / 15.0
        if depth <= 0 or abs(err) <= tol:
            if depth <= 0 and abs(err) > tol:
                raise ArithmeticError("panel did not converge")
            return left + right + err, abs(err)
        lv, le = rec(a, m, fa, flm, fm, left, tol / 2, depth - 1)
        rv, re = rec(m, b, fm, frm, fb, right, tol / 2, depth - 1)
        return lv + rv, le + re

    return rec(a, b, fa, fm, fb, whole, tol, depth)


class DensityQuadratureError(RuntimeError):
    """Quadrature non-convergence; carries the partial estimate."""

    def __init__(self, message, partial: DensityEstimate):
        super().__init__(message)
        self.partial = partial


def density_log(state: CoefficientState, tau, config: FlowConfig | None = None,
                *, s: float, tol: float = 1e-8) -> DensityEstimate:
    """Transport-density logarithm log f(tau, v) for a state at time 1.

    ``tau`` may be a scalar or an increasing grid (values >= 1).  The
    lambda integral runs over log-spaced adaptive Simpson panels on the
    solver's dense output; the returned error is the accumulated panel
    estimate.  The 1/lambda weight motivates the log spacing.
    """
    if abs(state.t - 1.0) > 1e-12:
        raise ValueError("density is referenced to states at time 1")
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(np.diff(taus) <= 0) or taus[0] < 1.0:
        raise ValueError("tau grid must be increasing and >= 1")
    config = config or FlowConfig(rtol=1e-10, atol=1e-10)
    grid = taus if taus[0] == 1.0 else np.concatenate([[1.0], taus])

    if grid[-1] == 1.0:
        return DensityEstimate(tau_grid=grid, log_f=np.zeros(grid.size),
                               quadrature_error=np.zeros(grid.size))

    traj = evolve_dense(state, np.array([1.0, grid[-1]]), config)
    g = _density_integrand(traj.dense, state.N, s)

    log_f = [0.0]
    errs = [0.0]
    acc, acc_err = 0.0, 0.0
    for a, b in zip(grid[:-1], grid[1:]):
        # log-spaced sub-panels within each ladder interval
        npan = max(2, int(np.ceil(8 * np.log2(b / a))) if b > a else 2)
        panels = np.geomspace(a, b, npan + 1)
        try:
            for pa, pb in zip(panels[:-1], panels[1:]):
                val, err = _adaptive_simpson(g, pa, pb, tol / npan)
                acc += val
                acc_err += err
        except ArithmeticError as exc:
            partial = DensityEstimate(tau_grid=np.asarray(grid[: len(log_f)]),
                                      log_f=np.asarray(log_f),
                                      quadrature_error=np.asarray(errs))
            raise DensityQuadratureError(
                f"quadrature failed on [{a}, {b}]: {exc}", partial) from exc
        log_f.append(acc)
        errs.append(acc_err)
    return DensityEstimate(tau_grid=grid, log_f=np.asarray(log_f),
                           quadrature_error=np.asarray(errs))


def density_log_exact(state: CoefficientState, tau: float, s: float,
                      config: FlowConfig | None = None) -> float:
    """Exact-difference route: log f = -(Q_h(tau) - Q_h(1)) with homogeneous
    weights |k|^{2s+1}; independent oracle for the quadrature route."""
    config = config or FlowConfig(rtol=1e-10, atol=1e-10)
    from .flow import evolve

    w = np.abs(mode_indices(state.N).astype(float)) ** (2 * s + 1)
    out = evolve(state, tau, config)
    return -float(np.sum(w * np.abs(out.B) ** 2) - np.sum(w * np.abs(state.B) ** 2))


def density_limit(state: CoefficientState, tau_ladder: np.ndarray,
                  config: FlowConfig | None = None, *, s: float,
                  tol: float = 1e-8) -> dict:
    """log f along an increasing ladder with the tau -> infinity diagnostic.

    Returns the DensityEstimate plus the Cauchy tail increments
    |log f(tau_{i+1}) - log f(tau_i)| and their log-log slope against
    tau (integrability of G(lambda)/lambda predicts decay ~ 1/tau).
    """
    ladder = np.asarray(tau_ladder, dtype=float)
    if ladder[-1] < 100.0:
        raise ValueError("ladder must reach tau >= 100")
    est = density_log(state, ladder, config, s=s, tol=tol)
    taus, incs = est.tail_increments()
    fit = loglog_fit(taus, np.maximum(incs, 1e-300), drop_largest=0, drop_smallest=0)
    return {"estimate": est, "increment_taus": taus, "increments": incs,
            "tail_slope": fit}


# ---------------------------------------------------------------------------
# Monte Carlo experiments


def _batch_weighted(B: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.sum(w * np.abs(B) ** 2, axis=1)


def quasi_invariance_check(params: MeasureParams, tau: float, radius: float,
                           count: int, *, s_prime: float | None = None,
                           kappas: tuple[float, ...] = (0.25, 0.5),
                           step: float = 2e-3) -> dict:
    """Two independent estimates of the transported measure of a ball.

    A is the weighted-norm ball {||v||_{l^{2,s'}} <= radius} within the
    mass cutoff.  Estimate (i) flows each sample backward to time 1 and
    tests membership; estimate (ii) weights membership at time 1 by the
    density f(tau, v) from the forward flow.  Both come with standard
    errors, plus the quasi-invariance ratios against rho(A)^{1-kappa}.
    """
    if s_prime is None:
        s_prime = 0.5 * params.s
    if not s_prime < params.s:
        raise ValueError("need s_prime < s")
    if tau < 1.0:
        raise ValueError("tau must be >= 1")
    batch = sample_gamma(params, count)
    V = batch.coefficients
    kept = batch.accepted
    n_kept = int(np.sum(kept))
    report: dict = {
        "tau": tau, "radius": radius, "count": count,
        "acceptance_rate": batch.acceptance_rate, "s_prime": s_prime,
    }
    if n_kept == 0:
        report["status"] = "insufficient"
        return report
    report["status"] = "ok"

    ks = mode_indices(params.N)
    sw = (1.0 + ks.astype(float) ** 2) ** s_prime
    hw = np.abs(ks.astype(float)) ** (2 * params.s + 1)

    norms0 = np.sqrt(_batch_weighted(V, sw))
    in_A0 = (norms0 <= radius) & kept
    rho_A = float(np.mean(in_A0[kept]))

    if tau == 1.0:
        push = rho_A
        push_se = 0.0
        dens = rho_A
        dens_se = 0.0
    else:
        Vk = V[kept]
        back, _ = evolve_batch(Vk, tau, 1.0, params.N, step)
        in_A_back = np.sqrt(_batch_weighted(back, sw)) <= radius
        push = float(np.mean(in_A_back))
        push_se = float(np.sqrt(max(push * (1 - push), 1e-300) / n_kept))

        fwd, _ = evolve_batch(Vk, 1.0, tau, params.N, step)
        log_f = -(_batch_weighted(fwd, hw) - _batch_weighted(Vk, hw))
        weights = np.where(in_A0[kept], np.exp(log_f), 0.0)
        dens = float(np.mean(weights))
        dens_se = float(np.std(weights, ddof=1) / np.sqrt(n_kept))

    report.update({
        "rho_A": rho_A,
        "pushforward": {"estimate": push, "se": push_se},
        "density": {"estimate": dens, "se": dens_se},
        "agreement_sigma": abs(push - dens) / max(np.hypot(push_se, dens_se), 1e-300),
        "quasi_invariance_ratios": {
            str(k): (push / rho_A ** (1 - k) if rho_A > 0 else float("inf"))
            for k in kappas
        },
    })
    return report


def holder_growth_experiment(params: MeasureParams, s_prime: float,
                             horizon: float, count: int, *,
                             checkpoints: int = 12, grid_points: int = 256,
                             step: float = 1e-3,
                             linear_diagnostic: bool = False) -> dict:
    """Growth of the C^{s'} norm of the evolved profile over [1, horizon].

    For each accepted sample the norm series at geometric checkpoints is
    fitted log-log in t; the report carries per-sample exponents and the
    batch median.  ``linear_diagnostic`` freezes the coefficients (the
    norm series of the stripped profile is then exactly constant).
    """
    if not s_prime < params.s:
        raise ValueError("need s_prime < s")
    if horizon > 1e3:
        raise ValueError("desk-scale horizon is limited to 1e3")
    batch = sample_gamma(params, count)
    V = batch.coefficients[batch.accepted]
    times = np.geomspace(1.0, horizon, checkpoints)
    grid = np.linspace(0.0, 2 * np.pi, grid_points, endpoint=False)

    def norm_of(B):
        f = GridField(x_nodes=grid, values=synthesize_profile(B, grid))
        return holder_seminorm(f, s_prime)

    series = np.empty((V.shape[0], times.size))
    series[:, 0] = [norm_of(B) for B in V]
    if linear_diagnostic:
        for j in range(1, times.size):
            series[:, j] = series[:, 0]
    else:
        _, snaps = evolve_batch(V, 1.0, horizon, params.N, step,
                                checkpoints=times[1:])
        for j, S in enumerate(snaps):
            series[:, j + 1] = [norm_of(B) for B in S]

    exponents = []
    for i in range(V.shape[0]):
        if np.ptp(series[i]) < 1e-12 * np.max(series[i]):
            exponents.append(0.0)
            continue
        fit = loglog_fit(times, series[i], drop_largest=0, drop_smallest=0)
        exponents.append(fit.exponent)
    exponents = np.asarray(exponents)
    return {
        "times": times,
        "norm_series": series,
        "exponents": exponents,
        "median_exponent": float(np.median(exponents)) if exponents.size else float("nan"),
        "acceptance_rate": batch.acceptance_rate,
        "linear_diagnostic": linear_diagnostic,
    }


def random_curve_experiment(params: MeasureParams, t_min: float,
                            grid: np.ndarray, count: int, *,
                            ladder_points: int = 9,
                            trajectory_points: int = 128,
                            config: FlowConfig | None = None) -> dict:
    """Full randomized pipeline: data, flow, curve family, rate fits.

    Each sample's coefficients (drawn with the deterministic mode phases)
    anchor a curve at t0 = 1/4 (flow time 1); the family is reconstructed
    on a geometric ladder down to t_min, the limit-curve rate and the
    anchor-trajectory Hölder exponent are fitted per sample.
    """
    if t_min < 1e-3:
        raise ValueError("ladder bottom is limited to t_min >= 1e-3")
    config = config or FlowConfig(rtol=1e-9, atol=1e-9)
    t0 = 1.0
    tau0 = flow_time(t0)
    tau_max = flow_time(t_min)
    ladder = np.geomspace(t0, t_min, ladder_points)

    results = []
    for i in range(count):
        st = randomize_bf_data(params, index=i)
        if mass(st) > params.M:
            results.append({"index": i, "accepted": False})
            continue
        st0 = evolve(st, tau0, config)
        traj = evolve_dense(st0, np.array([tau0, tau_max]), config)
        anchor = Anchor(t0=t0)
        curves = reconstruct_curve(traj, ladder, grid, anchor)
        chi0, rate = curve_limit(curves)
        fine, path = anchor_trajectory_with_limit(traj, anchor, ladder,
                                                  trajectory_points)
        hol = holder_exponent(fine, path)
        results.append({
            "index": i, "accepted": True,
            "sqrt_rate": rate, "holder": hol,
            "arc_defect": curves.arc_length_defect(),
        })
    ok = [r for r in results if r["accepted"]]
    return {
        "samples": results,
        "accepted": len(ok),
        "sqrt_exponents": np.array([r["sqrt_rate"].exponent for r in ok]),
        "holder_exponents": np.array([r["holder"].exponent for r in ok]),
    }
