"""Forward/backward integration of the truncated coefficient system.

The dynamics integrated here is, for modes |k| <= N,

    dB_k/dt = -(i/t) * sum_{k-j1+j2-j3=0, |j_i|<=N}
                e^{-i t (k^2-j1^2+j2^2-j3^2)} B_{j1} conj(B_{j2}) B_{j3}

which conserves the mass sum |B_k|^2 and preserves Lebesgue measure on
the real/imaginary coordinates (divergence-free vector field).  The
resonant part of the sum (quadruples with k=j1 or j1=j2) equals
(2M - |B_k|^2) B_k with M the mass, so states supported on a mode set
that is closed under the momentum constraint rotate with the closed form
B_k(t) = a_k e^{-i (2M - |a_k|^2) ln t}.

Two nonlinear-sum kernels are provided: a direct summation over
interaction quadruples (the oracle, O(N^3)) and a padded-transform
evaluation (O(N log N)).  Exact agreement requires at least 4N+1 grid
points for the cubic product; we round up to a fast FFT length.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.fft import next_fast_len
from scipy.integrate import solve_ivp

from .spectral import CoefficientState, mass, mode_indices, multiplier_symbol

__all__ = [
    "FlowConfig",
    "FlowError",
    "TrajectoryRecord",
    "evolve",
    "evolve_batch",
    "evolve_dense",
    "export_trajectory_csv",
    "gauge",
    "jacobian_fd",
    "nonlinear_sum",
    "rhs",
    "smoothing_increment",
]

# Direct summation is cheaper than transforms only for small truncations.
_DEALIAS_THRESHOLD = 16


class FlowError(RuntimeError):
    """Integration failure; carries the last time the solver reached."""

    def __init__(self, message: str, last_good_time: float | None = None):
        super().__init__(message)
        self.last_good_time = last_good_time


@dataclass(frozen=True)
class FlowConfig:
    """Integrator settings.

    scheme "adaptive_rk" is an embedded Runge-Kutta pair with dense
    output; "fixed_rk4" takes uniform steps of size ``max_step`` (which
    must then be finite) and exists as a cross-check and batch scheme.
    ``dealias=None`` picks the transform kernel automatically for N > 16.
    """

    rtol: float = 1e-10
    atol: float = 1e-10
    max_step: float = np.inf
    scheme: str = "adaptive_rk"
    dealias: bool | None = None

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")
        if self.scheme not in ("adaptive_rk", "fixed_rk4"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "fixed_rk4" and not np.isfinite(self.max_step):
            raise ValueError("fixed_rk4 needs a finite max_step as its step size")


@lru_cache(maxsize=32)
def _interaction_table(N: int, active: tuple[int, ...] | None):
    """Index table of admissible quadruples (k, j1, j2, j3 = k-j1+j2).

    Returns integer arrays (out, i1, i2, i3, w): storage indices of the
    output mode and the three inputs plus the phase frequency w.  When
    ``active`` is given, all four modes are restricted to that set.
    """
    ks = mode_indices(N)
    K, J1, J2 = np.meshgrid(ks, ks, ks, indexing="ij")
    J3 = K - J1 + J2
    keep = np.abs(J3) <= N
    if active is not None:
        sel = np.zeros(2 * N + 1, dtype=bool)
        for m in active:
            if abs(m) > N:
                raise ValueError(f"active mode {m} outside truncation |k| <= {N}")
            sel[m + N] = True
        keep &= sel[K + N] & sel[J1 + N] & sel[J2 + N]
        keep &= np.where(np.abs(J3) <= N, sel[np.clip(J3 + N, 0, 2 * N)], False)
    K, J1, J2, J3 = (A[keep] for A in (K, J1, J2, J3))
    w = K**2 - J1**2 + J2**2 - J3**2
    return (K + N, J1 + N, J2 + N, J3 + N, w.astype(float))


def _sum_direct(t: float, B: np.ndarray, N: int,
                active: tuple[int, ...] | None) -> np.ndarray:
    out_idx, i1, i2, i3, w = _interaction_table(N, active)
    terms = np.exp(-1j * t * w) * B[..., i1] * np.conj(B[..., i2]) * B[..., i3]
    if B.ndim == 1:
        S = np.zeros(2 * N + 1, dtype=complex)
        np.add.at(S, out_idx, terms)
    else:
        S = np.zeros(B.shape, dtype=complex)
        np.add.at(S.T, out_idx, terms.T)
    return S


def _sum_transform(t: float, B: np.ndarray, N: int) -> np.ndarray:
    # S_k = e^{-i t k^2} * fourier(|v|^2 v)(k) with vhat_j = B_j e^{i t j^2};
    # a grid of >= 4N+1 points makes the cubic product alias-free.
    ks = mode_indices(N).astype(float)
    G = next_fast_len(4 * N + 1)
    idx = mode_indices(N) % G
    phase = np.exp(1j * t * ks**2)
    spec = np.zeros(B.shape[:-1] + (G,), dtype=complex)
    spec[..., idx] = B * phase
    vals = np.fft.ifft(spec, axis=-1) * G
    cubed = np.abs(vals) ** 2 * vals
    back = np.fft.fft(cubed, axis=-1) / G
    return back[..., idx] * np.conj(phase)


def nonlinear_sum(t: float, B: np.ndarray, N: int, *,
                  dealias: bool | None = None,
                  active: tuple[int, ...] | None = None) -> np.ndarray:
    """Interaction sum S_k(t, B); the flow right-hand side is -(i/t) S.

    ``B`` may be a single coefficient vector or a batch (..., 2N+1).
    ``active`` restricts the Galerkin projection to a mode subset (the
    symmetric truncation is the default); the restricted sum always uses
    the direct kernel.
    """
    if active is not None:
        return _sum_direct(t, B, N, tuple(sorted(active)))
    if dealias is None:
        # batches always use the transform kernel: the direct table cost
        # scales with batch size * table size, the FFT only with the batch
        dealias = N > _DEALIAS_THRESHOLD or np.asarray(B).ndim > 1
    if dealias:
        return _sum_transform(t, B, N)
    return _sum_direct(t, B, N, None)


def rhs(state: CoefficientState, *, dealias: bool | None = None,
        active: tuple[int, ...] | None = None,
        renormalized: bool = False) -> np.ndarray:
    """Time derivative of the coefficient vector at the state's own time.

    With ``renormalized`` the resonant mean rotation is removed: the sum
    is replaced by S_k - 2 M B_k (nonlinearity (|f|^2 - 2 mu) f).
    """
    S = nonlinear_sum(state.t, state.B, state.N, dealias=dealias, active=active)
    if renormalized:
        S = S - 2.0 * np.sum(np.abs(state.B) ** 2) * state.B
    return -1j / state.t * S


def _rhs_real(t: float, y: np.ndarray, N: int, dealias, active, renormalized) -> np.ndarray:
    n = 2 * N + 1
    B = y[:n] + 1j * y[n:]
    S = nonlinear_sum(t, B, N, dealias=dealias, active=active)
    if renormalized:
        S = S - 2.0 * np.sum(np.abs(B) ** 2) * B
    dB = -1j / t * S
    return np.concatenate([dB.real, dB.imag])


class _DenseFlow:
    """Dense-in-time access to an adaptive solution (complex coefficients)."""

    def __init__(self, sol, N: int, gauge_phase: float):
        self._sol = sol
        self.N = N
        self.gauge_phase = gauge_phase
        self.t_span = (float(sol.t_min), float(sol.t_max))

    def coefficients_at(self, t: float) -> np.ndarray:
        lo, hi = self.t_span
        if not (lo - 1e-12 <= t <= hi + 1e-12):
            raise ValueError(f"time {t} outside computed span [{lo}, {hi}]")
        y = self._sol(np.clip(t, lo, hi))
        n = 2 * self.N + 1
        return y[:n] + 1j * y[n:]

    def coefficients_at_many(self, ts: np.ndarray) -> np.ndarray:
        """Vectorized evaluation; returns (len(ts), 2N+1)."""
        ts = np.asarray(ts, dtype=float)
        lo, hi = self.t_span
        if np.any(ts < lo - 1e-12) or np.any(ts > hi + 1e-12):
            raise ValueError(f"times outside computed span [{lo}, {hi}]")
        y = self._sol(np.clip(ts, lo, hi))
        n = 2 * self.N + 1
        return (y[:n] + 1j * y[n:]).T

    def state_at(self, t: float) -> CoefficientState:
        return CoefficientState(t=float(t), N=self.N, B=self.coefficients_at(t),
                                gauge_phase=self.gauge_phase)


@dataclass
class TrajectoryRecord:
    """States sampled along one integration, with conservation monitors."""

    times: np.ndarray
    states: list[CoefficientState]
    mass_series: np.ndarray
    diagnostics: dict[str, np.ndarray] = field(default_factory=dict)
    dense: _DenseFlow | None = None

    def __post_init__(self):
        if len(self.states) != len(self.times):
            raise ValueError("one state per requested time is required")
        for t, st in zip(self.times, self.states):
            if abs(st.t - t) > 1e-9 * max(1.0, abs(t)):
                raise ValueError("state time stamps must match the time ladder")

    @property
    def N(self) -> int:
        return self.states[0].N


def _integrate_adaptive(state: CoefficientState, t_target: float, config: FlowConfig,
                        *, dense: bool, active, renormalized) -> tuple[np.ndarray, _DenseFlow | None]:
    y0 = np.concatenate([state.B.real, state.B.imag])
    sol = solve_ivp(
        _rhs_real,
        (state.t, t_target),
        y0,
        method="RK45",
        rtol=config.rtol,
        atol=config.atol,
        max_step=config.max_step,
        dense_output=dense,
        args=(state.N, config.dealias, active, renormalized),
    )
    if not sol.success:
        raise FlowError(
            f"integration from t={state.t} to t={t_target} failed: {sol.message}",
            last_good_time=float(sol.t[-1]) if sol.t.size else state.t,
        )
    n = 2 * state.N + 1
    B1 = sol.y[:n, -1] + 1j * sol.y[n:, -1]
    interp = _DenseFlow(sol.sol, state.N, state.gauge_phase) if dense else None
    return B1, interp


def _rk4_steps(t0: float, t1: float, step: float) -> np.ndarray:
    n = max(1, int(np.ceil(abs(t1 - t0) / step)))
    return np.linspace(t0, t1, n + 1)


def _integrate_fixed(state: CoefficientState, t_target: float, config: FlowConfig,
                     *, active, renormalized) -> np.ndarray:
    B = state.B.copy()
    ts = _rk4_steps(state.t, t_target, config.max_step)

    def f(t, B):
        S = nonlinear_sum(t, B, state.N, dealias=config.dealias, active=active)
        if renormalized:
            S = S - 2.0 * np.sum(np.abs(B) ** 2) * B
        return -1j / t * S

    for ta, tb in zip(ts[:-1], ts[1:]):
        h = tb - ta
        k1 = f(ta, B)
        k2 = f(ta + h / 2, B + h / 2 * k1)
        k3 = f(ta + h / 2, B + h / 2 * k2)
        k4 = f(tb, B + h * k3)
        B = B + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return B


def evolve(state: CoefficientState, t_target: float, config: FlowConfig | None = None, *,
           active: tuple[int, ...] | None = None,
           renormalized: bool = False) -> CoefficientState:
    """Flow the state to ``t_target`` (forward or backward; both need t > 0).

    Mass is conserved by the continuous system; the integrator is expected
    to keep |mass(out) - mass(in)| within a small multiple of the local
    tolerances per unit time (verified by tests, not enforced here).
    """
    config = config or FlowConfig()
    if not t_target > 0:
        raise ValueError(f"target time must be positive, got {t_target}")
    if t_target == state.t:
        return state
    if config.scheme == "fixed_rk4":
        B1 = _integrate_fixed(state, t_target, config, active=active,
                              renormalized=renormalized)
    else:
        B1, _ = _integrate_adaptive(state, t_target, config, dense=False,
                                    active=active, renormalized=renormalized)
    return CoefficientState(t=t_target, N=state.N, B=B1, gauge_phase=state.gauge_phase)


def evolve_dense(state: CoefficientState, times: np.ndarray,
                 config: FlowConfig | None = None, *,
                 active: tuple[int, ...] | None = None,
                 renormalized: bool = False) -> TrajectoryRecord:
    """Integrate once and sample the trajectory at every requested time.

    ``times`` must be monotone; the first entry may equal the state's own
    time.  With the adaptive scheme the record carries a dense interpolant
    for later off-ladder access.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-D array")
    dts = np.diff(times)
    if not (np.all(dts > 0) or np.all(dts < 0)):
        raise ValueError("times must be strictly monotone")
    if np.any(times <= 0):
        raise ValueError("all times must be positive")

    states: list[CoefficientState]
    if config is None:
        config = FlowConfig()
    if config.scheme == "fixed_rk4":
        states = []
        cur = state
        for t in times:
            cur = evolve(cur, float(t), config, active=active, renormalized=renormalized) \
                if t != cur.t else cur
            states.append(cur)
        dense = None
    else:
        far = times[-1]
        if far == state.t:
            # degenerate single-entry ladder
            states = [state]
            dense = None
        else:
            _, dense = _integrate_adaptive(state, float(far), config, dense=True,
                                           active=active, renormalized=renormalized)
            states = [dense.state_at(float(t)) if t != state.t else state for t in times]
    mass_series = np.array([mass(st) for st in states])
    return TrajectoryRecord(times=times, states=states, mass_series=mass_series,
                            dense=dense)


def gauge(state: CoefficientState, direction: str = "forward") -> CoefficientState:
    """Apply the mean-rotation gauge e^{+-2 i mu ln t} to all coefficients.

    "forward" multiplies by e^{+2 i mu ln t}, which removes the resonant
    mean rotation of this flow (the gauged system has nonlinearity
    (|f|^2 - 2 mu) f); "backward" undoes it.  At t = 1 both are the
    identity.  ``gauge_phase`` records the accumulated phase.
    """
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    mu = mass(state)
    phi = 2.0 * mu * np.log(state.t)
    if direction == "backward":
        phi = -phi
    return state.with_coefficients(state.B * np.exp(1j * phi),
                                   gauge_phase=state.gauge_phase + phi)


def jacobian_fd(state: CoefficientState, t_target: float, h: float,
                config: FlowConfig | None = None) -> np.ndarray:
    """Central finite-difference Jacobian of the realified flow map.

    Restricted to N <= 3 (matrix dimension 2(2N+1) <= 14); each column
    costs two integrations.  The caller checks |det - 1|.
    """
    if state.N > 3:
        raise ValueError(f"jacobian_fd is limited to N <= 3, got N={state.N}")
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"step h must lie in [1e-6, 1e-3], got {h}")
    config = config or FlowConfig(rtol=1e-12, atol=1e-12)
    n = 2 * state.N + 1
    dim = 2 * n
    y0 = np.concatenate([state.B.real, state.B.imag])

    def flow(y):
        st = CoefficientState(t=state.t, N=state.N, B=y[:n] + 1j * y[n:])
        out = evolve(st, t_target, config)
        return np.concatenate([out.B.real, out.B.imag])

    J = np.empty((dim, dim))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        J[:, i] = (flow(y0 + e) - flow(y0 - e)) / (2 * h)
    return J


def smoothing_increment(trajectory: TrajectoryRecord, s: float,
                        eps: float = 0.05) -> dict:
    """Homogeneous H^{s+1/2}-mass increment along a trajectory.

    Returns the series D(t) = | sum_k |k|^{2s+1} (|B_k(t)|^2 - |B_k(t0)|^2) |
    together with the size proxy ||(1+|k|^{s-eps}) B(t0)||^3 against which
    uniform-in-time boundedness is judged.
    """
    if len(trajectory.states) == 0:
        raise ValueError("trajectory is empty")
    st0 = trajectory.states[0]
    w = np.abs(mode_indices(st0.N).astype(float)) ** (2.0 * s + 1.0)
    q0 = np.sum(w * np.abs(st0.B) ** 2)
    D = np.array([abs(np.sum(w * np.abs(st.B) ** 2) - q0) for st in trajectory.states])
    proxy_w = multiplier_symbol(mode_indices(st0.N), s - eps)
    proxy = float(np.sum(proxy_w**2 * np.abs(st0.B) ** 2) ** 1.5)
    return {"times": trajectory.times, "increment": D, "bound_proxy": proxy}


def evolve_batch(B0: np.ndarray, t0: float, t1: float, N: int, step: float, *,
                 checkpoints: np.ndarray | None = None,
                 dealias: bool | None = None) -> tuple[np.ndarray, list[np.ndarray]]:
    """Fixed-step RK4 flow of a whole batch of coefficient vectors at once.

    ``B0`` has shape (n_samples, 2N+1).  Steps are uniform of size at most
    ``step`` and land exactly on ``checkpoints`` (monotone, inside [t0, t1]);
    snapshots of the batch at each checkpoint are returned alongside the
    final batch.  Used by the Monte Carlo experiments, where per-sample
    adaptive control would dominate the runtime.
    """
    B0 = np.asarray(B0, dtype=complex)
    if B0.ndim != 2 or B0.shape[1] != 2 * N + 1:
        raise ValueError(f"batch must have shape (n, {2 * N + 1})")
    marks = [t0, t1] if checkpoints is None else [t0, *np.asarray(checkpoints, float), t1]
    for a, b in zip(marks[:-1], marks[1:]):
        if (b - a) * np.sign(t1 - t0) < 0:
            raise ValueError("checkpoints must be monotone between t0 and t1")

    def f(t, B):
        return -1j / t * nonlinear_sum(t, B, N, dealias=dealias)

    snaps: list[np.ndarray] = []
    B = B0.copy()
    uniq = []
    for m in marks:
        if not uniq or m != uniq[-1]:
            uniq.append(m)
    record = set(np.asarray(checkpoints, float).tolist()) if checkpoints is not None else set()
    for ta, tb in zip(uniq[:-1], uniq[1:]):
        for sa, sb in zip(*(lambda ts: (ts[:-1], ts[1:]))(_rk4_steps(ta, tb, step))):
            h = sb - sa
            k1 = f(sa, B)
            k2 = f(sa + h / 2, B + h / 2 * k1)
            k3 = f(sa + h / 2, B + h / 2 * k2)
            k4 = f(sb, B + h * k3)
            B = B + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if tb in record:
            snaps.append(B.copy())
    return B, snaps


def export_trajectory_csv(trajectory: TrajectoryRecord, path) -> None:
    """Wide-format CSV: t, mass, then re_k / im_k per mode."""
    import csv

    N = trajectory.N
    ks = mode_indices(N)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "mass"]
                        + [f"re_{k}" for k in ks] + [f"im_{k}" for k in ks])
        for t, st, m in zip(trajectory.times, trajectory.states, trajectory.mass_series):
            writer.writerow([f"{t:.17g}", f"{m:.17g}"]
                            + [f"{x:.17g}" for x in st.B.real]
                            + [f"{x:.17g}" for x in st.B.imag])
