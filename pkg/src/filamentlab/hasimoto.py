"""Physical-space solution samples, parallel frames, and curve reconstruction.

The coefficient flow of :mod:`filamentlab.flow` is connected to a focusing
cubic Schrodinger field on the line through

    u(t, x) = t^{-1/2} sum_{|j| <= N} B_j(tau) e^{i (x - j)^2 / (4 t)},
    tau = 1 / (4 t),

which solves i u_t + u_xx + |u|^2 u = 0 exactly up to the Galerkin
truncation remainder (verified by :func:`nls_residual`).  Each term
concentrates at the integer x = j as t -> 0.

Frames (T, e1, e2) are transported by the antisymmetric systems

    d/dx (T, e1, e2) = Gamma(w) (T, e1, e2),   Gamma built from Re w, Im w,
    d/dt (T, e1, e2) = Omega(w) (T, e1, e2),   Omega built from w_x, |w|^2/2,

whose zero-curvature compatibility holds exactly when the transported
field w solves i w_t + w_xx + |w|^2 w / 2 = 0.  A solution u of the
coefficient-1 equation therefore enters the frame stage scaled by
FILAMENT_SCALE = sqrt(2); equivalently, the curve's filament function is
sqrt(2) u.  The tangent T then solves the Schrodinger map T_t = T ^ T_xx
and the curve

    chi(t, x) = P + int_{t0}^{t} (T ^ T_x)(s, x0) ds + int_{x0}^{x} T(t, y) dy

solves the binormal flow, with (T ^ T_x) = Im( conj(w) (e1 + i e2) ).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .flow import TrajectoryRecord
from .spectral import CoefficientState, mode_indices

__all__ = [
    "Anchor",
    "CurveFamily",
    "FilamentSample",
    "FrameField",
    "FILAMENT_SCALE",
    "anchor_trajectory",
    "anchor_trajectory_with_limit",
    "compatibility_defect",
    "curve_time",
    "export_curve_csv",
    "filament_from_curve",
    "flow_time",
    "frame_evolve_t",
    "frame_transport_x",
    "nls_residual",
    "reconstruct_curve",
    "u_derivative",
    "u_from_coefficients",
]

# Curvature normalization of the frame stage; see module docstring.
FILAMENT_SCALE = float(np.sqrt(2.0))

_ORTHO_TOL = 1e-9


def flow_time(t: float) -> float:
    """Coefficient-flow time tau carrying the physical-space field at time t."""
    if not t > 0:
        raise ValueError(f"physical time must be positive, got {t}")
    return 1.0 / (4.0 * t)


def curve_time(tau: float) -> float:
    """Inverse of :func:`flow_time` (the map is an involution)."""
    return flow_time(tau)


@dataclass(frozen=True)
class FilamentSample:
    """The line solution u(t, .) sampled on a uniform grid."""

    t: float
    x_nodes: np.ndarray
    u_values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_nodes, dtype=float)
        u = np.asarray(self.u_values, dtype=complex)
        object.__setattr__(self, "x_nodes", x)
        object.__setattr__(self, "u_values", u)
        if not self.t > 0:
            raise ValueError(f"time must be positive, got {self.t}")
        if x.ndim != 1 or u.shape != x.shape:
            raise ValueError("grid and values must be matching 1-D arrays")
        if x.size >= 2:
            dx = np.diff(x)
            if not np.all(dx > 0) or not np.allclose(dx, dx[0], rtol=1e-9):
                raise ValueError("grid must be uniform and increasing")

    @property
    def dx(self) -> float:
        return float(self.x_nodes[1] - self.x_nodes[0])


def _ansatz_terms(B: np.ndarray, t: float, x: np.ndarray) -> np.ndarray:
    N = (B.size - 1) // 2
    z = np.subtract.outer(np.asarray(x, dtype=float), mode_indices(N).astype(float))
    return np.exp(1j * z * z / (4.0 * t)) / np.sqrt(t), z


def _u_values(B: np.ndarray, t: float, x: np.ndarray) -> np.ndarray:
    terms, _ = _ansatz_terms(B, t, x)
    return terms @ B


def _u_and_derivative(B: np.ndarray, t: float, x: np.ndarray):
    terms, z = _ansatz_terms(B, t, x)
    u = terms @ B
    ux = (terms * (1j * z / (2.0 * t))) @ B
    return u, ux


def _check_state_time(state: CoefficientState, t: float):
    tau = flow_time(t)
    if abs(state.t - tau) > 1e-9 * max(1.0, tau):
        raise ValueError(
            f"state time {state.t} does not match flow time {tau} of t={t}"
        )


def u_from_coefficients(state: CoefficientState, t: float, grid: np.ndarray) -> FilamentSample:
    """Evaluate the line solution at time t from a state at tau = 1/(4t)."""
    _check_state_time(state, t)
    return FilamentSample(t=t, x_nodes=np.asarray(grid, dtype=float),
                          u_values=_u_values(state.B, t, np.asarray(grid, dtype=float)))


def u_derivative(state: CoefficientState, t: float, grid: np.ndarray) -> np.ndarray:
    """Spatial derivative of u, by termwise differentiation of the mode sum."""
    _check_state_time(state, t)
    _, ux = _u_and_derivative(state.B, t, np.asarray(grid, dtype=float))
    return ux


def nls_residual(states, t: float, grid: np.ndarray) -> float:
    """Sup-norm residual of i u_t + u_xx + |u|^2 u over the grid, / sup|u|^3.

    ``states`` are three coefficient states at nearby flow times bracketing
    1/(4t); the time derivative is a (nonuniform) centered difference over
    the corresponding physical times, the space derivative is analytic.
    The residual floor for truncated data is the Galerkin remainder.
    """
    if len(states) != 3:
        raise ValueError("need exactly three bracketing states")
    x = np.asarray(grid, dtype=float)
    ts = np.array([curve_time(st.t) for st in states])
    order = np.argsort(ts)
    ts = ts[order]
    sts = [states[i] for i in order]
    if not (ts[0] < ts[1] < ts[2]):
        raise ValueError("states must be at three distinct flow times")
    us = [_u_values(st.B, tt, x) for st, tt in zip(sts, ts)]
    h1, h2 = ts[1] - ts[0], ts[2] - ts[1]
    # second-order first derivative on a nonuniform 3-point stencil
    ut = (h1**2 * us[2] + (h2**2 - h1**2) * us[1] - h2**2 * us[0]) / (h1 * h2 * (h1 + h2))
    mid = sts[1]
    terms, z = _ansatz_terms(mid.B, ts[1], x)
    uxx = (terms * ((1j * z / (2 * ts[1])) ** 2 + 1j / (2 * ts[1]))) @ mid.B
    u = us[1]
    res = 1j * ut + uxx + np.abs(u) ** 2 * u
    sup_u = float(np.max(np.abs(u)))
    if sup_u == 0.0:
        return float(np.max(np.abs(res)))
    return float(np.max(np.abs(res))) / sup_u**3


# ---------------------------------------------------------------------------
# frames


def _rotation_from_axial(axial: np.ndarray) -> np.ndarray:
    """exp of the antisymmetric matrix with axial vector ``axial`` (Rodrigues)."""
    theta = float(np.linalg.norm(axial))
    A = np.array([
        [0.0, -axial[2], axial[1]],
        [axial[2], 0.0, -axial[0]],
        [-axial[1], axial[0], 0.0],
    ])
    if theta < 1e-12:
        return np.eye(3) + A + 0.5 * (A @ A)
    return np.eye(3) + np.sin(theta) / theta * A + (1 - np.cos(theta)) / theta**2 * (A @ A)


def _rotations_from_axials(axials: np.ndarray) -> np.ndarray:
    """Vectorized Rodrigues map for an (n, 3) stack of axial vectors."""
    n = axials.shape[0]
    theta = np.linalg.norm(axials, axis=1)
    A = np.zeros((n, 3, 3))
    A[:, 0, 1] = -axials[:, 2]
    A[:, 0, 2] = axials[:, 1]
    A[:, 1, 0] = axials[:, 2]
    A[:, 1, 2] = -axials[:, 0]
    A[:, 2, 0] = -axials[:, 1]
    A[:, 2, 1] = axials[:, 0]
    A2 = A @ A
    small = theta < 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        c1 = np.where(small, 1.0, np.sin(theta) / np.where(small, 1.0, theta))
        c2 = np.where(small, 0.5, (1 - np.cos(theta)) / np.where(small, 1.0, theta**2))
    return np.eye(3)[None] + c1[:, None, None] * A + c2[:, None, None] * A2


def _gamma_axial(w: np.ndarray) -> np.ndarray:
    """Axial vector of the x-transport generator for field values w: (0, Im w, -Re w)."""
    w = np.atleast_1d(w)
    out = np.zeros(w.shape + (3,))
    out[..., 1] = w.imag
    out[..., 2] = -w.real
    return out


def _omega_axial(wx: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Axial vector of the t-transport generator: (|w|^2/2, Re w_x, Im w_x)."""
    wx = np.atleast_1d(wx)
    out = np.zeros(wx.shape + (3,))
    out[..., 0] = 0.5 * np.abs(np.atleast_1d(w)) ** 2
    out[..., 1] = wx.real
    out[..., 2] = wx.imag
    return out


def _check_orthonormal(F: np.ndarray, what: str):
    gram = F @ F.T
    if np.max(np.abs(gram - np.eye(3))) > 1e-8:
        raise ValueError(f"{what} is not orthonormal (Gram defect "
                         f"{np.max(np.abs(gram - np.eye(3))):.2e})")
    if np.linalg.det(F) < 0:
        raise ValueError(f"{what} must be right-handed")


@dataclass(frozen=True)
class FrameField:
    """Orthonormal triads (T, e1, e2) along a grid at fixed time."""

    t: float
    x_nodes: np.ndarray
    T: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_nodes, dtype=float)
        object.__setattr__(self, "x_nodes", x)
        for name in ("T", "e1", "e2"):
            v = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, v)
            if v.shape != (x.size, 3):
                raise ValueError(f"{name} must have shape (n, 3)")

    def orthonormality_defect(self) -> float:
        d = 0.0
        vecs = (self.T, self.e1, self.e2)
        for i, a in enumerate(vecs):
            for j, b in enumerate(vecs):
                dots = np.sum(a * b, axis=1)
                d = max(d, float(np.max(np.abs(dots - (1.0 if i == j else 0.0)))))
        return d

    def matrices(self) -> np.ndarray:
        return np.stack([self.T, self.e1, self.e2], axis=1)


def _march_frames(rot: np.ndarray, F0: np.ndarray) -> np.ndarray:
    """Fold a sequence of step rotations: F_{i+1} = rot_i @ F_i."""
    out = np.empty((rot.shape[0] + 1, 3, 3))
    out[0] = F0
    cur = F0
    for i in range(rot.shape[0]):
        cur = rot[i] @ cur
        out[i + 1] = cur
    return out


def frame_transport_x(u: FilamentSample, init: np.ndarray, x0: float = 0.0) -> FrameField:
    """Transport an orthonormal triad along the grid by the x-frame system.

    ``init`` is the 3x3 matrix with rows (T, e1, e2) at the grid node
    nearest to x0 (which must coincide with a node).  Each grid interval
    is one exponential-map step with the midpoint field value approximated
    by the average of the endpoint samples.
    """
    init = np.asarray(init, dtype=float)
    _check_orthonormal(init, "initial frame")
    x = u.x_nodes
    m0 = int(np.argmin(np.abs(x - x0)))
    if abs(x[m0] - x0) > 1e-9 * max(1.0, abs(x0)) + 1e-12:
        raise ValueError(f"x0={x0} is not a grid node")
    dx = u.dx
    mids = 0.5 * (u.u_values[1:] + u.u_values[:-1])
    frames = np.empty((x.size, 3, 3))
    frames[m0] = init
    if m0 < x.size - 1:
        rot = _rotations_from_axials(dx * _gamma_axial(mids[m0:]))
        frames[m0:] = _march_frames(rot, init)
    if m0 > 0:
        rot = _rotations_from_axials(-dx * _gamma_axial(mids[:m0][::-1]))
        frames[m0::-1] = _march_frames(rot, init)
    return FrameField(t=u.t, x_nodes=x, T=frames[:, 0], e1=frames[:, 1], e2=frames[:, 2])


def frame_evolve_t(times: np.ndarray, u_vals: np.ndarray, ux_vals: np.ndarray,
                   init: np.ndarray) -> np.ndarray:
    """Evolve a triad in time at a fixed point by the t-frame system.

    ``u_vals``/``ux_vals`` give the field and its x-derivative at the fixed
    point for each entry of ``times`` (monotone, fine enough to resolve the
    rotation).  One exponential-map step per interval, with midpoint
    generator from averaged samples.  Returns an (nt, 3, 3) stack with
    rows (T, e1, e2); the first entry is ``init``.
    """
    init = np.asarray(init, dtype=float)
    _check_orthonormal(init, "initial frame")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-D array")
    if times.size == 1:
        return init[None].copy()
    dts = np.diff(times)
    if not (np.all(dts > 0) or np.all(dts < 0)):
        raise ValueError("times must be strictly monotone")
    wm = 0.5 * (np.asarray(u_vals)[1:] + np.asarray(u_vals)[:-1])
    wxm = 0.5 * (np.asarray(ux_vals)[1:] + np.asarray(ux_vals)[:-1])
    rot = _rotations_from_axials(dts[:, None] * _omega_axial(wxm, wm))
    return _march_frames(rot, init)


# ---------------------------------------------------------------------------
# curve reconstruction


@dataclass(frozen=True)
class Anchor:
    """Base data of the reconstruction: time, point, position, frame."""

    t0: float = 1.0
    x0: float = 0.0
    base_point: np.ndarray = field(default_factory=lambda: np.zeros(3))
    basis: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "base_point", np.asarray(self.base_point, dtype=float))
        object.__setattr__(self, "basis", np.asarray(self.basis, dtype=float))
        if self.base_point.shape != (3,) or self.basis.shape != (3, 3):
            raise ValueError("anchor needs a 3-point and a 3x3 basis")
        _check_orthonormal(self.basis, "anchor basis")
        if not self.t0 > 0:
            raise ValueError("anchor time must be positive")


@dataclass(frozen=True)
class CurveFamily:
    """Arc-length parametrized curves over a decreasing time ladder."""

    times: np.ndarray
    x_nodes: np.ndarray
    points: np.ndarray
    anchor: Anchor
    frames: list[FrameField] | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "x_nodes", np.asarray(self.x_nodes, dtype=float))
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        if self.points.shape != (self.times.size, self.x_nodes.size, 3):
            raise ValueError("points must have shape (nt, nx, 3)")

    def arc_length_defect(self) -> float:
        seg = np.diff(self.points, axis=1)
        dx = self.x_nodes[1] - self.x_nodes[0]
        return float(np.max(np.abs(np.linalg.norm(seg, axis=2) / dx - 1.0)))


def _w_point(dense, t: float, x: float):
    """Transported field w = sqrt(2) u and its x-derivative at one point."""
    B = dense.coefficients_at(flow_time(t))
    u, ux = _u_and_derivative(B, t, np.array([x]))
    return FILAMENT_SCALE * u[0], FILAMENT_SCALE * ux[0]


def _prefix_march(dense, anchor: Anchor, stops: np.ndarray, safety: float = 0.02):
    """March the anchor-point frame and the curve time integral down the ladder.

    Integrates d/ds F = Omega(s, x0) F and chi0(s) = P + int Im(conj(w)(e1+i e2))
    from t0 through every stop (decreasing).  The march runs in the flow
    time tau = 1/(4 s): there the per-mode phases (x0 - j)^2 / (4 s) are
    linear in tau with constant frequencies (x0 - j)^2, so a uniform step
    resolves them all the way to s -> 0 (in s itself their frequency blows
    up like 1/s^2 and any fixed-rate stepping aliases).  Returns frames and
    chi0 at the stops.
    """
    t0, x0 = anchor.t0, anchor.x0
    N = dense.N
    ks = mode_indices(N).astype(float)
    # phase frequencies in tau, plus a slow-rotation bound; one uniform step
    freq = max(float(np.max((x0 - ks) ** 2)), 1.0)
    h_tau = safety / freq

    tau_stops = np.array([flow_time(t0)] + [flow_time(float(s)) for s in stops])
    # step grid hitting every stop exactly
    grids = []
    for a, b in zip(tau_stops[:-1], tau_stops[1:]):
        if b <= a + 1e-15:
            grids.append(np.array([a]))
            continue
        n = max(1, int(np.ceil((b - a) / h_tau)))
        grids.append(np.linspace(a, b, n + 1)[:-1])
    taus = np.concatenate(grids + [tau_stops[-1:]])
    stop_idx = np.cumsum([g.size for g in grids])

    mids = 0.5 * (taus[:-1] + taus[1:])
    hs = np.diff(taus)
    # field and derivative at the anchor point for all step midpoints
    Bmid = dense.coefficients_at_many(mids)
    smid = 1.0 / (4.0 * mids)
    z = x0 - ks[None, :]
    kern = np.exp(1j * z * z / (4.0 * smid[:, None])) / np.sqrt(smid[:, None])
    w = FILAMENT_SCALE * np.sum(kern * Bmid, axis=1)
    wx = FILAMENT_SCALE * np.sum(kern * (1j * z / (2.0 * smid[:, None])) * Bmid, axis=1)
    # d(tau)/ds = -4 tau^2, so the s-generator picks up -h / (4 tau^2)
    scale = -hs / (4.0 * mids**2)
    axials = _omega_axial(wx, w) * scale[:, None]
    rot = _rotations_from_axials(axials)
    rot_half = _rotations_from_axials(0.5 * axials)

    F = anchor.basis.copy()
    chi = anchor.base_point.copy()
    frames, chis = [], []
    targets = set(int(i) for i in stop_idx)
    out = {}
    for i in range(taus.size):
        if i in targets:
            out[i] = (F.copy(), chi.copy())
        if i == taus.size - 1:
            break
        Fm = rot_half[i] @ F
        integrand = np.imag(np.conj(w[i]) * (Fm[1] + 1j * Fm[2]))
        chi = chi + scale[i] * integrand
        F = rot[i] @ F
    for idx in stop_idx:
        Fi, ci = out[int(idx)]
        frames.append(Fi)
        chis.append(ci)
    return frames, chis


def _transport_line(dense, t: float, grid: np.ndarray, x0: float,
                    init: np.ndarray, chi0: np.ndarray, safety: float = 0.2):
    """Transport frames and accumulate the curve along the line at fixed t.

    Substeps per grid interval are chosen from the field's local rotation
    and oscillation rates (both grow as t -> 0); the field is evaluated
    analytically at substep midpoints.
    """
    B = dense.coefficients_at(flow_time(t))
    N = (B.size - 1) // 2
    dx = grid[1] - grid[0]
    amp = FILAMENT_SCALE * np.sum(np.abs(B)) / np.sqrt(t)
    span = max(abs(grid[0]) + N, abs(grid[-1]) + N)
    rate = amp + span / (2.0 * t)
    nsub = max(1, int(np.ceil(dx * rate / safety)))

    m0 = int(np.argmin(np.abs(grid - x0)))
    if abs(grid[m0] - x0) > 1e-9:
        raise ValueError(f"anchor x0={x0} must be a node of the output grid")

    points = np.empty((grid.size, 3))
    frames = np.empty((grid.size, 3, 3))
    points[m0] = chi0
    frames[m0] = init

    h = dx / nsub
    for direction in (+1, -1):
        if direction > 0:
            n_int = grid.size - 1 - m0
        else:
            n_int = m0
        if n_int == 0:
            continue
        # all substep midpoints of this side, in marching order
        offs = (np.arange(n_int * nsub) + 0.5) * h * direction
        mids = grid[m0] + offs
        w = FILAMENT_SCALE * _u_values(B, t, mids)
        rot = _rotations_from_axials(direction * h * _gamma_axial(w))
        F = init.copy()
        chi = chi0.copy()
        node = m0
        for i in range(n_int * nsub):
            half = _rotation_from_axial(0.5 * direction * h * _gamma_axial(w[i])[0])
            Tm = (half @ F)[0]
            chi = chi + direction * h * Tm
            F = rot[i] @ F
            if (i + 1) % nsub == 0:
                node += direction
                points[node] = chi
                frames[node] = F
    return points, FrameField(t=t, x_nodes=grid, T=frames[:, 0],
                              e1=frames[:, 1], e2=frames[:, 2])


def reconstruct_curve(trajectory: TrajectoryRecord, times: np.ndarray,
                      grid: np.ndarray, anchor: Anchor | None = None,
                      *, keep_frames: bool = True) -> CurveFamily:
    """Reconstruct the curve family chi(t, x) on a decreasing time ladder.

    ``trajectory`` must carry a dense interpolant covering the flow times
    1/(4t) for every requested t and for the anchor time.  The anchor-point
    time integral is marched once; each ladder time then transports frames
    along the grid.
    """
    anchor = anchor or Anchor()
    times = np.asarray(times, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) >= 0):
        raise ValueError("times must be a strictly decreasing ladder")
    if np.any(times <= 0) or np.any(times > anchor.t0):
        raise ValueError("ladder must lie in (0, t0]")
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be increasing with at least two nodes")
    if trajectory.dense is None:
        raise ValueError("trajectory must carry a dense interpolant "
                         "(integrate with the adaptive scheme)")
    lo, hi = trajectory.dense.t_span
    need_lo, need_hi = flow_time(anchor.t0), flow_time(float(times[-1]))
    if need_lo < lo - 1e-9 or need_hi > hi + 1e-9:
        raise ValueError(
            f"trajectory covers flow times [{lo}, {hi}] but the ladder needs "
            f"[{need_lo}, {need_hi}]")

    frames0, chis0 = _prefix_march(trajectory.dense, anchor, times)
    pts = np.empty((times.size, grid.size, 3))
    frame_fields = []
    for i, t in enumerate(times):
        p, ff = _transport_line(trajectory.dense, float(t), grid, anchor.x0,
                                frames0[i], chis0[i])
        pts[i] = p
        frame_fields.append(ff)
    return CurveFamily(times=times, x_nodes=grid, points=pts, anchor=anchor,
                       frames=frame_fields if keep_frames else None)


def anchor_trajectory(trajectory: TrajectoryRecord, times: np.ndarray,
                      anchor: Anchor | None = None) -> np.ndarray:
    """Positions chi(t, x0) of the anchor point over a decreasing ladder."""
    anchor = anchor or Anchor()
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) >= 0):
        raise ValueError("times must be strictly decreasing")
    if trajectory.dense is None:
        raise ValueError("trajectory must carry a dense interpolant")
    _, chis = _prefix_march(trajectory.dense, anchor, times)
    return np.asarray(chis)


def anchor_trajectory_with_limit(trajectory: TrajectoryRecord, anchor: Anchor,
                                 ladder: np.ndarray, n_points: int):
    """Uniform anchor-point trajectory over [0, t0] including the limit sample.

    The t = 0 entry is the sqrt-extrapolation from the two smallest ladder
    times (its error is of the order of the increments there, so it pins
    the limit without biasing Hölder exponents); all other entries are
    marched.  Returns (ascending times, points)."""
    ladder = np.asarray(ladder, dtype=float)
    if ladder.size < 2 or ladder[-1] >= ladder[-2]:
        raise ValueError("ladder must be decreasing with at least two times")
    fine = np.linspace(0.0, anchor.t0, n_points)
    marched = anchor_trajectory(trajectory, fine[1:][::-1], anchor)[::-1]
    pair = anchor_trajectory(trajectory, np.array([ladder[-2], ladder[-1]]), anchor)
    s1, s2 = np.sqrt(ladder[-1]), np.sqrt(ladder[-2])
    lim = (s2 * pair[1] - s1 * pair[0]) / (s2 - s1)
    return fine, np.vstack([lim, marched])


def filament_from_curve(x_nodes: np.ndarray, points: np.ndarray,
                        arc_tol: float = 1e-3):
    """Recover the filament function of one arc-length curve.

    Builds segment tangents, parallel-transports a normal pair along the
    curve by minimal rotations, and reads off the curvature components
    u = <T', e1> + i <T', e2> at the interior nodes.  The result is the
    transported field (so sqrt(2) times the Schrodinger field for curves
    built by :func:`reconstruct_curve`), unique up to a global phase.

    Returns (interior nodes, complex values).
    """
    x = np.asarray(x_nodes, dtype=float)
    P = np.asarray(points, dtype=float)
    if P.shape != (x.size, 3) or x.size < 3:
        raise ValueError("need an (n, 3) point sequence with n >= 3")
    dx = x[1] - x[0]
    seg = np.diff(P, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    if np.max(np.abs(lens / dx - 1.0)) > arc_tol:
        raise ValueError("curve is not arc-length parametrized within tolerance")
    T = seg / lens[:, None]

    # normal pair at the first segment: pick the axis least aligned with T
    T0 = T[0]
    seed = np.eye(3)[np.argmin(np.abs(T0))]
    e1 = seed - np.dot(seed, T0) * T0
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(T0, e1)

    vals = np.empty(x.size - 2, dtype=complex)
    for m in range(1, x.size - 1):
        Ta, Tb = T[m - 1], T[m]
        axis = np.cross(Ta, Tb)
        sin_t = np.linalg.norm(axis)
        cos_t = np.clip(np.dot(Ta, Tb), -1.0, 1.0)
        if sin_t > 1e-15:
            R = _rotation_from_axial(axis / sin_t * np.arctan2(sin_t, cos_t))
            e1_half = R @ e1  # frame transported across the junction
            e2_half = R @ e2
        else:
            e1_half, e2_half = e1, e2
        dT = (Tb - Ta) / dx
        # curvature components in the junction frame (average of the sides)
        f1 = 0.5 * (e1 + e1_half)
        f2 = 0.5 * (e2 + e2_half)
        vals[m - 1] = np.dot(dT, f1) + 1j * np.dot(dT, f2)
        e1, e2 = e1_half, e2_half
    return x[1:-1], vals


def compatibility_defect(frames: list[FrameField]) -> float:
    """Sup-norm of d/dt T - T ^ T_xx over interior nodes and times.

    ``frames`` is a ladder of FrameField at the same grid and at three or
    more (monotone, possibly nonuniform) times; centered differences are
    used in time, second differences in space.
    """
    if len(frames) < 3:
        raise ValueError("need at least three ladder times")
    x = frames[0].x_nodes
    if x.size < 5:
        raise ValueError("need at least five grid nodes")
    for f in frames:
        if f.x_nodes.shape != x.shape or np.max(np.abs(f.x_nodes - x)) > 1e-12:
            raise ValueError("all frames must share the same grid")
    ts = np.array([f.t for f in frames])
    dts = np.diff(ts)
    if not (np.all(dts > 0) or np.all(dts < 0)):
        raise ValueError("ladder times must be monotone")
    dx = x[1] - x[0]
    defect = 0.0
    for i in range(1, len(frames) - 1):
        h1 = ts[i] - ts[i - 1]
        h2 = ts[i + 1] - ts[i]
        Tm, T0, Tp = frames[i - 1].T, frames[i].T, frames[i + 1].T
        Tt = (h1**2 * Tp + (h2**2 - h1**2) * T0 - h2**2 * Tm) / (h1 * h2 * (h1 + h2))
        Txx = (T0[2:] - 2 * T0[1:-1] + T0[:-2]) / dx**2
        sm = T0[1:-1]
        # per-node euclidean norm, so the defect is rotation invariant
        resid = np.linalg.norm(Tt[1:-1] - np.cross(sm, Txx), axis=1)
        defect = max(defect, float(np.max(resid)))
    return defect


def export_curve_csv(curve: CurveFamily, path, include_frames: bool = False) -> None:
    """CSV rows (t, x, chi1, chi2, chi3[, frame columns])."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        head = ["t", "x", "chi1", "chi2", "chi3"]
        if include_frames:
            head += [f"{v}{i}" for v in ("T", "e1", "e2") for i in (1, 2, 3)]
        writer.writerow(head)
        for it, t in enumerate(curve.times):
            for ix, xx in enumerate(curve.x_nodes):
                row = [f"{t:.17g}", f"{xx:.17g}"] + \
                      [f"{c:.17g}" for c in curve.points[it, ix]]
                if include_frames:
                    if curve.frames is None:
                        raise ValueError("curve was built without frames")
                    ff = curve.frames[it]
                    row += [f"{c:.17g}" for vec in (ff.T, ff.e1, ff.e2)
                            for c in vec[ix]]
                writer.writerow(row)
