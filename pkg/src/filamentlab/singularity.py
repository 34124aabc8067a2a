"""Quantitative experiments on the t -> 0 limit: coefficient asymptotics,
curve convergence rates, trajectory Hölder exponents and corner extraction.

Coefficient asymptotics are expressed through A_j(t) := conj(B_j(1/t)),
for which the flow of :mod:`filamentlab.flow` satisfies

    A_j(t) = e^{i (|alpha_j|^2 - 2 mu) log t} alpha_j + O(t),   t -> 0,

with mu the conserved mass and alpha_j = conj(a_j) exactly on mode sets
whose dynamics is fully resonant (single mode; the {0, 1} pair).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import TrajectoryRecord
from .hasimoto import CurveFamily
from .spectral import mass

__all__ = [
    "AlphaFit",
    "Corner",
    "RateFit",
    "curve_limit",
    "extract_alpha",
    "holder_exponent",
    "loglog_fit",
    "polygon_corners",
]


@dataclass(frozen=True)
class RateFit:
    """Power-law fit y ~ exp(intercept) * x^exponent on a log-log window."""

    exponent: float
    intercept: float
    r_squared: float
    window: tuple[float, float]
    reliable: bool = True
    note: str = ""


def loglog_fit(x: np.ndarray, y: np.ndarray, *, drop_largest: int = 2,
               drop_smallest: int = 1) -> RateFit:
    """Least-squares log-log fit with the default trimming policy.

    The largest two and smallest one abscissas are excluded (transient and
    extrapolation contamination at the window ends).  Nonpositive ordinates
    flag the fit as degenerate rather than raising.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.argsort(x)
    x, y = x[order], y[order]
    lo = drop_smallest
    hi = x.size - drop_largest
    if hi - lo < 2:
        lo, hi = 0, x.size
    xs, ys = x[lo:hi], y[lo:hi]
    window = (float(xs[0]), float(xs[-1])) if xs.size else (float("nan"),) * 2
    scale = float(np.max(np.abs(y))) if y.size else 0.0
    if scale <= 0 or np.any(ys <= 0):
        return RateFit(float("nan"), float("nan"), 0.0, window,
                       reliable=False, note="exact-constant")
    lx, ly = np.log(xs), np.log(ys)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (slope, inter), res, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(res[0]) if res.size else float(np.sum((A @ [slope, inter] - ly) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(inter), max(0.0, min(1.0, r2)), window)


@dataclass(frozen=True)
class AlphaFit:
    """Limit coefficients and the quality of the predicted rotation."""

    alpha: np.ndarray
    mu: float
    residual_times: np.ndarray
    residual_series: np.ndarray
    slope: RateFit
    skipped_modes: tuple[int, ...] = ()

    @property
    def mass_defect(self) -> float:
        return abs(float(np.sum(np.abs(self.alpha) ** 2)) - self.mu)


def extract_alpha(trajectory: TrajectoryRecord, *,
                  skip_threshold: float = 1e-12) -> AlphaFit:
    """Recover the limit coefficients alpha_j from a trajectory on a tau ladder.

    The trajectory times are an increasing flow-time ladder tau = 1/t with
    the last entries reaching tau >= 100 (t <= 1e-2).  alpha is obtained by
    unwinding the predicted rotation e^{i (|A_j|^2 - 2 mu) log t} at the two
    smallest t and extrapolating the O(t) error linearly to t = 0.
    """
    taus = np.asarray(trajectory.times, dtype=float)
    if np.any(np.diff(taus) <= 0):
        raise ValueError("trajectory must be on an increasing flow-time ladder")
    if taus[-1] < 100.0:
        raise ValueError("ladder must reach flow time >= 100 (t <= 1e-2)")
    ts = 1.0 / taus
    A = np.stack([np.conj(st.B) for st in trajectory.states])  # A_j(t_i), rows ~ taus
    mu = float(mass(trajectory.states[0]))

    # moduli at the smallest t set the rotation speed; tiny modes are skipped
    r = np.abs(A[-1])
    skipped = tuple(int(k) for k in np.flatnonzero(r < skip_threshold)
                    - trajectory.N)
    coeff = r**2 - 2.0 * mu
    t1, t2 = ts[-1], ts[-2]
    a1 = np.exp(-1j * coeff * np.log(t1)) * A[-1]
    a2 = np.exp(-1j * coeff * np.log(t2)) * A[-2]
    alpha = (t2 * a1 - t1 * a2) / (t2 - t1)
    alpha[r < skip_threshold] = 0.0

    cfin = np.abs(alpha) ** 2 - 2.0 * mu
    pred = np.exp(1j * np.outer(np.log(ts), cfin)) * alpha[None, :]
    resid = np.max(np.abs(A - pred), axis=1)
    # the two smallest t anchor the extrapolation, so their residual is ~0
    slope = loglog_fit(ts, np.maximum(resid, 1e-300), drop_smallest=2)
    if np.max(resid) < 1e-10:
        slope = RateFit(float("nan"), float("nan"), 0.0, slope.window,
                        reliable=False, note="residual at solver floor")
    return AlphaFit(alpha=alpha, mu=mu, residual_times=ts,
                    residual_series=resid, slope=slope, skipped_modes=skipped)


def curve_limit(curves: CurveFamily) -> tuple[np.ndarray, RateFit]:
    """Extrapolate the limit curve chi(0, .) and fit the approach rate.

    The limit is a pointwise sqrt(t) extrapolation from the two smallest
    ladder times; the fit is of sup_x |chi(t,.) - chi(0,.)| against t with
    the default trimming.  A non-monotone distance sequence flags the fit.
    """
    times = curves.times            # decreasing
    if times.size < 5:
        raise ValueError("need at least five ladder times")
    if times[0] / times[-1] < 100.0:
        raise ValueError("ladder must span at least two decades")
    p1, p2 = curves.points[-1], curves.points[-2]       # two smallest times
    s1, s2 = np.sqrt(times[-1]), np.sqrt(times[-2])
    chi0 = (s2 * p1[..., :] - s1 * p2[..., :]) / (s2 - s1)
    dists = np.array([np.max(np.linalg.norm(curves.points[i] - chi0, axis=1))
                      for i in range(times.size)])
    scale = max(np.max(np.linalg.norm(chi0, axis=1)), 1.0)
    if np.max(dists) < 1e-12 * scale:
        fit = RateFit(float("nan"), float("nan"), 0.0,
                      (float(times[-1]), float(times[0])),
                      reliable=False, note="exact-constant")
        return chi0, fit
    fit = loglog_fit(times, dists)
    # distances should shrink with t; tolerate small non-monotonicity only
    tol = 0.1 * np.max(dists)
    d_by_t = dists[::-1]            # ascending t
    worst = float(np.max(np.maximum(d_by_t[:-1] - d_by_t[1:], 0.0)))
    if worst > tol:
        fit = RateFit(fit.exponent, fit.intercept, fit.r_squared, fit.window,
                      reliable=False, note="non-monotone distance sequence")
    return chi0, fit


def holder_exponent(times: np.ndarray, values: np.ndarray) -> RateFit:
    """Hölder exponent of a trajectory from dyadic sup-increments.

    ``times`` is a uniform ladder with at least 64 points; ``values`` the
    trajectory samples (scalars or vectors).  For each dyadic separation h
    the sup of |x(t+h) - x(t)| is collected and the exponent is the slope
    of the log-log fit over separations up to a quarter of the span.
    """
    times = np.asarray(times, dtype=float)
    vals = np.asarray(values, dtype=float)
    if times.size < 64:
        raise ValueError(f"need at least 64 ladder points, got {times.size}")
    dts = np.diff(times)
    if not np.allclose(dts, dts[0], rtol=1e-6):
        raise ValueError("ladder must be uniform")
    if vals.ndim == 1:
        vals = vals[:, None]
    dt = abs(float(dts[0]))
    hs, sups = [], []
    h = 1
    while h <= times.size // 4:
        inc = np.linalg.norm(vals[h:] - vals[:-h], axis=1)
        hs.append(h * dt)
        sups.append(float(np.max(inc)))
        h *= 2
    hs = np.array(hs)
    sups = np.array(sups)
    if np.max(sups) < 1e-12 * max(1.0, float(np.max(np.abs(vals)))):
        return RateFit(float("nan"), float("nan"), 0.0,
                       (float(hs[0]), float(hs[-1])),
                       reliable=False, note="exact-constant")
    # default trimming: the largest separations mix in ballistic/saturated
    # window behavior, the smallest carries the limit-sample distortion
    return loglog_fit(hs, np.maximum(sups, 1e-300))


@dataclass(frozen=True)
class Corner:
    """A detected tangent discontinuity of a polyline."""

    location: float
    turning_angle: float            # angle between one-sided tangents
    interior_angle: float           # pi - turning_angle


def polygon_corners(x_nodes: np.ndarray, points: np.ndarray,
                    spacing_hint: float = 1.0,
                    min_turn: float = 0.05) -> list[Corner]:
    """Detect corners of an arc-length polyline from one-sided tangent averages.

    For every node, unit tangents are averaged over windows of length
    ~0.35 * spacing_hint on each side (leaving a small gap around the node);
    local maxima of the angle between the side averages above ``min_turn``
    are corners.  Locations are refined to sub-grid accuracy by the
    centroid of the turning density across the peak.
    """
    x = np.asarray(x_nodes, dtype=float)
    P = np.asarray(points, dtype=float)
    if P.shape != (x.size, 3) or x.size < 8:
        raise ValueError("need an (n, 3) polyline with n >= 8 nodes")
    dx = x[1] - x[0]
    seg = np.diff(P, axis=0)
    T = seg / np.linalg.norm(seg, axis=1)[:, None]

    gap = max(1, int(round(0.05 * spacing_hint / dx)))
    win = max(2, int(round(0.35 * spacing_hint / dx)))

    n = x.size
    angle = np.zeros(n)
    for m in range(gap + win, n - gap - win - 1):
        left = T[m - gap - win:m - gap].mean(axis=0)
        right = T[m + gap:m + gap + win].mean(axis=0)
        left /= np.linalg.norm(left)
        right /= np.linalg.norm(right)
        angle[m] = np.arccos(np.clip(np.dot(left, right), -1.0, 1.0))

    kappa = np.linalg.norm(np.diff(T, axis=0), axis=1)  # turning per junction
    corners: list[Corner] = []
    suppress = max(1, int(round(0.5 * spacing_hint / dx)))
    order = np.argsort(angle)[::-1]
    taken = np.zeros(n, dtype=bool)
    for m in order:
        if angle[m] < min_turn:
            break
        if taken[max(0, m - suppress):m + suppress + 1].any():
            continue
        taken[m] = True
        lo = max(0, m - suppress)
        hi = min(kappa.size, m + suppress)
        wgt = kappa[lo:hi]
        if wgt.sum() > 0:
            loc = float(np.sum(x[lo + 1:hi + 1] * wgt) / wgt.sum())
        else:
            loc = float(x[m])
        corners.append(Corner(location=loc, turning_angle=float(angle[m]),
                              interior_angle=float(np.pi - angle[m])))
    corners.sort(key=lambda c: c.location)
    return corners
