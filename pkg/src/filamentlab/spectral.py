"""Spectral coefficient states, resonance arithmetic, norms and field synthesis.

The fundamental object is a vector of complex Fourier coefficients
``B_k``, ``|k| <= N``, attached to a time stamp ``t``.  The periodic field
carried by such a state is

    v(t, x) = sum_{|j| <= N} B_j(t) e^{i t j^2} e^{i x j},

so the coefficients are the free-evolution profile of ``v`` and
``|v-hat(k)| = |B_k|``.

Pairing convention, used throughout the package:

    <f, g> := sum_k fhat(k) * conj(ghat(k))        (no 2*pi factor)

All norms, masses and density integrands are expressed in this convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "CoefficientState",
    "GridField",
    "SobolevParams",
    "apply_multiplier_d",
    "bracket",
    "holder_seminorm",
    "mass",
    "mode_indices",
    "multiplier_symbol",
    "resonance_phase",
    "state_from_json",
    "state_to_json",
    "synthesize_profile",
    "synthesize_v",
    "weighted_norm",
]


def mode_indices(N: int) -> np.ndarray:
    """Mode indices k = -N..N, in the storage order of CoefficientState.B."""
    return np.arange(-N, N + 1)


def bracket(k) -> np.ndarray:
    """Japanese bracket <k> = (1 + k^2)^(1/2)."""
    k = np.asarray(k, dtype=float)
    return np.sqrt(1.0 + k * k)


def multiplier_symbol(k, sigma: float) -> np.ndarray:
    """Symbol 1 + |k|^sigma of the inhomogeneous derivative multiplier."""
    k = np.asarray(k, dtype=float)
    return 1.0 + np.abs(k) ** sigma


@dataclass(frozen=True)
class CoefficientState:
    """Truncated coefficient vector {B_k}, |k| <= N, at time t.

    ``B`` is stored in increasing-k order (k = -N..N).  ``gauge_phase``
    accumulates the phase applied by the gauge transform so a forward
    gauge followed by a backward gauge is the identity.

    The canonical experiments live on t >= 1; the curve-reconstruction
    pipeline also needs states at t in [1/4, 1), so any t > 0 is legal.
    """

    t: float
    N: int
    B: np.ndarray
    gauge_phase: float = 0.0

    def __post_init__(self):
        B = np.asarray(self.B, dtype=complex)
        object.__setattr__(self, "B", B)
        if self.N < 0:
            raise ValueError(f"truncation radius must be >= 0, got N={self.N}")
        if B.ndim != 1 or B.size != 2 * self.N + 1:
            raise ValueError(
                f"coefficient vector must have length 2N+1={2 * self.N + 1}, got {B.shape}"
            )
        if not self.t > 0:
            raise ValueError(f"time stamp must be positive, got t={self.t}")
        if not np.all(np.isfinite(B.view(float))):
            raise ValueError("coefficient vector contains non-finite entries")

    @property
    def k(self) -> np.ndarray:
        return mode_indices(self.N)

    def mode(self, k: int) -> complex:
        if abs(k) > self.N:
            raise IndexError(f"mode {k} outside truncation |k| <= {self.N}")
        return complex(self.B[k + self.N])

    def with_coefficients(self, B: np.ndarray, *, t: float | None = None,
                          gauge_phase: float | None = None) -> "CoefficientState":
        return replace(
            self,
            B=np.asarray(B, dtype=complex),
            t=self.t if t is None else t,
            gauge_phase=self.gauge_phase if gauge_phase is None else gauge_phase,
        )


@dataclass(frozen=True)
class SobolevParams:
    """Regularity pair (s, s') with 0 <= s' < s."""

    s: float
    s_prime: float = 0.0

    def __post_init__(self):
        if not 0 <= self.s_prime < self.s:
            raise ValueError(
                f"need 0 <= s_prime < s, got s={self.s}, s_prime={self.s_prime}"
            )


@dataclass(frozen=True)
class GridField:
    """Complex samples of a field on a uniform, strictly increasing grid."""

    x_nodes: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_nodes, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        object.__setattr__(self, "x_nodes", x)
        object.__setattr__(self, "values", v)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("grid needs at least two nodes")
        if v.shape != x.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {x.shape}")
        dx = np.diff(x)
        if not np.all(dx > 0):
            raise ValueError("grid nodes must be strictly increasing")
        if not np.allclose(dx, dx[0], rtol=1e-9, atol=1e-12 * abs(dx[0])):
            raise ValueError("grid spacing must be uniform")

    @property
    def dx(self) -> float:
        return float(self.x_nodes[1] - self.x_nodes[0])


def resonance_phase(k: int, j1: int, j2: int, j3: int) -> int:
    """Phase frequency w = k^2 - j1^2 + j2^2 - j3^2 of an interaction quadruple.

    Requires the momentum constraint k - j1 + j2 - j3 = 0, under which the
    frequency factorizes as 2 (k - j1)(j1 - j2); it vanishes exactly on the
    resonant quadruples k = j1 or j1 = j2.
    """
    if k - j1 + j2 - j3 != 0:
        raise ValueError(
            f"momentum constraint violated: k-j1+j2-j3 = {k - j1 + j2 - j3} != 0"
        )
    return 2 * (k - j1) * (j1 - j2)


def mass(state: CoefficientState) -> float:
    """Conserved mass M = sum_k |B_k|^2."""
    return float(np.sum(np.abs(state.B) ** 2))


def weighted_norm(state: CoefficientState, s: float) -> float:
    """Weighted l^{2,s} norm ( sum <k>^{2s} |B_k|^2 )^(1/2), s >= 0."""
    if s < 0:
        raise ValueError(f"weight exponent must be >= 0, got s={s}")
    w = bracket(state.k) ** (2.0 * s)
    return float(np.sqrt(np.sum(w * np.abs(state.B) ** 2)))


def apply_multiplier_d(state: CoefficientState, s: float) -> CoefficientState:
    """Apply the multiplier with symbol 1 + |k|^{2s+1} to the coefficients.

    The symbol is inhomogeneous on purpose: it is the covariance weight of
    the Gaussian ensemble, not the plain |k|^{2s+1} derivative.  Time stamp
    and gauge phase are unchanged.
    """
    sym = multiplier_symbol(state.k, 2.0 * s + 1.0)
    return state.with_coefficients(state.B * sym)


def synthesize_v(state: CoefficientState, grid: np.ndarray) -> GridField:
    """Evaluate v(t, x) = sum_j B_j e^{i t j^2} e^{i x j} on a real grid."""
    x = np.asarray(grid, dtype=float)
    ks = state.k
    coeff = state.B * np.exp(1j * state.t * ks.astype(float) ** 2)
    values = np.exp(1j * np.outer(x, ks)) @ coeff
    return GridField(x_nodes=x, values=values)


def synthesize_profile(B: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Evaluate the free-phase-stripped profile sum_j B_j e^{i x j}.

    This is the field whose modulus spectrum is frozen under the linear
    flow; norm-growth experiments monitor it so that switching the
    nonlinearity off gives an exactly constant series.
    """
    B = np.asarray(B, dtype=complex)
    N = (B.size - 1) // 2
    if B.size != 2 * N + 1:
        raise ValueError("coefficient vector must have odd length 2N+1")
    x = np.asarray(grid, dtype=float)
    return np.exp(1j * np.outer(x, mode_indices(N))) @ B


def holder_seminorm(f: GridField, s_prime: float) -> float:
    """Discrete C^{s'} norm estimate: sup |f| plus the dyadic-increment seminorm.

    The seminorm is max over separations h in {1, 2, 4, ...} (in grid units,
    up to half the grid) of max_m |f[m+h] - f[m]| / (h dx)^{s'}.
    """
    if not 0 < s_prime < 1:
        raise ValueError(f"need 0 < s_prime < 1, got {s_prime}")
    v = f.values
    n = v.size
    if n < 16:
        raise ValueError(f"need at least 16 grid nodes, got {n}")
    sup = float(np.max(np.abs(v)))
    semi = 0.0
    h = 1
    while h <= n // 2:
        inc = float(np.max(np.abs(v[h:] - v[:-h])))
        semi = max(semi, inc / (h * f.dx) ** s_prime)
        h *= 2
    return sup + semi


def state_to_json(state: CoefficientState) -> str:
    """Serialize a state as {"t", "N", "re", "im", "gauge_phase"} with k = -N..N."""
    payload = {
        "t": state.t,
        "N": state.N,
        "re": state.B.real.tolist(),
        "im": state.B.imag.tolist(),
        "gauge_phase": state.gauge_phase,
    }
    return json.dumps(payload)


def state_from_json(text: str) -> CoefficientState:
    payload = json.loads(text)
    for key in ("t", "N", "re", "im"):
        if key not in payload:
            raise ValueError(f"state JSON missing required key {key!r}")
    B = np.asarray(payload["re"], dtype=float) + 1j * np.asarray(payload["im"], dtype=float)
    return CoefficientState(
        t=float(payload["t"]),
        N=int(payload["N"]),
        B=B,
        gauge_phase=float(payload.get("gauge_phase", 0.0)),
    )
