"""Configuration, orchestration, persistence and plotting for all experiments.

Runs are driven by a JSON config (plus ``--set key=value`` overrides whose
dotted paths mirror the JSON structure exactly).  Every run stages its
outputs in a temporary sibling directory and renames files into place, so
an interrupted run never leaves partially written files; the manifest
lists each emitted file with its content hash.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import __version__
from .checks import run_all_checks
from .flow import (
    FlowConfig,
    FlowError,
    evolve_dense,
    export_trajectory_csv,
    smoothing_increment,
)
from .hasimoto import (
    Anchor,
    anchor_trajectory_with_limit,
    export_curve_csv,
    flow_time,
    reconstruct_curve,
)
from .measures import (
    MeasureParams,
    density_limit,
    holder_growth_experiment,
    quasi_invariance_check,
    random_curve_experiment,
    sample_gamma,
)
from .singularity import curve_limit, holder_exponent, polygon_corners
from .spectral import CoefficientState, bracket, mass, mode_indices
from .svgplot import svg_curve_projection, svg_loglog

__all__ = ["ConfigError", "RunManifest", "main", "parse_config", "run"]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2
EXIT_IO = 3


class ConfigError(ValueError):
    """Config validation failure; message carries the offending key path."""


# ---------------------------------------------------------------------------
# config schema


@dataclass
class FlowSpec:
    rtol: float = 1e-10
    atol: float = 1e-10
    max_step: float = 0.0            # 0 means unbounded
    scheme: str = "adaptive_rk"
    dealias: bool | None = None

    def to_config(self) -> FlowConfig:
        return FlowConfig(rtol=self.rtol, atol=self.atol,
                          max_step=self.max_step if self.max_step > 0 else np.inf,
                          scheme=self.scheme, dealias=self.dealias)


@dataclass
class GridSpec:
    x_min: float = -2.5
    x_max: float = 2.5
    points: int = 1024

    def validate(self, path):
        if not self.x_min < self.x_max:
            raise ConfigError(f"{path}: x_min must be < x_max")
        if self.points < 2:
            raise ConfigError(f"{path}.points: need at least 2")

    def to_array(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.points)


@dataclass
class LadderSpec:
    start: float = 1.0
    stop: float = 100.0
    points: int = 16
    spacing: str = "geometric"       # geometric | uniform

    def validate(self, path):
        if self.start <= 0 or self.stop <= 0:
            raise ConfigError(f"{path}: ladder endpoints must be positive")
        if self.points < 2:
            raise ConfigError(f"{path}.points: need at least 2")
        if self.spacing not in ("geometric", "uniform"):
            raise ConfigError(f"{path}.spacing: unknown spacing {self.spacing!r}")

    def to_array(self) -> np.ndarray:
        if self.spacing == "geometric":
            return np.geomspace(self.start, self.stop, self.points)
        return np.linspace(self.start, self.stop, self.points)


@dataclass
class DataSpec:
    """Initial coefficient data for the deterministic experiments."""

    kind: str = "decaying"           # zero | single_mode | explicit | decaying
    amplitude: float = 0.4
    decay: float = 2.0
    seed: int = 0
    modes: list[int] = field(default_factory=list)      # for kind=explicit
    values: list[list[float]] = field(default_factory=list)  # [re, im] per mode

    def validate(self, path):
        if self.kind not in ("zero", "single_mode", "explicit", "decaying"):
            raise ConfigError(f"{path}.kind: unknown data kind {self.kind!r}")
        if self.kind == "explicit" and len(self.modes) != len(self.values):
            raise ConfigError(f"{path}: modes and values must have equal length")

    def make_state(self, N: int, t: float) -> CoefficientState:
        B = np.zeros(2 * N + 1, dtype=complex)
        if self.kind == "zero":
            pass
        elif self.kind == "single_mode":
            B[N] = self.amplitude
        elif self.kind == "explicit":
            for m, (re, im) in zip(self.modes, self.values):
                if abs(m) > N:
                    raise ConfigError(f"data mode {m} outside truncation N={N}")
                B[m + N] = re + 1j * im
        else:  # decaying: fixed random phases on a <k>^-decay envelope
            rng = np.random.Generator(np.random.Philox(
                key=np.array([self.seed, 0], dtype=np.uint64)))
            ks = mode_indices(N)
            phases = np.exp(2j * np.pi * rng.random(2 * N + 1))
            B = self.amplitude * bracket(ks) ** (-self.decay) * phases
        return CoefficientState(t=t, N=N, B=B)


@dataclass
class MeasureSpec:
    s: float = 0.5
    M: float = 6.0
    N: int = 8

    def to_params(self, seed: int) -> MeasureParams:
        return MeasureParams(s=self.s, M=self.M, N=self.N, seed=seed)


@dataclass
class EvolveConfig:
    N: int = 0
    data: DataSpec = field(default_factory=lambda: DataSpec(kind="single_mode", amplitude=0.7))
    t_grid: LadderSpec = field(default_factory=LadderSpec)
    flow: FlowSpec = field(default_factory=FlowSpec)
    smoothing_s: float = 0.0         # >0: also emit the weighted-mass increment series


@dataclass
class ReconstructConfig:
    N: int = 6
    data: DataSpec = field(default_factory=DataSpec)
    t_max: float = 1.0
    t_min: float = 0.01
    ladder_points: int = 7
    grid: GridSpec = field(default_factory=GridSpec)
    flow: FlowSpec = field(default_factory=lambda: FlowSpec(rtol=1e-10, atol=1e-10))
    trajectory_points: int = 128
    spacing_hint: float = 1.0
    detect_corners: bool = False


@dataclass
class SampleConfig:
    measure: MeasureSpec = field(default_factory=MeasureSpec)
    count: int = 200


@dataclass
class DensityConfig:
    measure: MeasureSpec = field(default_factory=MeasureSpec)
    tau_max: float = 200.0
    levels: int = 9
    quad_tol: float = 1e-7
    sample_index: int = 0
    flow: FlowSpec = field(default_factory=lambda: FlowSpec(rtol=1e-9, atol=1e-9))


@dataclass
class QuasiInvarianceConfig:
    measure: MeasureSpec = field(default_factory=MeasureSpec)
    tau: float = 10.0
    radius: float = 2.0
    count: int = 2000
    s_prime: float = 0.25
    step: float = 2e-3


@dataclass
class GrowthConfig:
    measure: MeasureSpec = field(default_factory=lambda: MeasureSpec(N=64))
    s_prime: float = 0.25
    horizon: float = 100.0
    count: int = 50
    checkpoints: int = 12
    grid_points: int = 256
    step: float = 1e-3
    linear_diagnostic: bool = False


@dataclass
class RandomCurvesConfig:
    measure: MeasureSpec = field(default_factory=lambda: MeasureSpec(N=8, M=10.0))
    t_min: float = 1e-3
    count: int = 20
    grid: GridSpec = field(default_factory=lambda: GridSpec(-2.5, 2.5, 2048))
    ladder_points: int = 9
    trajectory_points: int = 128


@dataclass
class VerifyConfig:
    pass


_EXPERIMENTS: dict[str, type] = {
    "evolve": EvolveConfig,
    "reconstruct": ReconstructConfig,
    "corners": ReconstructConfig,
    "sample": SampleConfig,
    "density": DensityConfig,
    "quasi_invariance": QuasiInvarianceConfig,
    "holder_growth": GrowthConfig,
    "random_curves": RandomCurvesConfig,
    "verify": VerifyConfig,
}


@dataclass
class RunConfig:
    experiment: str
    seed: int
    output_dir: str
    options: object                  # the experiment-specific dataclass

    def to_dict(self) -> dict:
        return {"experiment": self.experiment, "seed": self.seed,
                "output_dir": self.output_dir,
                **_dataclass_to_dict(self.options)}


def _dataclass_to_dict(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _dataclass_to_dict(getattr(obj, f.name))
                for f in fields(obj)}
    if isinstance(obj, list):
        return [_dataclass_to_dict(v) for v in obj]
    return obj


def _coerce(value, typ, path):
    import typing

    origin = typing.get_origin(typ)
    if origin is typing.Union or str(origin) == "types.UnionType":
        last_err = None
        for alt in typing.get_args(typ):
            if alt is type(None):
                if value is None:
                    return None
                continue
            try:
                return _coerce(value, alt, path)
            except ConfigError as exc:
                last_err = exc
        raise last_err or ConfigError(f"{path}: cannot interpret {value!r}")
    if dataclasses.is_dataclass(typ):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object, got {type(value).__name__}")
        return _build_dataclass(typ, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list")
        (inner,) = typing.get_args(typ) or (object,)
        return [_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def _build_dataclass(cls, data: dict, path: str):
    import typing

    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            kwargs[f.name] = _coerce(data[f.name], hints[f.name], f"{path}.{f.name}")
    obj = cls(**kwargs)
    if hasattr(obj, "validate"):
        obj.validate(path)
    return obj


def _apply_override(data: dict, dotted: str, raw: str):
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {dotted}: {k} is not an object")
    node[keys[-1]] = value


def parse_config(source, overrides: list[str] | None = None) -> RunConfig:
    """Validate a config file path / dict into a typed RunConfig.

    Unknown keys are rejected with their dotted path; invariant violations
    name the offending fields.
    """
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source) as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {source}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {source}: {exc}") from exc
    else:
        data = json.loads(json.dumps(source))   # deep copy, JSON-clean
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _apply_override(data, key, raw)

    experiment = data.pop("experiment", None)
    if experiment not in _EXPERIMENTS:
        raise ConfigError(
            f"experiment: expected one of {sorted(_EXPERIMENTS)}, got {experiment!r}")
    seed = data.pop("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed: expected an integer")
    output_dir = data.pop("output_dir", "out")
    if not isinstance(output_dir, str):
        raise ConfigError("output_dir: expected a string")
    options = _build_dataclass(_EXPERIMENTS[experiment], data, experiment)
    _validate_cross_fields(experiment, options)
    return RunConfig(experiment=experiment, seed=seed, output_dir=output_dir,
                     options=options)


def _validate_cross_fields(experiment: str, options):
    measure = getattr(options, "measure", None)
    s_prime = getattr(options, "s_prime", None)
    if measure is not None:
        if not 0 < measure.s < 1:
            raise ConfigError(f"{experiment}.measure.s: must lie in (0, 1)")
        if measure.M <= 0:
            raise ConfigError(f"{experiment}.measure.M: must be positive")
        if s_prime is not None and s_prime >= measure.s:
            raise ConfigError(
                f"{experiment}.s_prime: must be < measure.s "
                f"(got s_prime={s_prime}, s={measure.s})")
    if hasattr(options, "t_min") and hasattr(options, "t_max"):
        if not 0 < options.t_min < options.t_max:
            raise ConfigError(f"{experiment}: need 0 < t_min < t_max")


# ---------------------------------------------------------------------------
# manifest and staging


@dataclass
class RunManifest:
    experiment: str
    config: dict
    version: str = __version__
    started_utc: str = ""
    finished_utc: str = ""
    status: str = "ok"
    stages: list[dict] = field(default_factory=list)
    files: dict = field(default_factory=dict)
    error: str = ""

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True,
                          default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _fmt(x: float) -> str:
    return f"{x:.17g}"


class _Stager:
    """Collects outputs in a temp dir, then renames them into output_dir."""

    def __init__(self, output_dir: str):
        self.output_dir = output_dir
        parent = os.path.dirname(os.path.abspath(output_dir)) or "."
        os.makedirs(parent, exist_ok=True)
        self.tmp = tempfile.mkdtemp(prefix=".staging-", dir=parent)
        self.names: list[str] = []

    def path(self, name: str) -> str:
        self.names.append(name)
        return os.path.join(self.tmp, name)

    def hashes(self) -> dict:
        out = {}
        for name in self.names:
            with open(os.path.join(self.tmp, name), "rb") as fh:
                out[name] = "sha256:" + hashlib.sha256(fh.read()).hexdigest()
        return out

    def commit(self, manifest_name: str = "manifest.json",
               manifest_text: str | None = None):
        os.makedirs(self.output_dir, exist_ok=True)
        for name in self.names:
            os.replace(os.path.join(self.tmp, name),
                       os.path.join(self.output_dir, name))
        if manifest_text is not None:
            mtmp = os.path.join(self.tmp, manifest_name)
            with open(mtmp, "w") as fh:
                fh.write(manifest_text)
            os.replace(mtmp, os.path.join(self.output_dir, manifest_name))
        shutil.rmtree(self.tmp, ignore_errors=True)

    def abort(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def _utc() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


# ---------------------------------------------------------------------------
# experiment runners (each returns a list of stage dicts)


def _write_json(stage_path: str, payload: dict):
    with open(stage_path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _write_series_csv(stage_path: str, columns: dict):
    import csv

    names = list(columns)
    rows = zip(*(columns[n] for n in names))
    with open(stage_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in rows:
            w.writerow([_fmt(float(v)) for v in row])


def _rate_dict(fit) -> dict:
    return {"exponent": fit.exponent, "intercept": fit.intercept,
            "r_squared": fit.r_squared, "window": list(fit.window),
            "reliable": fit.reliable, "note": fit.note}


def _run_evolve(cfg: EvolveConfig, seed: int, stager: _Stager, log) -> list[dict]:
    data = dataclasses.replace(cfg.data, seed=cfg.data.seed or seed)
    times = cfg.t_grid.to_array()
    state = data.make_state(cfg.N, times[0])
    log(f"evolving N={cfg.N} over [{times[0]}, {times[-1]}] "
        f"({times.size} samples)")
    traj = evolve_dense(state, times, cfg.flow.to_config())
    export_trajectory_csv(traj, stager.path("trajectory.csv"))
    drift = float(np.max(np.abs(traj.mass_series - traj.mass_series[0])))
    summary = {"mass_initial": traj.mass_series[0], "max_mass_drift": drift}
    if cfg.smoothing_s > 0:
        mon = smoothing_increment(traj, cfg.smoothing_s)
        _write_series_csv(stager.path("smoothing.csv"),
                          {"t": mon["times"], "increment": mon["increment"]})
        summary["smoothing_bound_proxy"] = mon["bound_proxy"]
    _write_json(stager.path("summary.json"), summary)
    return [{"stage": "evolve", "status": "ok", "max_mass_drift": drift}]


def _run_reconstruct(cfg: ReconstructConfig, seed: int, stager: _Stager, log,
                     detect_corners: bool) -> list[dict]:
    data = dataclasses.replace(cfg.data, seed=cfg.data.seed or seed)
    tau0 = flow_time(cfg.t_max)
    tau_end = flow_time(cfg.t_min)
    state = data.make_state(cfg.N, tau0)
    log(f"flow over [{tau0:.4g}, {tau_end:.4g}] for the t-ladder "
        f"[{cfg.t_min}, {cfg.t_max}]")
    traj = evolve_dense(state, np.array([tau0, tau_end]), cfg.flow.to_config())
    ladder = np.geomspace(cfg.t_max, cfg.t_min, cfg.ladder_points)
    grid = cfg.grid.to_array()
    anchor = Anchor(t0=cfg.t_max)
    log(f"reconstructing {ladder.size} curves on {grid.size} nodes")
    curves = reconstruct_curve(traj, ladder, grid, anchor)
    export_curve_csv(curves, stager.path("curves.csv"))

    chi0, rate = curve_limit(curves)
    fine, path = anchor_trajectory_with_limit(traj, anchor, ladder,
                                              cfg.trajectory_points)
    hol = holder_exponent(fine, path)
    dists = [float(np.max(np.linalg.norm(curves.points[i] - chi0, axis=1)))
             for i in range(ladder.size)]
    report = {
        "arc_length_defect": curves.arc_length_defect(),
        "sqrt_rate": _rate_dict(rate),
        "trajectory_holder": _rate_dict(hol),
        "sup_distances": dict(zip(map(_fmt, ladder), dists)),
    }
    # projections per time slice, and the limit polyline on top
    for i, t in enumerate(ladder):
        tag = f"{i:02d}"
        svg_curve_projection([curves.points[i][:, :2]], [f"t={t:.4g}"],
                             stager.path(f"curve_{tag}_xy.svg"),
                             f"curve at t={t:.4g} (chi1-chi2)", "chi1", "chi2")
        svg_curve_projection([curves.points[i][:, [0, 2]]], [f"t={t:.4g}"],
                             stager.path(f"curve_{tag}_xz.svg"),
                             f"curve at t={t:.4g} (chi1-chi3)", "chi1", "chi3")
    good = rate.reliable and np.isfinite(rate.exponent)
    svg_loglog(ladder, np.array(dists), stager.path("sup_distance_fit.svg"),
               "sup-distance to the limit curve",
               rate.exponent if good else None,
               rate.intercept if good else None, "t", "sup distance")
    stages = [{"stage": "reconstruct", "status": "ok",
               "arc_defect": report["arc_length_defect"]}]
    if detect_corners:
        cs = polygon_corners(grid, chi0, spacing_hint=cfg.spacing_hint)
        report["corners"] = [{"location": c.location,
                              "turning_angle": c.turning_angle,
                              "interior_angle": c.interior_angle} for c in cs]
        _write_series_csv(stager.path("limit_curve.csv"),
                          {"x": grid, "chi1": chi0[:, 0], "chi2": chi0[:, 1],
                           "chi3": chi0[:, 2]})
        stages.append({"stage": "corners", "status": "ok", "count": len(cs)})
        log(f"detected {len(cs)} corner(s)")
    _write_json(stager.path("rates.json"), report)
    return stages


def _run_sample(cfg: SampleConfig, seed: int, stager: _Stager, log) -> list[dict]:
    params = cfg.measure.to_params(seed)
    batch = sample_gamma(params, cfg.count)
    log(f"{cfg.count} draws, acceptance rate {batch.acceptance_rate:.3f}")
    masses = [mass(st) for st in batch.states]
    _write_series_csv(stager.path("samples.csv"), {
        "index": np.arange(cfg.count), "mass": masses,
        "accepted": batch.accepted.astype(float),
    })
    emp = float(np.mean(masses))
    theory = float(np.sum(params.weights**2))
    _write_json(stager.path("batch.json"), {
        "params": {"s": params.s, "M": params.M, "N": params.N, "seed": params.seed},
        "acceptance_rate": batch.acceptance_rate,
        "empirical_mean_mass": emp,
        "theoretical_mean_mass": theory,
    })
    return [{"stage": "sample", "status": "ok",
             "acceptance_rate": batch.acceptance_rate}]


def _run_density(cfg: DensityConfig, seed: int, stager: _Stager, log) -> list[dict]:
    params = cfg.measure.to_params(seed)
    st = sample_gamma(params, cfg.sample_index + 1).states[cfg.sample_index]
    ladder = np.geomspace(1.0, cfg.tau_max, cfg.levels)
    ladder[0] = 1.0
    log(f"density along tau in [1, {cfg.tau_max}] ({cfg.levels} levels)")
    out = density_limit(st, ladder, cfg.flow.to_config(), s=params.s,
                        tol=cfg.quad_tol)
    est = out["estimate"]
    _write_series_csv(stager.path("density.csv"), {
        "tau": est.tau_grid, "log_f": est.log_f,
        "quadrature_error": est.quadrature_error,
    })
    fit = out["tail_slope"]
    _write_json(stager.path("density.json"), {
        "tail_slope": _rate_dict(fit),
        "log_f_final": est.log_f[-1],
    })
    if np.all(out["increments"] > 0):
        svg_loglog(out["increment_taus"], out["increments"],
                   stager.path("tail_increments.svg"),
                   "density tail increments", fit.exponent, fit.intercept,
                   "tau", "|log f(2 tau) - log f(tau)|")
    return [{"stage": "density", "status": "ok",
             "tail_slope": fit.exponent}]


def _run_quasi(cfg: QuasiInvarianceConfig, seed: int, stager: _Stager, log) -> list[dict]:
    params = cfg.measure.to_params(seed)
    log(f"quasi-invariance: tau={cfg.tau}, {cfg.count} samples")
    rep = quasi_invariance_check(params, cfg.tau, cfg.radius, cfg.count,
                                 s_prime=cfg.s_prime, step=cfg.step)
    _write_json(stager.path("report.json"), rep)
    status = rep.get("status", "ok")
    return [{"stage": "quasi_invariance", "status": status,
             "agreement_sigma": rep.get("agreement_sigma")}]


def _run_growth(cfg: GrowthConfig, seed: int, stager: _Stager, log) -> list[dict]:
    params = cfg.measure.to_params(seed)
    log(f"growth: N={params.N}, horizon {cfg.horizon}, {cfg.count} samples")
    rep = holder_growth_experiment(params, cfg.s_prime, cfg.horizon, cfg.count,
                                   checkpoints=cfg.checkpoints,
                                   grid_points=cfg.grid_points, step=cfg.step,
                                   linear_diagnostic=cfg.linear_diagnostic)
    cols = {"t": rep["times"]}
    for i in range(rep["norm_series"].shape[0]):
        cols[f"sample_{i}"] = rep["norm_series"][i]
    _write_series_csv(stager.path("series.csv"), cols)
    _write_json(stager.path("growth.json"), {
        "median_exponent": rep["median_exponent"],
        "exponents": rep["exponents"],
        "acceptance_rate": rep["acceptance_rate"],
        "linear_diagnostic": rep["linear_diagnostic"],
    })
    med = rep["norm_series"][np.argsort(rep["exponents"])[len(rep["exponents"]) // 2]] \
        if len(rep["exponents"]) else None
    if med is not None and np.all(med > 0):
        svg_loglog(rep["times"], med, stager.path("median_growth.svg"),
                   "norm growth (median sample)", rep["median_exponent"], None,
                   "t", "C^{s'} norm")
    return [{"stage": "holder_growth", "status": "ok",
             "median_exponent": rep["median_exponent"]}]


def _run_random_curves(cfg: RandomCurvesConfig, seed: int, stager: _Stager, log) -> list[dict]:
    params = cfg.measure.to_params(seed)
    log(f"random curves: {cfg.count} samples to t_min={cfg.t_min}")
    rep = random_curve_experiment(params, cfg.t_min, cfg.grid.to_array(),
                                  cfg.count, ladder_points=cfg.ladder_points,
                                  trajectory_points=cfg.trajectory_points)
    _write_series_csv(stager.path("exponents.csv"), {
        "sample": np.arange(rep["accepted"]),
        "sqrt_exponent": rep["sqrt_exponents"],
        "holder_exponent": rep["holder_exponents"],
    })
    _write_json(stager.path("report.json"), {
        "accepted": rep["accepted"],
        "sqrt_exponents": rep["sqrt_exponents"],
        "holder_exponents": rep["holder_exponents"],
        "median_sqrt": float(np.median(rep["sqrt_exponents"])) if rep["accepted"] else None,
        "median_holder": float(np.median(rep["holder_exponents"])) if rep["accepted"] else None,
    })
    return [{"stage": "random_curves", "status": "ok",
             "accepted": rep["accepted"]}]


def _run_verify(cfg: VerifyConfig, seed: int, stager: _Stager, log) -> list[dict]:
    results = run_all_checks(seed=seed, log=log)
    _write_json(stager.path("verify.json"), {"checks": results})
    failed = [r["name"] for r in results if not r["passed"]]
    status = "ok" if not failed else "failed"
    return [{"stage": "verify", "status": status, "failed": failed}]


def run(config: RunConfig, log=None) -> RunManifest:
    """Dispatch an experiment, stream progress to stderr, persist atomically.

    Raises FlowError and friends only after capturing them in the manifest;
    callers inspect manifest.status.
    """
    if log is None:
        def log(msg):
            print(f"[filamentlab] {msg}", file=sys.stderr)

    manifest = RunManifest(experiment=config.experiment, config=config.to_dict(),
                           started_utc=_utc())
    stager = _Stager(config.output_dir)
    try:
        opts = config.options
        if config.experiment == "evolve":
            stages = _run_evolve(opts, config.seed, stager, log)
        elif config.experiment in ("reconstruct", "corners"):
            stages = _run_reconstruct(opts, config.seed, stager, log,
                                      detect_corners=(config.experiment == "corners"
                                                      or opts.detect_corners))
        elif config.experiment == "sample":
            stages = _run_sample(opts, config.seed, stager, log)
        elif config.experiment == "density":
            stages = _run_density(opts, config.seed, stager, log)
        elif config.experiment == "quasi_invariance":
            stages = _run_quasi(opts, config.seed, stager, log)
        elif config.experiment == "holder_growth":
            stages = _run_growth(opts, config.seed, stager, log)
        elif config.experiment == "random_curves":
            stages = _run_random_curves(opts, config.seed, stager, log)
        elif config.experiment == "verify":
            stages = _run_verify(opts, config.seed, stager, log)
        else:  # pragma: no cover - parse_config guards this
            raise ConfigError(f"unknown experiment {config.experiment!r}")
        manifest.stages = stages
        if any(s.get("status") not in ("ok",) for s in stages):
            manifest.status = "failed"
    except Exception as exc:
        manifest.status = "error"
        manifest.error = f"{type(exc).__name__}: {exc}"
        manifest.finished_utc = _utc()
        manifest.files = stager.hashes()
        stager.commit(manifest_text=manifest.to_json())
        raise
    manifest.finished_utc = _utc()
    manifest.files = stager.hashes()
    stager.commit(manifest_text=manifest.to_json())
    log(f"done: {config.output_dir} ({manifest.status})")
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="filamentlab",
        description="spectral flow, filament curves and measure-transport experiments")
    parser.add_argument("experiment", choices=sorted(_EXPERIMENTS),
                        help="experiment to run")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config entry")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", help="output directory override")
    args = parser.parse_args(argv)

    use_color = sys.stderr.isatty() and not os.environ.get("NO_COLOR")

    def log(msg):
        prefix = "\x1b[36m[filamentlab]\x1b[0m" if use_color else "[filamentlab]"
        print(f"{prefix} {msg}", file=sys.stderr)

    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f'output_dir="{args.out}"')
    try:
        source = args.config if args.config else {"experiment": args.experiment}
        cfg = parse_config(source, overrides + [f'experiment="{args.experiment}"'])
    except ConfigError as exc:
        log(f"config error: {exc}")
        return EXIT_VALIDATION

    try:
        manifest = run(cfg, log=log)
    except (FlowError, ArithmeticError, FloatingPointError) as exc:
        log(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except OSError as exc:
        log(f"i/o failure: {exc}")
        return EXIT_IO
    except ConfigError as exc:
        log(f"config error: {exc}")
        return EXIT_VALIDATION
    return EXIT_OK if manifest.status == "ok" else EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
