"""Closed-loop sampled-data simulation, performance measures, timing and export."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baselines import CgmresController, MpcOracleController
from .errors import CertificationError, DimensionError, DivergenceError, DomainError
from .model import ContinuousPlant, SteadyTarget, discretize
from .ocp import OcpSpec, ProjectionPair, build_projection, condense
from .pdg import PdgController, PdgParams

__all__ = [
    "CONTROLLER_KINDS",
    "SimConfig",
    "SimLog",
    "Metrics",
    "BenchRow",
    "BenchReport",
    "make_controller",
    "simulate",
    "metrics",
    "normalized_table",
    "bench",
    "export",
    "load_log",
]

CONTROLLER_KINDS = ("pdg", "pdg_proj", "cgmres1", "cgmres2", "mpc_oracle")
DIVERGENCE_BOUND = 1e9


@dataclass
class SimConfig:
    case_name: str
    duration: float
    x0: np.ndarray
    controller: str
    params: PdgParams
    target: SteadyTarget
    u_upper: np.ndarray
    seed: int = 0
    gamma_rule: str = "backtrack"
    unsafe: bool = False

    def __post_init__(self):
        if not self.duration > 0:
            raise DomainError("duration must be positive")
        if self.controller not in CONTROLLER_KINDS:
            raise DomainError(f"controller must be one of {CONTROLLER_KINDS}")
        self.x0 = np.asarray(self.x0, dtype=float).ravel()
        self.u_upper = np.atleast_1d(np.asarray(self.u_upper, dtype=float))

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.params.dt))


@dataclass
class SimLog:
    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    gammas: np.ndarray
    backtracks: np.ndarray
    V_values: np.ndarray
    horizon_objectives: np.ndarray
    horizon_violations: np.ndarray
    delta_V: np.ndarray
    iterations: np.ndarray
    mu_min: np.ndarray
    eq_residual: np.ndarray
    x_ref: np.ndarray
    u_ref: np.ndarray
    u_upper: np.ndarray
    u_weights: np.ndarray | None = None
    x_weights: np.ndarray | None = None
    case_name: str = ""
    controller: str = ""
    status: str = "completed"

    ARRAY_FIELDS = ("times", "states", "inputs", "gammas", "backtracks", "V_values",
                    "horizon_objectives", "horizon_violations", "delta_V", "iterations",
                    "mu_min", "eq_residual")

    def __len__(self):
        return len(self.times)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SimLog":
        kw = {}
        for f in fields(cls):
            v = d[f.name]
            kw[f.name] = np.asarray(v, dtype=float) if isinstance(v, list) else v
        for name, ref in (("u_weights", "u_ref"), ("x_weights", "x_ref")):
            if kw[name] is None:
                kw[name] = np.ones_like(kw[ref])
        for name in ("states", "inputs"):
            if kw[name].ndim == 1:
                kw[name] = kw[name].reshape(0, -1) if kw[name].size == 0 else kw[name].reshape(-1, 1)
        return cls(**kw)

    @classmethod
    def _empty(cls, n, m, target, u_upper, case_name="", controller="", u_weights=None,
               x_weights=None):
        z = np.zeros(0)
        return cls(times=z, states=np.zeros((0, n)), inputs=np.zeros((0, m)), gammas=z,
                   backtracks=z, V_values=z, horizon_objectives=z, horizon_violations=z,
                   delta_V=z, iterations=z, mu_min=z, eq_residual=z,
                   x_ref=target.x_ref.copy(), u_ref=target.u_ref.copy(),
                   u_upper=np.asarray(u_upper, dtype=float).copy(),
                   u_weights=np.ones(m) if u_weights is None else np.asarray(u_weights, dtype=float),
                   x_weights=np.ones(n) if x_weights is None else np.asarray(x_weights, dtype=float),
                   case_name=case_name, controller=controller)


@dataclass
class Metrics:
    """Summed performance measures, in physical coordinates.

    ``actual_obj`` sums the squared deviation of (u, x) from the target,
    weighted with the first-stage weights of the horizon objective;
    ``actual_obj_unweighted`` is the same sum with unit weights.
    ``actual_con`` sums the squared input-bound violation, ``horizon_obj``
    the predicted objective and ``horizon_con`` the predicted inequality and
    equality violations.
    """

    actual_obj: float
    actual_con: float
    horizon_obj: float
    horizon_con: float
    actual_obj_unweighted: float = math.nan
    normalized: dict = field(default_factory=dict)
    baseline: str = ""

    COLUMNS = ("actual_obj", "actual_con", "horizon_obj", "horizon_con")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BenchRow:
    method: str
    mean_step_us: float
    per_iter_us: float
    est_max_us: float
    iter_max: int
    iter_mean: float
    steps: int
    repetitions: int


@dataclass
class BenchReport:
    rows: list
    case_name: str = ""
    config_digest: str = ""

    def to_dict(self) -> dict:
        return {"case_name": self.case_name, "config_digest": self.config_digest,
                "rows": [asdict(r) for r in self.rows]}


def make_controller(config: SimConfig, spec: OcpSpec, plant: ContinuousPlant, certificate=None,
                    projection: ProjectionPair | None = None):
    """Instantiate the controller named by ``config.controller``."""
    kind = config.controller
    plant_dt = discretize(plant, config.params.dt)
    if kind in ("pdg", "pdg_proj"):
        if certificate is None:
            raise DomainError("PDG controllers need a stability certificate (delta)")
        if not getattr(certificate, "feasible", True) and not config.unsafe:
            raise DomainError(
                f"{config.case_name}: certificate is infeasible "
                f"(lambda_max = {certificate.lambda_max_star:.4g}); pass unsafe=True to run anyway"
            )
        proj = None
        if kind == "pdg_proj":
            proj = projection if projection is not None else build_projection(spec.C, spec.D)
        return PdgController(spec, config.params, certificate, plant_dt, proj, config.gamma_rule)
    qp = condense(spec)
    if kind == "mpc_oracle":
        return MpcOracleController(qp)
    iters = 1 if kind == "cgmres1" else 2
    return CgmresController(qp, plant_dt, xi=config.params.zeta, gmres_iters=iters)


def _horizon_w(ctl, x_err):
    if isinstance(ctl, PdgController):
        return ctl.last.w_applied
    return ctl.qp.expand(ctl.horizon_inputs(), x_err)


def simulate(config: SimConfig, spec: OcpSpec, plant: ContinuousPlant, certificate=None,
             projection: ProjectionPair | None = None, controller=None) -> SimLog:
    """Run the sampled-data loop for ``config.duration`` seconds.

    The plant is advanced exactly under a zero-order hold. All logged states
    and inputs are physical; the controller works in error coordinates.

    Raises
    ------
    DivergenceError
        When the error state norm exceeds 1e9; carries the partial log.
    CertificationError
        When step-size backtracking fails; carries the partial log.
    """
    target = config.target
    n, m = plant.n, plant.m
    if config.x0.size != n:
        raise DimensionError(f"x0 has {config.x0.size} entries, plant has n={n}")
    ctl = controller or make_controller(config, spec, plant, certificate, projection)
    plant_dt = discretize(plant, config.params.dt)
    K = config.n_steps
    dt = config.params.dt
    rows = {k: [] for k in SimLog.ARRAY_FIELDS}
    x = config.x0 - target.x_ref
    is_pdg = isinstance(ctl, PdgController)
    # first-stage weights of the horizon objective, used by metrics()
    dP = np.diag(spec.P)
    weights = (dP[:m], dP[m * spec.N:m * spec.N + n])

    def partial(status):
        return _assemble(rows, n, m, config, status, weights)

    for k in range(K + 1):
        v_now = ctl.value(x) if is_pdg else math.nan
        try:
            u = ctl.control(x)
        except CertificationError as exc:
            exc.step = k
            exc.log = partial("certification_violated")
            raise
        w_h = _horizon_w(ctl, x)
        g = spec.g(w_h)
        hres = spec.h(w_h, x)
        rows["times"].append(k * dt)
        rows["states"].append(x + target.x_ref)
        rows["inputs"].append(u + target.u_ref)
        rows["horizon_objectives"].append(spec.f(w_h))
        rows["horizon_violations"].append(float(np.sum(np.maximum(g, 0.0) ** 2) + hres @ hres))
        rows["eq_residual"].append(float(np.linalg.norm(hres)))
        if is_pdg:
            out = ctl.last
            rows["gammas"].append(out.gamma)
            rows["backtracks"].append(out.backtracks)
            rows["V_values"].append(v_now)
            rows["delta_V"].append(out.delta_V)
            rows["iterations"].append(1 + out.backtracks)
            rows["mu_min"].append(float(ctl.state.mu.min()) if ctl.state.mu.size else 0.0)
        else:
            rows["gammas"].append(math.nan)
            rows["backtracks"].append(0)
            rows["V_values"].append(math.nan)
            rows["delta_V"].append(math.nan)
            rows["iterations"].append(ctl.iterations)
            rows["mu_min"].append(math.nan)
        if k == K:
            break
        x = plant_dt.advance(x, u)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_BOUND:
            raise DivergenceError(
                f"{config.case_name}/{config.controller}: state norm exceeded "
                f"{DIVERGENCE_BOUND:g} at step {k + 1} (t = {(k + 1) * dt:.4f} s)",
                step=k + 1, log=partial("diverged"),
            )
    return partial("completed")


def _assemble(rows, n, m, config: SimConfig, status: str, weights=(None, None)) -> SimLog:
    lg = SimLog._empty(n, m, config.target, config.u_upper, config.case_name, config.controller,
                       *weights)
    for name in SimLog.ARRAY_FIELDS:
        vals = rows[name]
        if name == "states":
            arr = np.asarray(vals, dtype=float).reshape(-1, n)
        elif name == "inputs":
            arr = np.asarray(vals, dtype=float).reshape(-1, m)
        else:
            arr = np.asarray(vals, dtype=float)
        setattr(lg, name, arr)
    lg.status = status
    return lg


def metrics(log: SimLog, baseline_log: SimLog | None = None, baseline_name: str = "") -> Metrics:
    """Summed measures of ``log``, normalised by those of ``baseline_log``.

    A column whose value equals the baseline's (including 0 == 0) normalises
    to exactly 1; a nonzero value over a zero baseline gives ``inf``.
    """
    du = log.inputs - log.u_ref
    dx = log.states - log.x_ref
    actual_obj = float(np.sum(du**2 * log.u_weights) + np.sum(dx**2 * log.x_weights))
    actual_con = float(np.sum(np.maximum(log.inputs - log.u_upper, 0.0) ** 2))
    met = Metrics(actual_obj=actual_obj, actual_con=actual_con,
                  horizon_obj=float(np.sum(log.horizon_objectives)),
                  horizon_con=float(np.sum(log.horizon_violations)),
                  actual_obj_unweighted=float(np.sum(du**2) + np.sum(dx**2)))
    if baseline_log is not None:
        if len(baseline_log) != len(log) or not np.allclose(baseline_log.times, log.times,
                                                            rtol=0, atol=1e-12):
            raise DimensionError("metrics: logs are not on the same time grid")
        base = metrics(baseline_log)
        met.normalized = {c: _ratio(getattr(met, c), getattr(base, c)) for c in Metrics.COLUMNS}
        met.baseline = baseline_name or baseline_log.controller
    return met


def _ratio(a: float, b: float) -> float:
    if a == b:
        return 1.0
    if b == 0:
        return math.inf
    return a / b


def normalized_table(raw: dict, obj_baseline: str = "mpc_oracle", con_baseline: str | None = None):
    """Normalise a ``{method: Metrics}`` table column-wise.

    Objective columns are divided by ``obj_baseline``'s values. Constraint
    columns are divided by ``con_baseline``'s values when it is given and
    present, otherwise by ``obj_baseline``'s.
    Returns ``({method: {column: value}}, {column: denominator method})``.
    """
    denom = {}
    for col in Metrics.COLUMNS:
        name = obj_baseline
        if col.endswith("_con") and con_baseline in raw:
            name = con_baseline
        denom[col] = name
    table = {}
    for method, met in raw.items():
        table[method] = {}
        for col in Metrics.COLUMNS:
            d = raw[denom[col]]
            if method == denom[col]:
                table[method][col] = 1.0
            else:
                table[method][col] = _ratio(getattr(met, col), getattr(d, col))
    return table, denom


def bench(configs, spec: OcpSpec, plant: ContinuousPlant, certificates: dict | None = None,
          repetitions: int = 10, steps: int | None = None, warmup: int = 20,
          projection: ProjectionPair | None = None) -> BenchReport:
    """Time the per-sample controller computation of each configured method.

    ``certificates`` maps controller kind to the certificate it should use.
    The estimated maximum time follows ``mean * iter_max / iter_mean``.
    """
    if repetitions < 10:
        raise DomainError("bench needs at least 10 repetitions")
    certificates = certificates or {}
    rows = []
    clock = time.perf_counter_ns
    for cfg in configs:
        plant_dt = discretize(plant, cfg.params.dt)
        K = steps if steps is not None else cfg.n_steps
        per_rep = []
        iters = []
        for _ in range(repetitions):
            ctl = make_controller(cfg, spec, plant, certificates.get(cfg.controller), projection)
            x = cfg.x0 - cfg.target.x_ref
            for _ in range(warmup):
                ctl.control(x)
            ctl = make_controller(cfg, spec, plant, certificates.get(cfg.controller), projection)
            x = cfg.x0 - cfg.target.x_ref
            total = 0
            for _ in range(K):
                t0 = clock()
                u = ctl.control(x)
                total += clock() - t0
                iters.append(1 + ctl.last.backtracks if isinstance(ctl, PdgController)
                             else ctl.iterations)
                x = plant_dt.advance(x, u)
            per_rep.append(total / K / 1e3)
        mean_us = float(np.mean(per_rep))
        it_mean = float(np.mean(iters))
        it_max = int(np.max(iters))
        rows.append(BenchRow(method=cfg.controller, mean_step_us=mean_us,
                             per_iter_us=mean_us / it_mean, est_max_us=mean_us * it_max / it_mean,
                             iter_max=it_max, iter_mean=it_mean, steps=K, repetitions=repetitions))
    name = configs[0].case_name if configs else ""
    return BenchReport(rows=rows, case_name=name)


def _log_csv_rows(log: SimLog):
    n = log.states.shape[1] if log.states.ndim == 2 else len(log.x_ref)
    m = log.inputs.shape[1] if log.inputs.ndim == 2 else len(log.u_ref)
    header = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
              + ["gamma", "backtracks", "V", "h_obj", "h_con"])
    body = []
    for k in range(len(log)):
        body.append([repr(float(log.times[k]))]
                    + [repr(float(v)) for v in log.states[k]]
                    + [repr(float(v)) for v in log.inputs[k]]
                    + [repr(float(log.gammas[k])), str(int(log.backtracks[k])),
                       repr(float(log.V_values[k])), repr(float(log.horizon_objectives[k])),
                       repr(float(log.horizon_violations[k]))])
    return header, body


def export(obj, path, format: str | None = None) -> Path:
    """Write a SimLog, Metrics table, BenchReport or certificate to CSV or JSON.

    The format defaults to the file suffix.
    """
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).lower()
    if fmt not in ("csv", "json"):
        raise DomainError(f"unsupported export format {fmt!r}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            payload = obj.to_dict() if hasattr(obj, "to_dict") else obj
            with path.open("w") as fh:
                json.dump(_jsonable(payload), fh, indent=2, allow_nan=True)
            return path
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            if isinstance(obj, SimLog):
                header, body = _log_csv_rows(obj)
            elif isinstance(obj, BenchReport):
                header = [f.name for f in fields(BenchRow)]
                body = [[getattr(r, h) for h in header] for r in obj.rows]
            elif isinstance(obj, dict):
                header = ["method", *Metrics.COLUMNS]
                body = [[k, *(v[c] if isinstance(v, dict) else getattr(v, c) for c in Metrics.COLUMNS)]
                        for k, v in obj.items()]
            else:
                raise DomainError(f"no CSV layout for {type(obj).__name__}")
            wr.writerow(header)
            wr.writerows(body)
    except OSError as exc:
        raise OSError(f"could not write {path}: {exc}") from exc
    return path


def load_log(path) -> SimLog:
    with Path(path).open() as fh:
        return SimLog.from_dict(json.load(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
