"""Command-line entry point: ``pdgmpc certify|simulate|compare|bench``."""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .certify import Certificate, certify_ct, certify_dt
from .errors import CertificationError, ConfigError, DivergenceError, PdgMpcError
from .harness import SimConfig, bench, export, metrics, normalized_table, simulate
from .model import ContinuousPlant, SteadyTarget, discretize, steady_input
from .ocp import OcpSpec, ProjectionPair, build_ocp, build_projection
from .pdg import PdgParams

__all__ = ["CONFIG_SCHEMA", "Scenario", "load_config", "validate_config", "build_scenario",
           "config_digest", "main"]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INFEASIBLE = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_CERT_VIOLATED = 4

_matrix = {"type": "array", "minItems": 1,
           "items": {"type": "array", "minItems": 1, "items": {"type": "number"}}}
_vector = {"type": "array", "minItems": 1, "items": {"type": "number"}}


def _obj(props: dict, required=None) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(props) if required is None else required}


CONFIG_SCHEMA = _obj({
    "name": {"type": "string"},
    "plant": _obj({"A_c": _matrix, "B_c": _matrix}),
    "target": _obj({"x_ref": _vector, "u_upper": _vector}),
    "ocp": _obj({
        "N": {"type": "integer", "minimum": 1},
        "dtau": {"type": "number", "exclusiveMinimum": 0},
        "state_weight": {"type": "number", "exclusiveMinimum": 0},
        "input_weight": {"type": "number", "exclusiveMinimum": 0},
        "weight_order": {"enum": ["physical", "literal"]},
        "cost_scale": {"type": "number", "exclusiveMinimum": 0},
    }, required=["N", "dtau", "state_weight", "input_weight"]),
    "controller": _obj({
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "beta": {"type": "number", "exclusiveMinimum": 0},
        "zeta": {"type": "number", "exclusiveMinimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "c": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "projection": {"type": "boolean"},
        "variant": {"enum": ["P", "sigma"]},
        "quadratic_pbar": {"type": "boolean"},
        "gamma_rule": {"enum": ["backtrack", "unit"]},
    }, required=["alpha", "beta", "zeta", "dt"]),
    "run": _obj({
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "x0": _vector,
        "seed": {"type": "integer"},
        "output_dir": {"type": "string"},
    }, required=["duration"]),
}, required=["plant", "target", "ocp", "controller", "run"])

DEFAULTS = {
    "ocp": {"weight_order": "physical", "cost_scale": 1.0},
    "controller": {"c": 0.5, "projection": True, "variant": "P", "quadratic_pbar": True,
                   "gamma_rule": "backtrack"},
    "run": {"seed": 0, "output_dir": "out"},
}


def _field_path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate_config(cfg: dict) -> dict:
    """Schema-check ``cfg``, fill defaults and cross-check dimensions.

    Every problem found is reported in one ``ConfigError``.
    """
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    problems = [f"{_field_path(e)}: {e.message}"
                for e in sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))]
    if problems:
        raise ConfigError(problems)
    cfg = copy.deepcopy(cfg)
    for section, vals in DEFAULTS.items():
        for k, v in vals.items():
            cfg[section].setdefault(k, v)
    A = cfg["plant"]["A_c"]
    B = cfg["plant"]["B_c"]
    n = len(A)
    if any(len(r) != n for r in A):
        problems.append(f"plant.A_c: must be square, got rows of lengths {[len(r) for r in A]}")
    if len(B) != n:
        problems.append(f"plant.B_c: has {len(B)} rows, expected n={n} to match plant.A_c")
    m = len(B[0])
    if any(len(r) != m for r in B):
        problems.append("plant.B_c: rows have unequal lengths")
    if len(cfg["target"]["x_ref"]) != n:
        problems.append(f"target.x_ref: has {len(cfg['target']['x_ref'])} entries, expected n={n}")
    if len(cfg["target"]["u_upper"]) != m:
        problems.append(f"target.u_upper: has {len(cfg['target']['u_upper'])} entries, expected m={m}")
    x0 = cfg["run"].setdefault("x0", [0.0] * n)
    if len(x0) != n:
        problems.append(f"run.x0: has {len(x0)} entries, expected n={n}")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(source) -> dict:
    """Load a config from a path or a bundled name such as ``case3``."""
    path = Path(source)
    if path.exists():
        text = path.read_text()
    else:
        name = path.name if path.suffix == ".json" else f"{path.name}.json"
        bundled = resources.files("pdgmpc") / "configs" / name
        if not bundled.is_file():
            raise ConfigError(f"config: no file {source!r} and no bundled config {name!r}")
        text = bundled.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: not valid JSON ({exc})") from exc
    return validate_config(cfg)


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Scenario:
    cfg: dict
    plant: ContinuousPlant
    target: SteadyTarget
    spec: OcpSpec
    params: PdgParams
    projection: ProjectionPair
    u_upper: np.ndarray

    @property
    def name(self) -> str:
        return self.cfg.get("name", "config")

    @property
    def use_P(self) -> bool:
        return self.cfg["controller"]["variant"] == "P"

    @property
    def digest(self) -> str:
        return config_digest(self.cfg)

    def certificate(self, projected: bool, kind: str = "discrete") -> Certificate:
        proj = self.projection if projected else None
        if kind == "continuous":
            return certify_ct(self.spec, self.params, self.plant, self.use_P, proj)
        return certify_dt(self.spec, self.params, discretize(self.plant, self.params.dt),
                          self.use_P, proj, self.cfg["controller"]["quadratic_pbar"])

    def sim_config(self, controller: str, unsafe: bool = False,
                   gamma_rule: str | None = None) -> SimConfig:
        run = self.cfg["run"]
        return SimConfig(case_name=self.name, duration=run["duration"], x0=np.array(run["x0"]),
                         controller=controller, params=self.params, target=self.target,
                         u_upper=self.u_upper, seed=run["seed"],
                         gamma_rule=gamma_rule or self.cfg["controller"]["gamma_rule"],
                         unsafe=unsafe)


def build_scenario(cfg: dict, variant: str | None = None, weight_order: str | None = None) -> Scenario:
    """Turn a validated config into model objects, applying CLI overrides."""
    cfg = copy.deepcopy(cfg)
    if variant is not None:
        cfg["controller"]["variant"] = variant
    if weight_order is not None:
        cfg["ocp"]["weight_order"] = weight_order
    plant = ContinuousPlant(np.array(cfg["plant"]["A_c"], dtype=float),
                            np.array(cfg["plant"]["B_c"], dtype=float))
    target = steady_input(plant, np.array(cfg["target"]["x_ref"], dtype=float))
    o = cfg["ocp"]
    u_upper = np.array(cfg["target"]["u_upper"], dtype=float)
    spec = build_ocp(plant, target, N=o["N"], dtau=o["dtau"], state_weight=o["state_weight"],
                     input_weight=o["input_weight"], u_upper=u_upper,
                     weight_order=o["weight_order"], cost_scale=o["cost_scale"])
    c = cfg["controller"]
    params = PdgParams(alpha=c["alpha"], beta=c["beta"], zeta=c["zeta"], dt=c["dt"], c=c["c"])
    return Scenario(cfg=cfg, plant=plant, target=target, spec=spec, params=params,
                    projection=build_projection(spec.C, spec.D), u_upper=u_upper)


def _out_dir(args, sc: Scenario) -> Path:
    out = Path(args.output) if args.output else Path(sc.cfg["run"]["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload):
    export(payload, path, "json")


def cmd_certify(args, sc: Scenario) -> int:
    projected = sc.cfg["controller"]["projection"]
    rows = {}
    for kind in ("continuous", "discrete"):
        for proj in (False, True):
            cert = sc.certificate(proj, kind)
            rows[f"{kind}/{'projected' if proj else 'plain'}"] = cert
    active = rows[f"discrete/{'projected' if projected else 'plain'}"]
    report = {
        "config": sc.name,
        "config_digest": sc.digest,
        "variant": {"curvature": sc.cfg["controller"]["variant"],
                    "weight_order": sc.cfg["ocp"]["weight_order"],
                    "cost_scale": sc.cfg["ocp"]["cost_scale"],
                    "projected_W": projected,
                    "quadratic_pbar": sc.cfg["controller"]["quadratic_pbar"]},
        "zeta_dt": sc.params.zeta_dt,
        "certificates": {k: v.to_dict() for k, v in rows.items()},
        "verdict": "feasible" if active.feasible else "infeasible",
    }
    out = _out_dir(args, sc)
    _write_json(out / "certificate.json", report)
    print(f"{sc.name} (digest {sc.digest}), zeta*dt = {sc.params.zeta_dt:g}")
    print(f"{'certificate':24s} {'delta*':>12s} {'lambda_max*':>12s}  verdict")
    for k, c in rows.items():
        mark = " *" if c is active else ""
        print(f"{k:24s} {c.delta_star:12.4f} {c.lambda_max_star:12.4f}  "
              f"{'feasible' if c.feasible else 'infeasible'}{mark}")
    print(f"verdict: {report['verdict']} (* = configured controller)")
    if args.require_feasible and not active.feasible:
        return EXIT_INFEASIBLE
    return EXIT_OK


def _kind(sc: Scenario) -> str:
    return "pdg_proj" if sc.cfg["controller"]["projection"] else "pdg"


def cmd_simulate(args, sc: Scenario) -> int:
    kind = _kind(sc)
    cert = sc.certificate(kind == "pdg_proj")
    out = _out_dir(args, sc)
    if not cert.feasible and not args.unsafe:
        print(f"error: certificate infeasible (lambda_max = {cert.lambda_max_star:.4g}); "
              "rerun with --unsafe to simulate anyway", file=sys.stderr)
        return EXIT_USAGE
    cfg = sc.sim_config(kind, unsafe=args.unsafe, gamma_rule=args.gamma_rule)
    status = EXIT_OK
    try:
        lg = simulate(cfg, sc.spec, sc.plant, cert, sc.projection)
    except DivergenceError as exc:
        print(f"divergence: {exc}")
        lg, status = exc.log, EXIT_DIVERGED
    except CertificationError as exc:
        print(f"certification violated at step {exc.step}: {exc}")
        lg, status = exc.log, EXIT_CERT_VIOLATED
    export(lg, out / "simulation.csv")
    _write_json(out / "simulation.json", {"config_digest": sc.digest, "certificate": cert.to_dict(),
                                          "log": lg.to_dict()})
    if len(lg):
        err = np.linalg.norm(lg.states[-1] - lg.x_ref) / np.linalg.norm(lg.x_ref)
        print(f"{sc.name}: {lg.status}, {len(lg)} samples, t_end = {lg.times[-1]:.4f} s, "
              f"final |x - x_ref|/|x_ref| = {err:.3e}, max backtracks = {int(lg.backtracks.max())}")
    print(f"wrote {out / 'simulation.csv'}")
    return status


COMPARE_METHODS = ("pdg", "pdg_proj", "cgmres1", "cgmres2", "mpc_oracle")


def run_compare(sc: Scenario, unsafe: bool = False):
    """Simulate every method on one scenario.

    Returns ``(logs, raw_metrics, certificates, skipped)``.
    """
    certs = {"pdg": sc.certificate(False), "pdg_proj": sc.certificate(True)}
    logs, skipped = {}, {}
    for method in COMPARE_METHODS:
        cert = certs.get(method)
        if cert is not None and not cert.feasible and not unsafe:
            skipped[method] = f"uncertified (lambda_max = {cert.lambda_max_star:.4g})"
            continue
        logs[method] = simulate(sc.sim_config(method, unsafe=unsafe), sc.spec, sc.plant, cert,
                                sc.projection)
    raw = {k: metrics(v) for k, v in logs.items()}
    return logs, raw, certs, skipped


def cmd_compare(args, sc: Scenario) -> int:
    logs, raw, certs, skipped = run_compare(sc, args.unsafe)
    if "mpc_oracle" not in raw:
        print("error: mpc_oracle run missing", file=sys.stderr)
        return EXIT_USAGE
    table, denom = normalized_table(raw)
    con_table, con_denom = normalized_table(raw, con_baseline="pdg_proj")
    out = _out_dir(args, sc)
    export(table, out / "compare.csv")
    export(con_table, out / "compare_con_by_pdg_proj.csv")
    _write_json(out / "compare.json", {
        "config": sc.name, "config_digest": sc.digest, "normalized": table,
        "denominators": denom, "normalized_con_by_pdg_proj": con_table,
        "denominators_con_by_pdg_proj": con_denom,
        "raw": {k: v.to_dict() for k, v in raw.items()},
        "certified": {k: c.feasible for k, c in certs.items()}, "skipped": skipped})
    cols = ("actual_obj", "actual_con", "horizon_obj", "horizon_con")
    print(f"{sc.name} (digest {sc.digest})")
    for title, tab in (("raw", {k: v.to_dict() for k, v in raw.items()}),
                       ("normalised by mpc_oracle", table),
                       ("objectives by mpc_oracle, constraints by pdg_proj", con_table)):
        if title.startswith("obj") and "pdg_proj" not in raw:
            continue
        print(f"-- {title}")
        print(f"{'method':12s}" + "".join(f"{c:>14s}" for c in cols))
        for method, row in tab.items():
            print(f"{method:12s}" + "".join(f"{row[c]:14.6g}" for c in cols))
    for method, why in skipped.items():
        print(f"{method:12s} skipped: {why}")
    return EXIT_OK


def cmd_bench(args, sc: Scenario) -> int:
    certs = {"pdg": sc.certificate(False), "pdg_proj": sc.certificate(True)}
    configs = []
    for method in COMPARE_METHODS:
        c = certs.get(method)
        if c is not None and not c.feasible and not args.unsafe:
            print(f"{method}: skipped, certificate infeasible")
            continue
        configs.append(sc.sim_config(method, unsafe=args.unsafe))
    rep = bench(configs, sc.spec, sc.plant, certs, repetitions=args.repetitions,
                steps=args.steps, projection=sc.projection)
    rep.config_digest = sc.digest
    out = _out_dir(args, sc)
    export(rep, out / "bench.csv")
    export(rep, out / "bench.json")
    print(f"{sc.name} (digest {sc.digest})")
    print(f"{'method':12s}{'mean us':>10s}{'us/iter':>10s}{'est max us':>12s}{'iter max':>10s}"
          f"{'iter mean':>10s}")
    for r in rep.rows:
        print(f"{r.method:12s}{r.mean_step_us:10.1f}{r.per_iter_us:10.1f}{r.est_max_us:12.1f}"
              f"{r.iter_max:10d}{r.iter_mean:10.2f}")
    return EXIT_OK


COMMANDS = {"certify": cmd_certify, "simulate": cmd_simulate, "compare": cmd_compare,
            "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdgmpc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True,
                       help="config path or bundled name (case1 ... case5)")
        s.add_argument("--output", help="output directory (default: run.output_dir)")
        s.add_argument("--unsafe", action="store_true",
                       help="run controllers whose certificate is infeasible")
        s.add_argument("--require-feasible", action="store_true",
                       help="exit nonzero when the configured certificate is infeasible")
        s.add_argument("--variant", choices=["sigma", "P"])
        s.add_argument("--weight-order", choices=["literal", "physical"])
        s.add_argument("--gamma-rule", choices=["backtrack", "unit"],
                       help="override the step-size rule (unit disables backtracking)")
        if name == "bench":
            s.add_argument("--repetitions", type=int, default=10)
            s.add_argument("--steps", type=int, default=1000)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        sc = build_scenario(load_config(args.config), args.variant, args.weight_order)
        return COMMANDS[args.command](args, sc)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PdgMpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
