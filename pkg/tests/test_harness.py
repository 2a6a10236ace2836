import json

import numpy as np
import pytest

from pdgmpc.certify import certify_dt
from pdgmpc.errors import CertificationError, DimensionError, DivergenceError, DomainError
from pdgmpc.harness import (SimConfig, SimLog, bench, export, load_log, metrics,
                            normalized_table, simulate)
from pdgmpc.model import discretize

from conftest import DC_UMAX, case_params


def make_cfg(dc, case, kind="pdg_proj", duration=3.0, x0=None, **kw):
    return SimConfig(case_name=f"case{case}", duration=duration,
                     x0=np.zeros(2) if x0 is None else x0, controller=kind,
                     params=case_params(case), target=dc["target"], u_upper=DC_UMAX, **kw)


def cert_for(dc, case, projected=True):
    p = case_params(case)
    return certify_dt(dc["spec"], p, discretize(dc["plant"], p.dt), True,
                      dc["proj"] if projected else None)


@pytest.fixture(scope="module")
def case1_log(dc):
    return simulate(make_cfg(dc, 1), dc["spec"], dc["plant"], cert_for(dc, 1), dc["proj"])


@pytest.fixture(scope="module")
def case3_logs(dc):
    out = {}
    for kind in ("pdg", "pdg_proj", "mpc_oracle"):
        cert = cert_for(dc, 3, kind == "pdg_proj")
        out[kind] = simulate(make_cfg(dc, 3, kind, unsafe=True), dc["spec"], dc["plant"], cert,
                             dc["proj"])
    return out


def test_simconfig_validation(dc):
    with pytest.raises(DomainError):
        make_cfg(dc, 1, duration=0.0)
    with pytest.raises(DomainError):
        make_cfg(dc, 1, kind="lqr")


def test_at_target_stays_put(dc):
    cfg = make_cfg(dc, 3, duration=0.05, x0=dc["target"].x_ref)
    lg = simulate(cfg, dc["spec"], dc["plant"], cert_for(dc, 3), dc["proj"])
    assert len(lg) == 51
    np.testing.assert_array_equal(lg.states, np.tile(dc["target"].x_ref, (51, 1)))
    np.testing.assert_array_equal(lg.inputs, np.tile(dc["target"].u_ref, (51, 1)))
    assert not lg.V_values.any()


def test_case1_log_shape_and_convergence(case1_log, dc):
    lg = case1_log
    assert len(lg) == 3001
    for name in SimLog.ARRAY_FIELDS:
        assert len(getattr(lg, name)) == 3001
    assert lg.times[-1] == pytest.approx(3.0)
    err = np.linalg.norm(lg.states - dc["target"].x_ref, axis=1)
    assert err[-1] < 0.05 * err[0]
    assert np.all(np.diff(lg.V_values) < 0)
    assert np.all(lg.delta_V < 0)
    assert not lg.backtracks.any()
    assert np.all(lg.mu_min >= 0)


def test_projection_keeps_dynamics_consistent(case1_log):
    assert case1_log.eq_residual.max() <= 1e-9


def test_case4_unit_step_diverges(dc):
    cfg = make_cfg(dc, 4, gamma_rule="unit", unsafe=True)
    with pytest.raises(DivergenceError) as exc:
        simulate(cfg, dc["spec"], dc["plant"], cert_for(dc, 4), dc["proj"])
    assert exc.value.step is not None and exc.value.step > 0
    assert exc.value.log.status == "diverged"
    assert len(exc.value.log) == exc.value.step


def test_case4_backtracking_stops_before_divergence(dc):
    cfg = make_cfg(dc, 4, unsafe=True)
    with pytest.raises(CertificationError) as exc:
        simulate(cfg, dc["spec"], dc["plant"], cert_for(dc, 4), dc["proj"])
    lg = exc.value.log
    assert lg.status == "certification_violated"
    assert np.abs(lg.states).max() < 1e3


def test_infeasible_certificate_needs_unsafe(dc):
    with pytest.raises(DomainError, match="unsafe"):
        simulate(make_cfg(dc, 4), dc["spec"], dc["plant"], cert_for(dc, 4), dc["proj"])


def test_x0_dimension_check(dc):
    with pytest.raises(DimensionError):
        simulate(make_cfg(dc, 3, x0=np.zeros(3)), dc["spec"], dc["plant"], cert_for(dc, 3))


def test_zero_order_hold_exactness(case1_log, dc):
    lg = case1_log
    half = discretize(dc["plant"], 0.5e-3)
    x = lg.states[0] - lg.x_ref
    for k in range(200):
        u = lg.inputs[k] - lg.u_ref
        x = half.advance(half.advance(x, u), u)
        np.testing.assert_allclose(x + lg.x_ref, lg.states[k + 1], atol=1e-9)


def test_metrics_trivial_cases(case1_log):
    m = metrics(case1_log, case1_log)
    assert all(v == 1.0 for v in m.normalized.values())
    lg = SimLog.from_dict(case1_log.to_dict())
    lg.states = np.tile(lg.x_ref, (len(lg), 1))
    lg.inputs = np.tile(lg.u_ref, (len(lg), 1))
    m = metrics(lg)
    assert m.actual_obj == 0.0 and m.actual_con == 0.0
    short = SimLog.from_dict(case1_log.to_dict())
    short.times = short.times[:-1]
    with pytest.raises(DimensionError):
        metrics(case1_log, short)


def test_metrics_nonnegative(case3_logs):
    for lg in case3_logs.values():
        m = metrics(lg)
        assert min(m.actual_obj, m.actual_con, m.horizon_obj, m.horizon_con) >= 0


def test_case3_orderings(case3_logs):
    raw = {k: metrics(v) for k, v in case3_logs.items()}
    table, denom = normalized_table(raw)
    assert all(v == 1.0 for v in table["mpc_oracle"].values())
    assert set(denom.values()) == {"mpc_oracle"}
    assert raw["pdg_proj"].actual_obj <= raw["pdg"].actual_obj
    assert raw["mpc_oracle"].actual_con <= 1e-8
    by_proj, pd = normalized_table(raw, con_baseline="pdg_proj")
    assert pd["horizon_con"] == "pdg_proj" and by_proj["pdg_proj"]["horizon_con"] == 1.0
    assert by_proj["pdg"]["horizon_con"] > 10.0


def test_export_csv_layout(case3_logs, tmp_path):
    path = export(case3_logs["pdg_proj"], tmp_path / "c3.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,x2,u1,gamma,backtracks,V,h_obj,h_con"
    assert len(lines) == 3002


def test_export_empty_log_header_only(dc, tmp_path):
    empty = SimLog._empty(2, 1, dc["target"], DC_UMAX)
    path = export(empty, tmp_path / "e.csv")
    assert path.read_text().splitlines() == ["t,x1,x2,u1,gamma,backtracks,V,h_obj,h_con"]


def test_export_json_roundtrip(case1_log, tmp_path):
    path = export(case1_log, tmp_path / "log.json")
    back = load_log(path)
    for name in SimLog.ARRAY_FIELDS:
        np.testing.assert_array_equal(getattr(back, name), getattr(case1_log, name))
    assert back.status == case1_log.status and back.controller == "pdg_proj"
    assert set(json.loads(path.read_text())) >= set(SimLog.ARRAY_FIELDS)


def test_export_errors(case1_log, tmp_path):
    with pytest.raises(DomainError):
        export(case1_log, tmp_path / "log.xml")
    (tmp_path / "blocker").write_text("")
    with pytest.raises(OSError, match="blocker"):
        export(case1_log, tmp_path / "blocker" / "log.csv")


def test_simulation_is_deterministic(dc, tmp_path):
    cfg = make_cfg(dc, 3, duration=0.5)
    cert = cert_for(dc, 3)
    a = export(simulate(cfg, dc["spec"], dc["plant"], cert, dc["proj"]), tmp_path / "a.csv")
    b = export(simulate(cfg, dc["spec"], dc["plant"], cert, dc["proj"]), tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()


def test_bench_report(dc):
    certs = {"pdg_proj": cert_for(dc, 3)}
    cfgs = [make_cfg(dc, 3, k) for k in ("pdg_proj", "cgmres1", "mpc_oracle")]
    rep = bench(cfgs, dc["spec"], dc["plant"], certs, repetitions=10, steps=50, warmup=5)
    rows = {r.method: r for r in rep.rows}
    assert rows["pdg_proj"].iter_max == 1 and rows["pdg_proj"].iter_mean == 1.0
    assert rows["cgmres1"].iter_max == 1
    for r in rep.rows:
        assert r.est_max_us == pytest.approx(r.mean_step_us * r.iter_max / r.iter_mean)
        assert r.per_iter_us == pytest.approx(r.mean_step_us / r.iter_mean)
    with pytest.raises(DomainError):
        bench(cfgs, dc["spec"], dc["plant"], certs, repetitions=9)
