import json
import math

import numpy as np
import pytest

from scmrelax.errors import DimensionMismatch, InvalidConfig, ReplicationFailure
from scmrelax.moments import compute_moments
from scmrelax.oracle import oracle_weights
from scmrelax.panel import PanelData
from scmrelax.simulation import (
    APPROXIMATE,
    L2_RELAX,
    RIDGE,
    SCM,
    DgpConfig,
    _ar1,
    empirical_risk,
    generate_instance,
    k_for_mode,
    normalize_methods,
    run_experiment,
    run_replication,
    sweep_configs,
)


def test_config_defaults():
    c = DgpConfig(j=50, t0=50)
    assert c.r == 3 and c.k == 2
    assert c.loading_var == pytest.approx(1.0)
    assert c.group_noise == pytest.approx(0.2 / math.sqrt(3))
    assert DgpConfig(j=50, t0=100, k_mode="eq").k == 4
    assert DgpConfig(j=50, t0=100, k_mode="gt").k == 5


def test_k_modes():
    assert [k_for_mode(5, m) for m in ("lt", "eq", "gt")] == [4, 5, 7]
    with pytest.raises(InvalidConfig):
        k_for_mode(5, "big")


def test_single_group_rejected():
    # r = floor(ln 25) = 3, K = floor(2.4) = 2 is fine; force r = 1
    with pytest.raises(InvalidConfig) as exc:
        DgpConfig(j=10, t0=25, r=1)
    assert exc.value.field == "k"


@pytest.mark.parametrize("kw,field", [
    ({"t0": 2}, "t0"), ({"t1": 0}, "t1"), ({"mode": "fuzzy"}, "mode"),
    ({"ar_coef": 1.0}, "ar_coef"), ({"j": 1}, "j"), ({"group_noise": -1.0}, "group_noise"),
])
def test_config_validation(kw, field):
    base = dict(j=20, t0=30)
    base.update(kw)
    with pytest.raises(InvalidConfig) as exc:
        DgpConfig(**base)
    assert exc.value.field == field


def test_instance_shapes_and_groups():
    cfg = DgpConfig(j=20, t0=30, t1=7)
    inst = generate_instance(cfg, 0)
    assert inst.panel.j == 20 and inst.panel.t0 == 30 and inst.panel.t1 == 7
    assert inst.w_star_g[0] == 0.0 and inst.w_star_g.sum() == pytest.approx(1.0)
    mem = np.asarray(inst.oracle.groups.membership)
    for g in range(1, cfg.k + 1):
        rows = inst.loadings[mem == g]
        assert np.ptp(rows, axis=0).max() == 0.0


def test_approximate_mode_perturbs_loadings():
    cfg = DgpConfig(j=20, t0=30, mode=APPROXIMATE)
    inst = generate_instance(cfg, 0)
    mem = np.asarray(inst.oracle.groups.membership)
    spread = np.ptp(inst.loadings[mem == 1], axis=0)
    assert spread.max() > 0 and spread.max() <= 2 * cfg.group_noise


def test_instance_deterministic_and_rep_dependent():
    cfg = DgpConfig(j=12, t0=25, seed=3)
    a, b = generate_instance(cfg, 1), generate_instance(cfg, 1)
    np.testing.assert_array_equal(a.panel.outcomes, b.panel.outcomes)
    c = generate_instance(cfg, 2)
    assert not np.array_equal(a.panel.outcomes, c.panel.outcomes)
    # design (loadings, group weights) is shared across replications
    np.testing.assert_array_equal(a.loadings, c.loadings)


def test_ar1_stationary_variance():
    F = _ar1(np.random.default_rng(0), 100_000, 2, 0.5)
    np.testing.assert_allclose(F.var(axis=0), 4 / 3, rtol=0.03)
    lag = np.mean(F[1:, 0] * F[:-1, 0]) / np.mean(F[:, 0] ** 2)
    assert lag == pytest.approx(0.5, abs=0.02)


def test_idiosyncratic_variance():
    inst = generate_instance(DgpConfig(j=200, t0=100, t1=400), 0)
    assert inst.errors.var() == pytest.approx(1.0, rel=0.05)


def test_oracle_feasible_on_truth():
    inst = generate_instance(DgpConfig(j=30, t0=40), 0)
    orc = oracle_weights(inst.oracle)
    m = inst.oracle.exact_moments()
    r = m.sigma_hat @ orc.w - m.upsilon_hat + orc.gamma
    assert np.max(np.abs(r)) <= 1e-8
    assert orc.w.min() >= 0 and orc.w.sum() == pytest.approx(1.0)


def test_empirical_risk():
    Y = np.array([[1.0, 3.0], [2.0, 2.0], [0.0, 4.0], [1.0, 1.0]])
    p = PanelData.from_arrays(np.array([2.0, 2.0, 2.0, 0.0]), Y, 2)
    assert empirical_risk([0.5, 0.5], p) == 0.0
    assert empirical_risk([1.0, 0.0], p) == pytest.approx(0.5)
    assert empirical_risk([0.5, 0.5], p, "post") == pytest.approx((0.0 + 1.0) / 2)
    with pytest.raises(DimensionMismatch):
        empirical_risk([1.0], p)
    with pytest.raises(ValueError):
        empirical_risk([0.5, 0.5], p, "all")


def test_normalize_methods():
    assert normalize_methods(["l2", "SCM", "ridge", "l2relax"]) == (SCM, RIDGE, L2_RELAX)
    with pytest.raises(InvalidConfig):
        normalize_methods(["svm"])


def test_scm_only_ratios_are_one():
    rep = run_experiment(DgpConfig(j=15, t0=25, t1=5), 2, [SCM])
    assert rep.per_method[SCM] == {"pred": 1.0, "l1": 1.0, "l2": 1.0}


def test_small_experiment_report():
    cfg = DgpConfig(j=50, t0=25, t1=10)
    rep = run_experiment(cfg, 2, [SCM, RIDGE, L2_RELAX], grid_size=5)
    assert rep.n_reps == 2 and len(rep.replications) == 2
    for meth in (RIDGE, L2_RELAX):
        v = rep.per_method[meth]
        assert all(np.isfinite(x) and x >= 0 for x in v.values())
    d = json.loads(rep.to_json(include_raw=True))
    assert d["config"]["j"] == 50 and len(d["replications"]) == 2
    lines = rep.to_csv().strip().splitlines()
    assert lines[0].startswith("method,pred_error_ratio") and len(lines) == 4


def test_replication_failure_carries_index(monkeypatch):
    import scmrelax.simulation as sim

    def boom(*a, **k):
        raise RuntimeError("bad fit")

    monkeypatch.setattr(sim, "solve_scm", boom)
    with pytest.raises(ReplicationFailure) as exc:
        run_replication(DgpConfig(j=10, t0=25, t1=3), 4, [SCM])
    assert exc.value.rep == 4


def test_pred_ratio_against_direct_computation():
    cfg = DgpConfig(j=20, t0=30, t1=6, seed=5)
    out = run_replication(cfg, 0, [SCM, RIDGE], grid_size=4)
    inst = generate_instance(cfg, 0)
    from scmrelax.baselines import solve_penalized, solve_scm

    m = compute_moments(inst.panel)
    post = inst.panel.post[:, 1:]
    ys = post @ oracle_weights(inst.oracle).w
    base = np.sum((post @ solve_scm(m).w - ys) ** 2)
    ridge = np.sum((post @ solve_penalized(m, RIDGE, out["methods"][RIDGE]["lambda"]).w - ys) ** 2)
    assert out["methods"][RIDGE]["pred"] == pytest.approx(ridge / base, rel=1e-8)


def test_sweep_grid():
    cfgs = sweep_configs()
    assert len(cfgs) == 27
    assert {(c.j, c.t0) for c in cfgs} >= {(50, 25), (200, 400)}
