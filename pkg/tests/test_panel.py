import csv

import numpy as np
import pytest

from scmrelax.errors import (
    DegenerateSeries,
    DimensionMismatch,
    InsufficientHistory,
    MissingTime,
    MissingUnit,
    NonNumericCell,
    TooFewPeriods,
    ZeroBase,
)
from scmrelax.moments import compute_moments
from scmrelax.panel import (
    PanelData,
    ScaleVector,
    destandardize_weights,
    growth_rates,
    load_panel_csv,
    reconstruct_levels,
    standardize,
    yoy_growth,
)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_load_small_csv(tmp_path):
    p = tmp_path / "p.csv"
    write_csv(p, ["time", "a", "b", "c"],
              [["t1", 1, 2, 3], ["t2", 4, 5, 6], ["t3", 7, 8, 9], ["t4", 1, 1, 1]])
    panel = load_panel_csv(p, "b", "t3")
    assert (panel.t0, panel.t1, panel.j) == (2, 2, 2)
    assert panel.unit_labels == ("b", "a", "c")
    np.testing.assert_array_equal(panel.y0, [2, 5, 8, 1])
    assert panel.treatment_label == "t3"


def test_load_errors(tmp_path):
    p = tmp_path / "p.csv"
    write_csv(p, ["time", "a", "b"], [["t1", 1, 2], ["t2", "abc", 5], ["t3", 7, 8]])
    with pytest.raises(MissingUnit):
        load_panel_csv(p, "zz", "t3")
    with pytest.raises(MissingTime):
        load_panel_csv(p, "a", "t9")
    with pytest.raises(NonNumericCell) as exc:
        load_panel_csv(p, "a", "t3")
    assert (exc.value.row, exc.value.col) == (2, 1)
    write_csv(p, ["time", "a", "b"], [["t1", 1, 2], ["t2", 3, 5], ["t3", 7, 8]])
    with pytest.raises(TooFewPeriods):
        load_panel_csv(p, "a", "t2")


def test_csv_roundtrip(tmp_path, rng):
    panel = PanelData.from_arrays(rng.normal(size=12), rng.normal(size=(12, 3)) * 1e3, 8)
    p = tmp_path / "rt.csv"
    panel.to_csv(p)
    back = load_panel_csv(p, "treated", panel.time_labels[8])
    np.testing.assert_array_equal(back.outcomes, panel.outcomes)


def test_panel_invariants():
    with pytest.raises(DimensionMismatch):
        PanelData(np.zeros((4, 1)), 2, 2, ["a"], list("wxyz"))
    with pytest.raises(DimensionMismatch):
        PanelData(np.zeros((4, 2)), 2, 1, ["a", "b"], list("wxyz"))
    with pytest.raises(ValueError):
        PanelData.from_arrays([1, 2, np.nan], np.ones((3, 1)), 2)


def test_yoy_examples():
    g = growth_rates([5.0] * 5, 4)
    assert g.shape == (1,) and g[0] == 0.0

    y = np.array([100, 1, 1, 1, 110, 2, 2, 2.0])
    g = yoy_growth(PanelData.from_arrays(y, np.ones((8, 1)), 6), 4)
    assert g.outcomes[0, 0] == pytest.approx(0.10, abs=1e-15)
    assert g.t0 == 2 and g.time_labels[0] == "5"

    y[2] = 0.0
    with pytest.raises(ZeroBase):
        yoy_growth(PanelData.from_arrays(y, np.ones((8, 1)), 6), 4)


def test_yoy_geometric_series():
    rho = 1.07
    y = 3.0 * rho ** (np.arange(20) / 4.0)
    g = yoy_growth(PanelData.from_arrays(y, np.c_[y, 2 * y], 12), 4)
    np.testing.assert_allclose(g.outcomes, rho - 1.0, rtol=1e-12)


def test_standardize_examples():
    y = np.array([[0.0, 0.0, 1.0], [2.0, 2.0, 3.0], [5.0, 5.0, 5.0]])
    p = PanelData.from_arrays(y[:, 0], y[:, 1:], 2)
    s, sc = standardize(p)
    assert sc.sigma0 == pytest.approx(np.sqrt(2))
    np.testing.assert_allclose(s.outcomes[:, 0], y[:, 0] / np.sqrt(2))

    unit = np.array([[1.0, 2.0], [2.0, 1.0], [7.0, 7.0]])
    s, sc = standardize(PanelData(unit * np.sqrt(2), 2, 1, ["a", "b"], ["1", "2", "3"]))
    np.testing.assert_allclose(sc.sigma, 1.0)

    flat = PanelData.from_arrays([1.0, 2.0, 3.0], [[4.0], [4.0], [1.0]], 2)
    with pytest.raises(DegenerateSeries):
        standardize(flat)


def test_destandardize_examples():
    sc = ScaleVector(2.0, [4.0, 1.0])
    np.testing.assert_allclose(destandardize_weights([1.0, 0.0], sc), [0.5, 0.0])
    same = ScaleVector(3.0, [3.0, 3.0, 3.0])
    np.testing.assert_allclose(destandardize_weights([0.2, 0.3, 0.5], same), [0.2, 0.3, 0.5])
    with pytest.raises(DimensionMismatch):
        destandardize_weights([1.0], sc)


def test_standardized_roundtrip_predictions(rng):
    p = PanelData.from_arrays(rng.normal(3, 2, 30), rng.normal(1, 5, (30, 4)), 20)
    s, sc = standardize(p)
    ws = rng.dirichlet(np.ones(4))
    a = s.controls @ ws * sc.sigma0
    b = p.controls @ destandardize_weights(ws, sc)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_standardized_moments_identity(rng):
    p = PanelData.from_arrays(rng.normal(size=25), rng.normal(size=(25, 5)) * [1, 2, 3, 4, 5], 18)
    s, sc = standardize(p)
    m, ms = compute_moments(p), compute_moments(s)
    D = np.diag(1.0 / sc.sigma)
    np.testing.assert_allclose(ms.sigma_hat, D @ m.sigma_hat @ D, rtol=1e-12)
    np.testing.assert_allclose(ms.upsilon_hat, D @ m.upsilon_hat / sc.sigma0, rtol=1e-12)


def test_reconstruct_levels_examples():
    np.testing.assert_allclose(reconstruct_levels([0.0] * 6, [100.0] * 8, 8, 4), 100.0)
    np.testing.assert_allclose(reconstruct_levels([0.1] * 3, [100.0], 1, 1), [110, 121, 133.1])
    with pytest.raises(InsufficientHistory):
        reconstruct_levels([0.1], [1.0, 2.0], 2, 4)


def test_reconstruct_levels_chains_on_predictions():
    obs = np.array([10.0, 20.0, 30.0, 40.0])
    out = reconstruct_levels([0.5, 0.5, 0.5], obs, 2, 2)
    # first lag values use observed bases, later ones the reconstruction
    np.testing.assert_allclose(out, [15.0, 30.0, 22.5])


def test_panel_json_roundtrip(rng):
    p = PanelData.from_arrays(rng.normal(size=6), rng.normal(size=(6, 2)), 4)
    q = PanelData.from_json_dict(p.to_json_dict())
    np.testing.assert_array_equal(p.outcomes, q.outcomes)
    assert q.time_labels == p.time_labels
