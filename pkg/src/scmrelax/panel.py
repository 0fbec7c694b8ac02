"""Panel data model, CSV ingestion, and the empirical-pipeline transforms."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateSeries,
    DimensionMismatch,
    InsufficientHistory,
    MissingTime,
    MissingUnit,
    NonNumericCell,
    TooFewPeriods,
    ZeroBase,
)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PanelData:
    """Outcomes for one treated unit (column 0) and ``J`` donors (columns 1..J).

    Rows are time periods; the first ``t0`` rows are pre-treatment.
    """

    outcomes: np.ndarray
    t0: int
    t1: int
    unit_labels: tuple[str, ...]
    time_labels: tuple[str, ...]

    def __post_init__(self):
        y = _frozen(self.outcomes)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "unit_labels", tuple(str(u) for u in self.unit_labels))
        object.__setattr__(self, "time_labels", tuple(str(t) for t in self.time_labels))
        if y.ndim != 2:
            raise DimensionMismatch("outcomes must be a 2-D matrix")
        if y.shape[1] < 2:
            raise DimensionMismatch("need a treated unit and at least one donor")
        if self.t0 < 0 or self.t1 < 0 or y.shape[0] != self.t0 + self.t1:
            raise DimensionMismatch(
                f"outcomes has {y.shape[0]} rows but t0 + t1 = {self.t0 + self.t1}"
            )
        if self.t0 < 2:
            raise TooFewPeriods(f"t0 = {self.t0} < 2")
        if len(self.unit_labels) != y.shape[1]:
            raise DimensionMismatch("unit_labels length differs from number of columns")
        if len(self.time_labels) != y.shape[0]:
            raise DimensionMismatch("time_labels length differs from number of rows")
        if not np.all(np.isfinite(y)):
            raise ValueError("outcomes contain non-finite values")

    @property
    def j(self) -> int:
        return self.outcomes.shape[1] - 1

    @property
    def y0(self) -> np.ndarray:
        return self.outcomes[:, 0]

    @property
    def controls(self) -> np.ndarray:
        return self.outcomes[:, 1:]

    @property
    def pre(self) -> np.ndarray:
        return self.outcomes[: self.t0]

    @property
    def post(self) -> np.ndarray:
        return self.outcomes[self.t0 :]

    @property
    def treatment_label(self) -> str | None:
        return self.time_labels[self.t0] if self.t1 > 0 else None

    @classmethod
    def from_arrays(cls, y0, controls, t0, unit_labels=None, time_labels=None) -> "PanelData":
        y0 = np.asarray(y0, dtype=float).reshape(-1)
        controls = np.asarray(controls, dtype=float)
        if controls.ndim == 1:
            controls = controls[:, None]
        if controls.shape[0] != y0.shape[0]:
            raise DimensionMismatch("treated and control series differ in length")
        n, j = controls.shape
        if unit_labels is None:
            unit_labels = ["treated"] + [f"c{i}" for i in range(1, j + 1)]
        if time_labels is None:
            time_labels = [str(t) for t in range(1, n + 1)]
        return cls(np.column_stack([y0, controls]), int(t0), n - int(t0), unit_labels, time_labels)

    def with_outcomes(self, outcomes, t0=None, time_labels=None) -> "PanelData":
        t0 = self.t0 if t0 is None else t0
        time_labels = self.time_labels if time_labels is None else time_labels
        outcomes = np.asarray(outcomes)
        return PanelData(outcomes, t0, outcomes.shape[0] - t0, self.unit_labels, time_labels)

    def to_json_dict(self) -> dict:
        return {
            "t0": self.t0,
            "t1": self.t1,
            "units": list(self.unit_labels),
            "times": list(self.time_labels),
            "outcomes": self.outcomes.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PanelData":
        return cls(np.asarray(d["outcomes"], dtype=float), d["t0"], d["t1"], d["units"], d["times"])

    def to_csv(self, path, digits: int = 17) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time", *self.unit_labels])
            for label, row in zip(self.time_labels, self.outcomes):
                w.writerow([label, *(format(v, f".{digits}g") for v in row)])


def load_panel_csv(path, treated_label: str, treatment_time_label: str) -> PanelData:
    """Read a wide CSV (``time,<unit1>,<unit2>,...``) into a :class:`PanelData`.

    ``treatment_time_label`` names the first treated period; all rows before
    it are pre-treatment.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise TooFewPeriods("CSV has no data rows")
    header, body = rows[0], rows[1:]
    units = [h.strip() for h in header[1:]]
    if treated_label not in units:
        raise MissingUnit(f"unit {treated_label!r} not in CSV header")
    times = [r[0].strip() for r in body]
    if treatment_time_label not in times:
        raise MissingTime(f"time {treatment_time_label!r} not in CSV")

    values = np.empty((len(body), len(units)))
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DimensionMismatch(f"row {i + 1} has {len(r)} cells, header has {len(header)}")
        for k, cell in enumerate(r[1:]):
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericCell(i + 1, k + 1, cell) from None
            if not math.isfinite(v):
                raise NonNumericCell(i + 1, k + 1, cell)
            values[i, k] = v

    t0 = times.index(treatment_time_label)
    if t0 < 2:
        raise TooFewPeriods(f"only {t0} pre-treatment periods")
    ti = units.index(treated_label)
    order = [ti] + [k for k in range(len(units)) if k != ti]
    return PanelData(values[:, order], t0, len(times) - t0, [units[k] for k in order], times)


def growth_rates(values, lag: int = 4) -> np.ndarray:
    """Row-wise ``y_t / y_{t-lag} - 1`` for a vector or a (periods x units) matrix."""
    if lag < 1:
        raise ValueError("lag must be positive")
    y = np.asarray(values, dtype=float)
    if y.shape[0] <= lag:
        raise TooFewPeriods(f"{y.shape[0]} periods with lag {lag}")
    base = y[:-lag]
    zero = np.argwhere(base == 0)
    if zero.size:
        idx = tuple(int(i) for i in zero[0])
        raise ZeroBase(idx[0], idx[1] if len(idx) > 1 else 0)
    return y[lag:] / base - 1.0


def yoy_growth(panel: PanelData, lag: int = 4) -> PanelData:
    """Year-over-year growth panel; the first ``lag`` periods are dropped."""
    g = growth_rates(panel.outcomes, lag)
    t0 = panel.t0 - lag
    if t0 < 2:
        raise TooFewPeriods(f"growth panel would have t0 = {t0}")
    return PanelData(g, t0, panel.t1, panel.unit_labels, panel.time_labels[lag:])


@dataclass(frozen=True)
class ScaleVector:
    sigma0: float
    sigma: np.ndarray

    def __post_init__(self):
        s = _frozen(self.sigma).reshape(-1)
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "sigma0", float(self.sigma0))
        if not (self.sigma0 > 0) or np.any(~(s > 0)):
            raise ValueError("scales must be strictly positive")


def standardize(panel: PanelData) -> tuple[PanelData, ScaleVector]:
    """Divide each unit by its pre-treatment sample standard deviation (no demeaning)."""
    sd = np.std(panel.pre, axis=0, ddof=1)
    for k, s in enumerate(sd):
        if not s > 0:
            raise DegenerateSeries(panel.unit_labels[k])
    scaled = PanelData(panel.outcomes / sd, panel.t0, panel.t1, panel.unit_labels, panel.time_labels)
    return scaled, ScaleVector(sd[0], sd[1:])


def destandardize_weights(w_s, scales: ScaleVector) -> np.ndarray:
    """Map weights fitted on standardized data to weights on the raw outcomes."""
    w_s = np.asarray(w_s, dtype=float).reshape(-1)
    if w_s.shape[0] != scales.sigma.shape[0]:
        raise DimensionMismatch(f"{w_s.shape[0]} weights but {scales.sigma.shape[0]} scales")
    return scales.sigma0 * w_s / scales.sigma


def reconstruct_levels(growth_predictions: Sequence[float], observed_levels: Sequence[float],
                       t0: int, lag: int = 4) -> np.ndarray:
    """Chain predicted growth rates back into levels.

    ``t0`` counts the pre-treatment periods of ``observed_levels``. Each
    post-treatment level is ``(1 + g_t) * z_{t-lag}`` where ``z`` is the
    observed level before treatment and the reconstructed level after.
    """
    g = np.asarray(growth_predictions, dtype=float).reshape(-1)
    obs = np.asarray(observed_levels, dtype=float).reshape(-1)
    if lag < 1:
        raise ValueError("lag must be positive")
    if t0 < lag:
        raise InsufficientHistory(f"t0 = {t0} < lag = {lag}")
    if obs.shape[0] < t0:
        raise DimensionMismatch("observed_levels shorter than t0")
    z = np.concatenate([obs[:t0], np.empty(g.shape[0])])
    for i, gt in enumerate(g):
        t = t0 + i
        z[t] = (1.0 + gt) * z[t - lag]
    return z[t0:]


def dump_panel_json(panel: PanelData, path) -> None:
    Path(path).write_text(json.dumps(panel.to_json_dict()), encoding="utf-8")
