"""Blocked cross-validation for the band radius, the penalty weight and the fsPDA term cap."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import LASSO, RIDGE, fspda_from_arrays, solve_penalized
from .divergences import Divergence
from .errors import InfeasibleRelaxation, NumericalFailure, RankDeficientDesign, TooFewPeriods
from .moments import MomentPair, compute_moments, eta_bar, moment_scale, moments_from_arrays
from .panel import PanelData
from .solver import INFEASIBLE, LP_ACCEPT, check_feasibility, solve_relaxation

MIN_T0 = 8
DEFAULT_GRID = 20
FOLD_SWITCH = 50  # t0 below this gets two folds, otherwise four
LAMBDA_SPAN = (-4.0, 2.0)  # log10 range, times the mean diagonal of sigma_hat
TIE_RTOL = 1e-12


@dataclass
class CvResult:
    grid: np.ndarray
    fold_errors: np.ndarray  # grid x folds, +inf where the fit was infeasible
    chosen: float
    chosen_index: int
    n_folds: int
    parameter: str = "eta"
    diagnostics: dict = field(default_factory=dict)

    @property
    def mean_errors(self) -> np.ndarray:
        return self.fold_errors.mean(axis=1)

    def to_dict(self) -> dict:
        def enc(v):
            return None if not math.isfinite(v) else float(v)

        return {
            "parameter": self.parameter,
            "grid": [float(g) for g in self.grid],
            "fold_errors": [[enc(v) for v in row] for row in self.fold_errors],
            "mean_errors": [enc(v) for v in self.mean_errors],
            "chosen": float(self.chosen),
            "chosen_index": int(self.chosen_index),
            "n_folds": int(self.n_folds),
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def n_folds_for(t0: int) -> int:
    return 2 if t0 < FOLD_SWITCH else 4


def fold_blocks(t0: int, n_folds: int | None = None) -> list[np.ndarray]:
    """Contiguous, disjoint time blocks covering ``0..t0-1``; lengths differ by at most one."""
    n_folds = n_folds_for(t0) if n_folds is None else n_folds
    return np.array_split(np.arange(t0), n_folds)


def _check_t0(panel: PanelData) -> None:
    if panel.t0 < MIN_T0:
        raise TooFewPeriods(f"cross-validation needs t0 >= {MIN_T0}, got {panel.t0}")


def _splits(panel: PanelData):
    pre = panel.pre
    for block in fold_blocks(panel.t0):
        train = np.ones(panel.t0, dtype=bool)
        train[block] = False
        yield pre[train], pre[block]


def choose_index(mean_errors: np.ndarray) -> int:
    """Argmin of the mean fold error; near-ties go to the largest grid value."""
    e = np.asarray(mean_errors, dtype=float)
    best = np.min(e)
    if not math.isfinite(best):
        return len(e) - 1
    ties = np.flatnonzero(e <= best + TIE_RTOL * max(abs(best), 1e-300))
    return int(ties[-1])


def eta_grid(m: MomentPair, grid_size: int = DEFAULT_GRID) -> np.ndarray:
    if grid_size < 1:
        raise ValueError("grid_size must be positive")
    eb, _ = eta_bar(m)
    if grid_size == 1:
        return np.array([eb])
    return np.linspace(0.0, eb, grid_size)


def lambda_grid(m: MomentPair, grid_size: int = DEFAULT_GRID) -> np.ndarray:
    if grid_size < 1:
        raise ValueError("grid_size must be positive")
    return np.logspace(*LAMBDA_SPAN, grid_size) * moment_scale(m)


def _mse(pred: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((pred - y) ** 2))


def cv_select_eta(panel: PanelData, d: Divergence | None = None, grid_size: int = DEFAULT_GRID,
                  tol: float = 1e-8, grid=None) -> CvResult:
    """Pick the band radius by blocked CV over ``[0, eta_bar]``.

    Each training fit uses its own moments; a grid value ``eta`` becomes
    ``eta * eta_bar_fold / eta_bar_full`` there. Values below a fold's
    feasibility threshold score ``+inf``, as do values below the full-sample
    threshold, so the choice is always usable on the full sample.
    """
    _check_t0(panel)
    d = Divergence() if d is None else d
    m_full = compute_moments(panel)
    grid = eta_grid(m_full, grid_size) if grid is None else np.sort(np.asarray(grid, dtype=float))
    eb_full, _ = eta_bar(m_full)
    cert_full = check_feasibility(m_full)
    sc_full = moment_scale(m_full)
    nf = n_folds_for(panel.t0)
    errs = np.full((len(grid), nf), np.inf)
    failures = 0

    for f, (train, valid) in enumerate(_splits(panel)):
        m = moments_from_arrays(train[:, 0], train[:, 1:])
        eb, _ = eta_bar(m)
        cert = check_feasibility(m)
        slack = 10.0 * LP_ACCEPT * moment_scale(m)
        ratio = eb / eb_full if eb_full > 0 else 0.0
        for i, eta in enumerate(grid):
            if eta < cert_full.eta_min - 10.0 * LP_ACCEPT * sc_full:
                continue
            eta_f = eta * ratio
            if eta_f < cert.eta_min - slack:
                continue
            try:
                sol = solve_relaxation(m, d, max(eta_f, 0.0), tol, certificate=cert,
                                       raise_on_infeasible=False)
            except (InfeasibleRelaxation, NumericalFailure):
                failures += 1
                continue
            if sol.status == INFEASIBLE:
                continue
            errs[i, f] = _mse(valid[:, 1:] @ sol.w, valid[:, 0])

    idx = choose_index(errs.mean(axis=1))
    return CvResult(grid, errs, float(grid[idx]), idx, nf, "eta",
                    {"divergence": d.label, "eta_bar": eb_full, "eta_min": cert_full.eta_min,
                     "solver_failures": failures})


def cv_select_lambda(panel: PanelData, kind: str, grid_size: int = DEFAULT_GRID,
                     tol: float = 1e-8, grid=None) -> CvResult:
    """Blocked CV for the Lasso/Ridge penalty; the grid is fixed on the full sample."""
    _check_t0(panel)
    if kind not in (LASSO, RIDGE):
        raise ValueError(f"unknown penalty {kind!r}")
    m_full = compute_moments(panel)
    grid = lambda_grid(m_full, grid_size) if grid is None else np.sort(np.asarray(grid, dtype=float))
    nf = n_folds_for(panel.t0)
    errs = np.full((len(grid), nf), np.inf)
    failures = 0
    for f, (train, valid) in enumerate(_splits(panel)):
        m = moments_from_arrays(train[:, 0], train[:, 1:])
        for i, lam in enumerate(grid):
            try:
                fit = solve_penalized(m, kind, float(lam), tol)
            except NumericalFailure:
                failures += 1
                continue
            errs[i, f] = _mse(valid[:, 1:] @ fit.w, valid[:, 0])
    idx = choose_index(errs.mean(axis=1))
    return CvResult(grid, errs, float(grid[idx]), idx, nf, "lambda",
                    {"kind": kind, "solver_failures": failures})


def max_terms_cap(panel: PanelData) -> int:
    """Largest fsPDA term cap every training fold can support."""
    shortest = min(panel.t0 - len(b) for b in fold_blocks(panel.t0))
    return max(1, min(panel.j, shortest - 2))


def cv_select_terms(panel: PanelData, max_cap: int | None = None) -> CvResult:
    """Blocked CV over the fsPDA term cap ``1..max_cap`` (BIC still applies inside each fit)."""
    _check_t0(panel)
    cap = max_terms_cap(panel)
    cap = cap if max_cap is None else max(1, min(cap, max_cap))
    grid = np.arange(1, cap + 1, dtype=float)
    nf = n_folds_for(panel.t0)
    errs = np.full((len(grid), nf), np.inf)
    for f, (train, valid) in enumerate(_splits(panel)):
        for i, k in enumerate(grid):
            try:
                fit = fspda_from_arrays(train[:, 0], train[:, 1:], int(k))
            except RankDeficientDesign:
                continue
            errs[i, f] = _mse(fit.predict(valid[:, 1:]), valid[:, 0])
            if len(fit.selected) < k:
                # BIC stopped early, so every larger cap gives this same fit
                errs[i + 1:, f] = errs[i, f]
                break
    idx = choose_index(errs.mean(axis=1))
    return CvResult(grid, errs, float(grid[idx]), idx, nf, "max_terms")
