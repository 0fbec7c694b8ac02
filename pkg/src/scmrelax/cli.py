"""Command-line front end.

    scmrelax estimate --data panel.csv --treated UK --treatment-time 2016Q3 --method l2 --cv
    scmrelax cv       --data panel.csv --treated UK --treatment-time 2016Q3 --method entropy
    scmrelax simulate --j 50 --t0 50 --k-mode lt --reps 100 --out sim/
    scmrelax oracle   --input loadings.json

Module errors are printed to stderr as one JSON object and the exit code is
nonzero. ``estimate`` exits 0 only when every artifact was written and the
fit converged.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .baselines import LASSO, RIDGE, fspda_from_arrays, solve_penalized, solve_scm
from .divergences import Divergence
from .errors import InvalidConfig, ScmRelaxError
from .moments import compute_moments
from .oracle import OracleInputs, oracle_weights, oracle_weights_g
from .panel import (
    PanelData,
    destandardize_weights,
    load_panel_csv,
    reconstruct_levels,
    standardize,
    yoy_growth,
)
from .simulation import (
    APPROXIMATE,
    EXACT,
    DgpConfig,
    normalize_methods,
    run_experiment,
    sweep_configs,
)
from .solver import CONVERGED, solve_relaxation
from .tuning import DEFAULT_GRID, cv_select_eta, cv_select_lambda, cv_select_terms

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 3

BASELINES = {"scm": "SCM", "lasso": LASSO, "ridge": RIDGE, "fspda": "fsPDA"}


@dataclass
class Estimate:
    """A fitted counterfactual on the working (possibly growth-rate) panel."""

    method: str
    predicted: np.ndarray  # all periods of the working panel
    status: str
    solution: dict
    weights: np.ndarray | None = None  # on the raw working outcomes; None for fsPDA
    cv: dict | None = None
    extra: dict = field(default_factory=dict)


def _is_relaxation(method: str) -> bool:
    return method not in BASELINES


def estimate(panel: PanelData, method: str = "l2", eta: float | None = None, use_cv: bool = False,
             lam: float | None = None, max_terms: int | None = None, standardized: bool = False,
             grid_size: int = DEFAULT_GRID, tol: float = 1e-8) -> Estimate:
    """Fit one method on ``panel`` and predict the treated series over every period.

    Relaxation methods take ``eta`` or pick it by CV (the default when no
    ``eta`` is given). Lasso/Ridge take ``lam`` or CV; fsPDA takes
    ``max_terms`` or CV. With ``standardized`` the fit runs on scale-free
    outcomes and the weights are mapped back to the raw units.
    """
    method = method.strip().lower()
    work, scales = standardize(panel) if standardized else (panel, None)
    m = compute_moments(work, standardized=standardized)
    cv_info = None

    if method == "fspda":
        if max_terms is None:
            cvr = cv_select_terms(work)
            max_terms, cv_info = int(cvr.chosen), cvr.to_dict()
        pre = panel.pre
        fit = fspda_from_arrays(pre[:, 0], pre[:, 1:], max_terms)
        sol = fit.to_dict()
        sol.update(method="fsPDA", status=CONVERGED)
        return Estimate("fsPDA", fit.predict(panel.controls), CONVERGED, sol, None, cv_info)

    if method == "scm":
        fit = solve_scm(m, tol)
        w_s, status, sol = fit.w, fit.status, fit.to_dict()
    elif method in ("lasso", "ridge"):
        kind = BASELINES[method]
        if lam is None:
            cvr = cv_select_lambda(work, kind, grid_size, tol)
            lam, cv_info = cvr.chosen, cvr.to_dict()
        fit = solve_penalized(m, kind, lam, tol)
        w_s, status, sol = fit.w, fit.status, fit.to_dict()
    else:
        try:
            d = Divergence.parse(method)
        except ValueError as exc:
            raise InvalidConfig(str(exc), "method") from None
        if eta is None or use_cv:
            cvr = cv_select_eta(work, d, grid_size, tol)
            eta, cv_info = cvr.chosen, cvr.to_dict()
        res = solve_relaxation(m, d, float(eta), tol)
        w_s, status, sol = res.w, res.status, res.to_dict()

    w = destandardize_weights(w_s, scales) if standardized else w_s
    if standardized:
        sol["w_standardized"] = sol["w"]
        sol["w"] = w.tolist()
    sol["units"] = list(panel.unit_labels[1:])
    return Estimate(sol.get("method", method), panel.controls @ w, status, sol, w, cv_info)


def effect_summary(times, observed, predicted, t0: int) -> dict:
    obs = np.asarray(observed, dtype=float)
    pred = np.asarray(predicted, dtype=float)
    gap = obs - pred
    post = slice(t0, None)
    denom = float(np.sum(obs[post]))
    return {
        "in_sample_risk": float(np.mean(gap[:t0] ** 2)),
        "out_of_sample_risk": float(np.mean(gap[post] ** 2)) if len(obs) > t0 else None,
        "ate_path": [{"time": t, "effect": float(e)} for t, e in zip(times[t0:], gap[post])],
        "ate_mean": float(np.mean(gap[post])) if len(obs) > t0 else None,
        "cumulative_effect": float(np.sum(gap[post])),
        "cumulative_effect_ratio": float(np.sum(gap[post])) / denom if denom != 0 else None,
    }


def run_pipeline(levels: PanelData, method: str, yoy: int | None = None, to_levels: bool = False,
                 **kw):
    """yoy transform -> estimate -> (optionally) back to levels.

    Returns ``(estimate, times, observed, predicted, t0)`` where the last
    four describe the series reported to the user.
    """
    if to_levels and yoy is None:
        raise InvalidConfig("--levels needs --yoy", "levels")
    work = yoy_growth(levels, yoy) if yoy else levels
    est = estimate(work, method, **kw)
    if not to_levels:
        return est, list(work.time_labels), work.y0, est.predicted, work.t0
    y = levels.y0
    g_hat = est.predicted
    # pre-treatment: one-step predictions off observed levels; post: chained
    pre = (1.0 + g_hat[: work.t0]) * y[: levels.t0 - yoy]
    post = reconstruct_levels(g_hat[work.t0:], y, levels.t0, yoy)
    pred = np.concatenate([pre, post])
    return est, list(levels.time_labels[yoy:]), y[yoy:], pred, work.t0


def gap_svg(times, observed, predicted, t0: int, title: str = "") -> str:
    """Plain static chart of observed vs counterfactual with the treatment date marked."""
    W, H, L, R, T, B = 720, 360, 60, 20, 30, 40
    obs = np.asarray(observed, float)
    pred = np.asarray(predicted, float)
    lo = float(min(obs.min(), pred.min()))
    hi = float(max(obs.max(), pred.max()))
    if hi == lo:
        hi, lo = hi + 1.0, lo - 1.0
    n = len(obs)

    def px(i):
        return L + (W - L - R) * (i / max(n - 1, 1))

    def py(v):
        return T + (H - T - B) * (1.0 - (v - lo) / (hi - lo))

    def path(v):
        return " ".join(f"{px(i):.2f},{py(x):.2f}" for i, x in enumerate(v))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{L}" y1="{H - B}" x2="{W - R}" y2="{H - B}" stroke="black"/>',
        f'<line x1="{L}" y1="{T}" x2="{L}" y2="{H - B}" stroke="black"/>',
        f'<text x="{L - 5}" y="{T + 4}" font-size="11" text-anchor="end">{hi:.4g}</text>',
        f'<text x="{L - 5}" y="{H - B + 4}" font-size="11" text-anchor="end">{lo:.4g}</text>',
        f'<text x="{L}" y="{H - B + 16}" font-size="11">{_esc(times[0])}</text>',
        f'<text x="{W - R}" y="{H - B + 16}" font-size="11" text-anchor="end">{_esc(times[-1])}</text>',
    ]
    if 0 < t0 < n:
        x = px(t0)
        out.append(f'<line x1="{x:.2f}" y1="{T}" x2="{x:.2f}" y2="{H - B}" stroke="gray" '
                   'stroke-dasharray="4,3"/>')
        out.append(f'<text x="{x:.2f}" y="{H - B + 16}" font-size="11" '
                   f'text-anchor="middle">{_esc(times[t0])}</text>')
    out.append(f'<polyline fill="none" stroke="black" stroke-width="1.5" points="{path(obs)}"/>')
    out.append(f'<polyline fill="none" stroke="#c0392b" stroke-width="1.5" '
               f'stroke-dasharray="6,3" points="{path(pred)}"/>')
    lx = W - R - 150
    out += [
        f'<line x1="{lx}" y1="{T + 5}" x2="{lx + 25}" y2="{T + 5}" stroke="black"/>',
        f'<text x="{lx + 30}" y="{T + 9}" font-size="11">observed</text>',
        f'<line x1="{lx}" y1="{T + 20}" x2="{lx + 25}" y2="{T + 20}" stroke="#c0392b" '
        'stroke-dasharray="6,3"/>',
        f'<text x="{lx + 30}" y="{T + 24}" font-size="11">counterfactual</text>',
    ]
    if title:
        out.append(f'<text x="{W / 2}" y="18" font-size="13" text-anchor="middle">{_esc(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _finite(obj):
    # JSON has no inf/nan; CV matrices already use null, this catches the rest
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def _estimate_kwargs(a) -> dict:
    return dict(eta=a.eta, use_cv=a.cv, lam=a.lam, max_terms=a.max_terms,
                standardized=a.standardize, grid_size=a.grid_size)


def cmd_estimate(a) -> int:
    panel = load_panel_csv(a.data, a.treated, a.treatment_time)
    est, times, obs, pred, t0 = run_pipeline(panel, a.method, a.yoy, a.levels, **_estimate_kwargs(a))
    os.makedirs(a.out, exist_ok=True)

    sol = dict(est.solution)
    if est.cv is not None:
        sol["cv"] = est.cv
    _write_json(os.path.join(a.out, "weights.json"), _finite(sol))

    with open(os.path.join(a.out, "counterfactual.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "observed", "predicted", "gap"])
        for t, o, p in zip(times, obs, pred):
            w.writerow([t, repr(float(o)), repr(float(p)), repr(float(o - p))])

    summary = {
        "method": est.method,
        "status": est.status,
        "treated": panel.unit_labels[0],
        "treatment_time": a.treatment_time,
        "units": "levels" if a.levels else ("yoy growth" if a.yoy else "raw"),
        **effect_summary(times, obs, pred, t0),
    }
    _write_json(os.path.join(a.out, "summary.json"), _finite(summary))
    with open(os.path.join(a.out, "gap.svg"), "w", encoding="utf-8") as fh:
        fh.write(gap_svg(times, obs, pred, t0, f"{panel.unit_labels[0]}: {est.method}"))
    return EXIT_OK if est.status == CONVERGED else EXIT_NOT_CONVERGED


def cmd_cv(a) -> int:
    panel = load_panel_csv(a.data, a.treated, a.treatment_time)
    if a.yoy:
        panel = yoy_growth(panel, a.yoy)
    if a.standardize:
        panel, _ = standardize(panel)
    method = a.method.strip().lower()
    if method == "fspda":
        res = cv_select_terms(panel)
    elif method in ("lasso", "ridge"):
        res = cv_select_lambda(panel, BASELINES[method], a.grid_size)
    elif method == "scm":
        raise InvalidConfig("SCM has no tuning parameter", "method")
    else:
        try:
            d = Divergence.parse(method)
        except ValueError as exc:
            raise InvalidConfig(str(exc), "method") from None
        res = cv_select_eta(panel, d, a.grid_size)
    out = res.to_dict()
    text = json.dumps(_finite(out), indent=2)
    if a.out:
        os.makedirs(a.out, exist_ok=True)
        with open(os.path.join(a.out, "cv.json"), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_oracle(a) -> int:
    with open(a.input, encoding="utf-8") as fh:
        inp = OracleInputs.from_json_dict(json.load(fh))
    if a.divergence:
        try:
            d = Divergence.parse(a.divergence)
        except ValueError as exc:
            raise InvalidConfig(str(exc), "divergence") from None
        res = oracle_weights_g(inp, d)
    else:
        res = oracle_weights(inp)
    text = json.dumps(res.to_dict(), indent=2)
    if a.out:
        with open(a.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_simulate(a) -> int:
    mode = {"exact": EXACT, "approx": APPROXIMATE, "approximate": APPROXIMATE}[a.mode]
    methods = normalize_methods(m for m in a.methods.split(",") if m.strip())
    if a.reps < 1:
        raise InvalidConfig("reps must be positive", "reps")
    if a.workers < 1:
        raise InvalidConfig("workers must be positive", "workers")
    if a.full_sweep:
        cfgs = sweep_configs(a.seed, mode, a.t1)
    else:
        if a.j is None or a.t0 is None:
            raise InvalidConfig("--j and --t0 are required without --full-sweep", "j")
        cfgs = [DgpConfig(j=a.j, t0=a.t0, t1=a.t1, k_mode=a.k_mode, mode=mode, seed=a.seed)]
    os.makedirs(a.out, exist_ok=True)
    for cfg in cfgs:
        rep = run_experiment(cfg, a.reps, methods, a.workers, a.grid_size)
        stem = "report" if len(cfgs) == 1 else f"report_j{cfg.j}_t{cfg.t0}_{cfg.k_mode}"
        rep.write(a.out, stem, include_raw=a.raw)
        print(rep.to_csv(), end="")
    return EXIT_OK


def _panel_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="wide CSV: time column then one column per unit")
    p.add_argument("--treated", required=True)
    p.add_argument("--treatment-time", required=True, help="label of the first treated period")
    p.add_argument("--method", default="l2", help="scm|lasso|ridge|fspda|l2|el|entropy|cr:<gamma>")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--yoy", type=int, default=None, metavar="LAG", help="fit on lag-LAG growth rates")
    p.add_argument("--grid-size", type=int, default=DEFAULT_GRID)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scmrelax", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="fit one method and write weights, counterfactual, summary, chart")
    _panel_args(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--eta", type=float, default=None)
    g.add_argument("--cv", action="store_true")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="Lasso/Ridge penalty")
    p.add_argument("--max-terms", type=int, default=None, help="fsPDA term cap")
    p.add_argument("--levels", action="store_true", help="report in levels (needs --yoy)")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("cv", help="cross-validate a tuning parameter")
    _panel_args(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="Monte Carlo comparison of methods")
    p.add_argument("--j", type=int)
    p.add_argument("--t0", type=int)
    p.add_argument("--t1", type=int, default=50)
    p.add_argument("--k-mode", choices=["lt", "eq", "gt"], default="lt")
    p.add_argument("--mode", choices=["exact", "approx", "approximate"], default="exact")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", default="scm,lasso,ridge,fspda,l2,el,entropy")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--grid-size", type=int, default=DEFAULT_GRID)
    p.add_argument("--full-sweep", action="store_true")
    p.add_argument("--raw", action="store_true", help="include per-replication ratios in the JSON")
    p.add_argument("--out", default="sim")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", help="oracle weights from loadings and group membership")
    p.add_argument("--input", required=True)
    p.add_argument("--divergence", default=None, help="solve numerically with this divergence")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    try:
        return a.func(a)
    except ScmRelaxError as exc:
        err = exc.to_dict()
    except (ValueError, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(json.dumps(err) + "\n")
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
