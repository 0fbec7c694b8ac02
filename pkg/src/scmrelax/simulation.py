"""Monte Carlo engine: grouped factor-model panels, oracle targets, method comparison."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .baselines import LASSO, RIDGE, fspda_from_arrays, solve_penalized, solve_scm
from .divergences import EL, ENTROPY, L2, Divergence
from .errors import DimensionMismatch, InvalidConfig, ReplicationFailure
from .moments import compute_moments
from .oracle import GroupStructure, OracleInputs, oracle_weights
from .panel import PanelData
from .solver import CONVERGED, solve_relaxation
from .tuning import DEFAULT_GRID, cv_select_eta, cv_select_lambda, cv_select_terms

EXACT = "Exact"
APPROXIMATE = "Approximate"

SCM = "SCM"
FSPDA = "fsPDA"
L2_RELAX = "L2Relax"
EL_RELAX = "ELRelax"
ENTROPY_RELAX = "EntropyRelax"
ALL_METHODS = (SCM, LASSO, RIDGE, FSPDA, L2_RELAX, EL_RELAX, ENTROPY_RELAX)
RELAX = {L2_RELAX: L2, EL_RELAX: EL, ENTROPY_RELAX: ENTROPY}

# loose spellings accepted on the command line
METHOD_ALIASES = {
    "scm": SCM, "lasso": LASSO, "ridge": RIDGE, "fspda": FSPDA,
    "l2": L2_RELAX, "l2relax": L2_RELAX, "el": EL_RELAX, "elrelax": EL_RELAX,
    "entropy": ENTROPY_RELAX, "entropyrelax": ENTROPY_RELAX,
}

K_MODES = ("lt", "eq", "gt")
SWEEP_J = (50, 100, 200)


def k_for_mode(r: int, mode: str) -> int:
    if mode == "lt":
        return int(math.floor(0.8 * r))
    if mode == "eq":
        return r
    if mode == "gt":
        return int(math.floor(1.2 * r)) + 1
    raise InvalidConfig(f"unknown k mode {mode!r}", "k_mode")


def default_r(t0: int) -> int:
    return max(1, int(math.floor(math.log(t0))))


@dataclass(frozen=True)
class DgpConfig:
    j: int
    t0: int
    t1: int = 50
    r: int | None = None
    k: int | None = None
    k_mode: str = "lt"
    ar_coef: float = 0.5
    loading_var: float | None = None
    lambda0_noise: float | None = None
    group_noise: float | None = None
    mode: str = EXACT
    seed: int = 0

    def __post_init__(self):
        if self.t0 < 4:
            raise InvalidConfig("t0 must be at least 4", "t0")
        if self.t1 < 1:
            raise InvalidConfig("t1 must be positive", "t1")
        r = default_r(self.t0) if self.r is None else int(self.r)
        if r < 1:
            raise InvalidConfig("r must be positive", "r")
        k = k_for_mode(r, self.k_mode) if self.k is None else int(self.k)
        # the first group weight is pinned to zero, so one group leaves nothing to draw
        if k < 2:
            raise InvalidConfig(f"k = {k}: need at least two groups", "k")
        if self.j < k:
            raise InvalidConfig(f"cannot place {self.j} controls in {k} groups", "j")
        if self.mode not in (EXACT, APPROXIMATE):
            raise InvalidConfig(f"mode must be {EXACT} or {APPROXIMATE}", "mode")
        if not -1.0 < self.ar_coef < 1.0:
            raise InvalidConfig("AR coefficient must lie in (-1, 1)", "ar_coef")
        sr = math.sqrt(r)
        lv = 3.0 / r if self.loading_var is None else float(self.loading_var)
        l0n = 0.1 / sr if self.lambda0_noise is None else float(self.lambda0_noise)
        gn = 0.2 / sr if self.group_noise is None else float(self.group_noise)
        for name, v in (("loading_var", lv), ("lambda0_noise", l0n), ("group_noise", gn)):
            if not v >= 0:
                raise InvalidConfig(f"{name} must be non-negative", name)
        for name, v in (("r", r), ("k", k), ("loading_var", lv),
                        ("lambda0_noise", l0n), ("group_noise", gn)):
            object.__setattr__(self, name, v)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimulatedInstance:
    panel: PanelData
    oracle: OracleInputs
    w_star_g: np.ndarray
    factors: np.ndarray  # (t0 + t1) x r
    errors: np.ndarray  # (t0 + t1) x (J + 1), idiosyncratic terms, treated first
    loadings: np.ndarray  # J x r, including any group perturbation


def _design(cfg: DgpConfig):
    """Draws held fixed across replications: core loadings, lambda0, group weights, Xi."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    K, r = cfg.k, cfg.r
    lam_co = rng.normal(0.0, math.sqrt(cfg.loading_var), size=(K, r))
    w_g = np.zeros(K)
    w_g[1:] = rng.dirichlet(np.ones(K - 1))
    eps = rng.uniform(-cfg.lambda0_noise, cfg.lambda0_noise, size=r)
    lam0 = lam_co.T @ w_g + eps
    groups = GroupStructure.balanced(cfg.j, K)
    if cfg.mode == APPROXIMATE:
        xi = rng.uniform(-cfg.group_noise, cfg.group_noise, size=(cfg.j, r))
    else:
        xi = np.zeros((cfg.j, r))
    return lam_co, lam0, w_g, groups, xi


def _ar1(rng, n: int, r: int, a: float) -> np.ndarray:
    F = np.empty((n, r))
    F[0] = rng.normal(0.0, 1.0 / math.sqrt(1.0 - a * a), size=r)
    shocks = rng.normal(size=(n, r))
    for t in range(1, n):
        F[t] = a * F[t - 1] + shocks[t]
    return F


def generate_instance(cfg: DgpConfig, rep: int) -> SimulatedInstance:
    lam_co, lam0, w_g, groups, xi = _design(cfg)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(int(rep),)))
    T = cfg.t0 + cfg.t1
    F = _ar1(rng, T, cfg.r, cfg.ar_coef)
    U = rng.normal(size=(T, cfg.j + 1))
    Lam = groups.z @ lam_co + xi
    Y = F @ Lam.T + U[:, 1:]
    y0 = F @ lam0 + U[:, 0]
    panel = PanelData.from_arrays(y0, Y, cfg.t0)
    Fp = F[: cfg.t0]
    omega = Fp.T @ Fp / cfg.t0
    inp = OracleInputs(lam_co, lam0, 0.5 * (omega + omega.T), groups)
    return SimulatedInstance(panel, inp, w_g, F, U, Lam)


def empirical_risk(w, panel: PanelData, window: str = "pre") -> float:
    """Mean squared gap between ``Y w`` and the treated series over one window."""
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != panel.j:
        raise DimensionMismatch(f"{w.shape[0]} weights for {panel.j} controls")
    key = window.lower()
    if key == "pre":
        rows = panel.pre
    elif key == "post":
        rows = panel.post
    else:
        raise ValueError("window must be 'pre' or 'post'")
    if rows.shape[0] == 0:
        raise DimensionMismatch(f"the {key} window is empty")
    gap = rows[:, 1:] @ w - rows[:, 0]
    return float(np.mean(gap * gap))


def normalize_methods(methods) -> tuple[str, ...]:
    out = []
    for m in methods:
        name = METHOD_ALIASES.get(str(m).strip().lower(), str(m).strip())
        if name not in ALL_METHODS:
            raise InvalidConfig(f"unknown method {m!r}", "methods")
        if name not in out:
            out.append(name)
    return tuple(sorted(out, key=ALL_METHODS.index))


def _fit_method(method: str, panel: PanelData, m, grid_size: int):
    """Returns ``(weights used for distances, post-window predictions, info)``."""
    post = panel.post[:, 1:]
    if method == SCM:
        w = solve_scm(m).w
        return w, post @ w, {}
    if method in (LASSO, RIDGE):
        cv = cv_select_lambda(panel, method, grid_size)
        w = solve_penalized(m, method, cv.chosen).w
        return w, post @ w, {"lambda": cv.chosen}
    if method == FSPDA:
        cv = cv_select_terms(panel)
        pre = panel.pre
        fit = fspda_from_arrays(pre[:, 0], pre[:, 1:], int(cv.chosen))
        return fit.coef, fit.predict(post), {"terms": len(fit.selected)}
    d = Divergence(RELAX[method])
    cv = cv_select_eta(panel, d, grid_size)
    sol = solve_relaxation(m, d, cv.chosen, certificate=None)
    return sol.w, post @ sol.w, {"eta": cv.chosen, "converged": sol.status == CONVERGED}


def run_replication(cfg: DgpConfig, rep: int, methods, grid_size: int = DEFAULT_GRID) -> dict:
    """One replication: per-method error and distance ratios relative to SCM."""
    try:
        inst = generate_instance(cfg, rep)
        orc = oracle_weights(inst.oracle)
        panel = inst.panel
        y_star = panel.post[:, 1:] @ orc.w
        m = compute_moments(panel)
        fits = {}
        for meth in sorted(set(methods) | {SCM}, key=ALL_METHODS.index):
            fits[meth] = _fit_method(meth, panel, m, grid_size)
    except ReplicationFailure:
        raise
    except Exception as exc:  # noqa: BLE001 - any failure aborts with its index
        raise ReplicationFailure(rep, exc) from exc

    def stats(w, pred):
        e = w - orc.w
        return (float(np.sum((pred - y_star) ** 2)), float(np.sum(np.abs(e))),
                float(np.sqrt(np.sum(e * e))))

    base = stats(*fits[SCM][:2])
    out = {"rep": rep, "oracle_case": orc.case_tag, "methods": {}}
    for meth in methods:
        s = stats(*fits[meth][:2])
        if meth == SCM:
            ratios = (1.0, 1.0, 1.0)
        else:
            ratios = tuple(_ratio(a, b) for a, b in zip(s, base))
        out["methods"][meth] = {"pred": ratios[0], "l1": ratios[1], "l2": ratios[2],
                                **fits[meth][2]}
    return out


def _ratio(a: float, b: float) -> float:
    if b > 0:
        return a / b
    return 1.0 if a == 0 else math.inf


def _rep_task(args):
    cfg, rep, methods, grid_size = args
    return run_replication(cfg, rep, methods, grid_size)


@dataclass
class ExperimentReport:
    per_method: dict  # method -> {"pred": mean, "l1": mean, "l2": mean}
    n_reps: int
    config: DgpConfig
    methods: tuple[str, ...] = ()
    replications: list = field(default_factory=list)

    def to_dict(self, include_raw: bool = False) -> dict:
        d = {
            "config": self.config.to_dict(),
            "n_reps": self.n_reps,
            "methods": list(self.methods),
            "per_method": self.per_method,
        }
        if include_raw:
            d["replications"] = self.replications
        return d

    def to_json(self, include_raw: bool = False) -> str:
        return json.dumps(self.to_dict(include_raw), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "pred_error_ratio", "l1_distance_ratio", "l2_distance_ratio",
                    "j", "t0", "k", "r", "mode", "n_reps"])
        c = self.config
        for meth in self.methods:
            s = self.per_method[meth]
            w.writerow([meth, repr(s["pred"]), repr(s["l1"]), repr(s["l2"]),
                        c.j, c.t0, c.k, c.r, c.mode, self.n_reps])
        return buf.getvalue()

    def write(self, out_dir, stem: str = "report", include_raw: bool = False) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = [os.path.join(out_dir, stem + ".csv"), os.path.join(out_dir, stem + ".json")]
        with open(paths[0], "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())
        with open(paths[1], "w", encoding="utf-8") as fh:
            fh.write(self.to_json(include_raw))
        return paths


def run_experiment(cfg: DgpConfig, n_reps: int, methods=ALL_METHODS, workers: int = 1,
                   grid_size: int = DEFAULT_GRID) -> ExperimentReport:
    """Means of the per-replication ratios. Any failing replication aborts the run.

    Replications are independent (their random streams depend only on the
    seed and index), so ``workers > 1`` fans them out to processes without
    changing any number in the report.
    """
    if n_reps < 1:
        raise InvalidConfig("n_reps must be positive", "reps")
    methods = normalize_methods(methods)
    if not methods:
        raise InvalidConfig("no methods requested", "methods")
    tasks = [(cfg, rep, methods, grid_size) for rep in range(n_reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_rep_task, tasks, chunksize=1))
    else:
        results = [_rep_task(t) for t in tasks]
    results.sort(key=lambda r: r["rep"])

    per_method = {}
    for meth in methods:
        cols = {k: np.array([r["methods"][meth][k] for r in results]) for k in ("pred", "l1", "l2")}
        per_method[meth] = {k: float(np.mean(v)) for k, v in cols.items()}
    return ExperimentReport(per_method, n_reps, cfg, methods, results)


def sweep_configs(seed: int = 0, mode: str = EXACT, t1: int = 50) -> list[DgpConfig]:
    """All J x T0 x K combinations of the full simulation design."""
    out = []
    for j in SWEEP_J:
        for t0 in (j // 2, j, 2 * j):
            for km in K_MODES:
                out.append(DgpConfig(j=j, t0=t0, t1=t1, k_mode=km, mode=mode, seed=seed))
    return out


def run_full_sweep(n_reps: int, methods=ALL_METHODS, seed: int = 0, mode: str = EXACT,
                   workers: int = 1, grid_size: int = DEFAULT_GRID) -> list[ExperimentReport]:
    return [run_experiment(c, n_reps, methods, workers, grid_size)
            for c in sweep_configs(seed, mode)]


def with_seed(cfg: DgpConfig, seed: int) -> DgpConfig:
    return replace(cfg, seed=seed)
