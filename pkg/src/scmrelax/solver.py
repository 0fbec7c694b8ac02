"""g-SCM-relaxation: ``min sum_j g(w_j)`` over the simplex subject to the FOC band.

The band ``|Sigma w - Upsilon + gamma 1|_inf <= eta`` is written as ``2J``
affine inequalities in ``(w, gamma)`` and handed, together with ``w >= 0``
and ``1'w = 1``, to the dense interior-point routine in :mod:`._ipm`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import lsq_linear

from . import _ipm
from .divergences import (
    CRESSIE_READ,
    L2,
    Divergence,
    divergence_gradient,
    divergence_hessian_diag,
    divergence_value,
)
from .errors import InfeasibleRelaxation, NumericalFailure
from .moments import MomentPair, band_residual, eta_bar, moment_scale

CONVERGED = "Converged"
INFEASIBLE = "Infeasible"
MAX_ITERATIONS = "MaxIterations"

DEFAULT_TOL = 1e-8
ZERO_SNAP = 1e-10
MAX_ITER = 300
PD_MAX_ITER = 100
BARRIER_GAP = 1e-6
LP_ACCEPT = 1e-8


@dataclass
class KktReport:
    stationarity: float
    primal_band: float
    primal_simplex: float
    primal_nonneg: float
    dual_feasibility: float
    complementarity: float
    tol: float

    @property
    def max_residual(self) -> float:
        return max(
            self.stationarity,
            self.primal_band,
            self.primal_simplex,
            self.primal_nonneg,
            self.dual_feasibility,
            self.complementarity,
        )

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol

    def to_dict(self) -> dict:
        return {
            "stationarity": self.stationarity,
            "primal_band": self.primal_band,
            "primal_simplex": self.primal_simplex,
            "primal_nonneg": self.primal_nonneg,
            "dual_feasibility": self.dual_feasibility,
            "complementarity": self.complementarity,
            "max_residual": self.max_residual,
        }


@dataclass
class Multipliers:
    band_upper: np.ndarray
    band_lower: np.ndarray
    nonneg: np.ndarray
    simplex: float


@dataclass
class RelaxationSolution:
    w: np.ndarray
    gamma: float
    eta: float
    objective: float
    status: str
    iterations: int
    divergence: Divergence
    multipliers: Multipliers | None = None
    kkt: KktReport | None = None
    raw_w: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "w": self.w.tolist(),
            "gamma": self.gamma,
            "eta": self.eta,
            "objective": self.objective,
            "status": self.status,
            "kkt_max_residual": None if self.kkt is None else self.kkt.max_residual,
            "divergence": self.divergence.label,
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class FeasibilityCertificate:
    """Outcome of ``min s`` over the simplex with band radius ``s``."""

    eta_min: float
    w: np.ndarray
    gamma: float
    converged: bool
    iterations: int
    duality_gap: float

    def feasible(self, eta: float, tol: float = 1e-9) -> bool:
        return eta >= self.eta_min - tol


def _band_system(m: MomentPair):
    J = m.j
    S = m.sigma_hat
    one = np.ones((J, 1))
    return np.hstack([S, one]), np.hstack([-S, -one])


def check_feasibility(m: MomentPair, tol: float = 1e-10) -> FeasibilityCertificate:
    """Smallest band radius ``eta_min`` for which the relaxation is feasible.

    Solved as a linear program in ``(w, gamma, s)`` with the interior-point
    routine; the optimal ``(w, gamma)`` is returned as a witness. The program
    is solved on moments scaled to unit mean diagonal, and ``eta_min`` is
    re-measured from the witness in the original units.
    """
    J = m.j
    sc = moment_scale(m)
    ms = MomentPair(m.sigma_hat / sc, m.upsilon_hat / sc, m.t0)
    up, lo = _band_system(ms)
    col = -np.ones((J, 1))
    G = np.vstack([
        np.hstack([up, col]),
        np.hstack([lo, col]),
        np.hstack([-np.eye(J), np.zeros((J, 2))]),
    ])
    h = np.concatenate([ms.upsilon_hat, -ms.upsilon_hat, np.zeros(J)])
    A = np.concatenate([np.ones(J), [0.0, 0.0]])[None, :]
    b = np.array([1.0])
    eb, g0 = eta_bar(ms)
    x0 = np.concatenate([np.full(J, 1.0 / J), [g0, eb + 1.0]])
    c = np.zeros(J + 2)
    c[-1] = 1.0
    zero_h = np.zeros((J + 2, J + 2))

    def run(pc):
        return _ipm.solve(lambda x: c, lambda x: zero_h, G, h, A, b, x0, tol=tol,
                          max_iter=MAX_ITER, predictor_corrector=pc)

    res = run(True)
    if not res.converged:
        alt = run(False)
        if alt.converged or _worst(alt) < _worst(res):
            res = alt
    # degenerate programs (eta_min = 0, every band face active) can stall just
    # short of tol; the witness is re-measured below, so near-optimal is enough
    if not (res.converged or _worst(res) <= LP_ACCEPT):
        raise NumericalFailure("feasibility program did not converge", res.residuals)
    w = np.clip(res.x[:J], 0.0, None)
    w /= w.sum()
    gamma = float(res.x[J]) * sc
    r = band_residual(m, w, gamma)
    eta_min = float(np.max(np.abs(r)))
    return FeasibilityCertificate(eta_min, w, gamma, res.converged, res.iterations,
                                  float(res.s @ res.z) * sc)


def _worst(res) -> float:
    v = [x for x in res.residuals.values()]
    return max(v) if v and all(np.isfinite(v)) else np.inf


def _objective_callbacks(d: Divergence, J: int):
    n = J + 1

    def grad(x):
        g = np.zeros(n)
        g[:J] = divergence_gradient(d, x[:J])
        return g

    def hess(x):
        H = np.zeros((n, n))
        idx = np.arange(J)
        H[idx, idx] = divergence_hessian_diag(d, x[:J])
        return H

    return grad, hess


def _snaps_to_zero(d: Divergence) -> bool:
    r = d.resolved()
    return r.tag == L2 or (r.tag == CRESSIE_READ and r.cr_gamma > 0)


def _equal_weight_solution(m: MomentPair, d: Divergence, eta: float, tol: float) -> RelaxationSolution:
    J = m.j
    _, g0 = eta_bar(m)
    w = np.full(J, 1.0 / J)
    mult = Multipliers(np.zeros(J), np.zeros(J), np.zeros(J), float(-divergence_gradient(d, w)[0]))
    sol = RelaxationSolution(
        w=w, gamma=g0, eta=eta, objective=divergence_value(d, w), status=CONVERGED,
        iterations=0, divergence=d, multipliers=mult, raw_w=w.copy(),
    )
    sol.kkt = verify_kkt(sol, m, tol)
    return sol


def _interior_start(m: MomentPair, eta: float, cert: FeasibilityCertificate) -> np.ndarray:
    """Point strictly inside the relaxed feasible set when ``eta > eta_min``.

    The band residual is affine in ``(w, gamma)``, so mixing the feasibility
    witness (radius ``eta_min``) with the equal-weight point (radius
    ``eta_bar``) yields radius at most the same mix of the two.
    """
    J = m.j
    eb, g0 = eta_bar(m)
    centre = np.concatenate([np.full(J, 1.0 / J), [g0]])
    if not eta > cert.eta_min:
        return centre
    witness = np.concatenate([cert.w, [cert.gamma]])
    theta = 0.5 * (eta - cert.eta_min) / (eb - cert.eta_min)
    return (1.0 - theta) * witness + theta * centre


def _solve_equality(m: MomentPair, d: Divergence, tol: float, x0: np.ndarray):
    """Band radius zero: the band becomes ``Sigma w + gamma 1 = Upsilon``.

    The stacked equality system is rank-reduced by SVD so the KKT matrix
    stays nonsingular; inconsistent systems are infeasible.
    """
    J = m.j
    up, _ = _band_system(m)
    A_full = np.vstack([up, np.concatenate([np.ones(J), [0.0]])[None, :]])
    b_full = np.concatenate([m.upsilon_hat, [1.0]])
    U, sv, Vt = np.linalg.svd(A_full, full_matrices=False)
    keep = sv > 1e-11 * sv[0]
    Uk = U[:, keep]
    A = sv[keep, None] * Vt[keep]
    b = Uk.T @ b_full
    if np.max(np.abs(Uk @ b - b_full)) > 1e-9 * (1.0 + np.max(np.abs(b_full))):
        return None, None
    G = np.hstack([-np.eye(J), np.zeros((J, 1))])
    h = np.zeros(J)
    grad, hess = _objective_callbacks(d, J)
    res = _ipm.solve(grad, hess, G, h, A, b, x0, tol=tol, max_iter=MAX_ITER, exact_rows=np.arange(J))
    lam = Uk @ res.y  # multipliers of the full stacked system
    return res, lam


def _refit_multipliers(sol: RelaxationSolution, m: MomentPair, tol: float) -> None:
    """Least-squares multipliers on the active set of the returned ``(w, gamma)``.

    When the feasible set is thin (a single point at ``eta = 0``) the dual set
    is unbounded and interior-point multipliers carry leftover mass on
    inactive constraints. Replaced only if the KKT residual improves.
    """
    w = sol.w
    if sol.divergence.log_domain and np.any(w <= 0):
        return
    J = m.j
    S = m.sigma_hat
    r = band_residual(m, w, sol.gamma)
    slack = 1e-9 * moment_scale(m)
    if sol.eta == 0.0:
        act = np.arange(J)
    else:
        act = np.flatnonzero(np.abs(r) >= sol.eta - slack)
    zero = np.flatnonzero(w == 0.0)
    na, nz = len(act), len(zero)
    M = np.zeros((J + 1, na + nz + 1))
    M[:J, :na] = S[:, act]
    M[zero, na + np.arange(nz)] = -1.0
    M[:J, -1] = 1.0
    M[J, :na] = 1.0
    rhs = np.concatenate([-divergence_gradient(sol.divergence, w), [0.0]])
    lo = np.full(na + nz + 1, -np.inf)
    hi = np.full(na + nz + 1, np.inf)
    if sol.eta > 0:
        # upper-band rows (r = +eta) carry nonnegative zb, lower rows nonpositive
        lo[:na] = np.where(r[act] > 0, 0.0, -np.inf)
        hi[:na] = np.where(r[act] > 0, np.inf, 0.0)
    lo[na : na + nz] = 0.0
    x = lsq_linear(M, rhs, bounds=(lo, hi), method="bvls", tol=1e-14).x
    zb = np.zeros(J)
    zb[act] = x[:na]
    nu = np.zeros(J)
    nu[zero] = x[na : na + nz]
    cand = replace(sol, multipliers=Multipliers(np.maximum(zb, 0.0), np.maximum(-zb, 0.0), nu,
                                                float(x[-1])))
    rep = verify_kkt(cand, m, tol)
    if rep.max_residual < sol.kkt.max_residual:
        sol.multipliers, sol.kkt = cand.multipliers, rep


def solve_relaxation(
    m: MomentPair,
    d: Divergence | None = None,
    eta: float = 0.0,
    tol: float = DEFAULT_TOL,
    *,
    certificate: FeasibilityCertificate | None = None,
    x0: np.ndarray | None = None,
    raise_on_infeasible: bool = True,
) -> RelaxationSolution:
    """Minimize ``sum_j g(w_j)`` over ``(w, gamma)`` in the relaxed feasible set.

    ``certificate`` may carry a precomputed :func:`check_feasibility` result
    for the same moments (the cross-validation loop reuses one per fold).
    ``x0`` overrides the default start ``(1/J, gamma*)``.
    """
    d = Divergence() if d is None else d
    if eta < 0:
        raise ValueError("eta must be non-negative")
    if not 0 < tol <= 1e-2:
        raise ValueError("tol must lie in (0, 1e-2]")
    J = m.j
    eb, g0 = eta_bar(m)
    if eta >= eb:
        return _equal_weight_solution(m, d, eta, tol)

    if certificate is None:
        certificate = check_feasibility(m)
    # the feasibility program is only solved to LP_ACCEPT in unit-diagonal scale
    sc = moment_scale(m)
    if not certificate.feasible(eta, tol=10.0 * LP_ACCEPT * sc):
        if raise_on_infeasible:
            raise InfeasibleRelaxation(
                f"band radius {eta:.6g} is below the feasibility threshold {certificate.eta_min:.6g}",
                certificate,
            )
        w = certificate.w.copy()
        return RelaxationSolution(
            w=w, gamma=certificate.gamma, eta=eta, objective=float("nan"), status=INFEASIBLE,
            iterations=0, divergence=d, raw_w=w, diagnostics={"eta_min": certificate.eta_min},
        )

    # solve on unit-diagonal moments so every internal tolerance is scale free;
    # w is unchanged, gamma and the band multipliers are mapped back below
    m_orig, cert_orig, eta_orig = m, certificate, eta
    m = MomentPair(m.sigma_hat / sc, m.upsilon_hat / sc, m.t0, m.standardized)
    eta = eta / sc
    certificate = replace(certificate, eta_min=certificate.eta_min / sc, gamma=certificate.gamma / sc)
    if x0 is not None:
        x0 = np.array(x0, dtype=float)
        x0[J] /= sc

    strict = x0 is None and eta > certificate.eta_min
    if x0 is None:
        x0 = _interior_start(m, eta, certificate)
    inner_tol = 0.1 * tol

    if eta == 0.0:
        res, lam = _solve_equality(m, d, inner_tol, x0)
        if res is None:
            raise InfeasibleRelaxation("exact first-order condition is inconsistent", certificate)
        band = lam[:J]
        mult = Multipliers(np.maximum(band, 0.0), np.maximum(-band, 0.0), res.z.copy(), float(lam[J]))
    else:
        up, lo = _band_system(m)
        G = np.vstack([up, lo, np.hstack([-np.eye(J), np.zeros((J, 1))])])
        h = np.concatenate([eta + m.upsilon_hat, eta - m.upsilon_hat, np.zeros(J)])
        A = np.concatenate([np.ones(J), [0.0]])[None, :]
        grad, hess = _objective_callbacks(d, J)
        exact = np.arange(3 * J) if strict else np.arange(2 * J, 3 * J)
        res = _ipm.solve(grad, hess, G, h, A, np.array([1.0]), x0, tol=inner_tol,
                         max_iter=PD_MAX_ITER, exact_rows=exact)
        if not res.converged and strict:
            # thin feasible set: fall back to the monotone primal barrier
            fun = lambda x: divergence_value(d, x[:J])  # noqa: E731
            pre = _ipm.solve_barrier(fun, grad, hess, G, h, A, np.array([1.0]), x0,
                                     tol=BARRIER_GAP, max_iter=MAX_ITER)
            res = _ipm.solve(grad, hess, G, h, A, np.array([1.0]), x0, tol=inner_tol,
                             max_iter=PD_MAX_ITER, warm=pre)
            res.iterations += pre.iterations
        z = res.z
        mult = Multipliers(z[:J].copy(), z[J : 2 * J].copy(), z[2 * J :].copy(), float(res.y[0]))

    raw = res.x[:J].copy()
    w = raw.copy()
    if _snaps_to_zero(d):
        w[w <= ZERO_SNAP] = 0.0
    w = np.clip(w, 0.0, None) if _snaps_to_zero(d) else w
    gamma = float(res.x[J]) * sc
    mult.band_upper /= sc
    mult.band_lower /= sc
    sol = RelaxationSolution(
        w=w, gamma=gamma, eta=eta_orig, objective=divergence_value(d, w),
        status=CONVERGED if res.converged else MAX_ITERATIONS,
        iterations=res.iterations, divergence=d, multipliers=mult, raw_w=raw,
        diagnostics={"ipm_residuals": res.residuals, "eta_min": cert_orig.eta_min},
    )
    sol.kkt = verify_kkt(sol, m_orig, tol)
    if not sol.kkt.passed:
        _refit_multipliers(sol, m_orig, tol)
    # the internal target is tighter than tol; the contract is the KKT check
    sol.status = CONVERGED if sol.kkt.passed else MAX_ITERATIONS
    return sol


def verify_kkt(sol: RelaxationSolution, m: MomentPair, tol: float = DEFAULT_TOL) -> KktReport:
    """Recompute every KKT residual of the relaxation from ``(w, gamma)`` and the multipliers.

    Stationarity is scaled by ``1 + max|g'(w)|`` so the log-domain objectives,
    whose gradients grow like ``J``, are judged on the same footing as L2.
    Band violations are measured in units of the mean diagonal of ``Sigma``;
    complementarity is already scale free.
    """
    w = np.asarray(sol.w, dtype=float)
    d = sol.divergence
    mu = sol.multipliers
    S = m.sigma_hat
    r = band_residual(m, w, sol.gamma)
    eta = sol.eta

    if d.log_domain and np.any(w <= 0):
        grad = np.full_like(w, np.inf)
    else:
        grad = divergence_gradient(d, w)
    zb = mu.band_upper - mu.band_lower
    stat_w = grad + S @ zb - mu.nonneg + mu.simplex
    stat_g = float(np.sum(zb)) * moment_scale(m)  # same units as the Sigma zb term
    stationarity = max(float(np.max(np.abs(stat_w))), abs(stat_g)) / (1.0 + float(np.max(np.abs(grad))))

    primal_band = float(max(0.0, np.max(np.abs(r)) - eta)) / moment_scale(m)
    primal_simplex = abs(float(w.sum()) - 1.0)
    primal_nonneg = float(max(0.0, -np.min(w)))
    dual_feas = float(max(0.0, -min(mu.band_upper.min(), mu.band_lower.min(), mu.nonneg.min())))
    comp = float(np.max(np.abs(mu.nonneg * w)))
    if eta > 0:  # at eta = 0 the band is an equality and its multiplier has no sign
        comp = max(comp, float(np.max(np.abs(mu.band_upper * (eta - r)))),
                   float(np.max(np.abs(mu.band_lower * (eta + r)))))
    return KktReport(stationarity, primal_band, primal_simplex, primal_nonneg, dual_feas, comp, tol)
