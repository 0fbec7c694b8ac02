"""Comparator estimators: canonical SCM, its unconstrained closed form,
Lasso/Ridge shrunk toward equal weights, and forward-selected PDA."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _ipm
from .errors import InvalidConfig, NumericalFailure, RankDeficientDesign, SingularMoment
from .moments import MomentPair, moment_scale
from .panel import PanelData

LASSO = "Lasso"
RIDGE = "Ridge"

ZERO_SNAP = 1e-10
MAX_ITER = 200
COND_LIMIT = 1e12


@dataclass
class BaselineFit:
    """Weights from a comparator estimator plus solver diagnostics."""

    w: np.ndarray
    method: str
    objective: float
    status: str
    kkt_max_residual: float
    iterations: int = 0
    lam: float | None = None
    nonunique: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "w": self.w.tolist(),
            "gamma": None,
            "eta": None,
            "objective": self.objective,
            "status": self.status,
            "kkt_max_residual": self.kkt_max_residual,
            "method": self.method,
            "lambda": self.lam,
            "nonunique": self.nonunique,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _qp_kkt(Q, c, G, h, A, b, x, z, y) -> float:
    """Max KKT residual of ``min x'Qx/2 + c'x  s.t. Gx <= h, Ax = b`` at ``(x, z, y)``."""
    grad = Q @ x + c
    stat = grad + G.T @ z + A.T @ y
    slack = h - G @ x
    return max(
        float(np.max(np.abs(stat))) / (1.0 + float(np.max(np.abs(grad)))),
        float(max(0.0, -slack.min())),
        float(np.max(np.abs(A @ x - b))),
        float(max(0.0, -z.min())),
        float(np.max(np.abs(z * slack))),
    )


def _simplex_qp(Q, c, tol, extra_G=None, extra_h=None, n_aux=0):
    """Minimize ``x'Qx/2 + c'x`` with the first ``J`` coordinates on the simplex.

    ``n_aux`` trailing variables (e.g. Lasso's absolute-value bounds) are free
    apart from ``extra_G x <= extra_h``.
    """
    n = Q.shape[0]
    J = n - n_aux
    G = np.hstack([-np.eye(J), np.zeros((J, n_aux))])
    h = np.zeros(J)
    if extra_G is not None:
        G = np.vstack([G, extra_G])
        h = np.concatenate([h, extra_h])
    A = np.concatenate([np.ones(J), np.zeros(n_aux)])[None, :]
    b = np.array([1.0])
    x0 = np.concatenate([np.full(J, 1.0 / J), np.ones(n_aux)])
    res = _ipm.solve(lambda x: Q @ x + c, lambda x: Q, G, h, A, b, x0, tol=0.1 * tol,
                     max_iter=MAX_ITER, predictor_corrector=True)
    if not res.converged:
        # the staged barrier is slower but more forgiving on badly scaled inputs
        res = _ipm.solve(lambda x: Q @ x + c, lambda x: Q, G, h, A, b, x0, tol=0.1 * tol,
                         max_iter=MAX_ITER)
    if not res.converged:
        raise NumericalFailure("simplex QP did not converge", res.residuals)
    kkt = _qp_kkt(Q, c, G, h, A, b, res.x, res.z, res.y)
    return _polish(Q, c, G, h, A, b, res, kkt)


def _polish(Q, c, G, h, A, b, res, kkt):
    """Active-set cleanup of an interior-point QP solution.

    When the unconstrained minimizer sits exactly on a face (e.g. a perfect
    pre-treatment fit) strict complementarity fails and the interior iterate
    stalls about sqrt(tol) away from the face. Guess the active rows from
    ``s < z``, solve the equality-constrained KKT system on them, and keep
    the result only if it is feasible and its KKT residual is no worse.
    """
    s = h - G @ res.x
    act = np.flatnonzero(s < res.z)
    n, p, k = Q.shape[0], A.shape[0], act.size
    Ga = G[act]
    K = np.block([
        [Q, Ga.T, A.T],
        [Ga, np.zeros((k, k)), np.zeros((k, p))],
        [A, np.zeros((p, k)), np.zeros((p, p))],
    ])
    rhs = np.concatenate([-c, h[act], b])
    try:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    except np.linalg.LinAlgError:
        return res, kkt
    x = sol[:n]
    z = np.zeros(G.shape[0])
    z[act] = sol[n : n + k]
    y = sol[n + k :]
    if np.min(h - G @ x) < -1e-12 or (k and z[act].min() < -1e-12):
        return res, kkt
    z = np.maximum(z, 0.0)
    new = _qp_kkt(Q, c, G, h, A, b, x, z, y)
    if new <= kkt:
        res.x, res.z, res.y = x, z, y
        return res, new
    return res, kkt


def _finish_weights(x: np.ndarray) -> np.ndarray:
    w = x.copy()
    w[w <= ZERO_SNAP] = 0.0
    return w / w.sum()


def solve_scm(m: MomentPair, tol: float = 1e-8) -> BaselineFit:
    """Synthetic control weights: ``min w'Sigma w - 2 Upsilon'w`` over the simplex.

    When ``Sigma`` is singular the minimizer need not be unique; the
    minimum-norm one is returned and ``nonunique`` is set.
    """
    J = m.j
    sc = moment_scale(m)
    # rescale so the QP tolerances are independent of the outcome units
    Q = 2.0 * m.sigma_hat / sc
    c = -2.0 * m.upsilon_hat / sc
    res, kkt = _simplex_qp(Q, c, tol)
    w = res.x.copy()
    ev = np.linalg.eigvalsh(m.sigma_hat)
    singular = ev[0] <= 1e-12 * max(ev[-1], 1e-300)
    nonunique = False
    if singular:
        w, nonunique = _min_norm_minimizer(m, w, tol)
    w = _finish_weights(w)
    return BaselineFit(
        w=w, method="SCM", objective=float(w @ m.sigma_hat @ w - 2.0 * m.upsilon_hat @ w),
        status="Converged", kkt_max_residual=kkt, iterations=res.iterations, nonunique=nonunique,
    )


def _min_norm_minimizer(m: MomentPair, w1: np.ndarray, tol: float):
    """Smallest-norm point of the SCM solution set ``{w in simplex: Sigma w = Sigma w1}``.

    The fitted values are unique even when the weights are not, so the
    solution set is the simplex slice on which ``Sigma w`` is constant.
    Returns ``(w, nonunique)``; a singular ``Sigma`` is always flagged.
    """
    J = m.j
    ev, V = np.linalg.eigh(m.sigma_hat)
    keep = ev > 1e-12 * ev[-1]
    R = V[:, keep].T
    A = np.vstack([R, np.ones((1, J))])
    b = np.concatenate([R @ w1, [1.0]])
    # drop dependent rows so the KKT matrix stays nonsingular
    U, sv, Vt = np.linalg.svd(A, full_matrices=False)
    k = sv > 1e-11 * sv[0]
    A_r = sv[k, None] * Vt[k]
    b_r = U[:, k].T @ b
    res = _ipm.solve(lambda x: 2.0 * x, lambda x: 2.0 * np.eye(J), -np.eye(J), np.zeros(J),
                     A_r, b_r, np.full(J, 1.0 / J), tol=0.1 * tol, max_iter=MAX_ITER,
                     predictor_corrector=True)
    if not res.converged:
        return w1, True
    G, h = -np.eye(J), np.zeros(J)
    kkt = _qp_kkt(2.0 * np.eye(J), np.zeros(J), G, h, A_r, b_r, res.x, res.z, res.y)
    res, _ = _polish(2.0 * np.eye(J), np.zeros(J), G, h, A_r, b_r, res, kkt)
    return res.x, True


def scm_closed_form_unconstrained(m: MomentPair) -> tuple[np.ndarray, float]:
    """Sum-to-one least-squares weights with nonnegativity dropped, and the implied gamma."""
    S, U = m.sigma_hat, m.upsilon_hat
    if np.linalg.cond(S) > COND_LIMIT:
        raise SingularMoment(f"sigma_hat condition number exceeds {COND_LIMIT:g}")
    one = np.ones(m.j)
    Si_U = np.linalg.solve(S, U)
    Si_1 = np.linalg.solve(S, one)
    gamma = (one @ Si_U - 1.0) / (one @ Si_1)
    return Si_U - gamma * Si_1, float(gamma)


def solve_penalized(m: MomentPair, kind: str, lam: float, tol: float = 1e-8) -> BaselineFit:
    """Simplex-constrained fit penalized toward equal weights.

    Ridge uses ``lam * |w - 1/J|_2^2``. Lasso uses ``lam * |w - 1/J|_1``,
    written exactly with bounds ``t_j >= |w_j - 1/J|`` so the solve is a
    plain QP.
    """
    if kind not in (LASSO, RIDGE):
        raise ValueError(f"unknown penalty {kind!r}")
    if not lam >= 0:
        raise ValueError("lambda must be non-negative")
    J = m.j
    sc = moment_scale(m)
    lam_s = lam / sc
    c0 = np.full(J, 1.0 / J)
    if kind == RIDGE:
        Q = 2.0 * (m.sigma_hat / sc + lam_s * np.eye(J))
        c = -2.0 * (m.upsilon_hat / sc + lam_s * c0)
        res, kkt = _simplex_qp(Q, c, tol)
        x = res.x
        pen = float(np.sum((x - c0) ** 2))
    else:
        Q = np.zeros((2 * J, 2 * J))
        Q[:J, :J] = 2.0 * m.sigma_hat / sc
        c = np.concatenate([-2.0 * m.upsilon_hat / sc, np.full(J, lam_s)])
        I = np.eye(J)
        Ge = np.vstack([np.hstack([I, -I]), np.hstack([-I, -I])])
        he = np.concatenate([c0, -c0])
        res, kkt = _simplex_qp(Q, c, tol, Ge, he, n_aux=J)
        x = res.x[:J]
        pen = float(np.sum(np.abs(x - c0)))
    w = _finish_weights(x)
    obj = float(w @ m.sigma_hat @ w - 2.0 * m.upsilon_hat @ w) + lam * pen
    return BaselineFit(w=w, method=kind, objective=obj, status="Converged",
                       kkt_max_residual=kkt, iterations=res.iterations, lam=float(lam))


@dataclass
class FsPdaFit:
    selected: list[int]  # 0-based control indices, in order of entry
    coef: np.ndarray  # length J, zeros for unselected controls
    intercept: float
    bic_path: list[float]
    rss: float

    def predict(self, controls: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(controls) @ self.coef

    def to_dict(self) -> dict:
        return {
            "selected": [int(i) for i in self.selected],
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "bic_path": self.bic_path,
        }


def _bic(rss: float, t0: int, k: int) -> float:
    if rss <= 0:
        return -math.inf
    return t0 * math.log(rss / t0) + k * math.log(t0)


def solve_fspda(panel: PanelData, max_terms: int, use_bic: bool = True) -> FsPdaFit:
    """Forward-selected panel data approach on the pre-treatment window.

    Each step adds the control that most reduces the OLS residual sum of
    squares (with intercept). Selection stops at ``max_terms`` or once BIC
    stops decreasing; at least one control is always selected.
    """
    pre = panel.pre
    return fspda_from_arrays(pre[:, 0], pre[:, 1:], max_terms, use_bic)


def fspda_from_arrays(y0, Y, max_terms: int, use_bic: bool = True) -> FsPdaFit:
    y0 = np.asarray(y0, dtype=float)
    Y = np.asarray(Y, dtype=float)
    t0, J = Y.shape
    if not 1 <= max_terms <= min(J, t0 - 2):
        raise InvalidConfig(f"max_terms must lie in [1, {min(J, t0 - 2)}]", "max_terms")
    tss = float(np.sum((y0 - y0.mean()) ** 2))
    floor = 1e-14 * max(tss, float(y0 @ y0), 1e-300)

    selected: list[int] = []
    X = np.ones((t0, 1))
    beta = np.array([y0.mean()])
    rss = tss
    bic_path: list[float] = []
    while len(selected) < max_terms:
        best = None
        for j in range(J):
            if j in selected:
                continue
            Xj = np.column_stack([X, Y[:, j]])
            if np.linalg.matrix_rank(Xj) < Xj.shape[1]:
                continue
            b, *_ = np.linalg.lstsq(Xj, y0, rcond=None)
            r = float(np.sum((y0 - Xj @ b) ** 2))
            if best is None or r < best[0] - 1e-15 * max(r, 1.0):
                best = (r, j, b)
        if best is None:
            if not selected:
                raise RankDeficientDesign("every control is collinear with the intercept")
            break
        r, j, b = best
        bic = _bic(r, t0, len(selected) + 1)
        if use_bic and selected and bic >= bic_path[-1]:
            break
        selected.append(j)
        X = np.column_stack([X, Y[:, j]])
        beta, rss = b, max(r, 0.0)
        bic_path.append(bic)
        if rss <= floor:
            break
    coef = np.zeros(J)
    coef[selected] = beta[1:]
    return FsPdaFit(selected, coef, float(beta[0]), bic_path, rss)
