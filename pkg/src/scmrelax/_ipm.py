"""Dense primal-dual interior-point method for smooth convex programs.

Solves ``min f(x)  s.t.  G x <= h,  A x = b`` with an infeasible start
(slacks ``s`` with ``G x + s = h``) and Mehrotra predictor-corrector steps.
``f`` only needs to be defined where the inequality slacks are positive; the
callers encode every domain restriction (``w >= 0``) as a row of ``G`` so the
fraction-to-boundary rule keeps iterates inside it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

FRACTION_TO_BOUNDARY = 0.995
CENTERING_TOL = 1e-10


@dataclass
class IpmResult:
    x: np.ndarray
    s: np.ndarray
    z: np.ndarray
    y: np.ndarray
    converged: bool
    iterations: int
    residuals: dict = field(default_factory=dict)


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _equilibration(K: np.ndarray) -> np.ndarray:
    """Symmetric diagonal scaling that brings every row of ``K`` to unit max-norm."""
    r = np.max(np.abs(K), axis=1)
    r[r == 0] = 1.0
    return 1.0 / np.sqrt(r)


def _lu(K: np.ndarray):
    # an exactly singular pivot means the Newton system has no unique step
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            return sla.lu_factor(K, check_finite=True)
        except sla.LinAlgWarning as exc:
            raise np.linalg.LinAlgError(str(exc)) from None


def _scaled_solve(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    D = _equilibration(K)
    return D * sla.lu_solve(_lu(K * D[:, None] * D[None, :]), D * rhs)


def _healthy(x, s, z, y) -> bool:
    return bool(
        np.all(np.isfinite(x)) and np.all(np.isfinite(y))
        and np.all(s > 0) and np.all(z > 0) and np.all(np.isfinite(s * z))
    )


def _residuals(grad, G, h, A, b, x, s, z, y):
    r_d = grad + G.T @ z + (A.T @ y if A.shape[0] else 0.0)
    r_p = A @ x - b if A.shape[0] else np.zeros(0)
    r_i = G @ x + s - h
    return r_d, r_p, r_i


def solve(
    grad: Callable[[np.ndarray], np.ndarray],
    hess: Callable[[np.ndarray], np.ndarray],
    G: np.ndarray,
    h: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    x0: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 200,
    z0: float = 1.0,
    exact_rows: np.ndarray | None = None,
    predictor_corrector: bool = False,
    max_inner: int = 50,
    barrier_factor: float = 10.0,
    warm: IpmResult | None = None,
) -> IpmResult:
    """Run the interior-point iteration from ``x0``.

    ``hess(x)`` returns the dense Hessian of ``f``. Convergence requires the
    dual, equality and inequality residuals and the largest complementarity
    product all below ``tol`` (dual residual relative to ``1 + |grad|``).

    Rows listed in ``exact_rows`` must be strictly satisfied at ``x0``; their
    slacks start at the true slack so the rows are never violated.

    With ``predictor_corrector`` (safe for linear and quadratic objectives) the
    centering parameter follows Mehrotra's heuristic. Otherwise the barrier
    parameter is held fixed for up to ``max_inner`` damped Newton steps and
    divided by ``barrier_factor`` once the perturbed KKT system is solved to
    within the current barrier level. ``max_iter`` bounds the Newton steps.

    ``warm`` supplies a strictly interior ``(x, s, z, y)`` (typically from
    :func:`solve_barrier`) to start from instead of ``x0``.
    """
    n = x0.shape[0]
    m = G.shape[0]
    p = A.shape[0]
    x = x0.astype(float).copy()
    slack = h - G @ x
    scale = 1.0 + float(np.max(np.abs(slack))) if m else 1.0
    s = np.maximum(slack, 1e-2 * scale)
    if exact_rows is not None:
        if np.any(slack[exact_rows] <= 0):
            raise ValueError("x0 violates a row that must stay strictly feasible")
        s[exact_rows] = slack[exact_rows]
    z = np.full(m, z0)
    if m and exact_rows is not None and exact_rows.shape[0] == m:
        # strictly feasible start: begin on the central path
        z = z0 * float(np.mean(s)) / s
    y = np.zeros(p)
    if warm is not None:
        x, s, z, y = (np.array(v, dtype=float) for v in (warm.x, warm.s, warm.z, warm.y))

    def kkt_norms(gx, r_d, r_p, r_i):
        return {
            "dual": float(np.max(np.abs(r_d))) / (1.0 + float(np.max(np.abs(gx)))) if n else 0.0,
            "equality": float(np.max(np.abs(r_p))) if p else 0.0,
            "inequality": float(np.max(np.abs(r_i))) if m else 0.0,
            "complementarity": float(np.max(s * z)) if m else 0.0,
        }

    def done(res):
        return max(res.values()) <= tol

    def newton(gx, r_d, r_p, r_i):
        d = z / s
        M = hess(x) + (G.T * d) @ G
        K = np.block([[M, A.T], [A, np.zeros((p, p))]]) if p else M
        D = _equilibration(K)
        lu = _lu(K * D[:, None] * D[None, :])

        def direction(r_c):
            t = (-r_c + z * r_i) / s
            rhs_x = -r_d - G.T @ t
            rhs = np.concatenate([rhs_x, -r_p]) if p else rhs_x
            sol = D * sla.lu_solve(lu, D * rhs)
            dx = sol[:n]
            Gdx = G @ dx
            return dx, -r_i - Gdx, t + d * Gdx, sol[n:]

        return direction

    def boundary_step(ds, dz):
        return min(1.0, FRACTION_TO_BOUNDARY * min(_max_step(s, ds), _max_step(z, dz)))

    total = 0
    res = {}
    if predictor_corrector:
        for total in range(max_iter + 1):
            gx = grad(x)
            r_d, r_p, r_i = _residuals(gx, G, h, A, b, x, s, z, y)
            res = kkt_norms(gx, r_d, r_p, r_i)
            if done(res):
                return IpmResult(x, s, z, y, True, total, res)
            if total == max_iter:
                break
            try:
                direction = newton(gx, r_d, r_p, r_i)
            except (ValueError, np.linalg.LinAlgError):
                break
            mu = float(s @ z) / m
            try:
                dx, ds, dz, dy = direction(s * z)
                a_aff = min(_max_step(s, ds), _max_step(z, dz))
                mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / m
                sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
                dx, ds, dz, dy = direction(s * z + ds * dz - sigma * mu)
            except (ValueError, np.linalg.LinAlgError):
                break
            alpha = boundary_step(ds, dz)
            xn, sn, zn, yn = x + alpha * dx, s + alpha * ds, z + alpha * dz, y + alpha * dy
            if not _healthy(xn, sn, zn, yn):
                break
            x, s, z, y = xn, sn, zn, yn
        return IpmResult(x, s, z, y, False, total, res)

    def merit(x_, s_, z_, y_, mu):
        r_d, r_p, r_i = _residuals(grad(x_), G, h, A, b, x_, s_, z_, y_)
        return float(r_d @ r_d + r_p @ r_p + r_i @ r_i + np.sum((s_ * z_ - mu) ** 2))

    mu = max(float(s @ z) / m, tol) if m else 0.0
    while total < max_iter:
        for _ in range(max_inner):
            if total >= max_iter:
                break
            gx = grad(x)
            r_d, r_p, r_i = _residuals(gx, G, h, A, b, x, s, z, y)
            res = kkt_norms(gx, r_d, r_p, r_i)
            if done(res):
                return IpmResult(x, s, z, y, True, total, res)
            inner = max(res["dual"], res["equality"], res["inequality"],
                        float(np.max(np.abs(s * z - mu))) if m else 0.0)
            if inner <= max(mu, 0.1 * tol):
                break
            try:
                direction = newton(gx, r_d, r_p, r_i)
                dx, ds, dz, dy = direction(s * z - mu)
            except (ValueError, np.linalg.LinAlgError):
                return IpmResult(x, s, z, y, False, total, res)
            alpha = boundary_step(ds, dz)
            phi0 = merit(x, s, z, y, mu)
            for _ls in range(30):
                xn, sn, zn, yn = x + alpha * dx, s + alpha * ds, z + alpha * dz, y + alpha * dy
                try:
                    phi = merit(xn, sn, zn, yn, mu)
                except (ValueError, FloatingPointError, ArithmeticError):
                    phi = np.inf
                if np.isfinite(phi) and phi <= (1.0 - 1e-4 * alpha) * phi0:
                    break
                alpha *= 0.5
            if not _healthy(xn, sn, zn, yn):
                return IpmResult(x, s, z, y, False, total, res)
            x, s, z, y = xn, sn, zn, yn
            total += 1
        mu = max(mu / barrier_factor, 0.1 * tol / barrier_factor)
    return IpmResult(x, s, z, y, False, total, res)


def solve_barrier(
    fun: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    hess: Callable[[np.ndarray], np.ndarray],
    G: np.ndarray,
    h: np.ndarray,
    A: np.ndarray,
    b: np.ndarray,
    x0: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 500,
    barrier_factor: float = 10.0,
) -> IpmResult:
    """Primal log-barrier method from a strictly feasible ``x0``.

    Slower than :func:`solve` on easy problems but every step decreases
    ``t f(x) - sum log(h - G x)``, so it copes with thin feasible sets where
    the primal-dual merit stalls. Duals are read off the central path
    (``z = 1 / (t s)``). Stops once the gap ``m / t`` and the centering
    decrement are both below ``tol``.
    """
    n, m, p = x0.shape[0], G.shape[0], A.shape[0]
    x = x0.astype(float).copy()
    s = h - G @ x
    if np.any(s <= 0):
        raise ValueError("barrier start must be strictly feasible")
    if p and np.max(np.abs(A @ x - b)) > 1e-9:
        raise ValueError("barrier start violates the equality constraints")

    def newton(gx, H):
        K = np.block([[H, A.T], [A, np.zeros((p, p))]]) if p else H
        sol = _scaled_solve(K, np.concatenate([-gx, np.zeros(p)]))
        return sol[:n], sol[n:]

    # scale t so objective and barrier gradients are comparable at the start
    g0, d0 = grad(x), G.T @ (1.0 / s)
    if p:
        Q = sla.orth(A.T)
        g0, d0 = g0 - Q @ (Q.T @ g0), d0 - Q @ (Q.T @ d0)
    gg = float(g0 @ g0)
    t = -float(g0 @ d0) / gg if gg > 0 else 1.0
    t = float(np.clip(t, 1e-2, 1e4)) if np.isfinite(t) and t > 0 else 1.0

    total = 0
    nu = np.zeros(p)
    res: dict = {}
    converged = False
    while total < max_iter:
        inv = 1.0 / s
        gx = grad(x)
        gphi = t * gx + G.T @ inv
        H = t * hess(x) + (G.T * inv**2) @ G
        try:
            dx, nu = newton(gphi, H)
        except (ValueError, np.linalg.LinAlgError):
            break
        dec = float(-gphi @ dx)
        gap = m / t
        res = {"gap": gap, "decrement": dec}
        if dec / 2.0 <= CENTERING_TOL:
            if gap <= tol:
                converged = True
                break
            t *= barrier_factor
            continue
        Gdx = G @ dx
        alpha = 1.0
        neg = Gdx > 0
        if np.any(neg):
            alpha = min(1.0, 0.99 * float(np.min(s[neg] / Gdx[neg])))
        if dec < 1e-2:
            # quadratic region: phi is too large in magnitude for an Armijo
            # test to resolve the decrease, so take the (boundary-safe) step
            x = x + alpha * dx
            s = h - G @ x
            total += 1
            continue
        phi0 = t * fun(x) - float(np.sum(np.log(s)))
        for _ls in range(60):
            xn = x + alpha * dx
            sn = h - G @ xn
            if np.all(sn > 0):
                try:
                    phi = t * fun(xn) - float(np.sum(np.log(sn)))
                except (ValueError, ArithmeticError):
                    phi = np.inf
                if phi <= phi0 - 0.25 * alpha * dec:
                    break
            alpha *= 0.5
        else:
            total += 1
            # no further decrease representable: treat as centred
            if gap <= tol:
                converged = True
                break
            t *= barrier_factor
            continue
        x, s = xn, sn
        total += 1
    z = 1.0 / (t * s)
    # least-squares multiplier for the equalities at the final point
    r = grad(x) + G.T @ z
    y = -np.linalg.lstsq(A.T, r, rcond=None)[0] if p else np.zeros(0)
    return IpmResult(x, s, z, y, converged, total, res)
