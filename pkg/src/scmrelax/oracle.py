"""Oracle weights under a known latent group structure.

Controls share loadings within groups, ``Lambda = Z Lambda_co``. Noiseless
moments are then ``Sigma* = Z Sigma_co Z'`` and ``Upsilon* = Z Upsilon_co``
with ``Sigma_co = Lambda_co Omega_F Lambda_co'`` and
``Upsilon_co = Lambda_co Omega_F lambda0``; the oracle is the
minimum-divergence point of the exact (``eta = 0``) relaxation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .divergences import L2, Divergence
from .errors import (
    BoundaryOracle,
    DimensionMismatch,
    InfeasibleOracle,
    InfeasibleRelaxation,
    InvalidConfig,
    RankDeficient,
    SingularCore,
)
from .moments import MomentPair
from .panel import PanelData
from .solver import CONVERGED, check_feasibility, solve_relaxation

CASE_K_LE_R = "K<=r"
CASE_IN_COL = "K>r:in-col"
CASE_NOT_IN_COL = "K>r:not-in-col"
NEAR_SUFFIX = ":near-boundary"

COL_TOL = 1e-8
PINV_CUTOFF = 1e-12
NEG_TOL = 1e-10


@dataclass(frozen=True)
class GroupStructure:
    """``membership[j]`` is the 1-based group of control ``j``."""

    membership: tuple[int, ...]
    k: int

    def __post_init__(self):
        mem = tuple(int(g) for g in self.membership)
        object.__setattr__(self, "membership", mem)
        if self.k < 1:
            raise InvalidConfig("need at least one group", "k")
        if any(g < 1 or g > self.k for g in mem):
            raise InvalidConfig("group labels must lie in 1..k", "membership")
        sizes = np.bincount(np.asarray(mem) - 1, minlength=self.k)
        if np.any(sizes == 0):
            raise InvalidConfig("every group must be nonempty", "membership")

    @property
    def j(self) -> int:
        return len(self.membership)

    @property
    def z(self) -> np.ndarray:
        Z = np.zeros((self.j, self.k))
        Z[np.arange(self.j), np.asarray(self.membership) - 1] = 1.0
        return Z

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(np.asarray(self.membership) - 1, minlength=self.k).astype(float)

    @classmethod
    def balanced(cls, j: int, k: int) -> "GroupStructure":
        """Near-equal group sizes, remainder to the first groups."""
        if k < 1 or j < k:
            raise InvalidConfig(f"cannot split {j} units into {k} nonempty groups", "k")
        base, extra = divmod(j, k)
        mem = []
        for g in range(k):
            mem += [g + 1] * (base + (1 if g < extra else 0))
        return cls(tuple(mem), k)


@dataclass(frozen=True)
class OracleInputs:
    lambda_co: np.ndarray  # K x r
    lambda0: np.ndarray  # r
    omega_f_hat: np.ndarray  # r x r
    groups: GroupStructure

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.lambda_co, dtype=float))
        l0 = np.asarray(self.lambda0, dtype=float).reshape(-1)
        Om = np.atleast_2d(np.asarray(self.omega_f_hat, dtype=float))
        object.__setattr__(self, "lambda_co", L)
        object.__setattr__(self, "lambda0", l0)
        object.__setattr__(self, "omega_f_hat", Om)
        K, r = L.shape
        if K != self.groups.k:
            raise DimensionMismatch(f"lambda_co has {K} rows for {self.groups.k} groups")
        if l0.shape[0] != r or Om.shape != (r, r):
            raise DimensionMismatch("lambda0 / omega_f_hat do not match the factor count")
        if not np.allclose(Om, Om.T, rtol=1e-10, atol=1e-12):
            raise InvalidConfig("omega_f_hat must be symmetric", "omega_f_hat")
        if np.linalg.eigvalsh(Om)[0] <= 1e-12:
            raise InvalidConfig("omega_f_hat must be positive definite", "omega_f_hat")
        sv = np.linalg.svd(L, compute_uv=False)
        if np.sum(sv > 1e-10) < min(K, r):
            raise RankDeficient(f"rank(lambda_co) < min(K, r) = {min(K, r)}")

    @property
    def k(self) -> int:
        return self.lambda_co.shape[0]

    @property
    def r(self) -> int:
        return self.lambda_co.shape[1]

    def core_moments(self) -> tuple[np.ndarray, np.ndarray]:
        L, Om = self.lambda_co, self.omega_f_hat
        return L @ Om @ L.T, L @ Om @ self.lambda0

    def exact_moments(self, t0: int = 1) -> MomentPair:
        Z = self.groups.z
        S, U = self.core_moments()
        return MomentPair(Z @ S @ Z.T, Z @ U, t0)

    def to_json_dict(self) -> dict:
        return {
            "lambda_co": self.lambda_co.tolist(),
            "lambda0": self.lambda0.tolist(),
            "omega_f_hat": self.omega_f_hat.tolist(),
            "membership": list(self.groups.membership),
            "k": self.groups.k,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "OracleInputs":
        L = np.asarray(d["lambda_co"], dtype=float)
        k = int(d.get("k", L.shape[0]))
        return cls(L, np.asarray(d["lambda0"]), np.asarray(d["omega_f_hat"]),
                   GroupStructure(tuple(d["membership"]), k))


@dataclass
class OracleWeights:
    w: np.ndarray
    w_group: np.ndarray
    gamma: float | None
    case_tag: str
    pinned_groups: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "w_star": self.w.tolist(),
            "w_star_group": self.w_group.tolist(),
            "gamma_star": self.gamma,
            "case_tag": self.case_tag,
            "pinned_groups": list(self.pinned_groups),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _pinv(A: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(A, rcond=PINV_CUTOFF)


def _expand(groups: GroupStructure, w_group: np.ndarray) -> np.ndarray:
    """Per-unit weights ``Z (Z'Z)^{-1} w_G``: each group's total split evenly."""
    Z = groups.z
    return Z @ (w_group / groups.sizes)


def oracle_weights_l2(inp: OracleInputs) -> OracleWeights:
    """Closed-form L2 oracle, valid while the solution is interior.

    ``K <= r``: ``Sigma_co`` is invertible and the reduced band equation
    gives ``w_G`` directly. ``K > r``: if ``1_K`` is in the column space of
    ``Lambda_co`` the shift is pinned by ``d = pinv(Lambda_co) 1_K``;
    otherwise the band equation forces ``gamma = 0`` and ``w_G`` is the
    ``(Z'Z)^{-1}``-weighted minimum-norm solution of ``Lambda_co' w_G = lambda0``,
    ``1'w_G = 1``.
    """
    L, l0, Om = inp.lambda_co, inp.lambda0, inp.omega_f_hat
    K, r = L.shape
    ZtZ = np.diag(inp.groups.sizes)
    one = np.ones(K)

    if K <= r:
        S, U = inp.core_moments()
        if np.linalg.cond(S) > 1e12:
            raise SingularCore("Sigma_co is not invertible")
        Si_U = np.linalg.solve(S, U)
        Si_1 = np.linalg.solve(S, one)
        gamma = float((one @ Si_U - 1.0) / (one @ Si_1))
        w_group = Si_U - gamma * Si_1
        tag = CASE_K_LE_R
    else:
        d = _pinv(L) @ one
        resid = np.linalg.norm(L @ d - one) / np.linalg.norm(one)
        Om_inv = np.linalg.inv(Om)
        if resid <= COL_TOL:
            gamma = float((d @ l0 - 1.0) / (d @ Om_inv @ d))
            rhs = l0 - gamma * (Om_inv @ d)
            w_group = ZtZ @ L @ np.linalg.solve(L.T @ ZtZ @ L, rhs)
            tag = CASE_IN_COL
        else:
            C = np.vstack([L.T, one])
            rhs = np.concatenate([l0, [1.0]])
            w_group = ZtZ @ C.T @ np.linalg.solve(C @ ZtZ @ C.T, rhs)
            gamma = 0.0
            tag = CASE_NOT_IN_COL
        if 1e-3 * COL_TOL < resid < 1e3 * COL_TOL:
            tag += NEAR_SUFFIX

    w = _expand(inp.groups, w_group)
    if np.any(w < -NEG_TOL):
        raise BoundaryOracle(
            f"closed-form oracle has negative group weight (min {w_group.min():.3g})", w_group
        )
    return OracleWeights(w, w_group, gamma, tag)


def _group_totals(groups: GroupStructure, w: np.ndarray) -> np.ndarray:
    return groups.z.T @ w


def _symmetrize(groups: GroupStructure, w: np.ndarray) -> np.ndarray:
    # exact within-group averaging; the solve is symmetric up to rounding
    return _expand(groups, _group_totals(groups, w))


def oracle_weights_g(inp: OracleInputs, d: Divergence | None = None, tol: float = 1e-9) -> OracleWeights:
    """Numeric oracle for any divergence: exact relaxation on noiseless moments."""
    d = Divergence() if d is None else d
    m = inp.exact_moments()
    try:
        sol = solve_relaxation(m, d, 0.0, tol)
    except InfeasibleRelaxation as exc:
        raise InfeasibleOracle("lambda0 cannot be reproduced by nonnegative group weights") from exc
    w = _symmetrize(inp.groups, sol.w)
    wg = _group_totals(inp.groups, w)
    pinned = tuple(int(k + 1) for k in np.flatnonzero(wg <= 1e-8))
    tag = "numeric" if sol.status == CONVERGED else "numeric:" + sol.status
    return OracleWeights(w, wg, sol.gamma, tag, pinned)


def oracle_weights_nearest(inp: OracleInputs, d: Divergence | None = None, tol: float = 1e-9,
                           margin: float = 1e-8) -> OracleWeights:
    """Oracle when the exact program is infeasible: smallest feasible band.

    Solves at ``eta = eta_min* + margin`` on the noiseless moments, the
    closest the simplex can get to reproducing ``lambda0``.
    """
    d = Divergence() if d is None else d
    m = inp.exact_moments()
    cert = check_feasibility(m)
    scale = 1.0 + float(np.max(np.abs(m.upsilon_hat)))
    eta = cert.eta_min + margin * scale
    sol = solve_relaxation(m, d, eta, tol, certificate=cert)
    w = _symmetrize(inp.groups, sol.w)
    wg = _group_totals(inp.groups, w)
    pinned = tuple(int(k + 1) for k in np.flatnonzero(wg <= 1e-8))
    return OracleWeights(w, wg, sol.gamma, f"nearest(eta={eta:.3g})", pinned)


def oracle_weights(inp: OracleInputs) -> OracleWeights:
    """L2 oracle with fallbacks: closed form, then exact numeric, then nearest feasible."""
    try:
        return oracle_weights_l2(inp)
    except BoundaryOracle:
        pass
    try:
        return oracle_weights_g(inp, Divergence(L2))
    except InfeasibleOracle:
        return oracle_weights_nearest(inp, Divergence(L2))


def oracle_counterfactual(w_star, panel: PanelData) -> np.ndarray:
    """``sum_j w*_j y_jt`` over the post-treatment periods."""
    w = np.asarray(w_star, dtype=float).reshape(-1)
    if w.shape[0] != panel.j:
        raise DimensionMismatch(f"{w.shape[0]} weights for {panel.j} controls")
    return panel.post[:, 1:] @ w
