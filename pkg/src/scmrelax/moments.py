"""Cross-moment inputs for the weight solvers and the equal-weight band radius."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, TooFewPeriods
from .panel import PanelData


@dataclass(frozen=True)
class MomentPair:
    """``sigma_hat = Y'Y / T0`` and ``upsilon_hat = Y'y0 / T0`` over pre-treatment rows."""

    sigma_hat: np.ndarray
    upsilon_hat: np.ndarray
    t0: int
    standardized: bool = False

    def __post_init__(self):
        s = np.array(self.sigma_hat, dtype=float)
        u = np.array(self.upsilon_hat, dtype=float).reshape(-1)
        if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] != u.shape[0]:
            raise DimensionMismatch(f"sigma_hat {s.shape} incompatible with upsilon_hat {u.shape}")
        s = 0.5 * (s + s.T)
        s.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "sigma_hat", s)
        object.__setattr__(self, "upsilon_hat", u)

    @property
    def j(self) -> int:
        return self.upsilon_hat.shape[0]

    def to_json(self) -> str:
        return json.dumps({
            "sigma_hat": self.sigma_hat.tolist(),
            "upsilon_hat": self.upsilon_hat.tolist(),
            "j": self.j,
            "t0": self.t0,
            "standardized": self.standardized,
        })


def moments_from_arrays(y0, Y, standardized: bool = False) -> MomentPair:
    y0 = np.asarray(y0, dtype=float).reshape(-1)
    Y = np.asarray(Y, dtype=float)
    t0 = Y.shape[0]
    if t0 < 2:
        raise TooFewPeriods(f"t0 = {t0} < 2")
    return MomentPair(Y.T @ Y / t0, Y.T @ y0 / t0, t0, standardized)


def compute_moments(panel: PanelData, standardized: bool = False) -> MomentPair:
    pre = panel.pre
    return moments_from_arrays(pre[:, 0], pre[:, 1:], standardized)


def band_residual(m: MomentPair, w, gamma: float) -> np.ndarray:
    """``Sigma w - Upsilon + gamma 1``; the quantity the relaxation bounds in sup-norm."""
    return m.sigma_hat @ np.asarray(w, dtype=float) - m.upsilon_hat + gamma


def eta_bar(m: MomentPair) -> tuple[float, float]:
    """Smallest band radius at which equal weights are feasible, and its shift.

    Returns ``(eta_bar, gamma_star)``. The sup-norm of ``v + gamma`` is
    minimized by centering the range of ``v = Sigma 1/J - Upsilon``.
    """
    v = m.sigma_hat.mean(axis=1) - m.upsilon_hat
    hi, lo = float(v.max()), float(v.min())
    return (hi - lo) / 2.0, -(hi + lo) / 2.0


def moment_scale(m: MomentPair) -> float:
    """Mean diagonal of ``sigma_hat``; the natural unit for band radii."""
    s = float(np.mean(np.diag(m.sigma_hat)))
    return s if s > 0 else 1.0
