"""Per-coordinate divergence objectives ``sum_j g(w_j)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainViolation

L2 = "L2"
EL = "EL"
ENTROPY = "Entropy"
CRESSIE_READ = "CressieRead"


@dataclass(frozen=True)
class Divergence:
    """Objective tag. ``cr_gamma`` is only read for the Cressie-Read family."""

    tag: str = L2
    cr_gamma: float | None = None

    def __post_init__(self):
        if self.tag not in (L2, EL, ENTROPY, CRESSIE_READ):
            raise ValueError(f"unknown divergence {self.tag!r}")
        if self.tag == CRESSIE_READ:
            if self.cr_gamma is None or not -1.0 <= self.cr_gamma <= 1.0:
                raise ValueError("Cressie-Read index must lie in [-1, 1]")

    @classmethod
    def cressie_read(cls, gamma: float) -> "Divergence":
        return cls(CRESSIE_READ, float(gamma))

    @classmethod
    def parse(cls, text: str) -> "Divergence":
        """Parse ``l2``, ``el``, ``entropy`` or ``cr:<gamma>``."""
        t = text.strip().lower()
        if t.startswith("cr:"):
            return cls.cressie_read(float(t[3:]))
        names = {"l2": L2, "el": EL, "entropy": ENTROPY}
        if t not in names:
            raise ValueError(f"unknown divergence {text!r}")
        return cls(names[t])

    def resolved(self) -> "Divergence":
        """Dispatch the CR endpoints to their named limits (``-1 -> EL``, ``0 -> Entropy``)."""
        if self.tag == CRESSIE_READ:
            if self.cr_gamma == 0.0:
                return Divergence(ENTROPY)
            if self.cr_gamma == -1.0:
                return Divergence(EL)
        return self

    @property
    def log_domain(self) -> bool:
        """True when the objective is only defined for strictly positive weights."""
        d = self.resolved()
        return d.tag in (EL, ENTROPY) or (d.tag == CRESSIE_READ and d.cr_gamma < 0)

    @property
    def label(self) -> str:
        if self.tag == CRESSIE_READ:
            return f"CR({self.cr_gamma:g})"
        return self.tag

    def to_dict(self) -> dict:
        d = {"tag": self.tag}
        if self.tag == CRESSIE_READ:
            d["cr_gamma"] = self.cr_gamma
        return d


def _check_domain(d: Divergence, w: np.ndarray, strict: bool) -> None:
    bad = np.flatnonzero(w <= 0) if strict else np.flatnonzero(w < 0)
    if bad.size:
        raise DomainViolation(int(bad[0]))


def divergence_value(d: Divergence, w) -> float:
    w = np.asarray(w, dtype=float)
    d = d.resolved()
    if d.tag == L2:
        return float(w @ w)
    if d.tag == EL:
        _check_domain(d, w, strict=True)
        return float(-np.log(w).sum())
    if d.tag == ENTROPY:
        _check_domain(d, w, strict=False)
        pos = w[w > 0]
        return float((pos * np.log(pos)).sum())
    g = d.cr_gamma
    _check_domain(d, w, strict=g < 0)
    return float(((w ** (g + 1.0) - 1.0) / (g * (g + 1.0))).sum())


def divergence_gradient(d: Divergence, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    d = d.resolved()
    if d.tag == L2:
        return 2.0 * w
    if d.tag == EL:
        _check_domain(d, w, strict=True)
        return -1.0 / w
    if d.tag == ENTROPY:
        _check_domain(d, w, strict=True)
        return np.log(w) + 1.0
    g = d.cr_gamma
    _check_domain(d, w, strict=g < 0)
    return w ** g / g


def divergence_hessian_diag(d: Divergence, w) -> np.ndarray:
    """Diagonal of the (separable) Hessian."""
    w = np.asarray(w, dtype=float)
    d = d.resolved()
    if d.tag == L2:
        return np.full_like(w, 2.0)
    if d.tag == EL:
        return 1.0 / (w * w)
    if d.tag == ENTROPY:
        return 1.0 / w
    g = d.cr_gamma
    return w ** (g - 1.0)
