"""
mreglab.py — metric regularity probes on the SPD cone

Four maps Phi from SPD(n) to subsets of R are checked against

    d(q, Phi^-1(x)) <= sigma * d(x, Phi(q))

on seeded samples (q, x). The true preimage distance is not computable, so each
map comes with an explicit witness w in Phi^-1(x) and the probe checks
d(q, w) <= sigma * d(x, Phi(q)), which implies the inequality.

Variants:
  "ln_tr"            — Phi(p) = ln tr p
  "inv_tr"           — Phi(p) = 1 / tr p
  "ln_tr_set"        — ln tr p, except Phi(Id/n) = {0} ∪ [1, 2]
  "inv_tr_set"       — 1 / tr p, except Phi(Id) = {1/n} ∪ [2, 3]
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, GenEqError
from .manifold import Chart, ManifoldPoint, dist, sqrtm

logger = logging.getLogger(__name__)

LN_TR = "ln_tr"
INV_TR = "inv_tr"
LN_TR_SET = "ln_tr_set"
INV_TR_SET = "inv_tr_set"
VARIANTS = (LN_TR, INV_TR, LN_TR_SET, INV_TR_SET)

SPECIAL_POINT_TOL = 1e-12
BOUND_SLACK = 1e-10


@dataclass(frozen=True)
class ValueSet:
    """{point} ∪ [interval]; a plain real when `interval` is None."""

    point: float
    interval: Optional[Tuple[float, float]] = None

    def distance(self, x: float) -> float:
        d = abs(x - self.point)
        if self.interval is not None:
            lo, hi = self.interval
            d = min(d, max(lo - x, 0.0, x - hi))
        return d

    def contains(self, x: float, tol: float = 1e-10) -> bool:
        return self.distance(x) <= tol


def _check_variant(variant: str):
    if variant not in VARIANTS:
        raise GenEqError(f"Unknown regularity variant '{variant}' (expected one of {VARIANTS})")


def _special_point(variant: str, n: int) -> Optional[np.ndarray]:
    if variant == LN_TR_SET:
        return np.eye(n) / n
    if variant == INV_TR_SET:
        return np.eye(n)
    return None


def _is_special(variant: str, p: ManifoldPoint) -> bool:
    special = _special_point(variant, p.chart.n)
    return special is not None and float(np.max(np.abs(p.coords - special))) <= SPECIAL_POINT_TOL


def _require_spd(p: ManifoldPoint):
    if p.chart.kind != "spd":
        raise DomainError(f"Regularity maps act on SPD points, got {p.chart}")


def phi_eval(variant: str, p: ManifoldPoint) -> ValueSet:
    _check_variant(variant)
    _require_spd(p)
    n = p.chart.n
    tr = float(np.trace(p.coords))
    if _is_special(variant, p):
        if variant == LN_TR_SET:
            return ValueSet(0.0, (1.0, 2.0))
        return ValueSet(1.0 / n, (2.0, 3.0))
    if variant in (LN_TR, LN_TR_SET):
        return ValueSet(math.log(tr))
    return ValueSet(1.0 / tr)


def preimage_witness(variant: str, x: float, q: ManifoldPoint) -> ManifoldPoint:
    """
    A point w with x ∈ Phi(w):
      ln variants  — e^(x - ln tr q) q
      inv variants — (x tr q)^-1 q, defined for x > 0
    q itself is returned when it already belongs to Phi^-1(x).
    """
    _check_variant(variant)
    _require_spd(q)
    if phi_eval(variant, q).contains(x, 0.0):
        return q
    tr = float(np.trace(q.coords))
    if variant in (LN_TR, LN_TR_SET):
        scale = math.exp(x - math.log(tr))
    else:
        if x <= 0.0:
            raise DomainError(f"No preimage of x={x} under 1/tr")
        scale = 1.0 / (x * tr)
    return ManifoldPoint(q.chart, scale * q.coords)


# ── Probes ───────────────────────────────────────────────────

@dataclass(frozen=True)
class RegularityProbe:
    variant: str
    n: int
    sigma: float
    ball_radius: float
    x_range: Tuple[float, float]
    samples: int = 1000
    seed: int = 0
    center: Optional[np.ndarray] = None

    def __post_init__(self):
        _check_variant(self.variant)
        if self.n < 1:
            raise GenEqError(f"Matrix size must be positive, got {self.n}")
        if not self.sigma > 0.0:
            raise GenEqError(f"sigma must be positive, got {self.sigma}")
        if self.samples < 1:
            raise GenEqError(f"Need at least one sample, got {self.samples}")
        if not self.ball_radius > 0.0:
            raise GenEqError(f"Ball radius must be positive, got {self.ball_radius}")
        lo, hi = self.x_range
        if not lo < hi:
            raise GenEqError(f"Empty x-range {self.x_range}")
        if self.variant in (INV_TR, INV_TR_SET) and lo <= 0.0 <= hi:
            raise GenEqError(f"x-range {self.x_range} must exclude 0 for 1/tr maps")

    def center_point(self) -> ManifoldPoint:
        c = np.eye(self.n) if self.center is None else np.asarray(self.center, dtype=float)
        return ManifoldPoint(Chart.spd(self.n), c)

    def certified(self, x: float) -> bool:
        """x-range on which the set-valued maps are known to be regular."""
        if self.variant == LN_TR_SET:
            return x < 0.5
        if self.variant == INV_TR_SET:
            a, n = self.ball_radius, self.n
            return math.exp(-a) / n < x < min(math.exp(a) / n, 1.0)
        return True


@dataclass
class ProbeReport:
    variant: str
    n: int
    sigma: float
    samples: int
    violations: int = 0
    worst_margin: float = float("-inf")
    tightness: float = 0.0
    excluded: int = 0
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variant": self.variant,
            "n": self.n,
            "sigma": self.sigma,
            "samples": self.samples,
            "violations": self.violations,
            # no certified sample leaves the margin at -inf; JSON gets null
            "worst_margin": self.worst_margin if math.isfinite(self.worst_margin) else None,
            "tightness": self.tightness,
            "excluded": self.excluded,
            "seed": self.seed,
        }


def sample_ball(center: ManifoldPoint, radius: float, count: int,
                rng: np.random.Generator) -> list:
    """
    Log-uniform SPD samples in B_radius(center): q = c^1/2 U e^S U^T c^1/2 with
    S diagonal, S_ii ~ U(-a/sqrt(n), a/sqrt(n)) and U a random orthogonal matrix.
    The center itself comes first.
    """
    n = center.chart.n
    s_half = sqrtm(center.coords)
    bound = radius / math.sqrt(n)
    out = [center]
    for _ in range(count - 1):
        U, _r = np.linalg.qr(rng.standard_normal((n, n)))
        e = np.exp(rng.uniform(-bound, bound, size=n))
        rotated = (U * e) @ U.T
        q = s_half @ rotated @ s_half
        out.append(ManifoldPoint(center.chart, 0.5 * (q + q.T)))
    return out


def eigenvalue_bounds_hold(points: Sequence[ManifoldPoint], a: float) -> bool:
    """Every eigenvalue of every point lies in (e^-a, e^a); meant for points of B_a(Id)."""
    lo, hi = math.exp(-a), math.exp(a)
    for p in points:
        w = np.linalg.eigvalsh(p.coords)
        if float(w.min()) <= lo or float(w.max()) >= hi:
            return False
    return True


def verify_regularity(probe: RegularityProbe) -> ProbeReport:
    """Check the witness inequality on every sample; failures are counted, not raised."""
    rng = np.random.default_rng(probe.seed)
    center = probe.center_point()
    points = sample_ball(center, probe.ball_radius, probe.samples, rng)
    lo, hi = probe.x_range
    report = ProbeReport(probe.variant, probe.n, probe.sigma, probe.samples, seed=probe.seed)

    for q in points:
        x = float(rng.uniform(lo, hi))
        if not probe.certified(x):
            report.excluded += 1
            continue
        gap = phi_eval(probe.variant, q).distance(x)
        d = dist(q, preimage_witness(probe.variant, x, q))
        margin = d - probe.sigma * gap
        report.worst_margin = max(report.worst_margin, margin)
        if margin > BOUND_SLACK:
            report.violations += 1
        if gap > 0.0:
            report.tightness = max(report.tightness, d / (probe.sigma * gap))

    level = logging.WARNING if report.violations else logging.INFO
    logger.log(level, f"[{probe.variant} n={probe.n}] {report.violations} violations over "
                      f"{probe.samples - report.excluded} samples (tightness {report.tightness:.6f})")
    return report


def inv_tr_sigma(n: int, a: float) -> float:
    """sqrt(n) * n e^a: the ln-Lipschitz constant on (e^-a/n, e^a/n) scaled by sqrt(n)."""
    return math.sqrt(n) * n * math.exp(a)
