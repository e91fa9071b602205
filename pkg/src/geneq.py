"""
geneq.py — generalized equations f(p) + F(p) ∋ 0

A problem couples a smooth map f (value plus frame-based gradients) with a
structured set-valued part F:

  "zero"        — F(p) = {0}
  "neg_orthant" — F = -K with K = R_-^s x {0}^{m-s}  (s inequality rows first)
  "kkt"         — complementarity slots: F(p, mu) = {y >= 0 : mu_i y_i = 0} on the
                  slot rows and {0} elsewhere; empty when some mu_i < 0

Points of a problem carry multipliers (ProductPoint), so KKT systems live on
the product M x R^k with the 2-norm product metric.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, GenEqError, InfeasibleMultiplierError
from .manifold import (
    ANTIPODAL_TOL,
    Chart,
    FrameField,
    ManifoldPoint,
    TangentVector,
    dist,
    exp_map,
    frame_at,
    inner,
)

logger = logging.getLogger(__name__)

FD_STEP = 1e-6

ZERO = "zero"
NEG_ORTHANT = "neg_orthant"
KKT = "kkt"


# ── Points with multipliers ──────────────────────────────────

@dataclass(frozen=True, eq=False)
class ProductPoint:
    """A manifold point together with its (possibly empty) multiplier vector."""

    point: ManifoldPoint
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def chart(self) -> Chart:
        return self.point.chart


def product_dist(x: ProductPoint, y: ProductPoint) -> float:
    """sqrt(d(p, q)^2 + ||mu - nu||^2)."""
    if x.mu.shape != y.mu.shape:
        raise GenEqError(f"Multiplier sizes differ: {x.mu.shape} vs {y.mu.shape}")
    d = dist(x.point, y.point)
    return math.sqrt(d * d + float(np.sum((x.mu - y.mu) ** 2)))


# ── Problem parts ────────────────────────────────────────────

@dataclass(frozen=True)
class Gradients:
    """grad f_i(p) as tangent vectors, plus the m x k block of partials in mu."""

    tangent: List[TangentVector]
    multiplier: np.ndarray


@dataclass(frozen=True)
class SmoothMap:
    chart: Chart
    m: int
    value: Callable[[ProductPoint], np.ndarray]
    gradients: Callable[[ProductPoint], Gradients]


@dataclass(frozen=True)
class SetValuedPart:
    kind: str
    m: int
    slots: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in (ZERO, NEG_ORTHANT, KKT):
            raise GenEqError(f"Unknown set-valued part '{self.kind}'")
        if any(not 0 <= s < self.m for s in self.slots):
            raise GenEqError(f"Slot rows {self.slots} out of range for m={self.m}")

    @classmethod
    def zero(cls, m: int) -> "SetValuedPart":
        return cls(ZERO, m)

    @classmethod
    def neg_orthant(cls, s: int, m: int) -> "SetValuedPart":
        """The first s rows are inequalities f_i <= 0, the rest equalities."""
        if not 0 <= s <= m:
            raise GenEqError(f"Need 0 <= s <= m, got s={s}, m={m}")
        return cls(NEG_ORTHANT, m, tuple(range(s)))

    @classmethod
    def kkt(cls, m: int, slots: Sequence[int]) -> "SetValuedPart":
        """Complementarity slot j sits on row slots[j] and pairs with multiplier mu[j]."""
        return cls(KKT, m, tuple(int(s) for s in slots))


@dataclass(frozen=True, eq=False)
class GenEqProblem:
    name: str
    chart: Chart
    f: SmoothMap
    F: SetValuedPart
    frame: FrameField
    n_multipliers: int = 0
    phi_rows: Tuple[int, ...] = ()
    constraint_rows: Tuple[int, ...] = ()
    solution: Optional[ProductPoint] = None
    region_radius: Optional[float] = None

    def __post_init__(self):
        if self.f.m != self.F.m:
            raise GenEqError(f"f has {self.f.m} rows but F has {self.F.m}")
        if self.frame.chart != self.chart or self.f.chart != self.chart:
            raise GenEqError("Problem parts live on different charts")
        if self.F.kind == KKT and len(self.F.slots) > self.n_multipliers:
            raise GenEqError("Each complementarity slot needs its own multiplier")
        if not self.phi_rows:
            rows = tuple(i for i in range(self.f.m) if i not in self.constraint_rows)
            object.__setattr__(self, "phi_rows", rows)

    @property
    def n(self) -> int:
        """Columns of the differential: frame size plus multiplier count."""
        return self.frame.size + self.n_multipliers

    def point(self, p: ManifoldPoint, mu: Optional[Sequence[float]] = None) -> ProductPoint:
        if mu is None:
            mu = np.zeros(self.n_multipliers)
        x = ProductPoint(p, mu)
        if x.mu.size != self.n_multipliers:
            raise GenEqError(f"{self.name} expects {self.n_multipliers} multipliers, got {x.mu.size}")
        return x


# ── Core operations ──────────────────────────────────────────

def evaluate(problem: GenEqProblem, x: ProductPoint) -> np.ndarray:
    return np.asarray(problem.f.value(x), dtype=float).reshape(problem.f.m)


def differential_matrix(problem: GenEqProblem, x: ProductPoint) -> np.ndarray:
    """J[i][j] = <grad f_i(p), E_j(p)>_p, followed by the multiplier columns."""
    frame = frame_at(problem.frame, x.point)
    grads = problem.f.gradients(x)
    J = np.zeros((problem.f.m, problem.n))
    for i, g in enumerate(grads.tangent):
        for j, e in enumerate(frame):
            J[i, j] = inner(g, e)
    if problem.n_multipliers:
        J[:, len(frame):] = grads.multiplier
    return J


def residual_components(problem: GenEqProblem, x: ProductPoint,
                        values: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-row contribution to d(0, f(x) + F(x))."""
    fx = evaluate(problem, x) if values is None else values
    out = np.abs(fx)
    part = problem.F
    if part.kind == NEG_ORTHANT:
        for i in part.slots:
            out[i] = max(fx[i], 0.0)
    elif part.kind == KKT:
        mu = x.mu[:len(part.slots)]
        if np.any(mu < 0.0):
            raise InfeasibleMultiplierError(f"Negative complementarity multiplier in {mu}")
        for j, i in enumerate(part.slots):
            out[i] = abs(fx[i]) if mu[j] > 0.0 else max(fx[i], 0.0)
    return out


def residual(problem: GenEqProblem, x: ProductPoint,
             values: Optional[np.ndarray] = None) -> float:
    """min over y in F(x) of ||f(x) + y||."""
    return float(np.linalg.norm(residual_components(problem, x, values)))


def finite_difference_gradients(value: Callable[[ProductPoint], np.ndarray], frame: FrameField,
                                n_multipliers: int = 0, h: float = FD_STEP
                                ) -> Callable[[ProductPoint], Gradients]:
    """
    Gradient fields by central differences of t -> f(exp_p(t E_j(p))) and of the
    multiplier coordinates. Frame orthonormality turns the directional
    derivatives directly into gradient coordinates.
    """
    def gradients(x: ProductPoint) -> Gradients:
        basis = frame_at(frame, x.point)
        cols = []
        for e in basis:
            fp = value(ProductPoint(exp_map(x.point, e.scale(h)), x.mu))
            fm = value(ProductPoint(exp_map(x.point, e.scale(-h)), x.mu))
            cols.append((np.asarray(fp) - np.asarray(fm)) / (2.0 * h))
        for k in range(n_multipliers):
            step = np.zeros(n_multipliers)
            step[k] = h
            fp = value(ProductPoint(x.point, x.mu + step))
            fm = value(ProductPoint(x.point, x.mu - step))
            cols.append((np.asarray(fp) - np.asarray(fm)) / (2.0 * h))
        D = np.column_stack(cols) if cols else np.zeros((0, 0))
        tangent = []
        for row in D:
            comps = np.zeros(x.point.chart.coord_shape)
            for a, e in zip(row[:len(basis)], basis):
                comps = comps + a * e.components
            tangent.append(TangentVector(x.point, comps))
        return Gradients(tangent, D[:, len(basis):])

    return gradients


# ── Vector-field reduction ───────────────────────────────────

@dataclass(frozen=True)
class KktStructure:
    """
    Constraint data of a KKT vector field. `inequalities(p)` returns g(p) (length
    n_inequalities, g <= 0), `equalities(p)` returns h(p) (length n_equalities, h = 0).
    Multipliers are ordered (mu for g, then lambda for h).
    """

    inequalities: Callable[[ManifoldPoint], np.ndarray]
    n_inequalities: int
    equalities: Optional[Callable[[ManifoldPoint], np.ndarray]] = None
    n_equalities: int = 0

    @property
    def n_multipliers(self) -> int:
        return self.n_inequalities + self.n_equalities


def reduce_vector_field(name: str, field: Callable[[ProductPoint], TangentVector],
                        frame: FrameField, structure: Optional[KktStructure] = None,
                        gradients: Optional[Callable[[ProductPoint], Gradients]] = None,
                        solution: Optional[ProductPoint] = None,
                        region_radius: Optional[float] = None) -> GenEqProblem:
    """
    Turn the inclusion V(p) + Z(p) ∋ 0_p into a problem on R^m.

    f(p)_i = <V(p), E_i(p)> for the frame rows; with a KKT structure the rows
    g(p) (complementarity slots) and h(p) (equalities) follow. Without explicit
    gradients they are built by central differences.
    """
    chart = frame.chart
    n_frame = frame.size
    n_ineq = structure.n_inequalities if structure else 0
    n_eq = structure.n_equalities if structure else 0
    m = n_frame + n_ineq + n_eq

    def value(x: ProductPoint) -> np.ndarray:
        v = field(x)
        rows = [inner(v, e) for e in frame_at(frame, x.point)]
        if structure is not None:
            rows.extend(np.asarray(structure.inequalities(x.point), dtype=float).reshape(n_ineq))
            if n_eq:
                if structure.equalities is None:
                    raise GenEqError("Equality count given without an equality map")
                rows.extend(np.asarray(structure.equalities(x.point), dtype=float).reshape(n_eq))
        return np.array(rows, dtype=float)

    n_mult = structure.n_multipliers if structure else 0
    if gradients is None:
        gradients = finite_difference_gradients(value, frame, n_mult)

    if structure is None:
        part = SetValuedPart.zero(m)
        constraint_rows: Tuple[int, ...] = ()
    else:
        slots = tuple(range(n_frame, n_frame + n_ineq))
        part = SetValuedPart.kkt(m, slots)
        constraint_rows = slots

    return GenEqProblem(
        name=name,
        chart=chart,
        f=SmoothMap(chart, m, value, gradients),
        F=part,
        frame=frame,
        n_multipliers=n_mult,
        phi_rows=tuple(range(n_frame)),
        constraint_rows=constraint_rows,
        solution=solution,
        region_radius=region_radius,
    )


# ── Constrained Karcher mean on S^3 ──────────────────────────

def _log_weights(c: np.ndarray, s: np.ndarray):
    """a(c) = theta / sin(theta) and its derivative in c = cos(theta), elementwise."""
    theta = np.arctan2(s, c)
    small = theta < 1e-3
    s_safe = np.where(small, 1.0, s)
    a = np.where(small, 1.0 + theta ** 2 / 6.0 + 7.0 * theta ** 4 / 360.0, theta / s_safe)
    da = np.where(small, -1.0 / 3.0 - 2.0 * theta ** 2 / 15.0, (c * a - 1.0) / s_safe ** 2)
    return theta, a, da


def _sphere_logs(p: np.ndarray, Q: np.ndarray):
    """Rows log_p(q_i), their Jacobians in ambient p (summed with `weights` later) and angles."""
    c = Q @ p
    if np.any(c <= -1.0 + ANTIPODAL_TOL):
        raise DomainError("Karcher sample antipodal to the current iterate")
    c = np.clip(c, -1.0, 1.0)
    W = Q - c[:, None] * p[None, :]
    s = np.linalg.norm(W, axis=1)
    theta, a, da = _log_weights(c, s)
    return a[:, None] * W, W, c, a, da, theta


def _summed_log_jacobian(p: np.ndarray, Q: np.ndarray, W: np.ndarray, c: np.ndarray,
                         a: np.ndarray, da: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_i w_i d/dp [a(c_i)(q_i - c_i p)] = sum_i w_i (a' w_i q_i^T - a (p q_i^T + c_i I))."""
    wa = weights * a
    return ((weights * da)[:, None] * W).T @ Q - np.outer(p, wa @ Q) - float(wa @ c) * np.eye(p.size)


def build_constrained_karcher(points: Sequence[ManifoldPoint], center: ManifoldPoint,
                              radius: float, name: str = "karcher") -> GenEqProblem:
    """
    KKT system of min (1/N) sum d^2(p, p_i) subject to d^2(p, center) <= r^2 on S^3.

    Rows 0..2 hold <grad L_mu(p), E_i(p)>, row 3 holds g(p) = d^2(p, center) - r^2
    and is the single complementarity slot paired with mu.
    """
    if not points:
        raise GenEqError("Karcher problem needs at least one sample point")
    chart = Chart.sphere(3)
    for q in list(points) + [center]:
        if q.chart != chart:
            raise GenEqError(f"Karcher samples must lie on {chart}, got {q.chart}")
    if radius <= 0.0:
        raise GenEqError(f"Constraint radius must be positive, got {radius}")

    outside = sum(1 for q in points if dist(q, center) > radius)
    if outside:
        logger.warning(f"{outside}/{len(points)} Karcher samples lie outside the constraint ball r={radius}")

    Q = np.array([q.coords for q in points])
    pc = np.array(center.coords)
    N = len(points)
    frame = FrameField.for_chart(chart)
    M = np.array(frame.generators)
    sample_w = np.full(N, 2.0 / N)

    def constraint(p: ManifoldPoint) -> np.ndarray:
        return np.array([dist(p, center) ** 2 - radius ** 2])

    def lagrangian_gradient(x: ProductPoint) -> TangentVector:
        p = x.point.coords
        L, *_ = _sphere_logs(p, Q)
        Lc, *_ = _sphere_logs(p, pc[None, :])
        G = -(sample_w @ L) - 2.0 * x.mu[0] * Lc[0]
        return TangentVector(x.point, G - float(np.dot(p, G)) * p)

    def gradients(x: ProductPoint) -> Gradients:
        p = x.point.coords
        mu = float(x.mu[0])
        L, W, c, a, da, _ = _sphere_logs(p, Q)
        Lc, Wc, cc, ac, dac, _ = _sphere_logs(p, pc[None, :])
        G = -(sample_w @ L) - 2.0 * mu * Lc[0]
        DG = (-_summed_log_jacobian(p, Q, W, c, a, da, sample_w)
              - _summed_log_jacobian(p, pc[None, :], Wc, cc, ac, dac, np.array([2.0 * mu])))
        proj = np.eye(4) - np.outer(p, p)
        tangent = []
        partials = np.zeros((4, 1))
        for j in range(3):
            Mp = M[j] @ p
            ambient = DG.T @ Mp + M[j].T @ G
            tangent.append(TangentVector(x.point, proj @ ambient))
            partials[j, 0] = float(np.dot(-2.0 * Lc[0], Mp))
        tangent.append(TangentVector(x.point, -2.0 * Lc[0]))
        return Gradients(tangent, partials)

    return reduce_vector_field(
        name,
        lagrangian_gradient,
        frame,
        KktStructure(constraint, 1),
        gradients=gradients,
        region_radius=radius,
    )


# ── Euclidean test problems ──────────────────────────────────

def build_scalar_problem(coefficients: Sequence[float] = (1.0, 0.0, -2.0),
                         name: str = "scalar") -> GenEqProblem:
    """f(p) = polynomial in p on Euclid(1), F = {0}; defaults to p^2 - 2.

    The known solution is the largest real root when one exists.
    """
    coeffs = np.asarray(coefficients, dtype=float)
    deriv = np.polyder(coeffs)
    chart = Chart.euclid(1)
    frame = FrameField.for_chart(chart)

    def value(x: ProductPoint) -> np.ndarray:
        return np.array([np.polyval(coeffs, x.point.coords[0])])

    def gradients(x: ProductPoint) -> Gradients:
        g = TangentVector(x.point, [np.polyval(deriv, x.point.coords[0])])
        return Gradients([g], np.zeros((1, 0)))

    roots = np.roots(coeffs)
    real = np.sort(roots[np.abs(roots.imag) < 1e-12].real)
    solution = ProductPoint(ManifoldPoint(chart, [real[-1]])) if real.size else None

    return GenEqProblem(
        name=name,
        chart=chart,
        f=SmoothMap(chart, 1, value, gradients),
        F=SetValuedPart.zero(1),
        frame=frame,
        solution=solution,
    )


def build_inequality_system(chart: Chart, maps: Callable[[ManifoldPoint], np.ndarray], m: int,
                            s: int, gradients: Optional[Callable[[ProductPoint], Gradients]] = None,
                            name: str = "inequality_system") -> GenEqProblem:
    """f_i(p) <= 0 for i < s and f_i(p) = 0 for s <= i < m, as f + F ∋ 0 with F = -K."""
    frame = FrameField.for_chart(chart)

    def value(x: ProductPoint) -> np.ndarray:
        return np.asarray(maps(x.point), dtype=float).reshape(m)

    if gradients is None:
        gradients = finite_difference_gradients(value, frame)

    return GenEqProblem(
        name=name,
        chart=chart,
        f=SmoothMap(chart, m, value, gradients),
        F=SetValuedPart.neg_orthant(s, m),
        frame=frame,
        constraint_rows=tuple(range(s)),
    )
