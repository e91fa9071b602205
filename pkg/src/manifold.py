"""
manifold.py — Riemannian geometry kernel

Points, tangent vectors, exponential/logarithm maps, parallel transport,
distances, geodesics and orthonormal frames for three charts:

  Sphere(n)  — unit sphere in R^{n+1} with the induced metric
  Spd(n)     — symmetric positive definite n x n matrices, affine-invariant metric
  Euclid(n)  — R^n

Every value is immutable once constructed and every operation is a pure
function, so geometry objects can be shared freely between worker threads.
Matrix functions on SPD(n) go through a symmetric eigendecomposition.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ChartMismatchError,
    DomainError,
    GeometryError,
    SingularGeometryError,
    UnsupportedFrameError,
)

logger = logging.getLogger(__name__)

# ── Tolerances ───────────────────────────────────────────────

UNIT_NORM_TOL = 1e-12      # sphere points: | ||x|| - 1 |
SYMMETRY_TOL = 1e-12       # SPD points and tangents: max |A - A^T| (relative)
TANGENT_TOL = 1e-10        # sphere tangents: |<p, v>| (relative)
ANTIPODAL_TOL = 1e-12      # <p, q> <= -1 + tol  ->  log undefined
EIGENVALUE_FLOOR = 1e-14   # clamp before log on SPD

SPHERE = "sphere"
SPD = "spd"
EUCLID = "euclid"

# Counts eigenvalue clamps performed by the SPD logarithm.
_clamp_lock = threading.Lock()
_clamp_count = 0


def eigenvalue_clamp_count() -> int:
    """Number of eigenvalues clamped to EIGENVALUE_FLOOR since import."""
    with _clamp_lock:
        return _clamp_count


# ── Charts ───────────────────────────────────────────────────

@dataclass(frozen=True)
class Chart:
    """Manifold tag. `n` is the sphere dimension, the matrix size or the vector length."""

    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in (SPHERE, SPD, EUCLID):
            raise GeometryError(f"Unknown chart kind '{self.kind}'")
        if self.n < 1:
            raise GeometryError(f"Chart size must be positive, got {self.n}")

    @classmethod
    def sphere(cls, n: int) -> "Chart":
        return cls(SPHERE, n)

    @classmethod
    def spd(cls, n: int) -> "Chart":
        return cls(SPD, n)

    @classmethod
    def euclid(cls, n: int) -> "Chart":
        return cls(EUCLID, n)

    @property
    def dim(self) -> int:
        """Intrinsic dimension."""
        if self.kind == SPD:
            return self.n * (self.n + 1) // 2
        return self.n

    @property
    def coord_shape(self) -> Tuple[int, ...]:
        if self.kind == SPHERE:
            return (self.n + 1,)
        if self.kind == SPD:
            return (self.n, self.n)
        return (self.n,)

    def __str__(self) -> str:
        return {SPHERE: "Sphere", SPD: "Spd", EUCLID: "Euclid"}[self.kind] + f"({self.n})"


def _frozen(array: Any) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


def _asymmetry(a: np.ndarray) -> float:
    return float(np.max(np.abs(a - a.T))) / max(1.0, float(np.max(np.abs(a))))


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    chart: Chart
    coords: np.ndarray
    # eigendecomposition taken by the SPD check, and the square roots built from it
    _eig: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, init=False, repr=False)
    _roots: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        coords = _frozen(self.coords)
        if coords.shape != self.chart.coord_shape:
            raise GeometryError(
                f"{self.chart} expects coordinates of shape {self.chart.coord_shape}, "
                f"got {coords.shape}"
            )
        if self.chart.kind == SPHERE:
            drift = abs(float(np.linalg.norm(coords)) - 1.0)
            if drift > UNIT_NORM_TOL:
                raise DomainError(f"Sphere point off the unit sphere by {drift:.3e}")
        elif self.chart.kind == SPD:
            if _asymmetry(coords) > SYMMETRY_TOL:
                raise DomainError("SPD point is not symmetric")
            w, u = np.linalg.eigh(coords)
            if float(w[0]) <= 0.0:
                raise DomainError("SPD point is not positive definite")
            object.__setattr__(self, "_eig", (w, u))
        object.__setattr__(self, "coords", coords)

    def __repr__(self) -> str:
        return f"ManifoldPoint({self.chart}, {np.array2string(self.coords, precision=6)})"


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: ManifoldPoint
    components: np.ndarray

    def __post_init__(self):
        comps = _frozen(self.components)
        chart = self.base.chart
        if comps.shape != chart.coord_shape:
            raise GeometryError(
                f"Tangent at {chart} expects shape {chart.coord_shape}, got {comps.shape}"
            )
        if chart.kind == SPHERE:
            scale = max(1.0, float(np.linalg.norm(comps)))
            if abs(float(np.dot(self.base.coords, comps))) > TANGENT_TOL * scale:
                raise DomainError("Sphere tangent is not orthogonal to its base point")
        elif chart.kind == SPD and _asymmetry(comps) > SYMMETRY_TOL:
            raise DomainError("SPD tangent is not symmetric")
        object.__setattr__(self, "components", comps)

    def __add__(self, other: "TangentVector") -> "TangentVector":
        _same_base(self, other)
        return TangentVector(self.base, self.components + other.components)

    def __sub__(self, other: "TangentVector") -> "TangentVector":
        _same_base(self, other)
        return TangentVector(self.base, self.components - other.components)

    def scale(self, factor: float) -> "TangentVector":
        return TangentVector(self.base, factor * self.components)


def zero_tangent(p: ManifoldPoint) -> TangentVector:
    return TangentVector(p, np.zeros(p.chart.coord_shape))


def _same_chart(p: ManifoldPoint, q: ManifoldPoint):
    if p.chart != q.chart:
        raise ChartMismatchError(f"Chart mismatch: {p.chart} vs {q.chart}")


def _same_base(u: TangentVector, v: TangentVector):
    _same_chart(u.base, v.base)
    if u.base is not v.base and not np.array_equal(u.base.coords, v.base.coords):
        raise ChartMismatchError("Tangent vectors are based at different points")


def _check_base(p: ManifoldPoint, v: TangentVector):
    _same_chart(p, v.base)
    if v.base is not p and not np.array_equal(v.base.coords, p.coords):
        raise ChartMismatchError("Tangent vector is not based at the given point")


# ── Symmetric matrix functions ───────────────────────────────

def _sym_apply(a: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    w, u = np.linalg.eigh(a)
    out = (u * fn(w)) @ u.T
    return 0.5 * (out + out.T)


def _clamped(w: np.ndarray) -> np.ndarray:
    global _clamp_count
    low = w < EIGENVALUE_FLOOR
    if np.any(low):
        hits = int(np.count_nonzero(low))
        with _clamp_lock:
            _clamp_count += hits
        logger.warning(f"Clamped {hits} eigenvalue(s) below {EIGENVALUE_FLOOR:.0e} before log")
        w = np.where(low, EIGENVALUE_FLOOR, w)
    return w


def sqrtm(a: np.ndarray) -> np.ndarray:
    return _sym_apply(a, lambda w: np.sqrt(_clamped(w)))


def expm(a: np.ndarray) -> np.ndarray:
    return _sym_apply(a, np.exp)


def logm(a: np.ndarray) -> np.ndarray:
    return _sym_apply(a, lambda w: np.log(_clamped(w)))


# ── Inner product ────────────────────────────────────────────

def inner(u: TangentVector, v: TangentVector) -> float:
    """<u, v>_p; for SPD this is tr(u p^-1 v p^-1)."""
    _same_base(u, v)
    p = u.base
    if p.chart.kind == SPD:
        _, si = _spd_roots(p)
        return float(np.sum((si @ u.components @ si) * (si @ v.components @ si)))
    return float(np.dot(u.components, v.components))


def norm(v: TangentVector) -> float:
    return math.sqrt(max(inner(v, v), 0.0))


# ── Sphere ───────────────────────────────────────────────────

def _sphere_angle(p: np.ndarray, q: np.ndarray) -> Tuple[float, np.ndarray, float]:
    """Angle between p and q, the component of q orthogonal to p, and its norm.

    The angle equals arccos(clamp(<p,q>, -1, 1)); atan2 keeps it accurate near 0.
    """
    c = min(1.0, max(-1.0, float(np.dot(p, q))))
    if c <= -1.0 + ANTIPODAL_TOL:
        raise DomainError("Logarithm undefined for antipodal sphere points")
    w = q - c * p
    s = float(np.linalg.norm(w))
    return math.atan2(s, c), w, s


def _sphere_exp(p: ManifoldPoint, v: np.ndarray) -> np.ndarray:
    nv = float(np.linalg.norm(v))
    if nv >= math.pi:
        raise DomainError(f"Sphere step of length {nv:.6f} exceeds the injectivity radius")
    if nv == 0.0:
        return np.array(p.coords)
    x = math.cos(nv) * p.coords + math.sin(nv) * (v / nv)
    return x / np.linalg.norm(x)


def _sphere_log(p: ManifoldPoint, q: ManifoldPoint) -> np.ndarray:
    theta, w, s = _sphere_angle(p.coords, q.coords)
    if s == 0.0:
        return np.zeros_like(p.coords)
    return (theta / s) * w


def _sphere_transport(p: ManifoldPoint, q: ManifoldPoint, v: np.ndarray) -> np.ndarray:
    u = _sphere_log(p, q)
    theta = float(np.linalg.norm(u))
    if theta == 0.0:
        return np.array(v)
    e = u / theta
    a = float(np.dot(e, v))
    out = v + (math.cos(theta) - 1.0) * a * e - math.sin(theta) * a * p.coords
    return out - float(np.dot(q.coords, out)) * q.coords


# ── SPD ──────────────────────────────────────────────────────

def _spd_roots(p: ManifoldPoint) -> Tuple[np.ndarray, np.ndarray]:
    """(p^{1/2}, p^{-1/2}), built once per point from its stored eigendecomposition."""
    if p._roots is None:
        w, u = p._eig
        r = np.sqrt(_clamped(w))
        s = (u * r) @ u.T
        si = (u / r) @ u.T
        object.__setattr__(p, "_roots", (0.5 * (s + s.T), 0.5 * (si + si.T)))
    return p._roots


def _spd_exp(p: ManifoldPoint, v: np.ndarray) -> np.ndarray:
    s, si = _spd_roots(p)
    out = s @ expm(si @ v @ si) @ s
    return 0.5 * (out + out.T)


def _spd_log(p: ManifoldPoint, q: ManifoldPoint) -> np.ndarray:
    s, si = _spd_roots(p)
    out = s @ logm(si @ q.coords @ si) @ s
    return 0.5 * (out + out.T)


def _spd_transport(p: ManifoldPoint, q: ManifoldPoint, v: np.ndarray) -> np.ndarray:
    # E = (q p^-1)^{1/2} = p^{1/2} (p^{-1/2} q p^{-1/2})^{1/2} p^{-1/2}
    s, si = _spd_roots(p)
    e = s @ sqrtm(si @ q.coords @ si) @ si
    out = e @ v @ e.T
    return 0.5 * (out + out.T)


def _spd_dist(p: ManifoldPoint, q: ManifoldPoint) -> float:
    _, si = _spd_roots(p)
    m = si @ q.coords @ si
    w = _clamped(np.linalg.eigvalsh(0.5 * (m + m.T)))
    return float(math.sqrt(float(np.sum(np.log(w) ** 2))))


# ── Public operations ────────────────────────────────────────

def exp_map(p: ManifoldPoint, v: TangentVector) -> ManifoldPoint:
    """exp_p(v). Sphere results are re-normalized, SPD results re-symmetrized."""
    _check_base(p, v)
    kind = p.chart.kind
    if kind == SPHERE:
        coords = _sphere_exp(p, v.components)
    elif kind == SPD:
        try:
            return ManifoldPoint(p.chart, _spd_exp(p, v.components))
        except DomainError as e:
            raise SingularGeometryError(f"SPD exponential lost positive definiteness: {e}") from e
    else:
        coords = p.coords + v.components
    return ManifoldPoint(p.chart, coords)


def log_map(p: ManifoldPoint, q: ManifoldPoint) -> TangentVector:
    """exp_p^{-1}(q); raises DomainError for antipodal sphere points."""
    _same_chart(p, q)
    kind = p.chart.kind
    if kind == SPHERE:
        comps = _sphere_log(p, q)
    elif kind == SPD:
        comps = _spd_log(p, q)
    else:
        comps = q.coords - p.coords
    return TangentVector(p, comps)


def dist(p: ManifoldPoint, q: ManifoldPoint) -> float:
    _same_chart(p, q)
    kind = p.chart.kind
    if kind == SPHERE:
        return _sphere_angle(p.coords, q.coords)[0]
    if kind == SPD:
        return _spd_dist(p, q)
    return float(np.linalg.norm(q.coords - p.coords))


def parallel_transport(p: ManifoldPoint, q: ManifoldPoint, v: TangentVector) -> TangentVector:
    """Transport v from T_p to T_q along the minimizing geodesic."""
    _check_base(p, v)
    _same_chart(p, q)
    kind = p.chart.kind
    if kind == SPHERE:
        comps = _sphere_transport(p, q, v.components)
    elif kind == SPD:
        comps = _spd_transport(p, q, v.components)
    else:
        comps = np.array(v.components)
    return TangentVector(q, comps)


def geodesic(p: ManifoldPoint, q: ManifoldPoint, t: float) -> Tuple[ManifoldPoint, TangentVector]:
    """Point gamma(t) = exp_p(t log_p q) and its velocity, for t in [0, 1]."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"Geodesic parameter must lie in [0, 1], got {t}")
    u = log_map(p, q)
    point = exp_map(p, u.scale(t))
    return point, parallel_transport(p, point, u)


# ── Frames ───────────────────────────────────────────────────

# Skew generators of the global orthonormal frame E_i(p) = M_i p on S^3.
S3_GENERATORS = (
    np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0]], dtype=float),
    np.array([[0, 0, -1, 0], [0, 0, 0, 1], [1, 0, 0, 0], [0, -1, 0, 0]], dtype=float),
    np.array([[0, 0, 0, -1], [0, 0, -1, 0], [0, 1, 0, 0], [1, 0, 0, 0]], dtype=float),
)


def _symmetric_basis(n: int) -> List[np.ndarray]:
    """Frobenius-orthonormal basis of the symmetric n x n matrices."""
    basis = []
    for i in range(n):
        for j in range(i, n):
            b = np.zeros((n, n))
            if i == j:
                b[i, i] = 1.0
            else:
                b[i, j] = b[j, i] = 1.0 / math.sqrt(2.0)
            basis.append(b)
    return basis


@dataclass(frozen=True, eq=False)
class FrameField:
    chart: Chart
    generators: Tuple[np.ndarray, ...]

    @classmethod
    def for_chart(cls, chart: Chart) -> "FrameField":
        """
        The frame used for a chart:
          Sphere(3) — E_i(p) = M_i p with the three skew generators
          Euclid(n) — canonical basis
          Spd(n)    — p^{1/2} B_k p^{1/2} with B_k Frobenius-orthonormal
        Other spheres are not parallelizable and have no global frame.
        """
        if chart.kind == SPHERE:
            if chart.n != 3:
                raise UnsupportedFrameError(f"No global orthonormal frame on {chart}")
            return cls(chart, S3_GENERATORS)
        if chart.kind == EUCLID:
            return cls(chart, tuple(np.eye(chart.n)))
        return cls(chart, tuple(_symmetric_basis(chart.n)))

    @property
    def size(self) -> int:
        return len(self.generators)


def frame_at(frame: FrameField, p: ManifoldPoint) -> List[TangentVector]:
    if frame.chart != p.chart:
        raise UnsupportedFrameError(f"Frame for {frame.chart} evaluated on {p.chart}")
    kind = p.chart.kind
    if kind == SPHERE:
        return [TangentVector(p, m @ p.coords) for m in frame.generators]
    if kind == SPD:
        s, _ = _spd_roots(p)
        return [TangentVector(p, s @ b @ s) for b in frame.generators]
    return [TangentVector(p, e) for e in frame.generators]


def combine(frame: FrameField, p: ManifoldPoint, coefficients: Sequence[float]) -> TangentVector:
    """sum_j alpha_j E_j(p)."""
    vectors = frame_at(frame, p)
    if len(coefficients) != len(vectors):
        raise GeometryError(f"Expected {len(vectors)} frame coefficients, got {len(coefficients)}")
    comps = np.zeros(p.chart.coord_shape)
    for alpha, e in zip(coefficients, vectors):
        comps = comps + float(alpha) * e.components
    return TangentVector(p, comps)


# ── Sampling ─────────────────────────────────────────────────

def random_tangent(p: ManifoldPoint, rng: np.random.Generator,
                   length: Optional[float] = None) -> TangentVector:
    """Gaussian tangent at p; rescaled to `length` when given."""
    kind = p.chart.kind
    if kind == SPHERE:
        g = rng.standard_normal(p.chart.coord_shape)
        comps = g - float(np.dot(p.coords, g)) * p.coords
    elif kind == SPD:
        g = rng.standard_normal(p.chart.coord_shape)
        s, _ = _spd_roots(p)
        comps = s @ (0.5 * (g + g.T)) @ s
    else:
        comps = rng.standard_normal(p.chart.coord_shape)
    v = TangentVector(p, comps)
    if length is not None:
        nv = norm(v)
        if nv > 0.0:
            v = v.scale(length / nv)
    return v


def random_point(chart: Chart, rng: np.random.Generator,
                 center: Optional[ManifoldPoint] = None,
                 radius: Optional[float] = None) -> ManifoldPoint:
    """
    Random point, uniform in geodesic radius inside B_radius(center) when a
    center is given. Without a center: uniform on the sphere, exp of a unit-scale
    tangent at Id on SPD, standard normal on Euclid.
    """
    if center is None:
        if chart.kind == SPHERE:
            g = rng.standard_normal(chart.coord_shape)
            return ManifoldPoint(chart, g / np.linalg.norm(g))
        center = ManifoldPoint(chart, np.eye(chart.n) if chart.kind == SPD
                               else np.zeros(chart.coord_shape))
        radius = 1.0 if radius is None else radius
    if radius is None:
        raise GeometryError("A radius is required together with a center")
    if chart.kind == SPHERE:
        radius = min(radius, math.pi - 1e-6)
    v = random_tangent(center, rng, length=float(rng.uniform(0.0, radius)))
    return exp_map(center, v)


# ── Serialization ────────────────────────────────────────────

def point_to_dict(p: ManifoldPoint) -> Dict[str, Any]:
    """{"chart": "sphere", "n": 3, "coords": [...]}; SPD coords are row-major."""
    return {"chart": p.chart.kind, "n": p.chart.n, "coords": [float(x) for x in p.coords.ravel()]}


def point_from_dict(data: Dict[str, Any]) -> ManifoldPoint:
    try:
        chart = Chart(str(data["chart"]), int(data["n"]))
        coords = np.asarray(data["coords"], dtype=float).reshape(chart.coord_shape)
    except (KeyError, TypeError, ValueError) as e:
        raise GeometryError(f"Malformed point record {data!r}: {e}") from e
    return ManifoldPoint(chart, coords)
