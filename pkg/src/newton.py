"""
newton.py — inexact Newton driver for generalized equations

    p_{k+1} = exp_{p_k}(v_k),   (f(p_k) + Df(p_k) v_k + F(p_{k+1})) ∩ R_k(p_k) ≠ ∅

The inexactness rule picks u_k ∈ R_k(p_k); the step subproblem is then solved
exactly so all of the inexactness lives in u_k. Besides the solver this module
holds the convergence-rate estimator, the local radius formulas and the
semi-local certificate check, plus CSV export of iterate histories.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    GenEqError,
    GeometryError,
    InfeasibleMultiplierError,
    InsufficientDataError,
    ParameterError,
    SingularStepError,
    SubproblemInfeasibleError,
)
from .geneq import (
    KKT,
    GenEqProblem,
    ProductPoint,
    differential_matrix,
    evaluate,
    product_dist,
    residual,
)
from .manifold import SPHERE, combine, exp_map, norm
from .subsolvers import StepRequest, solve_step

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITERS = 100
SPHERE_STEP_GUARD = math.pi - 1e-6
RATE_FLOOR = 100.0 * np.finfo(float).eps

CONVERGED = "Converged"
MAX_ITERS = "MaxIters"
SUBPROBLEM_INFEASIBLE = "SubproblemInfeasible"
GEOMETRY_ERROR = "GeometryError"

LINEAR = "Linear"
SUPERLINEAR = "Superlinear"
QUADRATIC = "Quadratic"
INCONCLUSIVE = "Inconclusive"

CSV_COLUMNS = ["k", "norm_phi", "g_value", "mu", "residual", "step_norm", "u_norm", "dist_to_final"]


# ── Inexactness rules ────────────────────────────────────────

def _uniform(m: int, length: float) -> np.ndarray:
    return np.full(m, length / math.sqrt(m)) if m else np.zeros(0)


@dataclass(frozen=True)
class InexactnessRule:
    """Base rule. `select` returns u_k; `admits` checks an arbitrary u against R_k."""

    name = "rule"

    def select(self, k: int, x: ProductPoint, fx: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def admits(self, k: int, x: ProductPoint, fx: np.ndarray, u: np.ndarray) -> bool:
        raise NotImplementedError


@dataclass(frozen=True)
class Exact(InexactnessRule):
    name = "exact"

    def select(self, k, x, fx):
        return np.zeros_like(fx)

    def admits(self, k, x, fx, u):
        return float(np.linalg.norm(u)) == 0.0


@dataclass(frozen=True)
class FixedDecay(InexactnessRule):
    """u_k = c rho^k (1, ..., 1)."""

    c: float = 1.0
    rho: float = 0.1
    name = "fixed_decay"

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise GenEqError(f"Decay factor must lie in (0, 1), got {self.rho}")

    def select(self, k, x, fx):
        return np.full(fx.size, self.c * self.rho ** k)

    def admits(self, k, x, fx, u):
        target = self.c * self.rho ** k
        return bool(np.all(np.abs(np.asarray(u) - target) <= 1e-12 * max(1.0, abs(target))))


@dataclass(frozen=True)
class RelativeBall(InexactnessRule):
    """
    R_k = {u : ||u|| <= eta_k ||f(p_k)||} with forcing sequence eta_k = eta * decay^k.
    Selects u = 0 unless `extreme`, which puts u on the boundary along (1, ..., 1).
    """

    eta: float = 0.1
    decay: float = 0.5
    extreme: bool = False
    name = "relative_ball"

    def forcing(self, k: int) -> float:
        return self.eta * self.decay ** k

    def select(self, k, x, fx):
        if not self.extreme:
            return np.zeros_like(fx)
        return _uniform(fx.size, self.forcing(k) * float(np.linalg.norm(fx)))

    def admits(self, k, x, fx, u):
        bound = self.forcing(k) * float(np.linalg.norm(fx))
        return float(np.linalg.norm(u)) <= bound * (1.0 + 1e-12)


@dataclass(frozen=True)
class ProximityLinear(InexactnessRule):
    """
    R_k = {u : ||u|| < iota d(p_k, reference)}. Needs the solution, so it is only
    usable in rate studies. Selects `fraction` of the bound along (1, ..., 1).
    """

    iota: float = 0.1
    reference: Optional[ProductPoint] = None
    fraction: float = 0.99
    name = "proximity_linear"

    power = 1

    def __post_init__(self):
        if self.reference is None:
            raise GenEqError(f"{self.name} needs a reference solution")
        if not 0.0 <= self.fraction < 1.0:
            raise GenEqError(f"Fraction must lie in [0, 1), got {self.fraction}")

    def bound(self, x: ProductPoint) -> float:
        return self.iota * product_dist(x, self.reference) ** self.power

    def select(self, k, x, fx):
        return _uniform(fx.size, self.fraction * self.bound(x))

    def admits(self, k, x, fx, u):
        b = self.bound(x)
        n = float(np.linalg.norm(u))
        return n == 0.0 if b == 0.0 else n < b


@dataclass(frozen=True)
class ProximityQuadratic(ProximityLinear):
    """R_k = {u : ||u|| < iota d^2(p_k, reference)}."""

    name = "proximity_quadratic"
    power = 2


# ── Iterates and reports ─────────────────────────────────────

@dataclass(frozen=True)
class IterateRecord:
    k: int
    x: ProductPoint
    norm_phi: float
    g_values: np.ndarray
    residual: float
    f_norm: float
    step_norm: float = float("nan")
    u: Optional[np.ndarray] = None
    dist_to_final: float = float("nan")

    @property
    def g_value(self) -> float:
        return float(np.max(self.g_values)) if self.g_values.size else float("nan")

    @property
    def mu(self) -> float:
        return float(self.x.mu[0]) if self.x.mu.size else float("nan")

    @property
    def u_norm(self) -> float:
        return float(np.linalg.norm(self.u)) if self.u is not None else float("nan")


@dataclass
class SolveReport:
    problem: str
    rule: str
    status: str
    history: List[IterateRecord]
    final: ProductPoint
    error: Optional[str] = None

    @property
    def iterations(self) -> int:
        """Number of steps taken."""
        return max(len(self.history) - 1, 0)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def _stopped(problem: GenEqProblem, x: ProductPoint, fx: np.ndarray, norm_phi: float,
             tol_phi: float, tol_g: float) -> bool:
    """||Phi|| <= tol_phi, g <= tol_g and |mu_j g_j| <= tol_g max(1, mu_j) on every slot."""
    if norm_phi > tol_phi:
        return False
    rows = problem.constraint_rows
    if rows and float(np.max(fx[list(rows)])) > tol_g:
        return False
    if problem.F.kind == KKT:
        for j, r in enumerate(problem.F.slots):
            mu = float(x.mu[j])
            if abs(mu * fx[r]) > tol_g * max(1.0, mu):
                return False
    return True


def _record(problem: GenEqProblem, k: int, x: ProductPoint, fx: np.ndarray) -> IterateRecord:
    phi = fx[list(problem.phi_rows)] if problem.phi_rows else np.zeros(0)
    g = fx[list(problem.constraint_rows)] if problem.constraint_rows else np.zeros(0)
    return IterateRecord(
        k=k,
        x=x,
        norm_phi=float(np.linalg.norm(phi)),
        g_values=g,
        residual=residual(problem, x, fx),
        f_norm=float(np.linalg.norm(fx)),
    )


def solve(problem: GenEqProblem, x0: ProductPoint, rule: InexactnessRule,
          tol_phi: float = DEFAULT_TOL, tol_g: float = DEFAULT_TOL,
          max_iters: int = DEFAULT_MAX_ITERS) -> SolveReport:
    """
    Run the inexact Newton iteration from x0.

    Geometry and subproblem failures end the run with a matching status; the
    history up to the failing iterate is kept.
    """
    x = problem.point(x0.point, x0.mu)
    history: List[IterateRecord] = []
    status = MAX_ITERS
    error = None

    for k in range(max_iters + 1):
        try:
            fx = evaluate(problem, x)
            rec = _record(problem, k, x, fx)
        except (GeometryError, InfeasibleMultiplierError) as e:
            status, error = GEOMETRY_ERROR, str(e)
            break

        if _stopped(problem, x, fx, rec.norm_phi, tol_phi, tol_g):
            history.append(rec)
            status = CONVERGED
            break
        if k == max_iters:
            history.append(rec)
            break

        try:
            J = differential_matrix(problem, x)
            u = rule.select(k, x, fx)
            req = StepRequest(J, fx, u, x.mu, problem.F.slots if problem.F.kind == KKT else ())
            step = solve_step(problem.F, req)
            v = combine(problem.frame, x.point, step.alpha)
            v_norm = norm(v)
            if problem.chart.kind == SPHERE and v_norm >= SPHERE_STEP_GUARD:
                raise GeometryError(f"Step length {v_norm:.6f} reaches the injectivity guard")
            x_next = ProductPoint(exp_map(x.point, v), x.mu + step.nu)
        except (SubproblemInfeasibleError, SingularStepError) as e:
            history.append(rec)
            status, error = SUBPROBLEM_INFEASIBLE, str(e)
            break
        except GeometryError as e:
            history.append(rec)
            status, error = GEOMETRY_ERROR, str(e)
            break

        step_norm = math.sqrt(v_norm ** 2 + float(np.sum(step.nu ** 2)))
        history.append(replace(rec, step_norm=step_norm, u=u))
        logger.debug(f"[{problem.name}] k={k} |Phi|={rec.norm_phi:.3e} res={rec.residual:.3e} "
                     f"|v|={step_norm:.3e} |u|={float(np.linalg.norm(u)):.3e}")
        x = x_next

    final = history[-1].x if history else x
    history = [replace(r, dist_to_final=product_dist(r.x, final)) for r in history]

    report = SolveReport(problem.name, rule.name, status, history, final, error)
    if report.converged:
        logger.info(f"[{problem.name}] {rule.name}: converged in {report.iterations} iterations")
    else:
        logger.error(f"[{problem.name}] {rule.name}: {status} after {report.iterations} iterations"
                     + (f" ({error})" if error else ""))
    return report


def check_rule_conformance(problem: GenEqProblem, history: Sequence[IterateRecord],
                           rule: InexactnessRule) -> List[int]:
    """Indices k whose recorded u_k falls outside R_k(p_k)."""
    bad = []
    for rec in history:
        if rec.u is None:
            continue
        fx = evaluate(problem, rec.x)
        if not rule.admits(rec.k, rec.x, fx, rec.u):
            bad.append(rec.k)
    return bad


# ── History export ───────────────────────────────────────────

def _fmt(value: float) -> str:
    return "%.17g" % value


def history_rows(history: Sequence[IterateRecord]) -> List[List[str]]:
    return [
        [str(r.k), _fmt(r.norm_phi), _fmt(r.g_value), _fmt(r.mu), _fmt(r.residual),
         _fmt(r.step_norm), _fmt(r.u_norm), _fmt(r.dist_to_final)]
        for r in history
    ]


def export_history_csv(history: Sequence[IterateRecord], path: str):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        writer.writerows(history_rows(history))


def read_history_csv(path: str) -> List[Dict[str, float]]:
    """Rows keyed by column name; `k` as int, the rest as float."""
    with open(path, "r", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_COLUMNS:
            raise GenEqError(f"{path}: unexpected columns {reader.fieldnames}")
        rows: List[Dict[str, Any]] = []
        for raw in reader:
            row: Dict[str, Any] = {name: float(raw[name]) for name in CSV_COLUMNS[1:]}
            row["k"] = int(raw["k"])
            rows.append(row)
    return rows


# ── Rate estimation ──────────────────────────────────────────

@dataclass(frozen=True)
class RateEstimate:
    order: float
    ratio: float
    classification: str
    samples: int


def estimate_rate_from_distances(distances: Sequence[float]) -> RateEstimate:
    """
    Order from q_k = ln(d_{k+1}/d_k) / ln(d_k/d_{k-1}), ratio from d_{k+1}/d_k,
    both as medians. Distances at or below 100 eps end the usable sequence.
    """
    usable: List[float] = []
    for d in distances:
        if not d > RATE_FLOOR:
            break
        usable.append(float(d))
    if len(usable) < 3:
        raise InsufficientDataError(f"Need at least 3 distances above {RATE_FLOOR:.1e}, got {len(usable)}")

    d = np.array(usable)
    ratios = d[1:] / d[:-1]
    logs = np.log(ratios)
    orders = [logs[i] / logs[i - 1] for i in range(1, logs.size) if logs[i - 1] != 0.0]
    if not orders:
        raise InsufficientDataError("Distances do not change; no order can be estimated")

    q = float(np.median(orders))
    theta = float(np.median(ratios))
    if 0.8 <= q <= 1.2 and theta < 1.0:
        kind = LINEAR
    elif q >= 1.8:
        kind = QUADRATIC
    elif q > 1.2 and theta < 1.0 and ratios[-1] < ratios[0] and np.all(np.diff(ratios) <= 0.0):
        kind = SUPERLINEAR
    else:
        kind = INCONCLUSIVE
        logger.warning(f"Inconclusive rate estimate: order {q:.3f}, ratio {theta:.3e}")
    return RateEstimate(q, theta, kind, len(usable))


def estimate_rate(history: Sequence[IterateRecord],
                  reference: Optional[ProductPoint] = None) -> RateEstimate:
    """
    Estimate the convergence order of a run. Without a reference the final
    iterate stands in for the solution and the last two iterates are dropped,
    so at least 5 iterates are needed. With a reference every iterate counts
    and 3 are enough.
    """
    needed = 5 if reference is None else 3
    if len(history) < needed:
        raise InsufficientDataError(f"Need at least {needed} iterates, got {len(history)}")
    if reference is None:
        distances = [r.dist_to_final for r in history[:-2]]
    else:
        distances = [product_dist(r.x, reference) for r in history]
    return estimate_rate_from_distances(distances)


# ── Local radii ──────────────────────────────────────────────

def _require_positive(**values: float):
    for key, val in values.items():
        if not val > 0.0:
            raise ParameterError(f"{key} must be positive, got {val}")


def local_radius_linear(beta: float, eps: float, iota: float, delta_bar: float,
                        delta_eps: float) -> float:
    """min{beta / (eps + iota), delta_bar, delta_eps}; beta may be inf."""
    _require_positive(beta=beta, eps=eps, iota=iota, delta_bar=delta_bar, delta_eps=delta_eps)
    return min(beta / (eps + iota), delta_bar, delta_eps)


def local_radius_quadratic(beta: float, L: float, iota: float, mu: float, kappa: float,
                           delta: float, delta_L: float) -> float:
    """min{sqrt(beta / (L + iota)), (1 - mu kappa) / (kappa (L + iota)), delta, delta_L}."""
    _require_positive(beta=beta, L=L, iota=iota, mu=mu, kappa=kappa, delta=delta, delta_L=delta_L)
    if mu * kappa >= 1.0:
        raise ParameterError(f"Need mu * kappa < 1, got {mu * kappa}")
    return min(math.sqrt(beta / (L + iota)), (1.0 - mu * kappa) / (kappa * (L + iota)), delta, delta_L)


def quadratic_contraction_constant(kappa: float, L: float, iota: float, mu: float) -> float:
    """kappa (L + iota) / (1 - mu kappa): d(p_{k+1}, p) <= this * d^2(p_k, p)."""
    _require_positive(kappa=kappa, L=L, iota=iota, mu=mu)
    if mu * kappa >= 1.0:
        raise ParameterError(f"Need mu * kappa < 1, got {mu * kappa}")
    return kappa * (L + iota) / (1.0 - mu * kappa)


def linear_parameters_admissible(kappa: float, mu: float, eps: float, iota: float,
                                 theta: float) -> bool:
    """mu kappa < 1 and kappa (eps + iota) < theta (1 - mu kappa)."""
    return mu * kappa < 1.0 and kappa * (eps + iota) < theta * (1.0 - mu * kappa)


# ── Semi-local certificate ───────────────────────────────────

@dataclass(frozen=True)
class SemiLocalConstants:
    sigma: float
    mu: float
    alpha: float
    beta: float
    theta: float
    eps: float
    iota: float
    delta: float

    @property
    def alpha_hat(self) -> float:
        return self.theta * (self.eps + self.iota)

    def violations(self) -> List[str]:
        """Broken conditions, empty when the bundle is admissible."""
        out = []
        for key in ("sigma", "mu", "alpha", "beta", "theta", "eps", "iota", "delta"):
            if not getattr(self, key) > 0.0:
                out.append(f"{key} must be positive")
        if out:
            return out
        if self.mu * self.sigma >= 1.0:
            out.append(f"mu*sigma = {self.mu * self.sigma:.6g} must be < 1")
        else:
            lower = self.sigma / (1.0 - self.mu * self.sigma)
            if not lower < self.theta:
                out.append(f"Theta = {self.theta:.6g} must exceed sigma/(1-mu*sigma) = {lower:.6g}")
        if self.theta > self.alpha / (2.0 * self.beta):
            out.append(f"Theta = {self.theta:.6g} must be <= alpha/(2 beta) = {self.alpha / (2.0 * self.beta):.6g}")
        if not self.eps + self.iota < 2.0 * self.beta / self.alpha:
            out.append(f"eps + iota = {self.eps + self.iota:.6g} must be < 2 beta/alpha")
        if self.alpha_hat >= 1.0:
            out.append(f"alpha_hat = {self.alpha_hat:.6g} must be < 1")
        return out


def semilocal_start_bound(consts: SemiLocalConstants) -> Tuple[float, float]:
    """
    (chi, r): the largest admissible ||y_0|| and the factor r with
    d(p_k, p_0) <= r ||y_0|| for every k, r = Theta (1 + iota) / (1 - alpha_hat).
    """
    a = consts.alpha_hat
    t = consts.theta * (1.0 + consts.iota)
    chi = min(
        consts.beta / t,
        consts.beta / (1.0 + consts.iota),
        consts.beta * (1.0 - a) / (a - a * a + 1.0),
        consts.delta * (1.0 - a) / t,
    )
    return chi, t / (1.0 - a)


def certificate_bounds(consts: SemiLocalConstants, y0_norm: float, k: int) -> Tuple[float, float, float]:
    """Right-hand sides of the distance-to-start, step-length and tail bounds at index k."""
    a = consts.alpha_hat
    scale = consts.theta * (1.0 + consts.iota) * y0_norm
    to_start = (1.0 - a ** k) / (1.0 - a) * scale
    step = a ** (k - 1) * scale if k >= 1 else float("nan")
    tail = a ** k / (1.0 - a) * scale
    return to_start, step, tail


@dataclass
class CertificateReport:
    valid: bool
    reasons: List[str] = field(default_factory=list)
    alpha_hat: float = float("nan")
    start_bound: float = float("nan")
    to_start: List[bool] = field(default_factory=list)
    step: List[bool] = field(default_factory=list)
    tail: List[bool] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.valid and all(self.to_start) and all(self.step) and all(self.tail)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "valid": self.valid,
            "passed": self.passed,
            "reasons": self.reasons,
            "alpha_hat": self.alpha_hat,
            "start_bound": self.start_bound,
            "to_start": self.to_start,
            "step": self.step,
            "tail": self.tail,
        }


def semilocal_certificate(consts: SemiLocalConstants, y0: Sequence[float], u0: Sequence[float],
                          history: Sequence[IterateRecord], slack: float = 1e-12) -> CertificateReport:
    """
    Check a finished run against the semi-local bounds:

      d(p_k, p_0)     <= (1 - a^k) / (1 - a) * Theta (1 + iota) ||y_0||
      d(p_k, p_{k-1}) <= a^(k-1) * Theta (1 + iota) ||y_0||
      d(p_k, p_hat)   <= a^k / (1 - a) * Theta (1 + iota) ||y_0||

    with a = Theta (eps + iota) and p_hat the final iterate. Failed preconditions
    make the certificate invalid; they are reported, never raised.
    """
    report = CertificateReport(valid=True, alpha_hat=consts.alpha_hat)
    report.reasons.extend(consts.violations())
    y0_norm = float(np.linalg.norm(y0))
    u0_norm = float(np.linalg.norm(u0))
    if u0_norm > consts.iota * y0_norm:
        report.reasons.append(f"||u0|| = {u0_norm:.6g} exceeds iota*||y0|| = {consts.iota * y0_norm:.6g}")
    if not history:
        report.reasons.append("empty history")
    if consts.alpha_hat < 1.0 and not consts.violations():
        chi, _ = semilocal_start_bound(consts)
        report.start_bound = chi
        if y0_norm > chi:
            report.reasons.append(f"||y0|| = {y0_norm:.6g} exceeds the admissible bound {chi:.6g}")
    if report.reasons:
        report.valid = False
        return report

    p0 = history[0].x
    final = history[-1].x
    for k, rec in enumerate(history):
        to_start, step, tail = certificate_bounds(consts, y0_norm, k)
        report.to_start.append(product_dist(rec.x, p0) <= to_start + slack)
        if k >= 1:
            report.step.append(product_dist(rec.x, history[k - 1].x) <= step + slack)
        report.tail.append(product_dist(rec.x, final) <= tail + slack)
    return report
