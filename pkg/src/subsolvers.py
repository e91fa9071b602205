"""
subsolvers.py — per-iteration Newton step subproblems

Every step works in frame coordinates: find x = (alpha, nu) and z in F so that
z + c + J x - u is as small as possible, where c = f(p_k), J the differential
matrix and u the inexactness residual chosen by the rule.

  solve_linear_step — F = {0}: least squares on c + J x - u
  solve_cone_step   — F = -K: exact enumeration over the inequality rows
  solve_kkt_step    — complementarity slots: exact enumeration over the slots
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import GenEqError, SingularStepError, SubproblemInfeasibleError
from .geneq import KKT, NEG_ORTHANT, ZERO, SetValuedPart

logger = logging.getLogger(__name__)

MAX_SLOTS = 10
SINGULAR_RATIO = 1e-14     # s_min / s_max below this -> singular linear step
COND_LIMIT = 1e14          # branch normal equations above this get regularized
RIDGE = 1e-12
SIGN_TOL = 1e-12
TIE_TOL = 1e-14

# Per-slot branch states, in tie-break order.
FREE_MULTIPLIER = 0     # z = 0, mu + nu >= 0 free
FREE_SLACK = 1          # mu + nu = 0, z >= 0 free
BOTH_ZERO = 2           # z = 0 and mu + nu = 0


@dataclass(frozen=True)
class StepRequest:
    J: np.ndarray
    c: np.ndarray
    u: np.ndarray
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slots: Tuple[int, ...] = ()

    def __post_init__(self):
        J = np.atleast_2d(np.asarray(self.J, dtype=float))
        c = np.asarray(self.c, dtype=float).reshape(-1)
        u = np.asarray(self.u, dtype=float).reshape(-1)
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        if J.shape[0] != c.size or u.size != c.size:
            raise GenEqError(f"Step dimensions disagree: J {J.shape}, c {c.size}, u {u.size}")
        if len(self.slots) > mu.size:
            raise GenEqError("Every complementarity slot needs a multiplier")
        if np.any(mu[:len(self.slots)] < 0.0):
            raise GenEqError(f"Complementarity multipliers must be nonnegative, got {mu}")
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "slots", tuple(int(s) for s in self.slots))

    @property
    def n_frame(self) -> int:
        """Columns that belong to the manifold step; the rest are multiplier increments."""
        return self.J.shape[1] - self.mu.size


@dataclass(frozen=True)
class StepResult:
    alpha: np.ndarray
    nu: np.ndarray
    z: np.ndarray
    objective: float
    residual: float
    branch: Tuple[int, ...] = ()
    regularized: bool = False


def _objective(req: StepRequest, x: np.ndarray, z: np.ndarray) -> Tuple[float, float]:
    r = z + req.c + req.J @ x - req.u
    n = float(np.linalg.norm(r))
    return 0.5 * n * n, n


def _split(req: StepRequest, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return x[:req.n_frame], x[req.n_frame:]


# ── F = {0} ──────────────────────────────────────────────────

def solve_linear_step(req: StepRequest) -> StepResult:
    """alpha minimizing ||c + J alpha - u||; the caller checks the achieved residual."""
    sv = np.linalg.svd(req.J, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0 or sv[-1] / sv[0] < SINGULAR_RATIO:
        raise SingularStepError(f"Differential is rank deficient (singular values {sv})")
    x, *_ = np.linalg.lstsq(req.J, req.u - req.c, rcond=None)
    z = np.zeros_like(req.c)
    obj, res = _objective(req, x, z)
    alpha, nu = _split(req, x)
    return StepResult(alpha, nu, z, obj, res)


# ── Branch machinery ─────────────────────────────────────────

@dataclass(frozen=True)
class _Branch:
    x: np.ndarray
    z: np.ndarray
    objective: float
    residual: float
    branch: Tuple[int, ...]
    regularized: bool


def _solve_branch(req: StepRequest, fixed: dict, dropped_rows: Sequence[int]
                  ) -> Tuple[np.ndarray, bool]:
    """
    Least squares over the free columns with `fixed` columns pinned to given
    values and `dropped_rows` absorbed by their free slack. Normal equations,
    ridge-regularized when ill conditioned.
    """
    n = req.J.shape[1]
    free = [j for j in range(n) if j not in fixed]
    rows = [i for i in range(req.J.shape[0]) if i not in dropped_rows]
    x = np.zeros(n)
    for j, val in fixed.items():
        x[j] = val
    if not free:
        return x, False
    A = req.J[np.ix_(rows, free)]
    b = (req.c - req.u + req.J @ x)[rows]
    N = A.T @ A
    regularized = False
    if not rows or np.linalg.cond(N) > COND_LIMIT:
        N = N + RIDGE * np.eye(len(free))
        regularized = True
    x[free] = np.linalg.solve(N, -A.T @ b)
    return x, regularized


def _select(candidates: List[_Branch], what: str) -> _Branch:
    if not candidates:
        raise SubproblemInfeasibleError(f"Every {what} branch is infeasible")
    best = min(c.objective for c in candidates)
    ties = [c for c in candidates if c.objective <= best + TIE_TOL * (1.0 + best)]
    chosen = min(ties, key=lambda c: c.branch)
    if chosen.regularized:
        logger.warning(f"{what} branch {chosen.branch} used a regularized normal system")
    return chosen


# ── F = -K ───────────────────────────────────────────────────

def solve_cone_step(req: StepRequest, n_inequalities: int) -> StepResult:
    """
    Rows below n_inequalities take a slack z_i >= 0, the rest z_i = 0. Each row
    either keeps z_i = 0 (state 0) or frees its slack (state 1, row absorbed).
    """
    if n_inequalities > MAX_SLOTS:
        raise GenEqError(f"Branch enumeration supports at most {MAX_SLOTS} inequality rows")
    candidates = []
    for branch in itertools.product((0, 1), repeat=n_inequalities):
        dropped = [i for i, state in enumerate(branch) if state == 1]
        x, reg = _solve_branch(req, {}, dropped)
        r = req.c + req.J @ x - req.u
        z = np.zeros_like(req.c)
        feasible = True
        for i in dropped:
            if -r[i] < -SIGN_TOL:
                feasible = False
                break
            z[i] = max(-r[i], 0.0)
        if not feasible:
            continue
        obj, res = _objective(req, x, z)
        candidates.append(_Branch(x, z, obj, res, branch, reg))
    chosen = _select(candidates, "cone")
    alpha, nu = _split(req, chosen.x)
    return StepResult(alpha, nu, chosen.z, chosen.objective, chosen.residual,
                      chosen.branch, chosen.regularized)


# ── Complementarity slots ────────────────────────────────────

def solve_kkt_step(req: StepRequest) -> StepResult:
    """
    minimize 1/2 ||z + c + J x - u||^2 subject to, per slot j on row r_j,
    z_j >= 0, mu_j + nu_j >= 0 and z_j (mu_j + nu_j) = 0.

    All 3^m1 branches are solved; the feasible one with the least objective
    wins, ties going to the lexicographically smallest branch.
    """
    m1 = len(req.slots)
    if m1 > MAX_SLOTS:
        raise GenEqError(f"Branch enumeration supports at most {MAX_SLOTS} complementarity slots")
    n_frame = req.n_frame
    candidates = []
    for branch in itertools.product((FREE_MULTIPLIER, FREE_SLACK, BOTH_ZERO), repeat=m1):
        fixed = {n_frame + j: -req.mu[j] for j, state in enumerate(branch) if state != FREE_MULTIPLIER}
        dropped = [req.slots[j] for j, state in enumerate(branch) if state == FREE_SLACK]
        x, reg = _solve_branch(req, fixed, dropped)
        r = req.c + req.J @ x - req.u
        z = np.zeros_like(req.c)
        feasible = True
        for j, state in enumerate(branch):
            col = n_frame + j
            if state == FREE_MULTIPLIER:
                if req.mu[j] + x[col] < -SIGN_TOL:
                    feasible = False
                    break
                x[col] = max(x[col], -req.mu[j])
            elif state == FREE_SLACK:
                slack = -r[req.slots[j]]
                if slack < -SIGN_TOL:
                    feasible = False
                    break
                z[req.slots[j]] = max(slack, 0.0)
        if not feasible:
            continue
        obj, res = _objective(req, x, z)
        candidates.append(_Branch(x, z, obj, res, branch, reg))
    chosen = _select(candidates, "complementarity")
    alpha, nu = _split(req, chosen.x)
    return StepResult(alpha, nu, chosen.z, chosen.objective, chosen.residual,
                      chosen.branch, chosen.regularized)


def solve_step(part: SetValuedPart, req: StepRequest) -> StepResult:
    """Dispatch on the set-valued part of the problem."""
    if part.kind == ZERO:
        return solve_linear_step(req)
    if part.kind == NEG_ORTHANT:
        return solve_cone_step(req, len(part.slots))
    if part.kind == KKT:
        return solve_kkt_step(req)
    raise GenEqError(f"No step solver for set-valued part '{part.kind}'")


def complementarity_gap(result: StepResult, req: StepRequest) -> float:
    """max_j |z_j (mu_j + nu_j)| over the slots (0 when there are none)."""
    gaps = [abs(result.z[r] * (req.mu[j] + result.nu[j])) for j, r in enumerate(req.slots)]
    return max(gaps) if gaps else 0.0


def kkt_objective(req: StepRequest, alpha: Sequence[float], nu: Sequence[float],
                  z: Optional[Sequence[float]] = None) -> float:
    """1/2 ||z + c + J (alpha, nu) - u||^2 for externally supplied candidates."""
    x = np.concatenate([np.asarray(alpha, dtype=float), np.asarray(nu, dtype=float)])
    zz = np.zeros_like(req.c) if z is None else np.asarray(z, dtype=float)
    return _objective(req, x, zz)[0]
