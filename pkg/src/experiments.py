"""
Experiment runners behind the CLI.

  run_case            — constrained Karcher mean on S^3 (KKT system), one config
  run_batch           — several cases on worker threads, reduced in config order
  run_rate_study      — one problem under several inexactness rules, rate table
  run_semilocal_check — scalar Newton run checked against semi-local bounds
  run_probe           — metric regularity probe
  emit_outputs        — summary table (text + CSV) and per-case history CSVs
"""

import os
import csv
import json
import math
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import (
    KARCHER_RATE_STUDY,
    SCALAR_RATE_STUDY,
    ExperimentConfig,
    build_rule,
)
from .errors import GenEqError, InsufficientDataError
from .geneq import (
    GenEqProblem,
    ProductPoint,
    build_constrained_karcher,
    build_scalar_problem,
    evaluate,
)
from .manifold import Chart, ManifoldPoint
from .mreglab import LN_TR, LN_TR_SET, ProbeReport, RegularityProbe, inv_tr_sigma, verify_regularity
from .newton import (
    INCONCLUSIVE,
    CertificateReport,
    Exact,
    InexactnessRule,
    SemiLocalConstants,
    SolveReport,
    check_rule_conformance,
    estimate_rate,
    export_history_csv,
    semilocal_certificate,
    solve,
)
from .point_cloud import karcher_points, sphere_point

logger = logging.getLogger(__name__)


# ── Karcher cases ────────────────────────────────────────────

# status of a case that raised before the solver could report
FAILED = "Failed"


@dataclass
class SummaryRow:
    case: str
    status: str
    p_star: List[float]
    mu_star: float
    g_star: float
    mu_g: float
    grad_norm: float
    iterations: int
    error: Optional[str] = None


@dataclass
class CaseResult:
    row: SummaryRow
    report: Optional[SolveReport]
    problem: Optional[GenEqProblem]


def solve_karcher(name: str, points: Sequence[ManifoldPoint], center: ManifoldPoint, radius: float,
                  rule: InexactnessRule, mu0: float = 0.0, start: Optional[ManifoldPoint] = None,
                  tol_phi: float = 1e-12, tol_g: float = 1e-12, max_iters: int = 100) -> CaseResult:
    """Solve the KKT system from p0 = start (default: the first sample) and mu0."""
    problem = build_constrained_karcher(points, center, radius, name=name)
    x0 = problem.point(points[0] if start is None else start, [mu0])
    report = solve(problem, x0, rule, tol_phi=tol_phi, tol_g=tol_g, max_iters=max_iters)
    fx = evaluate(problem, report.final)
    mu = float(report.final.mu[0])
    g = float(fx[3])
    row = SummaryRow(
        case=name,
        status=report.status,
        p_star=[float(c) for c in report.final.point.coords],
        mu_star=mu,
        g_star=g,
        mu_g=mu * g,
        grad_norm=float(np.linalg.norm(fx[:3])),
        iterations=report.iterations,
        error=report.error,
    )
    return CaseResult(row, report, problem)


def run_case(config: ExperimentConfig) -> CaseResult:
    logger.info(f"Running case '{config.name}': N={config.n_points}, r={config.radius}, seed={config.seed}")
    points = karcher_points(config.n_points, config.seed)
    return solve_karcher(
        config.name,
        points,
        sphere_point(config.center),
        config.radius,
        build_rule(config.rule),
        mu0=config.mu0,
        tol_phi=config.tol_phi,
        tol_g=config.tol_g,
        max_iters=config.max_iters,
    )


def failed_case(name: str, error: Exception) -> CaseResult:
    """Summary row for a case that raised before producing a report."""
    nan = float("nan")
    row = SummaryRow(case=name, status=FAILED, p_star=[], mu_star=nan, g_star=nan, mu_g=nan,
                     grad_norm=nan, iterations=0, error=f"{type(error).__name__}: {error}")
    return CaseResult(row, None, None)


def run_batch(configs: Sequence[ExperimentConfig]) -> List[CaseResult]:
    """One worker thread per case; results come back in config order."""
    results: Dict[int, CaseResult] = {}

    def worker(i: int, config: ExperimentConfig):
        try:
            results[i] = run_case(config)
        except Exception as e:
            logger.error(f"Case '{config.name}' failed: {type(e).__name__}: {e}")
            results[i] = failed_case(config.name, e)

    threads = [
        threading.Thread(target=worker, args=(i, c), name=f"case-{c.name}", daemon=True)
        for i, c in enumerate(configs)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return [results[i] for i in range(len(configs))]


# ── Output ───────────────────────────────────────────────────

SUMMARY_COLUMNS = [
    "case", "status", "p_star", "mu_star", "g_star", "mu_g", "grad_norm", "iterations", "error",
]


def _fmt(value: float) -> str:
    return "%.17g" % value


def format_summary_table(rows: Sequence[SummaryRow]) -> str:
    """Aligned plain-text summary, one row per case."""
    lines = [
        f"{'CASE':<12} | {'STATUS':<20} | {'p*':<44} | {'mu*':<12} | {'g(p*)':<12} | "
        f"{'mu*g(p*)':<12} | {'|grad L|':<10} | {'ITERS':<5}",
        "-" * 150,
    ]
    for r in rows:
        p = "[" + ", ".join(f"{c:.6f}" for c in r.p_star) + "]"
        lines.append(
            f"{r.case:<12} | {r.status:<20} | {p:<44} | {r.mu_star:<12.4e} | {r.g_star:<12.4e} | "
            f"{r.mu_g:<12.4e} | {r.grad_norm:<10.3e} | {r.iterations:<5}"
        )
        if r.error:
            lines.append(f"{'':<12}   error: {r.error}")
    return "\n".join(lines)


def write_summary_csv(rows: Sequence[SummaryRow], path: str):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_COLUMNS)
        for r in rows:
            writer.writerow([r.case, r.status, " ".join(_fmt(c) for c in r.p_star), _fmt(r.mu_star),
                             _fmt(r.g_star), _fmt(r.mu_g), _fmt(r.grad_norm), r.iterations, r.error or ""])


def write_json_report(payload: Dict[str, Any], path: str):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    logger.info(f"Wrote {path}")


def emit_outputs(results: Sequence[CaseResult], out_dir: str) -> int:
    """
    Write summary.txt, summary.csv and <case>_history.csv into out_dir.
    Returns the exit code: 0 when every case converged, 1 otherwise.
    OSError propagates to the caller.
    """
    os.makedirs(out_dir, exist_ok=True)
    rows = [r.row for r in results]
    for r in results:
        if r.report is None:
            continue
        path = os.path.join(out_dir, f"{r.row.case}_history.csv")
        export_history_csv(r.report.history, path)
        logger.info(f"Wrote {path}")
    table = format_summary_table(rows)
    with open(os.path.join(out_dir, "summary.txt"), "w") as f:
        f.write(table + "\n")
    write_summary_csv(rows, os.path.join(out_dir, "summary.csv"))
    print(table)

    failed = [r.case for r in rows if r.status != "Converged"]
    if failed:
        logger.error(f"{len(failed)} case(s) did not converge: {failed}")
        return 1
    logger.info(f"All {len(rows)} case(s) converged; outputs in {out_dir}")
    return 0


# ── Rate studies ─────────────────────────────────────────────

@dataclass
class RateRow:
    problem: str
    rule: str
    status: str
    iterations: int
    order: float
    ratio: float
    classification: str
    samples: int
    nonconforming: List[int] = field(default_factory=list)


def _rule_spec(name: str, config: ExperimentConfig) -> Dict[str, Any]:
    if name == config.rule.get("kind"):
        spec = dict(config.rule)
    else:
        spec = {"kind": name}
    spec.setdefault("iota", config.iota)
    return spec


def _rate_problem(config: ExperimentConfig) -> Tuple[GenEqProblem, ProductPoint, ProductPoint]:
    """Problem, start point and reference solution for a rate study."""
    if config.kind == SCALAR_RATE_STUDY:
        problem = build_scalar_problem(config.coefficients, name=config.name)
        if problem.solution is None:
            raise GenEqError(f"{config.name}: polynomial has no real root")
        start = 1.0 if config.start is None else float(config.start)
        x0 = problem.point(ManifoldPoint(Chart.euclid(1), [start]))
        return problem, x0, problem.solution

    points = karcher_points(config.n_points, config.seed)
    problem = build_constrained_karcher(points, sphere_point(config.center), config.radius, name=config.name)
    x0 = problem.point(points[0], [config.mu0])
    reference = solve(problem, x0, Exact(), tol_phi=config.tol_phi, tol_g=config.tol_g,
                      max_iters=config.max_iters)
    if not reference.converged:
        raise GenEqError(f"{config.name}: reference run did not converge ({reference.status})")
    return problem, x0, reference.final


def run_rate_study(config: ExperimentConfig) -> List[RateRow]:
    """The same problem under each configured rule, with estimated order and ratio."""
    if config.kind not in (SCALAR_RATE_STUDY, KARCHER_RATE_STUDY):
        raise GenEqError(f"{config.name}: not a rate study ({config.kind})")
    problem, x0, reference = _rate_problem(config)
    rows = []
    for name in config.rules:
        rule = build_rule(_rule_spec(name, config), reference)
        report = solve(problem, x0, rule, tol_phi=config.tol_phi, tol_g=config.tol_g,
                       max_iters=config.max_iters)
        try:
            est = estimate_rate(report.history, reference)
            order, ratio, kind, samples = est.order, est.ratio, est.classification, est.samples
        except InsufficientDataError as e:
            logger.warning(f"[{config.name}] {name}: {e}")
            order, ratio, kind, samples = math.nan, math.nan, INCONCLUSIVE, 0
        rows.append(RateRow(config.name, rule.name, report.status, report.iterations, order, ratio,
                            kind, samples, check_rule_conformance(problem, report.history, rule)))
    return rows


def format_rate_table(rows: Sequence[RateRow]) -> str:
    lines = [
        f"{'PROBLEM':<14} | {'RULE':<20} | {'STATUS':<20} | {'ITERS':<5} | {'ORDER':<7} | "
        f"{'RATIO':<10} | {'CLASS':<12} | {'NONCONF':<7}",
        "-" * 115,
    ]
    for r in rows:
        lines.append(
            f"{r.problem:<14} | {r.rule:<20} | {r.status:<20} | {r.iterations:<5} | {r.order:<7.3f} | "
            f"{r.ratio:<10.3e} | {r.classification:<12} | {len(r.nonconforming):<7}"
        )
    return "\n".join(lines)


def rate_rows_to_dicts(rows: Sequence[RateRow]) -> List[Dict[str, Any]]:
    return [
        {"problem": r.problem, "rule": r.rule, "status": r.status, "iterations": r.iterations,
         "order": r.order, "ratio": r.ratio, "classification": r.classification,
         "samples": r.samples, "nonconforming": r.nonconforming}
        for r in rows
    ]


# ── Semi-local check ─────────────────────────────────────────

def run_semilocal_check(config: ExperimentConfig) -> Tuple[SolveReport, CertificateReport]:
    """Scalar Newton run from `start`, then the semi-local certificate on its history."""
    problem = build_scalar_problem(config.coefficients, name=config.name)
    start = 1.5 if config.start is None else float(config.start)
    x0 = problem.point(ManifoldPoint(Chart.euclid(1), [start]))
    rule = build_rule(config.rule)
    report = solve(problem, x0, rule, tol_phi=config.tol_phi, tol_g=config.tol_g,
                   max_iters=config.max_iters)
    consts = SemiLocalConstants(**{k: float(v) for k, v in config.constants.items()})
    y0 = evaluate(problem, x0)
    u0 = report.history[0].u if report.history and report.history[0].u is not None else np.zeros_like(y0)
    cert = semilocal_certificate(consts, y0, u0, report.history)
    level = logging.INFO if cert.passed else logging.WARNING
    logger.log(level, f"[{config.name}] certificate valid={cert.valid} passed={cert.passed}"
                      + (f" reasons={cert.reasons}" if cert.reasons else ""))
    return report, cert


# ── Regularity probes ────────────────────────────────────────

def probe_from_config(config: ExperimentConfig) -> RegularityProbe:
    n = config.matrix_size
    if config.sigma == "auto":
        if config.variant in (LN_TR, LN_TR_SET):
            sigma = math.sqrt(n)
        else:
            sigma = inv_tr_sigma(n, config.ball_radius)
    else:
        sigma = float(config.sigma)
    return RegularityProbe(
        variant=config.variant,
        n=n,
        sigma=sigma,
        ball_radius=config.ball_radius,
        x_range=(float(config.x_range[0]), float(config.x_range[1])),
        samples=config.samples,
        seed=config.seed,
        center=config.center_scale * np.eye(n),
    )


def run_probe(config: ExperimentConfig) -> ProbeReport:
    return verify_regularity(probe_from_config(config))
