"""
Iterate-history inspector
=========================
Reads a history CSV written by `run` and reports the estimated convergence
rate, whether the terminal residuals decrease monotonically, and how the
inexactness residual ||u_k|| compares with the distance to the final iterate.

Usage:
    uv run python main.py inspect results/case_a3_history.csv
"""

import math
import logging
from typing import Any, Dict, List, Tuple

from .errors import InsufficientDataError
from .newton import estimate_rate_from_distances, read_history_csv

logger = logging.getLogger(__name__)

# ── Styling helpers ──────────────────────────────────────────

BOLD   = "\033[1m"
DIM    = "\033[2m"
RED    = "\033[91m"
GREEN  = "\033[92m"
YELLOW = "\033[93m"
CYAN   = "\033[96m"
RESET  = "\033[0m"
CHECK  = f"{GREEN}✓{RESET}"
WARN   = f"{YELLOW}⚠{RESET}"
CROSS  = f"{RED}✗{RESET}"
INFO   = f"{CYAN}ℹ{RESET}"

SECTION_SEP = f"\n{BOLD}{'═' * 70}{RESET}"

TERMINAL_WINDOW = 5


def header(title: str):
    print(f"{SECTION_SEP}")
    print(f"  {BOLD}{title}{RESET}")
    print(f"{'═' * 70}\n")


def sub_header(title: str):
    print(f"\n  {BOLD}{CYAN}{title}{RESET}")
    print(f"  {DIM}{'─' * 60}{RESET}")


# ── Analyzers ────────────────────────────────────────────────

def terminal_monotone(rows: List[Dict[str, float]], window: int = TERMINAL_WINDOW) -> bool:
    """||Phi|| strictly decreasing over the last `window` iterates."""
    tail = [r["norm_phi"] for r in rows[-window:]]
    return len(tail) >= 2 and all(b < a for a, b in zip(tail, tail[1:]))


def inexactness_ratios(rows: List[Dict[str, float]]) -> List[Tuple[int, float]]:
    """(k, ||u_k|| / d(p_k, p_final)) for every iterate that took a step away from the final point."""
    out = []
    for r in rows:
        u, d = r["u_norm"], r["dist_to_final"]
        if not math.isnan(u) and d > 0.0:
            out.append((r["k"], u / d))
    return out


def analyse_history(rows: List[Dict[str, float]]) -> Dict[str, Any]:
    """
    Structured analysis of one history. Alerts are (level, message) pairs with
    level in {"error", "warning", "info"}.
    """
    analysis: Dict[str, Any] = {
        "iterates": len(rows),
        "rate": None,
        "monotone_tail": False,
        "ratios": [],
        "alerts": [],
    }
    if not rows:
        analysis["alerts"].append(("error", "History is empty"))
        return analysis

    # The final iterate stands in for the solution; the two before it are dropped.
    distances = [r["dist_to_final"] for r in rows[:-2]]
    try:
        analysis["rate"] = estimate_rate_from_distances(distances)
    except InsufficientDataError as e:
        analysis["alerts"].append(("warning", f"No rate estimate: {e}"))

    analysis["monotone_tail"] = terminal_monotone(rows)
    if not analysis["monotone_tail"]:
        analysis["alerts"].append(("warning", f"||Phi|| not strictly decreasing over the last {TERMINAL_WINDOW} iterates"))

    analysis["ratios"] = inexactness_ratios(rows)
    final = rows[-1]
    if not math.isnan(final["g_value"]) and final["g_value"] > 0.0:
        analysis["alerts"].append(("info", f"Final constraint value g = {final['g_value']:.3e} is positive"))
    return analysis


# ── Report ───────────────────────────────────────────────────

def inspect_history(path: str) -> Dict[str, Any]:
    rows = read_history_csv(path)
    analysis = analyse_history(rows)

    header(f"Iterate history — {path}")
    print(f"  {INFO} Iterates: {BOLD}{analysis['iterates']}{RESET}")
    if rows:
        last = rows[-1]
        print(f"  {INFO} Final:    |Phi| = {last['norm_phi']:.3e}   residual = {last['residual']:.3e}   "
              f"mu = {last['mu']:.6g}   g = {last['g_value']:.3e}")

    sub_header("Convergence rate")
    rate = analysis["rate"]
    if rate is None:
        print(f"  {WARN} Not enough usable iterates")
    else:
        mark = WARN if rate.classification == "Inconclusive" else CHECK
        print(f"  {mark} {BOLD}{rate.classification}{RESET}: order {rate.order:.3f}, "
              f"ratio {rate.ratio:.3e} ({rate.samples} distances)")

    sub_header("Terminal residuals")
    mark = CHECK if analysis["monotone_tail"] else CROSS
    print(f"  {mark} ||Phi|| strictly decreasing over the last {TERMINAL_WINDOW} iterates: "
          f"{analysis['monotone_tail']}")

    sub_header("Inexactness vs distance to final iterate")
    if not analysis["ratios"]:
        print(f"  {DIM}no steps recorded{RESET}")
    for k, ratio in analysis["ratios"]:
        print(f"  k={k:<3} ||u||/d = {ratio:.3e}")

    for level, message in analysis["alerts"]:
        icon = {"error": CROSS, "warning": WARN}.get(level, INFO)
        print(f"  {icon} {message}")
    print()
    return analysis
