"""
Command-line entry point.

    uv run python main.py run     --config experiments/case_a1.yaml [--config ...] [--seed N] [--out DIR]
    uv run python main.py rates   --config experiments/rate_scalar.yaml
    uv run python main.py mreg    --config experiments/mreg_ex1.yaml
    uv run python main.py certify --config experiments/certify_scalar.yaml
    uv run python main.py inspect results/case_a1_history.csv

Exit codes: 0 success, 1 solver or I/O failure, 2 configuration error.
"""

import os
import sys
import logging
import argparse
from typing import Dict, List, Optional

from .config import (
    KARCHER_KKT,
    KARCHER_RATE_STUDY,
    LOG_LEVEL,
    MREG_PROBE,
    SCALAR_RATE_STUDY,
    SEMILOCAL_CHECK,
    ExperimentConfig,
    load_experiment_config,
)
from .errors import ConfigError, GenEqError
from .experiments import (
    emit_outputs,
    format_rate_table,
    rate_rows_to_dicts,
    run_batch,
    run_probe,
    run_rate_study,
    run_semilocal_check,
    write_json_report,
)
from .inspect_history import inspect_history

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

COMMAND_KINDS = {
    "run": (KARCHER_KKT,),
    "rates": (SCALAR_RATE_STUDY, KARCHER_RATE_STUDY),
    "mreg": (MREG_PROBE,),
    "certify": (SEMILOCAL_CHECK,),
}


def setup_logging(level: str = LOG_LEVEL):
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s'
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Inexact Newton experiments for generalized equations on manifolds")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("run", "Constrained Karcher mean cases (summary table + history CSVs)"),
        ("rates", "Convergence-rate study under several inexactness rules"),
        ("mreg", "Metric regularity probes on the SPD cone"),
        ("certify", "Semi-local certificate check of a Newton run"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", action="append", required=True, metavar="PATH",
                       help="Experiment YAML file (repeatable)")
        p.add_argument("--seed", type=int, default=None, help="Override the seed of every config")
        p.add_argument("--out", default=None, metavar="DIR", help="Override the output directory")

    p = sub.add_parser("inspect", help="Analyse a history CSV written by 'run'")
    p.add_argument("path", help="History CSV file")
    return parser


def load_configs(command: str, paths: List[str], seed: Optional[int],
                 out_dir: Optional[str]) -> List[ExperimentConfig]:
    configs = [load_experiment_config(p, seed=seed, out_dir=out_dir) for p in paths]
    allowed = COMMAND_KINDS[command]
    for c in configs:
        if c.kind not in allowed:
            raise ConfigError(f"'{command}' cannot run {c.name} of kind '{c.kind}' (expected {allowed})")
    return configs


# ── Commands ─────────────────────────────────────────────────

def cmd_run(configs: List[ExperimentConfig]) -> int:
    results = run_batch(configs)
    # one summary per output directory, cases kept in config order
    by_dir: Dict[str, list] = {}
    for config, result in zip(configs, results):
        by_dir.setdefault(config.out_dir, []).append(result)
    code = EXIT_OK
    for out_dir, group in by_dir.items():
        code = max(code, emit_outputs(group, out_dir))
    return code


def cmd_rates(configs: List[ExperimentConfig]) -> int:
    code = EXIT_OK
    for config in configs:
        rows = run_rate_study(config)
        print(format_rate_table(rows))
        os.makedirs(config.out_dir, exist_ok=True)
        write_json_report({"name": config.name, "rows": rate_rows_to_dicts(rows)},
                          os.path.join(config.out_dir, f"{config.name}_rates.json"))
        if any(r.status != "Converged" for r in rows):
            code = EXIT_FAILURE
    return code


def cmd_mreg(configs: List[ExperimentConfig]) -> int:
    code = EXIT_OK
    for config in configs:
        report = run_probe(config)
        os.makedirs(config.out_dir, exist_ok=True)
        write_json_report(report.to_dict(), os.path.join(config.out_dir, f"{config.name}_probe.json"))
        print(f"{config.name:<20} | {report.variant:<12} | violations {report.violations:<5} | "
              f"tightness {report.tightness:.6f} | excluded {report.excluded}")
        if report.violations:
            code = EXIT_FAILURE
    return code


def cmd_certify(configs: List[ExperimentConfig]) -> int:
    code = EXIT_OK
    for config in configs:
        report, cert = run_semilocal_check(config)
        payload = cert.to_dict()
        payload.update({"name": config.name, "status": report.status, "iterations": report.iterations})
        os.makedirs(config.out_dir, exist_ok=True)
        write_json_report(payload, os.path.join(config.out_dir, f"{config.name}_certificate.json"))
        print(f"{config.name:<20} | valid {cert.valid!s:<5} | passed {cert.passed!s:<5} | "
              f"alpha_hat {cert.alpha_hat:.4g}")
        if not cert.passed:
            code = EXIT_FAILURE
    return code


HANDLERS = {"run": cmd_run, "rates": cmd_rates, "mreg": cmd_mreg, "certify": cmd_certify}


def main(argv: Optional[List[str]] = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)

    if args.command == "inspect":
        try:
            inspect_history(args.path)
        except (OSError, GenEqError) as e:
            logger.error(f"Cannot inspect {args.path}: {e}")
            return EXIT_FAILURE
        return EXIT_OK

    # 1. Load configs
    try:
        configs = load_configs(args.command, args.config, args.seed, args.out)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG

    # 2. Run; --out was already applied to every config
    try:
        return HANDLERS[args.command](configs)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG
    except GenEqError as e:
        logger.error(f"Solver failure: {e}")
        return EXIT_FAILURE
    except OSError as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
