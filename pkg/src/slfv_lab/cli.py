"""Command line: ``slfv-lab run | verify | print-config``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import KINDS, ConfigError, ExperimentConfig, default_config
from .harness import OUTPUT_ENV, output_root, run
from .verify import LEVELS, verify_suite


def _report(man) -> int:
    for c in man.checks:
        flag = "PASS" if c["passed"] else "FAIL"
        print(f"{flag}  {c['name']}  {c['value']}  {c['detail']}")
    status = "partial run" if man.partial else ("all checks passed" if man.passed else "failed: " + ", ".join(man.failed))
    print(f"{man.name}: {status}")
    return 0 if man.passed else 1


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="slfv-lab",
        description=f"SLFV / Anderson-Hamiltonian experiments. Outputs go under ${OUTPUT_ENV} (default ./slfv-lab-out).",
    )
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("config")
    p_ver = sub.add_parser("verify", help="run the release checks")
    p_ver.add_argument("--level", choices=LEVELS, default="fast")
    p_ver.add_argument("--seed", type=int, default=1)
    p_cfg = sub.add_parser("print-config", help="print a documented default config")
    p_cfg.add_argument("--kind", choices=KINDS, required=True)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    if args.cmd == "print-config":
        sys.stdout.write(default_config(args.kind).to_text())
        return 0
    if args.cmd == "run":
        try:
            cfg = ExperimentConfig.load(args.config)
        except (ConfigError, OSError) as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return 2
        return _report(run(cfg, output_root()))
    return _report(verify_suite(args.level, args.seed, output_root()))


if __name__ == "__main__":
    sys.exit(main())
