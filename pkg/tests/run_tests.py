#!/usr/bin/env python3
"""
Test runner for qpburst.

    python run_tests.py --type fast          # everything except the statistical acceptance runs
    python run_tests.py --type acceptance    # only the slow, seeded acceptance runs
    python run_tests.py --coverage --parallel
"""

import argparse
import importlib.util
import subprocess
import sys
from pathlib import Path

TESTS_DIR = Path(__file__).parent

MARKERS = {
    "all": None,
    "unit": "unit",
    "integration": "integration",
    "fast": "not slow",
    "acceptance": "slow",
}

PLUGINS = {
    "coverage": ("pytest_cov", "pytest-cov"),
    "parallel": ("xdist", "pytest-xdist"),
}


def build_command(test_type="all", verbose=False, coverage=False, parallel=False):
    cmd = [sys.executable, "-m", "pytest"]
    if verbose:
        cmd.append("-v")
    if coverage:
        cmd.extend(["--cov=qpburst", "--cov-report=html", "--cov-report=term"])
    if parallel:
        cmd.extend(["-n", "auto"])
    if MARKERS[test_type]:
        cmd.extend(["-m", MARKERS[test_type]])
    cmd.append(str(TESTS_DIR))
    return cmd


def _missing(module, package):
    if importlib.util.find_spec(module) is None:
        print(f"Error: {package} not found. Please install it:")
        print(f"pip install {package}")
        return True
    return False


def main():
    parser = argparse.ArgumentParser(description="Run the qpburst test suite")
    parser.add_argument("--type", choices=sorted(MARKERS), default="all", help="Subset to run (default: all)")
    parser.add_argument("-v", "--verbose", action="store_true", help="Verbose output")
    parser.add_argument("--coverage", action="store_true", help="Run with coverage reporting")
    parser.add_argument("--parallel", action="store_true", help="Run tests in parallel (requires pytest-xdist)")
    args = parser.parse_args()

    if _missing("pytest", "pytest"):
        return 1
    for flag, (module, package) in PLUGINS.items():
        if getattr(args, flag) and _missing(module, package):
            return 1

    cmd = build_command(args.type, args.verbose, args.coverage, args.parallel)
    print(f"Running command: {' '.join(cmd)}")
    return subprocess.run(cmd, cwd=TESTS_DIR).returncode


if __name__ == "__main__":
    sys.exit(main())
