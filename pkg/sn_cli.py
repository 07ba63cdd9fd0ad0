"""
Self-Normalized Inference - Command Line

This is the entry point of the application.
Run a subcommand on a CSV time series and get a JSON report on stdout.

Usage:
    python sn_cli.py sn-test --input data.csv --theta0 0
    python sn_cli.py --help
"""

import sys

from sninference.cli import main

if __name__ == "__main__":
    sys.exit(main())
