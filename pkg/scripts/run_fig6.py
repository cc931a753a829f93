#!/usr/bin/env python3
"""Run the fig6 preset; pass extra CLI flags through (e.g. --jobs 2)."""
import sys

from crnsim.cli import main

if __name__ == "__main__":
    sys.exit(main(["experiment", "--preset", "fig6", *sys.argv[1:]]))
