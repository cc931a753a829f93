#!/usr/bin/env python3
"""Solve the desk-scale single-channel instance exactly and print its gain."""
import sys

from crnsim.cli import main

if __name__ == "__main__":
    sys.exit(main(["solve", "--preset", "tiny", *sys.argv[1:]]))
