"""Oscillatory forcing study on a config: wraps `nnflow stability-study`."""
import sys

from nnflow.cli import main

if __name__ == "__main__":
    cfg = sys.argv[1] if len(sys.argv) > 1 else "configs/stability.json"
    sys.exit(main(["stability-study", cfg, *sys.argv[2:]]))
