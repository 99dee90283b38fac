"""Regenerate the demo corpus, run the demo study, and print the reduction table.

Usage: python3 scripts/run_demo.py [--out-dir runs/demo] [--jobs N]
Run from the repository root.
"""
import argparse
import sys

from evgrid.cli import main


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out-dir", default="runs/demo")
    p.add_argument("--jobs", type=int)
    p.add_argument("--skip-generate", action="store_true", help="reuse data/demo as shipped")
    args = p.parse_args(argv)
    if not args.skip_generate:
        code = main(["generate", "configs/demo_corpus.yaml", "--out-dir", "data/demo"])
        if code:
            return code
    jobs = ["--jobs", str(args.jobs)] if args.jobs else []
    return main(["run", "configs/demo.yaml", "--out-dir", args.out_dir, *jobs])


if __name__ == "__main__":
    sys.exit(run())
