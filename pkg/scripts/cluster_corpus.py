"""Generate a random synthetic corpus and cluster it.

Usage: python3 scripts/cluster_corpus.py [--count 60] [--seed 0] [--out-dir runs/cluster]
"""
import argparse
import sys
import tempfile
from pathlib import Path

import yaml

from evgrid.cli import main


def run(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--count", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="runs/cluster")
    p.add_argument("--k-max", type=int, default=10)
    args = p.parse_args(argv)
    out = Path(args.out_dir)
    with tempfile.TemporaryDirectory() as tmp:
        spec = Path(tmp) / "corpus.yaml"
        spec.write_text(yaml.safe_dump({"seed": args.seed, "random": {"count": args.count, "n_buses": [8, 60]}}))
        code = main(["generate", str(spec), "--out-dir", str(out / "corpus")])
    if code:
        return code
    return main(["cluster", str(out / "corpus" / "feeders"), "--k-max", str(args.k_max),
                 "--seed", str(args.seed), "--out-dir", str(out)])


if __name__ == "__main__":
    sys.exit(run())
