"""Run every shipped config through the CLI into one output tree."""

import argparse
import sys
from pathlib import Path

from npns_lab.cli import main
from npns_lab.config import parse_config

ROOT = Path(__file__).resolve().parents[1]


def run(out: Path, workers: int) -> int:
    failures = 0
    for path in sorted((ROOT / "configs").glob("*.toml")):
        kind = parse_config(path.read_text(encoding="utf-8")).experiment.kind
        print(f"== {path.name} ({kind})", flush=True)
        code = main([kind, "--config", str(path), "--out", str(out / path.stem), "--workers", str(workers)])
        failures += code != 0
    return failures


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=ROOT / "out")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    sys.exit(1 if run(args.out, args.workers) else 0)
