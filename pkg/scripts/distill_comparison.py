#!/usr/bin/env python3
"""Compare backbone-only retrieval with and without the distillation terms,
averaged over seeds.  The distilled backbones should match or beat the plain
ones while skipping the fusion and temporal stages at inference."""

import argparse
import json
from pathlib import Path

from dualreid.benchmark import run_distillation_comparison


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs/distill_comparison"))
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--epochs", type=int, default=30)
    args = parser.parse_args()

    record = run_distillation_comparison(args.out, seeds=tuple(args.seeds),
                                         epochs=args.epochs)
    print(json.dumps(record, indent=2))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "comparison.json").write_text(json.dumps(record, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
