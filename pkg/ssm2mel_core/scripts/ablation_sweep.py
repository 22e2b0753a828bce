#!/usr/bin/env python3
"""
ssm2mel ablation sweep

Trains every combination of the three optional modules (ESM, S4-UNet,
external attention) with each backbone mixer schedule for a few epochs and
reports the best validation Pearson per variant. A variant fails when
training aborts on a non-finite value.

    python ssm2mel_core/scripts/ablation_sweep.py [--epochs 5] [--workers 4] [--report sweep.tsv]
"""

import argparse
import sys
from pathlib import Path

src_path = Path(__file__).parent.parent
sys.path.insert(0, str(src_path))

from ssm2mel.config import configure_logging  # noqa: E402
from ssm2mel.data import synth_splits  # noqa: E402
from ssm2mel.experiments import (  # noqa: E402
    ABLATION_EPOCHS,
    ablation_base,
    ablation_spec,
    ablation_variants,
    run_variant,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--epochs", type=int, default=ABLATION_EPOCHS)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--report", help="write a tab-separated results table")
    args = parser.parse_args()
    configure_logging()

    dataset = synth_splits(ablation_spec())

    print("ABLATION SWEEP")
    print("=" * 60)
    rows = []
    for name, mixer, config in ablation_variants(ablation_base(args.epochs)):
        row = run_variant(name, mixer, config, dataset, args.workers)
        rows.append(row)
        print(f"  {name:<32} {mixer:<10} {row.status:<8} best val r {row.best_val:+.4f}  {row.seconds:6.1f}s")

    failures = [row for row in rows if not row.ok]
    print(f"\n{len(rows) - len(failures)}/{len(rows)} variants trained without numerical aborts")
    if args.report:
        lines = ["variant\tmixer\tstatus\tbest_val\tseconds"]
        lines += [f"{r.name}\t{r.mixer}\t{r.status}\t{r.best_val!r}\t{r.seconds:.2f}" for r in rows]
        Path(args.report).write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"Report written to {args.report}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
