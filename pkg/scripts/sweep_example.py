"""Small parameter sweep on a freshly generated corpus, driven through the CLI.

    python3 scripts/sweep_example.py --work /tmp/sweep --grid "m=2,3;t=3,5"

Uses a reduced corpus (10 videos per class, k=2) so the whole grid runs in
well under an hour on one CPU core. The CSV lands in <work>/sweep.csv.
"""

import argparse
import sys
from pathlib import Path

from magsource import cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", required=True)
    ap.add_argument("--grid", default="m=2,3;t=3,5")
    ap.add_argument("--videos-per-class", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    work = Path(args.work)
    common = ["--seed", str(args.seed), "--cache-dir", str(work / "cache")]
    steps = [
        ["synth-data", "--out", str(work / "corpus"), "--videos-per-class", str(args.videos_per_class)],
        ["train-magnifier", "--out", str(work / "magnifier.mmw")],
        [
            "sweep", "--manifest", str(work / "corpus" / "manifest.json"), "--grid", args.grid,
            "--out", str(work / "sweep.csv"), "--weights", str(work / "magnifier.mmw"),
            "--k", "2", "--width-mult", "0.125", "--epochs", "4",
        ],
    ]
    for argv in steps:
        code = cli.main(argv + common)
        if code:
            return code
    print((work / "sweep.csv").read_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
