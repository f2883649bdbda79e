"""Run the synthetic end-to-end benchmark and print accuracies, PSNR and timings.

    python3 scripts/toy_benchmark.py --work /tmp/toy --seed 0
"""

import argparse
import json
import logging

from magsource.benchmark import run_toy_benchmark


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", required=True, help="working directory (corpus, cache, model, reports)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    res = run_toy_benchmark(args.work, args.seed)
    r = res.report
    print(f"video accuracy  {r.video_accuracy:.4f}")
    print(f"sample accuracy {r.sample_accuracy:.4f}")
    for row in res.psnr:
        print(f"PSNR {row['label']:>5}: {row['mean']:.2f} dB over {row['n_frames']} frames")
    print(json.dumps({k: round(v, 1) for k, v in res.timings.items()}))


if __name__ == "__main__":
    main()
