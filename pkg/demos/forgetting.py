"""Show fine-tuning forgetting A while ADIL keeps it, step by step.

    python demos/forgetting.py --seed 0
"""

import argparse

from dilearn.data import nearest_centroid_accuracy
from dilearn.scenarios import gated
from dilearn.train import run_protocol, train_base


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    sc = gated()
    data = sc.data(args.seed)
    for d in "BC":
        print(f"nearest-centroid fit on A, tested on {d}: {nearest_centroid_accuracy(data['A'].train, data[d].test):.2f}")
    base = train_base(sc.protocol("ft", args.seed), data)
    for name in ("ft", "adil"):
        report = run_protocol(sc.protocol(name, args.seed), data, base=base).report
        print(f"\n{name}")
        print(report.summary())


if __name__ == "__main__":
    main()
