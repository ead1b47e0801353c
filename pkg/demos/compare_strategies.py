"""Run every strategy on one scenario and print the final-step comparison.

    python demos/compare_strategies.py --scenario plasticity --seed 0
"""

import argparse
import time

from dilearn.scenarios import SCENARIOS, scenario
from dilearn.train import run_protocol, train_base

STRATEGIES = ["fe", "ft", "bn_stats", "clf", "bn", "bn_clf", "adil", "single", "multi"]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenario", choices=sorted(SCENARIOS), default="plasticity")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--strategies", default=",".join(STRATEGIES))
    args = parser.parse_args()

    sc = scenario(args.scenario)
    data = sc.data(args.seed)
    # every strategy starts from the same base model trained on A
    base = train_base(sc.protocol("adil", args.seed), data)
    print(f"scenario {sc.name}, seed {args.seed}")
    print(f"{'strategy':10s} {'A':>6s} {'B':>6s} {'C':>6s} {'avg':>7s} {'Fr':>6s} {'secs':>5s}")
    for name in args.strategies.split(","):
        start = time.perf_counter()
        report = run_protocol(sc.protocol(name, args.seed), data, base=base).report
        cells = " ".join(f"{v:6.1f}" for v in report.row(3))
        print(f"{name:10s} {cells} {report.averages[3]:7.2f} {report.forgetting[3]:6.1f} {time.perf_counter() - start:5.0f}")


if __name__ == "__main__":
    main()
