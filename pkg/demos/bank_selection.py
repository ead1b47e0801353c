"""Domain-agnostic inference: how often does the lowest-entropy bank match the true domain?

    python demos/bank_selection.py --scenario separated --seed 0
"""

import argparse

import numpy as np

from dilearn.inference import predict_domain_agnostic
from dilearn.scenarios import SCENARIOS, scenario
from dilearn.train import run_protocol


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--scenario", choices=sorted(SCENARIOS), default="separated")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    sc = scenario(args.scenario)
    data = sc.data(args.seed)
    result = run_protocol(sc.protocol("adil", args.seed, agnostic=True), data)
    model = result.models[-1]
    names = [d.name for d in sc.domains]

    print("rows: true domain, columns: chosen bank")
    print("      " + " ".join(f"{n:>5s}" for n in names))
    for true, name in enumerate(names):
        chosen = predict_domain_agnostic(model, data[name].test.features).chosen_bank
        counts = np.bincount(chosen, minlength=len(names))
        print(f"{name:5s} " + " ".join(f"{c:5d}" for c in counts) + f"   correct {counts[true] / len(chosen):.2f}")
    print(f"\naware average    {result.report.averages[3]:.2f}")
    print(f"agnostic average {result.agnostic.averages[3]:.2f}")


if __name__ == "__main__":
    main()
