"""Corrupted starts on random graphs: convergence and competitiveness rates."""

import argparse
import random
from collections import Counter

from steinerstab import checkers as C
from steinerstab.graph import random_graph
from steinerstab.simulator import Scenario, run


def classify(trace) -> str:
    if not trace.converged:
        return "NOCONV"
    c = trace.final_configuration()
    if not C.check_legitimate(c).passed:
        return "NOTLEGIT"
    comp = C.check_competitiveness(c)
    if comp.skipped:
        return "SKIP"
    return "OK" if comp.passed else "NOTCOMP"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--graphs", type=int, default=200)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--max-nodes", type=int, default=14)
    ap.add_argument("--max-rounds", type=int, default=2000)
    ap.add_argument("--base", type=int, default=0)
    args = ap.parse_args()

    tally = Counter()
    for i in range(args.base, args.base + args.graphs):
        rng = random.Random(f"sweep/{i}")
        n = rng.randint(3, args.max_nodes)
        g = random_graph(rng, n, rng.randint(2, n))
        for seed in range(args.seeds):
            kind = classify(run(Scenario(graph=g, seed=seed, max_rounds=args.max_rounds)))
            tally[kind] += 1
            if kind not in ("OK", "SKIP"):
                print(f"graph {i} seed {seed}: {kind}")
    total = sum(tally.values())
    for kind, count in sorted(tally.items()):
        print(f"{kind:9s} {count:6d}  {100 * count / total:6.2f}%")


if __name__ == "__main__":
    main()
