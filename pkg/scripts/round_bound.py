"""Rounds to converge from corrupted starts, against the 5*z*D bound."""

import argparse
import random
import statistics

from steinerstab import checkers as C
from steinerstab.graph import random_graph
from steinerstab.simulator import Scenario, run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--graphs", type=int, default=50)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--max-nodes", type=int, default=20)
    ap.add_argument("--adversary", choices=("random", "greedy"), default="random")
    args = ap.parse_args()

    print(f"{'graph':>5} {'n':>3} {'z':>3} {'D':>3} {'bound':>6} {'median':>7} {'max':>5} {'over':>5}")
    over = total = 0
    for i in range(args.graphs):
        rng = random.Random(f"rounds/{i}")
        n = rng.randint(3, args.max_nodes)
        g = random_graph(rng, n, rng.randint(2, n))
        rounds, exceed, noconv = [], 0, 0
        for seed in range(args.seeds):
            t = run(Scenario(graph=g, seed=seed, adversary=args.adversary, max_rounds=2000))
            v = C.check_round_bound(t)
            if not t.converged:
                noconv += 1
                continue
            rounds.append(v.metrics["rounds"])
            exceed += not v.passed
            z, d, bound = v.metrics["z"], v.metrics["diameter"], v.metrics["bound"]
        over += exceed + noconv
        total += args.seeds
        if not rounds:
            print(f"{i:5d} {n:3d}  no run converged")
            continue
        print(f"{i:5d} {n:3d} {z!s:>3} {d!s:>3} {bound!s:>6} {statistics.median(rounds):7.1f} {max(rounds):5d} {exceed:5d}" + (f"  ({noconv} NOCONV)" if noconv else ""))
    print(f"{total - over}/{total} runs within the bound ({100 * (total - over) / total:.1f}%)")


if __name__ == "__main__":
    main()
