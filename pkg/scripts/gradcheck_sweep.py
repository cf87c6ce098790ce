"""Finite-difference check over many seeded random instances, both contact models."""

import argparse
import time

from diffterrain.autodiff import ALL_GROUPS, grad_check, random_problem
from diffterrain.dynamics import ContactModel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=40)
    ap.add_argument("--tol", type=float, default=1e-4)
    ap.add_argument("--gyroscopic", action="store_true")
    args = ap.parse_args()

    t0 = time.perf_counter()
    worst, failed, skipped = 0.0, [], 0
    for seed in range(args.seeds):
        for kind in ContactModel:
            rep = grad_check(random_problem(seed, kind, args.gyroscopic), groups=ALL_GROUPS,
                             tolerance=args.tol)
            tag = f"seed {seed:3d} {kind.name.lower():8s}"
            if rep.skipped:
                skipped += 1
                print(f"{tag} skipped: {rep.reason}")
                continue
            worst = max(worst, rep.max_rel_error)
            if not rep.passed:
                failed.append(tag)
            print(f"{tag} {len(rep.entries):4d} entries  max rel err {rep.max_rel_error:.2e}")
    print(f"\nworst {worst:.3e}, {len(failed)} failed, {skipped} skipped, {time.perf_counter() - t0:.1f} s")
    raise SystemExit(1 if failed else 0)


if __name__ == "__main__":
    main()
