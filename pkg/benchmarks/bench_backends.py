#!/usr/bin/env python3
"""Time one aggregate full-chain solve under each execution backend.

Equivalent to ``swsbp bench`` but kept as a standalone script so it can be
run against a source tree without installing the console entry point.
"""

import argparse

from swsbp.bench import compare_backends, format_comparison


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--d", type=int, default=25, help="number of hidden states")
    parser.add_argument("--T", type=int, default=40, help="chain length")
    parser.add_argument("--M", type=int, default=10_000, help="population size")
    parser.add_argument("--repeats", type=int, default=3, help="best-of repeats")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    results = compare_backends(
        num_states=args.d,
        horizon=args.T,
        population=args.M,
        seed=args.seed,
        repeats=args.repeats,
    )
    print(format_comparison(results))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
