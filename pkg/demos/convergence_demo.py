"""Micro-matcher training on the integer-shift bench with and without sim supervision.

Prints the validation EPE trace for each lambda_s and the first iteration at
which it drops below 1.5 px.
"""
import argparse

from activezero.bench import convergence_run, shift_bench


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iters", type=int, default=40)
    args = ap.parse_args()

    bench = shift_bench()
    for ls in (0.01, 0.0):
        trace = convergence_run(ls, args.seed, iters=args.iters, bench=bench)
        val = trace.column("val_epe")
        hit = trace.iterations_to("val_epe", 1.5)
        print(f"lambda_s={ls}: val EPE every 5 iters " + " ".join(f"{x:.2f}" for x in val[::5]))
        print(f"  first below 1.5 px: {hit}")


if __name__ == "__main__":
    main()
