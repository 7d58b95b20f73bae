"""Empirical BNN covariance against the analytic kernel across widths.

Several seeds per width, since a single seed says little: the finite-width
covariance already equals the limit, so the error is Monte-Carlo noise
whose size depends on H only through fourth moments.
"""
import argparse

import numpy as np

from bnngp.bnn_oracle import BnnSpec, default_probe_points, max_abs_error


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--widths", default="1,10,100,1000")
    ap.add_argument("--samples", type=int, default=5000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--activation", default="relu", choices=["relu", "tanh", "sigmoid", "leaky_relu"])
    ap.add_argument("--alpha", type=float, default=0.1)
    args = ap.parse_args()

    act = (args.activation, args.alpha) if args.activation == "leaky_relu" else args.activation
    X = default_probe_points()
    print(f"{'H':>7} {'mean err':>10} {'sd':>8} {'min':>8} {'max':>8}")
    for H in (int(h) for h in args.widths.split(",")):
        errs = [max_abs_error(BnnSpec(H, (act,), (1.0,), n_samples=args.samples, seed=s), X)
                for s in range(args.seeds)]
        print(f"{H:>7} {np.mean(errs):>10.4f} {np.std(errs, ddof=1):>8.4f} {min(errs):>8.4f} {max(errs):>8.4f}")


if __name__ == "__main__":
    main()
