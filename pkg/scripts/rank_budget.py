"""Wall time and test error against Nystrom rank on one simulated dataset."""
import argparse
import time

from bnngp.cli import budget_table
from bnngp.lowrank import nystrom_factorize
from bnngp.predict import compute_metrics, predictive_moments
from bnngp.simulate import make_scenario
from bnngp.training import TrainConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="C1")
    ap.add_argument("--scale", type=float, default=0.2)
    ap.add_argument("--ranks", default="25,50,100,200")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--budgets", default="1,5,30")
    args = ap.parse_args()

    ds = make_scenario(args.scenario, scale=args.scale, seed=0)
    n_test = len(ds.y) // 10
    Xtr, ytr = ds.X_centered[n_test:], ds.y[n_test:]
    Xte, yte = ds.X_centered[:n_test], ds.y[:n_test]
    theta0 = ds.theta_true.replace(sigma_eps2=ds.sigma_eps2_true)
    rows = []
    for r in (int(s) for s in args.ranks.split(",")):
        t0 = time.perf_counter()
        res = fit(ytr, Xtr, theta0, config=TrainConfig(epochs=args.epochs, rank=r))
        preds = predictive_moments(Xte, Xtr, ytr, res.theta_hat, nystrom_factorize(Xtr, res.theta_hat, res.anchors))
        m = compute_metrics(preds, yte)
        rows.append({"r": r, "time_s": time.perf_counter() - t0, "mae": m.mae, "rmse": m.rmse})
        print(f"r={r:>4}  {rows[-1]['time_s']:6.2f}s  mae {m.mae:.4f}  rmse {m.rmse:.4f}")
    for b in budget_table(rows, [float(s) for s in args.budgets.split(",")]):
        print(f"budget {b['budget_s']:>6}s: r_max={b['r_max']} best r={b['r_best']}")


if __name__ == "__main__":
    main()
