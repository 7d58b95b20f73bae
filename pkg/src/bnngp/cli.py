"""Command-line experiment runner.

    bnngp simulate|fit|eval|kernel-probe|oracle-check|rank-sweep --config PATH [--seed N] [--out DIR]

Configs are flat ``key = value`` text files (``#`` starts a comment); a
previously written ``manifest.json`` is also accepted and replays its
config. Unknown keys are rejected. On failure a single line
``E_<KIND>: message`` goes to stderr and the exit code is 2 (config),
3 (data) or 4 (numeric).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import platform
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .bnn_oracle import BnnSpec, default_probe_points, width_convergence_report
from .datasets import (
    KNOWN_DATASETS,
    Preprocessor,
    ProcessedSplit,
    RawTable,
    SplitSpec,
    destandardize,
    fit_transform,
    load_csv,
    split,
    split_indices,
    subsample,
)
from .errors import BnnGpError, ConfigError, DataError
from .kernels import PARAM_NAMES, REPORT_ORDER, HyperParams, shape_correlation
from .lowrank import nystrom_factorize
from .predict import PredictiveMoments, compute_metrics, predictive_moments
from .simulate import ScenarioDataset, VecchiaConfig, make_scenario
from .training import PriorConfig, TrainConfig, fit

log = logging.getLogger("bnngp")

MANIFEST_SCHEMA = 1

_THETA_KEYS = {f"theta.{p}": (float, None) for p in PARAM_NAMES}
_PRIOR_KEYS = {f"prior.ig_{q}": (str, None) for q in ("eps", "a", "u", "b", "v")}
_PRIOR_KEYS.update({"prior.beta_alpha": (str, None), "prior.beta_w": (str, None)})

_TRAIN_KEYS = {
    "epochs": (int, 50),
    "learning_rate": (float, 1e-3),
    "nugget_learning_rate": (float, 1e-3),
    "rank": (int, 500),
    "anchor_strategy": (str, "first"),
    "anchor_seed": (int, 0),
    "gradient_mode": (str, "analytic"),
    "nugget_eta": (float, 0.04),
}

_DATA_KEYS = {
    "data": (str, None),
    "data_format": (str, "scenario"),
    "target": (str, "y"),
    "expected_features": (int, None),
    "subsample_n": (int, None),
    "test_fraction": (float, 0.10),
    "split_seed": (int, 0),
}

SCHEMAS = {
    "simulate": {
        "scenario": (str, "C1"),
        "scale": (float, 1.0),
        "seed": (int, 0),
        "eta": (float, 0.04),
        "n_init": (int, 500),
        "n_neighbors": (int, 500),
        "design": (str, None),
        "I": (int, None),
        "n": (int, None),
        "output": (str, "dataset.csv"),
        **_THETA_KEYS,
    },
    "fit": {"seed": (int, 0), **_DATA_KEYS, **_TRAIN_KEYS, **_THETA_KEYS, **_PRIOR_KEYS},
    "eval": {
        "predictions": (str, None),
        "preprocessor": (str, None),
        "seed": (int, 0),
    },
    "kernel-probe": {
        "grid_size": (int, 401),
        "grid_limit": (float, 0.999),
        "seed": (int, 0),
    },
    "oracle-check": {
        "activation": (str, "relu"),
        "alpha": (float, None),
        "widths": ("ints", [1, 100, 1000, 10000]),
        "n_samples": (int, 20000),
        "n_probe": (int, 5),
        "probe_dim": (int, 3),
        "probe_seed": (int, 0),
        "seed": (int, 0),
        **_THETA_KEYS,
    },
    "rank-sweep": {
        "seed": (int, 0),
        "ranks": ("ints", [50, 100, 200]),
        "budgets": ("floats", []),
        "repeats": (int, 1),
        **_DATA_KEYS,
        **_TRAIN_KEYS,
        **_THETA_KEYS,
        **_PRIOR_KEYS,
    },
}

SHAPE_PAIRS = [
    ("tanh", "sigmoid", None, 0.9999),
    ("relu", "leaky_relu", 0.1, 0.9983),
    ("relu", "leaky_relu", 0.3, 0.9919),
]


# --- config ------------------------------------------------------------------


def _convert(key, kind, raw):
    try:
        if kind == "ints":
            return [int(v) for v in str(raw).split(",") if v.strip()] if not isinstance(raw, list) else [int(v) for v in raw]
        if kind == "floats":
            return [float(v) for v in str(raw).split(",") if v.strip()] if not isinstance(raw, list) else [float(v) for v in raw]
        if raw is None:
            return None
        if kind is str and isinstance(raw, list):
            return ",".join(str(v) for v in raw)
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from None


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(command: str, path=None, overrides: dict | None = None) -> dict:
    """Validated config: defaults, then file values, then CLI overrides."""
    raw = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if path.suffix == ".json":
            try:
                manifest = json.loads(text)
                raw = dict(manifest["config"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"{path} is not a run manifest: {exc}") from exc
            if manifest.get("command") != command:
                raise ConfigError(f"manifest was written by {manifest.get('command')!r}, not {command!r}")
        else:
            raw = parse_config_text(text)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    schema = SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg = {}
    for key, (kind, default) in schema.items():
        cfg[key] = _convert(key, kind, raw[key]) if key in raw else default
    return cfg


def _theta_from(cfg: dict, base: HyperParams | None = None) -> HyperParams:
    values = (base or HyperParams()).to_dict()
    for p in PARAM_NAMES:
        if cfg.get(f"theta.{p}") is not None:
            values[p] = cfg[f"theta.{p}"]
    try:
        return HyperParams(**values)
    except BnnGpError as exc:
        raise ConfigError(f"invalid theta in config: {exc}") from exc


def _pair(key, text):
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"config key {key!r} needs 'shape,scale', got {text!r}") from None
    return a, b


def _priors_from(cfg: dict) -> PriorConfig:
    base = PriorConfig()
    ig = dict(base.inv_gamma)
    for q in ig:
        if cfg.get(f"prior.ig_{q}") is not None:
            ig[q] = _pair(f"prior.ig_{q}", cfg[f"prior.ig_{q}"])
    ba = _pair("prior.beta_alpha", cfg["prior.beta_alpha"]) if cfg.get("prior.beta_alpha") else base.beta_alpha
    bw = _pair("prior.beta_w", cfg["prior.beta_w"]) if cfg.get("prior.beta_w") else base.beta_w
    return PriorConfig(ig, ba, bw)


def _train_config(cfg: dict, rank: int | None = None) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        nugget_learning_rate=cfg["nugget_learning_rate"],
        rank=rank if rank is not None else cfg["rank"],
        anchor_strategy=cfg["anchor_strategy"],
        anchor_seed=cfg["anchor_seed"],
        gradient_mode=cfg["gradient_mode"],
        nugget_eta=cfg["nugget_eta"] if cfg["nugget_eta"] is None or cfg["nugget_eta"] > 0 else None,
    )


# --- manifest ------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class RunManifest:
    def __init__(self, command: str, cfg: dict, out_dir: Path):
        self.out_dir = out_dir
        self.data = {
            "schema_version": MANIFEST_SCHEMA,
            "tool_version": __version__,
            "command": command,
            "config": cfg,
            "seeds": {k: v for k, v in cfg.items() if k.endswith("seed")},
            "theta_hat": None,
            "metrics": {},
            "wall_clock_seconds": {},
            "artifacts": {},
            "status": "running",
            "environment": {"python": platform.python_version(), "numpy": np.__version__},
        }

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.data["wall_clock_seconds"][name] = time.perf_counter() - t0

    def artifact(self, name: str, path: Path) -> Path:
        self.data["artifacts"][name] = str(path)
        return path

    def write(self) -> Path:
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(_jsonable(self.data), indent=2) + "\n")
        return path


def theta_report(theta: HyperParams) -> dict:
    """Fitted parameters keyed in report column order."""
    return {name: getattr(theta, name) for name in REPORT_ORDER}


def _write_csv(path: Path, rows: list[dict], fieldnames=None) -> Path:
    fieldnames = fieldnames or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


# --- data plumbing -------------------------------------------------------------


def _load_training_data(cfg: dict):
    """Returns (train split, test split, preprocessor, theta known from simulation or None)."""
    if not cfg["data"]:
        raise ConfigError("config key 'data' is required")
    path = Path(cfg["data"])
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    split_spec = SplitSpec(cfg["test_fraction"], cfg["split_seed"])
    if cfg["data_format"] == "scenario":
        ds = ScenarioDataset.from_csv(path)
        table = RawTable(ds.X_centered, ds.y, [f"x_{j + 1}" for j in range(ds.X_centered.shape[1])], "y")
        if cfg["subsample_n"]:
            table = subsample(table, cfg["subsample_n"], cfg["split_seed"])
        tr, te = split_indices(table.n, split_spec)
        identity = Preprocessor(np.zeros(0), np.zeros(0), 0.0, 1.0, tuple(table.feature_names), "y")
        train = ProcessedSplit(table.X[tr], table.y[tr], table.y[tr])
        test = ProcessedSplit(table.X[te], table.y[te], table.y[te])
        return train, test, identity, ds.theta_true
    if cfg["data_format"] == "raw":
        expected = cfg["expected_features"]
        if expected is None:
            expected = KNOWN_DATASETS.get(path.stem.lower())
        table = load_csv(path, cfg["target"], expected)
        if cfg["subsample_n"]:
            table = subsample(table, cfg["subsample_n"], cfg["split_seed"])
        train_raw, test_raw = split(table, split_spec)
        train, test, pre = fit_transform(train_raw, test_raw)
        return train, test, pre, None
    raise ConfigError(f"data_format must be 'scenario' or 'raw', got {cfg['data_format']!r}")


def _fit_and_evaluate(cfg, train, test, pre, theta_known, rank=None, manifest: RunManifest | None = None):
    theta0 = _theta_from(cfg, theta_known)
    priors = _priors_from(cfg)
    tcfg = _train_config(cfg, rank)
    if tcfg.rank > train.X.shape[0]:
        tcfg = dataclasses.replace(tcfg, rank=train.X.shape[0])
    t0 = time.perf_counter()
    result = fit(train.y, train.X, theta0, priors, tcfg)
    t_fit = time.perf_counter() - t0
    t0 = time.perf_counter()
    factor = nystrom_factorize(train.X, result.theta_hat, result.anchors)
    preds = predictive_moments(test.X, train.X, train.y, result.theta_hat, factor)
    t_pred = time.perf_counter() - t0
    m_z = compute_metrics(preds, test.y, "standardized")
    preds_orig = destandardize(preds, pre)
    m_orig = compute_metrics(preds_orig, test.y_raw, "original")
    if manifest is not None:
        manifest.data["wall_clock_seconds"].update({"fit": t_fit, "predict": t_pred})
    return result, preds, m_z, m_orig, t_fit + t_pred


# --- commands ------------------------------------------------------------------


def cmd_simulate(cfg: dict, out: Path, manifest: RunManifest) -> None:
    theta = _theta_from(cfg)
    with manifest.phase("simulate"):
        ds = make_scenario(
            cfg["scenario"], cfg["scale"], cfg["seed"], cfg["eta"], theta,
            VecchiaConfig(cfg["n_init"], cfg["n_neighbors"]),
            design=cfg["design"], I=cfg["I"], n=cfg["n"],
        )
    path = out / cfg["output"]
    sidecar = ds.to_csv(path)
    manifest.artifact("dataset", path)
    manifest.artifact("provenance", sidecar)
    manifest.data["metrics"] = {"n": int(ds.y.size), "sigma_eps2_true": ds.sigma_eps2_true}


def cmd_fit(cfg: dict, out: Path, manifest: RunManifest) -> None:
    with manifest.phase("load"):
        train, test, pre, theta_known = _load_training_data(cfg)
    result, preds, m_z, m_orig, _ = _fit_and_evaluate(cfg, train, test, pre, theta_known, manifest=manifest)
    manifest.data["theta0"] = theta_report(result.theta0)
    manifest.data["theta_hat"] = theta_report(result.theta_hat)
    manifest.data["theta_hat"]["sigma_eps2_original"] = pre.nugget_to_original(result.theta_hat.sigma_eps2)
    manifest.data["loss_trajectory"] = result.loss_trajectory.tolist()
    manifest.data["anchors"] = {"strategy": result.anchors.strategy, "r": result.anchors.r}
    manifest.data["metrics"] = {"standardized": m_z.to_dict(), "original": m_orig.to_dict()}
    pred_path = manifest.artifact("predictions", out / "predictions.csv")
    _write_csv(pred_path, [
        {"y": float(y), "mu": float(m), "var": float(v)}
        for y, m, v in zip(test.y, preds.mu_star, preds.var_star)
    ], ["y", "mu", "var"])
    pre_path = manifest.artifact("preprocessor", out / "preprocessor.json")
    pre.save(pre_path)


def _read_predictions(path: Path) -> tuple[np.ndarray, PredictiveMoments]:
    if not path.exists():
        raise DataError(f"predictions file not found: {path}")
    table = load_csv(path, "y")
    cols = {name: j for j, name in enumerate(table.feature_names)}
    if "mu" not in cols or "var" not in cols:
        raise DataError(f"{path}: predictions need columns y, mu, var")
    return table.y, PredictiveMoments(table.X[:, cols["mu"]], table.X[:, cols["var"]])


def cmd_eval(cfg: dict, out: Path, manifest: RunManifest) -> None:
    if not cfg["predictions"]:
        raise ConfigError("config key 'predictions' is required")
    y, preds = _read_predictions(Path(cfg["predictions"]))
    if cfg["preprocessor"]:
        pre = Preprocessor.load(cfg["preprocessor"])
    else:
        pre = Preprocessor(np.zeros(0), np.zeros(0), 0.0, 1.0)
    m_z = compute_metrics(preds, y, "standardized")
    m_orig = compute_metrics(destandardize(preds, pre), pre.inverse_y(y), "original")
    manifest.data["metrics"] = {
        "standardized": m_z.to_dict(),
        "original": m_orig.to_dict(),
        "mean_predictive_variance_standardized": float(np.mean(preds.var_star)),
        "sigma_y": pre.sigma_y,
    }
    metrics_path = manifest.artifact("metrics", out / "metrics.json")
    metrics_path.write_text(json.dumps(_jsonable(manifest.data["metrics"]), indent=2) + "\n")


def kernel_probe_rows(grid_size: int = 401, grid_limit: float = 0.999) -> list[dict]:
    grid = np.linspace(-grid_limit, grid_limit, grid_size)
    rows = []
    for a, b, alpha, reported in SHAPE_PAIRS:
        rows.append({
            "kernel_a": a,
            "kernel_b": b,
            "alpha": "" if alpha is None else alpha,
            "correlation": shape_correlation(a, b, grid, alpha),
            "self_a": shape_correlation(a, a, grid, alpha),
            "self_b": shape_correlation(b, b, grid, alpha),
            "reported": reported,
            "grid_size": grid_size,
        })
    return rows


def cmd_kernel_probe(cfg: dict, out: Path, manifest: RunManifest) -> None:
    rows = kernel_probe_rows(cfg["grid_size"], cfg["grid_limit"])
    path = manifest.artifact("table", out / "kernel_probe.csv")
    _write_csv(path, rows)
    manifest.data["metrics"] = {f"{r['kernel_a']}x{r['kernel_b']}{r['alpha']}": r["correlation"] for r in rows}


def cmd_oracle_check(cfg: dict, out: Path, manifest: RunManifest) -> None:
    act = cfg["activation"]
    activation = (act, cfg["alpha"]) if act == "leaky_relu" else act
    theta = _theta_from(cfg)
    spec = BnnSpec(1, (activation,), (1.0,), theta, cfg["n_samples"], cfg["seed"])
    probes = default_probe_points(cfg["probe_dim"], cfg["n_probe"], cfg["probe_seed"])
    path = manifest.artifact("report", out / "width_convergence.csv")
    with manifest.phase("oracle"):
        rows = width_convergence_report(spec, cfg["widths"], probes, f"uniform{cfg['n_probe']}x{cfg['probe_dim']}", path)
    manifest.data["metrics"] = {str(r["H"]): r["max_abs_error"] for r in rows}


def budget_table(rows: list[dict], budgets) -> list[dict]:
    """Largest feasible rank and lowest-RMSE rank within each time budget."""
    out = []
    for T in budgets:
        feasible = [r for r in rows if r["time_s"] <= T]
        if not feasible:
            out.append({"budget_s": T, "r_max": "", "time_s": "", "mae": "", "rmse": "", "r_best": "", "rmse_best": ""})
            continue
        top = max(feasible, key=lambda r: r["r"])
        best = min(feasible, key=lambda r: r["rmse"])
        out.append({
            "budget_s": T, "r_max": top["r"], "time_s": top["time_s"], "mae": top["mae"], "rmse": top["rmse"],
            "r_best": best["r"], "rmse_best": best["rmse"],
        })
    return out


def cmd_rank_sweep(cfg: dict, out: Path, manifest: RunManifest) -> None:
    with manifest.phase("load"):
        train, test, pre, theta_known = _load_training_data(cfg)
    rows = []
    for r in cfg["ranks"]:
        times = []
        for _ in range(max(1, cfg["repeats"])):
            result, _, m_z, m_orig, elapsed = _fit_and_evaluate(cfg, train, test, pre, theta_known, rank=r)
            times.append(elapsed)
        row = {"r": r, "time_s": float(np.median(times))}
        row.update({k: getattr(m_orig, k) for k in ("mae", "rmse", "mese", "sdese")})
        row.update(theta_report(result.theta_hat))
        rows.append(row)
        log.info("rank %d: %.2fs rmse %.4f", r, row["time_s"], row["rmse"])
    manifest.artifact("sweep", _write_csv(out / "rank_sweep.csv", rows))
    manifest.artifact("budgets", _write_csv(
        out / "rank_budget.csv", budget_table(rows, cfg["budgets"]),
        ["budget_s", "r_max", "time_s", "mae", "rmse", "r_best", "rmse_best"],
    ))
    manifest.data["metrics"] = {"rows": rows}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "eval": cmd_eval,
    "kernel-probe": cmd_kernel_probe,
    "oracle-check": cmd_oracle_check,
    "rank-sweep": cmd_rank_sweep,
}


@contextmanager
def _thread_limit():
    limit = os.environ.get("BNNGP_THREADS")
    if not limit:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=int(limit)):
        yield


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnngp", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, default=None, help="key=value config file or a manifest.json")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config 'seed' key")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    manifest = None
    try:
        cfg = load_config(args.command, args.config, {"seed": args.seed})
        args.out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest(args.command, cfg, args.out)
        with _thread_limit():
            COMMANDS[args.command](cfg, args.out, manifest)
        manifest.data["status"] = "ok"
        manifest.write()
        return 0
    except BnnGpError as exc:
        msg = " ".join(str(exc).split())
        print(f"{exc.code}: {msg}", file=sys.stderr)
        if manifest is not None:
            manifest.data["status"] = "error"
            manifest.data["error"] = {"code": exc.code, "message": msg}
            manifest.write()
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
