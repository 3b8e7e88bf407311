"""Command-line front end: ``fjlab {bound,simulate,optimize,compare,sweep} --config PATH``.

Exit codes: 0 success, 2 config error, 3 mathematical infeasibility, 4 I/O error.
Every CSV starts with '#'-prefixed metadata lines carrying the config hash and seed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, bounds, optimizer
from .config import ExperimentConfig
from .distributions import Exponential
from .errors import ConfigError, MathError
from .simulator import SimulationConfig, simulate
from .strategies import DeterministicStrategy, TruncatedBinomial, UniformStrategy
from .system import FJSystemSpec, Server, TruncatedExponential, TwoClass

EXIT_OK, EXIT_CONFIG, EXIT_MATH, EXIT_IO = 0, 2, 3, 4


# ----------------------------------------------------------------- output ---

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header: list, rows, meta: dict) -> None:
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}={_fmt(v)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(row.get(h)) for h in header])
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_json(path: Path, payload: dict, meta: dict) -> None:
    path.write_text(json.dumps({"meta": meta, **payload}, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_csv(path) -> tuple:
    """(metadata dict, list of row dicts) for files written by :func:`write_csv`."""
    meta, lines = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
            else:
                lines.append(line)
    return meta, list(csv.DictReader(lines))


# ------------------------------------------------------------- builders ---

def _exp_rate(d) -> float:
    if not isinstance(d, Exponential):
        raise ConfigError("scaled and heterogeneous bounds need exponential service and arrival times")
    return d.rate


def strategy_n(cfg: ExperimentConfig) -> int:
    if cfg.strategy is not None:
        return cfg.strategy.n
    return cfg.system.n


def homogeneous_rate(system: FJSystemSpec):
    """The common exponential rate if all servers are identical and always selected, else None."""
    first = system.servers[0]
    if all(s == first for s in system.servers) and first.pi == 1.0 and isinstance(first.service, Exponential):
        return first.service.rate
    return None


def build_curves(cfg: ExperimentConfig) -> list:
    cfg.require("system")
    system = cfg.system
    if cfg.strategy is None:
        if cfg.rate_model is not None:
            raise ConfigError("a rate model needs a strategy")
        return bounds.general_curves(system)
    lam = _exp_rate(system.arrival)
    phi = system.phi
    strat = cfg.strategy
    if cfg.rate_model is not None:
        curves = bounds.heterogeneous_curves(strat, cfg.rate_model, phi, lam)
        if isinstance(strat, TruncatedBinomial) and phi == 1.0:
            model = cfg.rate_model
            if isinstance(model, TwoClass):
                fn = lambda s: bounds.waiting_bound_twoclass(strat.n, strat.p, model, lam, s)
                curves.append(bounds.TailBoundCurve(fn, "two_class", "waiting", curves[0].params))
            elif isinstance(model, TruncatedExponential) and model.truncation == lam:
                fn = lambda s: bounds.waiting_bound_hierarchical(strat.n, strat.p, model, s)
                curves.append(bounds.TailBoundCurve(fn, "hierarchical", "waiting", curves[0].params))
        return curves
    if any(s.pi != 1.0 for s in system.servers):
        raise ConfigError("selection probabilities and a strategy cannot be combined")
    mu = homogeneous_rate(system)
    if mu is not None:
        return bounds.scaled_curves(mu, lam, strat, phi)
    rates = [_exp_rate(s.service) for s in system.servers]
    return bounds.heterogeneous_curves(strat, rates, phi, lam)


def simulation_config(cfg: ExperimentConfig, system=None, strategy="config") -> SimulationConfig:
    cfg.require("system")
    sim = cfg.data.get("simulation", {})
    sim_keys = {k: sim[k] for k in ("n_jobs", "warmup", "strategy_mode", "batches",
                                     "allocation", "min_stratum_jobs") if k in sim}
    sysm = system or cfg.system
    rate_model = cfg.rate_model
    strat = cfg.strategy if strategy == "config" else strategy
    if rate_model is not None and strat is not None and sysm.n < strat.n:
        # servers only fix arrivals and phi here; rates come from the model
        sysm = FJSystemSpec.homogeneous(strat.n, Exponential(1.0), sysm.arrival, sysm.phi)
    return SimulationConfig(sysm, strat, rate_model, replications=max(int(sim.get("replications", 1)), 1),
                            seed=cfg.seed, **sim_keys)


def _threads(args) -> int:
    if args.threads is not None:
        return max(int(args.threads), 1)
    env = os.environ.get("FJLAB_THREADS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise ConfigError(f"FJLAB_THREADS must be an integer, got {env!r}") from None
    return 1


def _meta(cfg: ExperimentConfig, **extra) -> dict:
    return {"config_hash": cfg.hash, "seed": cfg.seed, "fjlab_version": __version__, **extra}


def _sigma_for(cfg: ExperimentConfig, curves: list, opt: dict, metric: str) -> float:
    if "sigma" in opt:
        return float(opt["sigma"])
    curve = curves[0] if metric == "waiting" else curves[1]
    return bounds.invert_bound(curve, float(opt.get("level", 1e-3)))


# ------------------------------------------------------------- commands ---

def cmd_bound(cfg: ExperimentConfig, out: Path, threads: int = 1) -> Path:
    cfg.require("system", "sigmas")
    curves = build_curves(cfg)
    rows = []
    for curve in curves:
        for row in curve.rows(cfg.sigmas):
            row["bound_clamped"] = min(row["bound"], 1.0)
            rows.append(row)
    path = out / "bounds.csv"
    write_csv(path, ["sigma", "theorem", "metric", "bound", "bound_clamped", "theta_tilde", "params_hash"],
              rows, _meta(cfg))
    return path


def _summary_rows(result) -> list:
    rows = []
    for metric in ("waiting", "response"):
        pct = result.percentiles(metric)
        rows.append({"metric": metric, "mean": result.mean(metric), "p50": pct[0.5], "p90": pct[0.9],
                     "p99": pct[0.99], "p99.9": pct[0.999], "n_samples": result.n_samples,
                     "effective_sample_size": result.effective_sample_size})
    return rows


SUMMARY_HEADER = ["metric", "mean", "p50", "p90", "p99", "p99.9", "n_samples", "effective_sample_size"]


def cmd_simulate(cfg: ExperimentConfig, out: Path, threads: int = 1) -> Path:
    cfg.require("system")
    sc = simulation_config(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = simulate(sc, threads)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    meta = _meta(cfg, unstable=result.metadata["unstable"], horizon_capped=result.metadata["horizon_capped"],
                 n_jobs=result.metadata["n_jobs"], warmup=result.metadata["warmup"],
                 strategy_mode=sc.strategy_mode)
    path = out / "simulation_summary.csv"
    write_csv(path, SUMMARY_HEADER, _summary_rows(result), meta)
    if cfg.sigmas is not None:
        rows = []
        for metric in ("waiting", "response"):
            est, se = result.ccdf(cfg.sigmas, metric)
            bse = result.ccdf_batch_se(cfg.sigmas, metric)
            for s, e, a, b in zip(cfg.sigmas, est, se, bse):
                rows.append({"sigma": s, "metric": metric, "ccdf": e, "std_error": a, "batch_std_error": b})
        write_csv(out / "simulation_ccdf.csv", ["sigma", "metric", "ccdf", "std_error", "batch_std_error"],
                  rows, meta)
    if cfg.data.get("simulation", {}).get("dump_samples"):
        dtype = [("stratum", "i4"), ("replication", "i4"), ("weight", "f8"), ("waiting", "f8"), ("response", "f8")]
        parts = []
        for st in result.strata:
            reps, n = st.waiting.shape
            arr = np.empty(reps * n, dtype=dtype)
            arr["stratum"] = st.s
            arr["replication"] = np.repeat(np.arange(reps), n)
            arr["weight"] = st.weight / st.size
            arr["waiting"] = st.waiting.ravel()
            arr["response"] = st.response.ravel()
            parts.append(arr)
        np.save(out / "samples.npy", np.concatenate(parts), allow_pickle=False)
    (out / "config_echo.json").write_text(json.dumps(cfg.echo(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def cmd_optimize(cfg: ExperimentConfig, out: Path, threads: int = 1) -> Path:
    cfg.require("system", "optimizer")
    opt = cfg.data["optimizer"]
    mode = opt["mode"]
    metric = opt.get("metric", "waiting")
    system = cfg.system
    lam = _exp_rate(system.arrival)
    phi = system.phi
    n = strategy_n(cfg)
    mu = homogeneous_rate(system) if cfg.rate_model is None else None
    if mode == "pmf":
        target = cfg.rate_model if cfg.rate_model is not None else (
            mu if mu is not None else [_exp_rate(s.service) for s in system.servers])
        ref = cfg.strategy or DeterministicStrategy(n, n)
        if mu is not None:
            curves = bounds.scaled_curves(mu, lam, ref, phi)
        else:
            curves = bounds.heterogeneous_curves(ref, target, phi, lam)
        sigma = _sigma_for(cfg, curves, opt, metric)
        report = optimizer.optimize_pmf(n, target, lam, phi, sigma, metric).to_dict()
    else:
        if mu is None:
            raise ConfigError(f"optimizer mode {mode!r} needs identical exponential servers")
        ref = cfg.strategy or TruncatedBinomial(n, 1.0)
        sigma = _sigma_for(cfg, bounds.scaled_curves(mu, lam, ref, phi), opt, metric)
        if mode == "binomial":
            report = optimizer.optimize_binomial_p(n, mu, lam, phi, sigma, float(opt.get("resolution", 1e-3)),
                                                   metric).to_dict()
        else:
            if "budget" not in opt:
                raise ConfigError("optimizer mode 'budget' needs a budget")
            report = optimizer.optimize_budget(n, float(opt["budget"]), mu, lam, sigma, phi, metric).to_dict()
    report.update({"mode": mode, "metric": metric, "sigma": sigma, "n": n})
    path = out / "optimize.json"
    write_json(path, report, _meta(cfg))
    return path


def _ccdf_with_se(result, sigmas, metric):
    est, _ = result.ccdf(sigmas, metric)
    return est, result.ccdf_se(sigmas, metric)


def cmd_compare(cfg: ExperimentConfig, out: Path, threads: int = 1) -> Path:
    cfg.require("system", "sigmas")
    curves = build_curves(cfg)
    reps = int(cfg.data.get("simulation", {}).get("replications", 1))
    result = simulate(simulation_config(cfg), threads) if reps > 0 else None
    rows = []
    for curve in curves:
        b = curve(cfg.sigmas)
        if result is not None:
            est, se = _ccdf_with_se(result, cfg.sigmas, curve.metric)
        for i, s in enumerate(cfg.sigmas):
            row = {"sigma": s, "theorem": curve.family, "metric": curve.metric, "bound": b[i]}
            if result is not None:
                row.update(empirical=est[i], std_error=se[i], dominance=bool(est[i] <= b[i] + 3.0 * se[i]))
            rows.append(row)
    meta = _meta(cfg, replications=reps)
    path = out / "compare.csv"
    write_csv(path, ["sigma", "theorem", "metric", "bound", "empirical", "std_error", "dominance"], rows, meta)
    if result is not None:
        prow = []
        for r in range(result.replications):
            rep = result.replication(r)
            for metric in ("waiting", "response"):
                pct = rep.percentiles(metric)
                prow.append({"replication": r, "metric": metric, "p50": pct[0.5], "p90": pct[0.9],
                             "p99": pct[0.99], "p99.9": pct[0.999]})
        write_csv(out / "percentiles.csv", ["replication", "metric", "p50", "p90", "p99", "p99.9"], prow, meta)
    return path


def sweep_binomial_tradeoff(cfg: ExperimentConfig, threads: int = 1) -> list:
    """Mean and 99.9-percentile waiting over a (phi, p) grid; strata are shared across p."""
    sw = cfg.data["sweep"]
    system = cfg.system
    lam = _exp_rate(system.arrival)
    mu = homogeneous_rate(system)
    if mu is None:
        raise ConfigError("binomial_tradeoff needs identical exponential servers")
    n = strategy_n(cfg)
    p_values = sw.get("p_values", [round(0.1 * k, 10) for k in range(1, 11)])
    phi_values = sw.get("phi_values", [system.phi])
    q = float(sw.get("quantile", 0.999))
    rows = []
    for phi in phi_values:
        sys_phi = FJSystemSpec(system.servers, system.arrival, phi)
        sc = simulation_config(cfg, sys_phi, UniformStrategy(n))
        sc.allocation = "equal"
        base = simulate(sc, threads)
        for p in p_values:
            strat = TruncatedBinomial(n, p)
            res = base.reweighted(strat)
            sig = optimizer.bound_percentile(mu, lam, strat, phi, 1.0 - q)
            rows.append({"phi": phi, "p": p, "expected_servers": strat.expected_servers(),
                         "mean_waiting": res.mean("waiting"), "mean_response": res.mean("response"),
                         "quantile_waiting": res.percentile(q, "waiting"), "bound_quantile_waiting": sig})
    return rows


def sweep_percentile_growth(cfg: ExperimentConfig, threads: int = 1):
    from .simulator import percentile_growth_fit

    sw = cfg.data["sweep"]
    system = cfg.system
    mu = float(sw.get("mu", homogeneous_rate(system) or 1.0))
    lam = float(sw.get("lambda", _exp_rate(system.arrival)))
    sim = cfg.data.get("simulation", {})
    return percentile_growth_fit(sw.get("n_values", [2, 4, 8, 16, 32]), mu, lam, float(sw.get("p", 1.0)),
                                 system.phi, float(sw.get("quantile", 0.999)), sw.get("against", "n"),
                                 int(sim.get("n_jobs", 200_000)), max(int(sim.get("replications", 1)), 1),
                                 cfg.seed, threads)


def sweep_selection_probability(cfg: ExperimentConfig, threads: int = 1) -> list:
    sw = cfg.data["sweep"]
    system = cfg.system
    idx = int(sw.get("server", system.n - 1))
    if idx >= system.n:
        raise ConfigError(f"server index {idx} out of range for {system.n} servers")
    q = float(sw.get("quantile", 0.999))
    rows = []
    for pi in sw.get("pi_values", [0.0, 0.25, 0.5, 0.75, 1.0]):
        servers = list(system.servers)
        servers[idx] = Server(servers[idx].service, pi)
        sysm = FJSystemSpec(tuple(servers), system.arrival, system.phi)
        res = simulate(simulation_config(cfg, sysm, None), threads)
        curve = bounds.general_curves(sysm)[0]
        rows.append({"pi": pi, "mean_waiting": res.mean("waiting"), "mean_response": res.mean("response"),
                     "quantile_waiting": res.percentile(q, "waiting"),
                     "bound_quantile_waiting": bounds.invert_bound(curve, 1.0 - q)})
    return rows


def cmd_sweep(cfg: ExperimentConfig, out: Path, threads: int = 1) -> Path:
    cfg.require("system", "sweep")
    kind = cfg.data["sweep"]["kind"]
    meta = _meta(cfg, sweep=kind)
    path = out / f"sweep_{kind}.csv"
    if kind == "binomial_tradeoff":
        rows = sweep_binomial_tradeoff(cfg, threads)
        header = ["phi", "p", "expected_servers", "mean_waiting", "mean_response", "quantile_waiting",
                  "bound_quantile_waiting"]
    elif kind == "selection_probability":
        rows = sweep_selection_probability(cfg, threads)
        header = ["pi", "mean_waiting", "mean_response", "quantile_waiting", "bound_quantile_waiting"]
    else:
        rep = sweep_percentile_growth(cfg, threads)
        rows = [{"x": x, "log_x": math.log(x), "quantile_waiting": y} for x, y in zip(rep.x, rep.y)]
        header = ["x", "log_x", "quantile_waiting"]
        meta.update(slope=rep.slope, intercept=rep.intercept, r2=rep.r2, degenerate=rep.degenerate)
    write_csv(path, header, rows, meta)
    return path


COMMANDS = {
    "bound": cmd_bound,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fjlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fjlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: $FJLAB_THREADS or 1)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config).with_seed(args.seed)
        threads = _threads(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = COMMANDS[args.command](cfg, out, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MathError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_MATH
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
