"""Command-line entry points: ``cbsizing <subcommand> [flags]``.

Configuration comes from built-in defaults, then an optional YAML file
(``--config``), then command-line flags.  Unknown configuration keys are
rejected.  All outputs are deterministic CSV/markdown written under ``--out``.
"""

from __future__ import annotations

import argparse
import copy
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .cbs import ground_truth_cost, run_cbs_rho, trajectory_frame
from .core import Band, CbsParams, TariffSchedule
from .dataio import (
    DataError,
    ScenarioBundle,
    SyntheticSpec,
    generate_synthetic,
    load_bundle,
    load_scenario,
    pd_error_stats,
    save_bundle,
    split_sample,
)
from .enduser import FIELDS as USER_FIELDS
from .optprog import SolverError
from .sizing import (
    CapacityGrid,
    Scenario,
    SizingResult,
    compare_methods,
    cost_table,
    cycles_at,
    evaluate_capacity,
    relative_loss,
    size_coupled_rh,
    size_exhaustive,
    size_without_rh,
)

logger = logging.getLogger("cbsizing")

EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 2, 3, 4

CLI_METHODS = {"exact": "exact", "worh-rt": "worh_perfect", "worh-pd": "worh_pd", "coupled": "coupled_rh"}

_SYNTHETIC_KEYS = ("n_users", "days", "start", "prosumer_share", "base_load", "morning_peak", "evening_peak",
                   "load_noise", "pv_peak", "price_low", "price_mid", "price_high", "rt_spike_prob",
                   "rt_spike_mult", "pd_bias", "pd_noise_sd", "pd_spike_prob", "pd_spike_mult")
_SYN_DEFAULTS = SyntheticSpec()

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "out": "out",
    "scenario": {"source": "synthetic", "bundle_dir": None, "rt_file": None, "pd_file": None,
                 "users_file": None, "units": "auto", "pv_scale": 3.0, "delta_h": 0.5,
                 "horizon_len": 32, "rebound_len": 12, "split": False},
    "synthetic": {k: getattr(_SYN_DEFAULTS, k) for k in _SYNTHETIC_KEYS},
    "users": {"kappa_range": [0.1, 0.5], "tau": 0.2, "lb_factor": 0.5, "ub_factor": 1.5},
    "tariff": {"cbs_grid_charge": 0.0161, "throughput_charge": 0.032, "peak_charge_per_day": 0.33,
               "bands": None},
    "cbs": {f.name: f.default for f in fields(CbsParams)},
    "solver": {"quad_mode": "piecewise", "segments": 16, "time_limit": None},
    "sizing": {"lo": 0.0, "hi": 500.0, "step": 5.0, "period_days": 7.0,
               "methods": ["exact", "worh-rt", "worh-pd", "coupled"]},
    "report": {"capacities": []},
    "stats": {"excess_kurtosis": True, "bias_corrected": False},
}


class ConfigError(ValueError):
    """Invalid configuration file or flag combination."""


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"configuration key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a mapping at top level")
    return _merge(DEFAULTS, raw)


def apply_flags(cfg: dict, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(cfg)
    for flag, (section, key) in {"seed": (None, "seed"), "threads": (None, "threads"), "out": (None, "out"),
                                 "step": ("sizing", "step"), "period_days": ("sizing", "period_days")}.items():
        value = getattr(args, flag, None)
        if value is not None:
            (cfg if section is None else cfg[section])[key] = value
    if getattr(args, "capacity", None):
        cfg["report"]["capacities"] = list(args.capacity)
    if getattr(args, "method", None):
        cfg["sizing"]["methods"] = list(args.method)
    return cfg


# -- scenario assembly -----------------------------------------------------


def _tariff(cfg) -> TariffSchedule:
    """Tariff from config; ``bands`` (list of mappings) replaces the default time-of-use bands."""
    t = dict(cfg["tariff"])
    bands = t.pop("bands")
    if bands is None:
        return TariffSchedule(**t)
    if not isinstance(bands, list) or not all(isinstance(b, dict) for b in bands):
        raise ConfigError("tariff.bands must be a list of mappings")
    parsed = []
    for b in bands:
        b = dict(b)
        if "beta_range" in b:
            b["beta_range"] = tuple(b["beta_range"])
        parsed.append(Band(**b))
    return TariffSchedule(bands=tuple(parsed), **t)


def _cbs(cfg) -> CbsParams:
    return CbsParams(**cfg["cbs"])


def build_bundle(cfg: dict) -> ScenarioBundle:
    sc, us = cfg["scenario"], cfg["users"]
    try:
        tariff, cbs = _tariff(cfg), _cbs(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    user_kw = {"kappa_range": tuple(us["kappa_range"]), "tau": us["tau"], "lb_factor": us["lb_factor"],
               "ub_factor": us["ub_factor"]}
    bands = tariff.bands
    source = sc["source"]
    if source == "synthetic":
        try:
            spec = SyntheticSpec(seed=cfg["seed"], delta_h=sc["delta_h"], horizon_len=sc["horizon_len"],
                                 rebound_len=sc["rebound_len"], **cfg["synthetic"], **user_kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"synthetic scenario: {exc}") from exc
        return generate_synthetic(spec, tariff=tariff, cbs=cbs, bands=bands)
    if source == "bundle":
        if not sc["bundle_dir"]:
            raise ConfigError("scenario.bundle_dir is required for source 'bundle'")
        try:
            return load_bundle(sc["bundle_dir"])
        except (OSError, KeyError) as exc:
            raise DataError(f"cannot load bundle {sc['bundle_dir']}: {exc}") from exc
    if source == "files":
        missing = [k for k in ("rt_file", "pd_file", "users_file") if not sc[k]]
        if missing:
            raise ConfigError(f"scenario source 'files' needs {', '.join(missing)}")
        try:
            return load_scenario(sc["rt_file"], sc["pd_file"], sc["users_file"], sc["horizon_len"],
                                 sc["rebound_len"], sc["delta_h"], sc["pv_scale"], sc["units"], cfg["seed"],
                                 tariff, cbs, bands=bands, **user_kw)
        except OSError as exc:
            raise DataError(str(exc)) from exc
    raise ConfigError(f"unknown scenario.source {source!r}")


def build_samples(cfg: dict) -> tuple[ScenarioBundle, ScenarioBundle]:
    bundle = build_bundle(cfg)
    if cfg["scenario"]["split"]:
        return split_sample(bundle)
    return bundle, bundle


def _scenario(bundle: ScenarioBundle, cfg: dict) -> Scenario:
    s = cfg["solver"]
    return Scenario(bundle, quad_mode=s["quad_mode"], segments=s["segments"], threads=cfg["threads"])


def _grid(cfg) -> CapacityGrid:
    z = cfg["sizing"]
    try:
        return CapacityGrid(float(z["lo"]), float(z["hi"]), float(z["step"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _period_len(cfg, bundle: ScenarioBundle) -> int:
    return int(round(float(cfg["sizing"]["period_days"]) * bundle.grid.intervals_per_day))


def _methods(cfg) -> list[str]:
    methods = cfg["sizing"]["methods"]
    bad = [m for m in methods if m not in CLI_METHODS]
    if bad:
        raise ConfigError(f"unknown sizing method(s): {', '.join(bad)}")
    return [m for m in CLI_METHODS if m in methods]


# -- formatting ------------------------------------------------------------


def _num(v, digits: int = 4) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.{digits}f}"


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def _out(cfg) -> Path:
    d = Path(cfg["out"])
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- subcommands -----------------------------------------------------------


def cmd_gen_synthetic(cfg: dict) -> int:
    if cfg["scenario"]["source"] != "synthetic":
        raise ConfigError("gen-synthetic needs scenario.source 'synthetic'")
    bundle = build_bundle(cfg)
    d = save_bundle(bundle, _out(cfg) / "bundle")
    print(f"wrote synthetic bundle ({len(bundle.users)} users, {bundle.grid.n_total} intervals) to {d}")
    return 0


def cmd_simulate_users(cfg: dict) -> int:
    bundle, _ = build_samples(cfg)
    scn = _scenario(bundle, cfg)
    out = _out(cfg) / "users"
    H = bundle.grid.horizon_len
    rows = []
    for traj, user in zip(scn.trajectories, bundle.users):
        n = traj.n_total
        committed = pd.DataFrame({"j": np.arange(n), **{f: traj.committed[f] for f in USER_FIELDS},
                                  "credit_init": traj.credit_init, "delta_x": traj.delta_x})
        _write_csv(committed, out / f"{user.user_id}_committed.csv")
        jj, hh = np.divmod(np.arange(n * H), H)
        plans = pd.DataFrame({"j": jj, "h": hh + 1, **{f: traj.plans[f].ravel() for f in USER_FIELDS}})
        _write_csv(plans, out / f"{user.user_id}_plans.csv")
        x, x_hat = traj.committed["x"], user.expected[:n]
        rows.append({"user_id": user.user_id, "expected_kwh": float(x_hat.sum()), "consumed_kwh": float(x.sum()),
                     "shifted_kwh": float(np.maximum(x_hat - x, 0.0).sum()),
                     "committed_equals_expected": bool(np.all(np.abs(x - x_hat) <= 1e-5))})
    _write_csv(pd.DataFrame(rows), out / "summary.csv")
    print(f"simulated {len(rows)} users over {bundle.grid.n_total} horizons; outputs in {out}")
    return 0


def cmd_simulate_cbs(cfg: dict) -> int:
    caps = cfg["report"]["capacities"]
    if not caps:
        raise ConfigError("simulate-cbs needs --capacity")
    bundle, _ = build_samples(cfg)
    scn = _scenario(bundle, cfg)
    out = _out(cfg)
    rows = []
    for e in caps:
        traj = run_cbs_rho(bundle.cbs, float(e), bundle.tariff, bundle.prices, scn.users, bundle.grid)
        ts = None if bundle.timestamps is None else [str(t) for t in bundle.timestamps[: bundle.grid.n_total]]
        _write_csv(trajectory_frame(traj, bundle.prices, ts), out / f"cbs_trajectory_{_num(float(e), 1)}.csv")
        c = ground_truth_cost(traj, bundle.prices, bundle.cbs, bundle.tariff, float(e), bundle.grid)
        rows.append({"capacity_kwh": float(e), "energy": c.energy, "grid_charge": c.grid_charge,
                     "throughput": c.throughput, "peak_revenue": c.peak_revenue, "capital": c.capital,
                     "total": c.total, "local_peak_kw": c.local_peak_kw, "user_peak_kw": c.user_peak_kw})
    _write_csv(pd.DataFrame(rows), out / "cbs_costs.csv")
    print(f"simulated battery operation for {len(rows)} capacities; outputs in {out}")
    return 0


def _run_methods(cfg, methods, scn: Scenario, grid: CapacityGrid) -> list[SizingResult]:
    results = []
    q_limit = cfg["solver"]["time_limit"]
    period = _period_len(cfg, scn.bundle)
    for m in methods:
        if m == "exact":
            results.append(size_exhaustive(grid, scn, cfg["threads"]))
            continue
        if m == "coupled":
            r = size_coupled_rh(scn, period, cap_max=grid.hi, time_limit=q_limit)
        else:
            r = size_without_rh(scn, "rt" if m == "worh-rt" else "pd_h1", cap_max=grid.hi, time_limit=q_limit)
        r.capacity = grid.nearest(r.raw_capacity)
        r.in_sample = evaluate_capacity(r.capacity, scn)
        r.avg_cycle_in = cycles_at(r.capacity, scn)
        results.append(r)
    return results


def cmd_size(cfg: dict) -> int:
    methods = _methods(cfg)
    bundle, _ = build_samples(cfg)
    scn = _scenario(bundle, cfg)
    grid = _grid(cfg)
    results = _run_methods(cfg, methods, scn, grid)
    out = _out(cfg)
    _write_csv(pd.DataFrame([{"method": r.method, "capacity_kwh": r.capacity, "raw_capacity_kwh": r.raw_capacity,
                              "model_objective": r.objective, "total": r.in_sample.total,
                              "avg_cycle": r.avg_cycle_in} for r in results]), out / "sizing.csv")
    if "exact" in methods:
        table = cost_table(grid, scn, cfg["threads"])
        _write_csv(pd.DataFrame([{"capacity_kwh": c, "energy": v.energy, "grid_charge": v.grid_charge,
                                  "throughput": v.throughput, "peak_revenue": v.peak_revenue,
                                  "capital": v.capital, "total": v.total} for c, v in table.items()]),
                   out / "exact_cost_table.csv")
    for r in results:
        print(f"{r.method}: {r.capacity:g} kWh")
    return 0


def _stats_table(cfg, bundle: ScenarioBundle) -> pd.DataFrame:
    st = cfg["stats"]
    rows = []
    for label, sel in (("h=1", "h1"), ("h=H", "hH"), ("all", "all")):
        s = pd_error_stats(bundle.prices, sel, st["excess_kurtosis"], st["bias_corrected"])
        rows.append({"selection": label, "mean": s.mean, "median": s.median, "sd": s.sd, "skew": s.skew,
                     "kurt": s.kurt, "count": s.count})
    return pd.DataFrame(rows)


def _stats_markdown(df: pd.DataFrame) -> list[str]:
    lines = ["| Selection | Mean | Median | SD | Skew | Kurt | Cells |", "|---|---|---|---|---|---|---|"]
    for r in df.itertuples():
        lines.append(f"| {r.selection} | {_num(r.mean)} | {_num(r.median)} | {_num(r.sd)} | {_num(r.skew)} "
                     f"| {_num(r.kurt)} | {r.count} |")
    return lines


def cmd_stats(cfg: dict) -> int:
    bundle, _ = build_samples(cfg)
    df = _stats_table(cfg, bundle)
    _write_csv(df, _out(cfg) / "pd_error_stats.csv")
    print("\n".join(["PD - RT error ($/kWh)", ""] + _stats_markdown(df)))
    return 0


def _comparison_rows(results: list[SizingResult], sample: str) -> list[dict]:
    rows = []
    has_exact = any(r.method == "exact" for r in results)
    for r in results:
        c = r.in_sample if sample == "in" else r.out_sample
        loss = (r.loss_in if sample == "in" else r.loss_out) if has_exact else math.nan
        rows.append({"sample": sample, "method": r.method, "capacity_kwh": r.capacity, "energy": c.energy,
                     "peak_reduction_usd": c.peak_revenue, "peak_reduction_kw": c.user_peak_kw - c.local_peak_kw,
                     "total": c.total, "loss_vs_exact": loss,
                     "avg_cycle": r.avg_cycle_in if sample == "in" else r.avg_cycle_out})
    return rows


def cmd_report(cfg: dict) -> int:
    methods = _methods(cfg)
    in_b, out_b = build_samples(cfg)
    scn_in = _scenario(in_b, cfg)
    scn_out = scn_in if out_b is in_b else _scenario(out_b, cfg)
    grid = _grid(cfg)
    if methods == list(CLI_METHODS):
        results = compare_methods(scn_in, scn_out, grid, _period_len(cfg, in_b), cfg["threads"],
                                  cfg["solver"]["time_limit"])
    else:
        results = _run_methods(cfg, methods, scn_in, grid)
        exact = next((r for r in results if r.method == "exact"), None)
        for r in results:
            r.out_sample = evaluate_capacity(r.capacity, scn_out)
            r.avg_cycle_out = cycles_at(r.capacity, scn_out)
            if exact is not None:
                r.loss_in = relative_loss(r.in_sample.total, exact.in_sample.total)
                r.loss_out = relative_loss(r.out_sample.total, exact.out_sample.total)
    out = _out(cfg)
    table = pd.DataFrame(_comparison_rows(results, "in") + _comparison_rows(results, "out"))
    _write_csv(table, out / "method_comparison.csv")

    caps = [float(c) for c in cfg["report"]["capacities"]] or sorted({r.capacity for r in results})
    pairs = []
    factor = 365.0 / in_b.grid.days
    for e in caps:
        pf = size_without_rh(scn_in, "rt", fixed_capacity=e).model_cost.scaled(factor)
        rho = evaluate_capacity(e, scn_in)
        for mode, c in (("perfect_foresight", pf), ("rho", rho)):
            pairs.append({"capacity_kwh": e, "mode": mode, "energy": c.energy, "grid_charge": c.grid_charge,
                          "throughput": c.throughput, "peak_revenue": c.peak_revenue, "capital": c.capital,
                          "total": c.total})
    _write_csv(pd.DataFrame(pairs), out / "foresight_vs_rho.csv")
    stats = _stats_table(cfg, in_b)
    _write_csv(stats, out / "pd_error_stats.csv")

    lines = ["# Battery sizing report", ""]
    for sample, title in (("in", "In-sample"), ("out", "Out-of-sample")):
        lines += [f"## {title} (annualised $)", "",
                  "| Method | Capacity (kWh) | Energy | Peak reduction $ (kW) | Total | Loss vs exact | Avg cycle |",
                  "|---|---|---|---|---|---|---|"]
        for r in table[table["sample"] == sample].itertuples():
            loss = "" if math.isnan(r.loss_vs_exact) else f"{100 * r.loss_vs_exact:+.2f}%"
            lines.append(f"| {r.method} | {r.capacity_kwh:g} | {_num(r.energy, 2)} | "
                         f"-{_num(r.peak_reduction_usd, 2)} ({_num(r.peak_reduction_kw, 2)} kW) | "
                         f"{_num(r.total, 2)} | {loss} | {_num(r.avg_cycle, 3)} |")
        lines.append("")
    lines += ["## Perfect foresight vs receding-horizon operation (annualised $)", "",
              "| Capacity (kWh) | Mode | Energy | Grid charge | Throughput | Peak revenue | Capital | Total |",
              "|---|---|---|---|---|---|---|---|"]
    for p in pairs:
        lines.append(f"| {p['capacity_kwh']:g} | {p['mode']} | {_num(p['energy'], 2)} | {_num(p['grid_charge'], 2)} "
                     f"| {_num(p['throughput'], 2)} | {_num(p['peak_revenue'], 2)} | {_num(p['capital'], 2)} "
                     f"| {_num(p['total'], 2)} |")
    lines += ["", "## PD forecast error, in-sample ($/kWh)", ""] + _stats_markdown(stats)
    fills_in = in_b.prices.fills
    fills_out = out_b.prices.fills
    lines += ["", "---", f"PD cells persistence-filled: {fills_in} in-sample, {fills_out} out-of-sample. "
              f"Seed: {cfg['seed']}.", ""]
    (out / "report.md").write_text("\n".join(lines))
    print(f"report written to {out / 'report.md'}")
    return 0


COMMANDS = {"gen-synthetic": cmd_gen_synthetic, "simulate-users": cmd_simulate_users,
            "simulate-cbs": cmd_simulate_cbs, "size": cmd_size, "report": cmd_report, "stats": cmd_stats}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML configuration file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--threads", type=int, help="worker processes for user runs and capacity sweeps")
    common.add_argument("--step", type=float, help="capacity grid step (kWh)")
    common.add_argument("--period-days", type=float, help="coupling period length for the coupled method (days)")
    common.add_argument("--capacity", type=float, action="append", help="battery capacity (kWh); repeatable")
    common.add_argument("--price-mode", choices=("rt", "pd"), help="prices for the no-RH method in 'size'")
    common.add_argument("--method", action="append", choices=tuple(CLI_METHODS) + ("worh",),
                        help="sizing method; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="cbsizing", description="Community battery RHO simulation and sizing.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.method:
            mode = "worh-pd" if args.price_mode == "pd" else "worh-rt"
            args.method = [mode if m == "worh" else m for m in args.method]
        cfg = apply_flags(load_config(args.config), args)
        if cfg["threads"] < 1:
            raise ConfigError("threads must be >= 1")
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (DataError, ValueError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except SolverError as exc:
        logger.error("solver error: %s", exc)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
