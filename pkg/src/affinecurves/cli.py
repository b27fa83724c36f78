"""Command-line workflows: simulate, price, estimate, decompose, riskpremium.

Every subcommand is deterministic given its inputs and seed: output files
carry no timestamps, and a ``manifest.txt`` in the output directory records
every effective option of the run.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import datetime as dt
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import estimation, pricing, simulation
from .panel import (
    ContractLadder,
    ObservationPanel,
    load_panel,
    save_panel,
    year_fraction,
)
from .params import ModelParams, StateVector
from .pricing import InstrumentSpec
from .riccati import DEFAULT_STEP

_RMSE_GROUPS = {
    "SOFR1M": "sofr_futures", "SOFR3M": "sofr_futures",
    "FF": "effr_futures", "ED": "ed_futures",
    "LIBOR": "spot_libor", "REPO": "term_repo",
}

_HORIZON_DAYS = (90, 180, 270, 360)


def _max_workers() -> int:
    value = os.environ.get("AFFINE_CURVES_THREADS", "")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def _write_manifest(out_dir: Path, command: str, options: dict) -> None:
    lines = [f"command = {command}"]
    lines += [f"{key} = {value}" for key, value in sorted(options.items())]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _load_inputs(args) -> tuple[ModelParams, ObservationPanel]:
    params = ModelParams.load(args.params)
    panel = load_panel(args.panel)
    return params, panel


def _filtered_states(params: ModelParams, panel: ObservationPanel,
                     step: float) -> np.ndarray:
    out = estimation.filter_panel(params, panel, step=step)
    if not math.isfinite(out.loglik):
        raise SystemExit(f"filter failed: {out.status}")
    return out.filtered_means


def _states_matrix(args, params, panel, step) -> np.ndarray:
    if getattr(args, "states", None):
        rows = np.genfromtxt(args.states, delimiter=",", names=True)
        cols = ["r_s", "theta_s", "zeta", "xi", "eta", "nu"]
        return np.column_stack([rows[c] for c in cols])
    return _filtered_states(params, panel, step)


def _renewal_state(reduced: np.ndarray) -> StateVector:
    x = np.maximum(reduced, [-np.inf, -np.inf, -np.inf, 0.0, 0.0, 0.0])
    return StateVector(r_s=x[0], theta_s=x[1], zeta=x[2],
                       xi=x[3], eta=x[4], nu=x[5])


def _write_states_csv(path: Path, dates, states: np.ndarray) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "r_s", "theta_s", "zeta", "xi", "eta", "nu"])
        for d, row in zip(dates, states):
            writer.writerow([d.isoformat()] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = (ModelParams.load(args.params) if args.params
              else ModelParams.reference())
    start = dt.date.fromisoformat(args.start)
    panel, true_states = simulation.generate_synthetic_panel(
        params, start, args.dates, ladder=ContractLadder(), seed=args.seed,
        noise=not args.no_noise, mask_repo_6m=args.mask_repo, step=args.ode_step,
    )
    save_panel(panel, out_dir / "panel.csv")
    params.save(out_dir / "params_true.kv")
    _write_states_csv(out_dir / "states_true.csv", panel.dates, true_states)
    _write_manifest(out_dir, "simulate", {
        "dates": args.dates, "seed": args.seed, "start": args.start,
        "mask_repo": args.mask_repo, "noise": not args.no_noise,
        "ode_step": args.ode_step,
    })
    observed = int(panel.mask().sum())
    print(f"wrote {panel.n_dates} dates x {panel.n_columns} columns "
          f"({observed} quotes) to {out_dir / 'panel.csv'}")
    print(f"mean quotes per date: {observed / panel.n_dates:.1f}")
    return 0


# ---------------------------------------------------------------------------
# price
# ---------------------------------------------------------------------------

def _instrument_for_cell(geometry, panel, i, j) -> InstrumentSpec | None:
    """Year-fraction instrument record for a panel cell, for the MC oracle."""
    col = panel.columns[j]
    t_yf = year_fraction(panel.dates[i])
    if col.kind == "LIBOR":
        return InstrumentSpec("SpotLibor", end=col.tenor_years)
    if col.kind == "REPO":
        return InstrumentSpec("TermRepo", end=col.tenor_years)
    start = year_fraction(col.start) - t_yf
    end = year_fraction(col.end) - t_yf
    realized = None
    if start < 0:
        series = "effr" if col.kind == "FF" else "sofr"
        values, weights = panel.realized_window(series, col.start, panel.dates[i])
        realized = (values, weights)
    kind = {"SOFR1M": "Sofr1mFut", "SOFR3M": "Sofr3mFut",
            "FF": "FedFundsFut", "ED": "EurodollarFut"}[col.kind]
    return InstrumentSpec(kind, start=start, end=end, realized=realized)


def cmd_price(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params, panel = _load_inputs(args)
    states = _states_matrix(args, params, panel, args.ode_step)
    if states.shape[0] != panel.n_dates:
        raise SystemExit("states row count does not match panel dates")
    geometry = estimation.PanelGeometry.from_panel(panel)
    model = estimation.MeasurementModel(params, geometry, args.ode_step)

    mc_cells: dict[tuple[int, int], tuple[float, float]] = {}
    if args.mc_check:
        cells = [(0, j) for j in np.flatnonzero(geometry.mask[0])]

        def oracle(cell):
            i, j = cell
            spec = _instrument_for_cell(geometry, panel, i, j)
            est, se = simulation.mc_price(
                spec, params, _renewal_state(states[i]),
                n_paths=args.paths, seed=args.seed + j,
            )
            return cell, (est, se)

        with concurrent.futures.ThreadPoolExecutor(_max_workers()) as pool:
            for cell, result in pool.map(oracle, cells):
                mc_cells[cell] = result

    sq_err: dict[str, list[float]] = {}
    with (out_dir / "fits.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["date", "column", "observed", "model", "residual"]
        if args.mc_check:
            header += ["mc_value", "mc_se"]
        writer.writerow(header)
        for i, d in enumerate(panel.dates):
            observed_cols = np.flatnonzero(geometry.mask[i])
            a, B = model.rows_for_date(i, observed_cols)
            yields = a + B @ states[i]
            for row, j in enumerate(observed_cols):
                col = panel.columns[j]
                if col.is_averaging:
                    model_rate = yields[row]
                else:
                    model_rate = float(
                        np.expm1(geometry.accrual[i, j] * yields[row])
                        / geometry.accrual[i, j]
                    )
                observed = panel.values[i, j]
                residual = observed - model_rate
                sq_err.setdefault(_RMSE_GROUPS[col.kind], []).append(residual**2)
                out_row = [d.isoformat(), col.label, repr(float(observed)),
                           repr(float(model_rate)), repr(float(residual))]
                if args.mc_check:
                    cell = mc_cells.get((i, j))
                    out_row += ([repr(float(cell[0])), repr(float(cell[1]))] if cell else ["", ""])
                writer.writerow(out_row)
    with (out_dir / "rmse_by_group.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "rmse_bp", "n"])
        for group in ("sofr_futures", "effr_futures", "ed_futures",
                      "spot_libor", "term_repo"):
            errors = sq_err.get(group, [])
            rmse = math.sqrt(np.mean(errors)) * 1e4 if errors else float("nan")
            writer.writerow([group, repr(float(rmse)), len(errors)])
    _write_manifest(out_dir, "price", {
        "panel": args.panel, "params": args.params, "seed": args.seed,
        "paths": args.paths, "mc_check": args.mc_check,
        "ode_step": args.ode_step, "states": args.states or "(filtered)",
    })
    print(f"wrote {out_dir / 'fits.csv'} and {out_dir / 'rmse_by_group.csv'}")
    return 0


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

_FREE_PRESETS = {
    "all": estimation.DEFAULT_FREE,
    "gaussian": estimation.GAUSSIAN_BLOCK_FREE,
}


def cmd_estimate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params, panel = _load_inputs(args)
    free = _FREE_PRESETS.get(args.free, None) or tuple(args.free.split(","))
    options = estimation.FitOptions(
        max_iter=args.max_iter, f_tol=args.f_tol, restarts=args.restarts
    )
    result = estimation.fit(panel, params, free=free, options=options,
                            step=args.ode_step)
    result.params.save(out_dir / "params_fit.kv")
    _write_states_csv(out_dir / "states_filtered.csv", panel.dates,
                      result.filtered_states)
    with (out_dir / "stderr.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parameter", "estimate", "stderr"])
        for name in result.free:
            writer.writerow([name, repr(float(getattr(result.params, name))),
                             repr(float(result.stderr.get(name, float("nan"))))])
    (out_dir / "convergence.log").write_text(
        "\n".join([
            f"loglik = {result.loglik!r}",
            f"converged = {result.converged}",
            f"iterations = {result.n_iterations}",
            f"evaluations = {result.n_evaluations}",
            f"message = {result.message}",
        ]) + "\n"
    )
    _write_manifest(out_dir, "estimate", {
        "panel": args.panel, "params": args.params, "free": args.free,
        "f_tol": args.f_tol, "max_iter": args.max_iter,
        "restarts": args.restarts, "ode_step": args.ode_step,
    })
    print(f"loglik {result.loglik:.3f} after {result.n_evaluations} evaluations "
          f"-> {out_dir / 'params_fit.kv'}")
    return 0


# ---------------------------------------------------------------------------
# decompose
# ---------------------------------------------------------------------------

def cmd_decompose(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params, panel = _load_inputs(args)
    states = _states_matrix(args, params, panel, args.ode_step)
    rows = []
    for i, d in enumerate(panel.dates):
        state = _renewal_state(states[i])
        for tenor in (0.25, 0.5):
            rows.append(pricing.decompose_libor_ois(
                params, state, tenor, args.ode_step, date=d
            ))
    with (out_dir / "decomposition.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "tenor", "libor_ois_spread",
                         "credit_component", "funding_component"])
        for row in rows:
            writer.writerow([row.date.isoformat(), row.tenor,
                             repr(float(row.libor_ois_spread)),
                             repr(float(row.credit_component)),
                             repr(float(row.funding_component))])
    # Regression decomposition on observed spreads where both legs quote.
    reg_lines = []
    for tenor in ("3M", "6M"):
        try:
            j_libor = panel.column_index(f"LIBOR:{tenor}")
            j_repo = panel.column_index(f"REPO:{tenor}")
        except KeyError:
            continue
        tenor_years = 0.25 if tenor == "3M" else 0.5
        spread_ois, spread_repo = [], []
        for i in range(panel.n_dates):
            lib, rep = panel.values[i, j_libor], panel.values[i, j_repo]
            if math.isnan(lib) or math.isnan(rep):
                continue
            ois = pricing.ois_ff_rate(params, _renewal_state(states[i]),
                                      [tenor_years], args.ode_step)
            spread_ois.append(lib - ois)
            spread_repo.append(lib - rep)
        if len(spread_ois) >= 3:
            alpha, beta, beta_se, _ = pricing.regression_decomposition(
                spread_ois, spread_repo
            )
            reg_lines.append(
                f"{tenor}: alpha = {alpha!r}, beta = {beta!r}, "
                f"beta_stderr = {beta_se!r}, n = {len(spread_ois)}"
            )
    (out_dir / "regression.txt").write_text("\n".join(reg_lines) + "\n")
    _write_manifest(out_dir, "decompose", {
        "panel": args.panel, "params": args.params,
        "ode_step": args.ode_step, "states": args.states or "(filtered)",
    })
    print(f"wrote {out_dir / 'decomposition.csv'}")
    return 0


# ---------------------------------------------------------------------------
# riskpremium
# ---------------------------------------------------------------------------

def cmd_riskpremium(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params, panel = _load_inputs(args)
    states = _states_matrix(args, params, panel, args.ode_step)
    kinds = ("SOFR3M", "ED", "SOFR1M", "FF")
    indices = list(range(0, panel.n_dates, max(1, args.stride)))
    table = np.zeros((len(indices), len(kinds) * len(_HORIZON_DAYS)))
    for row, i in enumerate(indices):
        state = _renewal_state(states[i])
        col = 0
        for kind in kinds:
            for days in _HORIZON_DAYS:
                horizon = days / 360.0
                accrual = 30.0 / 360.0 if kind in ("SOFR1M", "FF") else 91.0 / 360.0
                premium, _ = pricing.futures_risk_premium(
                    params, state, kind, horizon, accrual,
                    n_draws=args.paths, seed=args.seed, step=args.ode_step,
                )
                table[row, col] = premium
                col += 1
    header = [f"{kind}_{days}d" for kind in kinds for days in _HORIZON_DAYS]
    with (out_dir / "risk_premia.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + header)
        for row, i in enumerate(indices):
            writer.writerow([panel.dates[i].isoformat()]
                            + [repr(float(v)) for v in table[row]])
    with (out_dir / "risk_premia_average.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["horizon_days"] + list(kinds))
        means = table.mean(axis=0).reshape(len(kinds), len(_HORIZON_DAYS))
        for c, days in enumerate(_HORIZON_DAYS):
            writer.writerow([days] + [repr(float(means[k, c] * 1e4))
                                      for k in range(len(kinds))])
    _write_manifest(out_dir, "riskpremium", {
        "panel": args.panel, "params": args.params, "seed": args.seed,
        "paths": args.paths, "stride": args.stride, "ode_step": args.ode_step,
        "states": args.states or "(filtered)",
    })
    print(f"wrote {out_dir / 'risk_premia.csv'} "
          f"(averages in basis points in risk_premia_average.csv)")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub, panel_required: bool = True) -> None:
    sub.add_argument("--panel", required=panel_required, help="panel CSV path")
    sub.add_argument("--params", required=panel_required,
                     help="parameter key-value file")
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--ode-step", type=float, default=DEFAULT_STEP,
                     help="transform-ODE integration step in years")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="affinecurves",
        description="Joint affine benchmark-rate model: simulate, price, "
                    "estimate, decompose, riskpremium.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic observation panel")
    p.add_argument("--params", help="true parameters (default: reference set)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ode-step", type=float, default=DEFAULT_STEP)
    p.add_argument("--dates", type=int, default=250)
    p.add_argument("--start", default="2019-01-02", help="first panel date")
    p.add_argument("--mask-repo", type=float, default=0.0,
                   help="missing probability for 6M repo quotes")
    p.add_argument("--no-noise", action="store_true",
                   help="emit exact model prices")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("price", help="fit a panel at given params and states")
    _add_common(p)
    p.add_argument("--states", help="states CSV (default: Kalman filtered)")
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--mc-check", action="store_true",
                   help="append Monte Carlo oracle columns (first date)")
    p.set_defaults(func=cmd_price)

    p = sub.add_parser("estimate", help="quasi-ML estimation")
    _add_common(p)
    p.add_argument("--f-tol", type=float, default=0.01)
    p.add_argument("--max-iter", type=int, default=4000)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--free", default="all",
                   help="'all', 'gaussian', or comma-separated names")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("decompose", help="credit/funding spread split")
    _add_common(p)
    p.add_argument("--states", help="states CSV (default: Kalman filtered)")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("riskpremium", help="futures risk-premium tables")
    _add_common(p)
    p.add_argument("--states", help="states CSV (default: Kalman filtered)")
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--stride", type=int, default=5,
                   help="evaluate every n-th panel date")
    p.set_defaults(func=cmd_riskpremium)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, SystemExit) as exc:
        if isinstance(exc, SystemExit) and exc.code in (0, None):
            return 0
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
