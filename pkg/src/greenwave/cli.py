"""Command-line interface.

Subcommands:
  simulate  closed-loop run; writes trace.csv, metrics.json and figures
  train     three-phase training; writes TPMs, Q tables and training curves
  compare   run two controller arms over a seed list and tabulate savings
  plot      render one figure kind from an existing trace CSV
"""

import argparse
from dataclasses import replace
import json
import os
import sys

import numpy as np

from .markov import load_tpm, save_tpm
from .qlearn import load_qtable, save_qtable, save_training_curve
from .report import (
    export,
    format_comparison,
    write_comparison_csv,
    write_metrics_json,
)
from .scenario import Scenario, load_scenario, save_scenario
from .simulate import (
    FleetTraining,
    compare_metrics,
    parse_controller,
    prepare_training,
    run_scenario,
)
from .plots import FIGURE_KINDS, save_figure
from .trace import read_trace_csv


def _load_scenario_arg(path, seed=None, controller=None) -> Scenario:
    scn = load_scenario(path) if path else Scenario()
    if seed is not None:
        scn = replace(scn, seed=seed)
    if controller is not None:
        higher, lower = parse_controller(controller)
        scn = replace(scn, higher=higher, lower=lower)
    return scn


def _load_training_dir(path, scn: Scenario) -> FleetTraining:
    tpms = {}
    qtables = {}
    for vid in range(scn.n_vehicles):
        tpm_path = os.path.join(path, f"tpm_v{vid}.txt")
        q_path = os.path.join(path, f"qtable_v{vid}.npz")
        if os.path.exists(tpm_path):
            tpms[vid] = load_tpm(tpm_path)
        if os.path.exists(q_path):
            qtables[vid], _ = load_qtable(q_path)
    if len(tpms) != scn.n_vehicles:
        raise SystemExit(
            f"training dir {path!r} lacks TPMs for all {scn.n_vehicles} vehicles")
    return FleetTraining(tpms=tpms, qtables=qtables, results={},
                         profile_trace=None)


def _save_training_dir(training: FleetTraining, scn: Scenario, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    for vid, tpm in training.tpms.items():
        save_tpm(tpm, os.path.join(outdir, f"tpm_v{vid}.txt"))
    for vid, qtable in training.qtables.items():
        save_qtable(qtable, scn.mdp, os.path.join(outdir, f"qtable_v{vid}.npz"))
    for vid, result in training.results.items():
        save_training_curve(result, os.path.join(outdir, f"curve_v{vid}.csv"))


def _cmd_simulate(args) -> int:
    scn = _load_scenario_arg(args.scenario, args.seed, args.controller)
    training = None
    if args.qtables:
        training = _load_training_dir(args.qtables, scn)
    trace, metrics = run_scenario(scn, training=training)
    written = export(trace, metrics, scn, args.out, figures=not args.no_figures)
    print(f"controller {metrics.controller} seed {metrics.seed}: "
          f"fleet mean travel time "
          f"{metrics.fleet['travel_time_mean']:.1f} s, "
          f"mean corrected fuel {metrics.fleet['corrected_fuel_mean_g']:.1f} g")
    for name, path in sorted(written.items()):
        print(f"  wrote {name}: {path}")
    return 0


def _cmd_train(args) -> int:
    scn = _load_scenario_arg(args.scenario, args.seed)
    training = prepare_training(scn, episodes=args.episodes)
    _save_training_dir(training, scn, args.out)
    save_scenario(scn, os.path.join(args.out, "scenario.json"))
    costs = {vid: float(np.mean(res.episode_costs[-100:]))
             for vid, res in training.results.items()}
    print(f"trained {len(training.qtables)} vehicles in "
          f"{training.wall_clock_s:.1f} s wall clock")
    for vid, cost in sorted(costs.items()):
        print(f"  vehicle {vid}: mean cost of last 100 episodes {cost:.3f}")
    print(f"  wrote artifacts to {args.out}")
    return 0


def _cmd_compare(args) -> int:
    arms = args.arms.split(",")
    if len(arms) != 2:
        raise SystemExit("--arms takes exactly two comma-separated controllers")
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for seed in seeds:
        scn_a = _load_scenario_arg(args.scenario, seed, arms[0])
        scn_b = _load_scenario_arg(args.scenario, seed, arms[1])
        if scn_a.geometry_signature() != scn_b.geometry_signature():
            raise SystemExit("scenario geometry differs between arms")
        _, metrics_a = run_scenario(scn_a)
        _, metrics_b = run_scenario(scn_b)
        comparison = compare_metrics(metrics_a, metrics_b)
        rows.append(comparison)
        write_comparison_csv(
            comparison, os.path.join(args.out, f"comparison_seed{seed}.csv"))
        print(f"seed {seed}:")
        print(format_comparison(comparison))
    summary = {
        "arms": arms,
        "seeds": seeds,
        "mean_travel_time_saving_pct": float(np.mean(
            [r["fleet"]["travel_time_saving_pct"] for r in rows])),
        "mean_fuel_saving_pct": float(np.mean(
            [r["fleet"]["fuel_saving_pct"] for r in rows])),
    }
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"mean over seeds: time saving "
          f"{summary['mean_travel_time_saving_pct']:.1f}%, "
          f"fuel saving {summary['mean_fuel_saving_pct']:.1f}%")
    return 0


def _cmd_plot(args) -> int:
    scn = _load_scenario_arg(args.scenario)
    trace = read_trace_csv(args.trace)
    fig = FIGURE_KINDS[args.kind](trace, scn)
    save_figure(fig, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greenwave",
        description="Signalized-corridor HEV fleet simulator and control stack",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one closed-loop scenario")
    p.add_argument("--scenario", help="scenario JSON (defaults when omitted)")
    p.add_argument("--controller",
                   choices=["mpc+rl", "mpc+mpcbase", "cruise+rl",
                            "cruise+mpcbase"],
                   help="higher+lower controller selection")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--qtables", help="directory of train artifacts to reuse")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="estimate TPMs and train Q tables")
    p.add_argument("--scenario")
    p.add_argument("--episodes", type=int, help="override episode count")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("compare", help="compare two controller arms")
    p.add_argument("--scenario")
    p.add_argument("--arms", required=True,
                   help="two controllers, e.g. cruise+mpcbase,mpc+rl")
    p.add_argument("--seeds", default="1", help="comma-separated seed list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("plot", help="render a figure from a trace CSV")
    p.add_argument("--trace", required=True)
    p.add_argument("--kind", required=True, choices=sorted(FIGURE_KINDS))
    p.add_argument("--out", required=True)
    p.add_argument("--scenario",
                   help="scenario JSON for geometry (defaults when omitted)")
    p.set_defaults(func=_cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
