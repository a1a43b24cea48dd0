"""Command-line entry point wiring the library into four workflows.

    lanemerge synth-trials      synthetic car-following trials (CSV)
    lanemerge calibrate         fit driver-model distributions from trials
    lanemerge train-classifier  fit yield-classifier weights
    lanemerge simulate          seeded closed-loop episode batches
    lanemerge evaluate          replay planning against recorded trajectories

Every run writes a ``manifest.kv`` echoing the fully resolved
configuration (flags, seed, package and library versions); re-running a
command with the same manifest reproduces every CSV byte for byte. All
randomness inside a run descends from the single ``--seed`` through
spawned child streams.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace

import numpy as np
import scipy

from . import __version__, kvio
from .calibration import (
    CalibrationError,
    FitConfig,
    SynthConfig,
    evaluate_mse,
    filter_outliers,
    fit_gaussian,
    fit_mle,
    generate_corpus,
    load_trials,
    save_trials,
)
from .driver_models import (
    MODEL_IDM,
    MODEL_VDM,
    PARAM_NAMES,
    SCENARIO_SUCCESSFUL,
    SCENARIO_UNSUCCESSFUL,
    save_distribution,
)
from .harness import (
    GenConfig,
    aggregate,
    generate_scenarios,
    load_scenario,
    read_replay_csv,
    replay_evaluate,
    run_episode,
    synthesize_classifier_data,
    write_trace_csv,
)
from .planner import MctsConfig, PredictorConfig, RewardWeights
from .yielding import (
    ClassifierError,
    N_FEATURES,
    TrainConfig,
    YieldFeatures,
    load_weights,
    predict_prob,
    save_weights,
    train,
)

FEATURE_COLUMNS = ["bias", "gap_leader", "ego_d", "ego_v", "rel_pos", "v_k", "v_leader"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING_FILE = 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


def _require_file(path: str) -> str:
    if not os.path.isfile(path):
        raise CliError(f"input file not found: {path}", EXIT_MISSING_FILE)
    return path


def _ensure_outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _write_manifest(out_dir: str, command: str, resolved: dict) -> None:
    kv = {
        "command": command,
        "package_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
    }
    for key, value in sorted(resolved.items()):
        kv[f"arg.{key}"] = str(value)
    kvio.write_kv(os.path.join(out_dir, "manifest.kv"), kv)


def _planner_config(args) -> tuple[MctsConfig, RewardWeights]:
    """Defaults, overlaid by --config file entries, overlaid by flags."""
    cfg = MctsConfig()
    weights = RewardWeights()
    if getattr(args, "config", None):
        kv = kvio.read_kv(_require_file(args.config))
        mcts_fields = {
            "iterations": int, "depth": int, "dt": float, "gamma": float,
            "ucb_c": float, "rollout_policy": str, "belief_mode": str,
            "beta": float, "seed": int,
        }
        weight_fields = {
            "velocity": float, "wrong_lane": float, "end_lane": float,
            "end_lane_ramp": float, "center": float, "action": float,
            "lateral_factor": float, "collision": float,
        }
        for key, raw in kv.items():
            if key in mcts_fields:
                cfg = replace(cfg, **{key: mcts_fields[key](raw)})
            elif key.startswith("reward.") and key[7:] in weight_fields:
                name = key[7:]
                weights = replace(weights, **{name: weight_fields[name](raw)})
            else:
                raise CliError(f"{args.config}: unknown planner config key {key!r}")
    for name in ("iterations", "depth", "gamma", "ucb_c", "rollout_policy", "belief_mode"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            cfg = replace(cfg, **{name: value})
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg, weights


# ---------------------------------------------------------------------------
# synth-trials
# ---------------------------------------------------------------------------

def cmd_synth_trials(args) -> int:
    out_dir = _ensure_outdir(args.out)
    cfg = SynthConfig(
        n_samples=int(round(args.duration * args.rate)),
        dt=1.0 / args.rate,
        noise_sigma=args.noise,
    )
    trials = generate_corpus(args.n_successful, args.n_unsuccessful, args.model,
                             args.seed, cfg)
    path = os.path.join(out_dir, "trials.csv")
    save_trials(trials, path)
    _write_manifest(out_dir, "synth-trials", vars(args))
    print(f"wrote {len(trials)} trials to {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    trials = load_trials(_require_file(args.trials))
    if not trials:
        raise CliError(f"{args.trials}: no trials to calibrate")
    out_dir = _ensure_outdir(args.out)
    fit_cfg = FitConfig(n_starts=args.n_starts, sigma_eps=args.sigma_eps, seed=args.seed)

    report_rows = []
    table_rows = []
    for scenario in (SCENARIO_SUCCESSFUL, SCENARIO_UNSUCCESSFUL):
        group = [t for t in trials if t.scenario == scenario]
        if not group:
            continue
        fits = [fit_mle(trial, args.model, fit_cfg) for trial in group]
        kept = set(filter_outliers([f.cost for f in fits]))
        survivors = [f for i, f in enumerate(fits) if i in kept]
        for i, f in enumerate(fits):
            report_rows.append(
                [f.trial_id, scenario, int(i in kept), repr(f.cost), repr(f.mse)]
                + [repr(v) for v in f.theta.as_array()]
            )
        if len(survivors) < 2:
            raise CliError(
                f"scenario {scenario!r}: only {len(survivors)} usable fits, "
                f"need >= 2 for a distribution"
            )
        dist = fit_gaussian(survivors)
        save_distribution(
            dist, os.path.join(out_dir, f"{args.model}_{scenario}.kv")
        )
        avg_mse, max_mse = evaluate_mse(dist.mean_params(), group, args.model)
        table_rows.append([args.model, scenario, "mean"]
                          + [repr(v) for v in dist.mean])
        table_rows.append([args.model, scenario, "variance"]
                          + [repr(v) for v in dist.variance])
        print(f"{scenario}: {len(survivors)}/{len(group)} fits kept, "
              f"distribution-mean MSE avg={avg_mse:.4f} max={max_mse:.4f}")

    names = PARAM_NAMES[args.model]
    with open(os.path.join(out_dir, "calibration_report.csv"), "w",
              encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["trial_id", "scenario", "kept", "cost", "mse", *names])
        writer.writerows(report_rows)
    with open(os.path.join(out_dir, "distributions.csv"), "w",
              encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "scenario", "statistic", *names])
        writer.writerows(table_rows)
    _write_manifest(out_dir, "calibrate", vars(args))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train-classifier
# ---------------------------------------------------------------------------

def _load_classifier_csv(path: str) -> list[tuple[YieldFeatures, int]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in (*FEATURE_COLUMNS, "label") if c not in header]
        if missing:
            raise ClassifierError(f"{path}: missing column(s): {', '.join(missing)}")
        data = []
        for lineno, row in enumerate(reader, start=2):
            try:
                f = YieldFeatures(
                    gap_leader=float(row["gap_leader"]),
                    ego_d=float(row["ego_d"]),
                    ego_v=float(row["ego_v"]),
                    rel_pos=float(row["rel_pos"]),
                    v_k=float(row["v_k"]),
                    v_leader=float(row["v_leader"]),
                    bias=float(row["bias"]),
                )
                data.append((f, int(row["label"])))
            except ValueError as exc:
                raise ClassifierError(f"{path}:{lineno}: {exc}") from exc
    return data


def cmd_train_classifier(args) -> int:
    if (args.data is None) == (args.synthetic is None):
        raise CliError("exactly one of --data or --synthetic is required")
    if args.data:
        data = _load_classifier_csv(_require_file(args.data))
    else:
        data = synthesize_classifier_data(args.synthetic, seed=args.seed)
    out_dir = _ensure_outdir(args.out)
    cfg = TrainConfig(l2=args.l2, tol=args.tol, max_iter=args.max_iter,
                      standardize=args.standardize, beta=args.beta)
    weights = train(data, cfg)
    path = os.path.join(out_dir, "classifier.kv")
    save_weights(weights, path)
    correct = sum(
        (predict_prob(weights, f) > 0.5) == bool(label) for f, label in data
    )
    _write_manifest(out_dir, "train-classifier", vars(args))
    print(f"trained on {len(data)} rows, accuracy {correct / len(data):.3f}, "
          f"weights in {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def _predictor_from_flag(name: str) -> PredictorConfig:
    if name == "vdm":
        return PredictorConfig(kind=MODEL_VDM)
    if name == "idm-fixed":
        return PredictorConfig(kind="idm_fixed")
    raise CliError(f"unknown predictor {name!r}")


def _episode_job(packed):
    scenario, cfg, predictor, weights, classifier = packed
    return run_episode(scenario, cfg, predictor, reward_weights=weights,
                       classifier=classifier)


def cmd_simulate(args) -> int:
    cfg, weights = _planner_config(args)
    predictor = _predictor_from_flag(args.predictor)
    classifier = load_weights(_require_file(args.classifier)) if args.classifier else None
    out_dir = _ensure_outdir(args.out)
    if args.scenario:
        base = load_scenario(_require_file(args.scenario))
        children = np.random.SeedSequence(args.seed).spawn(args.n)
        scenarios = [
            replace(base, seed=int(np.random.default_rng(c).integers(2**62)))
            for c in children
        ]
    else:
        gen_cfg = GenConfig(p_yield=args.p_yield,
                            sample_env_params=not args.env_mean_params)
        scenarios = generate_scenarios(args.n, gen_cfg, args.seed)

    jobs = [(sc, cfg, predictor, weights, classifier) for sc in scenarios]
    if args.workers > 1:
        import multiprocessing

        with multiprocessing.Pool(args.workers) as pool:
            traces = pool.map(_episode_job, jobs)
    else:
        traces = [_episode_job(job) for job in jobs]

    for i, trace in enumerate(traces):
        write_trace_csv(trace, os.path.join(out_dir, f"episode_{i:04d}.csv"))
        if args.plots:
            _plot_episode(trace, os.path.join(out_dir, f"episode_{i:04d}.svg"))
    with open(os.path.join(out_dir, "summary.csv"), "w",
              encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["episode", "seed", "m_rear", "outcome", "steps",
                         "total_reward", "note"])
        for i, trace in enumerate(traces):
            writer.writerow([i, trace.scenario.seed, trace.scenario.scene.rear.m,
                             trace.outcome, len(trace.steps),
                             repr(trace.total_reward), trace.note])
    metrics = aggregate(traces)
    _write_metrics_csv(os.path.join(out_dir, "metrics.csv"), args.predictor, metrics)
    _write_manifest(out_dir, "simulate", vars(args))
    aborted = sum(1 for t in traces if t.outcome == "aborted")
    print(f"{metrics.success_count}/{metrics.total} merged "
          f"({aborted} aborted), errors: a={metrics.a_err:.3f} m/s^2 "
          f"v={metrics.v_err:.3f} m/s x={metrics.x_err:.3f} m")
    return EXIT_OK


def _write_metrics_csv(path: str, model: str, metrics) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "a_error", "v_error", "x_error", "success"])
        writer.writerow([model, repr(metrics.a_err), repr(metrics.v_err),
                         repr(metrics.x_err),
                         f"{metrics.success_count}/{metrics.total}"])


def _plot_episode(trace, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    scenes = [s.scene for s in trace.steps] + [trace.final_scene]
    t = [sc.t for sc in scenes]
    fig, (ax_s, ax_v) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    for label, getter in (
        ("ego", lambda sc: sc.ego), ("rear", lambda sc: sc.others[0]),
        ("lead", lambda sc: sc.others[1]),
    ):
        ax_s.plot(t, [getter(sc).s for sc in scenes], label=label)
        ax_v.plot(t, [getter(sc).v for sc in scenes], label=label)
    ax_s.set_ylabel("position (m)")
    ax_v.set_ylabel("speed (m/s)")
    ax_v.set_xlabel("time (s)")
    ax_s.legend()
    ax_s.set_title(f"outcome: {trace.outcome}")
    fig.savefig(path, format="svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    cfg, weights = _planner_config(args)
    predictor = _predictor_from_flag(args.predictor)
    classifier = load_weights(_require_file(args.classifier)) if args.classifier else None
    trials = read_replay_csv(_require_file(args.replay), dt=args.dt)
    out_dir = _ensure_outdir(args.out)
    metrics = replay_evaluate(trials, cfg, predictor, reward_weights=weights,
                              classifier=classifier)
    _write_metrics_csv(os.path.join(out_dir, "metrics.csv"), args.predictor, metrics)
    _write_manifest(out_dir, "evaluate", vars(args))
    print(f"{metrics.success_count}/{metrics.total} collision-free, "
          f"errors: a={metrics.a_err:.3f} m/s^2 v={metrics.v_err:.3f} m/s "
          f"x={metrics.x_err:.3f} m")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lanemerge",
        description="Interaction-aware lane-change planning: calibration, "
                    "classifier training, simulation, replay evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=0, help="master random seed")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth-trials", help="generate synthetic car-following trials")
    add_common(p)
    p.add_argument("--model", choices=[MODEL_IDM, MODEL_VDM], default=MODEL_VDM)
    p.add_argument("--n-successful", type=int, default=25)
    p.add_argument("--n-unsuccessful", type=int, default=25)
    p.add_argument("--noise", type=float, default=0.05, help="accel noise sigma (m/s^2)")
    p.add_argument("--rate", type=float, default=10.0, help="samples per second")
    p.add_argument("--duration", type=float, default=5.0, help="trial length (s)")
    p.set_defaults(func=cmd_synth_trials)

    p = sub.add_parser("calibrate", help="fit per-trial parameters and distributions")
    add_common(p)
    p.add_argument("--trials", required=True, help="trial CSV path")
    p.add_argument("--model", choices=[MODEL_IDM, MODEL_VDM], default=MODEL_VDM)
    p.add_argument("--n-starts", type=int, default=16)
    p.add_argument("--sigma-eps", type=float, default=1.0)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("train-classifier", help="fit yield-classifier weights")
    add_common(p)
    p.add_argument("--data", help="labeled feature CSV")
    p.add_argument("--synthetic", type=int,
                   help="instead of --data: number of synthetic scenes")
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=100_000)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--beta", type=float, default=0.85)
    p.set_defaults(func=cmd_train_classifier)

    def add_planner_flags(p):
        p.add_argument("--config", help="planner config file (key-value)")
        p.add_argument("--iterations", type=int)
        p.add_argument("--depth", type=int)
        p.add_argument("--gamma", type=float)
        p.add_argument("--ucb-c", type=float, dest="ucb_c")
        p.add_argument("--rollout-policy", choices=["random", "hold"],
                       dest="rollout_policy")
        p.add_argument("--belief-mode", choices=["threshold", "sample"],
                       dest="belief_mode")
        p.add_argument("--predictor", choices=["vdm", "idm-fixed"], default="vdm")
        p.add_argument("--classifier", help="weights file (default: bundled)")

    p = sub.add_parser("simulate", help="run seeded closed-loop episodes")
    add_common(p)
    add_planner_flags(p)
    p.add_argument("--n", type=int, default=100, help="number of episodes")
    p.add_argument("--p-yield", type=float, default=0.5, dest="p_yield")
    p.add_argument("--env-mean-params", action="store_true",
                   help="drive env cars with distribution means instead of draws")
    p.add_argument("--scenario", help="run this scenario file instead of generating")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--plots", action="store_true", help="write per-episode SVG charts")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="replay planning against recorded trials")
    add_common(p)
    add_planner_flags(p)
    p.add_argument("--replay", required=True, help="replay trial CSV")
    p.add_argument("--dt", type=float, default=1.0, help="recording step (s)")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (CalibrationError, ClassifierError, kvio.KvError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
