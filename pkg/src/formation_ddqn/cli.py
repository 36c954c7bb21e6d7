"""Command-line interface: train, eval, compare-rewards, gradcheck, oracle-check.

Exit codes: 0 success, 1 usage/configuration error, 2 a checked property
failed (gradient check or the chain-MDP oracle check). The numeric backend
is chosen by the FORMATION_DDQN_BACKEND environment variable (auto | numba |
numpy) before any command runs.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, load_config, parse_train
from .evaluation import (compare_rewards, compute_metrics, export_trace,
                         run_scenario)
from .kernels import active_backend
from .learner import EpsilonSchedule, RobotTrainingEnv, TrainConfig, train
from .network import (ArchitectureError, WeightFormatError, forward,
                      gradient_check, init_network, save_weights)
from .scenarios import SCENARIO_NAMES, get_scenario, parse_comparison
from .tabular import ChainEnv, make_chain_mdp, value_iteration

GRADCHECK_TOLERANCE = 1e-4
ORACLE_Q_TOLERANCE = 0.05


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1, not argparse's default 2
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="formation-ddqn",
                     description="Leader-follower formation control "
                                 "with double DQN in a 2D kinematic simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a reaching or keeping model")
    p.add_argument("--model", required=True, choices=["reach", "keep"])
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", required=True, help="output weight file (JSON)")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--episodes", type=int, default=None,
                   help="override the config's episode count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="roll trained models through a scenario")
    p.add_argument("--scenario", required=True,
                   help=f"one of: {', '.join(SCENARIO_NAMES)}")
    p.add_argument("--reach", required=True, help="reach-model weight file")
    p.add_argument("--keep", required=True, help="keep-model weight file")
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True, help="output trace CSV")
    p.add_argument("--config", default=None,
                   help="optional config defining extra scenarios")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare-rewards",
                       help="train state-action vs state-only reward arms")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck",
                       help="verify analytic gradients against finite differences")
    p.add_argument("--nets", type=int, default=10)
    p.add_argument("--params", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle-check",
                       help="train on the chain MDP and compare against "
                            "value iteration")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle)
    return parser


def cmd_train(args) -> int:
    doc = load_config(args.config)
    cfg = parse_train(doc.get("train", {}), model_kind=args.model,
                      episodes=args.episodes, rng_seed=args.seed)
    if cfg.stats_path is None:
        cfg = replace(cfg, stats_path=f"{args.out}.stats.csv")
    net, stats = train(RobotTrainingEnv, cfg)
    save_weights(net, {"d_max": cfg.d_max, "model_kind": cfg.model_kind,
                       "seed": cfg.rng_seed, "episodes": cfg.episodes},
                 args.out)
    print(f"trained {cfg.model_kind} model: {cfg.episodes} episodes, "
          f"{stats.gradient_steps} gradient steps ({active_backend()} backend)")
    print(f"weights -> {args.out}")
    print(f"stats   -> {cfg.stats_path}")
    return 0


def cmd_eval(args) -> int:
    extra = None
    if args.config is not None:
        extra = load_config(args.config).get("scenarios")
    try:
        scenario = get_scenario(args.scenario, extra)
    except KeyError as exc:
        raise _UsageError(str(exc.args[0])) from exc
    if scenario.comparison is not None:
        raise _UsageError(
            f"scenario {scenario.name!r} defines a reward comparison; "
            f"run: formation-ddqn compare-rewards")
    trace = run_scenario(scenario, args.reach, args.keep, args.seed)
    export_trace(trace, args.out)
    metrics = compute_metrics(trace, scenario.world.robot_radius)
    print(f"scenario {scenario.name}: {scenario.steps} steps, "
          f"{len(trace.agent_ids())} agents, seed {args.seed}")
    for fid in sorted(metrics.mean_error):
        print(f"  follower {fid}: mean err {metrics.mean_error[fid]:.4f} m, "
              f"max err {metrics.max_error[fid]:.4f} m")
    print(f"  collisions: {metrics.collision_count}")
    print(f"trace -> {args.out}")
    return 0


def cmd_compare(args) -> int:
    doc = load_config(args.config)
    if "compare" in doc:
        spec = parse_comparison(doc["compare"], "compare")
    else:
        spec = get_scenario("fig4-compare").comparison
    base = parse_train(doc.get("train", {}), model_kind="keep",
                       episodes=spec.episodes, rng_seed=0)
    os.makedirs(args.out, exist_ok=True)
    state_action, state_only = compare_rewards(base, spec)

    import csv
    for arm_name, metrics in (("state_action", state_action),
                              ("state_only", state_only)):
        path = os.path.join(args.out, f"{arm_name}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("seed", "window", "count"))
            for seed in spec.seeds:
                for i, count in enumerate(metrics.windows[seed]):
                    w.writerow((seed, i, int(count)))

    wins = 0
    summary_path = os.path.join(args.out, "summary.csv")
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("seed", "state_action_final", "state_only_final"))
        for seed in spec.seeds:
            sa = int(state_action.windows[seed][-1])
            so = int(state_only.windows[seed][-1])
            wins += sa >= so
            w.writerow((seed, sa, so))
    print(f"final-window time-in-radius (radius {spec.radius} m, "
          f"window {spec.window} episodes):")
    for seed in spec.seeds:
        print(f"  seed {seed}: state-action "
              f"{int(state_action.windows[seed][-1])}, "
              f"state-only {int(state_only.windows[seed][-1])}")
    print(f"state-action arm ahead or equal in {wins}/{len(spec.seeds)} seeds")
    print(f"results -> {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.nets):
        net = init_network(rng)
        worst = max(worst, gradient_check(net, rng, n_checks=args.params))
    print(f"gradient check: worst relative error {worst:.3e} over "
          f"{args.nets} nets x {args.params} parameters "
          f"({active_backend()} backend)")
    if worst < GRADCHECK_TOLERANCE:
        print("PASS")
        return 0
    print(f"FAIL (tolerance {GRADCHECK_TOLERANCE})")
    return 2


def chain_train_config(seed: int = 0) -> TrainConfig:
    """Desk-scale config that trains the production net on the chain MDP."""
    return TrainConfig(
        model_kind="keep",  # unused by ChainEnv; any valid kind
        episodes=800,
        rng_seed=seed,
        batch_size=64,
        gamma=0.99,
        lr=0.001,
        max_steps_per_episode=50,
        replay_capacity=10_000,
        replay_min=500,
        target_sync_period=250,
        epsilon=EpsilonSchedule(start=1.0, decay=0.995, floor=0.3),
    )


def oracle_check(seed: int = 0):
    """Train on the chain, compare to value iteration.

    Returns (greedy_ok, worst_q_error, details) where greedy_ok means the
    trained net's greedy action matches the oracle in every non-terminal
    state and worst_q_error is the largest |Q_net - Q*| over those states'
    actions (net action j plays chain action j % 2).
    """
    mdp = make_chain_mdp()
    q_star = value_iteration(mdp, gamma=0.99)
    cfg = chain_train_config(seed)
    net, _ = train(lambda c: ChainEnv(mdp), cfg)

    greedy_ok = True
    worst = 0.0
    details = []
    for s in range(mdp.n_states):
        if mdp.terminal[s]:
            continue
        feats = np.zeros(cfg.arch[0])
        feats[s] = 1.0
        q = forward(net, feats)
        net_action = int(np.argmax(q)) % mdp.n_actions
        oracle_action = int(np.argmax(q_star[s]))
        if net_action != oracle_action:
            greedy_ok = False
        err = float(np.max(np.abs(q - q_star[s][np.arange(len(q)) % mdp.n_actions])))
        worst = max(worst, err)
        details.append((s, net_action, oracle_action, err))
    return greedy_ok, worst, details


def cmd_oracle(args) -> int:
    greedy_ok, worst, details = oracle_check(args.seed)
    for s, net_a, oracle_a, err in details:
        print(f"state {s}: net action {net_a}, oracle action {oracle_a}, "
              f"max |Q - Q*| {err:.4f}")
    ok = greedy_ok and worst <= ORACLE_Q_TOLERANCE
    if ok:
        print(f"PASS (worst Q error {worst:.4f} <= {ORACLE_Q_TOLERANCE})")
        return 0
    print(f"FAIL (greedy match: {greedy_ok}, worst Q error {worst:.4f}, "
          f"tolerance {ORACLE_Q_TOLERANCE})")
    return 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, WeightFormatError, ArchitectureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
