"""Command-line entry points.

    moderl train --algo mpg --env pendulum --steps 30000 --seeds 0,1,2 --out runs/
    moderl tabular-verify --trials 10000
    moderl aggregate runs/
    moderl bias-probe --estimator moderate --k 10 --trials 100000
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .agents import ALGORITHMS
from .harness import (
    RunConfig,
    aggregate,
    format_aggregate_table,
    moving_average,
    parse_config_file,
    read_metrics_csv,
    run_experiment,
)
from .tabular import (
    ESTIMATORS,
    bias_probe,
    contraction_check,
    fixed_point,
    moderate_bellman_apply,
    random_mdp,
    single_state_mdp,
)


def _add_train_parser(sub):
    p = sub.add_parser("train", help="run one algorithm over several seeds")
    p.add_argument("--algo", choices=ALGORITHMS, help="algorithm id")
    p.add_argument("--env", help="environment id (pendulum, pointmass, noisybandit-K)")
    p.add_argument("--steps", type=int, help="total environment steps per seed")
    p.add_argument("--seeds", help="comma-separated seed list, e.g. 0,1,2")
    p.add_argument("--omega", type=float, help="cautious mixing weight")
    p.add_argument("--tau", type=float, help="expectile level for the value net")
    p.add_argument("--eval-interval", type=int, dest="eval_interval")
    p.add_argument("--eval-episodes", type=int, dest="eval_episodes")
    p.add_argument("--warmup", type=int, dest="warmup_steps")
    p.add_argument("--hidden", help="comma-separated hidden sizes, e.g. 64,64")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--buffer-capacity", type=int, dest="buffer_capacity")
    p.add_argument("--gamma", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--actor-lr", type=float, dest="actor_lr")
    p.add_argument("--critic-lr", type=float, dest="critic_lr")
    p.add_argument("--value-lr", type=float, dest="value_lr")
    p.add_argument("--exploration-noise", type=float, dest="exploration_noise")
    p.add_argument("--target-noise", type=float, dest="target_noise")
    p.add_argument("--target-noise-clip", type=float, dest="target_noise_clip")
    p.add_argument("--policy-delay", type=int, dest="policy_delay")
    p.add_argument("--alpha", type=float)
    p.add_argument("--alpha-autotune", dest="alpha_autotune", action="store_true", default=None)
    p.add_argument("--no-alpha-autotune", dest="alpha_autotune", action="store_false", default=None)
    p.add_argument("--n-atoms", type=int, dest="n_atoms")
    p.add_argument("--atoms-kept", type=int, dest="atoms_kept")
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--out", required=True, help="output directory for metrics files")
    p.add_argument("--workers", type=int, default=1, help="parallel seed workers")


def _cmd_train(args):
    settings = {}
    if args.config:
        settings.update(parse_config_file(args.config))
    overrides = {
        "algorithm": args.algo,
        "env": args.env,
        "total_steps": args.steps,
        "eval_interval": args.eval_interval,
        "eval_episodes": args.eval_episodes,
        "warmup_steps": args.warmup_steps,
        "omega": args.omega,
        "tau": args.tau,
        "batch_size": args.batch_size,
        "buffer_capacity": args.buffer_capacity,
        "gamma": args.gamma,
        "eta": args.eta,
        "actor_lr": args.actor_lr,
        "critic_lr": args.critic_lr,
        "value_lr": args.value_lr,
        "exploration_noise": args.exploration_noise,
        "target_noise": args.target_noise,
        "target_noise_clip": args.target_noise_clip,
        "policy_delay": args.policy_delay,
        "alpha": args.alpha,
        "alpha_autotune": args.alpha_autotune,
        "n_atoms": args.n_atoms,
        "atoms_kept": args.atoms_kept,
    }
    if args.seeds is not None:
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if args.hidden is not None:
        overrides["hidden"] = tuple(int(h) for h in args.hidden.split(","))
    settings.update({k: v for k, v in overrides.items() if v is not None})
    if "algorithm" not in settings or "env" not in settings:
        raise SystemExit("train requires --algo and --env (or a config file setting them)")
    cfg = RunConfig(**settings)
    summary = run_experiment(cfg, args.out, workers=args.workers)
    print(
        f"{cfg.algorithm} on {cfg.env}: final return "
        f"{summary['final_mean']:.3f} +- {summary['final_std_across_seeds']:.3f} "
        f"(pooled episode std {summary['final_std_pooled_episodes']:.3f}) "
        f"over seeds {list(cfg.seeds)}"
    )
    return 0


def _cmd_tabular_verify(args):
    rng = np.random.default_rng(args.seed)
    failures = 0
    worst = 0.0
    for _ in range(args.trials):
        S = int(rng.integers(1, 7))
        A = int(rng.integers(1, 7))
        gamma = float(rng.choice([0.5, 0.9, 0.99]))
        m = random_mdp(rng, S, A, gamma)
        Q1 = rng.uniform(-10, 10, size=(S, A))
        Q2 = rng.uniform(-10, 10, size=(S, A))
        omega = float(rng.uniform(0.0, 1.0))
        lhs, rhs, holds = contraction_check(m, Q1, Q2, omega)
        worst = max(worst, lhs - rhs)
        failures += 0 if holds else 1
    print(f"contraction inequality: {args.trials - failures}/{args.trials} hold "
          f"(worst lhs-rhs margin {worst:.3e})")

    ok_fixed = True
    for omega in (0.0, 0.13, 0.2, 1.0):
        m = single_state_mdp([1.0, 0.0], gamma=0.5)
        q = fixed_point(m, omega, tol=1e-10)
        expected = np.array([[2.0 - omega, 1.0 - omega]])
        err = float(np.max(np.abs(q - expected)))
        ok_fixed &= err < 1e-8
        print(f"two-action self-loop fixed point, omega={omega}: max error {err:.2e}")

    m = random_mdp(np.random.default_rng(args.seed + 1), 5, 4, 0.9)
    qa = fixed_point(m, 0.1)
    qb = fixed_point(m, 0.6)
    residual = float(np.max(np.abs(moderate_bellman_apply(m, qa, 0.1) - qa)))
    print(f"fixed-point residual at omega=0.1: {residual:.2e}")
    mono = bool(np.all(qa + 1e-9 >= qb))
    print(f"fixed point nonincreasing in omega on a random MDP: {mono}")

    ok = failures == 0 and ok_fixed
    print("tabular-verify:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_aggregate(args):
    table = aggregate(args.directory)
    print(format_aggregate_table(table))
    if args.curves:
        for name in sorted(os.listdir(args.directory)):
            if not name.endswith(".csv"):
                continue
            rows = read_metrics_csv(os.path.join(args.directory, name))
            values = [r["eval_mean_return"] for r in rows]
            if args.smooth:
                values = list(moving_average(values, window=5))
            series = " ".join(f"{v:.1f}" for v in values)
            print(f"{name}: {series}")
    return 0


def _cmd_bias_probe(args):
    if args.spread == 0.0:
        rewards = np.zeros(args.k)
    else:
        rewards = np.linspace(0.0, args.spread, args.k)
    m = single_state_mdp(rewards, gamma=args.gamma)
    rng = np.random.default_rng(args.seed)
    bias = bias_probe(
        m,
        noise_std=args.noise_std,
        trials=args.trials,
        estimator=args.estimator,
        rng=rng,
        omega=args.omega,
        tau=args.tau,
    )
    print(
        f"{args.estimator} estimator, K={args.k}, spread={args.spread}, "
        f"noise={args.noise_std}, trials={args.trials}: mean bias {bias:.6f}"
    )
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="moderl",
        description="moderated-target actor-critic experiments and operator checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    _add_train_parser(sub)

    p = sub.add_parser("tabular-verify", help="numerically verify the operator properties")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("aggregate", help="summarize metrics files in a directory")
    p.add_argument("directory")
    p.add_argument("--curves", action="store_true", help="also print evaluation curves")
    p.add_argument("--smooth", action="store_true", help="window-5 moving average on curves")

    p = sub.add_parser("bias-probe", help="noise-injection bias of target estimators")
    p.add_argument("--estimator", choices=ESTIMATORS, required=True)
    p.add_argument("--k", type=int, default=10, help="number of actions")
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--noise-std", type=float, default=1.0, dest="noise_std")
    p.add_argument("--spread", type=float, default=0.0,
                   help="true-value spread: rewards linspace(0, spread, K)")
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--omega", type=float, default=0.2)
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)

    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "tabular-verify": _cmd_tabular_verify,
        "aggregate": _cmd_aggregate,
        "bias-probe": _cmd_bias_probe,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
