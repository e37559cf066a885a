"""Experiment harness: seeded multi-run training, periodic evaluation, CSV
metrics, and cross-seed aggregation.

A run's metrics are a pure function of (config, seed): every random stream is
derived from the run seed, evaluations use fixed derived seeds, and metrics
rows contain only deterministic quantities.  Wall-clock timings are reported
in the run summary, never in the metrics files, so repeated invocations with
the same config produce byte-identical CSVs.
"""

from __future__ import annotations

import json
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, fields

import numpy as np

from .agents import ALGORITHMS, default_agent_config, make_agent
from .envs import evaluate_policy, make_env
from .replay import Transition

METRICS_COLUMNS = (
    "step",
    "eval_mean_return",
    "eval_std_return",
    "target_q_mean",
    "critic_loss",
    "actor_loss",
    "protester_loss",
    "alpha",
)

# Agent hyperparameters a run may override; None defers to the per-algorithm
# defaults in agents.default_agent_config.
_AGENT_OVERRIDE_FIELDS = (
    "hidden",
    "gamma",
    "eta",
    "actor_lr",
    "critic_lr",
    "value_lr",
    "batch_size",
    "buffer_capacity",
    "omega",
    "tau",
    "exploration_noise",
    "target_noise",
    "target_noise_clip",
    "policy_delay",
    "alpha",
    "alpha_autotune",
    "n_atoms",
    "atoms_kept",
)


@dataclass
class RunConfig:
    algorithm: str
    env: str
    total_steps: int = 30_000
    eval_interval: int = 1_000
    eval_episodes: int = 5
    seeds: tuple = (0, 1, 2)
    warmup_steps: int = 1_000
    probe_states: int = 16
    hidden: tuple = None
    gamma: float = None
    eta: float = None
    actor_lr: float = None
    critic_lr: float = None
    value_lr: float = None
    batch_size: int = None
    buffer_capacity: int = None
    omega: float = None
    tau: float = None
    exploration_noise: float = None
    target_noise: float = None
    target_noise_clip: float = None
    policy_delay: int = None
    alpha: float = None
    alpha_autotune: bool = None
    n_atoms: int = None
    atoms_kept: int = None

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}"
            )
        make_env(self.env)  # raises for unknown ids
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if self.eval_interval < 1:
            raise ValueError("eval_interval must be >= 1")
        if self.eval_episodes < 1:
            raise ValueError("eval_episodes must be >= 1")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.hidden is not None:
            self.hidden = tuple(int(h) for h in self.hidden)

    def agent_overrides(self):
        return {
            k: getattr(self, k)
            for k in _AGENT_OVERRIDE_FIELDS
            if getattr(self, k) is not None
        }

    def resolve_agent_config(self, env_spec):
        return default_agent_config(self.algorithm, env_spec, **self.agent_overrides())


def _derived_seed(seed, role):
    """Independent 32-bit seed for a named role within one run."""
    return int(np.random.SeedSequence([int(seed), role]).generate_state(1)[0])


_ROLE_ENV, _ROLE_EVAL, _ROLE_WARMUP, _ROLE_PROBE, _ROLE_BASELINE = range(5)


def _collect_probe_states(env_id, count, seed):
    env = make_env(env_id)
    return np.stack([env.reset(seed + i) for i in range(count)])


def run_single_seed(cfg: RunConfig, seed):
    """Train one agent; returns (metrics_rows, wall_seconds, final_eval_mean).

    Rows are emitted at step 0 and every eval_interval steps; loss columns
    carry the mean over updates since the previous row.
    """
    start = time.perf_counter()
    env = make_env(cfg.env)
    eval_env = make_env(cfg.env)
    agent_cfg = cfg.resolve_agent_config(env.spec)
    agent = make_agent(agent_cfg, seed)

    warmup_rng = np.random.default_rng(_derived_seed(seed, _ROLE_WARMUP))
    eval_seed = _derived_seed(seed, _ROLE_EVAL)
    probe = _collect_probe_states(cfg.env, cfg.probe_states, _derived_seed(seed, _ROLE_PROBE))
    low, high = env.spec.action_low, env.spec.action_high

    rows = []
    pending = {"critic_loss": [], "actor_loss": [], "protester_loss": []}

    def emit(step):
        mean_ret, std_ret = evaluate_policy(eval_env, agent.act_eval, cfg.eval_episodes, eval_seed)
        row = {
            "step": step,
            "eval_mean_return": mean_ret,
            "eval_std_return": std_ret,
            "target_q_mean": agent.measure_target_q(probe),
            "alpha": agent._alpha_metric(),
        }
        for key, acc in pending.items():
            finite = [v for v in acc if np.isfinite(v)]
            row[key] = float(np.mean(finite)) if finite else float("nan")
            acc.clear()
        rows.append(row)

    emit(0)
    s = env.reset(_derived_seed(seed, _ROLE_ENV))
    for step in range(1, cfg.total_steps + 1):
        if step <= cfg.warmup_steps:
            a = warmup_rng.uniform(low, high)
        else:
            a = agent.act_explore(s)
        s_next, r, done = env.step(a)
        timeout = env.steps >= env.spec.max_episode_steps
        terminal = done and not timeout
        m = agent.train_step(
            Transition(
                s=np.asarray(s, dtype=np.float32),
                a=np.asarray(a, dtype=np.float32),
                r=r,
                s_next=np.asarray(s_next, dtype=np.float32),
                terminal=terminal,
            )
        )
        if m["updated"]:
            for key in pending:
                pending[key].append(m[key])
        s = env.reset() if done else s_next
        if step % cfg.eval_interval == 0:
            emit(step)

    wall = time.perf_counter() - start
    return rows, wall, rows[-1]["eval_mean_return"]


def _format_cell(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_metrics_csv(rows, path):
    with open(path, "w", newline="\n") as f:
        f.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(_format_cell(row[c]) for c in METRICS_COLUMNS) + "\n")


def read_metrics_csv(path):
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = []
        for line in f:
            parts = line.strip().split(",")
            rows.append({k: float(v) for k, v in zip(header, parts)})
    return rows


def metrics_filename(algorithm, env, seed):
    return f"{algorithm}__{env}__seed{seed}.csv"


_FILENAME_RE = re.compile(r"^(?P<algo>.+?)__(?P<env>.+?)__seed(?P<seed>-?\d+)\.csv$")


def parse_metrics_filename(name):
    m = _FILENAME_RE.match(os.path.basename(name))
    if m is None:
        raise ValueError(f"not a metrics filename: {name!r}")
    return m.group("algo"), m.group("env"), int(m.group("seed"))


def _run_seed_job(args):
    cfg_dict, seed = args
    cfg = RunConfig(**cfg_dict)
    return seed, run_single_seed(cfg, seed)


def run_experiment(cfg: RunConfig, out_dir, workers=1):
    """Train cfg.seeds independent agents, write one metrics CSV per seed plus
    a summary JSON, and return the summary dict."""
    cfg_dict = asdict(cfg)
    os.makedirs(out_dir, exist_ok=True)
    results = {}
    if workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, payload in pool.map(
                _run_seed_job, [(cfg_dict, s) for s in cfg.seeds]
            ):
                results[seed] = payload
    else:
        for seed in cfg.seeds:
            results[seed] = run_single_seed(cfg, seed)

    finals = []
    final_stds = []
    per_seed = {}
    for seed in cfg.seeds:
        rows, wall, final = results[seed]
        write_metrics_csv(rows, os.path.join(out_dir, metrics_filename(cfg.algorithm, cfg.env, seed)))
        finals.append(final)
        final_stds.append(rows[-1]["eval_std_return"])
        per_seed[str(seed)] = {
            "final_eval_mean": final,
            "final_eval_std": rows[-1]["eval_std_return"],
            "wall_seconds": wall,
        }
    finals = np.asarray(finals)
    final_stds = np.asarray(final_stds)
    summary = {
        "algorithm": cfg.algorithm,
        "env": cfg.env,
        "config": cfg_dict,
        "final_mean": float(finals.mean()),
        "final_std_across_seeds": float(finals.std()),
        "final_std_pooled_episodes": float(
            np.sqrt(np.mean(final_stds**2) + finals.var())
        ),
        "per_seed": per_seed,
    }
    with open(os.path.join(out_dir, f"{cfg.algorithm}__{cfg.env}__summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return summary


def random_policy_baseline(env_id, episodes, seed):
    """Mean/std return of uniformly random actions, via the same evaluation
    protocol used for trained policies."""
    env = make_env(env_id)
    rng = np.random.default_rng(_derived_seed(seed, _ROLE_BASELINE))
    low, high = env.spec.action_low, env.spec.action_high
    return evaluate_policy(env, lambda s: rng.uniform(low, high), episodes, seed)


def aggregate(paths, group=True):
    """Summarize final evaluations across metrics files.

    Groups by (algorithm, env) parsed from the filenames; per group reports
    the final-step evaluation mean across seeds, the across-seed std, and the
    pooled per-episode std.  The best algorithm per environment is flagged.
    With group=False, all files must share one (algorithm, env) pair.
    """
    if isinstance(paths, (str, os.PathLike)):
        root = str(paths)
        paths = sorted(
            os.path.join(root, n) for n in os.listdir(root) if n.endswith(".csv")
        )
    paths = list(paths)
    if not paths:
        raise ValueError("no metrics files to aggregate")
    groups = {}
    for p in paths:
        algo, env, seed = parse_metrics_filename(p)
        rows = read_metrics_csv(p)
        if not rows:
            raise ValueError(f"empty metrics file: {p}")
        groups.setdefault((algo, env), []).append(
            (seed, rows[-1]["eval_mean_return"], rows[-1]["eval_std_return"])
        )
    if not group and len(groups) > 1:
        raise ValueError(
            f"mixed runs without grouping: {sorted(groups)}; pass group=True"
        )
    table = []
    for (algo, env) in sorted(groups):
        entries = sorted(groups[(algo, env)])
        finals = np.asarray([e[1] for e in entries])
        stds = np.asarray([e[2] for e in entries])
        table.append(
            {
                "algorithm": algo,
                "env": env,
                "seeds": len(entries),
                "final_mean": float(finals.mean()),
                "final_std_across_seeds": float(finals.std()),
                "final_std_pooled_episodes": float(np.sqrt(np.mean(stds**2) + finals.var())),
                "best": False,
            }
        )
    for env in {row["env"] for row in table}:
        env_rows = [row for row in table if row["env"] == env]
        max(env_rows, key=lambda r: r["final_mean"])["best"] = True
    return table


def format_aggregate_table(table):
    lines = [
        f"{'algorithm':<12} {'env':<16} {'seeds':>5} {'final_mean':>14} "
        f"{'std(seeds)':>12} {'std(pooled)':>12}  best"
    ]
    for row in table:
        lines.append(
            f"{row['algorithm']:<12} {row['env']:<16} {row['seeds']:>5} "
            f"{row['final_mean']:>14.3f} {row['final_std_across_seeds']:>12.3f} "
            f"{row['final_std_pooled_episodes']:>12.3f}  {'*' if row['best'] else ''}"
        )
    return "\n".join(lines)


def moving_average(values, window=5):
    """Plot-time smoothing; never applied to stored metrics.  Each output i is
    the mean of the trailing window ending at i (shorter at the start)."""
    values = np.asarray(values, dtype=float)
    if window < 1:
        raise ValueError("window must be >= 1")
    out = np.empty_like(values)
    for i in range(values.size):
        out[i] = values[max(0, i - window + 1) : i + 1].mean()
    return out


def signed_log1p(x):
    """Sign-preserving log transform used when plotting target-Q traces."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.log1p(np.abs(x))


def parse_config_file(path):
    """Plain-text ``key = value`` run configuration; keys match RunConfig
    field names.  '#' starts a comment; seeds and hidden are comma-separated."""
    field_types = {f.name: f for f in fields(RunConfig)}
    out = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in field_types:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _parse_config_value(key, value)
    return out


def _parse_config_value(key, value):
    if key in ("seeds", "hidden"):
        return tuple(int(v) for v in value.split(",") if v.strip())
    if key in ("algorithm", "env"):
        return value
    if key == "alpha_autotune":
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean for {key}: {value!r}")
    int_keys = {
        "total_steps", "eval_interval", "eval_episodes", "warmup_steps",
        "probe_states", "batch_size", "buffer_capacity", "policy_delay",
        "n_atoms", "atoms_kept",
    }
    if key in int_keys:
        return int(value)
    return float(value)
