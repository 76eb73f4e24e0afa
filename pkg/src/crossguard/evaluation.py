"""Evaluation rollouts for the learned policy and the FCFS baseline,
plus the ablation campaign that trains and scores config variants.

Evaluation worlds disable the stall-collision training rule and run the
actor deterministically.  Controllers are compared on paired worlds: the
same world seed feeds both the policy and the baseline.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .config import RunConfig, apply_variant, derive_seed
from .env import OBS_DIM, IntersectionEnv
from .fcfs import FcfsState, fcfs_decide
from .metrics import EvalTrace, MetricsReport, compute_metrics, reports_to_csv, write_summary
from .sac import SacAgent
from .training import TrainArtifacts, run_training
from .world import World


def load_agent(cfg: RunConfig, agent_prefix: str | Path) -> SacAgent:
    agent = SacAgent(obs_dim=OBS_DIM, hidden=cfg.hidden, seed=0)
    agent.load(agent_prefix)
    return agent


def rollout_policy(
    cfg: RunConfig, agent: SacAgent, world_seed: int, steps: int
) -> EvalTrace:
    env = IntersectionEnv(
        seed=world_seed,
        dt=cfg.dt,
        demand=cfg.demand,
        training_mode=False,
        truncation_steps=cfg.truncation_steps,
    )
    trace = EvalTrace(seed=world_seed)
    for _ in range(steps):
        obs_map = env.observe_all()
        actions = {
            vid: agent.sample_action(obs, deterministic=True)
            for vid, obs in sorted(obs_map.items())
        }
        env.env_step(actions)
        trace.queue_series.append(int(env.world.u_q.sum()))
    world = env.world
    trace.completed_waits = list(world.completed_waits)
    trace.collisions = world.collision_count
    trace.throughput = world.throughput
    trace.steps = steps
    return trace


def rollout_fcfs(cfg: RunConfig, world_seed: int, steps: int) -> EvalTrace:
    world = World(
        dt=cfg.dt,
        seed=world_seed,
        demand=cfg.demand,
        training_mode=False,
        control_enabled=True,
    )
    state = FcfsState(seed=derive_seed(world_seed, "fcfs-tie"))
    trace = EvalTrace(seed=world_seed)
    for _ in range(steps):
        commands = fcfs_decide(world, state)
        world.spawn()
        world.step(commands)
        trace.queue_series.append(int(world.u_q.sum()))
    trace.completed_waits = list(world.completed_waits)
    trace.collisions = world.collision_count
    trace.throughput = world.throughput
    trace.steps = steps
    return trace


def eval_seeds_for(base_seed: int, count: int) -> list[int]:
    """World seeds shared by every controller evaluated against this run."""
    return [derive_seed(base_seed, f"eval-world:{i}") for i in range(count)]


def evaluate(
    cfg: RunConfig,
    controller: str,
    agent_prefix: str | Path | None = None,
    steps: int | None = None,
    world_seeds: list[int] | None = None,
) -> list[MetricsReport]:
    steps = steps if steps is not None else cfg.eval_steps
    if world_seeds is None:
        world_seeds = eval_seeds_for(cfg.seed, cfg.eval_seeds)
    if controller == "policy":
        if agent_prefix is None:
            raise ValueError("policy evaluation needs a checkpoint prefix")
        agent = load_agent(cfg, agent_prefix)
        traces = [rollout_policy(cfg, agent, ws, steps) for ws in world_seeds]
    elif controller == "fcfs":
        traces = [rollout_fcfs(cfg, ws, steps) for ws in world_seeds]
    else:
        raise ValueError(f"unknown controller '{controller}'")
    return [compute_metrics(t) for t in traces]


@dataclass
class AblationResult:
    variant: str
    seed: int
    artifacts: TrainArtifacts
    reports: list[MetricsReport]


def run_ablation(
    cfg: RunConfig,
    variants: list[str],
    seeds: list[int],
    out_dir: str | Path,
    echo=None,
) -> list[AblationResult]:
    """Train each variant on each seed, then score it on shared eval worlds.

    Writes one metrics CSV row per (variant, seed, eval world) plus a JSON
    summary of per-variant means under ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results: list[AblationResult] = []
    rows: list[tuple[str, MetricsReport]] = []
    for variant in variants:
        for seed in seeds:
            run_cfg = apply_variant(
                replace(cfg, seed=seed, out=str(out_dir / f"{variant}-seed{seed}")),
                variant,
            )
            if echo is not None:
                echo(f"training variant={variant} seed={seed}")
            artifacts = run_training(run_cfg, echo=echo)
            world_seeds = eval_seeds_for(seed, cfg.eval_seeds)
            reports = evaluate(
                run_cfg, "policy", artifacts.agent_prefix, world_seeds=world_seeds
            )
            results.append(AblationResult(variant, seed, artifacts, reports))
            rows.extend((variant, rep) for rep in reports)
            if echo is not None:
                for rep in reports:
                    echo(
                        f"  eval world={rep.seed} awt={rep.awt:.2f} "
                        f"aql={rep.aql:.2f} throughput={rep.throughput}"
                    )
    reports_to_csv(rows, out_dir / "ablation_metrics.csv")
    write_summary(rows, out_dir / "ablation_summary.json")
    return results
