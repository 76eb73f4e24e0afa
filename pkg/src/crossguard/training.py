"""End-to-end training: rollout, risk-shaped rewards, learner updates.

Per step the loop runs in a fixed order: sample actions, advance the world,
extend each vehicle's state-action window, predict collision risk on that
window, assemble the shaped reward, store the transition, resolve finished
trajectories into the labeled pools, then update the actor-critic on its
cadence and the predictor on balanced batches.  The predicted-risk reward
term is held at zero for the warm-up episodes while the pools fill.  Until
the transition buffer can feed updates, actions come from a uniform
warm-start stream instead of the untrained actor.

Outputs under the run directory: resolved config, per-episode training
curves (CSV), network checkpoints, labeled sequence-pool snapshots, and a
held-out set of pre-collision windows for probing.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_module, save_module
from .config import RunConfig, derive_seed, write_resolved
from .env import (
    CAUSE_ARRIVED,
    CAUSE_COLLISION,
    CAUSE_TRUNCATED,
    OBS_DIM,
    IntersectionEnv,
    total_reward,
)
from .replay import (
    LABEL_COLLISION,
    LABEL_SAFE,
    SequenceBuffer,
    Transition,
    TransitionBuffer,
    WindowTracker,
    balanced_sample,
)
from .risk import RiskPredictor, StateActionSequence
from .sac import SacAgent

CURVES_NAME = "training_curves.csv"

CURVE_FIELDS = [
    "episode",
    "steps",
    "reward_mean",
    "eff_mean",
    "safe_mean",
    "risk_term_mean",
    "stalls",
    "crossing_collisions",
    "rear_end_collisions",
    "collisions_total",
    "stall_rate",
    "collision_rate",
    "throughput",
    "arrived",
    "truncated",
    "actor_loss",
    "critic_loss",
    "predictor_loss",
    "predictor_steps",
    "alpha",
    "transitions",
    "risk_pool",
    "safe_pool",
]


@dataclass
class TrainArtifacts:
    out_dir: Path
    curves_path: Path
    agent_prefix: Path
    predictor_path: Path
    risk_pool_path: Path
    safe_pool_path: Path
    holdout_path: Path
    episodes: int
    holdout_count: int


def _fmt(x: float) -> str:
    return f"{x:.10g}"


class Trainer:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.agent = SacAgent(
            obs_dim=OBS_DIM,
            hidden=cfg.hidden,
            seed=derive_seed(cfg.seed, "agent"),
            alpha=cfg.alpha,
            gamma=cfg.gamma,
            tau=cfg.tau,
            actor_lr=cfg.actor_lr,
            critic_lr=cfg.critic_lr,
            auto_alpha=cfg.auto_alpha,
            target_entropy=cfg.target_entropy,
        )
        self.predictor = RiskPredictor(
            seed=derive_seed(cfg.seed, "predictor"), beta=cfg.beta
        )
        self.pred_opt = self.predictor.make_optimizer(cfg.predictor_lr)
        self.transitions = TransitionBuffer(seed=derive_seed(cfg.seed, "transitions"))
        self.d_risk = SequenceBuffer(LABEL_COLLISION, seed=derive_seed(cfg.seed, "risk-pool"))
        self.d_safe = SequenceBuffer(LABEL_SAFE, seed=derive_seed(cfg.seed, "safe-pool"))
        self.batch_rng = np.random.default_rng(derive_seed(cfg.seed, "batches"))
        self.start_rng = np.random.default_rng(derive_seed(cfg.seed, "start-actions"))
        self.holdout: list[StateActionSequence] = []
        self._collision_serial = 0
        self.global_step = 0

    # -- trajectory resolution ------------------------------------------------

    def _resolve(self, tracker: WindowTracker, vid: int, cause: str):
        """Label a finished trajectory, diverting every k-th collision
        window into the held-out probe set instead of the training pool."""
        if cause == CAUSE_COLLISION:
            self._collision_serial += 1
            if self._collision_serial % self.cfg.holdout_every == 0:
                snap = tracker.snapshot(vid)
                if snap is not None:
                    snap.label = LABEL_COLLISION
                    self.holdout.append(snap)
                tracker.discard(vid)
                return
        tracker.finalize(vid, cause)

    # -- learner updates --------------------------------------------------------

    def _maybe_update_sac(self) -> dict[str, float] | None:
        cfg = self.cfg
        if len(self.transitions) < max(cfg.update_after, cfg.sac_batch):
            return None
        return self.agent.update(self.transitions.sample_arrays(cfg.sac_batch))

    def _maybe_update_predictor(self) -> float | None:
        batch = balanced_sample(
            self.d_risk, self.d_safe, self.cfg.predictor_batch, self.batch_rng
        )
        if batch is None:
            return None
        x, y = batch
        return self.predictor.train_step(self.pred_opt, x, y)

    def _consolidate_predictor(self) -> int:
        """Post-loop polish on the frozen pools.

        In-loop updates chase a moving data distribution and leave the
        predictor at a noisy stopping point; a short balanced-batch pass over
        the final pools settles it before the checkpoint is written.
        """
        cfg = self.cfg
        rng = np.random.default_rng(derive_seed(cfg.seed, "predictor-consolidation"))
        done = 0
        for _ in range(cfg.predictor_finetune_steps):
            batch = balanced_sample(self.d_risk, self.d_safe, cfg.predictor_batch, rng)
            if batch is None:
                break
            self.predictor.train_step(self.pred_opt, *batch)
            done += 1
        return done

    # -- main loop -----------------------------------------------------------

    def run(self, resume_from: str | Path | None = None, echo=None) -> TrainArtifacts:
        cfg = self.cfg
        out_dir = Path(cfg.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_resolved(cfg, out_dir / "config_resolved.txt")
        if resume_from is not None:
            self.agent.load(Path(resume_from) / "sac")
            load_module(Path(resume_from) / "risk_predictor.npz", self.predictor)

        curves_path = out_dir / CURVES_NAME
        started = time.monotonic()
        with open(curves_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
            writer.writeheader()
            for episode in range(cfg.episodes):
                row = self._run_episode(episode)
                writer.writerow(row)
                fh.flush()
                if echo is not None and (episode + 1) % 10 == 0:
                    echo(
                        f"episode {episode + 1}/{cfg.episodes} "
                        f"reward_mean={row['reward_mean']} "
                        f"collisions={row['collisions_total']} "
                        f"throughput={row['throughput']} "
                        f"wall={time.monotonic() - started:.0f}s"
                    )

        consolidated = self._consolidate_predictor()
        if echo is not None and consolidated:
            echo(f"predictor consolidation: {consolidated} steps on the final pools")

        agent_prefix = out_dir / "sac"
        self.agent.save(agent_prefix)
        predictor_path = out_dir / "risk_predictor.npz"
        save_module(
            predictor_path,
            self.predictor,
            {"beta": cfg.beta, "seed": float(cfg.seed), "lr": cfg.predictor_lr},
        )
        risk_pool_path = out_dir / "risk_pool.npz"
        safe_pool_path = out_dir / "safe_pool.npz"
        self.d_risk.save(risk_pool_path)
        self.d_safe.save(safe_pool_path)
        holdout_path = out_dir / "holdout_collision.npz"
        holdout_buf = SequenceBuffer(LABEL_COLLISION, capacity=max(1, len(self.holdout)))
        for seq in self.holdout:
            holdout_buf.push(seq)
        holdout_buf.save(holdout_path)
        return TrainArtifacts(
            out_dir=out_dir,
            curves_path=curves_path,
            agent_prefix=agent_prefix,
            predictor_path=predictor_path,
            risk_pool_path=risk_pool_path,
            safe_pool_path=safe_pool_path,
            holdout_path=holdout_path,
            episodes=cfg.episodes,
            holdout_count=len(self.holdout),
        )

    def _run_episode(self, episode: int) -> dict:
        cfg = self.cfg
        env = IntersectionEnv(
            seed=derive_seed(cfg.seed, f"episode:{episode}"),
            dt=cfg.dt,
            demand=cfg.demand,
            training_mode=cfg.stall_rule,
            truncation_steps=cfg.truncation_steps,
        )
        tracker = WindowTracker(self.d_risk, self.d_safe)
        warmup = episode < cfg.risk_warmup_episodes

        reward_sum = eff_sum = safe_sum = risk_sum = 0.0
        n_outcomes = 0
        stalls = crossings = rear_ends = 0
        arrived = truncated = 0
        actor_losses: list[float] = []
        critic_losses: list[float] = []
        pred_losses: list[float] = []

        for _ in range(cfg.steps_per_episode):
            obs_map = env.observe_all()
            # uniform warm-start actions until the buffer can feed updates
            explore = len(self.transitions) < max(cfg.update_after, cfg.sac_batch)
            if explore:
                actions = {
                    vid: float(self.start_rng.uniform(-1.0, 1.0))
                    for vid in sorted(obs_map)
                }
            else:
                actions = {
                    vid: self.agent.sample_action(obs)
                    for vid, obs in sorted(obs_map.items())
                }
            outcomes = env.env_step(actions)
            self.global_step += 1

            windows = {
                oc.vehicle_id: tracker.append(oc.vehicle_id, oc.obs, oc.action_raw)
                for oc in outcomes
            }
            if outcomes and not warmup:
                stacked = np.stack([windows[oc.vehicle_id] for oc in outcomes])
                risks = self.predictor.predict(stacked)
            else:
                risks = np.zeros(len(outcomes))

            for oc, risk in zip(outcomes, risks):
                breakdown = total_reward(
                    oc.r_eff,
                    oc.r_safe,
                    float(risk),
                    w_eff=cfg.lambda_eff,
                    w_risk=cfg.lambda_risk,
                    w_safe=cfg.lambda_safe,
                )
                bootstrap_done = 1.0 if oc.cause in (CAUSE_COLLISION, CAUSE_ARRIVED) else 0.0
                self.transitions.push(
                    Transition(
                        obs=oc.obs,
                        action=oc.action_raw,
                        reward=breakdown.total,
                        next_obs=oc.next_obs,
                        done=bootstrap_done,
                    )
                )
                reward_sum += breakdown.total
                eff_sum += breakdown.r_eff
                safe_sum += breakdown.r_safe
                risk_sum += breakdown.r_risk_term
                n_outcomes += 1
                if oc.done:
                    self._resolve(tracker, oc.vehicle_id, oc.cause)
                    if oc.cause == CAUSE_ARRIVED:
                        arrived += 1
                    elif oc.cause == CAUSE_TRUNCATED:
                        truncated += 1

            for ev in env.world.last_events.collisions:
                if ev.kind == "stall":
                    stalls += 1
                elif ev.kind == "rear_end":
                    rear_ends += 1
                else:
                    crossings += 1

            if cfg.update_cadence == "step" and self.global_step % cfg.update_every == 0:
                diag = self._maybe_update_sac()
                if diag is not None:
                    actor_losses.append(diag["actor"])
                    critic_losses.append(0.5 * (diag["critic1"] + diag["critic2"]))
            if self.global_step % cfg.predictor_every == 0:
                loss = self._maybe_update_predictor()
                if loss is not None:
                    pred_losses.append(loss)

        if cfg.update_cadence == "episode":
            diag = self._maybe_update_sac()
            if diag is not None:
                actor_losses.append(diag["actor"])
                critic_losses.append(0.5 * (diag["critic1"] + diag["critic2"]))

        for vid in tracker.live_vehicles():
            tracker.discard(vid)

        collisions_total = stalls + crossings + rear_ends
        denom = max(1, n_outcomes)
        world = env.world
        return {
            "episode": episode,
            "steps": cfg.steps_per_episode,
            "reward_mean": _fmt(reward_sum / denom),
            "eff_mean": _fmt(eff_sum / denom),
            "safe_mean": _fmt(safe_sum / denom),
            "risk_term_mean": _fmt(risk_sum / denom),
            "stalls": stalls,
            "crossing_collisions": crossings,
            "rear_end_collisions": rear_ends,
            "collisions_total": collisions_total,
            "stall_rate": _fmt(stalls / cfg.steps_per_episode),
            "collision_rate": _fmt(collisions_total / cfg.steps_per_episode),
            "throughput": world.throughput,
            "arrived": arrived,
            "truncated": truncated,
            "actor_loss": _fmt(float(np.mean(actor_losses))) if actor_losses else "",
            "critic_loss": _fmt(float(np.mean(critic_losses))) if critic_losses else "",
            "predictor_loss": _fmt(float(np.mean(pred_losses))) if pred_losses else "",
            "predictor_steps": len(pred_losses),
            "alpha": _fmt(self.agent.alpha),
            "transitions": len(self.transitions),
            "risk_pool": len(self.d_risk),
            "safe_pool": len(self.d_safe),
        }


def run_training(cfg: RunConfig, resume_from=None, echo=None) -> TrainArtifacts:
    return Trainer(cfg).run(resume_from=resume_from, echo=echo)
