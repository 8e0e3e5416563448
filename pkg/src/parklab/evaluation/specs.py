"""Picklable policy descriptions so evaluation can fan out across workers."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from ..motion import MotionPredictor
from ..planner.pipeline import PipelineConfig
from ..policy import PolicyConfig
from ..sim.episode import Outcome, run_episode
from ..sim.vehicle import VehicleParams
from ..sim.world import sample_scenario
from ..tokens import TokenVocabulary
from .harness import EvalConfig, load_policy_net
from .metrics import MetricsReport, compute_metrics
from .policies import EvalNoise, LearnedParkingPolicy, brake_policy, make_modular_policy


@dataclass
class PolicySpec:
    kind: str                                  # learned | modular | brake
    checkpoint: str | None = None
    policy_config: PolicyConfig | None = None
    motion_checkpoint: str | None = None
    pipeline: PipelineConfig | None = None
    bev_noise: float = 0.0
    noise: EvalNoise = field(default_factory=EvalNoise)
    execute_all: bool = False


def build_factory(spec: PolicySpec, vocab: TokenVocabulary,
                  params: VehicleParams):
    """Instantiate the per-episode policy factory a spec describes."""
    motion = (MotionPredictor.load(spec.motion_checkpoint)
              if spec.motion_checkpoint else None)
    if spec.kind == "learned":
        net = load_policy_net(spec.checkpoint, vocab,
                              spec.policy_config or PolicyConfig())

        def factory(index: int, ep_seed: int):
            return LearnedParkingPolicy(net, params, motion=motion,
                                        bev_noise=spec.bev_noise,
                                        noise=spec.noise,
                                        noise_seed=ep_seed + 7,
                                        execute_all=spec.execute_all)
        return factory
    if spec.kind == "modular":
        def factory(index: int, ep_seed: int):
            return make_modular_policy(params, spec.pipeline, motion=motion,
                                       noise=spec.noise,
                                       noise_seed=ep_seed + 7)
        return factory
    if spec.kind == "brake":
        return lambda index, ep_seed: brake_policy
    raise ValueError(f"unknown policy kind {spec.kind!r}")


_WORKER_STATE: dict = {}


def _worker_init(spec, cfg, params, vocab):
    _WORKER_STATE["factory"] = build_factory(spec, vocab, params)
    _WORKER_STATE["cfg"] = cfg
    _WORKER_STATE["params"] = params


def _worker_run(index: int):
    cfg: EvalConfig = _WORKER_STATE["cfg"]
    params = _WORKER_STATE["params"]
    ep_seed = cfg.episode_seed(index)
    scenario = sample_scenario(cfg.world, params, ep_seed,
                               slot_choices=cfg.slot_choices)
    policy = _WORKER_STATE["factory"](index, ep_seed)
    result = run_episode(policy, scenario, params, cfg.episode)
    return index, result.outcome.value, result.wall_time_s


def evaluate_spec(spec: PolicySpec, cfg: EvalConfig, params: VehicleParams,
                  vocab: TokenVocabulary, workers: int = 1,
                  train_meta: dict | None = None) -> MetricsReport:
    """Parallel-capable evaluation; results identical for any worker count."""
    if cfg.n_episodes < 20:
        raise ValueError("need at least 20 episodes for rate estimates")
    if train_meta is not None and cfg.slot_choices is not None:
        overlap = set(train_meta.get("slot_choices") or []) \
            & set(cfg.slot_choices)
        if overlap:
            raise ValueError(f"evaluation slots overlap training: {overlap}")

    indices = list(range(cfg.n_episodes))
    if workers <= 1:
        _worker_init(spec, cfg, params, vocab)
        results = [_worker_run(i) for i in indices]
        _WORKER_STATE.clear()
    else:
        ctx = get_context("fork")
        with ctx.Pool(processes=workers, initializer=_worker_init,
                      initargs=(spec, cfg, params, vocab)) as pool:
            results = pool.map(_worker_run, indices)
    results.sort(key=lambda r: r[0])
    outcomes = [Outcome(r[1]) for r in results]
    report = compute_metrics(outcomes, bootstrap_seed=cfg.seed,
                             fingerprint=cfg.fingerprint())
    report.extra["wall_time_mean_s"] = float(np.mean([r[2] for r in results]))
    return report
