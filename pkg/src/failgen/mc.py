"""Seeded parallel Monte Carlo failure search under the prior noise model.

Episode i draws everything from the stream (master_seed, scenario, i), so the
failure set is a pure function of the run spec no matter how many workers
execute it.  Only failures are persisted, with full provenance for replay;
the output file is checkpointed atomically and runs are resumable.
"""

from __future__ import annotations

import math
import multiprocessing as mp
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, config_hash
from .geometry import Branch
from .prior import PriorModel, sample_initial_state, sample_prior_noise
from .records import read_jsonl, validate_header, write_jsonl
from .rng import draw_seed, stream
from .simulator import SimulationResult, run_simulation


@dataclass
class McRunSpec:
    scenario: Branch
    episodes: int
    master_seed: int
    out_path: str | None = None
    checkpoint_interval: int = 100_000
    workers: int = 1

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")


@dataclass
class McSummary:
    episodes: int
    failures: int
    failure_rate: float
    elapsed_s: float

    def as_dict(self):
        return {"episodes": self.episodes, "failures": self.failures,
                "failure_rate": self.failure_rate, "elapsed_s": self.elapsed_s}


def run_episode(master_seed: int, scenario: Branch, index: int,
                cfg: RunConfig) -> SimulationResult:
    """Simulate episode `index` of a Monte Carlo run."""
    rng = stream(master_seed, int(scenario), index)
    s0 = sample_initial_state(scenario, cfg.world, rng)
    eps = sample_prior_noise(PriorModel(cfg.world.noise_scale), rng,
                             steps=cfg.world.horizon_steps - 1)
    behavior_seed = draw_seed(rng)
    return run_simulation(s0, eps, scenario, behavior_seed, cfg.world)


def _failure_record(scenario: Branch, index: int, result: SimulationResult,
                    s0, eps) -> dict:
    return {"scenario": scenario.name.lower(), "episode_index": index,
            "s0": [float(v) for v in s0],
            "epsilon": [float(v) for v in np.reshape(eps, -1)],
            "behavior_seed": int(result.behavior_seed),
            "rho": result.rho}


def _run_chunk(args):
    master_seed, scenario_id, start, end, cfg = args
    scenario = Branch(scenario_id)
    failures = []
    for i in range(start, end):
        rng = stream(master_seed, scenario_id, i)
        s0 = sample_initial_state(scenario, cfg.world, rng)
        eps = sample_prior_noise(PriorModel(cfg.world.noise_scale), rng,
                                 steps=cfg.world.horizon_steps - 1)
        behavior_seed = draw_seed(rng)
        result = run_simulation(s0, eps, scenario, behavior_seed, cfg.world)
        if result.collided:
            failures.append(_failure_record(scenario, i, result, s0, eps))
    return start, end, failures


def _dataset_header(spec: McRunSpec, cfg: RunConfig, completed: int) -> dict:
    return {"format": "failgen/failure-dataset", "config_hash": config_hash(cfg),
            "scenario": spec.scenario.name.lower(),
            "master_seed": int(spec.master_seed),
            "completed_episodes": int(completed),
            "target_episodes": int(spec.episodes)}


def mc_search(spec: McRunSpec, cfg: RunConfig, resume: bool = False,
              progress=None) -> tuple[McSummary, list[dict]]:
    """Run the search; returns the summary and the failure records in
    episode order.  With out_path set the dataset is checkpointed every
    checkpoint_interval episodes via atomic rename and can be resumed."""
    t0 = time.time()
    failures: list[dict] = []
    start = 0
    out = Path(spec.out_path) if spec.out_path else None

    if resume and out is not None and out.exists():
        header, rows = read_jsonl(out)
        validate_header(header, out, kind="failure-dataset",
                        config_hash=config_hash(cfg))
        if (header["scenario"] != spec.scenario.name.lower()
                or int(header["master_seed"]) != int(spec.master_seed)):
            raise ValueError(f"{out}: existing dataset is from a different run spec")
        start = int(header["completed_episodes"])
        failures = rows

    def checkpoint(completed):
        if out is not None:
            write_jsonl(out, _dataset_header(spec, cfg, completed), failures)

    chunk = max(1, min(spec.checkpoint_interval,
                       math.ceil(spec.episodes / max(spec.workers * 4, 1)), 20_000))
    chunks = [(spec.master_seed, int(spec.scenario), a,
               min(a + chunk, spec.episodes), cfg)
              for a in range(start, spec.episodes, chunk)]

    since_checkpoint = 0
    if spec.workers > 1 and len(chunks) > 1:
        ctx = mp.get_context("spawn")
        with ctx.Pool(spec.workers) as pool:
            for a, b, chunk_failures in pool.imap(_run_chunk, chunks):
                failures.extend(chunk_failures)
                since_checkpoint += b - a
                if since_checkpoint >= spec.checkpoint_interval:
                    checkpoint(b)
                    since_checkpoint = 0
                if progress:
                    progress(b, spec.episodes, len(failures))
    else:
        for args in chunks:
            a, b, chunk_failures = _run_chunk(args)
            failures.extend(chunk_failures)
            since_checkpoint += b - a
            if since_checkpoint >= spec.checkpoint_interval:
                checkpoint(b)
                since_checkpoint = 0
            if progress:
                progress(b, spec.episodes, len(failures))

    checkpoint(spec.episodes)
    summary = McSummary(episodes=spec.episodes, failures=len(failures),
                        failure_rate=len(failures) / spec.episodes,
                        elapsed_s=time.time() - t0)
    return summary, failures


def replay(record: dict, cfg: RunConfig) -> SimulationResult:
    """Re-run a persisted record's (s0, epsilon, behavior_seed) exactly."""
    scenario = Branch.parse(record["scenario"])
    eps = np.asarray(record["epsilon"], dtype=np.float64).reshape(
        cfg.world.horizon_steps - 1, 4)
    return run_simulation(np.asarray(record["s0"], dtype=np.float64), eps,
                          scenario, int(record["behavior_seed"]), cfg.world)


def load_failure_dataset(path, cfg: RunConfig | None = None):
    """Read a failure dataset, optionally validating the config hash."""
    header, rows = read_jsonl(path)
    validate_header(header, path, kind="failure-dataset",
                    config_hash=config_hash(cfg) if cfg is not None else None)
    return header, rows
