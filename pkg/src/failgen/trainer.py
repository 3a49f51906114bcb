"""Multi-stage elite training loop: one diffusion model per scenario.

Each stage draws fresh initial states, queries the model at thresholds
uniform in [0, rho_tilde], simulates the generated noise, resets rho_tilde to
the batch's elite quantile, appends everything to the running dataset, and
trains on the records at or below the cutoff, until the cutoff converges or
reaches zero.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, config_hash
from .diffusion import DiffusionModel, NormStats, new_model
from .geometry import Branch
from .optim import AdamW
from .prior import PriorModel, sample_initial_state, sample_prior_noise, s0_normalization
from .records import read_jsonl, write_jsonl
from .rng import (TAG_BEHAVIOR, TAG_NET_INIT, TAG_NOISE, TAG_SAMPLER,
                  TAG_STATES, TAG_THRESHOLDS, TAG_TRAIN, draw_seed, stream)
from .simulator import run_simulation


def elite_cutoff(robustness_values, alpha: float) -> float:
    """Nearest-rank quantile: the ceil(alpha * n)-th smallest value."""
    values = np.asarray(robustness_values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("elite_cutoff: empty robustness list")
    rank = math.ceil(alpha * values.size)
    rank = min(max(rank, 1), values.size)
    return float(np.partition(values, rank - 1)[rank - 1])


def has_converged(cutoff_history, tol: float, max_stages: int | None = None) -> bool:
    """Converged when the cutoff hits 0, stalls within tol for three
    consecutive stage-to-stage deltas, or the stage budget is exhausted."""
    history = list(cutoff_history)
    if not history:
        return False
    if history[-1] == 0.0:
        return True
    if max_stages is not None and len(history) >= max_stages:
        return True
    if len(history) >= 4:
        deltas = [abs(history[i] - history[i - 1]) for i in range(-3, 0)]
        if all(d <= tol for d in deltas):
            return True
    return False


@dataclass
class EliteDataset:
    """Append-only pool of (noise sequence, robustness, initial state) records."""
    eps: list = field(default_factory=list)          # (23, 4) arrays
    rho: list = field(default_factory=list)
    s0: list = field(default_factory=list)           # (4,) arrays
    stage: list = field(default_factory=list)
    behavior_seed: list = field(default_factory=list)

    def __len__(self):
        return len(self.rho)

    def append_batch(self, eps, rho, s0, stage, behavior_seeds):
        for j in range(len(rho)):
            self.eps.append(np.asarray(eps[j], dtype=np.float64))
            self.rho.append(float(rho[j]))
            self.s0.append(np.asarray(s0[j], dtype=np.float64))
            self.stage.append(int(stage))
            self.behavior_seed.append(int(behavior_seeds[j]))

    def elite_indices(self, cutoff: float, alpha: float):
        """Records with rho <= cutoff; if none, the ceil(alpha*n) lowest."""
        rho = np.asarray(self.rho)
        idx = np.nonzero(rho <= cutoff)[0]
        if idx.size == 0:
            n = math.ceil(alpha * len(rho))
            idx = np.argsort(rho, kind="stable")[:n]
        return idx

    def rows(self):
        for j in range(len(self)):
            yield {"stage": self.stage[j], "rho": self.rho[j],
                   "s0": [float(v) for v in self.s0[j]],
                   "epsilon": [float(v) for v in self.eps[j].reshape(-1)],
                   "behavior_seed": self.behavior_seed[j]}

    @classmethod
    def from_rows(cls, rows):
        ds = cls()
        for r in rows:
            ds.eps.append(np.asarray(r["epsilon"], dtype=np.float64).reshape(23, 4))
            ds.rho.append(float(r["rho"]))
            ds.s0.append(np.asarray(r["s0"], dtype=np.float64))
            ds.stage.append(int(r["stage"]))
            ds.behavior_seed.append(int(r["behavior_seed"]))
        return ds


@dataclass
class TrainerState:
    rho_tilde: float
    stage: int
    cutoff_history: list


def _default_evaluator(scenario: Branch, cfg):
    def evaluate(s0, eps, behavior_seed):
        return run_simulation(s0, eps, scenario, behavior_seed, cfg.world).rho
    return evaluate


def _simulate_batch(s0s, epss, seeds, evaluate):
    return np.array([evaluate(s0s[j], epss[j], seeds[j])
                     for j in range(len(seeds))], dtype=np.float64)


def _train_model(model: DiffusionModel, dataset: EliteDataset, indices,
                 cfg: RunConfig, train_rng) -> float:
    """Train for epochs_per_stage passes over the selected records.

    The optimizer is rebuilt each stage so an interrupted run resumed from a
    stage checkpoint replays the remaining stages exactly.
    """
    tc = cfg.trainer
    opt = AdamW(model.net, lr=tc.lr, weight_decay=tc.weight_decay)
    eps = np.stack([dataset.eps[i] for i in indices])
    rho = np.array([dataset.rho[i] for i in indices])
    s0 = np.stack([dataset.s0[i] for i in indices])
    n = len(indices)
    losses = []
    for _ in range(tc.epochs_per_stage):
        order = train_rng.permutation(n)
        for lo in range(0, n, tc.batch_n):
            sel = order[lo:lo + tc.batch_n]
            loss = model.training_loss(eps[sel], rho[sel], s0[sel], train_rng)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
    return float(np.mean(losses))


def bootstrap_stage(scenario: Branch, cfg: RunConfig, master_seed: int,
                    evaluate=None):
    """Alg. stage 0: prior-noise batch, initial cutoff, first training pass."""
    evaluate = evaluate or _default_evaluator(scenario, cfg)
    n = cfg.trainer.batch_n
    prior = PriorModel(cfg.world.noise_scale)
    st_rng = stream(master_seed, int(scenario), TAG_STATES, 0)
    nz_rng = stream(master_seed, int(scenario), TAG_NOISE, 0)
    bh_rng = stream(master_seed, int(scenario), TAG_BEHAVIOR, 0)

    s0s = [sample_initial_state(scenario, cfg.world, st_rng) for _ in range(n)]
    epss = [sample_prior_noise(prior, nz_rng) for _ in range(n)]
    seeds = [draw_seed(bh_rng) for _ in range(n)]
    rhos = _simulate_batch(s0s, epss, seeds, evaluate)

    rho_tilde = elite_cutoff(rhos, cfg.trainer.alpha)
    dataset = EliteDataset()
    dataset.append_batch(epss, rhos, s0s, 0, seeds)

    s0_mean, s0_half = s0_normalization(scenario, cfg.world)
    norm = NormStats(gamma=cfg.world.noise_scale,
                     rho_scale=max(rho_tilde, 1e-6),
                     s0_mean=s0_mean, s0_half=s0_half)
    model = new_model(scenario, cfg.diffusion, norm,
                      stream(master_seed, int(scenario), TAG_NET_INIT, 0))
    t0 = time.time()
    mean_loss = _train_model(model, dataset, np.arange(len(dataset)), cfg,
                             stream(master_seed, int(scenario), TAG_TRAIN, 0))
    state = TrainerState(rho_tilde=rho_tilde, stage=0,
                         cutoff_history=[rho_tilde])
    report = {"stage": 0, "rho_tilde": rho_tilde, "elite_count": len(dataset),
              "dataset_size": len(dataset),
              "batch_failure_rate": float(np.mean(rhos == 0.0)),
              "mean_loss": mean_loss, "duration_s": time.time() - t0}
    return state, model, dataset, report


def improvement_stage(state: TrainerState, model: DiffusionModel,
                      dataset: EliteDataset, scenario: Branch, cfg: RunConfig,
                      master_seed: int, evaluate=None):
    """One self-improvement stage; mutates state and dataset, returns report."""
    evaluate = evaluate or _default_evaluator(scenario, cfg)
    n = cfg.trainer.batch_n
    t = state.stage + 1
    st_rng = stream(master_seed, int(scenario), TAG_STATES, t)
    th_rng = stream(master_seed, int(scenario), TAG_THRESHOLDS, t)
    sp_rng = stream(master_seed, int(scenario), TAG_SAMPLER, t)
    bh_rng = stream(master_seed, int(scenario), TAG_BEHAVIOR, t)

    s0s = np.stack([sample_initial_state(scenario, cfg.world, st_rng)
                    for _ in range(n)])
    thresholds = th_rng.uniform(0.0, state.rho_tilde, size=n)
    t0 = time.time()
    epss = model.sample(thresholds, s0s, sp_rng)
    seeds = [draw_seed(bh_rng) for _ in range(n)]
    rhos = _simulate_batch(s0s, epss, seeds, evaluate)

    state.rho_tilde = elite_cutoff(rhos, cfg.trainer.alpha)
    state.stage = t
    state.cutoff_history.append(state.rho_tilde)
    dataset.append_batch(epss, rhos, s0s, t, seeds)

    elites = dataset.elite_indices(state.rho_tilde, cfg.trainer.alpha)
    mean_loss = _train_model(model, dataset, elites, cfg,
                             stream(master_seed, int(scenario), TAG_TRAIN, t))
    return {"stage": t, "rho_tilde": state.rho_tilde,
            "elite_count": int(len(elites)), "dataset_size": len(dataset),
            "batch_failure_rate": float(np.mean(rhos == 0.0)),
            "mean_loss": mean_loss, "duration_s": time.time() - t0}


def _report_header(scenario, cfg, master_seed, kind):
    return {"format": f"failgen/{kind}", "version": 1,
            "config_hash": config_hash(cfg), "scenario": scenario.name.lower(),
            "master_seed": int(master_seed)}


def train_scenario(scenario: Branch, cfg: RunConfig, master_seed: int,
                   out_dir: str | Path | None = None, evaluate=None,
                   resume: bool = False, log=None):
    """Run the full loop; returns (model, reports, converged).

    With out_dir set, persists per-stage checkpoints, a JSONL training report
    and the running dataset; resume=True continues an interrupted run and
    replays the exact trajectory an uninterrupted run would have taken.
    """
    out = Path(out_dir) if out_dir is not None else None
    chash = config_hash(cfg)
    name = scenario.name.lower()
    reports = []
    state = model = dataset = None

    if resume and out is not None and (out / f"{name}-report.jsonl").exists():
        header, rows = read_jsonl(out / f"{name}-report.jsonl")
        if header["config_hash"] != chash:
            raise ValueError("resume: config hash mismatch with existing report")
        if int(header["master_seed"]) != int(master_seed):
            raise ValueError("resume: master seed mismatch with existing report")
        reports = rows
        _, drows = read_jsonl(out / f"{name}-dataset.jsonl")
        dataset = EliteDataset.from_rows(drows)
        last = reports[-1]
        model = DiffusionModel.load(out / f"{name}-stage{last['stage']}.ckpt",
                                    expected_config_hash=chash)
        state = TrainerState(rho_tilde=float(last["rho_tilde"]),
                             stage=int(last["stage"]),
                             cutoff_history=[float(r["rho_tilde"]) for r in reports])

    def persist(report):
        if out is None:
            return
        out.mkdir(parents=True, exist_ok=True)
        model.save(out / f"{name}-stage{report['stage']}.ckpt", chash,
                   extra={"stage": report["stage"], "master_seed": int(master_seed)})
        write_jsonl(out / f"{name}-report.jsonl",
                    _report_header(scenario, cfg, master_seed, "training-report"),
                    reports)
        write_jsonl(out / f"{name}-dataset.jsonl",
                    _report_header(scenario, cfg, master_seed, "elite-dataset"),
                    dataset.rows())

    if state is None:
        state, model, dataset, report = bootstrap_stage(scenario, cfg,
                                                        master_seed, evaluate)
        reports.append(report)
        persist(report)
        if log:
            log(report)

    while not has_converged(state.cutoff_history, cfg.trainer.convergence_tol,
                            cfg.trainer.max_stages):
        report = improvement_stage(state, model, dataset, scenario, cfg,
                                   master_seed, evaluate)
        reports.append(report)
        persist(report)
        if log:
            log(report)

    # converged in the genuine sense, not merely out of stage budget
    converged = has_converged(state.cutoff_history, cfg.trainer.convergence_tol)
    if out is not None:
        final = dict(reports[-1])
        final["converged"] = bool(converged)
        reports[-1] = final
        persist(final)
    return model, reports, bool(converged)
