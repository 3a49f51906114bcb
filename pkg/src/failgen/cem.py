"""Cross-entropy-method baseline: a diagonal Gaussian proposal over the
flattened noise sequence, iteratively refit on elite samples.

Unlike the diffusion model the proposal conditions on nothing; initial states
are resampled fresh each iteration and the fit is unconditional.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, config_hash
from .geometry import Branch
from .prior import sample_initial_state
from .records import FORMAT_VERSION
from .rng import TAG_BEHAVIOR, TAG_NOISE, TAG_STATES, draw_seed, stream
from .simulator import run_simulation
from .trainer import elite_cutoff, has_converged

DIM = 23 * 4


@dataclass
class GaussianProposal:
    mean: np.ndarray       # [92]
    var: np.ndarray        # [92], diagonal covariance

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(DIM)
        self.var = np.asarray(self.var, dtype=np.float64).reshape(DIM)
        if np.any(self.var <= 0.0):
            raise ValueError("proposal variances must be positive")


def prior_proposal(gamma: float) -> GaussianProposal:
    return GaussianProposal(np.zeros(DIM), np.full(DIM, gamma))


def cem_fit_elite(samples, robustness, alpha: float, var_floor: float,
                  prev: GaussianProposal | None = None,
                  smoothing: float = 1.0) -> GaussianProposal:
    """Refit on records at or below the nearest-rank alpha-quantile.

    Per-dimension sample mean/variance, smoothed toward the previous proposal
    and floored; with fewer than two elites the variance is all floor.
    """
    flat = np.asarray([np.reshape(s, DIM) for s in samples], dtype=np.float64)
    robustness = np.asarray(robustness, dtype=np.float64)
    if len(flat) != len(robustness) or len(flat) == 0:
        raise ValueError("cem_fit_elite: empty or mismatched inputs")
    cutoff = elite_cutoff(robustness, alpha)
    elites = flat[robustness <= cutoff]
    mean = elites.mean(axis=0)
    var = elites.var(axis=0) if len(elites) >= 2 else np.zeros(DIM)
    if prev is not None:
        mean = smoothing * mean + (1.0 - smoothing) * prev.mean
        var = smoothing * var + (1.0 - smoothing) * prev.var
    return GaussianProposal(mean, np.maximum(var, var_floor))


def cem_sample(proposal: GaussianProposal, count: int,
               rng: np.random.Generator) -> np.ndarray:
    """i.i.d. draws reshaped to (count, 23, 4)."""
    flat = proposal.mean + np.sqrt(proposal.var) * rng.standard_normal((count, DIM))
    return flat.reshape(count, 23, 4)


def cem_train(scenario: Branch, cfg: RunConfig, master_seed: int,
              evaluate=None, log=None):
    """Iterate sample/simulate/refit from the prior until the elite cutoff
    converges (same test as the diffusion trainer); returns (proposal,
    reports, converged)."""
    if evaluate is None:
        def evaluate(s0, eps, behavior_seed):
            return run_simulation(s0, eps, scenario, behavior_seed, cfg.world).rho
    cc = cfg.cem
    var_floor = cc.var_floor_ratio * cfg.world.noise_scale
    proposal = prior_proposal(cfg.world.noise_scale)
    history = []
    reports = []
    stage = 0
    while True:
        st_rng = stream(master_seed, int(scenario), TAG_STATES, stage)
        nz_rng = stream(master_seed, int(scenario), TAG_NOISE, stage)
        bh_rng = stream(master_seed, int(scenario), TAG_BEHAVIOR, stage)
        t0 = time.time()
        epss = cem_sample(proposal, cc.batch_n, nz_rng)
        s0s = [sample_initial_state(scenario, cfg.world, st_rng)
               for _ in range(cc.batch_n)]
        seeds = [draw_seed(bh_rng) for _ in range(cc.batch_n)]
        rhos = np.array([evaluate(s0s[j], epss[j], seeds[j])
                         for j in range(cc.batch_n)])
        cutoff = elite_cutoff(rhos, cc.alpha)
        history.append(cutoff)
        proposal = cem_fit_elite(epss, rhos, cc.alpha, var_floor,
                                 prev=proposal, smoothing=cc.smoothing)
        report = {"stage": stage, "rho_tilde": cutoff,
                  "elite_count": int(np.sum(rhos <= cutoff)),
                  "dataset_size": int((stage + 1) * cc.batch_n),
                  "batch_failure_rate": float(np.mean(rhos == 0.0)),
                  "mean_loss": None, "duration_s": time.time() - t0}
        reports.append(report)
        if log:
            log(report)
        stage += 1
        if has_converged(history, cc.convergence_tol, cc.max_stages):
            break
    converged = has_converged(history, cc.convergence_tol)
    return proposal, reports, bool(converged)


def save_proposal(proposal: GaussianProposal, path: str | Path, cfg: RunConfig,
                  scenario: Branch, extra: dict | None = None) -> None:
    doc = {"format": "failgen/cem-proposal", "version": FORMAT_VERSION,
           "config_hash": config_hash(cfg), "scenario": scenario.name.lower(),
           "mean": proposal.mean.tolist(), "var": proposal.var.tolist()}
    doc.update(extra or {})
    with open(path, "w") as f:
        json.dump(doc, f)


def load_proposal(path: str | Path, expected_config_hash: str | None = None):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "failgen/cem-proposal":
        raise ValueError(f"{path}: not a CEM proposal file")
    if (expected_config_hash is not None
            and doc.get("config_hash") != expected_config_hash):
        raise ValueError(f"{path}: config hash mismatch")
    return GaussianProposal(np.array(doc["mean"]), np.array(doc["var"])), doc
