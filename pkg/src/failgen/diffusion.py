"""Conditional denoising diffusion over observation-error sequences.

The forward chain corrupts a sequence toward a unit Gaussian along a fixed
increasing variance schedule; the reverse chain denoises a Gaussian draw
conditioned on (step, robustness threshold, initial state).  The network
predicts the injected noise and the reverse mean is reconstructed from it;
the reverse step variance is beta_k, with no noise injected at the final
step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .config import DiffusionConfig, ConfigError
from .geometry import Branch
from .nets import DenoiserNet, SEQ_LEN, CHANNELS, param_arrays, load_param_arrays


@dataclass
class VarianceSchedule:
    betas: np.ndarray          # [K], increasing in (0, 1)
    alphas: np.ndarray         # 1 - betas
    alpha_bars: np.ndarray     # running products, strictly decreasing

    @property
    def K(self) -> int:
        return len(self.betas)


def make_schedule(K: int, beta_start: float, beta_end: float) -> VarianceSchedule:
    """Linear beta interpolation over K steps."""
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ConfigError("need 0 < beta_start < beta_end < 1")
    if K < 2:
        raise ConfigError("K must be at least 2")
    betas = np.linspace(beta_start, beta_end, K, dtype=np.float64)
    alphas = 1.0 - betas
    return VarianceSchedule(betas, alphas, np.cumprod(alphas))


@dataclass
class NormStats:
    """Fixed normalization: eps by the prior scale, threshold by the
    bootstrap cutoff, initial state by analytic scenario moments."""
    gamma: float
    rho_scale: float
    s0_mean: np.ndarray
    s0_half: np.ndarray


class DiffusionModel:
    def __init__(self, net: DenoiserNet, schedule: VarianceSchedule,
                 norm: NormStats, scenario: Branch, dtype=torch.float32):
        self.net = net
        self.schedule = schedule
        self.norm = norm
        self.scenario = scenario
        self.dtype = dtype
        # lookup tensors indexed by k-1
        self._sqrt_ab = torch.from_numpy(np.sqrt(schedule.alpha_bars)).to(dtype)
        self._sqrt_1m_ab = torch.from_numpy(
            np.sqrt(1.0 - schedule.alpha_bars)).to(dtype)

    def to_double(self) -> "DiffusionModel":
        """Switch to float64 compute (used by gradient-accuracy checks)."""
        self.net.double()
        self.dtype = torch.float64
        self._sqrt_ab = self._sqrt_ab.double()
        self._sqrt_1m_ab = self._sqrt_1m_ab.double()
        return self

    # --- normalization -------------------------------------------------
    def eps_to_net(self, eps: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(np.asarray(eps, dtype=np.float64)
                                / math.sqrt(self.norm.gamma)).to(self.dtype)

    def eps_from_net(self, x: torch.Tensor) -> np.ndarray:
        return x.detach().cpu().numpy().astype(np.float64) * math.sqrt(self.norm.gamma)

    def cond_to_net(self, rho, s0):
        rho = np.asarray(rho, dtype=np.float64) / self.norm.rho_scale
        s0 = (np.asarray(s0, dtype=np.float64) - self.norm.s0_mean) / self.norm.s0_half
        return (torch.from_numpy(rho).to(self.dtype),
                torch.from_numpy(s0).to(self.dtype))

    # --- forward process ------------------------------------------------
    def q_sample(self, eps0: torch.Tensor, k: torch.Tensor,
                 z: torch.Tensor) -> torch.Tensor:
        """Closed-form forward marginal sqrt(ab_k) eps0 + sqrt(1-ab_k) z.

        eps0, z: [B, 23, 4] in normalized space; k: [B] in 1..K.
        """
        idx = k.long() - 1
        a = self._sqrt_ab[idx][:, None, None]
        b = self._sqrt_1m_ab[idx][:, None, None]
        return a * eps0 + b * z

    def training_loss(self, eps0_raw: np.ndarray, rho_raw: np.ndarray,
                      s0_raw: np.ndarray, rng: np.random.Generator) -> torch.Tensor:
        """Noise-prediction MSE on a batch, k ~ U{1..K}, graph attached."""
        if len(eps0_raw) == 0:
            raise ValueError("training_loss: empty batch")
        B = len(eps0_raw)
        K = self.schedule.K
        k = torch.from_numpy(rng.integers(1, K + 1, size=B))
        z = torch.from_numpy(rng.standard_normal((B, SEQ_LEN, CHANNELS))).to(self.dtype)
        eps0 = self.eps_to_net(eps0_raw)
        rho, s0 = self.cond_to_net(rho_raw, s0_raw)
        eps_k = self.q_sample(eps0, k, z)
        pred = self.net(eps_k, k, rho, s0)
        return torch.mean((pred - z) ** 2)

    # --- reverse process --------------------------------------------------
    def p_sample_step(self, eps_k: torch.Tensor, k: int, rho: torch.Tensor,
                      s0: torch.Tensor, z: torch.Tensor | None) -> torch.Tensor:
        """One reverse step; deterministic (mean only) at k = 1."""
        B = eps_k.shape[0]
        beta = float(self.schedule.betas[k - 1])
        alpha = float(self.schedule.alphas[k - 1])
        ab = float(self.schedule.alpha_bars[k - 1])
        kk = torch.full((B,), k, dtype=torch.int64)
        pred = self.net(eps_k, kk, rho, s0)
        mean = (eps_k - (beta / math.sqrt(1.0 - ab)) * pred) / math.sqrt(alpha)
        if k == 1 or z is None:
            return mean
        return mean + math.sqrt(beta) * z

    def sample(self, rho_threshold, s0_raw: np.ndarray,
               rng: np.random.Generator) -> np.ndarray:
        """Draw noise sequences conditioned on (threshold, initial state).

        rho_threshold: scalar or [B]; s0_raw: [B, 4].  Returns [B, 23, 4] in
        prior-noise units.
        """
        s0_raw = np.atleast_2d(np.asarray(s0_raw, dtype=np.float64))
        B = s0_raw.shape[0]
        rho_raw = np.broadcast_to(np.asarray(rho_threshold, dtype=np.float64),
                                  (B,)).copy()
        rho, s0 = self.cond_to_net(rho_raw, s0_raw)
        x = torch.from_numpy(rng.standard_normal((B, SEQ_LEN, CHANNELS))).to(self.dtype)
        with torch.no_grad():
            for k in range(self.schedule.K, 0, -1):
                z = (torch.from_numpy(
                        rng.standard_normal((B, SEQ_LEN, CHANNELS))).to(self.dtype)
                     if k > 1 else None)
                x = self.p_sample_step(x, k, rho, s0, z)
        return self.eps_from_net(x)

    # --- persistence ----------------------------------------------------
    def save(self, path, config_hash: str, extra: dict | None = None) -> None:
        header = {
            "kind": "diffusion-model",
            "config_hash": config_hash,
            "scenario": self.scenario.name,
            "net": {"base_width": self.net.base_width,
                    "cond_dim": self.net.cond_dim,
                    "time_embed_dim": self.net.time_embed_dim},
            "norm": {"gamma": self.norm.gamma,
                     "rho_scale": self.norm.rho_scale,
                     "s0_mean": self.norm.s0_mean.tolist(),
                     "s0_half": self.norm.s0_half.tolist()},
            "extra": extra or {},
        }
        arrays = {f"net.{k}": v for k, v in param_arrays(self.net).items()}
        arrays["schedule.betas"] = self.schedule.betas
        save_checkpoint(path, header, arrays)

    @classmethod
    def load(cls, path, expected_config_hash: str | None = None) -> "DiffusionModel":
        from .checkpoint import require_config_hash
        header, arrays = load_checkpoint(path)
        if header.get("kind") != "diffusion-model":
            raise ValueError(f"{path}: not a diffusion model checkpoint")
        if expected_config_hash is not None:
            require_config_hash(header, expected_config_hash, path)
        net = DenoiserNet(**header["net"])
        load_param_arrays(net, {k[len("net."):]: v for k, v in arrays.items()
                                if k.startswith("net.")})
        betas = arrays["schedule.betas"]
        schedule = VarianceSchedule(betas, 1.0 - betas, np.cumprod(1.0 - betas))
        n = header["norm"]
        norm = NormStats(n["gamma"], n["rho_scale"],
                         np.array(n["s0_mean"]), np.array(n["s0_half"]))
        return cls(net, schedule, norm, Branch[header["scenario"]])


def new_model(scenario: Branch, dcfg: DiffusionConfig, norm: NormStats,
              init_rng: np.random.Generator) -> DiffusionModel:
    from .nets import reinit_parameters
    net = DenoiserNet(base_width=dcfg.base_width, cond_dim=dcfg.cond_dim,
                      time_embed_dim=dcfg.time_embed_dim)
    reinit_parameters(net, init_rng)
    schedule = make_schedule(dcfg.steps_k, dcfg.beta_start, dcfg.beta_end)
    return DiffusionModel(net, schedule, norm, scenario)
