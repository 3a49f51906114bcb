"""1-D U-Net denoiser with (step, robustness-threshold, initial-state) conditioning.

torch supplies tensor ops and reverse-mode gradients; the architecture,
initialization, and all randomness are owned here.  Sequences of length 23
are zero-padded to 24 on the way in and cropped on the way out.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

torch.set_num_threads(1)  # bitwise reproducibility regardless of host cores

SEQ_LEN = 23
CHANNELS = 4


def sinusoidal_embedding(k: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard transformer-style embedding of integer step indices."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32)
                      / max(half - 1, 1))
    args = k.to(torch.float32)[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, ch_in, ch_out, cond_dim, groups=4):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, ch_in)
        self.conv1 = nn.Conv1d(ch_in, ch_out, 3, padding=1)
        self.cond = nn.Linear(cond_dim, ch_out)
        self.norm2 = nn.GroupNorm(groups, ch_out)
        self.conv2 = nn.Conv1d(ch_out, ch_out, 3, padding=1)
        self.skip = nn.Conv1d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()

    def forward(self, x, cond):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.cond(cond)[:, :, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class DenoiserNet(nn.Module):
    """Four-stage 1-D U-Net predicting the injected noise.

    Stage widths are base_width * (1, 2, 4, 8).  Conditioning is a sinusoidal
    embedding of the denoising step concatenated with the normalized
    robustness threshold and initial state, encoded by a two-layer MLP and
    injected additively per stage.
    """

    def __init__(self, base_width=16, cond_dim=64, time_embed_dim=32):
        super().__init__()
        self.base_width = base_width
        self.cond_dim = cond_dim
        self.time_embed_dim = time_embed_dim
        widths = [base_width * m for m in (1, 2, 4, 8)]
        self.widths = widths

        self.cond_encoder = nn.Sequential(
            nn.Linear(time_embed_dim + 1 + 4, cond_dim), nn.SiLU(),
            nn.Linear(cond_dim, cond_dim), nn.SiLU())

        self.stem = nn.Conv1d(CHANNELS, widths[0], 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        ch = widths[0]
        for w in widths:
            self.down_blocks.append(ResBlock(ch, w, cond_dim))
            self.downsamples.append(nn.Conv1d(w, w, 3, stride=2, padding=1))
            ch = w
        self.mid = ResBlock(ch, ch, cond_dim)
        self.up_convs = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        outs = [widths[0]] + widths[:-1]   # decoder output widths, bottom-up order
        for w, out in zip(reversed(widths), reversed(outs)):
            self.up_convs.append(nn.Conv1d(ch, ch, 3, padding=1))
            self.up_blocks.append(ResBlock(ch + w, out, cond_dim))
            ch = out
        self.head_norm = nn.GroupNorm(4, ch)
        self.head = nn.Conv1d(ch, CHANNELS, 3, padding=1)

    def forward(self, eps_k: torch.Tensor, k: torch.Tensor, rho: torch.Tensor,
                s0: torch.Tensor) -> torch.Tensor:
        """eps_k: [B, 23, 4]; k: [B] int; rho: [B]; s0: [B, 4] -> [B, 23, 4]."""
        if eps_k.shape[1:] != (SEQ_LEN, CHANNELS):
            raise ValueError(f"expected input [B, {SEQ_LEN}, {CHANNELS}], "
                             f"got {tuple(eps_k.shape)}")
        emb = sinusoidal_embedding(k, self.time_embed_dim)
        cond = self.cond_encoder(torch.cat([emb, rho[:, None], s0], dim=1))

        x = eps_k.transpose(1, 2)
        x = F.pad(x, (0, 1))                    # 23 -> 24
        x = self.stem(x)
        skips = []
        for block, down in zip(self.down_blocks, self.downsamples):
            x = block(x, cond)
            skips.append(x)
            x = down(x)
        x = self.mid(x, cond)
        for conv, block in zip(self.up_convs, self.up_blocks):
            skip = skips.pop()
            x = F.interpolate(x, size=skip.shape[-1], mode="nearest")
            x = conv(x)
            x = block(torch.cat([x, skip], dim=1), cond)
        x = self.head(F.silu(self.head_norm(x)))
        return x[:, :, :SEQ_LEN].transpose(1, 2)


def reinit_parameters(net: DenoiserNet, rng: np.random.Generator) -> None:
    """Deterministic init from a numpy stream: uniform fan-in scaling,
    unit norms, zeroed output layer."""
    for name, module in sorted(net.named_modules()):
        if isinstance(module, (nn.Conv1d, nn.Linear)):
            w = module.weight
            fan_in = w.shape[1] * (w.shape[2] if w.dim() == 3 else 1)
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                w.copy_(torch.from_numpy(
                    rng.uniform(-bound, bound, size=tuple(w.shape)).astype(np.float32)))
                if module.bias is not None:
                    module.bias.copy_(torch.from_numpy(
                        rng.uniform(-bound, bound, size=tuple(module.bias.shape))
                        .astype(np.float32)))
        elif isinstance(module, nn.GroupNorm):
            with torch.no_grad():
                module.weight.fill_(1.0)
                module.bias.fill_(0.0)
    with torch.no_grad():
        net.head.weight.zero_()
        net.head.bias.zero_()


def param_arrays(net: nn.Module) -> dict[str, np.ndarray]:
    return {name: p.detach().cpu().numpy().copy()
            for name, p in sorted(net.named_parameters())}


def load_param_arrays(net: nn.Module, arrays: dict[str, np.ndarray]) -> None:
    params = dict(net.named_parameters())
    if set(params) != set(arrays):
        missing = set(params) ^ set(arrays)
        raise ValueError(f"parameter names do not match checkpoint: {sorted(missing)}")
    with torch.no_grad():
        for name, arr in arrays.items():
            params[name].copy_(torch.from_numpy(np.ascontiguousarray(arr)))


def gradient_arrays(net: nn.Module) -> dict[str, np.ndarray]:
    return {name: (p.grad.detach().cpu().numpy().copy() if p.grad is not None
                   else np.zeros(tuple(p.shape), dtype=np.float32))
            for name, p in sorted(net.named_parameters())}
