"""AdamW with decoupled weight decay, operating on named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch


@dataclass
class AdamWState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
               state: AdamWState) -> AdamWState:
    """One AdamW update in place; decay hits the weights, not the moments."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if name not in state.m:
                state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            m, v = state.m[name], state.v[name]
            p.mul_(1.0 - state.lr * state.weight_decay)
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(state.eps), value=-state.lr)
    return state


class AdamW:
    """Thin stateful wrapper tying a network's parameters to adamw_step."""

    def __init__(self, net: torch.nn.Module, lr=3e-4, betas=(0.9, 0.999),
                 eps=1e-8, weight_decay=1e-2):
        self.params = dict(net.named_parameters())
        self.state = AdamWState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps,
                                weight_decay=weight_decay)

    def step(self):
        grads = {name: (p.grad if p.grad is not None else torch.zeros_like(p))
                 for name, p in self.params.items()}
        adamw_step(self.params, grads, self.state)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
