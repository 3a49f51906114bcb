import math

import numpy as np
import torch

from failgen.optim import AdamW, AdamWState, adamw_step


def test_zero_grads_zero_decay_leave_params_unchanged():
    p = {"w": torch.tensor([1.0, -2.0, 3.0])}
    state = AdamWState(weight_decay=0.0)
    adamw_step(p, {"w": torch.zeros(3)}, state)
    assert torch.equal(p["w"], torch.tensor([1.0, -2.0, 3.0]))


def test_zero_grads_with_decay_shrink_multiplicatively():
    lr, wd = 3e-4, 0.05
    p = {"w": torch.tensor([2.0], dtype=torch.float64)}
    state = AdamWState(lr=lr, weight_decay=wd)
    adamw_step(p, {"w": torch.zeros(1, dtype=torch.float64)}, state)
    assert abs(float(p["w"]) - 2.0 * (1.0 - lr * wd)) < 1e-12


def test_single_step_matches_hand_evaluated_update():
    lr, b1, b2, eps, wd = 3e-4, 0.9, 0.999, 1e-8, 1e-2
    p0, g = 1.0, 1.0
    p = {"w": torch.tensor([p0], dtype=torch.float64)}
    state = AdamWState(lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
    adamw_step(p, {"w": torch.tensor([g], dtype=torch.float64)}, state)

    # hand evaluation of the decoupled update
    w = p0 * (1.0 - lr * wd)
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    m_hat = m / (1 - b1)
    v_hat = v / (1 - b2)
    w -= lr * m_hat / (math.sqrt(v_hat) + eps)
    assert abs(float(p["w"]) - w) < 1e-15


def test_decay_never_touches_moment_estimates():
    p = {"w": torch.tensor([5.0])}
    state = AdamWState(weight_decay=0.5)
    adamw_step(p, {"w": torch.ones(1)}, state)
    assert abs(float(state.m["w"]) - 0.1) < 1e-7
    assert abs(float(state.v["w"]) - 0.001) < 1e-9


def test_adamw_reaches_quadratic_minimizer_within_200_steps():
    """Convex quadratic 0.5 * (w - t)' A (w - t) with A diagonal PSD."""
    target = torch.tensor([0.3, -1.2, 0.7, 0.05])
    a_diag = torch.tensor([1.0, 2.0, 0.5, 4.0])
    w = torch.zeros(4, requires_grad=True)
    net = type("M", (), {})()

    class Holder(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.w = torch.nn.Parameter(torch.zeros(4))

    holder = Holder()
    opt = AdamW(holder, lr=0.05, weight_decay=0.0)
    for _ in range(200):
        loss = 0.5 * torch.sum(a_diag * (holder.w - target) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert float(torch.max(torch.abs(holder.w - target))) < 1e-4


def test_optimizer_wrapper_matches_functional_step():
    class Holder(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.w = torch.nn.Parameter(torch.tensor([1.0, 2.0]))

    h1, h2 = Holder(), Holder()
    opt = AdamW(h1, lr=1e-2, weight_decay=1e-2)
    loss = (h1.w ** 2).sum()
    opt.zero_grad()
    loss.backward()
    opt.step()

    params = {"w": h2.w}
    state = AdamWState(lr=1e-2, weight_decay=1e-2)
    adamw_step(params, {"w": 2.0 * torch.tensor([1.0, 2.0])}, state)
    assert torch.allclose(h1.w, h2.w, atol=1e-9)


def test_moment_arrays_match_parameter_shapes():
    class Holder(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.a = torch.nn.Parameter(torch.zeros(3, 5))
            self.b = torch.nn.Parameter(torch.zeros(7))

    h = Holder()
    opt = AdamW(h)
    loss = (h.a.sum() + h.b.sum()) ** 2
    loss.backward()
    opt.step()
    for name, p in h.named_parameters():
        assert opt.state.m[name].shape == p.shape
        assert opt.state.v[name].shape == p.shape
