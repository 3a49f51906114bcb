import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from scipy import stats

from failgen.config import ConfigError, DiffusionConfig
from failgen.diffusion import (DiffusionModel, NormStats, make_schedule,
                               new_model)
from failgen.geometry import Branch
from failgen.nets import DenoiserNet
from failgen.optim import AdamW
from failgen.rng import stream

UNIT_NORM = NormStats(gamma=1.0, rho_scale=1.0, s0_mean=np.zeros(4),
                      s0_half=np.ones(4))


def unit_model(seed=0, K=20, base_width=8, beta_end=0.035):
    cfg = DiffusionConfig(steps_k=K, beta_end=beta_end, base_width=base_width)
    return new_model(Branch.SOUTH, cfg, UNIT_NORM, stream(seed))


# --- schedule ----------------------------------------------------------------

def test_schedule_two_step_alpha_bars():
    sch = make_schedule(2, 0.1, 0.2)
    assert np.allclose(sch.betas, [0.1, 0.2])
    assert np.allclose(sch.alpha_bars, [0.9, 0.72])


def test_schedule_rejects_bad_bounds():
    for args in ((2, 0.0, 0.5), (2, 0.2, 0.1), (2, 0.1, 1.0), (1, 0.1, 0.2)):
        with pytest.raises(ConfigError):
            make_schedule(*args)


@given(st.integers(2, 400), st.floats(1e-6, 0.01), st.floats(0.011, 0.999))
@settings(max_examples=60, deadline=None)
def test_schedule_alpha_bar_strictly_decreasing_in_unit_interval(K, b0, b1):
    sch = make_schedule(K, b0, b1)
    assert np.all(np.diff(sch.betas) > 0)
    assert np.all(np.diff(sch.alpha_bars) < 0)
    assert np.all((sch.alpha_bars > 0) & (sch.alpha_bars < 1))


def test_default_schedule_final_alpha_bar():
    """Numerical evaluation of the running product for the shipped defaults."""
    d = DiffusionConfig()
    sch = make_schedule(d.steps_k, d.beta_start, d.beta_end)
    log_prod = np.sum(np.log1p(-sch.betas))
    assert abs(sch.alpha_bars[-1] - math.exp(log_prod)) < 1e-12
    assert sch.alpha_bars[-1] < 0.05


# --- forward marginals ----------------------------------------------------------

def test_q_sample_with_zero_draw_scales_by_sqrt_alpha_bar():
    m = unit_model()
    eps0 = torch.from_numpy(stream(1).standard_normal((3, 23, 4))).float()
    for k in (1, 7, 20):
        out = m.q_sample(eps0, torch.full((3,), k), torch.zeros_like(eps0))
        expected = math.sqrt(m.schedule.alpha_bars[k - 1]) * eps0
        assert torch.allclose(out, expected, atol=1e-6)


def test_q_sample_terminal_moments_match_closed_form():
    m = unit_model(K=20)
    n = 10000
    rng = stream(2)
    eps0_single = rng.standard_normal((23, 4))
    eps0 = torch.from_numpy(np.repeat(eps0_single[None], n, axis=0)).float()
    z = torch.from_numpy(rng.standard_normal((n, 23, 4))).float()
    K = m.schedule.K
    out = m.q_sample(eps0, torch.full((n,), K), z).numpy()
    ab = m.schedule.alpha_bars[-1]
    mean_err = np.abs(out.mean(0) - math.sqrt(ab) * eps0_single)
    assert np.all(mean_err < 5 * math.sqrt((1 - ab) / n))
    var = out.var(axis=0)
    assert np.all(np.abs(var - (1 - ab)) < 0.05 * 1.2)


def test_q_sample_matches_iterated_forward_chain():
    """Closed form vs literally iterating the one-step forward kernel on a
    K=5 toy schedule: same distribution (two-sample KS, p > 0.01)."""
    sch = make_schedule(5, 0.05, 0.3)
    rng = stream(3)
    n = 4000
    eps0 = 0.7  # scalar data point, checked marginally
    closed = (math.sqrt(sch.alpha_bars[-1]) * eps0
              + np.sqrt(1 - sch.alpha_bars[-1]) * rng.standard_normal(n))
    iterated = np.full(n, eps0)
    for k in range(5):
        iterated = (np.sqrt(1 - sch.betas[k]) * iterated
                    + np.sqrt(sch.betas[k]) * rng.standard_normal(n))
    assert stats.ks_2samp(closed, iterated).pvalue > 0.01


# --- training loss ----------------------------------------------------------------

def test_training_loss_zero_for_oracle_net():
    """A net that returns exactly the injected noise gives zero loss."""
    m = unit_model()

    class Oracle:
        def __call__(self, eps_k, k, rho, s0):
            return self.z

    oracle = Oracle()
    real_loss = DiffusionModel.training_loss

    # intercept the z draw by reproducing the stream
    rng = stream(4)
    B = 8
    k = rng.integers(1, m.schedule.K + 1, size=B)
    z = rng.standard_normal((B, 23, 4))
    oracle.z = torch.from_numpy(z).float()
    m2 = DiffusionModel(oracle, m.schedule, m.norm, m.scenario)
    loss = real_loss(m2, np.zeros((B, 23, 4)), np.zeros(B), np.zeros((B, 4)),
                     stream(4))
    assert float(loss) < 1e-12


def test_training_loss_zero_net_is_unit_second_moment():
    m = unit_model()  # fresh net has a zeroed head -> zero output
    rng = stream(5)
    eps0 = rng.standard_normal((512, 23, 4))
    loss = m.training_loss(eps0, np.zeros(512), np.zeros((512, 4)), stream(6))
    assert abs(float(loss) - 1.0) < 0.05


def test_training_loss_rejects_empty_batch():
    m = unit_model()
    with pytest.raises(ValueError):
        m.training_loss(np.zeros((0, 23, 4)), np.zeros(0), np.zeros((0, 4)),
                        stream(7))


def test_training_loss_gradients_pass_finite_difference_check():
    from tests.test_nets import grad_check
    m = unit_model(base_width=8).to_double()
    rng = stream(8)
    eps0 = rng.standard_normal((4, 23, 4))
    rho = rng.uniform(0, 1, 4)
    s0 = rng.standard_normal((4, 4))
    # give the zeroed head small nonzero weights so gradients flow everywhere
    with torch.no_grad():
        for p in (m.net.head.weight, m.net.head.bias):
            p.copy_(torch.from_numpy(
                rng.uniform(-0.05, 0.05, size=tuple(p.shape))).double())

    def build_loss():
        for p in m.net.parameters():
            p.grad = None
        return m.training_loss(eps0, rho, s0, stream(9))

    # a subset of parameters keeps the finite-difference sweep tractable
    params = [m.net.head.bias, m.net.stem.bias,
              dict(m.net.named_parameters())["cond_encoder.0.bias"]]
    assert grad_check(build_loss, params) <= 1e-3


# --- reverse process ----------------------------------------------------------------

def test_p_sample_zero_draw_returns_posterior_mean():
    m = unit_model(1)
    x = torch.from_numpy(stream(10).standard_normal((2, 23, 4))).float()
    rho = torch.zeros(2)
    s0 = torch.zeros(2, 4)
    k = 5
    out = m.p_sample_step(x, k, rho, s0, torch.zeros_like(x))
    beta = m.schedule.betas[k - 1]
    ab = m.schedule.alpha_bars[k - 1]
    pred = m.net(x, torch.full((2,), k), rho, s0)
    mean = (x - beta / math.sqrt(1 - ab) * pred) / math.sqrt(1 - beta)
    assert torch.allclose(out, mean, atol=1e-7)


def test_p_sample_recovers_mean_from_oracle_noise_prediction():
    """With the net predicting the exact injected z, the reverse mean equals
    the algebraic identity (eps_k - beta/sqrt(1-ab) z)/sqrt(alpha), evaluated
    from a known (eps0, z) pair."""
    m = unit_model(2)
    sch = m.schedule
    rng = stream(11)
    eps0 = torch.from_numpy(rng.standard_normal((1, 23, 4)))
    z = torch.from_numpy(rng.standard_normal((1, 23, 4)))
    k = 9
    ab = sch.alpha_bars[k - 1]
    eps_k = math.sqrt(ab) * eps0 + math.sqrt(1 - ab) * z

    class OracleNet:
        def __call__(self, *_args):
            return z

    m2 = DiffusionModel(OracleNet(), sch, m.norm, m.scenario)
    out = m2.p_sample_step(eps_k, k, torch.zeros(1), torch.zeros(1, 4), None)
    expected = (eps_k - sch.betas[k - 1] / math.sqrt(1 - ab) * z) \
        / math.sqrt(sch.alphas[k - 1])
    assert torch.allclose(out, expected, atol=1e-10)


def test_p_sample_final_step_is_deterministic():
    m = unit_model(3)
    x = torch.from_numpy(stream(12).standard_normal((2, 23, 4))).float()
    noise = torch.from_numpy(stream(13).standard_normal((2, 23, 4))).float()
    a = m.p_sample_step(x, 1, torch.zeros(2), torch.zeros(2, 4), noise)
    b = m.p_sample_step(x, 1, torch.zeros(2), torch.zeros(2, 4), None)
    assert torch.equal(a, b)


def test_sampling_reproducible_from_stream():
    m = unit_model(4)
    s0 = stream(14).standard_normal((5, 4))
    a = m.sample(0.0, s0, stream(15))
    b = m.sample(0.0, s0, stream(15))
    assert np.array_equal(a, b)


def test_zero_net_sampler_matches_variance_recursion_oracle():
    """With a zero noise prediction each reverse step collapses to
    x/sqrt(alpha_k) + sqrt(beta_k) z; the sample variance must match the
    recursion V_{k-1} = V_k / alpha_k + beta_k (no noise at k=1)."""
    m = unit_model(5, K=20)   # fresh net is the zero map
    V = 1.0
    for k in range(m.schedule.K, 0, -1):
        V = V / m.schedule.alphas[k - 1]
        if k > 1:
            V += m.schedule.betas[k - 1]
    n = 4000
    out = m.sample(0.0, np.zeros((n, 4)), stream(16))
    flat = out.reshape(-1)
    assert abs(flat.mean()) < 4 * math.sqrt(V / flat.size)
    assert abs(flat.var() - V) < 0.05 * V


def test_sample_denormalizes_with_gamma():
    gamma = 4.0
    norm = NormStats(gamma=gamma, rho_scale=1.0, s0_mean=np.zeros(4),
                     s0_half=np.ones(4))
    cfg = DiffusionConfig(steps_k=10, base_width=8)
    m_unit = new_model(Branch.SOUTH, cfg, UNIT_NORM, stream(17))
    m_scaled = new_model(Branch.SOUTH, cfg, norm, stream(17))
    s0 = np.zeros((64, 4))
    a = m_unit.sample(0.0, s0, stream(18))
    b = m_scaled.sample(0.0, s0, stream(18))
    assert np.allclose(b, a * math.sqrt(gamma), atol=1e-9)


# --- degenerate-target training (sanity that learning works at all) -------------

def test_model_trained_on_point_mass_reproduces_it():
    target = stream(19).standard_normal((23, 4)) * 0.8
    cfg = DiffusionConfig(steps_k=20, beta_start=0.005, beta_end=0.2,
                          base_width=16)
    m = new_model(Branch.SOUTH, cfg, UNIT_NORM, stream(6))
    opt = AdamW(m.net, lr=5e-3, weight_decay=0.0)
    batch = np.repeat(target[None], 64, axis=0)
    train_rng = stream(20)
    for step in range(1400):
        loss = m.training_loss(batch, np.zeros(64), np.zeros((64, 4)),
                               train_rng)
        opt.zero_grad()
        loss.backward()
        opt.step()
    samples = m.sample(0.0, np.zeros((128, 4)), stream(21))
    rms = np.sqrt(np.mean((samples - target[None]) ** 2))
    assert rms < 0.05


# --- checkpoint round-trip ----------------------------------------------------------

def test_model_checkpoint_round_trip_bit_exact(tmp_path):
    m = unit_model(7)
    path = tmp_path / "m.ckpt"
    m.save(path, config_hash="cafebabe", extra={"stage": 3})
    m2 = DiffusionModel.load(path, expected_config_hash="cafebabe")
    assert m2.scenario is m.scenario
    assert np.array_equal(m2.schedule.betas, m.schedule.betas)
    s0 = stream(22).standard_normal((4, 4))
    a = m.sample(0.2, s0, stream(23))
    b = m2.sample(0.2, s0, stream(23))
    assert np.array_equal(a, b)


def test_model_checkpoint_rejects_config_hash_mismatch(tmp_path):
    m = unit_model(8)
    path = tmp_path / "m.ckpt"
    m.save(path, config_hash="cafebabe")
    with pytest.raises(Exception, match="hash"):
        DiffusionModel.load(path, expected_config_hash="deadbeef")
