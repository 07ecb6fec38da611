import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldgen.errors import ConfigError, DimensionError, SpaceTagError
from ldgen.features import FeatureSequence, Space
from ldgen.gradsuite import check_dit
from ldgen.harness import (ToyDiTConfig, denoise_loss, make_noise_schedule, q_sample,
                           timestep_embedding, toy_dit_forward, toy_dit_forward_seq, toy_dit_init)
from ldgen.tensor import Tensor


def test_single_step_schedule():
    s = make_noise_schedule(1)
    assert s.betas.tolist() == [1e-4]
    assert s.alpha_bars[0] == 1 - 1e-4


def test_schedule_monotone_and_in_range():
    s = make_noise_schedule(100)
    assert s.alpha_bars[-1] < s.alpha_bars[0]
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all((s.betas > 0) & (s.betas < 1))
    assert s.betas[0] == 1e-4 and abs(s.betas[-1] - 0.02) < 1e-17
    assert s.alpha_bar(0) == 1.0


def test_alpha_bar_matches_running_product():
    s = make_noise_schedule(100)
    running = 1.0
    for t in range(100):
        running *= 1.0 - (1e-4 + (0.02 - 1e-4) * t / 99)
        assert abs(s.alpha_bars[t] - running) < 1e-15


def test_schedule_rejects_zero_steps():
    with pytest.raises(ConfigError):
        make_noise_schedule(0)


def test_q_sample_examples():
    s = make_noise_schedule(100)
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(16, 4))
    assert np.array_equal(q_sample(x0, 40, np.zeros_like(x0), s), np.sqrt(s.alpha_bars[39]) * x0)
    x1 = q_sample(x0, 1, rng.normal(size=x0.shape), s)
    assert np.linalg.norm(x1 - x0) <= 1e-2 * np.linalg.norm(x0) * 2
    with pytest.raises(IndexError):
        q_sample(x0, 0, x0, s)
    with pytest.raises(IndexError):
        q_sample(x0, 101, x0, s)


def test_q_sample_per_sample_steps():
    s = make_noise_schedule(100)
    x0 = np.ones((3, 2, 2))
    out = q_sample(x0, np.array([1, 50, 100]), np.zeros_like(x0), s)
    for i, t in enumerate([1, 50, 100]):
        assert np.allclose(out[i], np.sqrt(s.alpha_bars[t - 1]))


@pytest.mark.parametrize("t", [10, 60, 100])
def test_q_sample_monte_carlo_moments(t):
    s = make_noise_schedule(100)
    rng = np.random.default_rng(t)
    eps = rng.normal(size=(10_000, 8))  # 10,000 draws of an 8-value latent
    assert abs(q_sample(np.zeros((10_000, 8)), t, eps, s).var() / (1 - s.alpha_bars[t - 1]) - 1) \
        < 0.02
    x0 = np.full((10_000, 8), 1.5)
    mean = q_sample(x0, t, eps, s).mean()
    assert abs(mean / (np.sqrt(s.alpha_bars[t - 1]) * 1.5) - 1) < 0.02


def test_timestep_embedding_shape():
    emb = timestep_embedding(np.array([0, 5, 99]), 7)
    assert emb.shape == (3, 7)
    assert np.array_equal(emb[0, :3], np.zeros(3))


def _dit(seed=0, **kw):
    cfg = ToyDiTConfig(**kw)
    return cfg, toy_dit_init(cfg, seed)


def test_output_shape_matches_latents():
    cfg, p = _dit()
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 16, 4))
    out = toy_dit_forward(p, x, np.array([1, 50, 100]), rng.normal(size=(3, 8, 64)))
    assert out.shape == x.shape
    cfg2, p2 = _dit(latent_tokens=4, latent_channels=2, hidden=8, heads=2, blocks=1, cond_dim=5)
    assert toy_dit_forward(p2, np.zeros((1, 4, 2)), 3, np.ones((1, 2, 5))).shape == (1, 4, 2)


def test_zero_cross_attention_output_removes_condition():
    _, p = _dit(2)
    for blk in p.blocks:
        blk.cross_attn.w_o.data[:] = 0.0
    rng = np.random.default_rng(3)
    x, t = rng.normal(size=(2, 16, 4)), np.array([5, 70])
    a = toy_dit_forward(p, x, t, rng.normal(size=(2, 8, 64))).data
    b = toy_dit_forward(p, x, t, rng.normal(size=(2, 8, 64))).data
    assert a.tobytes() == b.tobytes()


def test_condition_changes_output_in_general():
    _, p = _dit(2)
    rng = np.random.default_rng(3)
    x, t = rng.normal(size=(2, 16, 4)), np.array([5, 70])
    a = toy_dit_forward(p, x, t, rng.normal(size=(2, 8, 64))).data
    b = toy_dit_forward(p, x, t, rng.normal(size=(2, 8, 64))).data
    assert not np.array_equal(a, b)


def test_forward_errors():
    _, p = _dit()
    with pytest.raises(DimensionError):
        toy_dit_forward(p, np.zeros((1, 16, 4)), 1, np.zeros((1, 8, 63)))
    with pytest.raises(DimensionError):
        toy_dit_forward(p, np.zeros((1, 15, 4)), 1, np.zeros((1, 8, 64)))
    t5 = FeatureSequence.full(np.zeros((8, 64)), Space.T5)
    with pytest.raises(SpaceTagError):
        toy_dit_forward_seq(p, np.zeros((16, 4)), 1, t5)


def test_sequence_wrapper_matches_batched():
    _, p = _dit(4)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(16, 4))
    cond = FeatureSequence.full(rng.normal(size=(8, 64)), Space.REFINED)
    single = toy_dit_forward_seq(p, x, 30, cond).data
    batched = toy_dit_forward(p, x[None], np.array([30]), cond.values[None]).data[0]
    assert np.array_equal(single, batched)


def test_denoise_loss_examples():
    rng = np.random.default_rng(6)
    e = rng.normal(size=(2, 16, 4))
    assert denoise_loss(Tensor(e), e).item() == 0.0
    assert abs(denoise_loss(Tensor(e + 0.25), e).item() - 0.0625) < 1e-15
    a, b = rng.normal(size=(2, 3, 2)), rng.normal(size=(2, 3, 2))
    loop = sum((a[i, j, k] - b[i, j, k]) ** 2 for i in range(2) for j in range(3)
               for k in range(2)) / a.size
    assert abs(denoise_loss(Tensor(a), b).item() - loop) < 1e-12
    with pytest.raises(DimensionError):
        denoise_loss(Tensor(a), b[:, :2])


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 100), st.integers(0, 2**31 - 1))
def test_q_sample_is_linear_in_its_inputs(t, seed):
    s = make_noise_schedule(100)
    rng = np.random.default_rng(seed)
    x0, eps = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    combo = q_sample(x0, t, eps, s)
    parts = q_sample(x0, t, np.zeros_like(eps), s) + q_sample(np.zeros_like(x0), t, eps, s)
    assert np.allclose(combo, parts, atol=1e-14)


def test_denoise_gradcheck():
    assert check_dit(seed=4) < 1e-4
