"""Finite-difference checks for every differentiable component.

Each check builds a small instance, redraws its parameters at a larger scale
than the training init (so gradients are far from the 1e-8 floor of the
relative error) and compares analytic against central-difference gradients
of a smooth scalar objective.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .adapter import AdapterConfig, adapter_forward_batch, adapter_init
from .gradcheck import grad_check
from .harness import ToyDiTConfig, toy_dit_forward, toy_dit_init
from .losses import AlignmentLossConfig, masked_combined_loss
from .nn import AttentionParams, LayerNormParams, multi_head_attention, parameters
from .refiner import RefinerConfig, refiner_forward_batch, refiner_init
from .tensor import Tensor, layer_norm

TOLERANCE = 1e-4
PARAM_STD = 0.5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def _redraw(params, rng: np.random.Generator, std: float) -> list[Tensor]:
    tensors = parameters(params)
    for p in tensors:
        p.data = np.asarray(rng.normal(0.0, std, p.data.shape))
    return tensors


def _probe(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    target = rng.normal(size=out.shape)
    return lambda y: ((y - target) * (y - target)).mean()


def check_layernorm(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(0, 2.0, (5, 7)))
    ln = LayerNormParams.create(7)
    ln.gamma.data = rng.normal(1.0, 0.5, 7)
    ln.beta.data = rng.normal(0.0, 0.5, 7)
    params = [x, ln.gamma, ln.beta]
    loss = _probe(layer_norm(x, ln.gamma, ln.beta), rng)
    return grad_check(lambda: loss(layer_norm(x, ln.gamma, ln.beta)), params, eps)


def check_attention(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    attn = AttentionParams.create(8, 2, rng)
    params = _redraw(attn, rng, PARAM_STD)
    q = Tensor(rng.normal(size=(2, 4, 8)))
    kv = Tensor(rng.normal(size=(2, 6, 8)))
    mask = np.ones((2, 6), dtype=bool)
    mask[0, 4:] = False
    mask[1, :2] = False

    def f():
        return loss(multi_head_attention(q, kv, attn, mask))

    loss = _probe(multi_head_attention(q, kv, attn, mask), rng)
    return grad_check(f, params + [q, kv], eps)


def check_adapter(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    cfg = AdapterConfig(d_llm=6, d_t5=5, d_model=8, heads=2, encoder_layers=1,
                        decoder_layers=1, t_out=3, ffn_mult=2)
    params = adapter_init(cfg, seed)
    tensors = _redraw(params, rng, PARAM_STD)
    x = rng.normal(size=(2, 4, 6))
    mask = np.array([[True] * 4, [True, True, True, False]])
    target = rng.normal(size=(2, 3, 5))
    tmask = np.ones((2, 3), dtype=bool)
    lcfg = AlignmentLossConfig(0.7, 0.3)
    return grad_check(
        lambda: masked_combined_loss(adapter_forward_batch(params, x, mask), target, tmask,
                                     lcfg).total, tensors, eps)


def check_refiner(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    cfg = RefinerConfig(dim=8, heads=2, ffn_mult=2, blocks=1, latent_dim=3)
    params = refiner_init(cfg, seed)
    tensors = _redraw(params, rng, PARAM_STD)
    for blk in params.blocks:
        # gates away from zero so every branch contributes to the gradient
        for g in blk.gates():
            g.data = np.asarray(rng.uniform(0.5, 1.5))
    text = rng.normal(size=(2, 3, 8))
    tmask = np.array([[True, True, True], [True, True, False]])
    latents = rng.normal(size=(2, 5, 3))
    loss = _probe(refiner_forward_batch(params, Tensor(text), tmask, Tensor(latents)), rng)
    return grad_check(lambda: loss(refiner_forward_batch(params, Tensor(text), tmask,
                                                         Tensor(latents))), tensors, eps)


def check_dit(seed: int = 0, eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    cfg = ToyDiTConfig(latent_tokens=4, latent_channels=2, hidden=8, heads=2, blocks=1,
                       ffn_mult=2, cond_dim=5)
    params = toy_dit_init(cfg, seed)
    tensors = _redraw(params, rng, PARAM_STD)
    x_t = rng.normal(size=(2, 4, 2))
    t = np.array([3, 70])
    cond = rng.normal(size=(2, 3, 5))
    cmask = np.array([[True, True, True], [True, False, True]])
    eps_true = rng.normal(size=x_t.shape)

    def f():
        d = toy_dit_forward(params, x_t, t, cond, cmask) - eps_true
        return (d * d).mean()

    return grad_check(f, tensors, eps)


CHECKS: dict[str, Callable[..., float]] = {
    "layernorm": check_layernorm,
    "attention": check_attention,
    "adapter": check_adapter,
    "refiner": check_refiner,
    "toy_dit": check_dit,
}


def run_suite(seed: int = 0, eps: float = 1e-5, names=None) -> list[CheckResult]:
    results = []
    for name in names or CHECKS:
        start = time.perf_counter()
        err = CHECKS[name](seed=seed, eps=eps)
        results.append(CheckResult(name, err, time.perf_counter() - start))
    return results
