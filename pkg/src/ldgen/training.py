"""Training loops: adapter alignment, then joint refiner + toy DiT training."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .adapter import AdapterParams, adapter_forward_batch, adapter_init
from .checkpoint import Checkpoint
from .config import RunConfig
from .errors import ConfigError, DivergenceError
from .features import FeatureSequence, calibrate_scale_coefficient, pad_batch, scale_features
from .harness import (ToyDiTParams, denoise_loss, make_noise_schedule, q_sample,
                      toy_dit_forward, toy_dit_init)
from .losses import masked_combined_loss, mean_masked_cosine
from .nn import load_named, named_parameters, parameters, set_requires_grad
from .optim import OptimizerState, adam_step
from .refiner import RefinerParams, refiner_forward_batch, refiner_init
from .teacher import derived_rng, mixed_language_pairs, synth_conditioned_latents
from .tensor import Tensor, backward

EVAL_START = 1_000_000


@dataclass
class TrainMetrics:
    step: int
    total: float
    cosine: float | None = None
    mse: float | None = None
    eps_loss: float | None = None
    mean_cosine: float | None = None
    wall_ms: float = 0.0

    def to_record(self, include_timing: bool = False) -> dict:
        rec = {k: v for k, v in asdict(self).items() if v is not None}
        if not include_timing:
            rec.pop("wall_ms", None)
        return rec


def write_metrics(path: str | Path, metrics: list[TrainMetrics],
                  include_timing: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for m in metrics:
            fh.write(json.dumps(m.to_record(include_timing), sort_keys=True) + "\n")


def read_metrics(path: str | Path) -> list[TrainMetrics]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            rows.append(TrainMetrics(**json.loads(line)))
    return rows


def _batches(rng: np.random.Generator, n: int, size: int) -> Iterator[np.ndarray]:
    size = min(size, n)
    while True:
        perm = rng.permutation(n)
        for i in range(0, n - size + 1, size):
            yield perm[i:i + size]


def _should_log(step: int, total_steps: int, every: int) -> bool:
    return (step - 1) % every == 0 or step == total_steps


def fit_target(seq: FeatureSequence, t_out: int) -> tuple[np.ndarray, np.ndarray]:
    """Truncate or mask-pad a target sequence to ``t_out`` rows."""
    values = np.zeros((t_out, seq.width))
    mask = np.zeros(t_out, dtype=bool)
    n = min(t_out, seq.length)
    values[:n] = seq.values[:n]
    mask[:n] = seq.mask[:n]
    return values, mask


def _trim(values: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    used = int(np.nonzero(mask.any(axis=0))[0].max()) + 1
    return values[:, :used], mask[:, :used]


def _blobs(prefix: str, params) -> dict[str, np.ndarray]:
    return {f"{prefix}.{name}": t.data.copy() for name, t in named_parameters(params)}


def _optimizer_blob(prefixed_names: list[str], state: OptimizerState) -> dict:
    return {
        "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "epsilon": state.epsilon,
        "step": state.step,
        "m": {n: m.copy() for n, m in zip(prefixed_names, state.m)},
        "v": {n: v.copy() for n, v in zip(prefixed_names, state.v)},
    }


def _rng_state(rng: np.random.Generator) -> dict:
    return json.loads(json.dumps(rng.bit_generator.state))


def prepare_alignment_arrays(pairs, coefficient: float, t_out: int):
    x, xm = pad_batch([scale_features(s, coefficient) for s, _ in pairs])
    fitted = [fit_target(t, t_out) for _, t in pairs]
    y = np.stack([v for v, _ in fitted])
    ym = np.stack([m for _, m in fitted])
    return x, xm, y, ym


def adapter_outputs(params: AdapterParams, x: np.ndarray, xm: np.ndarray,
                    chunk: int = 256) -> np.ndarray:
    """Forward pass without recording a graph, in chunks."""
    flags = [t.requires_grad for _, t in named_parameters(params)]
    set_requires_grad(params, False)
    try:
        out = []
        for i in range(0, len(x), chunk):
            xv, mv = _trim(x[i:i + chunk], xm[i:i + chunk])
            out.append(adapter_forward_batch(params, xv, mv).data)
        return np.concatenate(out)
    finally:
        for (_, t), f in zip(named_parameters(params), flags):
            t.requires_grad = f


def load_adapter(config: RunConfig, ckpt: Checkpoint) -> AdapterParams:
    blobs = ckpt.subset("adapter")
    if not blobs:
        raise ConfigError("checkpoint has no adapter parameters")
    params = adapter_init(config.adapter, 0)
    load_named(params, blobs)
    return params


def train_adapter(config: RunConfig,
                  on_metrics: Callable[[TrainMetrics], None] | None = None
                  ) -> tuple[Checkpoint, list[TrainMetrics]]:
    """Optimize the adapter against the combined alignment loss on teacher pairs."""
    if config.stage != "align":
        raise ConfigError(f"train_adapter needs stage 'align', got {config.stage!r}")
    opt = config.optimizer
    teacher = config.build_teacher()
    pairs, _ = mixed_language_pairs(teacher, config.data.n_pairs)
    bs = min(opt.batch_size, len(pairs))
    calib = calibrate_scale_coefficient([s for s, _ in pairs[:bs]], [t for _, t in pairs[:bs]])
    x, xm, y, ym = prepare_alignment_arrays(pairs, calib.coefficient, config.adapter.t_out)

    params = adapter_init(config.adapter, config.seed)
    named = list(named_parameters(params))
    plist = [t for _, t in named]
    pnames = [f"adapter.{n}" for n, _ in named]
    state = OptimizerState.for_params(plist, lr=config.learning_rate, beta1=opt.beta1,
                                      beta2=opt.beta2, epsilon=opt.eps)
    rng = np.random.default_rng(config.seed + 3)
    batches = _batches(rng, len(pairs), bs)

    def snapshot(blobs) -> Checkpoint:
        return Checkpoint(config.to_dict(), blobs, calib.coefficient,
                          _optimizer_blob(pnames, state), _rng_state(rng))

    metrics: list[TrainMetrics] = []
    start = time.perf_counter()
    last_good = _blobs("adapter", params)
    for step in range(1, opt.steps + 1):
        idx = next(batches)
        xv, mv = _trim(x[idx], xm[idx])
        out = adapter_forward_batch(params, xv, mv)
        lb = masked_combined_loss(out, y[idx], ym[idx], config.loss)
        total, cos, mse = lb.as_floats()
        if not np.isfinite(total):
            raise DivergenceError(f"non-finite alignment loss at step {step}",
                                  snapshot(last_good), step)
        last_good = _blobs("adapter", params)
        batch_cos = mean_masked_cosine(out.data, y[idx], ym[idx])
        backward(lb.total)
        adam_step(plist, state)
        if _should_log(step, opt.steps, config.log_every):
            m = TrainMetrics(step, total, cosine=cos, mse=mse, mean_cosine=batch_cos,
                             wall_ms=(time.perf_counter() - start) * 1e3)
            metrics.append(m)
            if on_metrics:
                on_metrics(m)
    return snapshot(_blobs("adapter", params)), metrics


# -- joint stage -------------------------------------------------------------------

@dataclass
class JointModels:
    adapter: AdapterParams
    refiner: RefinerParams
    dit: ToyDiTParams
    coefficient: float


def build_joint_models(config: RunConfig, ckpt: Checkpoint) -> JointModels:
    """Adapter from ``ckpt``; refiner and DiT from ``ckpt`` when present, else fresh inits."""
    adapter = load_adapter(config, ckpt)
    refiner = refiner_init(config.refiner, config.seed + 1)
    dit = toy_dit_init(config.dit, config.seed + 2)
    if ckpt.subset("refiner"):
        load_named(refiner, ckpt.subset("refiner"))
    if ckpt.subset("dit"):
        load_named(dit, ckpt.subset("dit"))
    return JointModels(adapter, refiner, dit, ckpt.coefficient)


def joint_predict(models: JointModels, x_t: np.ndarray, t: np.ndarray, cond,
                  bypass_refiner: bool = False) -> Tensor:
    """Refine aligned conditions with the noised latents, then predict noise."""
    cond = cond if isinstance(cond, Tensor) else Tensor(cond)
    cond_mask = np.ones(cond.shape[:2], dtype=bool)
    latents = Tensor(x_t)
    refined = cond if bypass_refiner else refiner_forward_batch(
        models.refiner, cond, cond_mask, latents)
    return toy_dit_forward(models.dit, latents, t, refined, cond_mask)


def _latent_arrays(config: RunConfig, n: int, start: int):
    teacher = config.build_teacher()
    data = synth_conditioned_latents(teacher, n, start=start)
    return data, np.stack([x0 for _, x0 in data])


def train_joint(config: RunConfig, init: Checkpoint,
                on_metrics: Callable[[TrainMetrics], None] | None = None
                ) -> tuple[Checkpoint, list[TrainMetrics]]:
    """Train refiner and toy DiT on noise prediction through the (frozen) adapter."""
    if config.stage != "joint":
        raise ConfigError(f"train_joint needs stage 'joint', got {config.stage!r}")
    opt = config.optimizer
    models = build_joint_models(config, Checkpoint(init.config, init.subset_all("adapter"),
                                                   init.coefficient))
    frozen = config.freeze_adapter
    data, x0_all = _latent_arrays(config, config.data.n_latents, 0)
    cx, cm = pad_batch([scale_features(c, models.coefficient) for c, _ in data])
    if frozen:
        aligned = adapter_outputs(models.adapter, cx, cm)

    sched = make_noise_schedule(config.schedule.timesteps, config.schedule.beta_start,
                                config.schedule.beta_end)
    groups = []
    if not config.bypass_refiner:
        groups.append(("refiner", models.refiner))
    groups.append(("dit", models.dit))
    if not frozen:
        groups.append(("adapter", models.adapter))
    set_requires_grad(models.adapter, not frozen)
    named = [(f"{g}.{n}", t) for g, obj in groups for n, t in named_parameters(obj)]
    plist = [t for _, t in named]
    state = OptimizerState.for_params(plist, lr=config.learning_rate, beta1=opt.beta1,
                                      beta2=opt.beta2, epsilon=opt.eps)
    rng = np.random.default_rng(config.seed + 3)
    shuffle_rng = np.random.default_rng(config.seed + 4)
    n = len(data)
    bs = min(opt.batch_size, n)
    batches = _batches(rng, n, bs)

    def blobs():
        out = dict(init.subset_all("adapter")) if frozen else {}
        out.update(_blobs("adapter", models.adapter) if not frozen else {})
        out.update(_blobs("refiner", models.refiner))
        out.update(_blobs("dit", models.dit))
        return out

    def snapshot(b) -> Checkpoint:
        return Checkpoint(config.to_dict(), b, models.coefficient,
                          _optimizer_blob([k for k, _ in named], state), _rng_state(rng))

    metrics: list[TrainMetrics] = []
    start = time.perf_counter()
    last_good = blobs()
    for step in range(1, opt.steps + 1):
        idx = next(batches)
        t = rng.integers(1, sched.timesteps + 1, size=len(idx))
        eps = rng.normal(size=x0_all[idx].shape)
        x_t = q_sample(x0_all[idx], t, eps, sched)
        cond_idx = idx[shuffle_rng.permutation(len(idx))] \
            if config.condition_mode == "shuffled" else idx
        if frozen:
            cond = Tensor(aligned[cond_idx])
        else:
            xv, mv = _trim(cx[cond_idx], cm[cond_idx])
            cond = adapter_forward_batch(models.adapter, xv, mv)
        loss = denoise_loss(joint_predict(models, x_t, t, cond, config.bypass_refiner), eps)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite denoising loss at step {step}",
                                  snapshot(last_good), step)
        last_good = blobs()
        backward(loss)
        adam_step(plist, state)
        if _should_log(step, opt.steps, config.log_every):
            m = TrainMetrics(step, value, eps_loss=value,
                             wall_ms=(time.perf_counter() - start) * 1e3)
            metrics.append(m)
            if on_metrics:
                on_metrics(m)
    return snapshot(blobs()), metrics


def denoising_eval_set(config: RunConfig, n: int | None = None):
    """Held-out latents with fixed timesteps and noise, shared by every model under comparison."""
    n = n or config.data.n_eval
    data, x0 = _latent_arrays(config, n, EVAL_START)
    rng = derived_rng(config.build_teacher().seed, 77, n)
    sched = make_noise_schedule(config.schedule.timesteps, config.schedule.beta_start,
                                config.schedule.beta_end)
    t = rng.integers(1, sched.timesteps + 1, size=n)
    eps = rng.normal(size=x0.shape)
    perm = rng.permutation(n)
    return data, q_sample(x0, t, eps, sched), t, eps, perm


def evaluate_denoising(config: RunConfig, models: JointModels, eval_set=None,
                       condition_mode: str | None = None,
                       bypass_refiner: bool | None = None) -> float:
    data, x_t, t, eps, perm = eval_set or denoising_eval_set(config)
    mode = condition_mode or config.condition_mode
    bypass = config.bypass_refiner if bypass_refiner is None else bypass_refiner
    cx, cm = pad_batch([scale_features(c, models.coefficient) for c, _ in data])
    aligned = adapter_outputs(models.adapter, cx, cm)
    if mode == "shuffled":
        aligned = aligned[perm]
    tensors = parameters(models.refiner) + parameters(models.dit)
    flags = [p.requires_grad for p in tensors]
    for p in tensors:
        p.requires_grad = False
    try:
        total = 0.0
        for i in range(0, len(t), 256):
            sl = slice(i, i + 256)
            pred = joint_predict(models, x_t[sl], t[sl], aligned[sl], bypass)
            total += float(((pred.data - eps[sl]) ** 2).sum())
        return total / eps.size
    finally:
        for p, f in zip(tensors, flags):
            p.requires_grad = f
