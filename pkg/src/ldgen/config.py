"""Run configuration: nested JSON sections mirroring the training recipe.

Example (every section and key optional; omitted values take the defaults)::

    {
      "stage": "align",
      "seed": 0,
      "output_dir": "runs/align",
      "adapter":   {"d_llm": 48, "d_t5": 64, "d_model": 32, "heads": 4, "t_out": 8},
      "refiner":   {"heads": 4, "blocks": 1, "gate_init": 0.0},
      "dit":       {"hidden": 32, "blocks": 2},
      "loss":      {"lambda1": 1.0, "lambda2": 1.0},
      "schedule":  {"timesteps": 100, "beta_start": 1e-4, "beta_end": 0.02},
      "optimizer": {"lr": null, "steps": 1000, "batch_size": 32},
      "teacher":   {"seed": 0, "sigma": 0.05, "languages": ["en", "zh"]},
      "data":      {"n_pairs": 2000, "n_latents": 1024, "n_eval": 256},
      "log_every": 10,
      "freeze_adapter": true,
      "condition_mode": "true"
    }

``optimizer.lr`` may be null (the default) to use the per-stage rate: 1e-3 for
``align``, 5e-3 for ``joint``. Refiner ``dim`` and ``latent_dim`` and DiT ``cond_dim`` follow the adapter
output width and latent channel count unless set explicitly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .adapter import AdapterConfig
from .errors import ConfigError
from .harness import ToyDiTConfig
from .losses import AlignmentLossConfig
from .refiner import RefinerConfig
from .teacher import SyntheticTeacher


@dataclass(frozen=True)
class ScheduleConfig:
    timesteps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02


@dataclass(frozen=True)
class OptimizerConfig:
    # None selects the stage default (STAGE_LR)
    lr: float | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 1000
    batch_size: int = 32

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"optimizer.steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"optimizer.batch_size must be >= 1, got {self.batch_size}")
        if self.lr is not None and not self.lr > 0:
            raise ConfigError(f"optimizer.lr must be positive, got {self.lr}")


@dataclass(frozen=True)
class DataConfig:
    n_pairs: int = 2000
    n_latents: int = 1024
    n_eval: int = 256


STAGES = ("align", "joint")
# joint training needs a larger step to pick up the conditioning signal within
# the default 1000 steps; alignment converges well at 1e-3
STAGE_LR = {"align": 1e-3, "joint": 5e-3}
CONDITION_MODES = ("true", "shuffled")


@dataclass(frozen=True)
class RunConfig:
    stage: str = "align"
    seed: int = 0
    output_dir: str = "runs/default"
    adapter: AdapterConfig = field(default_factory=AdapterConfig.toy)
    refiner: RefinerConfig = field(default_factory=lambda: RefinerConfig(dim=64, heads=4,
                                                                         latent_dim=4))
    dit: ToyDiTConfig = field(default_factory=ToyDiTConfig)
    loss: AlignmentLossConfig = field(default_factory=AlignmentLossConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    teacher: dict = field(default_factory=dict)
    data: DataConfig = field(default_factory=DataConfig)
    log_every: int = 10
    freeze_adapter: bool = True
    condition_mode: str = "true"
    bypass_refiner: bool = False

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.condition_mode not in CONDITION_MODES:
            raise ConfigError(f"condition_mode must be one of {CONDITION_MODES}")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        try:
            self.build_teacher()
        except TypeError as exc:
            raise ConfigError(f"bad teacher section: {exc}") from None

    @property
    def learning_rate(self) -> float:
        return self.optimizer.lr if self.optimizer.lr is not None else STAGE_LR[self.stage]

    def build_teacher(self) -> SyntheticTeacher:
        base = dict(d_llm=self.adapter.d_llm, d_t5=self.adapter.d_t5, t_out=self.adapter.t_out,
                    latent_tokens=self.dit.latent_tokens,
                    latent_channels=self.dit.latent_channels)
        base.update(self.teacher)
        return SyntheticTeacher(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["teacher"].get("languages"), tuple):
            d["teacher"]["languages"] = list(d["teacher"]["languages"])
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def with_overrides(self, **changes) -> RunConfig:
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, raw: dict) -> RunConfig:
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: v for k, v in raw.items() if k in ("stage", "seed", "output_dir", "log_every",
                                                     "freeze_adapter", "condition_mode",
                                                     "bypass_refiner")}
        adapter = _section(AdapterConfig, raw.get("adapter"), AdapterConfig.toy().__dict__)
        dit_raw = dict(raw.get("dit") or {})
        dit_raw.setdefault("cond_dim", adapter.d_t5)
        dit = _section(ToyDiTConfig, dit_raw)
        ref_raw = dict(raw.get("refiner") or {})
        ref_raw.setdefault("dim", adapter.d_t5)
        ref_raw.setdefault("latent_dim", dit.latent_channels)
        ref_raw.setdefault("heads", 4)
        kw.update(
            adapter=adapter,
            refiner=_section(RefinerConfig, ref_raw),
            dit=dit,
            loss=_section(AlignmentLossConfig, raw.get("loss")),
            schedule=_section(ScheduleConfig, raw.get("schedule")),
            optimizer=_section(OptimizerConfig, raw.get("optimizer")),
            data=_section(DataConfig, raw.get("data")),
            teacher=dict(raw.get("teacher") or {}),
        )
        return cls(**kw)


def _section(kind, raw, defaults: dict | None = None):
    values = dict(defaults or {})
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{kind.__name__} section must be an object")
    names = {f.name for f in fields(kind)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in {kind.__name__}: {sorted(unknown)}")
    values.update(raw)
    try:
        return kind(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return RunConfig.from_dict(raw)
