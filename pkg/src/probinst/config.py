"""Pipeline configuration with JSON round-tripping.

Defaults carry the published constants: eight posterior draws, binarization
at 0.75, 4x4 uncertainty patches, 16-D embeddings, distance hinge 4, loss
weights (1, 1, 0.001), prior length scale squared 1e-6 and dropout entropy
weight 1e-3.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields

from .clustering import MeanShiftConfig
from .errors import ConfigError
from .losses import ConcreteConfig, DiscriminativeConfig
from .synthetic import NoiseConfig, SceneConfig

ENV_DATA_DIR = "PROBINST_DATA"


@dataclass
class PipelineConfig:
    seed: int = 0
    n_samples: int = 10
    n_draws: int = 8
    embedding_dim: int = 16
    binarize_theta: float = 0.75
    patch_size: int = 4
    acc_threshold: float = 0.5
    overlap_threshold: float = 0.5
    unc_thresholds: list = field(default_factory=lambda: [round(0.05 * i, 2) for i in range(15)])
    ks: list = field(default_factory=lambda: [0, 5, 10, 15, 20])
    entropy_reduce: str = "max"
    data_dir: str = "data"
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    mean_shift: MeanShiftConfig = field(default_factory=MeanShiftConfig)
    discriminative: DiscriminativeConfig = field(default_factory=DiscriminativeConfig)
    concrete: ConcreteConfig = field(default_factory=ConcreteConfig)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_draws < 1 or self.n_samples < 0 or self.embedding_dim < 1:
            raise ConfigError("n_draws, embedding_dim must be >= 1 and n_samples >= 0")
        if not 0 < self.binarize_theta <= 1:
            raise ConfigError("binarize_theta must lie in (0, 1]")
        if self.patch_size < 1:
            raise ConfigError("patch_size must be >= 1")
        if sorted(self.unc_thresholds) != list(self.unc_thresholds):
            raise ConfigError("unc_thresholds must be ascending")
        if sorted(self.ks) != list(self.ks) or any(k < 0 for k in self.ks):
            raise ConfigError("ks must be ascending and non-negative")
        if self.entropy_reduce not in ("max", "sum"):
            raise ConfigError("entropy_reduce must be 'max' or 'sum'")

    def resolved_data_dir(self):
        return os.environ.get(ENV_DATA_DIR, self.data_dir)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        nested = {"scene": SceneConfig, "noise": NoiseConfig, "mean_shift": MeanShiftConfig,
                  "discriminative": DiscriminativeConfig, "concrete": ConcreteConfig}
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        try:
            for name, typ in nested.items():
                if name in kwargs:
                    sub = dict(kwargs[name])
                    if "worm_length_range" in sub:
                        sub["worm_length_range"] = tuple(sub["worm_length_range"])
                    kwargs[name] = typ(**sub)
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
