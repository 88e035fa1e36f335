"""Pipeline configuration: one flat JSON object of named, defaulted keys.

Every tunable of every stage lives here so a run is fully described by a
single file. Unknown keys are rejected rather than ignored, since a typo in
a key would otherwise silently fall back to the default.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

from .classifier import TrainConfig, get_backend
from .em import EMConfig
from .errors import ConfigurationError, InvalidInputError
from .heatmap import DEFAULT_BETA, _check_beta
from .imaging import SegmentationParams


@dataclass(frozen=True)
class PipelineConfig:
    # paths
    slides_dir: str = ""  # <id>.png slides with <id>.json annotations
    out_dir: str = "run"
    # segmentation
    edge_threshold: float = 100.0
    rgb_margin: float = 45.0
    # tiling and labelling
    patch_size: int = 1536
    overlap: float = 0.5
    min_fg: float = 0.4
    resize: int = 512
    # semi-supervised training
    annotated_fraction: float = 0.3
    heldout_fraction: float = 0.2
    sigma: float = 0.9
    quantile: float = 0.2
    iterations: int = 2
    # classifier
    backend: str = "softmax-linear"
    learning_rate: float = 0.5
    epochs: int = 500
    l2: float = 1e-4
    # heatmap thresholds on the cancer intensity
    beta: tuple[float, float, float] = DEFAULT_BETA
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    def validate(self) -> "PipelineConfig":
        """Raise :class:`ConfigurationError` naming the first bad key."""
        checks = [
            ("patch_size", self.patch_size >= 1),
            ("overlap", 0 <= self.overlap < 1),
            ("min_fg", 0 <= self.min_fg <= 1),
            ("resize", self.resize >= 1),
            ("heldout_fraction", 0 <= self.heldout_fraction < 1),
            ("workers", self.workers >= 1),
        ]
        for key, ok in checks:
            if not ok:
                raise ConfigurationError(f"invalid {key}: {getattr(self, key)!r}")
        try:
            SegmentationParams(self.edge_threshold, self.rgb_margin)
            _check_beta(self.beta)
        except InvalidInputError as exc:
            raise ConfigurationError(str(exc)) from None
        get_backend(self.backend)
        self.em_config()
        return self

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.epochs, self.l2, self.seed)

    def em_config(self) -> EMConfig:
        return EMConfig(
            annotated_fraction=self.annotated_fraction,
            sigma=self.sigma,
            max_iterations=self.iterations,
            quantile=self.quantile,
            train=self.train_config(),
            seed=self.seed,
        )

    def segmentation(self) -> SegmentationParams:
        return SegmentationParams(self.edge_threshold, self.rgb_margin)

    def to_json(self, include_paths: bool = True) -> dict:
        data = asdict(self)
        data["beta"] = list(self.beta)
        if not include_paths:
            del data["out_dir"]
        return data

    def with_overrides(self, **overrides) -> "PipelineConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        _check_keys(overrides)
        return replace(self, **overrides)


def _check_keys(data: dict) -> None:
    known = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")


def config_from_json(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a JSON object")
    _check_keys(data)
    try:
        return PipelineConfig(**data)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    return config_from_json(data)


def save_config(config: PipelineConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def preset_config(preset: str, **overrides) -> PipelineConfig:
    """Defaults with the patch geometry scaled for a synthetic preset."""
    from .synthdata import PRESET_PATCH

    if preset not in PRESET_PATCH:
        raise ConfigurationError(f"unknown preset {preset!r}")
    size, overlap, resize = PRESET_PATCH[preset]
    return PipelineConfig(patch_size=size, overlap=overlap, resize=resize).with_overrides(**overrides)
