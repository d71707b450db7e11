"""Run configuration: defaults, a JSON config document, then CLI flags."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..customization import CustomizationConfig
from ..errors import ConfigError
from ..interpolation import InterpolationConfig
from ..keyframes import InjectionConfig
from ..scene3d import DEMO_SCENE, load_scene
from .models import ModelConfig


def _hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=list).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RunConfig:
    scene: str = "demo"
    resolution: tuple | None = None  # None: the scene file's
    n_frames: int | None = None
    keyframe_spacing: int = 8
    start_index: int = 0  # frame of the first keyframe
    input_index: int = 0  # frame used as the customization input image
    image_steps: int = 50
    video_steps: int = 25
    n_views: int = 8
    view_radius: float = 2.5
    customization: dict = field(default_factory=dict)
    injection: dict = field(default_factory=dict)
    interpolation: dict = field(default_factory=lambda: {"tau_conv": 0.0, "tau_sa": 0.0, "conv_taps": ["up1.conv"]})
    models: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "runs/demo"

    def __post_init__(self):
        if self.resolution is not None:
            object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        if self.keyframe_spacing < 1:
            raise ConfigError("keyframe_spacing must be positive")
        if self.start_index < 0 or self.input_index < 0:
            raise ConfigError("frame indices must be nonnegative")
        # validate nested sections eagerly so errors surface before any work
        self.customization_config()
        self.injection_config()
        self.interpolation_config()
        self.model_config()

    # --- resolution of paths and sections ----------------------------------

    @property
    def scene_path(self) -> Path:
        return DEMO_SCENE if self.scene == "demo" else Path(self.scene)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def scene_description(self):
        if not self.scene_path.exists():
            raise ConfigError(f"scene file not found: {self.scene_path}")
        return load_scene(self.scene_path)

    def build_scene(self):
        return self.scene_description().build(n_frames=self.n_frames, resolution=self.resolution)

    def customization_config(self):
        return _section(CustomizationConfig, {"seed": self.seed, **self.customization}, "customization")

    def injection_config(self):
        return _injection(self.injection, "injection")

    def interpolation_config(self):
        d = dict(self.interpolation)
        inj = _injection({k: d.pop(k) for k in ("tau_conv", "tau_sa", "conv_taps", "sa_taps") if k in d}, "interpolation")
        prompt = self.customization_config().input_prompt
        return _section(
            InterpolationConfig,
            {"steps": self.video_steps, "injection": inj, "prompt": prompt, "seed": self.seed, **d},
            "interpolation",
        )

    def model_config(self):
        return ModelConfig.from_dict(self.models)

    # --- serialization ------------------------------------------------------

    def to_dict(self):
        return asdict(self)

    def digest(self):
        """Hash of everything that affects results (the output directory does not)."""
        d = self.to_dict()
        d.pop("out")
        return _hash(d)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown config fields: {sorted(bad)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config document must be a JSON object")
        return cls.from_dict(doc)

    def override(self, **flags):
        """CLI flags win over the document; ``None`` means not given."""
        given = {k: v for k, v in flags.items() if v is not None}
        return replace(self, **given) if given else self


def _section(cls, d, name):
    known = {f.name for f in fields(cls)}
    bad = set(d) - known
    if bad:
        raise ConfigError(f"unknown {name} settings: {sorted(bad)}")
    try:
        return cls(**d)
    except TypeError as e:
        raise ConfigError(f"bad {name} settings: {e}") from None


def _injection(d, name):
    d = dict(d)
    for key in ("conv_taps", "sa_taps"):
        if d.get(key) is not None:
            d[key] = tuple(d[key])
    return _section(InjectionConfig, d, name)
