"""Flat TOML experiment configuration."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .geom import CameraIntrinsics
from .kdf import LossConfig, default_r
from .metrics import EvalThresholds
from .synth import NoiseModel, SceneConfig, StickObject
from .voting import VotingConfig

SWEEP_AXES = ("num_keypoints", "theta", "num_hypotheses", "sigma_t", "occluder_radius")


@dataclass(frozen=True)
class ExperimentConfig:
    scenes: int = 3000
    seed: int = 0
    workers: int = 1

    # camera
    height: int = 256
    width: int = 256
    fx: float = 400.0
    fy: float = 400.0
    cx: float = 127.5
    cy: float = 127.5
    translation: tuple = (0.0, 0.0, 0.35)

    # object
    stick_length: float = 0.2
    stick_radius: float = 0.004
    num_keypoints: int = 4

    # simulated predictor
    sigma_t: float = 0.02
    sigma_angle: float | None = None
    outlier_fraction: float = 0.0
    occlusion: bool = False
    occluder_radius: float | None = None

    # voting
    schemes: tuple = ("distance", "direction")
    # voters are mask pixels within this distance of the true keypoint, a
    # stand-in for a rough detection; 0 means the whole mask
    voter_radius: float | None = 64.0
    num_voters: int = 4096
    num_triples: int = 1024
    theta: float = 0.4
    direction_cos_threshold: float = 0.99

    # loss
    loss_r: float | None = None
    loss_e: float = 1.0
    crop_radius: float | None = 64.0

    # metrics
    add_fraction: float = 0.1
    proj_pixels: float = 5.0
    toy_proj_pixels: float = 1.0
    auc_max: float = 0.10

    # sweep / timing
    axis: str | None = None
    values: tuple = ()
    timing_repetitions: int = 20

    def __post_init__(self):
        if self.scenes < 1:
            raise ConfigError("scenes must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.axis is not None:
            if self.axis not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {self.axis!r}; expected one of {SWEEP_AXES}")
            if not self.values:
                raise ConfigError("sweep values must be non-empty when an axis is set")
        object.__setattr__(self, "translation", tuple(float(x) for x in self.translation))
        object.__setattr__(self, "values", tuple(self.values))
        # TOML has no null, so 0 switches the voter window off
        if self.voter_radius is not None:
            if self.voter_radius < 0:
                raise ConfigError("voter_radius must be non-negative")
            if self.voter_radius == 0:
                object.__setattr__(self, "voter_radius", None)
        object.__setattr__(self, "schemes", tuple(self.schemes))
        bad = [s for s in self.schemes if s not in ("distance", "direction")]
        if bad or not self.schemes or len(set(self.schemes)) != len(self.schemes):
            raise ConfigError(f"schemes must be distinct names from distance, direction; got {self.schemes}")
        # build every sub-config once so invalid values fail at load time
        try:
            self.scene_config(), self.noise_model(), self.voting_config(0)
            self.loss_config(), self.thresholds()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived configs ------------------------------------------------

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.fx, self.fy, self.cx, self.cy, self.height, self.width)

    def scene_config(self) -> SceneConfig:
        stick = StickObject(self.stick_length, self.stick_radius, self.num_keypoints)
        return SceneConfig(stick, self.intrinsics(), self.translation)

    def noise_model(self) -> NoiseModel:
        return NoiseModel(self.sigma_t, self.outlier_fraction, self.occluder_radius,
                          self.sigma_angle)

    def voting_config(self, rng_seed: int) -> VotingConfig:
        return VotingConfig(self.num_voters, self.num_triples, self.theta, rng_seed,
                            self.direction_cos_threshold)

    def loss_config(self) -> LossConfig:
        r = self.loss_r if self.loss_r is not None else default_r(self.height, self.width)
        return LossConfig(r, self.loss_e, self.crop_radius)

    def thresholds(self) -> EvalThresholds:
        return EvalThresholds(self.add_fraction, self.proj_pixels, self.toy_proj_pixels,
                              self.auc_max)

    # -- (de)serialization ----------------------------------------------

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_axis_value(self, axis: str, value) -> "ExperimentConfig":
        if axis == "num_keypoints":
            return self.replace(num_keypoints=int(value))
        if axis == "theta":
            return self.replace(theta=float(value))
        if axis == "num_hypotheses":
            n = int(value)
            if n % 3:
                raise ConfigError(f"hypothesis count {n} is not a multiple of 3")
            return self.replace(num_triples=n // 3)
        if axis == "sigma_t":
            return self.replace(sigma_t=float(value))
        if axis == "occluder_radius":
            r = float(value)
            return self.replace(occlusion=r > 0, occluder_radius=r if r > 0 else None)
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["translation"] = list(self.translation)
        d["values"] = list(self.values)
        d["schemes"] = list(self.schemes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(d)
        for key in ("translation", "values", "schemes"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            with path.open("rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(data)
