"""Synthetic thin-stick scenes, keypoint occluders and a predictor noise model.

The stick is idealized as a capsule (axis segment plus radius) and its mask
is computed analytically, so no renderer is involved.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BehindCameraError
from .geom import CameraIntrinsics, ObjectModel, Pose, SymmetryGroup, project, transform_points
from .kdf import MIN_DISTANCE, DistanceField, LossConfig, build_kdf, pixel_grid, write_field
from .voting import DirectionField


@dataclass(frozen=True)
class StickObject:
    """Straight stick along the model z axis, centred on the origin.

    Keypoints are equally spaced along the axis and include both ends.
    """

    length: float = 0.2
    radius: float = 0.004
    num_keypoints: int = 4

    def __post_init__(self):
        if not (self.length > 0 and self.radius > 0):
            raise ValueError("length and radius must be positive")
        if self.num_keypoints < 2:
            raise ValueError("need at least 2 keypoints")

    @property
    def endpoints(self) -> np.ndarray:
        h = self.length / 2
        return np.array([[0.0, 0.0, -h], [0.0, 0.0, h]])

    @property
    def keypoints(self) -> np.ndarray:
        z = np.linspace(-self.length / 2, self.length / 2, self.num_keypoints)
        return np.stack([np.zeros_like(z), np.zeros_like(z), z], axis=1)

    def model(self, num_points: int = 64) -> ObjectModel:
        """Object model sampled on the axis.

        Points off the axis would make metrics depend on the unobservable roll
        about it.
        """
        z = np.linspace(-self.length / 2, self.length / 2, num_points)
        pts = np.stack([np.zeros_like(z), np.zeros_like(z), z], axis=1)
        sym = SymmetryGroup(axis=((0.0, 0.0, 0.0), (0.0, 0.0, 1.0)))
        return ObjectModel(pts, self.keypoints, diameter=self.length, symmetry=sym)


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=400.0, fy=400.0, cx=127.5, cy=127.5, height=256, width=256)


@dataclass(frozen=True)
class SceneConfig:
    stick: StickObject = field(default_factory=StickObject)
    intrinsics: CameraIntrinsics = field(default_factory=default_intrinsics)
    translation: tuple = (0.0, 0.0, 0.35)


@dataclass(frozen=True)
class SceneSample:
    pose: Pose
    mask: np.ndarray
    keypoints2d: np.ndarray
    fields: tuple
    projected_length: float

    @property
    def num_keypoints(self) -> int:
        return len(self.keypoints2d)


@dataclass(frozen=True)
class NoiseModel:
    """Simulated regression error.

    ``sigma_t`` perturbs the log-distance of each pixel; ``sigma_angle``
    (radians, defaults to ``sigma_t``) rotates direction-field vectors. The
    two produce the same first-order positional error at a given distance,
    so distance and direction voting face comparable noise. ``occluder_radius``
    is in pixels; None means 5% of the projected stick length.
    """

    sigma_t: float = 0.0
    outlier_fraction: float = 0.0
    occluder_radius: float | None = None
    sigma_angle: float | None = None

    def __post_init__(self):
        if self.sigma_t < 0:
            raise ValueError("sigma_t must be non-negative")
        if not 0 <= self.outlier_fraction < 1:
            raise ValueError("outlier_fraction must be in [0, 1)")
        if self.occluder_radius is not None and self.occluder_radius < 0:
            raise ValueError("occluder_radius must be non-negative")
        if self.sigma_angle is not None and self.sigma_angle < 0:
            raise ValueError("sigma_angle must be non-negative")

    @property
    def angle_sigma(self) -> float:
        return self.sigma_t if self.sigma_angle is None else self.sigma_angle

    def occluder_radius_for(self, scene: SceneSample) -> float:
        if self.occluder_radius is None:
            return 0.05 * scene.projected_length
        return self.occluder_radius


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix (Shoemake's quaternion construction)."""
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    x, y = a * np.sin(2 * np.pi * u2), a * np.cos(2 * np.pi * u2)
    z, w = b * np.sin(2 * np.pi * u3), b * np.cos(2 * np.pi * u3)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def capsule_mask(p0, p1, depth0: float, depth1: float, radius: float,
                 intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pixels within the projected radius of the projected axis segment.

    Inverse depth is affine along an image-space segment, which gives the
    exact projected radius at every point of the segment.
    """
    u, v = pixel_grid(intrinsics.height, intrinsics.width)
    p0 = np.asarray(p0, dtype=np.float64)
    seg = np.asarray(p1, dtype=np.float64) - p0
    L2 = float(seg @ seg)
    if L2 > 0:
        tau = np.clip(((u - p0[0]) * seg[0] + (v - p0[1]) * seg[1]) / L2, 0.0, 1.0)
    else:
        tau = np.zeros_like(u)
    dist = np.hypot(u - (p0[0] + tau * seg[0]), v - (p0[1] + tau * seg[1]))
    f = 0.5 * (intrinsics.fx + intrinsics.fy)
    rad = f * radius * ((1 - tau) / depth0 + tau / depth1)
    return dist <= rad


def make_stick_scene(config: SceneConfig, rng: np.random.Generator) -> SceneSample:
    """One stick scene: fixed translation, uniformly random rotation."""
    intr = config.intrinsics
    pose = Pose(random_rotation(rng), config.translation)
    ends = transform_points(config.stick.endpoints, pose)
    if np.any(ends[:, 2] <= 0):
        raise BehindCameraError("stick extends behind the camera")
    ends2d = project(config.stick.endpoints, pose, intr)
    mask = capsule_mask(ends2d[0], ends2d[1], ends[0, 2], ends[1, 2], config.stick.radius, intr)
    if not mask.any():
        raise ValueError("stick does not cover any pixel")
    kps2d = project(config.stick.keypoints, pose, intr)
    fields = tuple(build_kdf(kp, intr.height, intr.width, k) for k, kp in enumerate(kps2d))
    mask.setflags(write=False)
    return SceneSample(pose, mask, kps2d, fields, float(np.linalg.norm(ends2d[1] - ends2d[0])))


def occlude_keypoints(mask, keypoints2d, radius: float) -> np.ndarray:
    """Remove every pixel within ``radius`` of any keypoint from ``mask``."""
    if not radius > 0:
        raise ValueError("occluder radius must be positive")
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    out = mask.copy()
    for ku, kv in np.asarray(keypoints2d, dtype=np.float64).reshape(-1, 2):
        # only the occluder's bounding window can change
        u0, u1 = max(0, int(np.floor(ku - radius))), min(W, int(np.ceil(ku + radius)) + 1)
        v0, v1 = max(0, int(np.floor(kv - radius))), min(H, int(np.ceil(kv + radius)) + 1)
        if u0 >= u1 or v0 >= v1:
            continue
        v, u = np.mgrid[v0:v1, u0:u1]
        out[v0:v1, u0:u1] &= np.hypot(u - ku, v - kv) > radius
    return out


def _support_index(shape, support):
    if support is None:
        return np.ones(shape, dtype=bool)
    support = np.asarray(support, dtype=bool)
    if support.shape != tuple(shape):
        raise ValueError(f"support shape {support.shape} does not match field {tuple(shape)}")
    return support


def corrupt_field(field: DistanceField, model: NoiseModel, rng: np.random.Generator,
                  config: LossConfig | None = None, support=None) -> DistanceField:
    """Gaussian noise on log-distance, then uniform outliers on [0, diagonal).

    ``support`` (boolean mask) limits corruption to those pixels, e.g. the
    object mask when only mask pixels can ever vote; the rest keep their
    input values.
    """
    config = config or LossConfig()
    sel = _support_index(field.shape, support)
    n = int(np.count_nonzero(sel))
    vals = field.values
    if model.sigma_t > 0:
        vals = np.array(vals, dtype=np.float64)
        t = np.log(np.maximum(vals[sel], MIN_DISTANCE) / config.r)
        vals[sel] = config.r * np.exp(t + rng.normal(0.0, model.sigma_t, n))
    if model.outlier_fraction > 0:
        vals = np.array(vals, dtype=np.float64)
        sub = vals[sel]
        hit = rng.random(n) < model.outlier_fraction
        sub[hit] = rng.uniform(0.0, float(np.hypot(*vals.shape)), int(hit.sum()))
        vals[sel] = sub
    if vals is field.values:
        return field
    return field.replace(vals)


def corrupt_direction_field(field: DirectionField, model: NoiseModel,
                            rng: np.random.Generator, support=None) -> DirectionField:
    """Rotate each vector by Gaussian angle noise; outliers get a random direction.

    The zero sentinel at the keypoint pixel is left alone.
    """
    sel = _support_index(field.shape, support)
    n = int(np.count_nonzero(sel))
    if model.angle_sigma == 0 and model.outlier_fraction == 0:
        return field
    vec = field.values[sel]
    angle = np.arctan2(vec[:, 1], vec[:, 0])
    if model.angle_sigma > 0:
        angle = angle + rng.normal(0.0, model.angle_sigma, n)
    if model.outlier_fraction > 0:
        hit = rng.random(n) < model.outlier_fraction
        angle[hit] = rng.uniform(-np.pi, np.pi, int(hit.sum()))
    new = np.stack([np.cos(angle), np.sin(angle)], axis=1)
    new[np.all(vec == 0, axis=1)] = 0.0
    out = np.array(field.values)
    out[sel] = new
    return DirectionField(out, field.keypoint_index)


# -- scene archives ----------------------------------------------------------

def rle_encode(mask) -> list[int]:
    """Run lengths of the row-major flattened mask, starting with a False run."""
    flat = np.asarray(mask, dtype=bool).ravel()
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs, shape) -> np.ndarray:
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    pos, val = 0, False
    for r in runs:
        if val:
            flat[pos:pos + r] = True
        pos += r
        val = not val
    if pos != flat.size:
        raise ValueError(f"run lengths cover {pos} pixels, expected {flat.size}")
    return flat.reshape(shape)


def scene_record(index: int, seed: int, scene: SceneSample, intrinsics: CameraIntrinsics,
                 field_files: dict | None = None) -> dict:
    rec = {
        "index": index,
        "seed": seed,
        "pose": scene.pose.to_dict(),
        "intrinsics": intrinsics.to_dict(),
        "keypoints2d": [[float(a), float(b)] for a, b in scene.keypoints2d],
        "mask": {"shape": list(scene.mask.shape), "rle": rle_encode(scene.mask)},
    }
    if field_files:
        rec["fields"] = field_files
    return rec


def write_scene(directory, index: int, seed: int, scene: SceneSample,
                intrinsics: CameraIntrinsics, predicted=None) -> Path:
    """Write ``scene_XXXXX.json`` plus one ``.kdf`` file per ground-truth (and predicted) field."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = f"scene_{index:05d}"
    files: dict = {"gt": [], "pred": []}
    for f in scene.fields:
        name = f"{stem}_gt_k{f.keypoint_index}.kdf"
        write_field(f, directory / name)
        files["gt"].append(name)
    for f in predicted or ():
        name = f"{stem}_pred_k{f.keypoint_index}.kdf"
        write_field(f, directory / name)
        files["pred"].append(name)
    if not files["pred"]:
        del files["pred"]
    path = directory / f"{stem}.json"
    path.write_text(json.dumps(scene_record(index, seed, scene, intrinsics, files), indent=1))
    return path


def read_scene(path) -> dict:
    """Load a scene JSON, decoding the mask and pose."""
    path = Path(path)
    rec = json.loads(path.read_text())
    rec["mask"] = rle_decode(rec["mask"]["rle"], tuple(rec["mask"]["shape"]))
    rec["pose"] = Pose.from_dict(rec["pose"])
    rec["keypoints2d"] = np.asarray(rec["keypoints2d"], dtype=np.float64)
    return rec
