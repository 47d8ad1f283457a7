from __future__ import annotations

import numpy as np
import pytest

from kdfvote.geom import CameraIntrinsics, Pose
from kdfvote.synth import random_rotation


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def intr():
    return CameraIntrinsics(fx=400.0, fy=400.0, cx=127.5, cy=127.5, height=256, width=256)


def random_pose(rng, depth=(2.0, 4.0), shift=0.3) -> Pose:
    t = np.array([rng.uniform(-shift, shift), rng.uniform(-shift, shift), rng.uniform(*depth)])
    return Pose(random_rotation(rng), t)
