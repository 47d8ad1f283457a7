"""Pose recovery from keypoint correspondences (PnP) and from rectified stereo."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BehindCameraError, DegenerateConfigurationError, NonConvergenceError
from .geom import CameraIntrinsics, Pose, orthonormalize, project, rotation_between, skew, so3_exp

MAX_ITERATIONS = 100
STEP_TOL = 1e-10


@dataclass(frozen=True)
class Correspondence:
    point3: np.ndarray
    point2: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("weight must be non-negative")
        object.__setattr__(self, "point3", np.asarray(self.point3, dtype=np.float64).reshape(3))
        object.__setattr__(self, "point2", np.asarray(self.point2, dtype=np.float64).reshape(2))


@dataclass(frozen=True)
class StereoRig:
    """Rectified pair; the right camera sits ``baseline`` metres along +x of the left."""

    left: CameraIntrinsics
    right: CameraIntrinsics
    baseline: float

    def __post_init__(self):
        if not self.baseline > 0:
            raise ValueError("baseline must be positive")


def make_correspondences(points3, points2, weights=None) -> list[Correspondence]:
    points3 = np.asarray(points3, dtype=np.float64).reshape(-1, 3)
    points2 = np.asarray(points2, dtype=np.float64).reshape(-1, 2)
    if weights is None:
        weights = np.ones(len(points3))
    return [Correspondence(a, b, float(w)) for a, b, w in zip(points3, points2, weights)]


def _unpack(correspondences: Sequence[Correspondence]):
    X = np.array([c.point3 for c in correspondences], dtype=np.float64).reshape(-1, 3)
    x = np.array([c.point2 for c in correspondences], dtype=np.float64).reshape(-1, 2)
    w = np.array([c.weight for c in correspondences], dtype=np.float64)
    return X, x, w


def reprojection_rmse(pose: Pose, correspondences: Sequence[Correspondence],
                      intrinsics: CameraIntrinsics) -> float:
    X, x, _ = _unpack(correspondences)
    err = project(X, pose, intrinsics) - x
    return float(np.sqrt(np.mean(np.sum(err * err, axis=1))))


def _normalized(x, intrinsics: CameraIntrinsics) -> np.ndarray:
    return np.stack([(x[:, 0] - intrinsics.cx) / intrinsics.fx,
                     (x[:, 1] - intrinsics.cy) / intrinsics.fy], axis=1)


def _spread(X) -> np.ndarray:
    """Singular values of the centred point cloud, largest first."""
    return np.linalg.svd(X - X.mean(axis=0), compute_uv=False)


def is_collinear(X, tol: float = 1e-9) -> bool:
    s = _spread(np.asarray(X, dtype=np.float64))
    return s[0] == 0 or s[1] <= tol * s[0]


# -- Levenberg-Marquardt core ------------------------------------------------

def _residuals(Xc, x, sw, intrinsics):
    z = Xc[:, 2]
    u = intrinsics.fx * Xc[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * Xc[:, 1] / z + intrinsics.cy
    return (np.stack([u - x[:, 0], v - x[:, 1]], axis=1) * sw[:, None]).ravel()


def _projection_jacobian(Xc, sw, intrinsics):
    """d(residual)/d(camera point), shape (2N, 3)."""
    X, Y, Z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    n = len(Xc)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = intrinsics.fx / Z
    J[:, 0, 2] = -intrinsics.fx * X / Z**2
    J[:, 1, 1] = intrinsics.fy / Z
    J[:, 1, 2] = -intrinsics.fy * Y / Z**2
    return (J * sw[:, None, None]).reshape(2 * n, 3)


def _levenberg_marquardt(state, camera_points, jacobian, update, x, sw, intrinsics,
                         max_iter=MAX_ITERATIONS, tol=STEP_TOL):
    """Generic damped Gauss-Newton over an abstract state.

    Steps that raise the cost (or put a point behind the camera) are rejected
    and the damping is increased, so accepted iterates never get worse.
    Returns (state, cost, converged).
    """
    Xc = camera_points(state)
    r = _residuals(Xc, x, sw, intrinsics)
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(max_iter):
        J = jacobian(state, Xc)
        A = J.T @ J
        g = J.T @ r
        step = np.linalg.solve(A + lam * np.diag(np.maximum(np.diag(A), 1e-12)), -g)
        if np.linalg.norm(step) < tol:
            return state, cost, True
        cand = update(state, step)
        Xn = camera_points(cand)
        if np.all(Xn[:, 2] > 0):
            rn = _residuals(Xn, x, sw, intrinsics)
            cn = float(rn @ rn)
        else:
            cn = np.inf
        if cn <= cost:
            state, Xc, r, cost = cand, Xn, rn, cn
            lam = max(lam / 10.0, 1e-12)
        else:
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left at machine precision
                return state, cost, True
    return state, cost, False


def _refine_pose(R, t, X, x, sw, intrinsics, max_iter=MAX_ITERATIONS):
    def camera_points(s):
        return X @ s[0].T + s[1]

    def jacobian(s, Xc):
        Jp = _projection_jacobian(Xc, sw, intrinsics)
        RX = X @ s[0].T
        n = len(X)
        Jp3 = Jp.reshape(n, 2, 3)
        # dXc/domega = -[R x]_x, dXc/dt = I
        dw = np.einsum("nij,njk->nik", Jp3, -np.array([skew(p) for p in RX]))
        return np.concatenate([dw.reshape(2 * n, 3), Jp], axis=1)

    def update(s, step):
        return so3_exp(step[:3]) @ s[0], s[1] + step[3:]

    return _levenberg_marquardt((R, t), camera_points, jacobian, update, x, sw, intrinsics,
                                max_iter)


# -- initializations ---------------------------------------------------------

def _dlt_init(X, xn):
    """Linear pose from >= 6 non-coplanar points, or None if ill-posed."""
    n = len(X)
    mean = X.mean(axis=0)
    scale = np.sqrt(3.0) / np.mean(np.linalg.norm(X - mean, axis=1))
    Xh = np.hstack([(X - mean) * scale, np.ones((n, 1))])
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, :1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:] * Xh
    _, s, Vt = np.linalg.svd(A)
    if s[-2] < 1e-8 * s[0]:
        return None
    P = Vt[-1].reshape(3, 4)
    M = P[:, :3]
    if np.linalg.det(M) < 0:
        P = -P
        M = P[:, :3]
    sv = np.linalg.svd(M, compute_uv=False)
    lam = sv.mean()
    R = orthonormalize(M)
    # P ~ lam * scale * [R/scale | R mean + t]
    t = P[:, 3] / (lam * scale) - R @ mean
    return R, t


def _planar_init(X, xn):
    """Pose from >= 4 coplanar points via plane homography decomposition."""
    mean = X.mean(axis=0)
    _, _, Vt = np.linalg.svd(X - mean)
    B = Vt[:2]  # in-plane basis
    Q = (X - mean) @ B.T
    n = len(X)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:2] = Q
    A[0::2, 2] = 1
    A[0::2, 6:8] = -xn[:, :1] * Q
    A[0::2, 8] = -xn[:, 0]
    A[1::2, 3:5] = Q
    A[1::2, 5] = 1
    A[1::2, 6:8] = -xn[:, 1:] * Q
    A[1::2, 8] = -xn[:, 1]
    Hm = np.linalg.svd(A)[2][-1].reshape(3, 3)
    h1, h2, h3 = Hm[:, 0], Hm[:, 1], Hm[:, 2]
    lam = 2.0 / (np.linalg.norm(h1) + np.linalg.norm(h2))
    if h3[2] * lam < 0:
        lam = -lam
    r1, r2 = h1 * lam, h2 * lam
    Rp = orthonormalize(np.stack([r1, r2, np.cross(r1, r2)], axis=1))
    tp = h3 * lam
    # plane frame -> model frame: x = mean + B^T q  =>  R = Rp @ [B; n], t = tp - R mean
    frame = np.vstack([B, np.cross(B[0], B[1])])
    R = Rp @ frame
    return orthonormalize(R), tp - R @ mean


def _multistart_inits(X, xn):
    """Octahedral rotation seeds with a centroid-depth translation guess."""
    spread3 = np.sqrt(np.mean(np.sum((X - X.mean(0)) ** 2, axis=1)))
    spread2 = np.sqrt(np.mean(np.sum((xn - xn.mean(0)) ** 2, axis=1)))
    depth = spread3 / max(spread2, 1e-9)
    c = xn.mean(axis=0)
    seeds = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            R = np.zeros((3, 3))
            for i, j in enumerate(perm):
                R[i, j] = signs[i]
            if np.linalg.det(R) > 0:
                t = np.array([c[0] * depth, c[1] * depth, depth]) - R @ X.mean(axis=0)
                seeds.append((R, t))
    return seeds


def solve_pnp(correspondences: Sequence[Correspondence], intrinsics: CameraIntrinsics,
              max_iter: int = MAX_ITERATIONS) -> Pose:
    """Pose from >= 4 2D-3D correspondences.

    Linear initialization (DLT for >= 6 general points, plane homography for
    coplanar sets, octahedral multi-start otherwise) followed by
    Levenberg-Marquardt on the weighted reprojection error. Raises
    :class:`NonConvergenceError` carrying the best iterate when the iteration
    cap is hit.
    """
    if len(correspondences) < 4:
        raise ValueError(f"PnP needs at least 4 correspondences, got {len(correspondences)}")
    X, x, w = _unpack(correspondences)
    if is_collinear(X):
        raise DegenerateConfigurationError("3D points are collinear")
    sw = np.sqrt(w)
    xn = _normalized(x, intrinsics)
    s = _spread(X)
    planar = s[2] <= 1e-9 * s[0]

    inits = []
    if planar:
        inits.append(_planar_init(X, xn))
    elif len(X) >= 6:
        init = _dlt_init(X, xn)
        if init is not None:
            inits.append(init)
    if not inits:
        inits = _multistart_inits(X, xn)

    best = None
    for R0, t0 in inits:
        if np.any((X @ R0.T + t0)[:, 2] <= 0):
            continue
        (R, t), cost, converged = _refine_pose(R0, t0, X, x, sw, intrinsics, max_iter)
        if best is None or cost < best[1]:
            best = ((R, t), cost, converged)
    if best is None:
        raise DegenerateConfigurationError("no initialization places the points in front of the camera")
    (R, t), cost, converged = best
    pose = Pose(orthonormalize(R), t)
    if not converged:
        raise NonConvergenceError("PnP refinement did not converge", pose=pose,
                                  rmse=float(np.sqrt(cost / len(X))))
    return pose


# -- line objects ------------------------------------------------------------

def solve_pnp_axial(correspondences: Sequence[Correspondence], intrinsics: CameraIntrinsics,
                    max_iter: int = MAX_ITERATIONS) -> Pose:
    """Pose of an object whose keypoints all lie on one line.

    Roll about that line is unobservable; the returned rotation is the
    smallest one that maps the model line direction onto the recovered camera
    direction. Needs >= 3 distinct points along the line.
    """
    if len(correspondences) < 3:
        raise ValueError("axial PnP needs at least 3 correspondences")
    X, x, w = _unpack(correspondences)
    anchor = X.mean(axis=0)
    _, sv, Vt = np.linalg.svd(X - anchor)
    axis = Vt[0]
    if sv[0] == 0 or (len(sv) > 1 and sv[1] > 1e-6 * sv[0]):
        raise DegenerateConfigurationError("axial PnP requires collinear, non-coincident 3D points")
    s = (X - anchor) @ axis
    if len(np.unique(np.round(s / sv[0], 12))) < 3:
        raise DegenerateConfigurationError("need 3 distinct positions along the line")
    sw = np.sqrt(w)
    xn = _normalized(x, intrinsics)

    n = len(X)
    A = np.zeros((2 * n, 6))
    A[0::2, 0] = 1
    A[0::2, 2] = -xn[:, 0]
    A[0::2, 3] = s
    A[0::2, 5] = -s * xn[:, 0]
    A[1::2, 1] = 1
    A[1::2, 2] = -xn[:, 1]
    A[1::2, 4] = s
    A[1::2, 5] = -s * xn[:, 1]
    A *= np.repeat(sw, 2)[:, None]
    y = np.linalg.svd(A)[2][-1]
    y = y / np.linalg.norm(y[3:])
    if y[2] < 0:
        y = -y
    t0, a0 = y[:3], y[3:]

    def camera_points(st):
        return st[0] + s[:, None] * st[1]

    def tangent(a):
        helper = np.eye(3)[int(np.argmin(np.abs(a)))]
        b1 = np.cross(a, helper)
        b1 /= np.linalg.norm(b1)
        return np.stack([b1, np.cross(a, b1)], axis=1)

    def jacobian(st, Xc):
        Jp = _projection_jacobian(Xc, sw, intrinsics).reshape(n, 2, 3)
        B = tangent(st[1])
        Ja = np.einsum("nij,jk->nik", Jp, B) * s[:, None, None]
        return np.concatenate([Jp.reshape(2 * n, 3), Ja.reshape(2 * n, 2)], axis=1)

    def update(st, step):
        a = st[1] + tangent(st[1]) @ step[3:]
        return st[0] + step[:3], a / np.linalg.norm(a)

    if np.any(camera_points((t0, a0))[:, 2] <= 0):
        raise DegenerateConfigurationError("linear line-pose estimate is behind the camera")
    (t, a), cost, converged = _levenberg_marquardt(
        (t0, a0), camera_points, jacobian, update, x, sw, intrinsics, max_iter)
    R = rotation_between(axis, a)
    pose = Pose(R, t - R @ anchor)
    if not converged:
        raise NonConvergenceError("axial PnP refinement did not converge", pose=pose,
                                  rmse=float(np.sqrt(cost / n)))
    return pose


# -- stereo ------------------------------------------------------------------

def triangulate_stereo(left_kp, right_kp, rig: StereoRig) -> np.ndarray:
    """3D point in the left camera frame from a rectified correspondence.

    Disparity is measured relative to each camera's principal point, which
    reduces to ``u_left - u_right`` when the principal points agree.
    """
    L, Rc = rig.left, rig.right
    ul, vl = float(left_kp[0]), float(left_kp[1])
    ur = float(right_kp[0])
    disparity = (ul - L.cx) - (ur - Rc.cx) * L.fx / Rc.fx
    if not disparity > 0:
        raise DegenerateConfigurationError(f"non-positive disparity {disparity}")
    Z = L.fx * rig.baseline / disparity
    return np.array([(ul - L.cx) * Z / L.fx, (vl - L.cy) * Z / L.fy, Z])


def procrustes_fit(source, target) -> Pose:
    """Least-squares rigid transform with R @ source + t ~= target (Kabsch)."""
    S = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    T = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if len(S) != len(T):
        raise ValueError("source and target differ in length")
    if len(S) < 3:
        raise ValueError("Procrustes needs at least 3 point pairs")
    if is_collinear(S) or is_collinear(T):
        raise DegenerateConfigurationError("point set is collinear")
    ms, mt = S.mean(axis=0), T.mean(axis=0)
    C = (T - mt).T @ (S - ms)
    U, _, Vt = np.linalg.svd(C)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    return Pose(R, mt - R @ ms)


def stereo_pose(left_kps, right_kps, model_keypoints, rig: StereoRig) -> Pose:
    """Triangulate every keypoint, then align the model keypoints to them."""
    pts = np.array([triangulate_stereo(l, r, rig) for l, r in zip(left_kps, right_kps)])
    return procrustes_fit(model_keypoints, pts)


def right_camera_projection(point_left_frame, rig: StereoRig) -> np.ndarray:
    """Project a left-camera-frame point into the right image."""
    p = np.asarray(point_left_frame, dtype=np.float64)
    if p[2] <= 0:
        raise BehindCameraError("point behind the rig")
    return np.array([rig.right.fx * (p[0] - rig.baseline) / p[2] + rig.right.cx,
                     rig.right.fy * p[1] / p[2] + rig.right.cy])
