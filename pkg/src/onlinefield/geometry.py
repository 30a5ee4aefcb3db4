"""Scene contraction, pose recentering and random point initialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, OutOfDomain

DEFAULT_DEPTH_BOUNDS = (0.1, 10.0)


def _linf(x: np.ndarray) -> np.ndarray:
    return np.max(np.abs(x), axis=-1, keepdims=True)


def contract(x) -> np.ndarray:
    """Squeeze R^d into the open L-inf ball of radius 2.

    Works on a single vector or a stack of vectors along the last axis.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("contract: non-finite input")
    n = _linf(x)
    safe = np.where(n > 1.0, n, 1.0)
    return np.where(n > 1.0, (2.0 - 1.0 / safe) * (x / safe), x)


def uncontract(y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InvalidArgument("uncontract: non-finite input")
    n = _linf(y)
    if np.any(n >= 2.0):
        raise OutOfDomain("uncontract: L-inf norm must be < 2")
    safe = np.where(n > 1.0, n, 1.0)
    # ||x|| = 1 / (2 - ||y||) on the outer shell
    return np.where(n > 1.0, y / safe / (2.0 - safe), y)


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise InvalidArgument("pose entries must be finite")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise InvalidArgument("pose rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        return self.translation

    @property
    def heading(self) -> np.ndarray:
        """Optical axis (camera +z) in world coordinates."""
        return self.rotation[:, 2]


@dataclass(frozen=True)
class RecenterTransform:
    """Similarity x -> scale * (rotation @ x + translation)."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidArgument("scale must be positive")
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    def apply_point(self, x) -> np.ndarray:
        return self.scale * (np.asarray(x, dtype=float) @ self.rotation.T + self.translation)

    def inverse(self) -> "RecenterTransform":
        rt = self.rotation.T
        return RecenterTransform(rt, -(rt @ self.translation) * self.scale, 1.0 / self.scale)


def estimate_recenter(poses, depth_bounds=DEFAULT_DEPTH_BOUNDS) -> RecenterTransform:
    """Center on the mean frustum midpoint of the first poses and fit their
    camera centers into [-1, 1]^3."""
    poses = list(poses)
    if not poses:
        raise InvalidArgument("need at least one pose")
    near, far = (float(v) for v in depth_bounds)
    if not (near > 0):
        raise InvalidArgument("near bound must be positive")
    if far < near:
        raise InvalidArgument("need near < far")
    mid = 0.5 * (near + far)
    centers = np.stack([p.center for p in poses])
    midpoints = centers + mid * np.stack([p.heading for p in poses])
    o = midpoints.mean(axis=0)
    same = all(np.array_equal(p.rotation, poses[0].rotation) and np.array_equal(p.center, poses[0].center)
               for p in poses)
    if same and far == near:
        return RecenterTransform(translation=-o, scale=1.0)
    if far == near:
        raise InvalidArgument("need near < far")
    spread = float(np.max(np.abs(centers - o)))
    return RecenterTransform(translation=-o, scale=1.0 / max(1.0, spread))


def apply_recenter(t: RecenterTransform, p: Pose) -> Pose:
    return Pose(t.rotation @ p.rotation, t.apply_point(p.translation))


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray
    seed: int

    def __len__(self):
        return len(self.points)


def init_points(n: int, seed: int, d: int = 3) -> PointSet:
    """n points uniform in the unit cube plus n//2 pushed to distant regions.

    The extra points are drawn uniformly from the shell [-2,2]^d minus
    [-1,1]^d in contracted space, then mapped back with `uncontract`.
    """
    if n <= 0:
        raise InvalidArgument("n must be positive")
    rng = np.random.default_rng(seed)
    inner = rng.uniform(-1.0, 1.0, size=(n, d))
    m = n // 2
    outer = np.empty((0, d))
    while len(outer) < m:
        cand = rng.uniform(-2.0, 2.0, size=(2 * (m - len(outer)) + 8, d))
        norm = np.max(np.abs(cand), axis=1)
        cand = cand[(norm > 1.0) & (norm < 2.0)]
        outer = np.concatenate([outer, cand])
    outer = uncontract(outer[:m])
    return PointSet(np.concatenate([inner, outer]), seed)
