"""A 2D differentiable radiance field observed by 1D cameras.

The world is the plane; a camera sees a single row of pixels fanned across
its field of view. The scene lives on a G x G grid laid over contracted
space [-2, 2]^2, so every lookup goes through `geometry.contract` and the
grid covers the whole unbounded plane. Gradients of the photometric loss
are derived by hand for the quadrature below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument

BACKGROUND = np.ones(3)
DEFAULT_RESOLUTION = 128
DEFAULT_SAMPLES = 64
DEFAULT_NEAR = 0.05
DEFAULT_FAR = 6.5
DENSITY_SCALE = 10.0
PSNR_CAP = 99.0


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_inv(y):
    y = np.asarray(y, dtype=float)
    return np.where(y > 30.0, y, np.log(np.expm1(np.maximum(y, 1e-300))))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logit(p):
    p = np.asarray(p, dtype=float)
    return np.log(p) - np.log1p(-p)


@dataclass
class RadianceGrid:
    """Density and color on a grid over contracted space.

    Parameters are stored pre-activation: density = DENSITY_SCALE * softplus(raw),
    color = sigmoid(raw). Activated values are interpolated bilinearly.
    """

    sigma_raw: np.ndarray
    color_raw: np.ndarray
    grad_sigma: np.ndarray = field(init=False)
    grad_color: np.ndarray = field(init=False)
    m_sigma: np.ndarray = field(init=False)
    v_sigma: np.ndarray = field(init=False)
    m_color: np.ndarray = field(init=False)
    v_color: np.ndarray = field(init=False)
    step: int = field(init=False, default=0)

    def __post_init__(self):
        self.sigma_raw = np.array(self.sigma_raw, dtype=float)
        self.color_raw = np.array(self.color_raw, dtype=float)
        g = self.sigma_raw.shape[0]
        if self.sigma_raw.shape != (g, g) or self.color_raw.shape != (g, g, 3):
            raise InvalidArgument("grid arrays must be (G, G) and (G, G, 3)")
        self.grad_sigma = np.zeros_like(self.sigma_raw)
        self.grad_color = np.zeros_like(self.color_raw)
        self.m_sigma = np.zeros_like(self.sigma_raw)
        self.v_sigma = np.zeros_like(self.sigma_raw)
        self.m_color = np.zeros_like(self.color_raw)
        self.v_color = np.zeros_like(self.color_raw)

    @classmethod
    def empty(cls, resolution=DEFAULT_RESOLUTION, density=0.05, color=0.5):
        g = resolution
        return cls(np.full((g, g), softplus_inv(density / DENSITY_SCALE)),
                   np.full((g, g, 3), logit(color)))

    @classmethod
    def from_values(cls, density, color):
        density = np.asarray(density, dtype=float)
        color = np.clip(np.asarray(color, dtype=float), 1e-6, 1 - 1e-6)
        return cls(softplus_inv(np.maximum(density, 1e-12) / DENSITY_SCALE), logit(color))

    @property
    def resolution(self) -> int:
        return self.sigma_raw.shape[0]

    def density(self) -> np.ndarray:
        return DENSITY_SCALE * softplus(self.sigma_raw)

    def color(self) -> np.ndarray:
        return sigmoid(self.color_raw)

    def cell_centers(self) -> np.ndarray:
        """(G, G, 2) contracted-space coordinates of cell centers."""
        g = self.resolution
        c = -2.0 + (np.arange(g) + 0.5) * (4.0 / g)
        return np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1)

    def copy(self) -> "RadianceGrid":
        return RadianceGrid(self.sigma_raw.copy(), self.color_raw.copy())

    def zero_grad(self):
        self.grad_sigma[...] = 0.0
        self.grad_color[...] = 0.0


@dataclass(frozen=True)
class FlatCamera:
    position: np.ndarray
    heading: np.ndarray
    fov: float
    width: int

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(2)
        h = np.asarray(self.heading, dtype=float).reshape(2)
        if abs(np.linalg.norm(h) - 1.0) > 1e-9:
            raise InvalidArgument("heading must be a unit vector")
        if not 0 < self.fov < math.pi:
            raise InvalidArgument("fov must be in (0, pi)")
        if self.width < 1:
            raise InvalidArgument("width must be positive")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "heading", h)

    @classmethod
    def looking_at(cls, position, target, fov, width):
        d = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
        return cls(position, d / np.linalg.norm(d), fov, width)

    def rays(self, divisor: int = 1):
        """Origins and unit directions for the image downscaled by `divisor`."""
        n = self.width // divisor
        base = math.atan2(self.heading[1], self.heading[0])
        ang = base + self.fov / 2 - (np.arange(n) + 0.5) * (self.fov / n)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return np.broadcast_to(self.position, (n, 2)).copy(), dirs


@dataclass
class FlatFrame:
    camera: FlatCamera
    pixels: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.shape != (self.camera.width, 3):
            raise InvalidArgument("pixel count must equal camera width")

    def downscaled(self, divisor: int) -> np.ndarray:
        if divisor == 1:
            return self.pixels
        n = self.camera.width // divisor
        return self.pixels[: n * divisor].reshape(n, divisor, 3).mean(axis=1)


# -- rendering -----------------------------------------------------------------

@dataclass
class RenderCache:
    act: np.ndarray      # (G*G, 4) activated density and color, the table that was rendered
    interp: sp.csr_matrix  # (R*n, G*G) bilinear interpolation operator
    col: np.ndarray      # (R, n, 3) interpolated color
    delta: np.ndarray    # (R, n)
    cum: np.ndarray      # (R, n) inclusive optical depth
    wts: np.ndarray      # (R, n) compositing weights
    trans: np.ndarray    # (R,) residual transmittance
    colors: np.ndarray   # (R, 3)


def _contract_fast(x):
    n = np.max(np.abs(x), axis=-1, keepdims=True)
    safe = np.maximum(n, 1.0)
    return np.where(n > 1.0, (2.0 - 1.0 / safe) * (x / safe), x)


def _bilinear(g: int, y: np.ndarray):
    u = np.clip((y + 2.0) * (g / 4.0) - 0.5, 0.0, g - 1.0)
    i0 = np.minimum(np.floor(u).astype(np.int64), g - 2)
    f = u - i0
    ix, iy = i0[..., 0], i0[..., 1]
    fx, fy = f[..., 0], f[..., 1]
    base = ix * g + iy
    idx = np.stack([base, base + 1, base + g, base + g + 1], axis=-1)
    w = np.stack([(1 - fx) * (1 - fy), (1 - fx) * fy, fx * (1 - fy), fx * fy], axis=-1)
    return idx, w


def sample_depths(n_rays: int, near: float, far: float, n_samples: int, rng=None):
    """Stratified depths; bin midpoints when rng is None."""
    if not near < far:
        raise InvalidArgument("need near < far")
    if n_samples < 2:
        raise InvalidArgument("need at least two samples per ray")
    width = (far - near) / n_samples
    u = 0.5 if rng is None else rng.random((n_rays, n_samples))
    t = near + (np.arange(n_samples) + u) * width
    t = np.broadcast_to(t, (n_rays, n_samples))
    return t, np.full((n_rays, n_samples), width)


def _activated(grid: RadianceGrid) -> np.ndarray:
    g2 = grid.resolution ** 2
    return np.concatenate([grid.density().reshape(g2, 1), grid.color().reshape(g2, 3)], axis=1)


def render_rays(grid: RadianceGrid, origins, dirs, near=DEFAULT_NEAR, far=DEFAULT_FAR,
                n_samples=DEFAULT_SAMPLES, rng=None):
    """Composite colors for a batch of rays; returns (colors, cache for backward)."""
    origins = np.asarray(origins, dtype=float).reshape(-1, 2)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 2)
    t, delta = sample_depths(len(origins), near, far, n_samples, rng)
    pts = origins[:, None, :] + t[..., None] * dirs[:, None, :]
    idx, w = _bilinear(grid.resolution, _contract_fast(pts))
    m = idx.shape[0] * idx.shape[1]
    interp = sp.csr_matrix((w.ravel(), idx.ravel(), np.arange(0, 4 * m + 1, 4)),
                           shape=(m, grid.resolution ** 2))
    act = _activated(grid)
    vals = (interp @ act).reshape(idx.shape[0], idx.shape[1], 4)
    sig, col = vals[..., 0], vals[..., 1:]
    tau = sig * delta
    cum = np.cumsum(tau, axis=1)
    wts = np.exp(tau - cum) * -np.expm1(-tau)
    trans = np.exp(-cum[:, -1])
    colors = np.einsum("rn,rnc->rc", wts, col) + trans[:, None] * BACKGROUND
    return colors, RenderCache(act, interp, col, delta, cum, wts, trans, colors)


def render_ray(grid: RadianceGrid, origin, direction, near=DEFAULT_NEAR, far=DEFAULT_FAR,
               n_samples=DEFAULT_SAMPLES, rng=None):
    """Color and residual transmittance along one ray."""
    colors, cache = render_rays(grid, origin, direction, near, far, n_samples, rng)
    return colors[0], float(cache.trans[0])


def transmittance_profile(cache: RenderCache) -> np.ndarray:
    """T_k for every sample, (R, n)."""
    before = np.concatenate([np.zeros((len(cache.cum), 1)), cache.cum[:, :-1]], axis=1)
    return np.exp(-before)


def render_view(grid: RadianceGrid, camera: FlatCamera, divisor=1, near=DEFAULT_NEAR,
                far=DEFAULT_FAR, n_samples=DEFAULT_SAMPLES, rng=None) -> np.ndarray:
    o, d = camera.rays(divisor)
    return render_rays(grid, o, d, near, far, n_samples, rng)[0]


def backward(grid: RadianceGrid, cache: RenderCache, targets, weights=None) -> float:
    """Accumulate d(loss)/d(raw parameters) into the grid; return the loss.

    loss = mean over rays and channels of weight_r * (C_r - target_r)^2.
    """
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    resid = cache.colors - targets
    r = len(resid)
    wr = np.ones(r) if weights is None else np.asarray(weights, dtype=float)
    loss = float(np.sum(wr[:, None] * resid**2) / (3 * r))
    g = (2.0 / (3 * r)) * wr[:, None] * resid          # dL/dC, (R, 3)

    gc = np.einsum("rc,rnc->rn", g, cache.col)
    wgc = cache.wts * gc
    suffix = wgc.sum(1, keepdims=True) - np.cumsum(wgc, axis=1)
    dv = np.empty(cache.col.shape[:2] + (4,))
    dv[..., 0] = cache.delta * (np.exp(-cache.cum) * gc - suffix - (cache.trans * (g @ BACKGROUND))[:, None])
    dv[..., 1:] = cache.wts[..., None] * g[:, None, :]

    # scatter d(loss)/d(activated table) through the bilinear weights
    d_act = cache.interp.T @ dv.reshape(-1, 4)

    # softplus' = 1 - exp(-softplus), sigmoid' = c (1 - c)
    dens, col = cache.act[:, 0], cache.act[:, 1:]
    grid.grad_sigma += (DENSITY_SCALE * -np.expm1(-dens / DENSITY_SCALE) * d_act[:, 0]).reshape(grid.sigma_raw.shape)
    grid.grad_color += (col * (1.0 - col) * d_act[:, 1:]).reshape(grid.color_raw.shape)
    return loss


def adam_step(grid: RadianceGrid, lr: float, b1=0.9, b2=0.999, eps=1e-8) -> RadianceGrid:
    """One bias-corrected Adam update of every raw parameter; clears gradients."""
    grid.step += 1
    t = grid.step
    c1 = lr / (1 - b1**t)
    c2 = 1.0 / math.sqrt(1 - b2**t)
    for p, gr, m, v in ((grid.sigma_raw, grid.grad_sigma, grid.m_sigma, grid.v_sigma),
                        (grid.color_raw, grid.grad_color, grid.m_color, grid.v_color)):
        m *= b1
        m += (1 - b1) * gr
        v *= b2
        gr *= gr
        v += (1 - b2) * gr
        denom = np.sqrt(v)
        denom *= c2
        denom += eps
        p -= c1 * m / denom
    grid.zero_grad()
    return grid


def loss_and_grad(grid, origins, dirs, targets, near=DEFAULT_NEAR, far=DEFAULT_FAR,
                  n_samples=DEFAULT_SAMPLES, weights=None):
    """Deterministic (midpoint) render + backward; convenience for checks."""
    grid.zero_grad()
    _, cache = render_rays(grid, origins, dirs, near, far, n_samples)
    loss = backward(grid, cache, targets, weights)
    return loss, grid.grad_sigma.copy(), grid.grad_color.copy()


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgument(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return -10.0 * math.log10(mse)


# -- synthetic scenes ------------------------------------------------------------

@dataclass
class Scene:
    grid: RadianceGrid
    cameras: list
    frames: list
    seed: int
    blobs: list


@dataclass(frozen=True)
class Blob:
    center: tuple
    radii: tuple
    angle: float
    color: tuple

    def contains(self, pts):
        c, s = math.cos(self.angle), math.sin(self.angle)
        d = pts - np.asarray(self.center)
        u = (d[..., 0] * c + d[..., 1] * s) / self.radii[0]
        v = (-d[..., 0] * s + d[..., 1] * c) / self.radii[1]
        return u * u + v * v <= 1.0


def make_scene(seed: int, n_cameras=240, width=64, fov=math.radians(60), resolution=DEFAULT_RESOLUTION,
               orbit_radius=3.0, sweep=1.5 * math.pi, density=25.0, n_samples=DEFAULT_SAMPLES,
               layout="outward") -> Scene:
    """Random elliptical blobs and a camera path that sweeps `sweep` radians.

    layout "inward": blobs in [-1.5, 1.5]^2 seen from an orbit of radius
    `orbit_radius`, every camera facing the middle.
    layout "outward": blobs on a ring around a small inner circuit, cameras
    facing out, so each new view mostly shows content no earlier view saw.
    """
    from .geometry import uncontract

    rng = np.random.default_rng(seed)
    blobs = []
    if layout not in ("inward", "outward"):
        raise InvalidArgument(f"unknown layout {layout!r}")
    for _ in range(int(rng.integers(5, 16)) * (2 if layout == "outward" else 1)):
        r = rng.uniform(0.15, 0.4, size=2)
        if layout == "inward":
            c = rng.uniform(-1.5 + r.max(), 1.5 - r.max(), size=2)
        else:
            phi, rho = rng.uniform(0, 2 * math.pi), rng.uniform(1.3, 3.0)
            c = rho * np.array([math.cos(phi), math.sin(phi)])
        blobs.append(Blob(tuple(c), tuple(r), float(rng.uniform(0, math.pi)),
                          tuple(rng.uniform(0.05, 0.95, size=3))))
    probe = RadianceGrid.empty(resolution)
    world = uncontract(probe.cell_centers())
    dens = np.full((resolution, resolution), 1e-6)
    col = np.full((resolution, resolution, 3), 0.5)
    taken = np.zeros((resolution, resolution), dtype=bool)
    for b in blobs:
        inside = b.contains(world) & ~taken
        dens[inside] = density
        col[inside] = b.color
        taken |= inside
    grid = RadianceGrid.from_values(dens, col)

    start = rng.uniform(0, 2 * math.pi)
    ang = start + np.linspace(0.0, sweep, n_cameras)
    wobble = 0.25 * np.sin(np.linspace(0, 6 * math.pi, n_cameras) + rng.uniform(0, 2 * math.pi))
    cameras = []
    for a, wb in zip(ang, wobble):
        radial = np.array([math.cos(a), math.sin(a)])
        tangent = np.array([-math.sin(a), math.cos(a)])
        if layout == "inward":
            pos, target = orbit_radius * radial, wb * tangent
        else:
            pos, target = 0.3 * radial, 2.0 * radial + wb * tangent
        cameras.append(FlatCamera.looking_at(pos, target, fov, width))
    frames = [FlatFrame(c, np.clip(render_view(grid, c, n_samples=n_samples), 0.0, 1.0), i)
              for i, c in enumerate(cameras)]
    return Scene(grid, cameras, frames, seed, blobs)


# -- packet conversion -------------------------------------------------------------

def camera_pose(camera: FlatCamera) -> np.ndarray:
    """3x4 [R | t] with the optical axis (camera +z) along the heading in the z=0 plane."""
    hx, hy = camera.heading
    z = np.array([hx, hy, 0.0])
    x = np.array([hy, -hx, 0.0])
    y = np.cross(z, x)
    pose = np.zeros((3, 4))
    pose[:, :3] = np.stack([x, y, z], axis=1)
    pose[:2, 3] = camera.position
    return pose


def frame_to_packet(frame: FlatFrame, timestamp: float = 0.0):
    from .protocol import KeyframePacket

    cam = frame.camera
    fx = (cam.width / 2) / math.tan(cam.fov / 2)
    pix = np.round(np.clip(frame.pixels, 0.0, 1.0) * 255).astype(np.uint8)
    return KeyframePacket(frame.frame_id, float(timestamp), camera_pose(cam),
                          [fx, fx, cam.width / 2, 0.5], cam.width, 1, 3, pix.tobytes())


def packet_to_frame(packet) -> FlatFrame:
    pose = np.asarray(packet.pose, dtype=float)
    h = pose[:2, 2]
    fov = 2 * math.atan((packet.width / 2) / float(packet.intrinsics[0]))
    cam = FlatCamera(pose[:2, 3], h / np.linalg.norm(h), fov, packet.width)
    pix = packet.pixels().reshape(packet.width, packet.channels)[:, :3].astype(float) / 255.0
    return FlatFrame(cam, pix, packet.frame_id)
