"""Deterministic synthetic RGB-D scenes with exact ground truth.

A scene is a set of flat-colored cuboids and spheres in front of a pinhole
camera at the sensor origin. Object surfaces are sampled densely enough that
each object forms exactly one cluster at the default linkage cutoff, objects
are kept apart in 3D and in the image, and the image is rendered by splatting
the (optionally noisy) points over a gray background.

Random numbers come from :class:`Xoshiro256StarStar`, a fixed generator:
xoshiro256** with 256 interleaved lanes whose 4x64-bit states are filled from
one splitmix64 stream seeded with the scene seed. Changing it changes every
scene, so it must stay fixed within a major version.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import Correspondence, ProjectionMatrix, dump_correspondences, load_correspondences, solve_projection_dlt
from .classifier import DEFAULT_PALETTE
from .clustering import DEFAULT_TAU
from .evaluation import GroundTruthBox, dump_frames, load_frames
from .exceptions import ConfigError, PlacementError
from .pointcloud_io import BBox2D, Image, PointCloud, format_pcd, parse_pcd, read_image, write_ppm
from .proposal import hull_box

__all__ = [
    "Xoshiro256StarStar",
    "SceneSpec",
    "SceneObject",
    "Scene",
    "generate_scene",
    "write_scene",
    "read_scene",
    "suite_specs",
    "two_blob_cloud",
    "BACKGROUND",
    "SCENE_FILES",
]

_MASK = (1 << 64) - 1
BACKGROUND = (200, 200, 200)
FLOOR_COLOR = (120, 120, 120)
SCENE_FILES = ("cloud.pcd", "image.ppm", "calib.json", "gt.json")
MAX_ATTEMPTS = 1000


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


class Xoshiro256StarStar:
    """xoshiro256** over ``LANES`` interleaved lanes, seeded through splitmix64.

    Output order: each step advances all lanes once and emits their outputs in
    lane order. Values not consumed by one call are kept for the next.
    """

    LANES = 256

    def __init__(self, seed: int):
        sm = int(seed) & _MASK
        state = np.empty((4, self.LANES), dtype=np.uint64)
        for lane in range(self.LANES):
            for k in range(4):
                sm, out = _splitmix64(sm)
                state[k, lane] = out
        self._s = state
        self._buf = np.empty(0, dtype=np.uint64)

    def _steps(self, count: int) -> np.ndarray:
        s0, s1, s2, s3 = (row.copy() for row in self._s)
        out = np.empty((count, self.LANES), dtype=np.uint64)
        five, nine = np.uint64(5), np.uint64(9)
        for k in range(count):
            out[k] = _rotl(s1 * five, 7) * nine
            t = s1 << np.uint64(17)
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
        self._s = np.stack([s0, s1, s2, s3])
        return out.reshape(-1)

    def next_u64(self, n: int) -> np.ndarray:
        if len(self._buf) < n:
            need = n - len(self._buf)
            fresh = self._steps(-(-need // self.LANES))
            self._buf = np.concatenate([self._buf, fresh])
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def random(self, n: int | None = None):
        """Uniform doubles in [0, 1) from the top 53 bits."""
        v = (self.next_u64(1 if n is None else n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return float(v[0]) if n is None else v

    def uniform(self, low: float, high: float, n: int | None = None):
        u = self.random(n)
        return low + (high - low) * u

    def choice_index(self, k: int) -> int:
        return min(int(self.random() * k), k - 1)

    def normal(self, n: int) -> np.ndarray:
        """Standard normal draws (Box-Muller, both outputs used)."""
        m = -(-n // 2)
        u = self.random(2 * m).reshape(m, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)
        return z[:n]


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of one synthetic scene; the scene is a pure function of them."""

    seed: int = 0
    n_objects: int = 4
    img_w: int = 320
    img_h: int = 240
    focal_px: float = 250.0
    kinds: tuple[str, ...] = ("cuboid", "sphere")
    size_range: tuple[float, float] = (0.15, 0.25)
    depth_range: tuple[float, float] = (1.0, 4.0)
    palette: dict = field(default_factory=lambda: dict(DEFAULT_PALETTE))
    noise_sigma: float = 0.0
    floor: bool = False
    tau: float = DEFAULT_TAU
    spacing: float = 0.008
    border_px: int = 4
    gap_px: int = 2

    def __post_init__(self):
        if not isinstance(self.n_objects, int) or self.n_objects < 1:
            raise ConfigError("n_objects must be a positive integer")
        if self.img_w < 1 or self.img_h < 1 or not self.focal_px > 0:
            raise ConfigError("image size and focal length must be positive")
        if not self.kinds or any(k not in ("cuboid", "sphere") for k in self.kinds):
            raise ConfigError("kinds must be a non-empty subset of {'cuboid', 'sphere'}")
        lo, hi = self.size_range
        if not 0 < lo <= hi:
            raise ConfigError("size_range must be positive and ordered")
        if not self.palette:
            raise ConfigError("palette must be non-empty")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not 0 < self.spacing <= self.tau / 3:
            raise ConfigError("spacing must be positive and at most tau / 3")


@dataclass(frozen=True)
class SceneObject:
    kind: str
    label: str
    center: tuple[float, float, float]
    dims: tuple[float, float, float]
    yaw: float


@dataclass(eq=False)
class Scene:
    cloud: PointCloud
    image: Image
    projection: ProjectionMatrix
    gt: list[GroundTruthBox]
    correspondences: list[Correspondence]
    objects: list[SceneObject] = field(default_factory=list)
    frame: str = "scene"


def _camera(spec: SceneSpec) -> ProjectionMatrix:
    return ProjectionMatrix.from_intrinsics(spec.focal_px, spec.focal_px, spec.img_w / 2.0, spec.img_h / 2.0)


def _yaw_matrix(yaw):
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _cuboid_surface(dims, spacing):
    counts = [max(int(math.ceil(d / spacing)), 1) + 1 for d in dims]
    axes = [np.linspace(-d / 2, d / 2, n) for d, n in zip(dims, counts)]
    ii, jj, kk = np.meshgrid(*[np.arange(n) for n in counts], indexing="ij")
    shell = (
        (ii == 0) | (ii == counts[0] - 1) | (jj == 0) | (jj == counts[1] - 1) | (kk == 0) | (kk == counts[2] - 1)
    )
    return np.stack([axes[0][ii[shell]], axes[1][jj[shell]], axes[2][kk[shell]]], axis=1)


def _sphere_surface(radius, spacing):
    n = max(int(math.ceil(4.0 * math.pi * radius * radius / (spacing * spacing))), 8)
    k = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * k / n)
    azim = math.pi * (1.0 + math.sqrt(5.0)) * k
    return radius * np.stack([np.sin(polar) * np.cos(azim), np.cos(polar), np.sin(polar) * np.sin(azim)], axis=1)


def _surface(obj: SceneObject, spacing) -> np.ndarray:
    if obj.kind == "sphere":
        local = _sphere_surface(obj.dims[0] / 2.0, spacing)
    else:
        local = _cuboid_surface(obj.dims, spacing) @ _yaw_matrix(obj.yaw).T
    return local + np.asarray(obj.center)


def _bounds(obj: SceneObject):
    """Axis-aligned 3D bounds of the object."""
    if obj.kind == "sphere":
        r = obj.dims[0] / 2.0
        half = np.array([r, r, r])
    else:
        corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * (
            np.asarray(obj.dims) / 2.0
        )
        half = np.abs(corners @ _yaw_matrix(obj.yaw).T).max(axis=0)
    c = np.asarray(obj.center)
    return c - half, c + half


def _aabb_gap(a, b):
    d = np.maximum(0.0, np.maximum(a[0] - b[1], b[0] - a[1]))
    return float(np.sqrt((d * d).sum()))


def _box_corners(lo, hi):
    return np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


def _quantize(a: np.ndarray) -> np.ndarray:
    """Round to 9 significant digits, the precision scene files are written with."""
    flat = a.reshape(-1)
    return np.array([float(f"{v:.9g}") for v in flat.tolist()], dtype=np.float64).reshape(a.shape)


def _place_objects(spec: SceneSpec, rng: Xoshiro256StarStar, P: ProjectionMatrix):
    labels = sorted(spec.palette)
    f, cx, cy = spec.focal_px, spec.img_w / 2.0, spec.img_h / 2.0
    placed, bounds, boxes = [], [], []
    for k in range(spec.n_objects):
        for _ in range(MAX_ATTEMPTS):
            kind = spec.kinds[rng.choice_index(len(spec.kinds))]
            dims = tuple(rng.uniform(*spec.size_range) for _ in range(3))
            if kind == "sphere":
                dims = (dims[0],) * 3
            label = labels[rng.choice_index(len(labels))]
            yaw = rng.uniform(0.0, math.pi / 2) if kind == "cuboid" else 0.0
            reach = 0.5 * math.sqrt(sum(d * d for d in dims))
            z = rng.uniform(spec.depth_range[0] + reach, spec.depth_range[1] - reach)
            u = rng.uniform(spec.border_px, spec.img_w - spec.border_px)
            v = rng.uniform(spec.border_px, spec.img_h - spec.border_px)
            obj = SceneObject(kind, label, ((u - cx) * z / f, (v - cy) * z / f, z), dims, yaw)

            lo, hi = _bounds(obj)
            if any(_aabb_gap((lo, hi), b) < 2.0 * spec.tau for b in bounds):
                continue
            # conservative image footprint: projected corners of the 3D bounds
            uv, w = P.project(_box_corners(lo, hi))
            if not (w > 1e-6).all():
                continue
            u0, v0 = uv.min(axis=0)
            u1, v1 = uv.max(axis=0)
            b = spec.border_px
            if u0 < b or v0 < b or u1 > spec.img_w - b or v1 > spec.img_h - b:
                continue
            g = spec.gap_px
            if any(u0 - g < q[2] and q[0] < u1 + g and v0 - g < q[3] and q[1] < v1 + g for q in boxes):
                continue
            placed.append(obj)
            bounds.append((lo, hi))
            boxes.append((u0, v0, u1, v1))
            break
        else:
            raise PlacementError(
                f"could not place object {k + 1} of {spec.n_objects} after {MAX_ATTEMPTS} attempts"
            )
    return placed


def _render(spec: SceneSpec, P: ProjectionMatrix, points: np.ndarray, colors: np.ndarray) -> Image:
    """Splat each point as a 2x2 square; the nearest point wins each pixel."""
    pixels = np.empty((spec.img_h, spec.img_w, 3), dtype=np.uint8)
    pixels[...] = BACKGROUND
    uv, w = P.project(points)
    front = np.flatnonzero(w > 1e-9)
    if front.size == 0:
        return Image(pixels)
    x0 = np.floor(uv[front, 0] + 0.5).astype(np.int64) - 1
    y0 = np.floor(uv[front, 1] + 0.5).astype(np.int64) - 1
    xs = np.concatenate([x0, x0 + 1, x0, x0 + 1])
    ys = np.concatenate([y0, y0, y0 + 1, y0 + 1])
    src = np.tile(front, 4)
    ok = (xs >= 0) & (xs < spec.img_w) & (ys >= 0) & (ys < spec.img_h)
    xs, ys, src = xs[ok], ys[ok], src[ok]
    pix = ys * spec.img_w + xs
    order = np.lexsort((src, w[src], pix))
    pix, src = pix[order], src[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    flat = pixels.reshape(-1, 3)
    flat[pix[first]] = colors[src[first]]
    return Image(pixels)


_ANCHORS = np.array([[-0.6, -0.4, 1.5], [0.6, -0.4, 2.5], [-0.6, 0.4, 3.5], [0.6, 0.4, 2.0]])


def generate_scene(spec: SceneSpec, frame: str | None = None) -> Scene:
    """Build the scene described by ``spec``; identical specs give identical scenes."""
    rng = Xoshiro256StarStar(spec.seed)
    P = _camera(spec)
    objects = _place_objects(spec, rng, P)

    surfaces = [_surface(o, spec.spacing) for o in objects]
    gt = [GroundTruthBox(hull_box(P.project(s)[0], spec.img_w, spec.img_h), o.label) for s, o in zip(surfaces, objects)]
    colors = [np.tile(np.array(spec.palette[o.label], dtype=np.uint8), (len(s), 1)) for s, o in zip(surfaces, objects)]

    if spec.floor:
        lo_y = max(_bounds(o)[1][1] for o in objects) + 2.0 * spec.tau
        z0, z1 = spec.depth_range
        half_x = (spec.img_w / 2.0) / spec.focal_px * z1
        step = spec.tau / 3.0
        xs = np.arange(-half_x, half_x + step / 2, step)
        zs = np.arange(z0, z1 + step / 2, step)
        gx, gz = np.meshgrid(xs, zs, indexing="ij")
        floor = np.stack([gx.ravel(), np.full(gx.size, lo_y), gz.ravel()], axis=1)
        surfaces.append(floor)
        colors.append(np.tile(np.array(FLOOR_COLOR, dtype=np.uint8), (len(floor), 1)))

    points = np.concatenate(surfaces)
    if spec.noise_sigma > 0:
        points = points + spec.noise_sigma * rng.normal(points.size).reshape(points.shape)
    points = _quantize(points)
    color_arr = np.concatenate(colors)
    cloud = PointCloud(points, color_arr)
    image = _render(spec, P, cloud.points, color_arr)

    world = []
    for o in objects:
        lo, hi = _bounds(o)
        world.extend([lo, hi])
    lo, hi = _bounds(objects[0])
    world.extend(c for c in _box_corners(lo, hi)[1:-1])
    world = np.array(world[:8])
    world = np.vstack([world, _ANCHORS])
    pixels = P.project(world)[0]
    corr = [Correspondence(tuple(X), tuple(x)) for X, x in zip(world.tolist(), pixels.tolist())]
    return Scene(cloud, image, P, gt, corr, objects, frame or f"scene_{spec.seed:04d}")


def write_scene(scene: Scene, directory, force: bool = False) -> list[Path]:
    """Write cloud.pcd, image.ppm, calib.json and gt.json into ``directory``.

    Existing files are only replaced when ``force`` is set.
    """
    if not str(directory):
        raise FileNotFoundError("empty scene directory path")
    d = Path(directory)
    targets = [d / name for name in SCENE_FILES]
    if not force:
        existing = [p.name for p in targets if p.exists()]
        if existing:
            raise FileExistsError(f"{d}: would overwrite {', '.join(existing)} (use force)")
    d.mkdir(parents=True, exist_ok=True)
    payloads = [
        format_pcd(scene.cloud, precision=9),
        write_ppm(scene.image),
        dump_correspondences(scene.correspondences).encode(),
        dump_frames([(scene.frame, scene.gt)]).encode(),
    ]
    for path, data in zip(targets, payloads):
        path.write_bytes(data)
    return targets


def read_scene(directory) -> Scene:
    """Load a scene written by :func:`write_scene`; the projection is re-solved from calib.json."""
    d = Path(directory)
    cloud = parse_pcd((d / "cloud.pcd").read_bytes())
    image = read_image(d / "image.ppm")
    corr = load_correspondences(d / "calib.json")
    ((frame, gt),) = load_frames(d / "gt.json", with_prob=False)
    return Scene(cloud, image, solve_projection_dlt(corr), gt, corr, [], frame)


def suite_specs(seeds, objects=(3, 8), noise_sigma=0.0, **overrides) -> list[SceneSpec]:
    """Specs for a scene suite; object counts cycle through ``objects`` (inclusive range)."""
    lo, hi = (objects, objects) if isinstance(objects, int) else objects
    seeds = list(seeds)
    return [
        SceneSpec(seed=s, n_objects=lo + i % (hi - lo + 1), noise_sigma=noise_sigma, **overrides)
        for i, s in enumerate(seeds)
    ]


def two_blob_cloud(n_points: int = 100_000, seed: int = 0, spacing: float = DEFAULT_TAU / 3, noise_sigma: float = DEFAULT_TAU / 12) -> PointCloud:
    """Two separated spherical surfaces sampled at ``spacing``, ``n_points`` in total."""
    rng = Xoshiro256StarStar(seed)
    half = n_points // 2
    radius = math.sqrt(half * spacing * spacing / (4.0 * math.pi))
    parts = []
    for k, n in enumerate((half, n_points - half)):
        kk = np.arange(n) + 0.5
        polar = np.arccos(1.0 - 2.0 * kk / n)
        azim = math.pi * (1.0 + math.sqrt(5.0)) * kk
        s = radius * np.stack([np.sin(polar) * np.cos(azim), np.cos(polar), np.sin(polar) * np.sin(azim)], axis=1)
        s += np.array([(2 * k - 1) * (radius + 0.5), 0.0, 2.0 * radius + 2.0])
        parts.append(s)
    pts = np.concatenate(parts)
    if noise_sigma > 0:
        pts = pts + noise_sigma * rng.normal(pts.size).reshape(pts.shape)
    return PointCloud(pts)
