"""Synthetic nested-sphere phantoms with analytic sector labels.

The phantom is defined in its own object frame: three concentric (optionally
bumped) spheres whose radial profile is ``r * bump(u)`` for unit direction
``u``. Sector labels depend only on the direction, so the label of any point
in space is closed form and every pipeline stage can be checked against it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .mesh import TriangleMesh, label_components
from .propagate import SurfaceSet
from .transform import RigidTransform
from .volume import LabelEntry, LabelTable, LabelVolume

MAX_SUBDIVISIONS = 7
POLAR_CAP_DEG = 20.0
DEFAULT_MAX_VOXELS = 64_000_000

# Fixed pseudo-random folds. Many narrow bumps break every rotational
# symmetry so rigid registration has a unique optimum.
_BUMP_RNG = np.random.default_rng(12345)
_BUMP_CENTERS = _BUMP_RNG.normal(size=(32, 3))
_BUMP_HEIGHTS = _BUMP_RNG.uniform(-1.0, 1.0, 32)
_BUMP_WIDTH = 0.3
DEFAULT_BUMP_AMPLITUDE = 0.2
del _BUMP_RNG


def _bump_bounds(n: int = 200_000) -> tuple[float, float]:
    # dense Fibonacci sampling plus a Lipschitz margin bounds the summed deviation
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    phi = np.pi * (1 + 5 ** 0.5) * k
    rho = np.sqrt(1 - z * z)
    u = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    c = _BUMP_CENTERS / np.linalg.norm(_BUMP_CENTERS, axis=1)[:, None]
    dev = np.exp(-((u[:, None, :] - c[None]) ** 2).sum(axis=2) / _BUMP_WIDTH ** 2) @ _BUMP_HEIGHTS
    lipschitz = np.abs(_BUMP_HEIGHTS).sum() * np.sqrt(2 / np.e) / _BUMP_WIDTH
    slack = lipschitz * 2 * np.sqrt(4 / n)
    return float(dev.max() + slack), float(-dev.min() + slack)


_BUMP_UP, _BUMP_DOWN = _bump_bounds()


def make_icosphere(radius: float = 1.0, subdivisions: int = 0) -> TriangleMesh:
    """Subdivided icosahedron projected onto a sphere, outward CCW winding.

    Two vertices sit on the poles (0, 0, +-radius). Vertex count is
    ``10 * 4**subdivisions + 2``.
    """
    if not 0 <= subdivisions <= MAX_SUBDIVISIONS:
        raise ValidationError(f"subdivisions must be in [0, {MAX_SUBDIVISIONS}]")
    if radius <= 0:
        raise ValidationError("radius must be positive")
    z = 1.0 / math.sqrt(5.0)
    rho = 2.0 * z
    verts = [(0.0, 0.0, 1.0)]
    verts += [(rho * math.cos(2 * math.pi * k / 5), rho * math.sin(2 * math.pi * k / 5), z)
              for k in range(5)]
    verts += [(rho * math.cos(2 * math.pi * (k + 0.5) / 5), rho * math.sin(2 * math.pi * (k + 0.5) / 5), -z)
              for k in range(5)]
    verts += [(0.0, 0.0, -1.0)]
    faces = []
    for k in range(5):
        a, b = 1 + k, 1 + (k + 1) % 5
        c, d = 6 + k, 6 + (k + 1) % 5
        faces.append((0, a, b))
        faces.append((a, c, b))
        faces.append((b, c, d))
        faces.append((11, d, c))
    v = np.array(verts)
    f = np.array(faces, dtype=np.int64)

    for _ in range(subdivisions):
        v, f = _subdivide(v, f)
    v = v / np.linalg.norm(v, axis=1)[:, None] * radius
    return TriangleMesh(v, f)


def _subdivide(v, f):
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges.sort(axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    mid = v[uniq[:, 0]] + v[uniq[:, 1]]
    mid /= np.linalg.norm(mid, axis=1)[:, None]
    n, m = len(v), len(f)
    ab, bc, ca = inv[:m] + n, inv[m:2 * m] + n, inv[2 * m:] + n
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    nf = np.concatenate([
        np.stack([a, ab, ca], 1),
        np.stack([ab, b, bc], 1),
        np.stack([ca, bc, c], 1),
        np.stack([ab, bc, ca], 1),
    ])
    return np.vstack([v / np.linalg.norm(v, axis=1)[:, None], mid]), nf


def _sector_layout(n_sectors: int) -> tuple[int, bool]:
    """(longitude bands, split at equator)."""
    if n_sectors < 1:
        raise ValidationError("n_sectors must be >= 1")
    if n_sectors % 2 == 0:
        return n_sectors // 2, True
    return n_sectors, False


def _polar_angle(p):
    return np.arctan2(np.hypot(p[:, 0], p[:, 1]), np.abs(p[:, 2]))


def sector_of(points, n_sectors: int) -> np.ndarray:
    """Analytic sector label (1-based) of each point, by direction from the origin.

    Even counts split ``n_sectors // 2`` equal longitude bands at the equator
    (northern hemisphere ``z >= 0`` first); odd counts use ``n_sectors`` bands.
    Directions within ``POLAR_CAP_DEG`` of either pole belong to the first band
    of their hemisphere, which keeps wedges from thinning out to nothing.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    bands, split = _sector_layout(n_sectors)
    lon = np.mod(np.arctan2(p[:, 1], p[:, 0]), 2 * np.pi)
    band = np.minimum((lon / (2 * np.pi) * bands).astype(np.int64), bands - 1)
    band[_polar_angle(p) < math.radians(POLAR_CAP_DEG)] = 0
    if split:
        band = band + np.where(p[:, 2] >= 0, 0, bands)
    return band + 1


def sector_border_distance(points, n_sectors: int) -> np.ndarray:
    """Lower bound on the Euclidean distance to the nearest sector border."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    bands, split = _sector_layout(n_sectors)
    d = np.full(len(p), np.inf)
    if bands > 1:
        for k in range(bands):
            phi = 2 * np.pi * k / bands
            d = np.minimum(d, np.abs(-np.sin(phi) * p[:, 0] + np.cos(phi) * p[:, 1]))
    if split:
        d = np.minimum(d, np.abs(p[:, 2]))
    if bands > 1:
        gap = np.abs(_polar_angle(p) - math.radians(POLAR_CAP_DEG))
        rho = np.linalg.norm(p, axis=1)
        d = np.minimum(d, np.where(gap < np.pi / 2, rho * np.sin(gap), rho))
    return d


def sector_labels(mesh: TriangleMesh, n_sectors: int) -> np.ndarray:
    """Sector label of every vertex of a mesh centred on the origin.

    Raises ValidationError when the mesh is too coarse for every sector to
    come out as a single connected patch.
    """
    if n_sectors > mesh.n_vertices:
        raise ValidationError(f"{n_sectors} sectors exceed {mesh.n_vertices} vertices")
    labels = sector_of(mesh.vertices, n_sectors)
    comps = label_components(mesh, labels)
    split = [lab for lab, c in comps.items() if len(c) > 1]
    if split or len(comps) != n_sectors:
        raise ValidationError(
            f"mesh too coarse for {n_sectors} connected sectors", labels=split
        )
    return labels


def bump_profile(directions, amplitude: float) -> np.ndarray:
    """Radial scale factor for unit directions; 1 everywhere when amplitude is 0."""
    u = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if amplitude == 0:
        return np.ones(len(u))
    centers = _BUMP_CENTERS / np.linalg.norm(_BUMP_CENTERS, axis=1)[:, None]
    d2 = np.sum((u[:, None, :] - centers[None]) ** 2, axis=2)
    return 1.0 + amplitude * np.sum(_BUMP_HEIGHTS * np.exp(-d2 / _BUMP_WIDTH ** 2), axis=1)


@dataclass(frozen=True, eq=False)
class PhantomSpec:
    radii: tuple[float, float, float] = (20.0, 23.0, 26.0)
    subdivisions: int = 4
    n_sectors: int = 8
    voxel_size: tuple[float, float, float] = (1.0, 1.0, 1.2)
    noise_amplitude: float = 0.0
    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    bump_amplitude: float = 0.0
    margin: float = 3.0
    max_voxels: int = DEFAULT_MAX_VOXELS

    def __post_init__(self):
        r = tuple(float(x) for x in self.radii)
        if len(r) != 3 or not 0 < r[0] < r[1] < r[2]:
            raise ValidationError("radii must be positive and strictly increasing")
        vs = tuple(float(x) for x in self.voxel_size)
        if len(vs) != 3 or min(vs) <= 0:
            raise ValidationError("voxel sizes must be positive")
        if self.n_sectors < 1:
            raise ValidationError("n_sectors must be >= 1")
        if self.noise_amplitude < 0:
            raise ValidationError("noise amplitude must be non-negative")
        if self.noise_amplitude >= (r[1] - r[0]) / 2:
            raise ValidationError("noise amplitude must stay below half the shell spacing")
        if not 0 <= self.bump_amplitude < 0.5:
            raise ValidationError("bump amplitude must be in [0, 0.5)")
        if self.bump_amplitude * _BUMP_DOWN >= 0.9:
            raise ValidationError("bump amplitude would collapse the surface")
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "voxel_size", vs)

    @property
    def white_matter_label(self) -> int:
        return self.n_sectors + 1

    def label_table(self) -> LabelTable:
        entries = {}
        for k in range(1, self.n_sectors + 1):
            hue = (k - 1) / self.n_sectors
            rgb = tuple(int(round(255 * c)) for c in _hsv_to_rgb(hue))
            entries[k] = LabelEntry(f"sector_{k}", rgb, True)
        entries[self.white_matter_label] = LabelEntry("white_matter", (245, 245, 245), False)
        return LabelTable(entries)


def _hsv_to_rgb(h):
    import colorsys
    return colorsys.hsv_to_rgb(h, 0.75, 0.9)


@dataclass(frozen=True, eq=False)
class Phantom:
    surfaces: SurfaceSet
    volume: LabelVolume
    table: LabelTable
    truth_labels: np.ndarray
    pose: RigidTransform


def voxelize_labels(spec: PhantomSpec, pose: RigidTransform | None = None) -> LabelVolume:
    """Label volume on a world-axis-aligned grid for a phantom placed at ``pose``.

    Voxel centers inside the (bumped) inner sphere get the white-matter label,
    centers in the gray-matter shell get the sector label of their direction in
    the object frame, the rest are background.
    """
    pose = spec.pose if pose is None else pose
    vs = np.array(spec.voxel_size)
    extent = spec.radii[2] * (1.0 + spec.bump_amplitude * _BUMP_UP) + spec.noise_amplitude + spec.margin
    lo = np.floor((pose.translation - extent) / vs)
    hi = np.ceil((pose.translation + extent) / vs)
    dims = (hi - lo + 1).astype(np.int64)
    if int(np.prod(dims)) > spec.max_voxels:
        raise ValidationError(f"volume of {int(np.prod(dims))} voxels exceeds cap {spec.max_voxels}")
    affine = np.diag([vs[0], vs[1], vs[2], 1.0])
    affine[:3, 3] = lo * vs
    ii, jj, kk = np.meshgrid(*(np.arange(d) for d in dims), indexing="ij")
    world = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3) * vs + affine[:3, 3]
    obj = pose.inverse().apply(world)
    rad = np.linalg.norm(obj, axis=1)
    u = obj / np.where(rad > 0, rad, 1.0)[:, None]
    scale = bump_profile(u, spec.bump_amplitude)
    r_in, _, r_out = spec.radii
    data = np.zeros(len(obj), dtype=np.int32)
    data[rad < r_in * scale] = spec.white_matter_label
    gm = (rad >= r_in * scale) & (rad <= r_out * scale)
    data[gm] = sector_of(obj[gm], spec.n_sectors)
    return LabelVolume(data.reshape(tuple(dims)), affine)


def make_phantom(spec: PhantomSpec, pose: RigidTransform | None = None,
                 rng: np.random.Generator | None = None) -> Phantom:
    pose = spec.pose if pose is None else pose
    unit = make_icosphere(1.0, spec.subdivisions)
    u = unit.vertices
    scale = bump_profile(u, spec.bump_amplitude)
    if spec.noise_amplitude > 0:
        if rng is None:
            raise ValidationError("noise requires a random generator")
        noise = rng.uniform(-spec.noise_amplitude, spec.noise_amplitude, len(u))
    else:
        noise = np.zeros(len(u))
    meshes = []
    for r in spec.radii:
        obj = u * (r * scale + noise)[:, None]
        meshes.append(TriangleMesh(pose.apply(obj), unit.faces))
    truth = sector_of(u, spec.n_sectors)
    return Phantom(SurfaceSet(*meshes), voxelize_labels(spec, pose), spec.label_table(), truth, pose)


def make_phantom_pair(spec: PhantomSpec, pose_delta: RigidTransform | None = None,
                      seed: int = 0) -> tuple[Phantom, Phantom]:
    """Scan at ``spec.pose`` and rescan at ``pose_delta`` applied after it.

    Radial vertex noise is drawn independently for the two phantoms from one
    seeded generator, so the pair is reproducible from ``(spec, seed)``.
    """
    pose_delta = RigidTransform.identity() if pose_delta is None else pose_delta
    rng = np.random.default_rng(seed)
    scan = make_phantom(spec, spec.pose, rng)
    rescan = make_phantom(spec, pose_delta.compose(spec.pose), rng)
    return scan, rescan


def with_pose(spec: PhantomSpec, pose: RigidTransform) -> PhantomSpec:
    return replace(spec, pose=pose)
