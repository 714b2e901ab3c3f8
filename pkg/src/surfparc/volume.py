"""Voxel label images and the nearest cortical label query."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import OrphanVertexError, ValidationError

DEFAULT_SEARCH_CAP_MM = 10.0


@dataclass(frozen=True)
class LabelEntry:
    name: str
    rgb: tuple[int, int, int] = (0, 0, 0)
    is_cortical: bool = False


@dataclass(frozen=True)
class LabelTable:
    """Mapping label ID -> :class:`LabelEntry`. ID 0 is always background."""

    entries: dict[int, LabelEntry] = field(default_factory=dict)

    def __post_init__(self):
        entries = {int(k): v for k, v in self.entries.items()}
        if 0 not in entries:
            entries[0] = LabelEntry("background", (0, 0, 0), False)
        elif entries[0].is_cortical:
            raise ValidationError("label 0 is reserved for background and cannot be cortical")
        for k, e in entries.items():
            if k < 0:
                raise ValidationError(f"negative label ID {k}")
            if len(e.rgb) != 3 or not all(0 <= c <= 255 for c in e.rgb):
                raise ValidationError(f"label {k}: rgb must be three bytes")
        object.__setattr__(self, "entries", dict(sorted(entries.items())))

    def __len__(self):
        return len(self.entries)

    def __contains__(self, label):
        return int(label) in self.entries

    def __getitem__(self, label) -> LabelEntry:
        return self.entries[int(label)]

    @property
    def cortical_ids(self) -> list[int]:
        return [k for k, e in self.entries.items() if e.is_cortical]

    def cortical_mask(self, values: np.ndarray) -> np.ndarray:
        ids = np.array(self.cortical_ids, dtype=np.int64)
        return np.isin(values, ids)

    @classmethod
    def from_ids(cls, cortical, non_cortical=()):
        entries = {int(i): LabelEntry(f"label_{i}", (0, 0, 0), True) for i in cortical}
        entries.update({int(i): LabelEntry(f"label_{i}", (0, 0, 0), False) for i in non_cortical})
        return cls(entries)


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Label IDs on a voxel grid.

    ``data`` has shape ``(nx, ny, nz)``; the linear voxel index used for
    tie-breaking is ``i + nx * (j + ny * k)`` (x fastest). ``affine`` maps the
    homogeneous voxel index ``(i, j, k, 1)`` of a voxel *center* to world mm.
    """

    data: np.ndarray
    affine: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValidationError(f"volume data must be 3D with positive dims, got {data.shape}")
        if not np.issubdtype(data.dtype, np.integer):
            raise ValidationError(f"volume data must be integer, got {data.dtype}")
        if data.size and data.min() < 0:
            raise ValidationError("negative labels in volume")
        affine = np.array(self.affine, dtype=np.float64)
        if affine.shape != (4, 4) or not np.all(np.isfinite(affine)):
            raise ValidationError("affine must be a finite 4x4 matrix")
        lin = affine[:3, :3]
        sv = np.linalg.svd(lin, compute_uv=False)
        if sv[-1] <= 1e-12 * max(sv[0], 1e-300):
            raise ValidationError("affine 3x3 part is singular")
        data = np.array(data)
        data.setflags(write=False)
        affine.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "affine", affine)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.data.shape)

    @cached_property
    def _inverse(self) -> np.ndarray:
        return np.linalg.inv(self.affine[:3, :3])

    @cached_property
    def min_singular_value(self) -> float:
        return float(np.linalg.svd(self.affine[:3, :3], compute_uv=False)[-1])

    def world_to_voxel(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.affine[:3, 3]) @ self._inverse.T

    def voxel_to_world(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.float64)
        a = self.affine
        # elementwise rather than matmul: results must not depend on batch shape
        i, j, k = ijk[..., 0], ijk[..., 1], ijk[..., 2]
        return np.stack([
            a[r, 0] * i + a[r, 1] * j + a[r, 2] * k + a[r, 3] for r in range(3)
        ], axis=-1)

    def linear_index(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.int64)
        nx, ny, _ = self.dims
        return ijk[..., 0] + nx * (ijk[..., 1] + ny * ijk[..., 2])

    def cortical(self, table: LabelTable) -> np.ndarray:
        return table.cortical_mask(self.data)


def world_to_voxel(volume: LabelVolume, point) -> np.ndarray:
    return volume.world_to_voxel(point)


def _sqdist(centers: np.ndarray, p: np.ndarray) -> np.ndarray:
    # written out per component so every caller gets bit-identical values
    dx = centers[..., 0] - p[0]
    dy = centers[..., 1] - p[1]
    dz = centers[..., 2] - p[2]
    return dx * dx + dy * dy + dz * dz


def _shell_offsets(r: int) -> np.ndarray:
    rng = np.arange(-r, r + 1)
    g = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)
    return g[np.max(np.abs(g), axis=1) == r]


class CorticalLabelSearch:
    """Exact nearest cortical voxel search by expanding Chebyshev shells.

    Voxels at shell ``r`` around the voxel containing the query are at least
    ``(r - 0.5) * s_min`` mm away, ``s_min`` being the smallest singular value
    of the affine's linear part. The search stops once that bound exceeds the
    best distance found so far (or the cap), so the answer matches a brute
    force scan over every cortical voxel center.
    """

    def __init__(self, volume: LabelVolume, table: LabelTable, search_cap: float = DEFAULT_SEARCH_CAP_MM):
        if not table.cortical_ids:
            raise ValidationError("label table has no cortical entries")
        if search_cap <= 0:
            raise ValidationError("search cap must be positive")
        self.volume = volume
        self.table = table
        self.search_cap = float(search_cap)
        self.mask = volume.cortical(table)
        self._smin = volume.min_singular_value
        self._offsets = {}

    def _offsets_for(self, r):
        if r not in self._offsets:
            self._offsets[r] = _shell_offsets(r)
        return self._offsets[r]

    def query(self, point) -> tuple[int, float] | None:
        """Return ``(label, distance_mm)`` or None when nothing lies within the cap."""
        p = np.asarray(point, dtype=np.float64)
        vol = self.volume
        dims = np.array(vol.dims)
        center = np.floor(vol.world_to_voxel(p) + 0.5).astype(np.int64)
        cap2 = self.search_cap * self.search_cap
        best = None  # (d2, label, linear index)
        # beyond this radius every shell lies entirely outside the grid
        r_max = int(np.max(np.maximum(np.abs(center), np.abs(dims - 1 - center))))
        r = 0
        while True:
            bound = (r - 0.5) * self._smin
            if bound > 0:
                b2 = bound * bound
                # small slack keeps exact distance ties on the far shell
                if b2 > cap2 or (best is not None and b2 > best[0] * (1 + 1e-12)):
                    break
            if r > r_max:
                break
            ijk = center + self._offsets_for(r)
            inside = np.all((ijk >= 0) & (ijk < dims), axis=1)
            ijk = ijk[inside]
            if len(ijk):
                hit = self.mask[ijk[:, 0], ijk[:, 1], ijk[:, 2]]
                ijk = ijk[hit]
            if len(ijk):
                d2 = _sqdist(vol.voxel_to_world(ijk), p)
                labs = vol.data[ijk[:, 0], ijk[:, 1], ijk[:, 2]].astype(np.int64)
                lin = vol.linear_index(ijk)
                k = np.lexsort((lin, labs, d2))[0]
                cand = (float(d2[k]), int(labs[k]), int(lin[k]))
                if best is None or cand < best:
                    best = cand
            r += 1
        if best is None or best[0] > cap2:
            return None
        return best[1], float(np.sqrt(best[0]))

    def labels_for(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out = np.zeros(len(points), dtype=np.int64)
        orphans = []
        for i, p in enumerate(points):
            hit = self.query(p)
            if hit is None:
                orphans.append(i)
            else:
                out[i] = hit[0]
        if orphans:
            raise OrphanVertexError(
                f"{len(orphans)} point(s) have no cortical voxel within {self.search_cap} mm",
                orphans,
            )
        return out


def nearest_cortical_label(volume: LabelVolume, table: LabelTable, point,
                           search_cap: float = DEFAULT_SEARCH_CAP_MM) -> int:
    """Label of the cortical voxel whose center is nearest to ``point``.

    Ties go to the smaller label ID, then the smaller linear voxel index.
    """
    return int(CorticalLabelSearch(volume, table, search_cap).labels_for([point])[0])
