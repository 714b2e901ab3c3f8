import numpy as np
import pytest

from surfparc.errors import ValidationError
from surfparc.mesh import label_components
from surfparc.parcellate import vsbsp
from surfparc.phantom import (PhantomSpec, bump_profile, make_icosphere, make_phantom,
                              make_phantom_pair, sector_border_distance, sector_labels,
                              sector_of, voxelize_labels)
from surfparc.transform import RigidTransform


class TestIcosphere:
    def test_counts(self):
        m = make_icosphere(1.0, 0)
        assert (m.n_vertices, m.n_faces) == (12, 20)
        assert make_icosphere(1.0, 2).n_vertices == 162
        for s in range(5):
            assert make_icosphere(1.0, s).n_vertices == 10 * 4 ** s + 2

    def test_on_sphere(self):
        m = make_icosphere(7.5, 3)
        assert np.max(np.abs(np.linalg.norm(m.vertices, axis=1) - 7.5)) < 1e-12

    def test_outward_winding(self):
        m = make_icosphere(1.0, 2)
        v = m.vertices[m.faces]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
        assert np.all(np.sum(n * v.mean(axis=1), axis=1) > 0)

    def test_subdivision_guard(self):
        with pytest.raises(ValidationError):
            make_icosphere(1.0, 8)


class TestSectors:
    def test_one_sector(self, ico2):
        assert np.all(sector_labels(ico2, 1) == 1)

    def test_four_sectors_occ(self, ico2):
        comps = label_components(ico2, sector_labels(ico2, 4))
        assert sorted(comps) == [1, 2, 3, 4] and all(len(c) == 1 for c in comps.values())

    def test_analytic_label(self):
        lat = np.radians(30)
        lon = np.radians(10)
        p = np.array([[np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)]])
        assert sector_of(p, 4).tolist() == [1]
        assert sector_of(p * [1, 1, -1], 4).tolist() == [3]
        assert sector_of(p * [-1, -1, 1], 4).tolist() == [2]

    def test_too_many(self, ico2):
        with pytest.raises(ValidationError):
            sector_labels(make_icosphere(1.0, 0), 13)

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 8, 12, 16])
    def test_always_occ(self, n):
        m = make_icosphere(1.0, 3)
        comps = label_components(m, sector_labels(m, n))
        assert len(comps) == n and all(len(c) == 1 for c in comps.values())

    def test_border_distance_is_lower_bound(self, rng):
        u = rng.normal(size=(4000, 3))
        u /= np.linalg.norm(u, axis=1)[:, None]
        d = sector_border_distance(u, 8)
        lab = sector_of(u, 8)
        # moving any point by less than its bound never changes its sector
        step = rng.normal(size=u.shape)
        step /= np.linalg.norm(step, axis=1)[:, None]
        moved = u + step * (0.999 * d)[:, None]
        assert np.array_equal(sector_of(moved, 8), lab)


class TestVoxelize:
    spec = PhantomSpec(subdivisions=2)

    def test_shell_and_white_matter(self):
        vol = voxelize_labels(self.spec)
        table = self.spec.label_table()
        r_mid = (self.spec.radii[0] + self.spec.radii[2]) / 2
        lat, lon = np.radians(30), np.radians(2 * 90 + 30)  # band 2 of 4, north -> sector 3
        p = r_mid * np.array([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])
        ijk = np.round(vol.world_to_voxel(p)).astype(int)
        centre = vol.voxel_to_world(ijk)
        assert vol.data[tuple(ijk)] == sector_of(centre, 8)[0] == 3
        ijk = np.round(vol.world_to_voxel([self.spec.radii[0] / 2, 0, 0])).astype(int)
        lab = vol.data[tuple(ijk)]
        assert lab == self.spec.white_matter_label and not table[lab].is_cortical

    def test_voxel_size_in_affine(self):
        vol = voxelize_labels(self.spec)
        assert np.allclose(np.diag(vol.affine)[:3], (1.0, 1.0, 1.2))

    def test_memory_cap(self):
        with pytest.raises(ValidationError):
            voxelize_labels(PhantomSpec(subdivisions=1, max_voxels=1000))

    def test_generator_is_its_own_oracle(self):
        spec = PhantomSpec(subdivisions=3)
        ph = make_phantom(spec)
        labels = vsbsp(ph.surfaces.central, ph.volume, ph.table)
        far = sector_border_distance(ph.surfaces.central.vertices, 8) > np.linalg.norm(spec.voxel_size)
        assert np.mean(labels[far] == ph.truth_labels[far]) >= 0.99

    def test_posed_phantom(self):
        pose = RigidTransform.from_axis_angle([1, 0, 1], 0.4, [5, -3, 2])
        spec = PhantomSpec(subdivisions=3, pose=pose)
        ph = make_phantom(spec)
        labels = vsbsp(ph.surfaces.central, ph.volume, ph.table)
        obj = pose.inverse().apply(ph.surfaces.central.vertices)
        far = sector_border_distance(obj, 8) > np.linalg.norm(spec.voxel_size)
        assert np.mean(labels[far] == ph.truth_labels[far]) >= 0.99


class TestSpec:
    def test_invalid(self):
        with pytest.raises(ValidationError):
            PhantomSpec(radii=(3, 2, 4))
        with pytest.raises(ValidationError):
            PhantomSpec(n_sectors=0)
        with pytest.raises(ValidationError):
            PhantomSpec(voxel_size=(1, 0, 1))
        with pytest.raises(ValidationError):
            PhantomSpec(noise_amplitude=2.0)
        with pytest.raises(ValidationError):
            PhantomSpec(bump_amplitude=0.6)

    def test_bump_is_smooth_and_bounded(self, rng):
        u = rng.normal(size=(1000, 3))
        u /= np.linalg.norm(u, axis=1)[:, None]
        s = bump_profile(u, 0.2)
        assert np.all(s > 0.5) and np.all(s < 1.5) and s.std() > 0.01
        assert np.all(bump_profile(u, 0.0) == 1.0)


class TestPair:
    spec = PhantomSpec(subdivisions=2, noise_amplitude=0.5)

    def test_identity_no_noise_identical(self):
        a, b = make_phantom_pair(PhantomSpec(subdivisions=2), None, seed=1)
        for n in ("inner", "central", "outer"):
            assert np.array_equal(a.surfaces[n].vertices, b.surfaces[n].vertices)
        assert np.array_equal(a.volume.data, b.volume.data)

    def test_seed_determinism(self):
        a1, b1 = make_phantom_pair(self.spec, None, seed=3)
        a2, b2 = make_phantom_pair(self.spec, None, seed=3)
        assert np.array_equal(b1.surfaces.central.vertices, b2.surfaces.central.vertices)
        c1, _ = make_phantom_pair(self.spec, None, seed=4)
        assert not np.array_equal(a1.surfaces.central.vertices, c1.surfaces.central.vertices)
        assert np.array_equal(a1.truth_labels, c1.truth_labels)

    def test_noise_needs_rng(self):
        with pytest.raises(ValidationError):
            make_phantom(self.spec)

    def test_surfaces_stay_nested(self):
        a, _ = make_phantom_pair(PhantomSpec(subdivisions=3, noise_amplitude=1.4, bump_amplitude=0.2), None, 0)
        r = {n: np.linalg.norm(a.surfaces[n].vertices, axis=1) for n in ("inner", "central", "outer")}
        assert np.all(r["inner"] < r["central"]) and np.all(r["central"] < r["outer"])
