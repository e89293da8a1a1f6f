"""Primitive fitting, region growing, the segmentation energy, split/merge
refinement and the part-level error."""

import numpy as np
import pytest

from partcheck.geometry import (
    PointCloud,
    RigidTransform,
    TriangleMesh,
    estimate_normals_and_curvature,
)
from partcheck.primitives import (
    Configuration,
    FitError,
    Primitive,
    PrimitiveKind,
    energy,
    fit_primitive,
    merge,
    part_level_error,
    patch_distances,
    primitive_distance,
    refine,
    region_grow,
    split,
)


def random_rigid(rng) -> RigidTransform:
    m = rng.normal(size=(3, 3))
    q, _ = np.linalg.qr(m)
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return RigidTransform(q, rng.uniform(-3, 3, 3))


# ---------------------------------------------------------------------------
# Synthetic surface generators (exact, independent of the fitters)
# ---------------------------------------------------------------------------

def cylinder_points(rng, radius=2.0, n=200, z_range=(-2, 2)):
    t = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(*z_range, n)
    return np.column_stack([radius * np.cos(t), radius * np.sin(t), z])


def cone_points(rng, half_angle=np.pi / 6, n=300, h_range=(1.0, 3.0)):
    h = rng.uniform(*h_range, n)
    t = rng.uniform(0, 2 * np.pi, n)
    r = h * np.tan(half_angle)
    return np.column_stack([r * np.cos(t), r * np.sin(t), h])


def sphere_points(rng, radius=1.5, n=300):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return radius * v


def plane_points(rng, n=300, extent=2.0):
    pts = rng.uniform(-extent, extent, size=(n, 3))
    pts[:, 2] = 0.0
    return pts


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

class TestFitPrimitive:
    def test_plane_exact(self):
        rng = np.random.default_rng(0)
        prim = fit_primitive(PrimitiveKind.PLANE, plane_points(rng))
        assert abs(abs(prim.shape.normal[2]) - 1.0) < 1e-12
        assert abs(prim.shape.offset) < 1e-12
        assert prim.fit_rms < 1e-12

    def test_sphere_symmetric_six(self):
        pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0],
                        [0, -1, 0], [0, 0, 1], [0, 0, -1.0]])
        prim = fit_primitive(PrimitiveKind.SPHERE, pts)
        assert np.abs(prim.shape.center).max() < 1e-9
        assert prim.shape.radius == pytest.approx(1.0, abs=1e-9)

    def test_cylinder_noiseless(self):
        rng = np.random.default_rng(1)
        prim = fit_primitive(PrimitiveKind.CYLINDER, cylinder_points(rng))
        assert prim.shape.radius == pytest.approx(2.0, abs=1e-6)
        assert abs(abs(prim.shape.axis[2]) - 1.0) < 1e-6

    def test_cone_noiseless(self):
        rng = np.random.default_rng(2)
        prim = fit_primitive(PrimitiveKind.CONE, cone_points(rng))
        assert prim.shape.half_angle == pytest.approx(np.pi / 6, abs=1e-4)
        assert np.abs(prim.shape.apex).max() < 1e-3

    def test_insufficient_points(self):
        with pytest.raises(FitError):
            fit_primitive(PrimitiveKind.CYLINDER, np.zeros((4, 3)))
        with pytest.raises(FitError):
            fit_primitive(PrimitiveKind.PLANE, np.zeros((2, 3)))

    def test_degenerate_data_raises(self):
        rng = np.random.default_rng(3)
        with pytest.raises(FitError):
            fit_primitive(PrimitiveKind.SPHERE, plane_points(rng, n=100))

    def test_rigid_equivariance(self):
        rng = np.random.default_rng(4)
        transform = random_rigid(rng)
        cyl_pts = cylinder_points(rng, radius=1.3, n=300)
        base = fit_primitive(PrimitiveKind.CYLINDER, cyl_pts)
        moved = fit_primitive(PrimitiveKind.CYLINDER, transform.apply(cyl_pts))
        assert moved.shape.radius == pytest.approx(base.shape.radius, abs=1e-9)
        expected_axis = transform.apply_directions(base.shape.axis.reshape(1, 3))[0]
        assert abs(abs(expected_axis @ moved.shape.axis) - 1.0) < 1e-9

        cone_pts = cone_points(rng, half_angle=0.5, n=300)
        base_c = fit_primitive(PrimitiveKind.CONE, cone_pts)
        moved_c = fit_primitive(PrimitiveKind.CONE, transform.apply(cone_pts))
        assert moved_c.shape.half_angle == pytest.approx(base_c.shape.half_angle, abs=1e-9)
        assert np.allclose(moved_c.shape.apex,
                           transform.apply(base_c.shape.apex.reshape(1, 3))[0], atol=1e-6)

    def test_model_selection_sanity(self):
        # On each kind's own noiseless surface, nothing else fits better.
        rng = np.random.default_rng(5)
        generators = {
            PrimitiveKind.PLANE: plane_points(rng),
            PrimitiveKind.SPHERE: sphere_points(rng),
            PrimitiveKind.CYLINDER: cylinder_points(rng),
            PrimitiveKind.CONE: cone_points(rng),
        }
        for true_kind, pts in generators.items():
            own = fit_primitive(true_kind, pts).fit_rms
            for other in PrimitiveKind:
                try:
                    rms = fit_primitive(other, pts).fit_rms
                except FitError:
                    continue
                assert own <= rms + 1e-9


class TestPrimitiveDistance:
    def test_plane_and_sphere_basics(self):
        plane = fit_primitive(PrimitiveKind.PLANE, plane_points(np.random.default_rng(0)))
        assert primitive_distance((0.0, 0.0, 5.0), plane) == pytest.approx(5.0)
        sphere = fit_primitive(PrimitiveKind.SPHERE, np.array(
            [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1.0]]))
        assert primitive_distance((2.0, 0.0, 0.0), sphere) == pytest.approx(1.0)

    def test_against_dense_sampling(self):
        # Distances agree with the minimum over a dense surface sampling.
        rng = np.random.default_rng(6)
        u = rng.uniform(0, 2 * np.pi, 1_000_000)

        cyl = fit_primitive(PrimitiveKind.CYLINDER, cylinder_points(rng, radius=1.5))
        z = rng.uniform(-4, 4, len(u))
        surf = np.column_stack([1.5 * np.cos(u), 1.5 * np.sin(u), z])
        for _ in range(5):
            p = rng.uniform(-2, 2, 3)
            dense = np.linalg.norm(surf - p, axis=1).min()
            got = primitive_distance(p, cyl)
            if abs(p[2]) < 3.0:   # inside the densely sampled span
                assert abs(got - dense) < 5e-3

        cone = fit_primitive(PrimitiveKind.CONE, cone_points(rng, half_angle=0.5))
        h = rng.uniform(0.0, 5.0, len(u))
        r = h * np.tan(0.5)
        surf = np.column_stack([r * np.cos(u), r * np.sin(u), h])
        for _ in range(5):
            p = rng.uniform(-1, 3, 3)
            dense = np.linalg.norm(surf - p, axis=1).min()
            assert abs(primitive_distance(p, cone) - dense) < 5e-3

    def test_cone_apex_clamp(self):
        cone = fit_primitive(PrimitiveKind.CONE, cone_points(np.random.default_rng(7)))
        # Behind the apex the nearest surface point is the apex itself.
        assert primitive_distance((0, 0, -2.0), cone) == pytest.approx(2.0, abs=1e-3)


# ---------------------------------------------------------------------------
# Region growing
# ---------------------------------------------------------------------------

def enriched_cloud(points, k=16):
    return estimate_normals_and_curvature(PointCloud(points=points), k=k)


class TestRegionGrow:
    def test_two_perpendicular_planes(self):
        rng = np.random.default_rng(8)
        xs = np.linspace(0, 4, 34)
        a = np.array([(x, y, 0.0) for x in xs for y in xs])
        b = np.array([(x, 6.0, z) for x in xs for z in np.linspace(0.3, 4.3, 34)])
        pts = np.vstack([a, b]) + rng.normal(scale=0.002, size=(len(a) + len(b), 3))
        cloud = enriched_cloud(pts)
        config = region_grow(cloud, min_points=30)
        assert len(config.primitives) == 2
        assert all(p.kind is PrimitiveKind.PLANE for p in config.primitives)
        labels = config.labels()
        truth = np.concatenate([np.zeros(len(a), int), np.ones(len(b), int)])
        agreement = max(
            ((labels == 0) & (truth == 0)).sum() + ((labels == 1) & (truth == 1)).sum(),
            ((labels == 1) & (truth == 0)).sum() + ((labels == 0) & (truth == 1)).sum(),
        )
        assert agreement / len(pts) >= 0.95

    def test_single_plane(self):
        rng = np.random.default_rng(9)
        xs = np.linspace(0, 4, 40)
        pts = np.array([(x, y, 0.0) for x in xs for y in xs])
        pts += rng.normal(scale=0.001, size=pts.shape)
        config = region_grow(enriched_cloud(pts), min_points=30)
        assert len(config.primitives) == 1
        assert config.primitives[0].kind is PrimitiveKind.PLANE

    def test_pure_noise_yields_nothing(self):
        rng = np.random.default_rng(10)
        pts = rng.normal(size=(1500, 3))
        pts = pts[np.linalg.norm(pts, axis=1) < 1.0]
        config = region_grow(enriched_cloud(pts), min_points=30, curv_thresh=0.04)
        assert len(config.primitives) == 0

    def test_requires_channels(self):
        cloud = PointCloud(points=np.random.default_rng(0).normal(size=(100, 3)))
        with pytest.raises(ValueError):
            region_grow(cloud)


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------

def plane_config(points, groups, min_points, weights=(0.6, 0.25, 0.15), eps=0.1,
                 kind=PrimitiveKind.PLANE):
    prims = []
    for idx in groups:
        idx = np.asarray(idx, dtype=np.int64)
        fitted = fit_primitive(kind, points[idx])
        prims.append(Primitive(fitted.shape, idx, fitted.fit_rms))
    return Configuration(points=points, primitives=prims, min_points=min_points,
                         weights=weights, inlier_eps=eps)


class TestEnergy:
    def test_forced_arithmetic(self):
        # 100 points on two exact planes, fully covered.
        xs = np.linspace(0, 2, 50)
        a = np.array([(x, 0.0, 0.0) for x in xs])
        b = np.array([(x, 1.0, 5.0) for x in xs])
        pts = np.vstack([a, b])
        pts[:, 1] += np.concatenate([np.linspace(0, 1, 50)] * 2)  # avoid collinear
        config = plane_config(pts, [np.arange(50), np.arange(50, 100)], min_points=10)
        terms = energy(config)
        assert terms.fidelity == pytest.approx(0.0, abs=1e-12)
        assert terms.simplicity == pytest.approx(0.2)
        assert terms.completeness == pytest.approx(0.0)
        assert terms.total == pytest.approx(0.05)

    def test_empty_configuration(self):
        pts = np.random.default_rng(0).normal(size=(100, 3))
        config = Configuration(points=pts, primitives=[], min_points=10)
        terms = energy(config)
        assert terms.total == pytest.approx(0.15)
        assert terms.fidelity == 0.0
        assert terms.completeness == 1.0

    def test_against_reference_arithmetic(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            n = int(rng.integers(40, 120))
            pts = rng.uniform(-2, 2, size=(n, 3))
            sigma = int(rng.integers(3, 8))
            count = int(rng.integers(0, 3))
            order = rng.permutation(n)
            groups = []
            at = 0
            for _ in range(count):
                size = int(rng.integers(sigma, sigma + 10))
                if at + size > n:
                    break
                groups.append(order[at:at + size])
                at += size
            w = rng.uniform(0.1, 1.0, 3)
            w /= w.sum()
            config = plane_config(pts, groups, min_points=sigma, weights=tuple(w),
                                  eps=10.0)
            terms = energy(config)
            # Reference arithmetic, written out directly.
            total_dist = 0.0
            n_in = 0
            for prim in config.primitives:
                inl = pts[prim.inliers]
                d = np.abs(inl @ prim.shape.normal - prim.shape.offset)
                total_dist += d.sum()
                n_in += len(inl)
            e_f = total_dist / n_in if n_in else 0.0
            e_s = len(config.primitives) / (n // sigma)
            e_c = 1.0 - n_in / n
            expected = w[0] * e_f + w[1] * e_s + w[2] * e_c
            assert terms.total == pytest.approx(expected, abs=1e-12)

    def test_validation(self):
        pts = np.zeros((20, 3))
        with pytest.raises(ValueError):
            Configuration(points=pts, primitives=[], min_points=10,
                          weights=(0.5, 0.5, 0.5))
        plane = fit_primitive(PrimitiveKind.PLANE,
                              np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]))
        overlapping = [
            Primitive(plane.shape, np.array([0, 1, 2]), 0.0),
            Primitive(plane.shape, np.array([2, 3, 4]), 0.0),
        ]
        pts = np.random.default_rng(0).normal(size=(20, 3))
        with pytest.raises(ValueError, match="disjoint"):
            Configuration(points=pts, primitives=overlapping, min_points=3)


# ---------------------------------------------------------------------------
# Split / merge
# ---------------------------------------------------------------------------

def two_parallel_planes(rng, n_side=12, extent=1.0, separation=1.0):
    xs = np.linspace(0, extent, n_side)
    a = np.array([(x, y, 0.0) for x in xs for y in xs])
    b = np.array([(x, y, separation) for x in xs for y in xs])
    return np.vstack([a, b])


class TestSplit:
    def test_separates_merged_parallel_planes(self):
        rng = np.random.default_rng(12)
        pts = two_parallel_planes(rng)
        n = len(pts)
        merged_fit = fit_primitive(PrimitiveKind.PLANE, pts)
        config = Configuration(
            points=pts,
            primitives=[Primitive(merged_fit.shape, np.arange(n), merged_fit.fit_rms)],
            min_points=20,
        )
        out, applied = split(config, 0)
        assert applied
        assert len(out.primitives) == 2
        offsets = sorted(abs(p.shape.offset) for p in out.primitives)
        assert offsets[0] == pytest.approx(0.0, abs=1e-6)
        assert offsets[1] == pytest.approx(1.0, abs=1e-6)

    def test_small_primitive_rejected(self):
        rng = np.random.default_rng(13)
        pts = plane_points(rng, n=39)
        config = plane_config(pts, [np.arange(39)], min_points=20)
        out, applied = split(config, 0)    # 39 < 2 * 20
        assert not applied
        assert out is config

    def test_genuine_plane_split_not_profitable(self):
        rng = np.random.default_rng(14)
        pts = plane_points(rng, n=400) + rng.normal(scale=0.002, size=(400, 3))
        config = plane_config(pts, [np.arange(400)], min_points=30)
        before = energy(config).total
        out, applied = split(config, 0)
        if applied:
            assert energy(out).total >= before - 1e-12
        refined = refine(config)
        assert len(refined.primitives) == 1


class TestMerge:
    def test_rejoins_over_segmented_plane(self):
        rng = np.random.default_rng(15)
        pts = plane_points(rng, n=400) + rng.normal(scale=0.002, size=(400, 3))
        left = np.nonzero(pts[:, 0] <= 0)[0]
        right = np.nonzero(pts[:, 0] > 0)[0]
        config = plane_config(pts, [left, right], min_points=30)
        halves_rms = max(p.fit_rms for p in config.primitives)
        out, applied = merge(config, 0, 1)
        assert applied
        assert len(out.primitives) == 1
        assert out.primitives[0].fit_rms == pytest.approx(halves_rms, abs=5e-3)

    def test_kind_mismatch_rejected(self):
        rng = np.random.default_rng(16)
        pts = np.vstack([plane_points(rng, n=100),
                         cylinder_points(rng, radius=1.0, n=100) + (0, 0, 5.0)])
        plane_fit = fit_primitive(PrimitiveKind.PLANE, pts[:100])
        cyl_fit = fit_primitive(PrimitiveKind.CYLINDER, pts[100:])
        config = Configuration(
            points=pts,
            primitives=[
                Primitive(plane_fit.shape, np.arange(100), plane_fit.fit_rms),
                Primitive(cyl_fit.shape, np.arange(100, 200), cyl_fit.fit_rms),
            ],
            min_points=20,
        )
        _, applied = merge(config, 0, 1)
        assert not applied

    def test_distant_planes_not_adjacent(self):
        rng = np.random.default_rng(17)
        a = plane_points(rng, n=150)
        b = plane_points(rng, n=150) + (0.0, 0.0, 10.0)
        pts = np.vstack([a, b])
        config = plane_config(pts, [np.arange(150), np.arange(150, 300)], min_points=30)
        _, applied = merge(config, 0, 1)
        assert not applied


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------

class TestRefine:
    def test_ground_truth_is_fixed_point(self):
        rng = np.random.default_rng(18)
        a = plane_points(rng, n=300) + rng.normal(scale=0.002, size=(300, 3))
        b = a.copy()
        b[:, 2] += 6.0
        pts = np.vstack([a, b])
        config = plane_config(pts, [np.arange(300), np.arange(300, 600)], min_points=30)
        ops = []
        refined = refine(config, on_apply=lambda *args: ops.append(args))
        assert ops == []
        assert len(refined.primitives) == 2

    def test_oversegmented_cube_recovers_six_faces(self):
        from partcheck.synth import cube_scene
        scene = cube_scene(side=8.0, spacing=0.28, noise=0.004, seed=3)
        cloud = estimate_normals_and_curvature(scene.cloud, k=16)
        config = region_grow(cloud, min_points=30)
        # Over-segment: cut three patches in two.
        work = config
        forced = 0
        for index in range(len(config.primitives)):
            if forced >= 3:
                break
            out, applied = split(work, index)
            if applied:
                work = out
                forced += 1
        assert len(work.primitives) == 6 + forced
        log = []
        refined = refine(work, on_apply=lambda op, e0, e1: log.append((op, e0, e1)))
        assert len(refined.primitives) == 6
        assert all(e1 < e0 for _, e0, e1 in log)

    def test_undersegmented_two_planes_split(self):
        rng = np.random.default_rng(19)
        pts = two_parallel_planes(rng)
        merged_fit = fit_primitive(PrimitiveKind.PLANE, pts)
        config = Configuration(
            points=pts,
            primitives=[Primitive(merged_fit.shape, np.arange(len(pts)),
                                  merged_fit.fit_rms)],
            min_points=20,
        )
        refined = refine(config)
        assert len(refined.primitives) == 2

    def test_energy_strictly_decreases(self):
        rng = np.random.default_rng(20)
        pts = plane_points(rng, n=500) + rng.normal(scale=0.003, size=(500, 3))
        thirds = np.array_split(np.argsort(pts[:, 0], kind="stable"), 3)
        config = plane_config(pts, [np.sort(g) for g in thirds], min_points=30)
        log = []
        refined = refine(config, on_apply=lambda op, e0, e1: log.append((e0, e1)))
        assert len(refined.primitives) == 1
        assert all(e1 < e0 for e0, e1 in log)
        assert energy(refined).total <= energy(config).total


# ---------------------------------------------------------------------------
# Part-level error
# ---------------------------------------------------------------------------

SQUARE = TriangleMesh(
    vertices=np.array([[-10, -10, 0], [10, -10, 0], [-10, 10, 0], [10, 10, 0.0]]),
    triangles=np.array([[0, 1, 2], [1, 3, 2]]),
)


class TestPartLevelError:
    def _config_at_offsets(self, rng, offsets):
        groups = []
        chunks = []
        at = 0
        for dz in offsets:
            pts = plane_points(rng, n=60, extent=5.0)
            pts[:, 2] = dz
            chunks.append(pts)
            groups.append(np.arange(at, at + 60))
            at += 60
        pts = np.vstack(chunks)
        return PointCloud(points=pts), plane_config(pts, groups, min_points=30, eps=1.0)

    def test_two_patch_arithmetic(self):
        rng = np.random.default_rng(21)
        cloud, config = self._config_at_offsets(rng, [0.1, 0.3])
        avg, worst = part_level_error(config, cloud, SQUARE)
        assert avg == pytest.approx(0.2, abs=1e-9)
        assert worst == pytest.approx(0.3, abs=1e-9)

    def test_on_mesh_is_zero(self):
        rng = np.random.default_rng(22)
        cloud, config = self._config_at_offsets(rng, [0.0, 0.0])
        avg, worst = part_level_error(config, cloud, SQUARE)
        assert avg == pytest.approx(0.0, abs=1e-12)
        assert worst == pytest.approx(0.0, abs=1e-12)

    def test_offset_plane(self):
        rng = np.random.default_rng(23)
        cloud, config = self._config_at_offsets(rng, [0.05])
        avg, worst = part_level_error(config, cloud, SQUARE)
        assert avg == pytest.approx(0.05, abs=1e-3)
        assert worst == pytest.approx(0.05, abs=1e-3)

    def test_empty_configuration_errors(self):
        pts = np.random.default_rng(0).normal(size=(10, 3))
        config = Configuration(points=pts, primitives=[], min_points=3)
        with pytest.raises(ValueError):
            part_level_error(config, PointCloud(points=pts), SQUARE)

    def test_max_variant(self):
        rng = np.random.default_rng(24)
        cloud, config = self._config_at_offsets(rng, [0.1])
        per_mean = patch_distances(config, cloud, SQUARE, per_patch="mean")
        per_max = patch_distances(config, cloud, SQUARE, per_patch="max")
        assert per_max[0] >= per_mean[0]
