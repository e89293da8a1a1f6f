"""Pipeline orchestration and the three-level assessment report.

Stages run in a fixed order (pre-filter, registration, global, part,
feature); each stage is timed and any failure aborts with the stage name.
The report serializes to a stable key/value document or an aligned
human-readable table.
"""

from __future__ import annotations

import hashlib
import time
from collections import OrderedDict
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import features as feat
from . import meshio
from . import primitives as prim
from . import registration as reg
from .geometry import (
    PointCloud,
    TriangleMesh,
    estimate_normals_and_curvature,
    median_spacing,
    remove_outliers,
    sample_mesh,
)
from .synth import SyntheticScene, generate_synthetic_scene, parse_scene_spec


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    """All tunables with their fixed defaults; every field is overridable."""

    omega_f: float = 0.6
    omega_s: float = 0.25
    omega_c: float = 0.15
    inlier_eps: float = 0.1
    eta: float = 0.03
    circle_max_iter: int = 150
    edge_threshold: float = 1.05
    tensor_sigma: float = 0.5
    tensor_radius_factor: float = 4.0
    icp_max_iter: int = 100
    icp_tol: float = 1e-6
    min_points: int = 0                 # 0 = max(30, n / 500)
    outlier_k: int = 8
    outlier_stddev_mult: float = 2.0
    normals_k: int = 16
    region_k: int = 16
    region_angle_deg: float = 20.0
    region_curv_thresh: float = 0.04
    mesh_samples: int = 0               # 0 = max(50000, 2 * n)
    bandwidth: float = 0.05
    hypotheses_per_point: int = 20
    max_hypotheses: int = 5000
    min_cluster: int = 10
    cluster_cap: int = 4000
    registration_subsample: int = 30000
    circle_match_tol: float = 1.0
    derive_reference_circles: int = 1
    seed: int = 0

    def __post_init__(self):
        w = np.array([self.omega_f, self.omega_s, self.omega_c])
        if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("energy weights must be non-negative and sum to 1")
        for name in ("inlier_eps", "eta", "edge_threshold", "tensor_sigma",
                     "tensor_radius_factor", "icp_tol", "bandwidth", "circle_match_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @staticmethod
    def from_file(path: str | Path) -> "PipelineConfig":
        """Flat key/value text; unknown keys are rejected, missing keys default."""
        valid = {f.name: f.type for f in fields(PipelineConfig)}
        overrides = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in stripped.split("=", 1))
            if key not in valid:
                raise ValueError(f"{path}: line {lineno}: unknown key '{key}'")
            caster = int if valid[key] in ("int", int) else float
            overrides[key] = caster(float(value))
        return PipelineConfig(**overrides)

    def to_items(self) -> OrderedDict:
        return OrderedDict((f.name, getattr(self, f.name)) for f in fields(self))

    def mcfs_params(self) -> feat.MCFSParams:
        return feat.MCFSParams(
            inlier_eps=self.inlier_eps,
            eta=self.eta,
            max_fit_iter=self.circle_max_iter,
            hypotheses_per_point=self.hypotheses_per_point,
            max_hypotheses=self.max_hypotheses,
            bandwidth=self.bandwidth,
            min_cluster=self.min_cluster,
            cluster_cap=self.cluster_cap,
            seed=self.seed,
        )


@dataclass
class PrimitiveRow:
    index: int
    kind: str
    inlier_count: int
    patch_distance: float
    params: str


@dataclass
class CircleRow:
    index: int
    center: np.ndarray
    radius: float
    normal: np.ndarray
    inlier_count: int


@dataclass
class AssessmentReport:
    """Three-level error record plus stage timings and run provenance."""

    e_reg: float
    e_global: float
    e_part_avg: float
    e_part_max: float
    e_comp_radius_avg: float
    e_comp_radius_max: float
    e_comp_centroid_avg: float
    e_comp_centroid_max: float
    f_n: int
    f_p: int
    time_registration: float
    time_global: float
    time_part: float
    time_feature: float
    time_total: float
    scan_points: int
    outliers_removed: int
    registration_iterations: int
    registration_converged: bool
    primitive_rows: list[PrimitiveRow] = field(default_factory=list)
    circle_rows: list[CircleRow] = field(default_factory=list)
    config: PipelineConfig = field(default_factory=PipelineConfig)
    scan_checksum: str = "-"
    mesh_checksum: str = "-"
    format_version: int = 1

    def __post_init__(self):
        for name in ("e_reg", "e_global", "e_part_avg", "e_part_max",
                     "e_comp_radius_avg", "e_comp_radius_max",
                     "e_comp_centroid_avg", "e_comp_centroid_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.f_n < 0 or self.f_p < 0:
            raise ValueError("f_n / f_p must be non-negative")
        stage_sum = (self.time_registration + self.time_global
                     + self.time_part + self.time_feature)
        if self.time_total < stage_sum * 0.99:
            raise ValueError("total time is below the sum of stage times")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


_ERROR_KEYS = (
    "e_reg", "e_global", "e_part_avg", "e_part_max",
    "e_comp_radius_avg", "e_comp_radius_max",
    "e_comp_centroid_avg", "e_comp_centroid_max",
)
_TIME_KEYS = (
    "time_registration", "time_global", "time_part", "time_feature", "time_total",
)


def report_fields(report: AssessmentReport) -> OrderedDict:
    """Flatten the report into its canonical key order."""
    out: OrderedDict[str, str] = OrderedDict()
    out["format_version"] = _fmt(report.format_version)
    out["scan_checksum"] = report.scan_checksum
    out["mesh_checksum"] = report.mesh_checksum
    for key in _ERROR_KEYS:
        out[key] = _fmt(getattr(report, key))
    out["f_n"] = _fmt(report.f_n)
    out["f_p"] = _fmt(report.f_p)
    for key in _TIME_KEYS:
        out[key] = f"{getattr(report, key):.1f}"
    out["scan_points"] = _fmt(report.scan_points)
    out["outliers_removed"] = _fmt(report.outliers_removed)
    out["registration_iterations"] = _fmt(report.registration_iterations)
    out["registration_converged"] = _fmt(report.registration_converged)
    out["n_primitives"] = _fmt(len(report.primitive_rows))
    for row in report.primitive_rows:
        prefix = f"primitive.{row.index}"
        out[f"{prefix}.kind"] = row.kind
        out[f"{prefix}.inliers"] = _fmt(row.inlier_count)
        out[f"{prefix}.patch_distance"] = _fmt(row.patch_distance)
        out[f"{prefix}.params"] = row.params
    out["n_circles"] = _fmt(len(report.circle_rows))
    for row in report.circle_rows:
        prefix = f"circle.{row.index}"
        out[f"{prefix}.center"] = " ".join(_fmt(v) for v in row.center)
        out[f"{prefix}.radius"] = _fmt(row.radius)
        out[f"{prefix}.normal"] = " ".join(_fmt(v) for v in row.normal)
        out[f"{prefix}.inliers"] = _fmt(row.inlier_count)
    for key, value in report.config.to_items().items():
        out[f"config.{key}"] = _fmt(value)
    return out


def emit_report(report: AssessmentReport, path: str | Path, fmt: str = "structured") -> None:
    """Write the report; 'structured' is machine-readable, 'human' is a table."""
    path = Path(path)
    if fmt == "structured":
        lines = [f"{key} = {value}" for key, value in report_fields(report).items()]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "human":
        path.write_text(_render_human(report))
    else:
        raise ValueError(f"unknown report format '{fmt}'")


def parse_report(path: str | Path) -> OrderedDict:
    """Read a structured report back into its key/value fields."""
    out: OrderedDict[str, str] = OrderedDict()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _render_human(report: AssessmentReport) -> str:
    rows = [
        ("Registration error (E_reg)", report.e_reg),
        ("Global RMSE (E_global)", report.e_global),
        ("Part avg (E_part_avg)", report.e_part_avg),
        ("Part max (E_part_max)", report.e_part_max),
        ("Radius avg (E_comp_radius_avg)", report.e_comp_radius_avg),
        ("Radius max (E_comp_radius_max)", report.e_comp_radius_max),
        ("Centroid avg (E_comp_centroid_avg)", report.e_comp_centroid_avg),
        ("Centroid max (E_comp_centroid_max)", report.e_comp_centroid_max),
    ]
    width = max(len(name) for name, _ in rows)
    lines = ["Manufacturing error (model units, mm by convention)", "-" * 60]
    lines += [f"{name:<{width}}  {value:.6f}" for name, value in rows]
    lines += ["", f"Missed circles (f_n): {report.f_n}   Spurious circles (f_p): {report.f_p}",
              "", "Running time (seconds)", "-" * 60]
    lines += [
        f"registration {report.time_registration:.1f}  global {report.time_global:.1f}  "
        f"part {report.time_part:.1f}  feature {report.time_feature:.1f}  "
        f"total {report.time_total:.1f}",
        "", f"Primitives ({len(report.primitive_rows)})", "-" * 60,
    ]
    for row in report.primitive_rows:
        lines.append(f"{row.index:>3} {row.kind:<9} inliers {row.inlier_count:>8} "
                     f"patch-dist {row.patch_distance:.6f}  [{row.params}]")
    lines += ["", f"Circles ({len(report.circle_rows)})", "-" * 60]
    for row in report.circle_rows:
        c = row.center
        n = row.normal
        lines.append(
            f"{row.index:>3} center ({c[0]:.4f}, {c[1]:.4f}, {c[2]:.4f}) "
            f"r {row.radius:.4f} normal ({n[0]:.3f}, {n[1]:.3f}, {n[2]:.3f}) "
            f"inliers {row.inlier_count}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Circle tables (dump and truth input)
# ---------------------------------------------------------------------------

def write_circles_table(path: str | Path, circles: list[feat.Circle3D],
                        inlier_counts: list[int] | None = None) -> None:
    lines = ["# id cx cy cz radius nx ny nz inliers"]
    for i, c in enumerate(circles):
        count = inlier_counts[i] if inlier_counts else 0
        lines.append(
            f"{i} {c.center[0]:.10g} {c.center[1]:.10g} {c.center[2]:.10g} "
            f"{c.radius:.10g} {c.normal[0]:.10g} {c.normal[1]:.10g} {c.normal[2]:.10g} {count}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_circles_table(path: str | Path) -> list[feat.Circle3D]:
    circles = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if len(tokens) < 8:
            raise ValueError(f"{path}: line {lineno}: expected >= 8 columns")
        values = [float(t) for t in tokens[1:8]]
        circles.append(feat.Circle3D(np.array(values[0:3]), values[3], np.array(values[4:7])))
    return circles


# ---------------------------------------------------------------------------
# Stage helpers
# ---------------------------------------------------------------------------

def global_error(registered: PointCloud, mesh: TriangleMesh) -> float:
    """Root mean square point-to-surface distance of the registered scan."""
    d = mesh.distance_index().query(registered.points)
    return float(np.sqrt(np.mean(d * d)))


_PALETTE = np.array([
    (230, 60, 60), (60, 160, 230), (90, 200, 90), (235, 180, 50),
    (170, 90, 220), (60, 210, 200), (240, 120, 50), (140, 140, 240),
    (200, 90, 140), (120, 190, 60), (90, 120, 200), (220, 140, 190),
    (150, 200, 150), (200, 200, 90), (120, 220, 240), (230, 100, 100),
], dtype=np.uint8)


def _label_colors(labels: np.ndarray) -> np.ndarray:
    colors = np.full((len(labels), 3), 64, dtype=np.uint8)
    assigned = labels >= 0
    colors[assigned] = _PALETTE[labels[assigned] % len(_PALETTE)]
    return colors


def _checksum(path: str | Path) -> str:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return f"sha256:{digest}"


class _Timer:
    def __init__(self):
        self.start = time.perf_counter()

    def lap(self) -> float:
        now = time.perf_counter()
        elapsed = now - self.start
        self.start = now
        return elapsed


def _stage(name: str):
    class _StageGuard:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False

    return _StageGuard()


# ---------------------------------------------------------------------------
# The pipeline
# ---------------------------------------------------------------------------

def run_pipeline(
    scan,
    mesh,
    config: PipelineConfig = PipelineConfig(),
    truth_circles: list[feat.Circle3D] | None = None,
    out_dir: str | Path | None = None,
    dump_segments: bool = False,
    dump_edges: bool = False,
    dump_circles: bool = False,
    ascii_output: bool = False,
) -> AssessmentReport:
    """Run the full assessment and return the report.

    ``scan`` and ``mesh`` may be paths or in-memory objects. When
    ``truth_circles`` is absent and the config enables it, reference circles
    are derived by running the feature detector on the CAD-side samples.
    Output files are only written after every stage succeeds.
    """
    total_timer = _Timer()
    scan_checksum = mesh_checksum = "-"
    with _stage("input"):
        if isinstance(scan, (str, Path)):
            scan_checksum = _checksum(scan)
            scan = meshio.load_point_cloud(scan)
        if isinstance(mesh, (str, Path)):
            mesh_checksum = _checksum(mesh)
            mesh = meshio.load_mesh(mesh)

    timer = _Timer()
    with _stage("registration"):
        filtered, removed = remove_outliers(
            scan, k=config.outlier_k, stddev_mult=config.outlier_stddev_mult)
        n = len(filtered)
        n_samples = config.mesh_samples or max(50_000, 2 * n)
        cad_samples = sample_mesh(mesh, n_samples, seed=config.seed)
        icp_source = filtered
        if n > config.registration_subsample > 0:
            stride = int(np.ceil(n / config.registration_subsample))
            icp_source = filtered.select(np.arange(0, n, stride))
        # Partial scans of near-symmetric parts can tie the coarse cost for
        # very different poses, and the trimmed ICP RMSE is equally blind (the
        # trim rejects exactly the tell-tale mismatched feature points), so
        # completed candidates are compared by untrimmed mean NN distance
        # (capped so hopeless poses do not pay for exact far lookups).
        from scipy.spatial import cKDTree

        target_tree = cKDTree(cad_samples.points)
        span = cad_samples.points.max(axis=0) - cad_samples.points.min(axis=0)
        cap = max(0.05 * float(np.linalg.norm(span)), 1e-9)
        result = None
        result_cost = np.inf
        for candidate in reg.coarse_candidates(filtered, cad_samples, count=3):
            attempt = reg.icp_refine(icp_source, cad_samples, init=candidate,
                                     max_iter=config.icp_max_iter, tol=config.icp_tol,
                                     target_tree=target_tree)
            moved = attempt.transform.apply(icp_source.points)
            d, _ = target_tree.query(moved, distance_upper_bound=cap)
            cost = float(np.minimum(d, cap).mean())
            if result is None or cost < result_cost:
                result = attempt
                result_cost = cost
        registered = filtered.transformed(result.transform)
        e_reg = reg.registration_error(registered, cad_samples, target_tree=target_tree)
    time_registration = timer.lap()

    with _stage("global"):
        e_global = global_error(registered, mesh)
    time_global = timer.lap()

    with _stage("part"):
        enriched = estimate_normals_and_curvature(registered, k=config.normals_k)
        min_points = config.min_points or max(30, len(enriched) // 500)
        coarse_config = prim.region_grow(
            enriched,
            k=config.region_k,
            angle_thresh=np.deg2rad(config.region_angle_deg),
            curv_thresh=config.region_curv_thresh,
            min_points=min_points,
            weights=(config.omega_f, config.omega_s, config.omega_c),
            inlier_eps=config.inlier_eps,
        )
        refined = prim.refine(coarse_config)
        if refined.primitives:
            patch_dists = prim.patch_distances(refined, enriched, mesh)
            e_part_avg = float(patch_dists.mean())
            e_part_max = float(patch_dists.max())
        else:
            patch_dists = np.empty(0)
            e_part_avg = e_part_max = 0.0
    time_part = timer.lap()

    with _stage("feature"):
        radius = config.tensor_radius_factor * median_spacing(enriched.points)
        edge_idx = feat.detect_edge_points(
            enriched, radius=radius, threshold=config.edge_threshold,
            sigma=config.tensor_sigma)
        edge_pts = enriched.points[edge_idx]
        if len(edge_idx) >= 3:
            labeling = feat.mcfs(edge_pts, config.mcfs_params())
        else:
            labeling = feat.CircleLabeling(np.full(len(edge_idx), -1, dtype=np.int64), [])
        fitted = labeling.circles

        reference = truth_circles
        if reference is None and config.derive_reference_circles:
            reference = _derive_reference_circles(mesh, cad_samples, config)
        reference = reference or []

        matches = feat.match_circles(fitted, reference, config.circle_match_tol)
        if matches:
            radius_err = np.array([abs(fitted[i].radius - reference[j].radius)
                                   for i, j in matches])
            centroid_err = np.array([np.linalg.norm(fitted[i].center - reference[j].center)
                                     for i, j in matches])
            e_radius_avg, e_radius_max = float(radius_err.mean()), float(radius_err.max())
            e_centroid_avg, e_centroid_max = float(centroid_err.mean()), float(centroid_err.max())
        else:
            e_radius_avg = e_radius_max = e_centroid_avg = e_centroid_max = 0.0
        f_n = len(reference) - len(matches)
        f_p = len(fitted) - len(matches)
    time_feature = timer.lap()
    time_total = total_timer.lap()

    primitive_rows = [
        PrimitiveRow(
            index=i,
            kind=p.kind.value,
            inlier_count=len(p.inliers),
            patch_distance=float(patch_dists[i]) if len(patch_dists) else 0.0,
            params=_shape_params(p.shape),
        )
        for i, p in enumerate(refined.primitives)
    ]
    circle_counts = [int((labeling.labels == i).sum()) for i in range(len(fitted))]
    circle_rows = [
        CircleRow(index=i, center=c.center, radius=c.radius, normal=c.normal,
                  inlier_count=circle_counts[i])
        for i, c in enumerate(fitted)
    ]
    report = AssessmentReport(
        e_reg=e_reg,
        e_global=e_global,
        e_part_avg=e_part_avg,
        e_part_max=e_part_max,
        e_comp_radius_avg=e_radius_avg,
        e_comp_radius_max=e_radius_max,
        e_comp_centroid_avg=e_centroid_avg,
        e_comp_centroid_max=e_centroid_max,
        f_n=f_n,
        f_p=f_p,
        time_registration=time_registration,
        time_global=time_global,
        time_part=time_part,
        time_feature=time_feature,
        time_total=time_total,
        scan_points=len(scan),
        outliers_removed=removed,
        registration_iterations=result.iterations,
        registration_converged=result.converged,
        primitive_rows=primitive_rows,
        circle_rows=circle_rows,
        config=config,
        scan_checksum=scan_checksum,
        mesh_checksum=mesh_checksum,
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        emit_report(report, out_dir / "report.txt", "structured")
        emit_report(report, out_dir / "report_human.txt", "human")
        if dump_segments:
            labels = refined.labels()
            meshio.save_point_cloud(out_dir / "segments.ply", enriched,
                                    ascii_mode=ascii_output, colors=_label_colors(labels))
        if dump_edges:
            if len(edge_idx):
                meshio.save_point_cloud(out_dir / "edges.ply", enriched.select(edge_idx),
                                        ascii_mode=ascii_output)
        if dump_circles:
            write_circles_table(out_dir / "circles.txt", fitted, circle_counts)
            if fitted:
                pts_all = []
                edges_all = []
                offset = 0
                for c in fitted:
                    ring, ring_edges = c.ring()
                    pts_all.append(ring)
                    edges_all.append(ring_edges + offset)
                    offset += len(ring)
                meshio.save_polylines(out_dir / "circles.ply", np.vstack(pts_all),
                                      np.vstack(edges_all), ascii_mode=ascii_output)
    return report


def _shape_params(shape) -> str:
    if isinstance(shape, prim.Plane):
        n = shape.normal
        return f"normal {n[0]:.6g} {n[1]:.6g} {n[2]:.6g} offset {shape.offset:.6g}"
    if isinstance(shape, prim.Sphere):
        c = shape.center
        return f"center {c[0]:.6g} {c[1]:.6g} {c[2]:.6g} radius {shape.radius:.6g}"
    if isinstance(shape, prim.Cylinder):
        p, a = shape.point, shape.axis
        return (f"point {p[0]:.6g} {p[1]:.6g} {p[2]:.6g} "
                f"axis {a[0]:.6g} {a[1]:.6g} {a[2]:.6g} radius {shape.radius:.6g}")
    p, a = shape.apex, shape.axis
    return (f"apex {p[0]:.6g} {p[1]:.6g} {p[2]:.6g} "
            f"axis {a[0]:.6g} {a[1]:.6g} {a[2]:.6g} half_angle {shape.half_angle:.6g}")


def _derive_reference_circles(mesh: TriangleMesh, cad_samples: PointCloud,
                              config: PipelineConfig) -> list[feat.Circle3D]:
    """Detect the CAD model's own circular rims from its sampled surface."""
    cap = 100_000
    reference_cloud = cad_samples
    if len(cad_samples) > cap:
        stride = int(np.ceil(len(cad_samples) / cap))
        reference_cloud = cad_samples.select(np.arange(0, len(cad_samples), stride))
    enriched = estimate_normals_and_curvature(reference_cloud, k=config.normals_k)
    radius = config.tensor_radius_factor * median_spacing(enriched.points)
    edge_idx = feat.detect_edge_points(
        enriched, radius=radius, threshold=config.edge_threshold, sigma=config.tensor_sigma)
    if len(edge_idx) < 3:
        return []
    params = replace(config.mcfs_params(), seed=config.seed + 1)
    try:
        labeling = feat.mcfs(enriched.points[edge_idx], params)
    except ValueError:
        return []
    return labeling.circles


# ---------------------------------------------------------------------------
# Synthetic scene output (CLI support)
# ---------------------------------------------------------------------------

def write_scene(scene: SyntheticScene, out_dir: str | Path, ascii_output: bool = False) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meshio.save_point_cloud(out_dir / "scan.ply", scene.cloud, ascii_mode=ascii_output)
    meshio.save_mesh(out_dir / "mesh.ply", scene.mesh, ascii_mode=ascii_output)
    np.savetxt(out_dir / "labels.txt", scene.truth.labels, fmt="%d")
    write_circles_table(out_dir / "truth_circles.txt", scene.truth.circles)
    np.savetxt(out_dir / "truth_transform.txt", scene.truth.transform.as_matrix(), fmt="%.12g")


__all__ = [
    "AssessmentReport",
    "PipelineConfig",
    "StageError",
    "emit_report",
    "generate_synthetic_scene",
    "global_error",
    "parse_report",
    "parse_scene_spec",
    "read_circles_table",
    "report_fields",
    "run_pipeline",
    "write_circles_table",
    "write_scene",
]
