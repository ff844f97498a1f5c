"""Phantom benchmark: ours vs ISS vs Harris vs SIFT, RMSE and timing.

Each method supplies keypoint clouds for coarse ICP; fine ICP then runs on
the segmented full clouds.  Timings wrap the registration calls only;
keypoint extraction is reported separately.  A failing method is recorded
in its report row, never raised out of the benchmark.
"""

from __future__ import annotations

import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import depthio, keypoints, registration, surface
from .errors import PipelineError
from .geometry import PointCloud, RigidTransform
from .phantom import PhantomData, PhantomSpec, VOLUME_ISO, generate_phantom

METHODS = ("ours", "iss", "harris", "sift")

CSV_COLUMNS = ("method", "src_features", "tgt_features", "coarse_rmse_mm",
               "fine_rmse_mm", "t_coarse_s", "t_fine_s", "t_total_s",
               "converged", "t_extract_s", "error")


@dataclass(frozen=True)
class BenchRow:
    method: str
    src_features: int = 0
    tgt_features: int = 0
    coarse_rmse_mm: float = math.nan
    fine_rmse_mm: float = math.nan
    t_coarse_s: float = 0.0
    t_fine_s: float = 0.0
    converged: bool = False
    t_extract_s: float = 0.0
    error: str = ""
    fine_history: tuple = ()

    @property
    def t_total_s(self) -> float:
        return self.t_coarse_s + self.t_fine_s

    @property
    def failed(self) -> bool:
        return bool(self.error)


@dataclass(frozen=True)
class BenchReport:
    rows: tuple
    trials: int
    aggregation: str = "mean"

    def row(self, method: str) -> BenchRow:
        for r in self.rows:
            if r.method == method:
                return r
        raise KeyError(method)


def run_comparison(spec: PhantomSpec, perturbation: RigidTransform,
                   methods=("ours",), trials: int = 1,
                   jitter_px: float = 1.0, source_margin_mm: float = 10.0,
                   target_margin_mm: float = 30.0,
                   parallel_trials: bool = False) -> BenchReport:
    """Run the full pipeline for each method on one phantom configuration.

    perturbation is the rigid offset composed onto the base camera pose;
    registration must recover its effect.  Times are means over trials;
    RMSE columns are deterministic for a fixed spec seed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    data = generate_phantom(spec, ground_truth=perturbation)
    ctx = _prepare_clouds(spec, data, jitter_px, source_margin_mm, target_margin_mm)
    rows = []
    for method in sorted(methods, key=METHODS.index):
        rows.append(_run_method(method, ctx, trials, parallel_trials))
    return BenchReport(rows=tuple(rows), trials=trials)


@dataclass
class _Context:
    cam_cloud: PointCloud         # segmented camera cloud
    ct_cloud: PointCloud          # segmented CT cloud
    cam_cloud_normals: PointCloud = None
    ours_src: PointCloud = None
    ours_tgt: PointCloud = None
    ours_extract_s: float = 0.0


def _prepare_clouds(spec, data: PhantomData, jitter_px, source_margin,
                    target_margin) -> _Context:
    rng = np.random.default_rng([spec.seed, 7])

    t0 = time.perf_counter()
    cam_lm = depthio.select_eyes_nose(data.camera_landmarks)
    cam_kp, _ = depthio.lift_landmarks(data.depth_frame, cam_lm)

    mesh = surface.marching_cubes(data.volume, VOLUME_ISO)
    # the face looks toward -z in the CT frame (toward the zero-offset camera)
    img = surface.render_normal_angle_image(mesh, view_axis=(0.0, 0.0, -1.0),
                                            resolution_mm_per_px=1.0)
    # stand-in for the external 2D landmark detector: analytic landmark
    # pixels with +-1 px jitter
    from .phantom import analytic_landmarks
    indices, lm_world = analytic_landmarks(spec)
    entries = []
    for idx, pt in zip(indices, lm_world):
        u, v = img.project(pt)
        u = min(max(u + rng.uniform(-jitter_px, jitter_px), 0.0), img.width - 1e-6)
        v = min(max(v + rng.uniform(-jitter_px, jitter_px), 0.0), img.height - 1e-6)
        entries.append((idx, u, v))
    ct_lm = depthio.LandmarkSet(image_width=img.width, image_height=img.height,
                                landmarks=tuple(entries))
    ct_kp, _ = surface.backproject_landmarks(img, ct_lm)
    extract_s = time.perf_counter() - t0

    cam_full = depthio.depth_to_cloud(data.depth_frame)
    ct_full = surface.mesh_to_cloud(mesh)
    # the camera patch sits strictly inside the CT patch so every source
    # point has a true counterpart; full-overlap ICP is unbiased that way
    cam_seg = depthio.segment_region(cam_full, cam_kp, margin_mm=source_margin)
    ct_seg = depthio.segment_region(ct_full, ct_kp, margin_mm=target_margin)
    return _Context(cam_cloud=cam_seg, ct_cloud=ct_seg,
                    ours_src=cam_kp, ours_tgt=ct_kp,
                    ours_extract_s=extract_s)


def _method_keypoints(method: str, ctx: _Context):
    """Keypoint clouds (source, target) for one method, timing included."""
    if method == "ours":
        return ctx.ours_src, ctx.ours_tgt, ctx.ours_extract_s
    t0 = time.perf_counter()
    if ctx.cam_cloud_normals is None and method in ("harris", "sift"):
        ctx.cam_cloud_normals = surface.estimate_normals(
            ctx.cam_cloud, k=20, viewpoint=(0.0, 0.0, 0.0))
    cam = ctx.cam_cloud_normals if method in ("harris", "sift") else ctx.cam_cloud
    params = keypoints.KeypointParams()
    detector = {"iss": keypoints.iss_keypoints,
                "harris": keypoints.harris3d_keypoints,
                "sift": keypoints.sift3d_keypoints}[method]
    src = detector(cam, params)
    tgt = detector(ctx.ct_cloud, params)
    return src, tgt, time.perf_counter() - t0


def _run_method(method: str, ctx: _Context, trials: int,
                parallel_trials: bool) -> BenchRow:
    try:
        src_kp, tgt_kp, extract_s = _method_keypoints(method, ctx)
    except (PipelineError, ValueError) as e:
        return BenchRow(method=method, error=str(e))
    try:
        def one_trial(_):
            t0 = time.perf_counter()
            coarse = registration.coarse_register(src_kp, tgt_kp)
            t_c = time.perf_counter() - t0
            t0 = time.perf_counter()
            fine = registration.fine_register(ctx.cam_cloud, ctx.ct_cloud,
                                              coarse.transform)
            t_f = time.perf_counter() - t0
            return coarse, fine, t_c, t_f

        if parallel_trials and trials > 1:
            with ThreadPoolExecutor(max_workers=min(trials, 4)) as ex:
                results = list(ex.map(one_trial, range(trials)))
        else:
            results = [one_trial(k) for k in range(trials)]
        coarse, fine, _, _ = results[0]
        t_c = float(np.mean([r[2] for r in results]))
        t_f = float(np.mean([r[3] for r in results]))
        coarse_rmse = registration.evaluate_rmse(ctx.cam_cloud, ctx.ct_cloud,
                                                 coarse.transform)
        fine_rmse = registration.evaluate_rmse(ctx.cam_cloud, ctx.ct_cloud,
                                               fine.transform)
        return BenchRow(method=method, src_features=len(src_kp),
                        tgt_features=len(tgt_kp),
                        coarse_rmse_mm=coarse_rmse, fine_rmse_mm=fine_rmse,
                        t_coarse_s=t_c, t_fine_s=t_f,
                        converged=coarse.converged and fine.converged,
                        t_extract_s=extract_s,
                        fine_history=fine.per_iteration_rmse)
    except (PipelineError, ValueError) as e:
        return BenchRow(method=method, src_features=len(src_kp),
                        tgt_features=len(tgt_kp), t_extract_s=extract_s,
                        error=str(e))


# ---------------------------------------------------------------------------
# serialization

def _fmt(x: float) -> str:
    return f"{x:.9g}"


def report_emit(r: BenchReport, format: str = "csv") -> str:
    """Serialize a report as json, csv, or markdown."""
    if format == "json":
        doc = {"trials": r.trials, "aggregation": r.aggregation,
               "rows": [_row_dict(row) for row in r.rows]}
        return json.dumps(doc, indent=2)
    if format == "csv":
        out = io.StringIO()
        out.write(",".join(CSV_COLUMNS) + "\n")
        for row in r.rows:
            d = _row_dict(row)
            cells = []
            for c in CSV_COLUMNS:
                v = d[c]
                if isinstance(v, bool):
                    cells.append("true" if v else "false")
                elif isinstance(v, float):
                    cells.append(_fmt(v))
                else:
                    cells.append(str(v))
            out.write(",".join(cells) + "\n")
        return out.getvalue()
    if format == "markdown":
        lines = ["| " + " | ".join(CSV_COLUMNS) + " |",
                 "|" + "---|" * len(CSV_COLUMNS)]
        for row in r.rows:
            d = _row_dict(row)
            cells = [_fmt(d[c]) if isinstance(d[c], float) and not isinstance(d[c], bool)
                     else str(d[c]) for c in CSV_COLUMNS]
            lines.append("| " + " | ".join(cells) + " |")
        lines.append("")
        lines.append(f"trials: {r.trials} ({r.aggregation})")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {format!r}")


def _row_dict(row: BenchRow) -> dict:
    return {"method": row.method, "src_features": row.src_features,
            "tgt_features": row.tgt_features,
            "coarse_rmse_mm": row.coarse_rmse_mm,
            "fine_rmse_mm": row.fine_rmse_mm,
            "t_coarse_s": row.t_coarse_s, "t_fine_s": row.t_fine_s,
            "t_total_s": row.t_total_s, "converged": row.converged,
            "t_extract_s": row.t_extract_s, "error": row.error}


def report_parse(text: str, format: str = "csv") -> BenchReport:
    """Inverse of report_emit for json and csv."""
    if format == "json":
        doc = json.loads(text)
        rows = tuple(_row_from_dict(d) for d in doc["rows"])
        return BenchReport(rows=rows, trials=int(doc["trials"]),
                           aggregation=doc.get("aggregation", "mean"))
    if format == "csv":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = lines[0].split(",")
        rows = []
        for ln in lines[1:]:
            cells = ln.split(",")
            d = dict(zip(header, cells))
            rows.append(_row_from_dict({
                "method": d["method"],
                "src_features": int(d["src_features"]),
                "tgt_features": int(d["tgt_features"]),
                "coarse_rmse_mm": float(d["coarse_rmse_mm"]),
                "fine_rmse_mm": float(d["fine_rmse_mm"]),
                "t_coarse_s": float(d["t_coarse_s"]),
                "t_fine_s": float(d["t_fine_s"]),
                "converged": d["converged"] == "true"
                             if d["converged"] in ("true", "false")
                             else bool(d["converged"]),
                "t_extract_s": float(d.get("t_extract_s", 0.0)),
                "error": d.get("error", ""),
            }))
        return BenchReport(rows=tuple(rows), trials=1)
    raise ValueError(f"unknown report format {format!r}")


def _row_from_dict(d: dict) -> BenchRow:
    return BenchRow(method=d["method"], src_features=int(d["src_features"]),
                    tgt_features=int(d["tgt_features"]),
                    coarse_rmse_mm=float(d["coarse_rmse_mm"]),
                    fine_rmse_mm=float(d["fine_rmse_mm"]),
                    t_coarse_s=float(d["t_coarse_s"]),
                    t_fine_s=float(d["t_fine_s"]),
                    converged=bool(d["converged"]),
                    t_extract_s=float(d.get("t_extract_s", 0.0)),
                    error=d.get("error", ""))
