"""Command-line interface.

Exit codes: 0 success, 1 input or usage error, 2 computation error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import bench as bench_mod
from . import depthio, keypoints, ply, registration, surface
from .errors import InputError, PipelineError
from .geometry import RigidTransform
from .phantom import PhantomSpec, VOLUME_ISO, generate_phantom

# usage errors are input errors in this tool's exit-code contract
click.UsageError.exit_code = 1


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guarded(fn):
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (InputError, FileNotFoundError, IsADirectoryError,
                json.JSONDecodeError) as e:
            _fail(1, str(e))
        except (PipelineError, ValueError) as e:
            _fail(2, str(e))
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.option("--seed", default=42, show_default=True, help="Seed for all randomness.")
@click.option("--threads", default=1, show_default=True,
              help="Cap on internal parallelism; outputs are thread-count invariant.")
@click.option("--verbose", is_flag=True, help="Chatty progress output.")
@click.pass_context
def main(ctx, seed, threads, verbose):
    """Facial depth-image to CT-surface registration toolkit."""
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, threads=threads, verbose=verbose)


@main.command("depth2cloud")
@click.argument("depth_pgm", type=click.Path())
@click.option("--intrinsics", type=click.Path(), default=None,
              help="Intrinsics sidecar (default: <frame>.intrinsics.json).")
@click.option("--out", required=True, type=click.Path(), help="Output PLY.")
@_guarded
def cmd_depth2cloud(depth_pgm, intrinsics, out):
    """Back-project a 16-bit PGM depth frame into a point cloud."""
    frame = depthio.read_depth_frame(depth_pgm, intrinsics)
    cloud = depthio.depth_to_cloud(frame)
    ply.write_cloud(out, cloud)
    click.echo(f"{out}: {len(cloud)} points")


@main.command("extract")
@click.argument("volume_raw", type=click.Path())
@click.option("--meta", type=click.Path(), default=None,
              help="Volume sidecar (default: <volume>.volume.json).")
@click.option("--iso", default=VOLUME_ISO, show_default=True, help="Iso value.")
@click.option("--out", required=True, type=click.Path(), help="Output mesh PLY.")
@_guarded
def cmd_extract(volume_raw, meta, iso, out):
    """Extract the skin isosurface from a raw scalar volume."""
    vol = surface.read_volume(volume_raw, meta)
    mesh = surface.marching_cubes(vol, iso)
    ply.write_mesh(out, mesh.vertices, mesh.normals, mesh.triangles)
    click.echo(f"{out}: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")


@main.command("render")
@click.argument("mesh_ply", type=click.Path())
@click.option("--axis", default="0,0,1", show_default=True,
              help="View axis as x,y,z.")
@click.option("--res", default=1.0, show_default=True, help="mm per pixel.")
@click.option("--out", required=True, type=click.Path(),
              help="Output PGM (lookup sidecar written next to it).")
@_guarded
def cmd_render(mesh_ply, axis, res, out):
    """Render a normal-angle image of a mesh for 2D landmark detection."""
    v, n, f = ply.read_mesh(mesh_ply)
    if n is None:
        raise InputError(f"{mesh_ply}: mesh has no vertex normals")
    n = n / np.linalg.norm(n, axis=1)[:, None]
    mesh = surface.TriangleMesh(vertices=v, triangles=f, normals=n)
    try:
        ax = np.array([float(t) for t in axis.split(",")], dtype=np.float64)
        if ax.shape != (3,):
            raise ValueError
    except ValueError:
        raise InputError(f"bad --axis value {axis!r}") from None
    norm = np.linalg.norm(ax)
    if norm == 0:
        raise InputError("--axis must be nonzero")
    img = surface.render_normal_angle_image(mesh, ax / norm, res)
    surface.write_normal_angle_image(out, img)
    click.echo(f"{out}: {img.width}x{img.height}")


@main.command("keypoints")
@click.argument("cloud_ply", type=click.Path())
@click.option("--method", type=click.Choice(["iss", "harris", "sift"]), required=True)
@click.option("--out", required=True, type=click.Path(), help="Output keypoint PLY.")
# ISS
@click.option("--iss-salient-radius", default=0.0, help="mm; 0 = 6x mean spacing.")
@click.option("--iss-nonmax-radius", default=0.0, help="mm; 0 = 3x mean spacing.")
@click.option("--iss-gamma21", default=0.975, show_default=True)
@click.option("--iss-gamma32", default=0.975, show_default=True)
@click.option("--iss-min-neighbors", default=5, show_default=True)
# Harris
@click.option("--harris-radius", default=0.0, help="mm; 0 = 6x mean spacing.")
@click.option("--harris-threshold", default=1e-4, show_default=True)
@click.option("--harris-k", default=0.04, show_default=True)
# SIFT
@click.option("--sift-min-scale", default=0.0, help="mm; 0 = 2x mean spacing.")
@click.option("--sift-octaves", default=4, show_default=True)
@click.option("--sift-scales-per-octave", default=4, show_default=True)
@click.option("--sift-contrast-threshold", default=5e-5, show_default=True)
@_guarded
def cmd_keypoints(cloud_ply, method, out, iss_salient_radius, iss_nonmax_radius,
                  iss_gamma21, iss_gamma32, iss_min_neighbors, harris_radius,
                  harris_threshold, harris_k, sift_min_scale, sift_octaves,
                  sift_scales_per_octave, sift_contrast_threshold):
    """Detect 3D keypoints on a point cloud."""
    cloud = ply.read_cloud(cloud_ply)
    params = keypoints.KeypointParams(
        iss=keypoints.IssParams(salient_radius=iss_salient_radius,
                                nonmax_radius=iss_nonmax_radius,
                                gamma_21=iss_gamma21, gamma_32=iss_gamma32,
                                min_neighbors=iss_min_neighbors),
        harris=keypoints.HarrisParams(radius=harris_radius,
                                      response_threshold=harris_threshold,
                                      k_constant=harris_k),
        sift=keypoints.SiftParams(min_scale=sift_min_scale, octaves=sift_octaves,
                                  scales_per_octave=sift_scales_per_octave,
                                  contrast_threshold=sift_contrast_threshold))
    if method != "iss" and cloud.normals is None:
        cloud = surface.estimate_normals(cloud, k=20)
    detector = {"iss": keypoints.iss_keypoints,
                "harris": keypoints.harris3d_keypoints,
                "sift": keypoints.sift3d_keypoints}[method]
    kp = detector(cloud, params)
    ply.write_cloud(out, kp)
    click.echo(f"{out}: {len(kp)} keypoints")


@main.command("register")
@click.argument("source_ply", type=click.Path())
@click.argument("target_ply", type=click.Path())
@click.option("--method", type=click.Choice(list(bench_mod.METHODS)), default="ours",
              show_default=True)
@click.option("--src-landmarks", type=click.Path(), default=None,
              help="2D landmark JSON for the source (with --src-frame).")
@click.option("--src-frame", type=click.Path(), default=None,
              help="Depth PGM the source landmarks refer to.")
@click.option("--src-keypoints", type=click.Path(), default=None,
              help="Precomputed source keypoint PLY (method ours).")
@click.option("--tgt-keypoints", type=click.Path(), default=None,
              help="Precomputed target keypoint PLY (method ours).")
@click.option("--out", required=True, type=click.Path(), help="Result JSON.")
@_guarded
def cmd_register(source_ply, target_ply, method, src_landmarks, src_frame,
                 src_keypoints, tgt_keypoints, out):
    """Coarse (keypoint) then fine (full cloud) rigid registration."""
    source = ply.read_cloud(source_ply)
    target = ply.read_cloud(target_ply)
    if method == "ours":
        if src_keypoints:
            src_kp = ply.read_cloud(src_keypoints)
        elif src_landmarks and src_frame:
            frame = depthio.read_depth_frame(src_frame)
            lm = depthio.select_eyes_nose(depthio.read_landmarks(src_landmarks))
            src_kp, _ = depthio.lift_landmarks(frame, lm)
        else:
            raise InputError("method ours needs --src-keypoints or "
                             "--src-landmarks with --src-frame")
        if not tgt_keypoints:
            raise InputError("method ours needs --tgt-keypoints")
        tgt_kp = ply.read_cloud(tgt_keypoints)
    else:
        params = keypoints.KeypointParams()
        detector = {"iss": keypoints.iss_keypoints,
                    "harris": keypoints.harris3d_keypoints,
                    "sift": keypoints.sift3d_keypoints}[method]
        src_in = source
        tgt_in = target
        if method != "iss":
            if src_in.normals is None:
                src_in = surface.estimate_normals(src_in, k=20)
            if tgt_in.normals is None:
                tgt_in = surface.estimate_normals(tgt_in, k=20)
        src_kp = detector(src_in, params)
        tgt_kp = detector(tgt_in, params)
    coarse = registration.coarse_register(src_kp, tgt_kp)
    fine = registration.fine_register(source, target, coarse.transform)
    doc = {"method": method, "coarse": coarse.to_dict(), "fine": fine.to_dict()}
    Path(out).write_text(json.dumps(doc, indent=2))
    click.echo(f"{out}: coarse rmse {coarse.rmse:.4f} mm, "
               f"fine rmse {fine.rmse:.4f} mm")


@main.command("phantom")
@click.option("--spec", type=click.Path(), default=None,
              help="Phantom spec JSON (defaults to the built-in spec).")
@click.option("--outdir", required=True, type=click.Path(), help="Output directory.")
@click.pass_context
@_guarded
def cmd_phantom(ctx, spec, outdir):
    """Generate phantom artifacts (volume, depth frame, landmarks)."""
    pspec = PhantomSpec.load_json(spec) if spec else PhantomSpec(seed=ctx.obj["seed"])
    data = generate_phantom(pspec)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    surface.write_volume(outdir / "ct", data.volume)
    depthio.write_depth_frame(outdir / "depth", data.depth_frame)
    depthio.write_landmarks(outdir / "landmarks.json", data.camera_landmarks)
    ply.write_cloud(outdir / "surface_landmarks.ply", data.surface_landmarks_3d)
    pspec.save_json(outdir / "phantom.json")
    (outdir / "ground_truth.json").write_text(
        json.dumps(data.ground_truth.to_dict(), indent=2))
    click.echo(f"phantom written to {outdir}")


@main.command("bench")
@click.option("--spec", type=click.Path(), default=None,
              help="Phantom spec JSON (defaults to the built-in spec).")
@click.option("--methods", default="ours,iss", show_default=True,
              help="Comma list from: ours,iss,harris,sift.")
@click.option("--trials", default=3, show_default=True)
@click.option("--rot-deg", default=15.0, show_default=True,
              help="Perturbation rotation magnitude.")
@click.option("--trans-mm", default=25.0, show_default=True,
              help="Perturbation translation magnitude.")
@click.option("--out", required=True, type=click.Path(),
              help="Report path; format from extension (.csv/.json/.md).")
@click.option("--figures/--no-figures", default=True, show_default=True,
              help="Render matplotlib figures next to the report.")
@click.pass_context
@_guarded
def cmd_bench(ctx, spec, methods, trials, rot_deg, trans_mm, out, figures):
    """Run the ours-vs-baselines comparison on a phantom."""
    pspec = PhantomSpec.load_json(spec) if spec else PhantomSpec(seed=ctx.obj["seed"])
    method_list = [m.strip() for m in methods.split(",") if m.strip()]
    for m in method_list:
        if m not in bench_mod.METHODS:
            raise InputError(f"unknown method {m!r}")
    perturb = perturbation_transform(rot_deg, trans_mm, ctx.obj["seed"])
    report = bench_mod.run_comparison(pspec, perturb, methods=method_list,
                                      trials=trials,
                                      parallel_trials=ctx.obj["threads"] > 1)
    out = Path(out)
    fmt = {".json": "json", ".md": "markdown"}.get(out.suffix, "csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(bench_mod.report_emit(report, fmt))
    click.echo(f"report written to {out}")
    if figures:
        from .plotting import report_figures
        for p in report_figures(report, out.parent / "figures"):
            click.echo(f"figure written to {p}")


def perturbation_transform(rot_deg: float, trans_mm: float, seed: int) -> RigidTransform:
    """Seeded rigid perturbation with the given rotation/translation size."""
    rng = np.random.default_rng([seed, 11])
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    ang = np.radians(rot_deg)
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    R = np.eye(3) + np.sin(ang) * K + (1 - np.cos(ang)) * (K @ K)
    t = rng.normal(size=3)
    t = t / np.linalg.norm(t) * trans_mm
    return RigidTransform(R, t)


if __name__ == "__main__":
    main()
