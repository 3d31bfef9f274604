"""Command-line entry point: ``artifit <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence
(artifacts are still written). Errors go to standard error prefixed with
``artifit: error:``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .body import ParameterError, make_test_body, pose_body
from .geometry import EmptyInputError, TopologyError, marching_cubes
from .kinematics import InvalidRotationError, JointLimitError, ModelError, PartPose
from .voxel import GridSpec, ShapeError, multires_voxelize, voxelize

PROG = "artifit"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 1, 2, 3
THREADS_ENV = "ARTIFIT_THREADS"

log = logging.getLogger(PROG)

DEFAULTS = {
    # pose fitting
    "step_size": 1e-2, "max_iters": 500, "tol": 1e-6, "lambda_z": 0.1, "lambda_r": 1.0, "variant": "adam",
    "patience": 20, "restarts": 0, "seed": 0,
    # voxelization and evaluation
    "resolution": 64, "extent": 2.0, "mode": "solid", "samples": 10_000, "cd_pathway": "mesh",
    # penetration removal
    "lambda_reg": 0.1, "rounds": 5, "penetration_step_size": 5e-3, "penetration_max_iters": 500,
    # alignment
    "neighbors": 20, "align_max_iters": 50, "accelerate": True, "max_lag": 100, "absolute": False,
    "coarse_grid_steps": 5,
}


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


DATA_ERRORS = (io.ParseError, io.FormatError, ParameterError, ModelError, ShapeError, EmptyInputError,
               TopologyError, InvalidRotationError, JointLimitError, OSError, KeyError, ValueError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def bundled_data() -> Path:
    return Path(str(resources.files("artifit") / "data"))


# ---------------------------------------------------------------------------
# Configuration


def effective_config(args) -> dict:
    """Built-in defaults, overridden by the config file, overridden by flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        loaded = io.read_json(path)
        if not isinstance(loaded, dict):
            raise DataError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(loaded)
    for key in ("seed", "resolution", "lambda_z", "max_iters"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if int(cfg["seed"]) < 0 or int(cfg["seed"]) >= 2 ** 64:
        raise UsageError("--seed must be an unsigned 64-bit integer")
    if int(cfg["resolution"]) < 1:
        raise UsageError("--resolution must be positive")
    return cfg


def _fit_config(cfg: dict):
    from .optimizer import FitConfig
    names = {f.name for f in fields(FitConfig)}
    return FitConfig(**{k: v for k, v in cfg.items() if k in names})


def _require(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise UsageError(f"input not found: {p}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    if out.exists() and not out.is_dir():
        raise UsageError(f"--out is not a directory: {out}")
    return out


def _meta(cfg: dict, command: str, **extra) -> dict:
    from . import __version__
    from .kernels import BACKEND
    return {"command": command, "config": cfg, "version": __version__, "kernel_backend": BACKEND, **extra}


# ---------------------------------------------------------------------------
# Subcommands


def _load_body(params_path, asset_path):
    model = io.load_body_asset(asset_path) if asset_path else make_test_body()
    params = io.load_body_params(params_path)
    return model, params


def _human_grids(body, spec: GridSpec):
    """Multi-resolution human occupancy whose finest level matches ``spec``."""
    res = spec.resolution
    if len(set(res)) != 1 or len(set(np.round(spec.extent, 9))) != 1:
        raise DataError("the target grid must be a cube with equal resolution on every axis")
    r = res[0]
    levels = 1
    while levels < 4 and r % 2 == 0:
        r //= 2
        levels += 1
    center = spec.origin + spec.extent / 2
    return multires_voxelize(body, r, center=center, extent=float(spec.extent[0]), levels=levels)


def _coarse_grid_init(objective, spec: GridSpec, steps: int, n_dof: int) -> PartPose:
    """Best identity-rotation translation on a regular grid over the target cube."""
    axes = [spec.origin[k] + spec.extent[k] * (np.arange(steps) + 0.5) / steps for k in range(3)]
    best, best_f = None, np.inf
    for t in np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3):
        x = np.concatenate([[1.0, 0, 0, 0, 1, 0], t, np.zeros(n_dof)])
        f, _ = objective(x)
        if f < best_f:
            best, best_f = t, f
    return PartPose(np.array([1.0, 0, 0, 0, 1, 0]), best)


def cmd_fit(args, cfg) -> int:
    from .optimizer import PoseObjective, fit_object_pose
    from .prior import AnalyticEncoder, ReferenceStats

    data = bundled_data()
    model_path = Path(args.model or data / "chair.urdf")
    target_path = Path(args.target or data / "target.voxg")
    body_path = Path(args.body or data / "body_params.json")
    asset_path = args.body_asset or (data / "body.npz" if args.body is None else None)
    stats_path = args.prior_stats or (data / "prior_stats.json" if args.model is None else None)
    init = args.init or str(data / "init_pose.json")
    _require(model_path, target_path, body_path, asset_path, stats_path)
    if init != "coarse-grid":
        _require(init)
    out = _out_dir(args)

    model = io.load_kinematic_xml(model_path)
    meshes = io.load_part_meshes(model, model_path.parent)
    target = io.load_voxel(target_path)
    body_model, params = _load_body(body_path, asset_path)
    stats = ReferenceStats.from_json(Path(stats_path).read_text()) if stats_path else ReferenceStats.neutral()
    fcfg = _fit_config(cfg)
    spec = target.spec
    from .fixtures import part_grids as _part_grids
    grids = _part_grids(model, meshes, spec)
    human = _human_grids(pose_body(body_model, params), spec) if fcfg.lambda_z > 0 else None
    prior = AnalyticEncoder(stats) if fcfg.lambda_z > 0 else None

    init_state = None
    if init == "coarse-grid":
        obj = PoseObjective(target, model, grids, human, prior, fcfg.lambda_r, fcfg.lambda_z)
        root = _coarse_grid_init(obj, spec, int(cfg["coarse_grid_steps"]), model.n_dof)
    else:
        root, init_state = io.pose_from_dict(io.read_json(init))
    result = fit_object_pose(target, model, grids, root, human=human, prior=prior, cfg=fcfg, init_state=init_state)

    doc = result.to_dict()
    doc["metadata"] = _meta(cfg, "fit", inputs={"model": str(model_path), "target": str(target_path),
                                                "body": str(body_path), "init": str(init)})
    io.write_json(out / "fit_result.json", doc)
    from .fixtures import posed_object_mesh
    io.save_mesh(out / "object.obj", posed_object_mesh(model, meshes, result.root, result.state))
    if args.target_mesh:
        io.save_mesh(out / "target_mc.obj", marching_cubes(target))
    log.info("objective %.6g after %d iterations, converged=%s", result.objective, result.iterations,
             result.converged)
    if not result.converged:
        print(f"{PROG}: error: fit did not converge in {result.iterations} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_align_space(args, cfg) -> int:
    from .align import DegenerateGeometryError, GicpConfig, gicp_align
    _require(args.source, args.target)
    out = _out_dir(args)
    src, dst = io.load_points(args.source), io.load_points(args.target)
    gcfg = GicpConfig(neighbors=int(cfg["neighbors"]), max_iters=int(cfg["align_max_iters"]),
                      accelerate=bool(cfg["accelerate"]))
    try:
        res = gicp_align(src, dst, gcfg)
    except DegenerateGeometryError as e:
        raise DataError(str(e)) from None
    doc = res.to_dict()
    doc["metadata"] = _meta(cfg, "align-space")
    io.write_json(out / "transform.json", doc)
    if not res.converged:
        print(f"{PROG}: error: alignment did not converge in {res.iterations} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_align_time(args, cfg) -> int:
    from .align import UndefinedCorrelationError, temporal_align
    _require(args.a, args.b)
    out = _out_dir(args)
    A, B = io.load_sequences(args.a), io.load_sequences(args.b)
    if A.shape[1] != B.shape[1]:
        raise DataError(f"joint counts differ: {A.shape[1]} vs {B.shape[1]}")
    max_lag = int(args.max_lag if args.max_lag is not None else cfg["max_lag"])
    try:
        res = temporal_align(A, B, max_lag, bool(cfg["absolute"]))
    except UndefinedCorrelationError as e:
        raise DataError(str(e)) from None
    doc = res.to_dict()
    doc["metadata"].update(_meta(cfg, "align-time", max_lag=max_lag))
    io.write_json(out / "lag.json", doc)
    return EXIT_OK


def cmd_voxelize(args, cfg) -> int:
    _require(args.mesh)
    out = _out_dir(args)
    mesh = io.load_mesh(args.mesh)
    center = np.asarray(args.center, dtype=np.float64) if args.center else np.zeros(3)
    spec = GridSpec.cube(int(cfg["resolution"]), center, float(cfg["extent"]))
    grid, dropped = voxelize(mesh, spec, cfg["mode"])
    if dropped:
        log.warning("%d samples fell outside the grid", dropped)
    io.save_voxel(out / (Path(args.mesh).stem + ".voxg"), grid)
    return EXIT_OK


def cmd_mesh(args, cfg) -> int:
    _require(args.grid)
    out = _out_dir(args)
    grid = io.load_voxel(args.grid)
    io.save_mesh(out / (Path(args.grid).stem + ".obj"), marching_cubes(grid, args.iso))
    return EXIT_OK


def cmd_fix_penetration(args, cfg) -> int:
    from .optimizer import PenetrationConfig, remove_penetration
    _require(args.body, args.object, args.body_asset)
    out = _out_dir(args)
    body_model, params = _load_body(args.body, args.body_asset)
    surface = io.load_points(args.object)
    pcfg = PenetrationConfig(lambda_reg=float(cfg["lambda_reg"]), rounds=int(cfg["rounds"]),
                             step_size=float(cfg["penetration_step_size"]),
                             max_iters=int(cfg["penetration_max_iters"]))
    res = remove_penetration(body_model, params, surface, pcfg)
    doc = {"params": res.params.to_dict(), "depth_before_mm": res.depth_before_mm,
           "depth_after_mm": res.depth_after_mm, "rounds": res.rounds, "converged": res.converged,
           "metadata": _meta(cfg, "fix-penetration")}
    io.write_json(out / "corrected_params.json", doc)
    if not res.converged:
        print(f"{PROG}: error: penetration removal did not converge", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def load_scene(path):
    """Scene from a JSON document naming the model, the pose and optionally a body.

    Keys: ``model`` (kinematic XML, meshes resolved next to it), ``pose``
    (``rotation6d``/``rotation``, ``translation``, ``joint_state``), and
    optional ``body`` (parameter JSON) and ``body_asset``. Relative paths
    are resolved against the scene file.
    """
    from .metrics import Scene
    path = Path(path)
    d = io.read_json(path)
    base = path.parent
    try:
        model_path = base / d["model"]
        pose = d["pose"]
    except KeyError as e:
        raise DataError(f"{path}: scene lacks {e}") from None
    model = io.load_kinematic_xml(model_path)
    meshes = io.load_part_meshes(model, model_path.parent)
    root, state = io.pose_from_dict(pose)
    state = model.zero_state() if state is None else state
    body_mesh = joints = None
    if d.get("body"):
        asset = base / d["body_asset"] if d.get("body_asset") else None
        bm, params = _load_body(base / d["body"], asset)
        posed = pose_body(bm, params)
        body_mesh, joints = posed.mesh(), posed.joints
    return Scene(model, meshes, root, state, body_mesh, joints)


def _eval_frame(job):
    from .metrics import eval_report
    gt_path, est_path, cfg = job
    rep = eval_report(load_scene(gt_path), load_scene(est_path), resolution=int(cfg["resolution"]),
                      samples=int(cfg["samples"]), seed=int(cfg["seed"]), cd_pathway=cfg["cd_pathway"])
    return rep


def _thread_cap() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def cmd_eval(args, cfg) -> int:
    from .metrics import reports_to_csv
    _require(args.gt, args.est)
    out = _out_dir(args)
    gt, est = Path(args.gt), Path(args.est)
    if gt.is_dir() != est.is_dir():
        raise UsageError("--gt and --est must both be files or both be directories")
    if gt.is_dir():
        names = sorted(p.name for p in gt.glob("*.json"))
        missing = [n for n in names if not (est / n).is_file()]
        if missing:
            raise DataError(f"estimate frames missing: {', '.join(missing)}")
        if not names:
            raise DataError(f"no frame JSON files in {gt}")
        jobs = [(gt / n, est / n, cfg) for n in names]
        frames = [Path(n).stem for n in names]
    else:
        jobs = [(gt, est, cfg)]
        frames = [gt.stem]
    workers = min(_thread_cap(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            reports = list(ex.map(_eval_frame, jobs))
    else:
        reports = [_eval_frame(j) for j in jobs]
    io.atomic_write(out / "report.csv", reports_to_csv(reports, frames))
    io.write_json(out / "report.json", {"frames": {f: r.to_dict() for f, r in zip(frames, reports)},
                                        "metadata": _meta(cfg, "eval")})
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _common(p: argparse.ArgumentParser, out_required: bool = True):
    p.add_argument("--config", help="JSON file with configuration keys (flags take precedence)")
    p.add_argument("--seed", type=int, help="random seed (unsigned 64-bit)")
    p.add_argument("--out", required=out_required, default=".", help="output directory")
    p.add_argument("--resolution", type=int, help="grid resolution per axis")
    p.add_argument("--lambda-z", dest="lambda_z", type=float, help="interaction prior weight")
    p.add_argument("--max-iters", dest="max_iters", type=int, help="descent iteration cap")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--quiet", action="store_true", help="only report errors")
    g.add_argument("--verbose", action="store_true", help="debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Articulated object pose fitting and capture post-processing.")
    sub = parser.add_subparsers(dest="command", metavar="<command>", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit", help="fit an articulated object to a target occupancy grid",
                       description="Fit root pose and joint state; inputs default to the bundled chair fixture.")
    _common(p)
    p.add_argument("--model", help="kinematic XML (meshes resolved next to it)")
    p.add_argument("--target", help="target VOXG occupancy container")
    p.add_argument("--body", help="body parameter JSON")
    p.add_argument("--body-asset", dest="body_asset", help="body model NPZ (default: built-in test body)")
    p.add_argument("--prior-stats", dest="prior_stats", help="reference statistics JSON for the prior")
    p.add_argument("--init", help="initial root pose JSON, or 'coarse-grid'")
    p.add_argument("--target-mesh", dest="target_mesh", action="store_true",
                   help="also write the marching-cubes surface of the target")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("align-space", help="rigidly register two PLY point clouds")
    _common(p)
    p.add_argument("source", help="source PLY")
    p.add_argument("target", help="target PLY")
    p.set_defaults(func=cmd_align_space)

    p = sub.add_parser("align-time", help="frame offset between two joint-height CSV files")
    _common(p)
    p.add_argument("a", help="reference CSV, one column per joint")
    p.add_argument("b", help="CSV to align, same columns")
    p.add_argument("--max-lag", dest="max_lag", type=int, help="largest lag searched (frames)")
    p.set_defaults(func=cmd_align_time)

    p = sub.add_parser("voxelize", help="mesh to VOXG occupancy container")
    _common(p)
    p.add_argument("mesh", help="OBJ or PLY mesh")
    p.add_argument("--center", type=float, nargs=3, metavar=("X", "Y", "Z"), help="cube centre (m)")
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("mesh", help="VOXG container to marching-cubes OBJ")
    _common(p)
    p.add_argument("grid", help="VOXG container")
    p.add_argument("--iso", type=float, default=0.5, help="iso level")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("fix-penetration", help="push a body out of an object point cloud")
    _common(p)
    p.add_argument("body", help="body parameter JSON")
    p.add_argument("object", help="object surface PLY")
    p.add_argument("--body-asset", dest="body_asset", help="body model NPZ (default: built-in test body)")
    p.set_defaults(func=cmd_fix_penetration)

    p = sub.add_parser("eval", help="evaluation metrics between ground-truth and estimated scenes")
    _common(p)
    p.add_argument("--gt", required=True, help="scene JSON or directory of per-frame scene JSON files")
    p.add_argument("--est", required=True, help="matching estimate scene(s)")
    p.set_defaults(func=cmd_eval)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    level = logging.ERROR if args.quiet else logging.DEBUG if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format=f"{PROG}: %(levelname)s: %(message)s", force=True)
    try:
        cfg = effective_config(args)
        return args.func(args, cfg)
    except UsageError as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DATA_ERRORS as e:
        print(f"{PROG}: error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
