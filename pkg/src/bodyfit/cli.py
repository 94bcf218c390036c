"""Command-line entry point.

    bodyfit ingest VOLUME... [-o cloud.ply]
    bodyfit fit CLOUD [--model M] [-o fit.json]
    bodyfit measure FIT_JSON | MESH.obj --model M [--csv] [-o report.json]
    bodyfit simulate (--mesh OBJ | --model M [--params P]) [--emit-volume] [-o scan.ply]
    bodyfit pipeline [--model M] [--beta ...] [--out-dir DIR]
    bodyfit replay MANIFEST [--out-dir DIR]

Fit and scan flags mirror the ``FitConfig``/``ScanConfig`` field names in
kebab case. ``--config file.json`` overrides flags. Each command writes a
run manifest (resolved config, input digests, timestamps) next to its
outputs. Exit codes: 0 ok, 1 numerical failure, 2 I/O or schema error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .body_model import BodyModel, BodyParams, load_model, pose_mesh
from .errors import NumericalError, SchemaError
from .io import read_cloud, read_obj, read_volume, volume_paths, write_cloud, write_obj, write_volume
from .measurement import DEFAULT_SLICE_STEP, measure_all, measure_mesh
from .pointcloud import DEFAULT_SMOOTH_RADIUS, DEFAULT_SPACING, downsample, ingest
from .registration import FitConfig, fit
from .simulator import ScanConfig, simulate_scan, simulate_volume
from .synthetic import synthetic_model

EXIT_OK, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2
BUILTIN = "builtin"
DEFAULT_THRESHOLD = 0.5
DEFAULT_VOXEL_SPACING = 0.01

log = logging.getLogger("bodyfit")


# -- config plumbing -------------------------------------------------------

def _kebab(name: str) -> str:
    return name.replace("_", "-")


def _snake(name: str) -> str:
    return name.replace("-", "_")


def _parse_vectors(text: str):
    try:
        return tuple(tuple(float(c) for c in v.split(",")) for v in text.split(";") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'x,y,z;x,y,z', got {text!r}") from None


def _parse_floats(text: str):
    try:
        return [float(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_dataclass_flags(parser, cls, prefix: str, seen: set):
    group = parser.add_argument_group(f"{prefix} config")
    for f in dataclasses.fields(cls):
        if f.name in seen:
            continue
        seen.add(f.name)
        flags = [f"--{_kebab(f.name)}"]
        if f.name == "rng_seed":
            flags.append("--seed")
        default = f.default
        if f.name == "panel_normals":
            kind, meta = _parse_vectors, "X,Y,Z;..."
        elif f.name == "panel_ids":
            kind, meta = (lambda s: tuple(p for p in s.split(",") if p)), "ID,..."
        elif isinstance(default, bool):
            kind, meta = _parse_bool, "BOOL"
        else:
            kind, meta = type(default), None
        group.add_argument(*flags, dest=f"cfg_{f.name}", type=kind, default=None, metavar=meta,
                           help=f"default: {default!r}")


def _add_common(parser):
    parser.add_argument("--config", help="JSON file whose keys override flags")
    parser.add_argument("-v", "--verbose", action="store_true")


def _config_overrides(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    flat = {}
    for key, value in doc.items():
        if key in ("fit", "scan", "options") and isinstance(value, dict):
            flat.update({_snake(k): v for k, v in value.items()})
        else:
            flat[_snake(key)] = value
    return flat


def _resolve(args, option_names, use_fit: bool, use_scan: bool) -> dict:
    """Merge defaults, flags and ``--config`` into {options, fit, scan}."""
    over = _config_overrides(getattr(args, "config", None))
    fit_fields = {f.name for f in dataclasses.fields(FitConfig)} if use_fit else set()
    scan_fields = {f.name for f in dataclasses.fields(ScanConfig)} if use_scan else set()
    unknown = set(over) - fit_fields - scan_fields - set(option_names)
    if unknown:
        raise SchemaError(f"{args.config}: unknown config key(s) {sorted(unknown)}")

    def pick(name):
        if name in over:
            return over[name]
        return getattr(args, f"cfg_{name}", None)

    resolved = {"options": {n: over.get(n, getattr(args, n)) for n in option_names}}
    try:
        if use_fit:
            given = {n: pick(n) for n in fit_fields if pick(n) is not None}
            resolved["fit"] = FitConfig(**given).to_dict()
        if use_scan:
            given = {n: pick(n) for n in scan_fields if pick(n) is not None}
            resolved["scan"] = ScanConfig(**given).to_dict()
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"invalid configuration: {exc}") from None
    return resolved


# -- manifest ---------------------------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digests(paths) -> dict:
    return {str(p): _digest(p) for p in paths if p is not None and Path(p).is_file()}


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_manifest(path, command, resolved, inputs, outputs, started):
    _write_json(path, {
        "tool": "bodyfit",
        "version": __version__,
        "command": command,
        "config": resolved,
        "inputs": _digests(inputs),
        "outputs": _digests(outputs),
        "started_at": started,
        "finished_at": _now(),
    })


def _manifest_path(primary) -> Path:
    p = Path(primary)
    return p.with_name(p.stem + ".manifest.json")


# -- shared helpers ---------------------------------------------------------

def _load_model(ref) -> BodyModel:
    if ref in (None, BUILTIN):
        return synthetic_model()
    try:
        return load_model(ref)
    except OSError as exc:
        raise SchemaError(f"{ref}: cannot read model ({exc.strerror})") from None


def _model_inputs(ref):
    return [] if ref in (None, BUILTIN) else [ref]


def _load_params(model: BodyModel, opts) -> BodyParams:
    params = model.prior_params()
    if opts.get("params"):
        try:
            doc = json.loads(Path(opts["params"]).read_text())
        except OSError as exc:
            raise SchemaError(f"{opts['params']}: cannot read ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{opts['params']}: invalid JSON ({exc.msg})") from None
        if "result" in doc:
            doc = doc["result"]
        params = BodyParams.from_dict(doc.get("params", doc))
    if opts.get("beta") is not None:
        params.beta = np.asarray(opts["beta"], dtype=np.float64)
    if opts.get("t") is not None:
        params.t = np.asarray(opts["t"], dtype=np.float64)
    if params.beta.shape != (model.n_betas,) or params.theta.shape != (model.n_joints, 3):
        raise SchemaError(f"params: expected {model.n_betas} betas and {model.n_joints} joint rotations")
    return params


def _volume_inputs(paths):
    out = []
    for p in paths:
        out.extend(volume_paths(p))
    return out


def _emit_volumes(mesh, scan_cfg, voxel_spacing, stem: Path):
    written = []
    for vol in simulate_volume(mesh, scan_cfg, voxel_spacing):
        target = stem.with_name(f"{stem.name}_{vol.panel_id}")
        write_volume(vol, target)
        written.extend(volume_paths(target))
    return written


def _fit_document(model_ref, fit_cfg: dict, result, n_points: int) -> dict:
    return {
        "format": "bodyfit-fit/1",
        "model": model_ref or BUILTIN,
        "config": fit_cfg,
        "cloud_points": n_points,
        "result": result.to_dict(),
    }


def _companion(path, suffix) -> Path:
    p = Path(path)
    return p.with_suffix(suffix)


# -- commands ---------------------------------------------------------------

def run_ingest(resolved, started=None):
    o = resolved["options"]
    vols = [read_volume(p) for p in o["volumes"]]
    cloud = ingest(vols, o["threshold"], o["smooth_radius"], o["spacing"])
    out = Path(o["output"])
    write_cloud(cloud, out)
    write_manifest(_manifest_path(out), "ingest", resolved, _volume_inputs(o["volumes"]), [out],
                   started or _now())
    log.info("wrote %d points to %s", len(cloud), out)
    return [out]


def run_fit(resolved, started=None):
    o = resolved["options"]
    model = _load_model(o["model"])
    cloud = read_cloud(o["cloud"])
    if len(cloud) == 0:
        raise SchemaError(f"{o['cloud']}: point cloud is empty")
    cfg = FitConfig.from_dict(resolved["fit"])
    result = fit(model, cloud, cfg)
    out = Path(o["output"])
    mesh_out = _companion(out, ".obj")
    _write_json(out, _fit_document(o["model"], resolved["fit"], result, len(cloud)))
    write_obj(pose_mesh(model, result.params), mesh_out)
    write_manifest(_manifest_path(out), "fit", resolved, [o["cloud"], *_model_inputs(o["model"])],
                   [out, mesh_out], started or _now())
    log.info("fit %s after %d iterations, energy %.6g", result.converged_by,
             result.iterations_run, result.final_energy)
    return [out, mesh_out]


def run_measure(resolved, started=None):
    o = resolved["options"]
    src = Path(o["input"])
    inputs = [src]
    if src.suffix.lower() == ".obj":
        if o["model"] is None:
            raise SchemaError("measuring an OBJ requires --model")
        model = _load_model(o["model"])
        mesh = read_obj(src)
        if mesh.n_vertices != model.n_vertices:
            raise SchemaError(f"{src}: {mesh.n_vertices} vertices, model has {model.n_vertices}")
        report = measure_mesh(mesh, model, o["y_ground"], o["slice_step"])
        report.pose = "as given in the input mesh"
    else:
        try:
            doc = json.loads(src.read_text())
        except OSError as exc:
            raise SchemaError(f"{src}: cannot read ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{src}: invalid JSON ({exc.msg})") from None
        if "result" not in doc or "params" not in doc["result"]:
            raise SchemaError(f"{src}: not a fit result (missing result.params)")
        ref = o["model"] or doc.get("model", BUILTIN)
        model = _load_model(ref)
        res = doc["result"]
        diag = {k: res[k] for k in ("final_energy", "iterations_run", "converged_by") if k in res}
        report = measure_all(model, BodyParams.from_dict(res["params"]), o["y_ground"],
                             o["slice_step"], diag)
        inputs += _model_inputs(ref)
    out = Path(o["output"])
    outputs = [out]
    _write_json(out, report.to_dict())
    if o["csv"]:
        csv_out = _companion(out, ".csv")
        csv_out.write_text(report.to_csv())
        outputs.append(csv_out)
    write_manifest(_manifest_path(out), "measure", resolved, inputs, outputs, started or _now())
    return outputs


def run_simulate(resolved, started=None):
    o = resolved["options"]
    scan_cfg = ScanConfig.from_dict(resolved["scan"])
    if o["mesh"]:
        mesh = read_obj(o["mesh"])
        inputs = [o["mesh"]]
    else:
        model = _load_model(o["model"])
        mesh = pose_mesh(model, _load_params(model, o))
        inputs = [*_model_inputs(o["model"]), o.get("params")]
    out = Path(o["output"])
    write_cloud(simulate_scan(mesh, scan_cfg), out)
    outputs = [out]
    if o["emit_volume"]:
        outputs += _emit_volumes(mesh, scan_cfg, o["voxel_spacing"], out.with_suffix(""))
    write_manifest(_manifest_path(out), "simulate", resolved, inputs, outputs, started or _now())
    return outputs


def run_pipeline(resolved, started=None):
    """simulate -> ingest -> fit -> measure, plus a ground-truth comparison."""
    o = resolved["options"]
    out_dir = Path(o["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    model = _load_model(o["model"])
    truth = _load_params(model, o)
    scan_cfg = ScanConfig.from_dict(resolved["scan"])
    fit_cfg = FitConfig.from_dict(resolved["fit"])
    mesh = pose_mesh(model, truth)
    outputs = []

    if o["via_volume"]:
        vols = simulate_volume(mesh, scan_cfg, o["voxel_spacing"])
        cloud = ingest(vols, o["threshold"], o["smooth_radius"], o["spacing"])
    else:
        cloud = downsample(simulate_scan(mesh, scan_cfg), o["spacing"])
    cloud_out = out_dir / "cloud.ply"
    write_cloud(cloud, cloud_out)
    outputs.append(cloud_out)
    if o["emit_volume"]:
        outputs += _emit_volumes(mesh, scan_cfg, o["voxel_spacing"], out_dir / "scan")

    result = fit(model, cloud, fit_cfg)
    fit_out, mesh_out = out_dir / "fit.json", out_dir / "fit.obj"
    _write_json(fit_out, _fit_document(o["model"], resolved["fit"], result, len(cloud)))
    write_obj(pose_mesh(model, result.params), mesh_out)
    outputs += [fit_out, mesh_out]

    y0 = fit_cfg.y_ground
    expected = measure_all(model, truth, y0, o["slice_step"]).to_dict()
    diag = {"final_energy": result.final_energy, "iterations_run": result.iterations_run,
            "converged_by": result.converged_by}
    report = measure_all(model, result.params, y0, o["slice_step"], diag).to_dict()
    report["ground_truth"] = {k: expected[k] for k in ("chest", "waist", "hip", "height")}
    report["relative_error"] = {k: (report[k] - expected[k]) / expected[k]
                                for k in ("chest", "waist", "hip", "height")}
    report_out = out_dir / "report.json"
    _write_json(report_out, report)
    outputs.append(report_out)

    write_manifest(out_dir / "manifest.json", "pipeline", resolved,
                   [*_model_inputs(o["model"]), o.get("params")], outputs, started or _now())
    return outputs


RUNNERS = {
    "ingest": run_ingest,
    "fit": run_fit,
    "measure": run_measure,
    "simulate": run_simulate,
    "pipeline": run_pipeline,
}
OUTPUT_KEYS = {"ingest": "output", "fit": "output", "measure": "output", "simulate": "output",
               "pipeline": "out_dir"}


def run_replay(manifest_path, out=None):
    try:
        doc = json.loads(Path(manifest_path).read_text())
    except OSError as exc:
        raise SchemaError(f"{manifest_path}: cannot read ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{manifest_path}: invalid JSON ({exc.msg})") from None
    command = doc.get("command")
    if command not in RUNNERS or "config" not in doc:
        raise SchemaError(f"{manifest_path}: not a bodyfit run manifest")
    resolved = json.loads(json.dumps(doc["config"]))
    if out is not None:
        key = OUTPUT_KEYS[command]
        if key == "output":
            Path(out).mkdir(parents=True, exist_ok=True)
            out = Path(out) / Path(resolved["options"]["output"]).name
        resolved["options"][key] = str(out)
    return RUNNERS[command](resolved, _now())


# -- argument parsing -------------------------------------------------------

OPTIONS = {
    "ingest": ["volumes", "threshold", "smooth_radius", "spacing", "output"],
    "fit": ["cloud", "model", "output"],
    "measure": ["input", "model", "y_ground", "slice_step", "csv", "output"],
    "simulate": ["mesh", "model", "params", "beta", "t", "emit_volume", "voxel_spacing", "output"],
    "pipeline": ["model", "params", "beta", "t", "spacing", "threshold", "smooth_radius",
                 "voxel_spacing", "via_volume", "emit_volume", "slice_step", "out_dir"],
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bodyfit", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"bodyfit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="reflectivity volumes -> merged, downsampled cloud")
    s.add_argument("volumes", nargs="+", help="volume .f32raw/.json pairs (either file or stem)")
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    s.add_argument("--smooth-radius", type=int, default=DEFAULT_SMOOTH_RADIUS)
    s.add_argument("--spacing", type=float, default=DEFAULT_SPACING)
    s.add_argument("-o", "--output", default="cloud.ply")
    _add_common(s)

    s = sub.add_parser("fit", help="fit the body model to a cloud")
    s.add_argument("cloud")
    s.add_argument("--model", default=BUILTIN, help="model JSON or 'builtin'")
    s.add_argument("-o", "--output", default="fit.json",
                   help="fit JSON; the fitted mesh goes next to it as .obj")
    _add_dataclass_flags(s, FitConfig, "fit", set())
    _add_common(s)

    s = sub.add_parser("measure", help="circumferences and height from a fit or mesh")
    s.add_argument("input", help="fit JSON, or an OBJ sharing the model topology")
    s.add_argument("--model", default=None, help="model JSON or 'builtin' (default: from fit JSON)")
    s.add_argument("--y-ground", type=float, default=0.0)
    s.add_argument("--slice-step", type=float, default=DEFAULT_SLICE_STEP)
    s.add_argument("--csv", action="store_true", help="also write a CSV next to the report")
    s.add_argument("-o", "--output", default="report.json")
    _add_common(s)

    def shape_flags(s):
        s.add_argument("--params", help="params JSON (or a fit JSON)")
        s.add_argument("--beta", type=_parse_floats, help="comma-separated shape coefficients")
        s.add_argument("--t", type=_parse_floats, help="translation x,y,z")

    s = sub.add_parser("simulate", help="synthetic panel scan of a mesh or posed model")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--mesh", help="OBJ mesh to scan")
    src.add_argument("--model", default=BUILTIN, help="model JSON or 'builtin'")
    shape_flags(s)
    s.add_argument("--emit-volume", action="store_true", help="also write per-panel volumes")
    s.add_argument("--voxel-spacing", type=float, default=DEFAULT_VOXEL_SPACING)
    s.add_argument("-o", "--output", default="scan.ply")
    _add_dataclass_flags(s, ScanConfig, "scan", set())
    s.add_argument("--scan-config", dest="config", help="alias of --config")
    _add_common(s)

    s = sub.add_parser("pipeline", help="simulate -> ingest -> fit -> measure")
    s.add_argument("--model", default=BUILTIN)
    shape_flags(s)
    s.add_argument("--spacing", type=float, default=DEFAULT_SPACING)
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    s.add_argument("--smooth-radius", type=int, default=DEFAULT_SMOOTH_RADIUS)
    s.add_argument("--voxel-spacing", type=float, default=DEFAULT_VOXEL_SPACING)
    s.add_argument("--via-volume", action="store_true",
                   help="scan through reflectivity volumes instead of surface sampling")
    s.add_argument("--emit-volume", action="store_true")
    s.add_argument("--slice-step", type=float, default=DEFAULT_SLICE_STEP)
    s.add_argument("--out-dir", default="pipeline_out")
    seen: set = set()
    _add_dataclass_flags(s, FitConfig, "fit", seen)
    _add_dataclass_flags(s, ScanConfig, "scan", seen)
    _add_common(s)

    s = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    s.add_argument("manifest")
    s.add_argument("--out-dir", default=None, help="write outputs here instead")
    s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = _now()
    try:
        if args.command == "replay":
            run_replay(args.manifest, args.out_dir)
        else:
            resolved = _resolve(args, OPTIONS[args.command],
                                use_fit=args.command in ("fit", "pipeline"),
                                use_scan=args.command in ("simulate", "pipeline"))
            RUNNERS[args.command](resolved, started)
    except NumericalError as exc:
        print(f"bodyfit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SchemaError, OSError, ValueError, KeyError) as exc:
        print(f"bodyfit: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
