"""Command-line interface.

Exit codes: 0 success, 1 validation error, 2 I/O or format error,
3 non-convergence.

A *subject directory* holds ``inner``, ``central`` and ``outer`` meshes
(``.ply`` or ``.off``), optionally a label volume (``volume.nii`` or
``volume.json``), a label table (``labels.csv``) and per-surface label
sidecars (``<surface>.labels``).
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig
from .errors import ConvergenceError, FormatError, SurfParcError, ValidationError
from .formats import (read_label_table, read_labels, read_mesh, read_volume,
                      write_label_table, write_labels, write_mesh, write_volume)
from .parcellate import vsbsp
from .phantom import DEFAULT_BUMP_AMPLITUDE, PhantomSpec, make_phantom, make_phantom_pair
from .propagate import PropagationDirection, SurfaceSet, propagate_labels
from .repro import SURFACES, LabeledSurfaces, cohort_summary, evaluate_pair
from .topology import topological_correction
from .transform import RigidTransform

EXIT_OK = 0
MESH_SUFFIXES = (".ply", ".off")
VOLUME_NAMES = ("volume.nii", "volume.json")
TABLE_NAME = "labels.csv"
REPORT_NAME = "correction.json"

DSC_FIELDS = ["pair", "surface", "label", "dsc", "matched", "count_scan", "count_rescan"]
METRIC_FIELDS = ["pair", "label", "area_scan", "area_rescan", "thickness_scan", "thickness_rescan"]


class _Parser(argparse.ArgumentParser):
    # usage mistakes are validation failures, not argparse's default exit 2
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


# -- helpers ------------------------------------------------------------------

def _json_safe(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_json_safe(obj), indent=2, allow_nan=False) + "\n")


def _fmt(x: float) -> str:
    return "" if not math.isfinite(x) else repr(float(x))


def find_mesh(directory: Path, name: str) -> Path:
    for suffix in MESH_SUFFIXES:
        p = directory / f"{name}{suffix}"
        if p.exists():
            return p
    raise FileNotFoundError(f"no {name} mesh ({'/'.join(MESH_SUFFIXES)}) in {directory}")


def find_volume(directory: Path) -> Path:
    for name in VOLUME_NAMES:
        if (directory / name).exists():
            return directory / name
    raise FileNotFoundError(f"no label volume ({' or '.join(VOLUME_NAMES)}) in {directory}")


def load_surfaces(directory: Path) -> SurfaceSet:
    return SurfaceSet(*(read_mesh(find_mesh(directory, n)) for n in SURFACES))


def load_subject(directory) -> LabeledSurfaces:
    directory = Path(directory)
    surfaces = load_surfaces(directory)
    labels = {n: read_labels(directory / f"{n}.labels", surfaces[n].n_vertices) for n in SURFACES}
    return LabeledSurfaces(surfaces, labels)


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    for key in ("search_cap_mm", "icp_max_iters", "icp_tol", "fill_max_iters",
                "correction_max_rounds", "wilcoxon_exact_max_n"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "per_surface_registration", False):
        overrides["per_surface_registration"] = True
    out = getattr(args, "out_dir", None)
    if out is not None:
        overrides["output_dir"] = str(out)
    return replace(cfg, **overrides) if overrides else cfg


def _pose(angle_deg, axis, translation) -> RigidTransform:
    if not angle_deg:
        return RigidTransform(np.eye(3), translation)
    return RigidTransform.from_axis_angle(axis, math.radians(angle_deg), translation)


# -- subcommands --------------------------------------------------------------

def _write_phantom(ph, spec, directory: Path, volume_format: str) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for name in SURFACES:
        write_mesh(ph.surfaces[name], directory / f"{name}.ply")
    write_volume(ph.volume, directory / ("volume.json" if volume_format == "native" else "volume.nii"))
    write_label_table(spec.label_table(), directory / TABLE_NAME)
    write_labels(ph.truth_labels, directory / "truth.labels")


def cmd_synth(args) -> int:
    bump = args.bump if args.bump is not None else (DEFAULT_BUMP_AMPLITUDE if args.pair else 0.0)
    spec = PhantomSpec(
        radii=tuple(args.radii), subdivisions=args.subdivisions, n_sectors=args.sectors,
        voxel_size=tuple(args.voxel_size), noise_amplitude=args.noise,
        pose=_pose(args.rotate_deg, args.axis, args.translate), bump_amplitude=bump,
    )
    out = Path(args.out_dir)
    if args.pair:
        delta = _pose(args.delta_deg, args.delta_axis, args.delta_translate)
        scan, rescan = make_phantom_pair(spec, delta, args.seed)
        _write_phantom(scan, spec, out / "scan", args.volume_format)
        _write_phantom(rescan, spec, out / "rescan", args.volume_format)
        write_json({"pose_delta": delta.to_dict(), "seed": args.seed}, out / "pair.json")
    else:
        rng = np.random.default_rng(args.seed)
        _write_phantom(make_phantom(spec, rng=rng), spec, out, args.volume_format)
    return EXIT_OK


def cmd_parcellate(args) -> int:
    cfg = _config(args)
    central = read_mesh(args.central)
    labels = vsbsp(central, read_volume(args.volume), read_label_table(args.table), cfg.search_cap_mm)
    write_labels(labels, args.out)
    return EXIT_OK


def _correct(mesh, labels, cfg, report_path):
    try:
        fixed, report = topological_correction(
            mesh, labels, max_rounds=cfg.correction_max_rounds, max_iters=cfg.fill_max_iters
        )
    except ConvergenceError as exc:
        if report_path is not None and exc.report is not None:
            write_json(exc.report.to_dict(), report_path)
        raise
    if report_path is not None:
        write_json(report.to_dict(), report_path)
    return fixed, report


def cmd_fix_topology(args) -> int:
    cfg = _config(args)
    mesh = read_mesh(args.mesh)
    labels = read_labels(args.labels, mesh.n_vertices)
    fixed, _ = _correct(mesh, labels, cfg, args.report)
    write_labels(fixed, args.out)
    return EXIT_OK


def cmd_propagate(args) -> int:
    central = read_mesh(args.central)
    labels = read_labels(args.labels, central.n_vertices)
    target = read_mesh(args.target)
    out = propagate_labels(central, labels, target, PropagationDirection.parse(args.direction))
    write_labels(out, args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    subject = Path(args.subject) if args.subject else None

    def pick(explicit, default):
        if explicit is not None:
            return Path(explicit)
        if subject is None:
            raise ValidationError("give --subject or every input path explicitly")
        return default()

    volume = read_volume(pick(args.volume, lambda: find_volume(subject)))
    table = read_label_table(pick(args.table, lambda: subject / TABLE_NAME))
    meshes = {n: read_mesh(pick(getattr(args, n), lambda n=n: find_mesh(subject, n))) for n in SURFACES}
    out = Path(args.out_dir) if args.out_dir else subject
    if out is None:
        raise ValidationError("give --out-dir when no --subject is used")
    out.mkdir(parents=True, exist_ok=True)
    cfg = replace(cfg, output_dir=str(out))

    raw = vsbsp(meshes["central"], volume, table, cfg.search_cap_mm)
    central, report = _correct(meshes["central"], raw, cfg, out / REPORT_NAME)
    labels = {"central": central}
    fallback = {}
    for name in ("inner", "outer"):
        labels[name], fb = propagate_labels(meshes["central"], central, meshes[name],
                                            PropagationDirection.parse(name), return_fallback=True)
        fallback[name] = int(fb.sum())
    for name in SURFACES:
        write_labels(labels[name], out / f"{name}.labels")
    write_json({
        "config": cfg.to_dict(),
        "n_vertices": {n: meshes[n].n_vertices for n in SURFACES},
        "correction": report.to_dict(),
        "propagation_fallback_vertices": fallback,
    }, out / "run.json")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    if len(args.scan) != len(args.rescan):
        raise ValidationError("give the same number of --scan and --rescan directories")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    evaluations = []
    for scan_dir, rescan_dir in zip(args.scan, args.rescan):
        ev = evaluate_pair(load_subject(scan_dir), load_subject(rescan_dir),
                           per_surface_registration=cfg.per_surface_registration,
                           icp_max_iters=cfg.icp_max_iters, icp_tol=cfg.icp_tol)
        evaluations.append(ev)

    with open(out / "dsc.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DSC_FIELDS)
        for k, ev in enumerate(evaluations, start=1):
            for name in SURFACES:
                rep = ev.dsc[name]
                for lab in sorted(rep.labels):
                    d = rep.labels[lab]
                    w.writerow([k, name, lab, _fmt(d.dsc), d.matched, d.count_a, d.count_b])
                w.writerow([k, name, "overall", _fmt(rep.overall), "", "", ""])
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for k, ev in enumerate(evaluations, start=1):
            for row in sorted(ev.metrics, key=lambda r: r.label):
                w.writerow([k, row.label, _fmt(row.area_scan), _fmt(row.area_rescan),
                            _fmt(row.thickness_scan), _fmt(row.thickness_rescan)])

    summary = cohort_summary(evaluations, cfg.wilcoxon_exact_max_n)
    summary["pairs"] = [
        {
            "scan": str(s), "rescan": str(r),
            "transform": {n: ev.transforms[n].to_dict() for n in SURFACES},
            "icp_iterations": dict(ev.icp_iterations),
        }
        for s, r, ev in zip(args.scan, args.rescan, evaluations)
    ]
    write_json(summary, out / "summary.json")
    if args.figures:
        _figures(evaluations, summary, out)
    return EXIT_OK


def _figures(evaluations, summary, out: Path) -> None:
    from .plotting import dsc_boxplot, metric_scatter

    per_surface = {n: [d.dsc for ev in evaluations for d in ev.dsc[n].labels.values()] for n in SURFACES}
    dsc_boxplot(per_surface, out / "dsc_boxplot.png")
    for metric, unit in (("area", "mm^2"), ("thickness", "mm")):
        rows = [r for ev in evaluations for r in ev.metrics]
        xs = [getattr(r, f"{metric}_scan") for r in rows]
        ys = [getattr(r, f"{metric}_rescan") for r in rows]
        keep = [i for i in range(len(xs)) if math.isfinite(xs[i]) and math.isfinite(ys[i])]
        metric_scatter([xs[i] for i in keep], [ys[i] for i in keep], out / f"{metric}_scatter.png",
                       metric, unit, summary["pearson"][metric]["pooled"])


# -- parser -------------------------------------------------------------------

def _add_config_flags(p, *keys):
    if "search_cap_mm" in keys:
        p.add_argument("--search-cap", dest="search_cap_mm", type=float,
                       help="largest voxel search distance in mm (default 10)")
    if "fill" in keys:
        p.add_argument("--max-rounds", dest="correction_max_rounds", type=int,
                       help="detect and fill rounds before giving up (default 5)")
        p.add_argument("--fill-max-iters", dest="fill_max_iters", type=int,
                       help="sweeps per fill round (default 1000)")
    if "icp" in keys:
        p.add_argument("--icp-max-iters", type=int)
        p.add_argument("--icp-tol", type=float)
        p.add_argument("--exact-max-n", dest="wilcoxon_exact_max_n", type=int,
                       help="largest sample for the exact signed rank test (default 25)")
        p.add_argument("--per-surface-registration", action="store_true",
                       help="register each surface on its own instead of sharing the central fit")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="surfparc", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON configuration file; flags override it")
    parser.add_argument("--json-errors", action="store_true",
                        help="report failures as a JSON object on standard error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic labelled sphere phantom")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--radii", type=float, nargs=3, default=(20.0, 23.0, 26.0), metavar=("IN", "MID", "OUT"))
    p.add_argument("--subdivisions", type=int, default=4)
    p.add_argument("--sectors", type=int, default=8)
    p.add_argument("--voxel-size", type=float, nargs=3, default=(1.0, 1.0, 1.2))
    p.add_argument("--noise", type=float, default=0.0, help="radial vertex noise amplitude in mm")
    p.add_argument("--bump", type=float, default=None,
                   help=f"fold amplitude (default 0, or {DEFAULT_BUMP_AMPLITUDE} with --pair)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rotate-deg", type=float, default=0.0)
    p.add_argument("--axis", type=float, nargs=3, default=(0.0, 0.0, 1.0))
    p.add_argument("--translate", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    p.add_argument("--pair", action="store_true", help="write scan/ and rescan/ subject directories")
    p.add_argument("--delta-deg", type=float, default=3.0)
    p.add_argument("--delta-axis", type=float, nargs=3, default=(1.0, 1.0, 0.0))
    p.add_argument("--delta-translate", type=float, nargs=3, default=(2.0, 0.0, 0.0))
    p.add_argument("--volume-format", choices=("nifti", "native"), default="nifti")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("parcellate", help="label a central surface from a label volume")
    p.add_argument("--volume", required=True)
    p.add_argument("--central", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p, "search_cap_mm")
    p.set_defaults(func=cmd_parcellate)

    p = sub.add_parser("fix-topology", help="make every label one connected patch")
    p.add_argument("--mesh", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", help="write the correction report as JSON")
    _add_config_flags(p, "fill")
    p.set_defaults(func=cmd_fix_topology)

    p = sub.add_parser("propagate", help="carry central labels to the inner or outer surface")
    p.add_argument("--central", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--direction", required=True, choices=("inner", "outer"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("run", help="parcellate, fix topology and propagate in one go")
    p.add_argument("--subject", help="subject directory supplying default inputs and output")
    p.add_argument("--volume")
    p.add_argument("--table")
    for name in SURFACES:
        p.add_argument(f"--{name}")
    p.add_argument("--out-dir")
    _add_config_flags(p, "search_cap_mm", "fill")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="scan-rescan reproducibility report")
    p.add_argument("--scan", action="append", required=True, help="scan subject directory (repeatable)")
    p.add_argument("--rescan", action="append", required=True, help="rescan subject directory (repeatable)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    _add_config_flags(p, "icp")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _report_error(exc: SurfParcError, as_json: bool) -> None:
    if as_json:
        sys.stderr.write(json.dumps(_json_safe(exc.to_dict())) + "\n")
    else:
        sys.stderr.write(f"surfparc: error: {exc.message}\n")
        vertices = exc.details.get("vertices")
        if vertices:
            shown = ", ".join(str(v) for v in vertices[:20])
            more = f" (+{len(vertices) - 20} more)" if len(vertices) > 20 else ""
            sys.stderr.write(f"  vertices: {shown}{more}\n")


def main(argv=None) -> int:
    as_json = "--json-errors" in (sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SurfParcError as exc:
        _report_error(exc, as_json)
        return exc.exit_code
    except OSError as exc:
        err = FormatError(f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc))
        _report_error(err, as_json)
        return err.exit_code
