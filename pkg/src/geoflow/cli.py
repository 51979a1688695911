"""Command-line entry points.

``geoflow run`` executes a scene file and writes a JSON report (with
figures next to it), ``geoflow example`` runs one of the bundled scenes,
and ``geoflow flow`` exports a grid-flow trajectory as CSV.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import flow as fl
from . import scene as sc


def _apply_overrides(cfg: sc.SceneConfig, args) -> sc.SceneConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.samples is not None:
        cfg.samples = args.samples
    if args.tol is not None:
        cfg.tolerance = args.tol
    return cfg


def _print_report(report: dict, stream=None):
    stream = stream if stream is not None else sys.stdout
    for rec in report["tasks"]:
        print(f"{rec['kind']:>20}: {rec['verdict']}", file=stream)
    print(f"{report['failures']} task(s) failed", file=stream)


def _run_scene(cfg, out_path):
    figure_dir = os.path.dirname(os.path.abspath(out_path)) if out_path else None
    prefix = ""
    if out_path:
        base = os.path.splitext(os.path.basename(out_path))[0]
        prefix = base + "_"
    report = sc.run_tasks(cfg, figure_dir=figure_dir, figure_prefix=prefix)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(sc.serialize_report(report))
    _print_report(report)
    return 0 if report["failures"] == 0 else 1


def cmd_run(args) -> int:
    cfg = _apply_overrides(sc.load_scene(args.scene), args)
    return _run_scene(cfg, args.out)


def cmd_example(args) -> int:
    if args.id not in sc.EXAMPLE_IDS:
        print(f"unknown example id {args.id!r}; choose one of "
              f"{', '.join(sc.EXAMPLE_IDS)}", file=sys.stderr)
        return 2
    cfg = _apply_overrides(sc.load_scene(str(sc.bundled_scene_path(args.id))),
                           args)
    return _run_scene(cfg, args.out)


def cmd_flow(args) -> int:
    cfg = _apply_overrides(sc.load_scene(args.scene), args)
    grid_tasks = [(i, t) for i, t in enumerate(cfg.tasks)
                  if t["kind"] == "flow_grid"]
    if not grid_tasks:
        print("scene contains no flow_grid task", file=sys.stderr)
        return 2
    failed = 0
    multi = len(grid_tasks) > 1
    for seq, (idx, task) in enumerate(grid_tasks):
        verdict, stats, extras = sc._RUNNERS["flow_grid"](cfg, task, idx)
        traj = extras.get("traj")
        path = args.csv
        if multi:
            root, ext = os.path.splitext(args.csv)
            path = f"{root}_{seq}{ext or '.csv'}"
        if traj is not None:
            fl.export_trajectory_csv(traj, path)
            fig_path = os.path.splitext(path)[0] + ".png"
            if traj.times:
                from . import figures
                figures.trajectory_figure(traj.times, traj.diagnostics,
                                          "flow diagnostics", fig_path)
            print(f"flow_grid task {idx}: {verdict} "
                  f"(termination {stats.get('termination')}), wrote {path}")
        else:
            print(f"flow_grid task {idx}: {verdict}")
        if verdict == "fail":
            failed += 1
    return 0 if failed == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geoflow",
                                description="Geometric flow verification toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="override the scene seed")
        sp.add_argument("--samples", type=int, default=None,
                        help="override the scene sample count")
        sp.add_argument("--tol", type=float, default=None,
                        help="override the scene tolerance")

    run = sub.add_parser("run", help="execute a scene file")
    run.add_argument("scene")
    run.add_argument("--out", default=None, help="write the JSON report here")
    common(run)
    run.set_defaults(func=cmd_run)

    ex = sub.add_parser("example", help="run a bundled example scene")
    ex.add_argument("id", help="example identifier, e.g. 4.3")
    ex.add_argument("--out", default=None)
    common(ex)
    ex.set_defaults(func=cmd_example)

    flow = sub.add_parser("flow", help="run flow_grid tasks and export CSV")
    flow.add_argument("scene")
    flow.add_argument("--csv", required=True, help="trajectory CSV output path")
    common(flow)
    flow.set_defaults(func=cmd_flow)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except sc.SceneError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
