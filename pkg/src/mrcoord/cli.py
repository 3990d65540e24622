"""Command-line entry point: ``mrcoord run|compare|geometry-debug|validate-config``.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 runtime error.
Outputs go to ``--out``; without it, to a directory named after the command
under ``$MRCOORD_OUTPUT_ROOT`` (default ``./runs``). Every command writes into
a scratch directory first and moves it into place only on success.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import shutil
import sys
import tempfile
import time
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import MODES, PRESETS, ScenarioConfig, config_hash, dump_config, from_dict, parse_config
from .errors import ConfigurationError, MrcoordError
from .geometry import EllipticalSite, PointSite, elvd, point_voronoi
from .network import write_trace
from .simulator import ALL_MODES, ExperimentMode, Match, compare_modes

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_RUNTIME = 4

OUTPUT_ROOT_ENV = "MRCOORD_OUTPUT_ROOT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# helpers


def load_config(path: Optional[str], preset: Optional[str]) -> ScenarioConfig:
    if path is None:
        return from_dict({}, preset=preset)
    return parse_config(path, preset=preset)


def parse_seeds(text: Optional[str], config: ScenarioConfig) -> list[int]:
    """``"3"``, ``"1,4,7"`` or ``"1-10"``; defaults to the config's seed list."""
    if text is None:
        return list(config.seeds)
    seeds: list[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            elif part:
                seeds.append(int(part))
    except ValueError:
        raise UsageError(f"bad seed list {text!r}") from None
    if not seeds:
        raise UsageError("empty seed list")
    return sorted(set(seeds))


def parse_mode(text: str) -> ExperimentMode:
    try:
        return ExperimentMode.parse(text)
    except ValueError:
        raise UsageError(f"unknown mode {text!r}; choose from {', '.join(MODES)}") from None


def output_dir(out: Optional[str], default_name: str) -> Path:
    if out:
        return Path(out)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / default_name


class _Staging:
    """Scratch directory that replaces ``target`` only when the block succeeds."""

    def __init__(self, target: Path):
        self.target = target

    def __enter__(self) -> Path:
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.target.name}.", dir=self.target.parent))
        return self.tmp

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.tmp, ignore_errors=True)
            return False
        if self.target.exists():
            shutil.rmtree(self.target)
        os.replace(self.tmp, self.target)
        return False


def manifest(config: ScenarioConfig, command: str, files: Sequence[str], **extra) -> dict:
    m = {
        "artifact_version": __version__,
        "command": command,
        "config_hash": config_hash(config),
        "files": sorted(files),
    }
    m.update(extra)
    return m


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def role_table_csv(table, roles: Sequence[str], dt: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = table.shape[1]
    w.writerow(["tick", "time"] + [f"agent_{i}" for i in range(n)])
    for k, row in enumerate(table):
        w.writerow([k + 1, f"{(k + 1) * dt:.2f}"] + [roles[r] if r >= 0 else "" for r in row])
    return buf.getvalue()


# --------------------------------------------------------------------------
# commands


def cmd_run(args) -> int:
    config = load_config(args.config, args.preset)
    mode = parse_mode(args.mode)
    seed = int(args.seed)
    target = output_dir(args.out, f"run-{mode.value}-{seed}")
    with _Staging(target) as tmp:
        match = Match(config, mode, seed, record_trace=True)
        rec = match.run()
        (tmp / "metrics.json").write_text(rec.to_json())
        (tmp / "roles.csv").write_text(role_table_csv(rec.role_table, rec.roles, config.dt))
        write_trace(rec.trace, tmp / "packets.trace")
        (tmp / "config.yaml").write_text(dump_config(config))
        files = ["metrics.json", "roles.csv", "packets.trace", "config.yaml"]
        _write_json(tmp / "manifest.json", manifest(config, "run", files, mode=mode.value, seed=seed,
                                                    preset=args.preset))
    _say(args, f"{mode.value} seed {seed}: striker overlap {rec.overlap_per_minute[0]:.3f} s/min, "
               f"{rec.packets_sent}/{rec.budget} packets -> {target}")
    return EXIT_OK


def summary_csv(summary, roles: Sequence[str], modes: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["role"] + [f"{m}_{s}" for m in modes for s in ("mean", "std")])
    by = {(r.role, r.mode): r for r in summary.rows}
    for role in roles:
        w.writerow([role] + [f"{v:.6f}" for m in modes for v in (by[role, m].mean, by[role, m].std)])
    return buf.getvalue()


def plot_csv(summary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["role", "mode", "overlap_s_per_min", "std", "n_seeds"])
    for r in summary.rows:
        w.writerow([r.role, r.mode, f"{r.mean:.6f}", f"{r.std:.6f}", r.n])
    return buf.getvalue()


def cmd_compare(args) -> int:
    config = load_config(args.config, args.preset)
    seeds = parse_seeds(args.seeds, config)
    modes = [parse_mode(m) for m in args.modes.split(",")] if args.modes else list(ALL_MODES)
    target = output_dir(args.out, "compare")
    started = time.perf_counter()

    def progress(rec):
        _say(args, f"  {rec.mode:10s} seed {rec.seed:3d}: striker {rec.overlap_per_minute[0]:.3f} s/min")

    with _Staging(target) as tmp:
        summary = compare_modes(config, seeds, modes, progress=progress, workers=args.workers)
        names = [m.value for m in modes]
        roles = [t.id for t in config.tasks]
        (tmp / "summary.csv").write_text(summary_csv(summary, roles, names))
        (tmp / "plot_data.csv").write_text(plot_csv(summary))
        with open(tmp / "records.jsonl", "w") as fh:
            for rec in summary.records:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        striker = {m: summary.mean(m) for m in names}
        ordered = all(striker[a] >= striker[b] for a, b in zip(names, names[1:]))
        result = {
            "striker_role": summary.striker_role,
            "striker_mean_s_per_min": striker,
            "striker_reduction_elvd_vs_event": summary.striker_reduction,
            "ordering_holds": ordered,
            "seeds": seeds,
        }
        _write_json(tmp / "result.json", result)
        (tmp / "config.yaml").write_text(dump_config(config))
        files = ["summary.csv", "plot_data.csv", "records.jsonl", "result.json", "config.yaml"]
        _write_json(tmp / "manifest.json", manifest(config, "compare", files, modes=names, seeds=seeds,
                                                    preset=args.preset))
    elapsed = time.perf_counter() - started
    _say(args, "striker s/min: " + ", ".join(f"{m} {v:.3f}" for m, v in striker.items()))
    _say(args, f"EventELVD vs EventBased reduction: {100.0 * summary.striker_reduction:.1f}% "
               f"({elapsed:.0f} s) -> {target}")
    return EXIT_OK


def geometry_rows(match: Match, source: str) -> tuple[list[list], str]:
    """Plot-ready rows: sites, focal pairs, Delaunay edges, nodes and edges."""
    cc = match.cc
    use_elvd = cc.diagram == "elvd"
    if source == "truth":
        items = [(f"opp{k}", o.position, o.axis_direction, o.interest_length)
                 for k, o in enumerate(match.gt.opponents)]
    else:
        dwm = match.dwms[0] if match.dwms[0] is not None else match._fuse_view(0, match.time)
        items = [(o.id, o.centroid, o.axis_direction, o.interest_length) for o in dwm.obstacles
                 if o.confidence >= cc.min_obstacle_confidence and cc.bounds.contains(o.centroid)]
    rows: list[list] = []
    for sid, pos, axis, length in items:
        rows.append(["site", sid, pos[0], pos[1], "", ""])
    diagram = None
    if use_elvd:
        sites = [EllipticalSite.from_obstacle(pos, axis, length, sid) for sid, pos, axis, length in items]
        for s in sites:
            rows.append(["focal_pair", s.obstacle_id, s.f0[0], s.f0[1], s.f1[0], s.f1[1]])
        if len(sites) >= 2:
            diagram = elvd(sites, cc.bounds, cc.resolution)
    elif len(items) >= 2:
        diagram = point_voronoi([PointSite(pos, sid) for sid, pos, _, _ in items], cc.bounds)
        tri = diagram.triangulation
        if tri is not None:
            for a, b in tri.edges():
                pa, pb = tri.points[a], tri.points[b]
                rows.append(["delaunay_edge", "", pa[0], pa[1], pb[0], pb[1]])
    if diagram is not None:
        for k, node in enumerate(diagram.nodes):
            kind = "border_node" if node.on_border else "node"
            rows.append([kind, k, node.position[0], node.position[1], "", ""])
        for e in diagram.edges:
            line = e.polyline
            for p, q in zip(line[:-1], line[1:]):
                rows.append(["edge", f"{e.site_i}|{e.site_j}", p[0], p[1], q[0], q[1]])
    return rows, ("elvd" if use_elvd else "vd")


def cmd_geometry_debug(args) -> int:
    config = load_config(args.config, args.preset)
    mode = parse_mode(args.mode)
    if mode not in (ExperimentMode.EVENT_VD, ExperimentMode.EVENT_ELVD):
        raise UsageError("geometry-debug needs a diagram mode (EventVD or EventELVD)")
    if not 0.0 <= args.time <= config.match_length:
        raise UsageError(f"--time must be within [0, {config.match_length}]")
    target = output_dir(args.out, f"geometry-{mode.value}-{args.seed}-{args.time:g}")
    with _Staging(target) as tmp:
        match = Match(config, mode, int(args.seed))
        match.advance(args.time)
        rows, backend = geometry_rows(match, args.source)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "id", "x0", "y0", "x1", "y1"])
        for r in rows:
            w.writerow([r[0], r[1]] + [f"{v:.6f}" if isinstance(v, float) else v for v in r[2:]])
        (tmp / "geometry.csv").write_text(buf.getvalue())
        _write_json(tmp / "manifest.json", manifest(
            config, "geometry-debug", ["geometry.csv"], mode=mode.value, seed=int(args.seed),
            time=args.time, source=args.source, backend=backend, preset=args.preset))
    _say(args, f"{len(rows)} geometry rows at t={args.time:g} s -> {target}")
    return EXIT_OK


def cmd_validate_config(args) -> int:
    config = load_config(args.config, args.preset)
    _say(args, f"ok: {args.config or '<defaults>'} ({config.team_size} agents, {len(config.tasks)} tasks, "
               f"budget {config.budget}, {config.match_length:g} s) hash {config_hash(config)[:16]}")
    if args.dump:
        sys.stdout.write(dump_config(config))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _say(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg, flush=True)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mrcoord", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="scenario YAML file (defaults apply to missing keys)")
        sp.add_argument("--preset", choices=sorted(PRESETS), default=None,
                        help="desk: 2-minute matches with a 120-packet budget; full: defaults")
        sp.add_argument("--out", help=f"output directory (default: under ${OUTPUT_ROOT_ENV} or ./runs)")
        sp.add_argument("--quiet", action="store_true")

    r = sub.add_parser("run", help="simulate one match")
    common(r)
    r.add_argument("--mode", required=True, help="FixedRate | EventBased | EventVD | EventELVD")
    r.add_argument("--seed", type=int, default=1)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="all modes over a seed list, summarized per role")
    common(c)
    c.add_argument("--seeds", help="e.g. 1-10 or 1,3,5 (default: the config's seed list)")
    c.add_argument("--modes", help="comma-separated subset of modes (default: all four)")
    c.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("geometry-debug", help="dump sites, triangulation and diagram at a snapshot")
    common(g)
    g.add_argument("--mode", default="EventELVD")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--time", type=float, default=0.0, help="snapshot sim time, seconds")
    g.add_argument("--source", choices=("truth", "dwm"), default="truth",
                   help="opponents from ground truth, or agent 0's fused obstacles")
    g.set_defaults(func=cmd_geometry_debug)

    v = sub.add_parser("validate-config", help="parse and validate a scenario file")
    common(v)
    v.add_argument("--dump", action="store_true", help="print the default-completed config")
    v.set_defaults(func=cmd_validate_config)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"mrcoord: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"mrcoord: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MrcoordError, OSError, ValueError) as exc:
        print(f"mrcoord: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
