"""Command-line entry points: run, batch, gen-world and rank."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .domain import ContractViolation, SceneParseError, dumps
from .orchestrator import ConfigError, PipelineError, emit_output_file, load_config, parse_output_file, run_batch, run_pipeline
from .providers import ProviderError
from .simworld import aggregate_rankings, emit_world_file, generate_world
from .simworld.ranking import emit_ranking_file

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PROVIDER = 3

log = logging.getLogger("assistplan")


def _seed_range(text: str) -> range:
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a seed or a range like 0..99, got {text!r}") from None
    if hi < lo:
        raise argparse.ArgumentTypeError("seed range end must be >= start")
    return range(lo, hi + 1)


def _write(path: str, payload: bytes) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(payload)


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.provider:
        from dataclasses import replace

        cfg = replace(cfg, perception=replace(cfg.perception, provider=args.provider))
    out = run_pipeline(args.scene, cfg)
    _write(args.out, emit_output_file(out))
    print(f"{out.scene.scene_id}: {out.terminated_by.value} after {len(out.iterations)} iteration(s), mean {out.final_evaluation.mean:.3f}")
    return EXIT_OK


def cmd_batch(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    worlds = [generate_world(seed, args.level) for seed in args.world_seeds]
    result = run_batch(worlds, cfg, parallelism=args.jobs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for item in result.items:
        if item.output is not None:
            (out_dir / f"{item.label}.json").write_bytes(emit_output_file(item.output))
    summary = result.summary.to_dict()
    summary["errors"] = [{"input": i.label, "error": i.error} for i in result.errors]
    (out_dir / "summary.json").write_bytes(dumps(summary))
    print(
        f"{summary['succeeded']}/{summary['total']} ok, acceptance rate {result.summary.acceptance_rate:.3f}, "
        f"mean iterations {result.summary.mean_iterations:.3f}, mean score {result.summary.mean_score:.3f}"
    )
    return EXIT_OK


def cmd_gen_world(args: argparse.Namespace) -> int:
    world = generate_world(args.seed, args.level, args.objects)
    _write(args.out, emit_world_file(world))
    print(f"{world.world_id}: {len(world.entities)} objects, {len(world.corridors)} corridor(s)")
    return EXIT_OK


def _condition_scores(directory: Path) -> dict[str, float]:
    scores = {}
    for f in sorted(directory.glob("*.json")):
        if f.name == "summary.json":
            continue
        out = parse_output_file(f.read_bytes())
        scores[f.stem] = out.final_evaluation.mean
    return scores


def cmd_rank(args: argparse.Namespace) -> int:
    root = Path(args.runs)
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    conditions = {p.name: _condition_scores(p) for p in subdirs} if subdirs else {root.name: _condition_scores(root)}
    names = sorted(conditions)
    scenes = sorted(set.intersection(*(set(s) for s in conditions.values()))) if names else []
    if not scenes:
        raise ContractViolation(f"no scene has results under every condition in {root}")
    matrix = [[conditions[c][s] for c in names] for s in scenes]
    table = aggregate_rankings(matrix, args.scale, conditions=names, higher_is_better=args.scale == "rank")
    _write(args.out, emit_ranking_file(table))
    for name, avg in zip(table.conditions, table.average):
        print(f"{name}: {avg:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="assistplan", description="Risk-aware assistive task planning pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the closed loop on one scene or world file")
    run.add_argument("--scene", required=True, help="scene file, world file, or image (remote provider)")
    run.add_argument("--config", help="YAML or JSON pipeline config")
    run.add_argument("--out", required=True, help="where to write the pipeline output")
    run.add_argument("--provider", choices=("oracle", "remote"), help="perception provider override")
    run.set_defaults(func=cmd_run)

    batch = sub.add_parser("batch", help="run generated worlds for a seed range")
    batch.add_argument("--world-seeds", required=True, type=_seed_range, help="seed or inclusive range a..b")
    batch.add_argument("--level", required=True, type=int, choices=(1, 2, 3))
    batch.add_argument("--config", help="YAML or JSON pipeline config")
    batch.add_argument("--out-dir", required=True)
    batch.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")
    batch.set_defaults(func=cmd_batch)

    gen = sub.add_parser("gen-world", help="write a generated world file")
    gen.add_argument("--seed", required=True, type=int)
    gen.add_argument("--level", required=True, type=int, choices=(1, 2, 3))
    gen.add_argument("--objects", type=int, help="override the object count")
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_world)

    rank = sub.add_parser("rank", help="aggregate run outputs into a ranking table")
    rank.add_argument("--runs", required=True, help="directory of run outputs, one subdirectory per condition")
    rank.add_argument("--out", required=True)
    rank.add_argument("--scale", choices=("rank", "seven_point"), default="rank")
    rank.set_defaults(func=cmd_rank)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ProviderError, PipelineError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (SceneParseError, ContractViolation, ConfigError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
