"""Command-line entry point: record, generate, deploy, stats, replay.

Exit codes: 0 success, 1 usage, 2 task/config/data error, 3 generation
shortfall (attempt cap reached before the target count).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from skillgen import __version__, hsp
from skillgen.datagen import (GenerationConfig, generate_dataset, record_source, replay_demo)
from skillgen.demos import DatasetStats, load_dataset, save_dataset
from skillgen.errors import SkillGenError
from skillgen.geometry import RotationNoiseSpec, TranslationNoiseSpec
from skillgen.report import dataset_rows, deploy_rows, plot_deploy, plot_segment_lengths, write_rows
from skillgen.world.task import check_success, load_task

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_SHORTFALL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _mode(value: str) -> str:
    return value.replace("-", "_")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="skillgen", description="Skill-based demonstration generation and deployment.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def common(sp, out_required=True):
        sp.add_argument("--task", required=True, help="shipped task name or task JSON path")
        sp.add_argument("--variant", default="D0")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=out_required, type=Path)

    rec = sub.add_parser("record", help="record source demos with the scripted expert")
    common(rec)
    rec.add_argument("--num", type=int, default=10)

    gen = sub.add_parser("generate", help="generate a dataset from source demos")
    common(gen)
    gen.add_argument("--source", required=True, type=Path)
    gen.add_argument("--mode", type=_mode, default="skillgen",
                     choices=["skillgen", "mimicgen_interp", "replay_noise"])
    gen.add_argument("--num", type=int, default=10)
    gen.add_argument("--max-attempts", type=int, default=None)
    gen.add_argument("--workers", type=int, default=1)
    gen.add_argument("--sigma", type=float, default=0.05, help="action noise std (normalized)")
    gen.add_argument("--augment-initiation", action="store_true")
    gen.add_argument("--aug-t", type=float, default=0.08, help="translation half-width, meters")
    gen.add_argument("--aug-r", type=float, default=80.0, help="max rotation, degrees")
    gen.add_argument("--interp-steps", type=int, default=5)

    dep = sub.add_parser("deploy", help="deploy hybrid skill policies")
    common(dep)
    dep.add_argument("--dataset", type=Path, help="generated training dataset")
    dep.add_argument("--source", required=True, type=Path)
    dep.add_argument("--hsp", choices=["class", "reg", "oracle"], default="class")
    dep.add_argument("--episodes", type=int, default=50)
    dep.add_argument("--transit", choices=["plan", "interp"], default="plan")

    st = sub.add_parser("stats", help="summarize a dataset")
    st.add_argument("dataset", type=Path)
    st.add_argument("--figure", type=Path, help="write segment-length histograms here")

    rp = sub.add_parser("replay", help="re-execute one demo and check success")
    rp.add_argument("dataset", type=Path)
    rp.add_argument("--index", type=int, default=0)
    rp.add_argument("--task", help="override the task named in the dataset")
    return p


def _load_nonempty(path: Path):
    demos, _ = load_dataset(path)
    if not demos:
        raise SkillGenError(f"{path}: dataset has no demonstrations")
    return demos


def cmd_record(args) -> int:
    task = load_task(args.task)
    demos = record_source(task, args.variant, args.num, seed=args.seed)
    stats = DatasetStats(attempts=len(demos), successes=len(demos), complete=True)
    save_dataset(demos, stats, args.out, meta={"task": task.name, "variant": args.variant,
                                               "kind": "source", "seed": args.seed})
    print(f"demos\t{len(demos)}")
    return EXIT_OK


def cmd_generate(args) -> int:
    task = load_task(args.task)
    source = _load_nonempty(args.source)
    config = GenerationConfig(
        mode=args.mode, num_target_demos=args.num, action_noise_sigma=args.sigma,
        augment_initiation=args.augment_initiation,
        aug_translation=TranslationNoiseSpec(args.aug_t),
        aug_rotation=RotationNoiseSpec(np.radians(args.aug_r)),
        interp_steps=args.interp_steps, seed=args.seed, max_attempts=args.max_attempts,
        workers=args.workers)
    demos, stats = generate_dataset(task, args.variant, source, config)
    meta = {"task": task.name, "variant": args.variant, "mode": args.mode, "seed": args.seed,
            "sigma": args.sigma, "augment_initiation": args.augment_initiation}
    save_dataset(demos, stats, args.out, meta=meta)
    write_rows(stats.summary().items())
    return EXIT_OK if stats.complete else EXIT_SHORTFALL


def cmd_deploy(args) -> int:
    task = load_task(args.task)
    source = _load_nonempty(args.source)
    dataset = load_dataset(args.dataset)[0] if args.dataset else []
    if args.hsp != "oracle" and not dataset:
        raise SkillGenError(f"--hsp {args.hsp} needs a non-empty --dataset")
    task.variant(args.variant)
    if dataset:
        sidecar = Path(str(args.dataset) + ".hsp.json")
        if not sidecar.exists():
            hsp.save_predictor_sidecar(sidecar, dataset)
    skills = hsp.build_skills(task, dataset, source, args.hsp)
    report = hsp.deploy(task, args.variant, skills, args.episodes, seed=args.seed,
                        transit=args.transit)
    args.out.mkdir(parents=True, exist_ok=True)
    traces = [e.trace for e in report.episodes if e.trace is not None]
    save_dataset(traces, _trace_stats(report), args.out / "traces.ndjson",
                 meta={"task": task.name, "variant": args.variant, "hsp": args.hsp,
                       "seed": args.seed})
    rows = deploy_rows(report)
    with open(args.out / "report.tsv", "w") as fh:
        write_rows(rows, fh)
    (args.out / "episodes.json").write_text(json.dumps(
        [{"index": e.index, "success": e.success, "cause": e.cause,
          "failed_skill": e.failed_skill, "seed": e.seed} for e in report.episodes],
        indent=1) + "\n")
    plot_deploy(report, args.out / "outcomes.png")
    write_rows(rows)
    return EXIT_OK


def _trace_stats(report) -> DatasetStats:
    """Deployment outcomes in dataset-stats form (task_failure absorbs timeouts)."""
    stats = DatasetStats(complete=True)
    for e in report.episodes:
        cause = None if e.success else ("task_failure" if e.cause == "skill_timeout" else e.cause)
        stats.record(cause, e.failed_skill)
    return stats


def cmd_stats(args) -> int:
    demos, stats = load_dataset(args.dataset)
    write_rows(dataset_rows(demos, stats))
    if args.figure:
        plot_segment_lengths(demos, args.figure)
    return EXIT_OK


def cmd_replay(args) -> int:
    demos, _ = load_dataset(args.dataset)
    if not 0 <= args.index < len(demos):
        raise IndexError(f"index {args.index} out of range for {len(demos)} demos")
    demo = demos[args.index]
    task = load_task(args.task or demo.task)
    final = replay_demo(task, demo)
    ok = check_success(task, final)
    matches = demo.final_state is None or final == demo.final_state
    print(f"steps\t{len(demo.flat_steps())}")
    print(f"success\t{str(ok).lower()}")
    print(f"final_state_match\t{str(matches).lower()}")
    return EXIT_OK if ok == demo.success and matches else EXIT_CONFIG


COMMANDS = {"record": cmd_record, "generate": cmd_generate, "deploy": cmd_deploy,
            "stats": cmd_stats, "replay": cmd_replay}


def main(argv=None) -> int:
    level = os.environ.get("SKILLGEN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except IndexError as exc:
        print(f"skillgen: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SkillGenError, ValueError, OSError) as exc:
        print(f"skillgen: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
