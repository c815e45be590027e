"""Command line entry point: ``decompose``, ``judge``, ``score`` and ``report``.

Exit codes: 0 success, 1 partial failure under ``--keep-going``, 2 hard
failure or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .decomposer import decompose
from .gateway import Gateway, GatewayError, Transcript
from .judge import JudgeConfig, judge_task
from .metrics import (
    Family,
    GroundTruthJudgement,
    MetricError,
    SubstateAnnotation,
    agent_performance,
    decomposer_quality,
    judge_reliability,
)
from .report import render_report, render_table
from .store import EmptyFileError, TraceStore, atomic_write, ingest_task_list

logger = logging.getLogger("substate_eval")

EXIT_OK, EXIT_PARTIAL, EXIT_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


def _run_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.store is not None:
        cfg = replace(cfg, store=args.store)
    if getattr(args, "parallel", None) is not None:
        cfg = replace(cfg, parallel=args.parallel)
    if getattr(args, "transcript", None) is not None:
        cfg = replace(cfg, transcript=args.transcript)
    return cfg


def _run_tasks(
    task_ids: Sequence[str],
    work: Callable[[str], None],
    *,
    parallel: int,
    keep_going: bool,
) -> int:
    failures: list[tuple[str, str]] = []
    done = 0

    def attempt(task_id: str) -> tuple[str, str | None]:
        try:
            work(task_id)
        except Exception as exc:  # noqa: BLE001 - every task failure is reported by name
            logger.debug("task %s failed", task_id, exc_info=True)
            return task_id, f"{type(exc).__name__}: {exc}"
        return task_id, None

    if parallel == 1:
        results = []
        for task_id in task_ids:
            result = attempt(task_id)
            results.append(result)
            if result[1] is not None and not keep_going:
                break
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(attempt, task_ids))

    for task_id, error in results:
        if error is None:
            done += 1
            print(f"ok      {task_id}")
        else:
            failures.append((task_id, error))
            print(f"FAILED  {task_id}: {error}")
    print(f"{done} succeeded, {len(failures)} failed, {len(task_ids) - len(results)} not run")
    if not failures:
        return EXIT_OK
    return EXIT_PARTIAL if keep_going else EXIT_FAILED


def cmd_decompose(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    store = TraceStore(cfg.store)
    tasks = ingest_task_list(args.tasks_file)
    by_id = {t.task_id: t for t in tasks}
    gateway = Gateway(cfg.backend("decomposer"), transcript=Transcript(cfg.transcript))

    def work(task_id: str) -> None:
        task = by_id[task_id]
        store.store_task(task)
        store.store_graph(decompose(task, gateway, retries=cfg.decomposer_retries))

    return _run_tasks(list(by_id), work, parallel=cfg.parallel, keep_going=args.keep_going)


def cmd_judge(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    store = TraceStore(cfg.store)
    transcript = Transcript(cfg.transcript)
    reasoner = Gateway(cfg.backend("reasoner"), transcript=transcript)
    capturer = Gateway(
        cfg.backend("capturer"), transcript=transcript, caption_cache=store.caption_cache()
    )
    judge_cfg = JudgeConfig(checker_retries=cfg.checker_retries, memory_limit=cfg.memory_limit)
    task_ids = args.tasks or store.graph_ids()
    if not task_ids:
        raise UsageError(f"no graphs found under {store.graphs_dir}")

    def work(task_id: str) -> None:
        task = store.load_task(task_id)
        graph = store.load_graph(task_id)
        trace = store.load_trace(task_id)
        judgement = judge_task(
            task, graph, trace, reasoner=reasoner, capturer=capturer, config=judge_cfg
        )
        store.store_judgement(judgement)

    return _run_tasks(task_ids, work, parallel=cfg.parallel, keep_going=args.keep_going)


def _load_tasks_doc(path: Path) -> list[dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return doc["tasks"] if isinstance(doc, dict) else doc


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    store = TraceStore(cfg.store)
    family = args.family
    if family is None:
        family = "decomposer" if args.annotations else "reliability" if args.truth else "agent"
    if family == "reliability" and not args.truth:
        raise UsageError("reliability scoring needs --truth")
    if family == "decomposer" and not args.annotations:
        raise UsageError("decomposer scoring needs --annotations")

    if family == "decomposer":
        annotations = [SubstateAnnotation.from_dict(d) for d in _load_tasks_doc(args.annotations)]
        report = decomposer_quality(annotations)
    else:
        judged = store.load_judgements(args.tasks or None)
        if not judged:
            raise UsageError(f"no judgements found under {store.judgements_dir}")
        if family == "reliability":
            truth = [GroundTruthJudgement.from_dict(d) for d in _load_tasks_doc(args.truth)]
            report = judge_reliability(judged, truth)
        else:
            report = agent_performance(judged)
    path = store.store_report(report.family.value, report)
    print(render_table(report))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    store = TraceStore(cfg.store)
    judgements = store.load_judgements()
    graphs = {}
    for j in judgements:
        if store.graph_path(j.task_id).is_file():
            graphs[j.task_id] = store.load_graph(j.task_id)
    reports = [
        store.load_report(f.value)
        for f in Family
        if (store.reports_dir / f"{f.value}.json").is_file()
    ]
    if not judgements:
        logger.warning("no judgements under %s", store.judgements_dir)
    text = render_report(judgements, reports, graphs)
    if args.out:
        atomic_write(Path(args.out), text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="substate-eval", description="Substate-based evaluation of GUI agent trajectories"
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="run configuration (JSON)")
        p.add_argument("--store", type=Path, help="store root; overrides the config")

    def batch(p: argparse.ArgumentParser) -> None:
        p.add_argument("--parallel", type=int, help="max concurrent tasks")
        p.add_argument("--keep-going", action="store_true", help="continue past failed tasks")
        p.add_argument("--transcript", type=Path, help="append model calls to this JSONL file")

    p = sub.add_parser("decompose", help="generate substate graphs for a task list")
    p.add_argument("tasks_file", type=Path)
    common(p)
    batch(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("judge", help="judge stored traces against stored graphs")
    p.add_argument("--tasks", nargs="*", default=None, help="task ids (default: all graphs)")
    common(p)
    batch(p)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("score", help="compute a metric family")
    p.add_argument("--truth", type=Path, help="human-verified judgements (JSON)")
    p.add_argument("--annotations", type=Path, help="substate annotations (JSON)")
    p.add_argument("--family", choices=["agent", "reliability", "decomposer"])
    p.add_argument("--tasks", nargs="*", default=None)
    common(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="render checklists and metric tables")
    p.add_argument("--out", type=Path, help="write the report here instead of stdout")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except (ConfigError, EmptyFileError, MetricError, GatewayError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
