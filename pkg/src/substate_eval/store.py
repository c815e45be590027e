"""Task lists, benchmark index, and the on-disk evaluation layout.

Layout under a store root::

    tasks/<task>.json      task records (id, description, app)
    graphs/<task>.json     canonical substate graphs
    traces/<task>/         manifest.json + screenshots
    captions/<model>/<sha256>.txt
    judgements/<task>.json
    reports/<name>.json
    locks/<task>.lock
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from collections.abc import Iterable, Sequence
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

from filelock import FileLock

from .decomposer import TaskSpec
from .judge import TaskJudgement
from .metrics import MetricReport
from .ssr import SubstateGraph, from_canonical, to_canonical
from .traces import TraceManifest, load_trace

UNKNOWN_APP = "unknown"


class EmptyFileError(ValueError):
    pass


def slugify(text: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", text.casefold()).strip("-")
    return slug or "task"


def ingest_task_list(path: Path | str) -> list[TaskSpec]:
    """Read one task per line, optionally ``app<TAB>description``.

    Ids are ``<app-slug>-<line number>`` using physical line numbers, so
    inserting blank lines elsewhere never renumbers a task.
    """
    tasks = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "\t" in line:
            app, description = (part.strip() for part in line.split("\t", 1))
        else:
            app, description = "", line.strip()
        if not description:
            continue
        prefix = slugify(app) if app else "task"
        tasks.append(TaskSpec(f"{prefix}-{lineno:04d}", description, app or None))
    if not tasks:
        raise EmptyFileError(f"{path}: no tasks")
    return tasks


@dataclass(frozen=True)
class BenchmarkIndex:
    apps: dict[str, tuple[str, ...]]

    @classmethod
    def build(cls, tasks: Iterable[TaskSpec]) -> BenchmarkIndex:
        apps: dict[str, list[str]] = {}
        for task in tasks:
            apps.setdefault(task.app_name or UNKNOWN_APP, []).append(task.task_id)
        return cls({app: tuple(ids) for app, ids in sorted(apps.items())})

    @property
    def totals(self) -> dict[str, int]:
        return {app: len(ids) for app, ids in self.apps.items()}

    @property
    def total(self) -> int:
        return sum(self.totals.values())

    def render(self) -> str:
        width = max([len("Application"), *map(len, self.apps)])
        lines = [f"{'Application':<{width}}  Number of Tasks"]
        lines += [f"{app:<{width}}  {count}" for app, count in self.totals.items()]
        lines.append(f"{'Total':<{width}}  {self.total}")
        return "\n".join(lines) + "\n"


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


class DiskCaptionCache:
    """Caption cache keyed by (model, screenshot digest), one file per entry."""

    def __init__(self, root: Path | str):
        self.root = Path(root)

    def _path(self, model: str, digest: str) -> Path:
        return self.root / slugify(model) / f"{digest}.txt"

    def get(self, model: str, digest: str) -> str | None:
        path = self._path(model, digest)
        if not path.is_file():
            return None
        return path.read_text(encoding="utf-8")

    def put(self, model: str, digest: str, caption: str) -> None:
        atomic_write(self._path(model, digest), caption.encode("utf-8"))


class TraceStore:
    def __init__(self, root: Path | str):
        self.root = Path(root)

    # layout
    @property
    def tasks_dir(self) -> Path:
        return self.root / "tasks"

    @property
    def graphs_dir(self) -> Path:
        return self.root / "graphs"

    @property
    def traces_dir(self) -> Path:
        return self.root / "traces"

    @property
    def judgements_dir(self) -> Path:
        return self.root / "judgements"

    @property
    def reports_dir(self) -> Path:
        return self.root / "reports"

    def caption_cache(self) -> DiskCaptionCache:
        return DiskCaptionCache(self.root / "captions")

    @contextmanager
    def lock(self, task_id: str):
        path = self.root / "locks" / f"{task_id}.lock"
        path.parent.mkdir(parents=True, exist_ok=True)
        with FileLock(str(path)):
            yield

    # tasks
    def task_path(self, task_id: str) -> Path:
        return self.tasks_dir / f"{task_id}.json"

    def store_task(self, task: TaskSpec) -> Path:
        doc = {
            "task_id": task.task_id,
            "description": task.description,
            "app_name": task.app_name,
            "additional_info": task.additional_info,
        }
        path = self.task_path(task.task_id)
        atomic_write(path, (json.dumps(doc, indent=2, ensure_ascii=False) + "\n").encode("utf-8"))
        return path

    def load_task(self, task_id: str) -> TaskSpec:
        doc = json.loads(self.task_path(task_id).read_text(encoding="utf-8"))
        return TaskSpec(**doc)

    # graphs
    def graph_path(self, task_id: str) -> Path:
        return self.graphs_dir / f"{task_id}.json"

    def store_graph(self, graph: SubstateGraph) -> Path:
        path = self.graph_path(graph.task_id)
        with self.lock(graph.task_id):
            atomic_write(path, to_canonical(graph))
        return path

    def load_graph(self, task_id: str) -> SubstateGraph:
        return from_canonical(self.graph_path(task_id).read_bytes())

    def graph_ids(self) -> list[str]:
        return sorted(p.stem for p in self.graphs_dir.glob("*.json"))

    # traces
    def trace_dir(self, task_id: str) -> Path:
        return self.traces_dir / task_id

    def load_trace(self, task_id: str) -> TraceManifest:
        return load_trace(self.trace_dir(task_id))

    # judgements
    def judgement_path(self, task_id: str) -> Path:
        return self.judgements_dir / f"{task_id}.json"

    def store_judgement(self, judgement: TaskJudgement) -> Path:
        path = self.judgement_path(judgement.task_id)
        with self.lock(judgement.task_id):
            atomic_write(path, judgement.to_json())
        return path

    def load_judgement(self, task_id: str) -> TaskJudgement:
        return TaskJudgement.from_json(self.judgement_path(task_id).read_bytes())

    def load_judgements(self, task_ids: Sequence[str] | None = None) -> list[TaskJudgement]:
        if task_ids is None:
            task_ids = sorted(p.stem for p in self.judgements_dir.glob("*.json"))
        return [self.load_judgement(t) for t in task_ids]

    # reports
    def store_report(self, name: str, report: MetricReport) -> Path:
        path = self.reports_dir / f"{name}.json"
        atomic_write(path, report.to_json())
        return path

    def load_report(self, name: str) -> MetricReport:
        path = self.reports_dir / f"{name}.json"
        return MetricReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
