import json
import random
from pathlib import Path

import pytest

from helpers import MRBEAST_GRAPH, png_bytes
from substate_eval.decomposer import TaskSpec
from substate_eval.judge import (
    Disposition,
    ReasonerOutput,
    ScreenshotRecord,
    TaskJudgement,
    Verdict,
)
from substate_eval.store import (
    BenchmarkIndex,
    DiskCaptionCache,
    EmptyFileError,
    TraceStore,
    ingest_task_list,
    slugify,
)
from substate_eval.traces import DigestMismatch, ManifestError, TraceManifest, load_trace, write_trace

FIXTURE = Path(__file__).parent / "fixtures" / "androidlab_tasks.tsv"

TABLE4 = {
    "Bluecoins": 10, "Calendar": 14, "Cantook": 7, "Clock": 21, "Contacts": 11,
    "Maps": 5, "Pi Music Player": 6, "Setting": 14, "Zoom": 5,
}


class TestIngest:
    def test_benchmark_distribution(self):
        tasks = ingest_task_list(FIXTURE)
        index = BenchmarkIndex.build(tasks)
        assert index.totals == TABLE4
        assert index.total == 93
        assert len({t.task_id for t in tasks}) == 93

    def test_render(self):
        text = BenchmarkIndex.build(ingest_task_list(FIXTURE)).render()
        lines = text.splitlines()
        assert lines[0].startswith("Application")
        assert lines[-1].split() == ["Total", "93"]
        assert "Pi Music Player  6" in text

    def test_ids_stable_under_blank_lines(self, tmp_path):
        a = tmp_path / "a.txt"
        a.write_text("Clock\tSet an alarm\nCalendar\tAdd an event\n")
        b = tmp_path / "b.txt"
        b.write_text("Clock\tSet an alarm\nCalendar\tAdd an event\n\n# trailing note\n")
        assert [t.task_id for t in ingest_task_list(a)] == [t.task_id for t in ingest_task_list(b)]
        assert [t.task_id for t in ingest_task_list(a)] == ["clock-0001", "calendar-0002"]

    def test_plain_lines(self, tmp_path):
        path = tmp_path / "t.txt"
        path.write_text("Open the settings\n")
        (task,) = ingest_task_list(path)
        assert task == TaskSpec("task-0001", "Open the settings", None)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("\n  \n# only comments\n")
        with pytest.raises(EmptyFileError):
            ingest_task_list(path)

    def test_unknown_app_bucket(self):
        index = BenchmarkIndex.build([TaskSpec("x", "do it")])
        assert index.totals == {"unknown": 1}

    def test_slugify(self):
        assert slugify("Pi Music Player") == "pi-music-player"
        assert slugify("!!!") == "task"


def random_judgement(rng: random.Random, task_id: str) -> TaskJudgement:
    n = rng.randint(1, 6)
    statuses = tuple(rng.choice(list(Verdict)) for _ in range(n))
    records = []
    for k in range(rng.randint(0, 3)):
        states = tuple(rng.choice(list(Verdict)) for _ in range(n))
        out = ReasonerOutput(
            f"thought {k} é", tuple(f"a{i}" for i in range(n)), states,
            rng.choice([None, "note \"quoted\""]),
        )
        records.append(
            ScreenshotRecord(
                index=k,
                caption=f"caption {k}",
                queried=tuple(range(n)),
                responses=(f"raw {k}",),
                output=out,
                disposition=rng.choice(list(Disposition)),
                verdicts=tuple((i, v) for i, v in enumerate(states)),
                note=rng.choice(["", "retry"]),
            )
        )
    return TaskJudgement(
        task_id=task_id,
        graph_digest=f"{rng.getrandbits(256):064x}",
        statuses=statuses,
        succeeded_at=tuple((i, 0) for i, v in enumerate(statuses) if v is Verdict.SUCCESS),
        records=tuple(records),
        skipped=((1, "capture failed"),) if rng.random() < 0.3 else (),
        kinds=tuple(rng.choice(["Page", "Unit"]) for _ in range(n)),
    )


class TestTraceStore:
    def test_task_and_graph_round_trip(self, tmp_path):
        store = TraceStore(tmp_path)
        task = TaskSpec("mrbeast", "Subscribe", "YouTube", "extra")
        store.store_task(task)
        store.store_graph(MRBEAST_GRAPH)
        assert store.load_task("mrbeast") == task
        assert store.load_graph("mrbeast") == MRBEAST_GRAPH
        assert store.graph_ids() == ["mrbeast"]

    def test_judgements_byte_stable(self, tmp_path):
        store = TraceStore(tmp_path)
        rng = random.Random(11)
        for i in range(20):
            j = random_judgement(rng, f"task-{i:02d}")
            path = store.store_judgement(j)
            first = path.read_bytes()
            loaded = store.load_judgement(j.task_id)
            assert loaded == j
            store.store_judgement(loaded)
            assert path.read_bytes() == first
        assert len(store.load_judgements()) == 20

    def test_trace_layout(self, tmp_path):
        store = TraceStore(tmp_path)
        write_trace(store.trace_dir("t"), "t", [png_bytes(1), png_bytes(2)], provenance="agent:demo")
        trace = store.load_trace("t")
        assert [s.step for s in trace.screenshots] == [0, 1]
        assert trace.provenance == "agent:demo"


class TestTraces:
    def test_missing_image(self, tmp_path):
        trace = write_trace(tmp_path, "t", [png_bytes(1), png_bytes(2)])
        trace.screenshots[1].path.unlink()
        with pytest.raises(ManifestError, match="missing"):
            load_trace(tmp_path)

    def test_digest_mismatch(self, tmp_path):
        trace = write_trace(tmp_path, "t", [png_bytes(1)])
        trace.screenshots[0].path.write_bytes(png_bytes(2))
        with pytest.raises(DigestMismatch):
            load_trace(tmp_path)
        assert load_trace(tmp_path, verify=False).task_id == "t"

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ManifestError):
            load_trace(tmp_path)

    def test_empty_manifest(self, tmp_path):
        write_trace(tmp_path, "t", [])
        with pytest.raises(ManifestError, match="no screenshots"):
            load_trace(tmp_path)

    def test_order_comes_from_manifest(self, tmp_path):
        trace = write_trace(tmp_path, "t", [png_bytes(1), png_bytes(2)])
        # Rename files so directory order disagrees with manifest order.
        a, b = trace.screenshots
        a.path.rename(tmp_path / "z.png")
        b.path.rename(tmp_path / "a.png")
        doc = json.loads((tmp_path / "manifest.json").read_text())
        doc["screenshots"][0]["path"] = "z.png"
        doc["screenshots"][1]["path"] = "a.png"
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        loaded = load_trace(tmp_path)
        assert [s.sha256 for s in loaded.screenshots] == [a.sha256, b.sha256]

    @pytest.mark.parametrize("provenance", ["robot", "agent:", "agent: x"])
    def test_bad_provenance(self, provenance):
        with pytest.raises(ManifestError):
            TraceManifest("t", (), provenance)

    def test_steps_must_increase(self, tmp_path):
        trace = write_trace(tmp_path, "t", [png_bytes(1), png_bytes(2)])
        with pytest.raises(ManifestError):
            TraceManifest("t", tuple(reversed(trace.screenshots)))


def test_disk_caption_cache(tmp_path):
    cache = DiskCaptionCache(tmp_path)
    assert cache.get("gpt-4o", "abc") is None
    cache.put("gpt-4o", "abc", "home page ✓")
    assert DiskCaptionCache(tmp_path).get("gpt-4o", "abc") == "home page ✓"
    assert DiskCaptionCache(tmp_path).get("other-model", "abc") is None
