import json
from pathlib import Path

import pytest

from helpers import MRBEAST_CAPTIONS, MRBEAST_OUTPUT, MRBEAST_TASK, png_bytes, reasoner_json
from test_judge import MRBEAST_RESPONSES
from substate_eval.cli import main
from substate_eval.decomposer import TaskSpec, build_decomposer_prompt
from substate_eval.gateway import Transcript, sha256_hex
from substate_eval.store import TraceStore
from substate_eval.traces import write_trace

GOLDEN_REPORT = Path(__file__).parent / "golden" / "report.md"

CLOCK_TASK = "Set an alarm for 7:00 AM"
CLOCK_OUTPUT = (
    '0. PageNode(content="Clock app alarm page is visible", parent_id=None)\n'
    '1. UnitNode(content="An alarm for 7:00 AM is listed and enabled", parent_id=0)\n'
)
YT, CLOCK = "youtube-app-0001", "clock-0002"
CLOCK_CAPTION = "App: Clock. Alarm tab listing one alarm at 7:00 AM with its switch on."


def write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=2), encoding="utf-8")
    return path


def vision_calls(transcript: Path) -> int:
    return sum(r.kind == "vision" for r in Transcript.load(transcript))


class Workspace:
    """A store root with scripted backend files and a config wiring them together."""

    def __init__(self, root: Path, *, reasoner_responses=None, extra_tasks=()):
        self.root = root
        self.store = TraceStore(root / "store")
        lines = [f"YouTube app\t{MRBEAST_TASK}", f"Clock\t{CLOCK_TASK}", *extra_tasks]
        self.tasks = root / "tasks.txt"
        self.tasks.write_text("\n".join(lines) + "\n", encoding="utf-8")
        by_prompt = {
            build_decomposer_prompt(TaskSpec(YT, MRBEAST_TASK, "YouTube app")).digest: MRBEAST_OUTPUT,
            build_decomposer_prompt(TaskSpec(CLOCK, CLOCK_TASK, "Clock")).digest: CLOCK_OUTPUT,
        }
        write_json(root / "decomposer.json", {"by_prompt": by_prompt})
        if reasoner_responses is None:
            # Graph ids are judged in sorted order: clock first.
            reasoner_responses = [reasoner_json(["true", "true"]), *MRBEAST_RESPONSES]
        write_json(root / "reasoner.json", {"responses": reasoner_responses})
        self.images = {YT: [png_bytes(i) for i in (1, 2, 3)], CLOCK: [png_bytes(4)]}
        captions = {sha256_hex(img): cap for img, cap in zip(self.images[YT], MRBEAST_CAPTIONS)}
        captions[sha256_hex(self.images[CLOCK][0])] = CLOCK_CAPTION
        write_json(root / "capturer.json", {"captions": captions})
        self.config = write_json(root / "config.json", {
            "store": "store",
            "stages": {
                "decomposer": {"provider": "scripted", "model": "dec", "endpoint": "decomposer.json"},
                "reasoner": {"provider": "scripted", "model": "rea", "endpoint": "reasoner.json"},
                "capturer": {"provider": "scripted", "model": "cap", "endpoint": "capturer.json"},
            },
        })

    def run(self, *args) -> int:
        return main([args[0], "--config", str(self.config), *args[1:]])

    def write_traces(self):
        for task_id, images in self.images.items():
            write_trace(self.store.trace_dir(task_id), task_id, images, provenance="agent:scripted")

    def judged(self):
        assert self.run("decompose", str(self.tasks)) == 0
        self.write_traces()
        assert self.run("judge") == 0

    def truth_file(self, doc) -> Path:
        return write_json(self.root / "truth.json", doc)


def golden_workspace(root: Path) -> Workspace:
    """Two tasks, the clock one left incomplete."""
    root.mkdir()
    return Workspace(root, reasoner_responses=[reasoner_json(["true", "uncertain"]), *MRBEAST_RESPONSES])


@pytest.fixture
def ws(tmp_path):
    return Workspace(tmp_path)


class TestDecompose:
    def test_writes_graphs(self, ws, capsys):
        assert ws.run("decompose", str(ws.tasks)) == 0
        assert ws.store.graph_ids() == [CLOCK, YT]
        assert len(ws.store.load_graph(YT)) == 5
        assert ws.store.load_task(CLOCK).app_name == "Clock"
        assert "2 succeeded, 0 failed" in capsys.readouterr().out

    def test_rerun_is_byte_identical(self, ws):
        ws.run("decompose", str(ws.tasks))
        first = {p.name: p.read_bytes() for p in ws.store.graphs_dir.iterdir()}
        ws.run("decompose", str(ws.tasks))
        assert {p.name: p.read_bytes() for p in ws.store.graphs_dir.iterdir()} == first

    def test_failure_stops_batch(self, tmp_path, capsys):
        ws = Workspace(tmp_path, extra_tasks=["Zoom\tJoin a meeting", "Maps\tFind a route"])
        assert ws.run("decompose", str(ws.tasks)) == 2
        out = capsys.readouterr().out
        assert "FAILED  zoom-0003" in out
        assert "maps-0004" not in out.replace("not run", "")
        assert "1 not run" in out

    def test_keep_going_is_partial(self, tmp_path, capsys):
        ws = Workspace(tmp_path, extra_tasks=["Zoom\tJoin a meeting", "Maps\tFind a route"])
        assert ws.run("decompose", str(ws.tasks), "--keep-going") == 1
        out = capsys.readouterr().out
        assert "FAILED  zoom-0003" in out and "FAILED  maps-0004" in out
        assert ws.store.graph_ids() == [CLOCK, YT]

    def test_parallel(self, ws):
        assert ws.run("decompose", str(ws.tasks), "--parallel", "2") == 0
        assert ws.store.graph_ids() == [CLOCK, YT]

    def test_empty_task_file(self, ws, tmp_path, capsys):
        empty = tmp_path / "empty.txt"
        empty.write_text("\n")
        assert ws.run("decompose", str(empty)) == 2
        assert "no tasks" in capsys.readouterr().err

    def test_bad_config(self, tmp_path, capsys):
        cfg = write_json(tmp_path / "c.json", {"stages": {}, "bogus": 1})
        assert main(["decompose", str(tmp_path / "t.txt"), "--config", str(cfg)]) == 2
        assert "bogus" in capsys.readouterr().err


class TestJudge:
    def test_end_to_end(self, ws):
        ws.judged()
        yt = ws.store.load_judgement(YT)
        assert [v.value for v in yt.statuses] == ["success"] * 5
        assert ws.store.load_judgement(CLOCK).completed == 2

    def test_rerun_uses_caption_cache(self, ws):
        ws.run("decompose", str(ws.tasks))
        ws.write_traces()
        first, second = ws.root / "run1.jsonl", ws.root / "run2.jsonl"
        assert ws.run("judge", "--transcript", str(first)) == 0
        before = {p.name: p.read_bytes() for p in ws.store.judgements_dir.iterdir()}
        assert ws.run("judge", "--transcript", str(second)) == 0
        assert vision_calls(first) == 4
        assert vision_calls(second) == 0
        assert {p.name: p.read_bytes() for p in ws.store.judgements_dir.iterdir()} == before

    def test_transcript_replay(self, ws):
        ws.run("decompose", str(ws.tasks))
        ws.write_traces()
        record = ws.root / "run.jsonl"
        ws.run("judge", "--transcript", str(record))
        before = ws.store.judgement_path(YT).read_bytes()
        cfg = json.loads(ws.config.read_text())
        for stage in ("reasoner", "capturer"):
            cfg["stages"][stage]["endpoint"] = "run.jsonl"
        write_json(ws.config, cfg)
        for p in (ws.store.root / "captions").rglob("*.txt"):
            p.unlink()
        assert ws.run("judge") == 0
        assert ws.store.judgement_path(YT).read_bytes() == before

    def test_empty_trace_names_task(self, ws, capsys):
        ws.run("decompose", str(ws.tasks))
        ws.store.trace_dir(CLOCK).mkdir(parents=True)
        assert ws.run("judge", "--tasks", CLOCK) == 2
        out = capsys.readouterr().out
        assert f"FAILED  {CLOCK}" in out and "manifest" in out

    def test_no_graphs(self, ws, capsys):
        assert ws.run("judge") == 2
        assert "no graphs" in capsys.readouterr().err


class TestScore:
    def test_agent(self, ws, capsys):
        ws.judged()
        capsys.readouterr()
        assert ws.run("score") == 0
        out = capsys.readouterr().out
        assert "| SCR | TCR |" in out and "100.00%" in out
        assert (ws.store.reports_dir / "agent_performance.json").is_file()

    def test_reliability(self, ws, capsys):
        ws.judged()
        truth = ws.truth_file([
            {"task_id": YT, "statuses": ["success"] * 4 + ["uncertain"]},
            {"task_id": CLOCK, "statuses": ["success", "success"], "optional": [1]},
        ])
        assert ws.run("score", "--truth", str(truth)) == 0
        report = ws.store.load_report("judge_reliability")
        assert report.rates["sr"].numerator == 5 and report.rates["sr"].denominator == 6
        assert report["fp"] * 6 == 1

    def test_reliability_needs_truth(self, ws, capsys):
        ws.judged()
        assert ws.run("score", "--family", "reliability") == 2
        assert "--truth" in capsys.readouterr().err

    def test_decomposer(self, ws):
        ann = write_json(ws.root / "ann.json", [{
            "task_id": YT, "human_ids": [0, 1, 2, 3],
            "labels": {"0": {"label": "covering", "ref": 0}, "1": {"label": "covering", "ref": 1},
                       "2": {"label": "covering", "ref": 2}, "3": {"label": "optional"},
                       "4": {"label": "redundant", "ref": 2}},
        }])
        assert ws.run("score", "--annotations", str(ann)) == 0
        report = ws.store.load_report("decomposer_quality")
        assert report.rates["cover_rate"].render() == "0.75"

    def test_no_judgements(self, ws, capsys):
        assert ws.run("score") == 2


class TestReport:
    def test_golden(self, tmp_path):
        ws = golden_workspace(tmp_path / "ws")
        ws.judged()
        truth = ws.truth_file([
            {"task_id": YT, "statuses": ["success"] * 5},
            {"task_id": CLOCK, "statuses": ["success", "uncertain"]},
        ])
        ws.run("score")
        ws.run("score", "--truth", str(truth))
        out = tmp_path / "report.md"
        assert ws.run("report", "--out", str(out)) == 0
        assert out.read_text(encoding="utf-8") == GOLDEN_REPORT.read_text(encoding="utf-8")

    def test_empty_store(self, tmp_path, capsys):
        assert main(["report", "--store", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "warning: no judgements" in out

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == 2
