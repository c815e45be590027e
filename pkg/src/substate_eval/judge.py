"""Trajectory judging: capture each screenshot, reason over pending substates, check.

The loop walks a trajectory in order. For every screenshot, the capturer
turns the image into text, the reasoner judges each substate that has not yet
succeeded, and the checker enforces the verdict vocabulary and the rule that a
UnitNode may only succeed together with its parent PageNode. Successful
substates latch: once true they stay true and are no longer queried, only
shown to the reasoner as prior knowledge.
"""

from __future__ import annotations

import io
import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum

from PIL import Image, UnidentifiedImageError

from . import prompts
from .decomposer import TaskSpec
from .gateway import (
    REASONER_TEMPERATURE,
    ChatRequest,
    Gateway,
    ProviderError,
    VisionRequest,
    sha256_hex,
)
from .ssr import StateNode, SubstateGraph, ensure_valid, render_node, to_canonical
from .traces import ManifestError, ScreenshotRef, TraceManifest

logger = logging.getLogger(__name__)

MEMORY_LIMIT = 20
REASONER_STAGE = "reason"
CAPTURE_STAGE = "capture"


class Verdict(str, Enum):
    SUCCESS = "success"
    UNCERTAIN = "uncertain"

    @property
    def symbol(self) -> str:
        return "✓" if self is Verdict.SUCCESS else "?"


# Only these literal strings are accepted from the reasoner.
_STATE_VOCABULARY = {"true": Verdict.SUCCESS, "uncertain": Verdict.UNCERTAIN}


class CaptureError(RuntimeError):
    pass


class ReasonerDecodeError(ValueError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class RuleViolation(ValueError):
    """Reasoner output that breaks a checker rule.

    ``gated`` carries the verdicts with the parent gate applied, when the
    violation is a gate violation and such a fallback exists.
    """

    def __init__(self, rule: str, message: str, gated: dict[int, Verdict] | None = None):
        self.rule = rule
        self.gated = gated
        super().__init__(message)


class JudgeAborted(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class ReasonerOutput:
    thought: str
    analysis: tuple[str, ...]
    states: tuple[Verdict, ...]
    critical_info: str | None = None

    def to_dict(self) -> dict:
        return {
            "thought": self.thought,
            "analysis": list(self.analysis),
            "states": [v.value for v in self.states],
            "critical_info": self.critical_info,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> ReasonerOutput:
        return cls(
            data["thought"],
            tuple(data["analysis"]),
            tuple(Verdict(v) for v in data["states"]),
            data.get("critical_info"),
        )


@dataclass(frozen=True, slots=True)
class Latch:
    node: StateNode
    index: int


@dataclass
class Memory:
    """What the reasoner carries between screenshots."""

    critical_info: list[tuple[int, str]] = field(default_factory=list)
    succeeded: dict[int, Latch] = field(default_factory=dict)
    limit: int = MEMORY_LIMIT

    def add_info(self, index: int, text: str | None) -> None:
        if text and text.strip():
            self.critical_info.append((index, text.strip()))
            del self.critical_info[: max(0, len(self.critical_info) - self.limit)]

    def latch(self, nodes: Iterable[StateNode], index: int) -> list[int]:
        new = []
        for node in nodes:
            if node.id not in self.succeeded:
                self.succeeded[node.id] = Latch(node, index)
                new.append(node.id)
        return new

    def is_latched(self, node_id: int) -> bool:
        return node_id in self.succeeded


# --- capture --------------------------------------------------------------------


def detect_media_type(data: bytes) -> str:
    if data.startswith(b"\x89PNG\r\n\x1a\n"):
        return "png"
    if data.startswith(b"\xff\xd8\xff"):
        return "jpeg"
    if data[:4] == b"RIFF" and data[8:12] == b"WEBP":
        return "webp"
    raise CaptureError("screenshot is not a PNG, JPEG or WebP image")


def decode_image(data: bytes) -> str:
    """Return the media type of ``data`` after checking that it decodes."""
    media_type = detect_media_type(data)
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise CaptureError(f"screenshot does not decode: {exc}") from exc
    return media_type


def capture(screenshot: ScreenshotRef | bytes, gateway: Gateway, *, task_id: str = "") -> str:
    """Caption one screenshot, reusing the manifest caption or gateway cache when present."""
    if isinstance(screenshot, ScreenshotRef):
        if screenshot.caption is not None:
            return screenshot.caption
        try:
            data = screenshot.read_bytes()
        except ManifestError as exc:
            raise CaptureError(str(exc)) from exc
    else:
        data = screenshot
    media_type = decode_image(data)
    request = VisionRequest(prompts.capturer_template(), data, media_type)
    return gateway.caption(request, task_id=task_id, stage=CAPTURE_STAGE)


# --- reasoner prompt ------------------------------------------------------------


def _render_memory(mem: Memory) -> str:
    lines = ["Critical information from previous screenshots:"]
    if mem.critical_info:
        lines += [f"- (screenshot {i}) {text}" for i, text in mem.critical_info]
    else:
        lines.append("None.")
    lines.append("Substates already judged SUCCESS in previous screenshots (established events):")
    if mem.succeeded:
        for node_id in sorted(mem.succeeded):
            latch = mem.succeeded[node_id]
            lines.append(f"{render_node(latch.node)}  [SUCCESS at screenshot {latch.index}]")
    else:
        lines.append("None.")
    return "\n".join(lines)


def build_reasoner_prompt(
    task: TaskSpec,
    pending: Sequence[StateNode],
    caption: str,
    mem: Memory,
    *,
    max_output_tokens: int = 4096,
) -> ChatRequest:
    if not pending:
        raise ValueError("no pending substates to judge")
    targets = "\n".join(render_node(node) for node in pending)
    n = len(pending)
    user = (
        f"1. Task Description:\n{task.description.strip()}\n\n"
        f"2. Historical Context:\n{_render_memory(mem)}\n\n"
        f"3. Current UI State:\n{caption.strip()}\n\n"
        f"4. Verification Targets:\n{targets}\n\n"
        f"Judge these {n} substates in the order listed. "
        f'Return exactly {n} entries in "analysis" and {n} entries in "states".'
    )
    return ChatRequest(prompts.reasoner_template(), user, REASONER_TEMPERATURE, max_output_tokens)


def _with_feedback(request: ChatRequest, previous: str, problem: str) -> ChatRequest:
    user = (
        f"{request.user_content}\n\n"
        f"Your previous response was rejected: {problem}\n"
        f"Previous response:\n{previous.strip()}\n"
        "Respond again with a corrected JSON object only."
    )
    return ChatRequest(request.system_prompt, user, request.temperature, request.max_output_tokens)


# --- decoding -------------------------------------------------------------------


def _first_object(raw: str) -> dict:
    decoder = json.JSONDecoder()
    start = raw.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(raw, start)
        except json.JSONDecodeError:
            start = raw.find("{", start + 1)
            continue
        if isinstance(obj, dict):
            return obj
        start = raw.find("{", start + 1)
    raise ReasonerDecodeError("response contains no JSON object")


def decode_reasoner_output(raw: str, expected_count: int) -> ReasonerOutput:
    obj = _first_object(raw)
    for key in ("thought", "analysis", "states"):
        if key not in obj:
            raise ReasonerDecodeError(f'missing field "{key}"')
    thought, analysis, states = obj["thought"], obj["analysis"], obj["states"]
    if not isinstance(thought, str):
        raise ReasonerDecodeError('"thought" must be a string')
    if not isinstance(analysis, list) or not all(isinstance(a, str) for a in analysis):
        raise ReasonerDecodeError('"analysis" must be a list of strings')
    if not isinstance(states, list):
        raise ReasonerDecodeError('"states" must be a list')
    verdicts = []
    for position, state in enumerate(states):
        if not isinstance(state, str) or state not in _STATE_VOCABULARY:
            raise ReasonerDecodeError(
                f'states[{position}] is {state!r}; only "true" or "uncertain" are allowed'
            )
        verdicts.append(_STATE_VOCABULARY[state])
    if len(analysis) != expected_count or len(verdicts) != expected_count:
        raise ReasonerDecodeError(
            f"expected {expected_count} analyses and states, "
            f"got {len(analysis)} analyses and {len(verdicts)} states"
        )
    info = obj.get("critical_info")
    if isinstance(info, list) and all(isinstance(i, str) for i in info):
        info = "\n".join(info)
    elif info is not None and not isinstance(info, str):
        info = json.dumps(info, ensure_ascii=False, sort_keys=True)
    return ReasonerOutput(thought, tuple(analysis), tuple(verdicts), info or None)


# --- checker --------------------------------------------------------------------


def apply_gate(
    output: ReasonerOutput, pending: Sequence[StateNode], mem: Memory
) -> dict[int, Verdict]:
    """Effective verdicts: a UnitNode keeps Success only if its parent page succeeds.

    The parent verdict comes from this same output when the parent is pending,
    otherwise from the latched successes in ``mem``.
    """
    raw = {node.id: verdict for node, verdict in zip(pending, output.states)}
    effective: dict[int, Verdict] = {}
    for node, verdict in zip(pending, output.states):
        if node.is_unit and verdict is Verdict.SUCCESS:
            parent = node.parent_id
            if parent in raw:
                parent_ok = raw[parent] is Verdict.SUCCESS
            else:
                parent_ok = mem.is_latched(parent)
            if not parent_ok:
                verdict = Verdict.UNCERTAIN
        effective[node.id] = verdict
    return effective


def check(output: ReasonerOutput, pending: Sequence[StateNode], mem: Memory) -> dict[int, Verdict]:
    """Validate a decoded reasoner output against the checker rules.

    Raises ``RuleViolation`` on a count mismatch or when a UnitNode was judged
    Success without its parent page; in the latter case the gated verdicts
    are attached for the caller's fallback.
    """
    if len(output.states) != len(pending) or len(output.analysis) != len(pending):
        raise RuleViolation(
            "count", f"{len(output.states)} states for {len(pending)} pending substates"
        )
    effective = apply_gate(output, pending, mem)
    demoted = [
        node for node, verdict in zip(pending, output.states)
        if verdict is not effective[node.id]
    ]
    if demoted:
        detail = "; ".join(
            f"UnitNode {node.id} was judged true but its parent PageNode {node.parent_id} is not"
            for node in demoted
        )
        raise RuleViolation(
            "gate", f"{detail}. A UnitNode can only be true if its parent PageNode is true.",
            gated=effective,
        )
    return effective


# --- judgement records ----------------------------------------------------------


class Disposition(str, Enum):
    APPLIED = "applied"
    RETRIED = "retried"
    DEGRADED = "degraded"
    SKIPPED = "skipped"


@dataclass(frozen=True, slots=True)
class ScreenshotRecord:
    index: int
    caption: str | None
    queried: tuple[int, ...]
    responses: tuple[str, ...]
    output: ReasonerOutput | None
    disposition: Disposition
    verdicts: tuple[tuple[int, Verdict], ...] = ()
    note: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "caption": self.caption,
            "queried": list(self.queried),
            "responses": list(self.responses),
            "output": None if self.output is None else self.output.to_dict(),
            "disposition": self.disposition.value,
            "verdicts": {str(i): v.value for i, v in self.verdicts},
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> ScreenshotRecord:
        return cls(
            index=data["index"],
            caption=data["caption"],
            queried=tuple(data["queried"]),
            responses=tuple(data["responses"]),
            output=None if data["output"] is None else ReasonerOutput.from_dict(data["output"]),
            disposition=Disposition(data["disposition"]),
            verdicts=tuple((int(i), Verdict(v)) for i, v in data["verdicts"].items()),
            note=data.get("note"),
        )


@dataclass(frozen=True, slots=True)
class TaskJudgement:
    task_id: str
    graph_digest: str
    statuses: tuple[Verdict, ...]
    succeeded_at: tuple[tuple[int, int], ...]
    records: tuple[ScreenshotRecord, ...]
    skipped: tuple[tuple[int, str], ...] = ()
    kinds: tuple[str, ...] = ()

    @property
    def completed(self) -> int:
        return sum(v is Verdict.SUCCESS for v in self.statuses)

    @property
    def total(self) -> int:
        return len(self.statuses)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "graph_sha256": self.graph_digest,
            "statuses": [v.value for v in self.statuses],
            "kinds": list(self.kinds),
            "succeeded_at": {str(i): k for i, k in self.succeeded_at},
            "skipped": [{"index": i, "reason": r} for i, r in self.skipped],
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> TaskJudgement:
        return cls(
            task_id=data["task_id"],
            graph_digest=data["graph_sha256"],
            statuses=tuple(Verdict(v) for v in data["statuses"]),
            succeeded_at=tuple((int(i), k) for i, k in data["succeeded_at"].items()),
            records=tuple(ScreenshotRecord.from_dict(r) for r in data["records"]),
            skipped=tuple((s["index"], s["reason"]) for s in data["skipped"]),
            kinds=tuple(data.get("kinds", ())),
        )

    def to_json(self) -> bytes:
        return (json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n").encode("utf-8")

    @classmethod
    def from_json(cls, data: bytes) -> TaskJudgement:
        return cls.from_dict(json.loads(data.decode("utf-8")))


def graph_digest(graph: SubstateGraph) -> str:
    return sha256_hex(to_canonical(graph))


# --- main loop ------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class JudgeConfig:
    checker_retries: int = 1
    memory_limit: int = MEMORY_LIMIT


def _reason(
    task: TaskSpec,
    pending: list[StateNode],
    caption: str,
    mem: Memory,
    reasoner: Gateway,
    config: JudgeConfig,
) -> tuple[list[str], ReasonerOutput | None, dict[int, Verdict] | None, Disposition, str | None]:
    """Run the reasoner with checker-driven retries for one screenshot."""
    base = build_reasoner_prompt(task, pending, caption, mem)
    request = base
    responses: list[str] = []
    fallback: tuple[ReasonerOutput, dict[int, Verdict], str] | None = None
    problem = ""
    for attempt in range(config.checker_retries + 1):
        try:
            raw, _ = reasoner.complete(request, task_id=task.task_id, stage=REASONER_STAGE)
        except ProviderError as exc:
            problem = f"reasoner call failed: {exc}"
            break
        responses.append(raw)
        try:
            output = decode_reasoner_output(raw, len(pending))
            verdicts = check(output, pending, mem)
        except ReasonerDecodeError as exc:
            problem = f"undecodable response: {exc.reason}"
        except RuleViolation as exc:
            problem = f"checker rule violated: {exc}"
            if exc.gated is not None:
                fallback = (output, exc.gated, problem)
        else:
            disposition = Disposition.APPLIED if attempt == 0 else Disposition.RETRIED
            return responses, output, verdicts, disposition, None
        request = _with_feedback(base, raw, problem)
    if fallback is not None:
        output, gated, note = fallback
        return responses, output, gated, Disposition.DEGRADED, note
    return responses, None, None, Disposition.SKIPPED, problem


def judge_task(
    task: TaskSpec,
    graph: SubstateGraph,
    trajectory: TraceManifest,
    *,
    reasoner: Gateway,
    capturer: Gateway,
    config: JudgeConfig = JudgeConfig(),
) -> TaskJudgement:
    """Judge one screenshot trajectory against ``graph``.

    Screenshots are processed strictly in order. A screenshot whose capture or
    reasoning fails is recorded as skipped and the loop continues; the run is
    aborted only when every screenshot was skipped.
    """
    ensure_valid(graph)
    if not trajectory.screenshots:
        raise JudgeAborted(f"task {task.task_id}: trajectory is empty")
    mem = Memory(limit=config.memory_limit)
    records: list[ScreenshotRecord] = []
    skipped: list[tuple[int, str]] = []
    processed = 0

    for index, shot in enumerate(trajectory.screenshots):
        pending = [node for node in graph.nodes if not mem.is_latched(node.id)]
        if not pending:
            logger.debug("task %s: all substates latched before screenshot %d", task.task_id, index)
            break
        processed += 1
        try:
            caption = capture(shot, capturer, task_id=task.task_id)
        except (CaptureError, ProviderError) as exc:
            reason = f"capture failed: {exc}"
            skipped.append((index, reason))
            records.append(
                ScreenshotRecord(index, None, (), (), None, Disposition.SKIPPED, note=reason)
            )
            continue

        responses, output, verdicts, disposition, note = _reason(
            task, pending, caption, mem, reasoner, config
        )
        queried = tuple(node.id for node in pending)
        if output is None or verdicts is None:
            skipped.append((index, note or "skipped"))
            records.append(
                ScreenshotRecord(index, caption, queried, tuple(responses), None, disposition, note=note)
            )
            continue

        mem.add_info(index, output.critical_info)
        mem.latch((node for node in pending if verdicts[node.id] is Verdict.SUCCESS), index)
        records.append(
            ScreenshotRecord(
                index,
                caption,
                queried,
                tuple(responses),
                output,
                disposition,
                tuple(sorted(verdicts.items())),
                note,
            )
        )

    if processed and len(skipped) == processed:
        raise JudgeAborted(f"task {task.task_id}: every screenshot was skipped")

    statuses = tuple(
        Verdict.SUCCESS if mem.is_latched(node.id) else Verdict.UNCERTAIN for node in graph.nodes
    )
    return TaskJudgement(
        task_id=task.task_id,
        graph_digest=graph_digest(graph),
        statuses=statuses,
        succeeded_at=tuple(sorted((i, latch.index) for i, latch in mem.succeeded.items())),
        records=tuple(records),
        skipped=tuple(skipped),
        kinds=tuple(node.kind.value for node in graph.nodes),
    )
