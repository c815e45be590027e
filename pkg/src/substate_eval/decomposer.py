"""Task decomposition: prompt assembly, model call, and corrective retries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import prompts
from .gateway import DECOMPOSER_TEMPERATURE, BackendConfig, ChatRequest, Gateway
from .ssr import ParseError, SubstateGraph, ValidationError, parse_decomposition_with_warnings

logger = logging.getLogger(__name__)

NO_ADDITIONAL_INFO = "None."
STAGE = "decompose"


@dataclass(frozen=True, slots=True)
class TaskSpec:
    task_id: str
    description: str
    app_name: str | None = None
    additional_info: str | None = None

    def __post_init__(self) -> None:
        if not self.description.strip():
            raise ValueError(f"task {self.task_id!r} has an empty description")


class DecompositionFailed(RuntimeError):
    def __init__(self, task_id: str, attempts: int, cause: Exception):
        self.task_id = task_id
        self.attempts = attempts
        self.cause = cause
        super().__init__(f"task {task_id}: decomposition failed after {attempts} attempt(s): {cause}")


def build_decomposer_prompt(task: TaskSpec, *, max_output_tokens: int = 2048) -> ChatRequest:
    info = task.additional_info.strip() if task.additional_info else ""
    system = prompts.decomposer_template().replace("{additional_info}", info or NO_ADDITIONAL_INFO)
    user = f"Task: {task.description.strip()}"
    if task.app_name:
        user += f"\nTask's related app: {task.app_name}"
    return ChatRequest(system, user, DECOMPOSER_TEMPERATURE, max_output_tokens)


def _with_feedback(request: ChatRequest, previous: str, error: Exception) -> ChatRequest:
    if isinstance(error, ValidationError):
        problems = "\n".join(f"- {v}" for v in error.violations)
    else:
        problems = f"- {error}"
    user = (
        f"{request.user_content}\n\n"
        f"Your previous answer was:\n{previous.strip()}\n\n"
        f"It was rejected for these reasons:\n{problems}\n"
        "Return the corrected list of substates only, one node per line."
    )
    return ChatRequest(request.system_prompt, user, request.temperature, request.max_output_tokens)


@dataclass
class Decomposition:
    graph: SubstateGraph
    attempts: int
    warnings: list[str] = field(default_factory=list)


def decompose_detailed(
    task: TaskSpec, gateway: Gateway | BackendConfig, *, retries: int = 2
) -> Decomposition:
    if isinstance(gateway, BackendConfig):
        gateway = Gateway(gateway)
    base = build_decomposer_prompt(task)
    request = base
    last_error: Exception | None = None
    for attempt in range(retries + 1):
        text, _ = gateway.complete(request, task_id=task.task_id, stage=STAGE)
        try:
            outcome = parse_decomposition_with_warnings(text, task.task_id)
        except (ParseError, ValidationError) as exc:
            logger.info("task %s: attempt %d rejected: %s", task.task_id, attempt, exc)
            last_error = exc
            request = _with_feedback(base, text, exc)
            continue
        return Decomposition(outcome.graph, attempt + 1, list(outcome.warnings))
    raise DecompositionFailed(task.task_id, retries + 1, last_error)


def decompose(task: TaskSpec, gateway: Gateway | BackendConfig, *, retries: int = 2) -> SubstateGraph:
    """Decompose ``task`` into a validated substate graph.

    Invalid model output is fed back as corrective feedback up to ``retries``
    extra times before ``DecompositionFailed`` is raised.
    """
    return decompose_detailed(task, gateway, retries=retries).graph
