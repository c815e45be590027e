"""Substate-based autonomous evaluation of GUI/mobile agent trajectories."""

from .decomposer import DecompositionFailed, TaskSpec, build_decomposer_prompt, decompose
from .gateway import BackendConfig, ChatRequest, Gateway, ScriptedBackend, Transcript, VisionRequest
from .judge import Memory, ReasonerOutput, TaskJudgement, Verdict, check, decode_reasoner_output, judge_task
from .metrics import agent_performance, decomposer_quality, judge_reliability
from .ssr import (
    GraphViolation,
    NodeKind,
    StateNode,
    SubstateGraph,
    ViolationRule,
    from_canonical,
    parse_decomposition,
    render,
    to_canonical,
    validate,
)
from .traces import TraceManifest, load_trace

__all__ = [
    "BackendConfig",
    "ChatRequest",
    "DecompositionFailed",
    "Gateway",
    "GraphViolation",
    "Memory",
    "NodeKind",
    "ReasonerOutput",
    "ScriptedBackend",
    "StateNode",
    "SubstateGraph",
    "TaskJudgement",
    "TaskSpec",
    "TraceManifest",
    "Transcript",
    "Verdict",
    "ViolationRule",
    "VisionRequest",
    "agent_performance",
    "build_decomposer_prompt",
    "check",
    "decode_reasoner_output",
    "decompose",
    "decomposer_quality",
    "from_canonical",
    "judge_reliability",
    "judge_task",
    "load_trace",
    "parse_decomposition",
    "render",
    "to_canonical",
    "validate",
]
