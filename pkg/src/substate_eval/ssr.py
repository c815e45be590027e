"""Structured substate trees: node types, the model-output line grammar, and validation.

A task's reward signals form an ordered tree of ``StateNode`` objects. Pages
describe which screen is visible, units describe an element inside a page.
Every parent pointer must reference an earlier PageNode.

Decomposer models emit one node per line::

    0. PageNode(content="Youtube main page is visible", parent_id=None)
    2. UnitNode(content="The search bar ... contains the text "MrBeast"", parent_id=1)

``parse_decomposition`` reads that grammar, ``render`` writes it back, and
``to_canonical``/``from_canonical`` handle the on-disk JSON form.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum

logger = logging.getLogger(__name__)


class NodeKind(str, Enum):
    PAGE = "Page"
    UNIT = "Unit"


class ViolationRule(str, Enum):
    NON_DENSE_IDS = "NonDenseIds"
    FORWARD_PARENT = "ForwardParent"
    MISSING_PARENT = "MissingParent"
    UNIT_WITHOUT_PARENT = "UnitWithoutParent"
    PARENT_NOT_PAGE = "ParentNotPage"
    EMPTY_CONTENT = "EmptyContent"


@dataclass(frozen=True, slots=True)
class StateNode:
    id: int
    kind: NodeKind
    content: str
    parent_id: int | None = None

    @property
    def is_page(self) -> bool:
        return self.kind is NodeKind.PAGE

    @property
    def is_unit(self) -> bool:
        return self.kind is NodeKind.UNIT


@dataclass(frozen=True, slots=True)
class SubstateGraph:
    """Ordered substate tree for a single task.

    Construction does not validate, so malformed graphs stay representable
    for ``validate`` to report on.
    """

    task_id: str
    nodes: tuple[StateNode, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.nodes, tuple):
            object.__setattr__(self, "nodes", tuple(self.nodes))

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def node(self, node_id: int) -> StateNode:
        return self.nodes[node_id]

    def parent_of(self, node: StateNode) -> StateNode | None:
        if node.parent_id is None:
            return None
        return self.nodes[node.parent_id]

    def ancestry(self, node_id: int) -> list[int]:
        """Ids from ``node_id`` up to its root, inclusive. Requires a valid graph."""
        chain = [node_id]
        current = self.nodes[node_id]
        for _ in range(len(self.nodes)):
            if current.parent_id is None:
                return chain
            chain.append(current.parent_id)
            current = self.nodes[current.parent_id]
        raise ValueError(f"parent chain of node {node_id} does not terminate")


@dataclass(frozen=True, slots=True)
class GraphViolation:
    node_id: int | None
    rule: ViolationRule
    message: str

    def __str__(self) -> str:
        where = "graph" if self.node_id is None else f"node {self.node_id}"
        return f"{self.rule.value} at {where}: {self.message}"


class ParseError(ValueError):
    def __init__(self, line: int | None, reason: str):
        self.line = line
        self.reason = reason
        where = "input" if line is None else f"line {line}"
        super().__init__(f"{where}: {reason}")


class ValidationError(ValueError):
    def __init__(self, violations: list[GraphViolation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class DecodeError(ValueError):
    """Malformed canonical graph bytes."""


def validate(graph: SubstateGraph) -> list[GraphViolation]:
    """Return every invariant violation in node order; empty when the graph is valid."""
    violations: list[GraphViolation] = []
    by_id: dict[int, StateNode] = {}
    for node in graph.nodes:
        by_id.setdefault(node.id, node)

    for position, node in enumerate(graph.nodes):
        if node.id != position:
            violations.append(
                GraphViolation(
                    node.id,
                    ViolationRule.NON_DENSE_IDS,
                    f"node at position {position} has id {node.id}",
                )
            )
        if not isinstance(node.content, str) or not node.content.strip():
            violations.append(
                GraphViolation(node.id, ViolationRule.EMPTY_CONTENT, "content is empty")
            )
        if node.parent_id is None:
            if node.kind is NodeKind.UNIT:
                violations.append(
                    GraphViolation(
                        node.id,
                        ViolationRule.UNIT_WITHOUT_PARENT,
                        "UnitNode must be anchored in a page",
                    )
                )
            continue
        parent = by_id.get(node.parent_id)
        if parent is None:
            violations.append(
                GraphViolation(
                    node.id,
                    ViolationRule.MISSING_PARENT,
                    f"parent_id {node.parent_id} does not exist",
                )
            )
            continue
        if node.parent_id >= node.id:
            violations.append(
                GraphViolation(
                    node.id,
                    ViolationRule.FORWARD_PARENT,
                    f"parent_id {node.parent_id} is not earlier than {node.id}",
                )
            )
        if parent.kind is not NodeKind.PAGE:
            violations.append(
                GraphViolation(
                    node.id,
                    ViolationRule.PARENT_NOT_PAGE,
                    f"parent {node.parent_id} is a UnitNode",
                )
            )
    return violations


def ensure_valid(graph: SubstateGraph) -> SubstateGraph:
    violations = validate(graph)
    if violations:
        raise ValidationError(violations)
    return graph


# --- line grammar -----------------------------------------------------------

# Greedy content capture anchors on the *last* '", parent_id=' so nested quotes survive.
_NODE_LINE = re.compile(
    r'^\s*(?P<id>\d+)\.\s*(?P<kind>PageNode|UnitNode)\(content="(?P<content>.*)",'
    r"\s*parent_id=(?P<parent>-?\d+|None)\)\s*[.,;]?\s*$"
)
_NODE_LIKE = re.compile(r"^\s*\d+\.\s*(PageNode|UnitNode)\b")


def render_node(node: StateNode) -> str:
    parent = "None" if node.parent_id is None else str(node.parent_id)
    return f'{node.id}. {node.kind.value}Node(content="{node.content}", parent_id={parent})'


def render(graph: SubstateGraph) -> str:
    """Print the graph in the decomposer line format, one node per line."""
    return "\n".join(render_node(node) for node in graph.nodes) + "\n"


def _parse_lines(text: str) -> list[StateNode]:
    nodes: list[StateNode] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        match = _NODE_LINE.match(line)
        if match is None:
            if _NODE_LIKE.match(line):
                raise ParseError(lineno, f"malformed node line: {line.strip()!r}")
            continue
        parent = match["parent"]
        nodes.append(
            StateNode(
                id=int(match["id"]),
                kind=NodeKind.PAGE if match["kind"] == "PageNode" else NodeKind.UNIT,
                content=match["content"],
                parent_id=None if parent == "None" else int(parent),
            )
        )
    if not nodes:
        raise ParseError(None, "no node lines found")
    return nodes


def _reindex(nodes: list[StateNode], warnings: list[str]) -> list[StateNode]:
    ids = [n.id for n in nodes]
    if ids == list(range(len(nodes))):
        return nodes
    increasing = all(a < b for a, b in zip(ids, ids[1:]))
    mapping = {old: new for new, old in enumerate(ids)}
    refs_known = all(n.parent_id is None or n.parent_id in mapping for n in nodes)
    if not (increasing and refs_known):
        # Leave as-is; validate() reports the precise violation.
        return nodes
    warnings.append(f"re-indexed node ids {ids} to 0..{len(nodes) - 1}")
    return [
        StateNode(
            id=mapping[n.id],
            kind=n.kind,
            content=n.content,
            parent_id=None if n.parent_id is None else mapping[n.parent_id],
        )
        for n in nodes
    ]


def content_key(content: str) -> str:
    return content.strip().casefold()


def collapse_duplicates(
    graph: SubstateGraph, warnings: list[str] | None = None
) -> SubstateGraph:
    """Merge nodes with equal kind, parent and (case-insensitive, trimmed) content.

    The first occurrence is kept; children of dropped nodes are re-pointed at it
    and ids are re-densified. Input must be valid.
    """
    warnings = warnings if warnings is not None else []
    survivor: dict[int, int] = {}
    seen: dict[tuple[NodeKind, int | None, str], int] = {}
    for node in graph.nodes:
        parent = None if node.parent_id is None else survivor[node.parent_id]
        key = (node.kind, parent, content_key(node.content))
        if key in seen:
            survivor[node.id] = seen[key]
            warnings.append(f"collapsed duplicate node {node.id} into node {seen[key]}")
        else:
            seen[key] = node.id
            survivor[node.id] = node.id
    if len(seen) == len(graph.nodes):
        return graph
    kept = [n for n in graph.nodes if survivor[n.id] == n.id]
    new_id = {n.id: i for i, n in enumerate(kept)}
    return SubstateGraph(
        graph.task_id,
        tuple(
            StateNode(
                id=new_id[n.id],
                kind=n.kind,
                content=n.content,
                parent_id=None if n.parent_id is None else new_id[survivor[n.parent_id]],
            )
            for n in kept
        ),
    )


@dataclass(frozen=True, slots=True)
class ParseOutcome:
    graph: SubstateGraph
    warnings: tuple[str, ...] = field(default_factory=tuple)


def parse_decomposition_with_warnings(
    text: str, task_id: str = "", *, dedupe: bool = True
) -> ParseOutcome:
    warnings: list[str] = []
    nodes = _reindex(_parse_lines(text), warnings)
    graph = ensure_valid(SubstateGraph(task_id, tuple(nodes)))
    if dedupe:
        graph = collapse_duplicates(graph, warnings)
    first = graph.nodes[0]
    if not (first.is_page and first.parent_id is None):
        warnings.append("node 0 is not a parentless PageNode")
    for message in warnings:
        logger.warning("decomposition %s: %s", task_id or "<unnamed>", message)
    return ParseOutcome(graph, tuple(warnings))


def parse_decomposition(text: str, task_id: str = "", *, dedupe: bool = True) -> SubstateGraph:
    """Parse raw decomposer output into a validated graph.

    Raises ``ParseError`` when no node lines exist or a node line is malformed,
    and ``ValidationError`` when the parsed tree breaks an invariant.
    """
    return parse_decomposition_with_warnings(text, task_id, dedupe=dedupe).graph


# --- canonical form ---------------------------------------------------------


def graph_to_dict(graph: SubstateGraph) -> dict:
    return {
        "task_id": graph.task_id,
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "content": n.content,
                "parent_id": n.parent_id,
            }
            for n in graph.nodes
        ],
    }


def graph_from_dict(data: object) -> SubstateGraph:
    try:
        if not isinstance(data, dict) or not isinstance(data["task_id"], str):
            raise DecodeError("expected an object with a string task_id")
        nodes = []
        for entry in data["nodes"]:
            node_id, parent = entry["id"], entry["parent_id"]
            if not isinstance(node_id, int) or isinstance(node_id, bool):
                raise DecodeError(f"node id must be an integer, got {node_id!r}")
            if parent is not None and (not isinstance(parent, int) or isinstance(parent, bool)):
                raise DecodeError(f"parent_id must be an integer or null, got {parent!r}")
            if not isinstance(entry["content"], str):
                raise DecodeError("content must be a string")
            nodes.append(StateNode(node_id, NodeKind(entry["kind"]), entry["content"], parent))
    except (KeyError, TypeError) as exc:
        raise DecodeError(f"malformed graph document: {exc!r}") from exc
    except ValueError as exc:
        if isinstance(exc, DecodeError):
            raise
        raise DecodeError(str(exc)) from exc
    return SubstateGraph(data["task_id"], tuple(nodes))


def to_canonical(graph: SubstateGraph) -> bytes:
    ensure_valid(graph)
    text = json.dumps(graph_to_dict(graph), indent=2, ensure_ascii=False)
    return (text + "\n").encode("utf-8")


def from_canonical(data: bytes) -> SubstateGraph:
    try:
        document = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError(f"not a UTF-8 JSON document: {exc}") from exc
    return ensure_valid(graph_from_dict(document))
