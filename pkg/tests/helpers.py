"""Shared fixtures data and generators for the test suite."""

from __future__ import annotations

import io
import json
import random
import re
from itertools import product

from PIL import Image

from substate_eval.ssr import NodeKind, StateNode, SubstateGraph

# Reference decomposer output for the MrBeast example task.
MRBEAST_OUTPUT = """\
0. PageNode(content="Youtube main page is visible", parent_id=None)
1. PageNode(content="Youtube search page is visible", parent_id=0)
2. UnitNode(content="The search bar in youtube search page contains the text "MrBeast"", parent_id=1)
3. PageNode(content="MrBeast channel page is visible", parent_id=1)
4. UnitNode(content="MrBeast channel is subscribed", parent_id=3)
"""

MRBEAST_TASK = 'Search and subscribe to the "MrBeast" YouTube channel using the YouTube app.'

MRBEAST_GRAPH = SubstateGraph(
    "mrbeast",
    (
        StateNode(0, NodeKind.PAGE, "Youtube main page is visible", None),
        StateNode(1, NodeKind.PAGE, "Youtube search page is visible", 0),
        StateNode(
            2,
            NodeKind.UNIT,
            'The search bar in youtube search page contains the text "MrBeast"',
            1,
        ),
        StateNode(3, NodeKind.PAGE, "MrBeast channel page is visible", 1),
        StateNode(4, NodeKind.UNIT, "MrBeast channel is subscribed", 3),
    ),
)

# Reference reasoner response for the first (home page) screenshot of that task.
REFERENCE_REASONER_RESPONSE = """{
    "thought": "Screenshot shows the home page of the Youtube app, so I have to only check PageNode that describes the home page and those UnitNodes whose parent_id is the corresponding PageNode. In current round, I can only check substate 0. For other substates, I should judge them as uncertain.",
    "analysis": [
        "For substate 0, it's a PageNode, I have to check if the Youtube main page is visible. The screenshot clearly shows the Youtube main page, so it matches the substate 0.",
        "For substate 1, it's a PageNode, I have to check if the Youtube search page is visible, however current screenshot shows the Youtube main page, not in the search page, so I should judge it as uncertain.",
        "For substate 2, it's a UnitNode, I have to first check if current page is consistent with the substate 2's parent PageNode 1, then check if the search bar contains the text 'MrBeast'. However current screenshot shows the Youtube main page, not in the search page, so I should judge it as uncertain.",
        "For substate 3, it's a PageNode, I have to check if the MrBeast channel page is visible. However current screenshot shows the Youtube main page, not in the MrBeast channel page, so I should judge it as uncertain.",
        "For substate 4, it's a UnitNode, I have to first check if current page is consistent with the substate 4's parent PageNode 3, then check if the MrBeast channel is subscribed. However current screenshot shows the Youtube main page, not in PageNode3's MrBeast channel page, so I should judge it as uncertain."
    ],
    "states": ["true", "uncertain", "uncertain", "uncertain", "uncertain"]
}"""

MRBEAST_CAPTIONS = (
    "App: YouTube. Home page with a video feed, a search icon at the top right, "
    "and the bottom navigation bar (Home, Shorts, Subscriptions, Library).",
    "App: YouTube. Search page. The search bar at the top contains the text \"MrBeast\"; "
    "suggestions are listed below.",
    "App: YouTube. MrBeast channel page showing the channel banner, name \"MrBeast\", "
    "and a grey \"Subscribed\" button.",
)


def reasoner_json(states: list[str], *, critical_info: str | None = None, thought: str = "ok") -> str:
    doc: dict = {
        "thought": thought,
        "analysis": [f"analysis {i}" for i in range(len(states))],
        "states": states,
    }
    if critical_info is not None:
        doc["critical_info"] = critical_info
    return json.dumps(doc)


def png_bytes(seed: int, size: int = 4) -> bytes:
    color = ((seed * 37) % 256, (seed * 91) % 256, (seed * 53 + 7) % 256)
    buf = io.BytesIO()
    Image.new("RGB", (size, size), color).save(buf, format="PNG")
    return buf.getvalue()


_TARGET_LINE = re.compile(r"^(\d+)\. (Page|Unit)Node\(")


def pending_ids_from_prompt(user_content: str) -> list[int]:
    """Read the queried substate ids back out of a reasoner prompt."""
    section = user_content.split("4. Verification Targets:\n", 1)[1]
    ids = []
    for line in section.splitlines():
        match = _TARGET_LINE.match(line)
        if match is None:
            break
        ids.append(int(match.group(1)))
    return ids


# --- graph generators -------------------------------------------------------------

WORDS = ["page", "button", "search", "visible", "contains", "\"quoted\"", "Clock", "alarm", "7:00",
         "Ünïcode", "text", "toggle", "is", "on", "list", "the"]


def random_content(rng: random.Random, index: int) -> str:
    words = rng.choices(WORDS, k=rng.randint(1, 6))
    return f"s{index} " + " ".join(words)


def random_valid_graph(rng: random.Random, n: int | None = None, task_id: str = "t") -> SubstateGraph:
    n = rng.randint(1, 10) if n is None else n
    nodes: list[StateNode] = []
    pages: list[int] = []
    for i in range(n):
        if i == 0 or (rng.random() < 0.5):
            kind = NodeKind.PAGE
            parent = None if (i == 0 or rng.random() < 0.1) else rng.choice(pages)
        else:
            kind = NodeKind.UNIT
            parent = rng.choice(pages)
        nodes.append(StateNode(i, kind, random_content(rng, i), parent))
        if kind is NodeKind.PAGE:
            pages.append(i)
    return SubstateGraph(task_id, tuple(nodes))


def all_valid_shapes(max_nodes: int):
    """Every valid (kind, parent) assignment with 1..max_nodes nodes."""
    for n in range(1, max_nodes + 1):
        yield from _shapes(n)


def _shapes(n: int):
    def extend(prefix: list[tuple[NodeKind, int | None]]):
        if len(prefix) == n:
            yield SubstateGraph(
                f"shape{n}",
                tuple(StateNode(i, k, f"s{i}", p) for i, (k, p) in enumerate(prefix)),
            )
            return
        pages = [i for i, (k, _) in enumerate(prefix) if k is NodeKind.PAGE]
        options = [(NodeKind.PAGE, None)] + [(NodeKind.PAGE, p) for p in pages]
        options += [(NodeKind.UNIT, p) for p in pages]
        for option in options:
            yield from extend(prefix + [option])

    yield from extend([])


def assignments(count: int):
    return product((False, True), repeat=count)


def judgement(task_id: str, successes: list[bool]):
    """A bare judgement with the given final statuses and no screenshot records."""
    from substate_eval.judge import TaskJudgement, Verdict

    statuses = tuple(Verdict.SUCCESS if ok else Verdict.UNCERTAIN for ok in successes)
    return TaskJudgement(
        task_id=task_id,
        graph_digest="0" * 64,
        statuses=statuses,
        succeeded_at=tuple((i, 0) for i, ok in enumerate(successes) if ok),
        records=(),
    )
