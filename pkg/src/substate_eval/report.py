"""Human-readable reports: per-task substate checklists and aggregate tables."""

from __future__ import annotations

from collections.abc import Mapping, Sequence

from .judge import TaskJudgement
from .metrics import Family, MetricReport
from .ssr import SubstateGraph

TABLE_COLUMNS = {
    Family.DECOMPOSER: [
        ("cover_rate", "Cover Rate"),
        ("redundant_rate", "Redundant Rate"),
        ("optional_rate", "Optional Rate"),
        ("incorrect_rate", "Incorrect Rate"),
    ],
    Family.RELIABILITY: [("sr", "SR"), ("fp", "FP"), ("fn", "FN")],
    Family.AGENT: [("scr", "SCR"), ("tcr", "TCR")],
}

TABLE_TITLES = {
    Family.DECOMPOSER: "Decomposer quality",
    Family.RELIABILITY: "Judge reliability",
    Family.AGENT: "Agent performance",
}


def render_table(report: MetricReport) -> str:
    columns = TABLE_COLUMNS[report.family]
    header = "| " + " | ".join(title for _, title in columns) + " |"
    rule = "|" + "|".join("-" * (len(title) + 2) for _, title in columns) + "|"
    values = "| " + " | ".join(report.rates[key].render(percent=True) for key, _ in columns) + " |"
    return "\n".join([header, rule, values])


def render_checklist(judgement: TaskJudgement, graph: SubstateGraph | None = None) -> str:
    state = "complete" if judgement.completed == judgement.total else "incomplete"
    lines = [f"### {judgement.task_id} ({judgement.completed}/{judgement.total} substates, {state})"]
    for i, verdict in enumerate(judgement.statuses):
        if graph is not None:
            node = graph.node(i)
            label = f"{node.kind.value}Node: {node.content}"
        else:
            kind = judgement.kinds[i] if i < len(judgement.kinds) else "State"
            label = f"{kind}Node"
        suffix = dict(judgement.succeeded_at).get(i)
        where = f" (screenshot {suffix})" if suffix is not None else ""
        lines.append(f"- {verdict.symbol} {i}. {label}{where}")
    if judgement.skipped:
        lines.append("")
        lines += [f"  skipped screenshot {i}: {reason}" for i, reason in judgement.skipped]
    return "\n".join(lines)


def render_report(
    judgements: Sequence[TaskJudgement],
    reports: Sequence[MetricReport] = (),
    graphs: Mapping[str, SubstateGraph] | None = None,
) -> str:
    graphs = graphs or {}
    out = ["# Evaluation report", ""]
    if not judgements and not reports:
        out += ["> warning: no judgements or metric reports found; nothing to report.", ""]
        return "\n".join(out)
    if judgements:
        out += ["## Tasks", ""]
        for j in sorted(judgements, key=lambda j: j.task_id):
            out += [render_checklist(j, graphs.get(j.task_id)), ""]
    else:
        out += ["> warning: no judgements found.", ""]
    for report in sorted(reports, key=lambda r: list(Family).index(r.family)):
        out += [f"## {TABLE_TITLES[report.family]}", "", render_table(report), ""]
    return "\n".join(out)
