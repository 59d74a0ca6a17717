"""SVG Gantt charts: one row per GPU, grouped by node."""

from __future__ import annotations

import hashlib
from typing import Sequence
from xml.sax.saxutils import escape, quoteattr

from .sim import BusyInterval, Plan, plan_intervals
from .workload import Cluster, Task

ROW_H = 18
LABEL_W = 90
CHART_W = 720
HEADER_H = 28
NODE_GAP = 8


def _color(task_id: str) -> str:
    # stable across runs and platforms, unlike hash()
    h = hashlib.sha1(task_id.encode()).digest()
    return f"hsl({int.from_bytes(h[:2], 'big') % 360},55%,62%)"


def _fmt(x: float) -> str:
    return f"{x:.3f}".rstrip("0").rstrip(".")


def gantt_from_intervals(intervals: Sequence[BusyInterval], cluster: Cluster, title: str = "schedule") -> str:
    rows = []
    y = HEADER_H
    row_y = {}
    for node in cluster.nodes:
        for g in range(node.gpu_count):
            row_y[(node.id, g)] = y
            y += ROW_H
        y += NODE_GAP
    height = y
    width = LABEL_W + CHART_W + 10
    makespan = max((iv.end_s for iv in intervals), default=0.0)
    scale = CHART_W / makespan if makespan > 0 else 0.0

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">',
        f'<title>{escape(title)}</title>',
        f'<text x="4" y="16">{escape(title)}: makespan {_fmt(makespan)} s</text>',
    ]
    if not intervals:
        out.append("</svg>")
        return "\n".join(out) + "\n"
    for (node_id, g), ry in row_y.items():
        rows.append(f'<text x="4" y="{ry + ROW_H - 5}">{escape(node_id)}/gpu{g}</text>')
        rows.append(f'<line x1="{LABEL_W}" y1="{ry + ROW_H}" x2="{LABEL_W + CHART_W}" y2="{ry + ROW_H}" stroke="#ddd"/>')
    out += rows
    for iv in sorted(intervals, key=lambda v: (v.node, v.gpu, v.start_s, v.task_id)):
        ry = row_y[(iv.node, iv.gpu)]
        x = LABEL_W + iv.start_s * scale
        w = max((iv.end_s - iv.start_s) * scale, 0.5)
        out.append(
            f'<rect x="{_fmt(x)}" y="{ry + 1}" width="{_fmt(w)}" height="{ROW_H - 2}" fill="{_color(iv.task_id)}" '
            f'stroke="#333" stroke-width="0.5" data-task={quoteattr(iv.task_id)} data-node={quoteattr(iv.node)} '
            f'data-gpu="{iv.gpu}" data-start="{_fmt(iv.start_s)}" data-end="{_fmt(iv.end_s)}">'
            f'<title>{escape(iv.task_id)} [{_fmt(iv.start_s)}, {_fmt(iv.end_s)})</title></rect>'
        )
        out.append(f'<text x="{_fmt(x + 2)}" y="{ry + ROW_H - 5}">{escape(iv.task_id)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def gantt(plan: Plan, tasks: Sequence[Task], cluster: Cluster, title: str = "schedule") -> str:
    """Render a plan; the output is byte-identical for identical inputs."""
    return gantt_from_intervals(plan_intervals(plan, tasks), cluster, title)
