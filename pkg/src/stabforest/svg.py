"""Dependency-free SVG bar charts for importance rankings and tallies.

Output is plain text assembled with fixed-precision formatting, so the
same input always produces byte-identical documents.
"""

from __future__ import annotations

from typing import Sequence

BAR_COLOR = "#4878a8"
BAR_HEIGHT = 22
BAR_GAP = 8
LABEL_WIDTH = 190
VALUE_WIDTH = 90
PLOT_WIDTH = 420
MARGIN = 16
TITLE_HEIGHT = 34


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def render_svg_bars(
    labels: Sequence[str], scores: Sequence[float], title: str
) -> str:
    """Horizontal bar chart, longest bar first.

    Bars are sorted by descending score (ties by label) and annotated
    with the score value; a single positive score fills the plot width.
    """
    if not labels or len(labels) != len(scores):
        raise ValueError("need one score per label")
    items = sorted(zip(labels, scores), key=lambda kv: (-kv[1], kv[0]))
    max_score = max(score for _, score in items)
    scale = PLOT_WIDTH / max_score if max_score > 0 else 0.0

    width = MARGIN * 2 + LABEL_WIDTH + PLOT_WIDTH + VALUE_WIDTH
    height = TITLE_HEIGHT + MARGIN * 2 + len(items) * (BAR_HEIGHT + BAR_GAP) - BAR_GAP
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect x="0" y="0" width="100%" height="100%" fill="#ffffff"/>',
        f'<text x="{MARGIN}" y="{MARGIN + 8}" font-size="16" font-family="sans-serif" '
        f'font-weight="bold">{_escape(title)}</text>',
    ]
    y = TITLE_HEIGHT + MARGIN
    for label, score in items:
        bar = max(score, 0.0) * scale
        mid = y + BAR_HEIGHT - 7
        lines.append(
            f'<text x="{MARGIN + LABEL_WIDTH - 8}" y="{mid}" text-anchor="end" '
            f'font-size="13" font-family="sans-serif">{_escape(str(label))}</text>'
        )
        lines.append(
            f'<rect x="{MARGIN + LABEL_WIDTH}" y="{y}" width="{bar:.2f}" '
            f'height="{BAR_HEIGHT}" fill="{BAR_COLOR}"/>'
        )
        lines.append(
            f'<text x="{MARGIN + LABEL_WIDTH + bar + 6:.2f}" y="{mid}" '
            f'font-size="12" font-family="sans-serif">{score:.6g}</text>'
        )
        y += BAR_HEIGHT + BAR_GAP
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_svg_grid(
    panels: Sequence[tuple[str, Sequence[str], Sequence[float]]],
    title: str,
    columns: int = 2,
) -> str:
    """Grid of bar panels (title, labels, scores) in one document."""
    if not panels:
        raise ValueError("need at least one panel")
    rendered = [render_svg_bars(labels, scores, sub) for sub, labels, scores in panels]
    sizes = []
    for doc in rendered:
        head = doc.split(">", 1)[0]
        w = int(head.split('width="')[1].split('"')[0])
        h = int(head.split('height="')[1].split('"')[0])
        sizes.append((w, h))
    cell_w = max(w for w, _ in sizes) + MARGIN
    cell_h = max(h for _, h in sizes) + MARGIN
    rows = (len(panels) + columns - 1) // columns
    width = columns * cell_w + MARGIN
    height = rows * cell_h + TITLE_HEIGHT + MARGIN
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        '<rect x="0" y="0" width="100%" height="100%" fill="#f4f4f4"/>',
        f'<text x="{MARGIN}" y="{MARGIN + 10}" font-size="18" font-family="sans-serif" '
        f'font-weight="bold">{_escape(title)}</text>',
    ]
    for i, doc in enumerate(rendered):
        col = i % columns
        row = i // columns
        x = MARGIN + col * cell_w
        y = TITLE_HEIGHT + row * cell_h
        body = doc.split("\n", 1)[1].rsplit("</svg>", 1)[0]
        lines.append(f'<g transform="translate({x},{y})">')
        lines.append(body.rstrip())
        lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
