"""Static SVG charts written as plain text (coordinates fixed to 2 decimals)."""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

PALETTE = ("#3b6ea5", "#d1782c", "#4b9a5a", "#b04a4a", "#7a5ea8", "#8c8c8c")
W, H, PAD = 640, 400, 60


def _svg(body: list[str], title: str) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n'
        f'<rect width="{W}" height="{H}" fill="white"/>\n'
        f'<text x="{W / 2:.2f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">'
        f"{escape(title)}</text>\n"
    )
    return head + "\n".join(body) + "\n</svg>\n"


def _axes(ymax: float, label: str) -> list[str]:
    out = [
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD / 2}" y2="{H - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<text x="16" y="{H / 2:.2f}" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 16 {H / 2:.2f})" text-anchor="middle">{escape(label)}</text>',
    ]
    for i in range(5):
        val = ymax * i / 4
        y = H - PAD - (H - 2 * PAD) * i / 4
        out.append(
            f'<text x="{PAD - 6}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" '
            f'font-size="10">{val:.1f}</text>'
        )
    return out


def bar_chart(values: dict[str, float], title: str, ylabel: str = "MPJPE (mm)") -> str:
    names = list(values)
    ymax = max([v for v in values.values()] + [1e-9]) * 1.15
    plot_w = W - 1.5 * PAD
    slot = plot_w / max(1, len(names))
    body = _axes(ymax, ylabel)
    for i, name in enumerate(names):
        h = (H - 2 * PAD) * values[name] / ymax
        x = PAD + i * slot + slot * 0.15
        body.append(
            f'<rect x="{x:.2f}" y="{H - PAD - h:.2f}" width="{slot * 0.7:.2f}" height="{h:.2f}" '
            f'fill="{PALETTE[i % len(PALETTE)]}"/>'
        )
        body.append(
            f'<text x="{x + slot * 0.35:.2f}" y="{H - PAD + 16}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{escape(name)}</text>'
        )
        body.append(
            f'<text x="{x + slot * 0.35:.2f}" y="{H - PAD - h - 4:.2f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{values[name]:.2f}</text>'
        )
    return _svg(body, title)


def line_chart(x: Sequence[float], series: dict[str, Sequence[float]], title: str, xlabel: str, ylabel: str) -> str:
    xs = list(map(float, x))
    xmin, xmax = min(xs), max(xs)
    span = (xmax - xmin) or 1.0
    ymax = max([max(map(float, s)) for s in series.values()] + [1e-9]) * 1.15
    body = _axes(ymax, ylabel)
    body.append(
        f'<text x="{W / 2:.2f}" y="{H - 16}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">{escape(xlabel)}</text>'
    )

    def px(xv, yv):
        return PAD + (W - 1.5 * PAD) * (xv - xmin) / span, H - PAD - (H - 2 * PAD) * yv / ymax

    for xv in xs:
        gx, _ = px(xv, 0)
        body.append(
            f'<text x="{gx:.2f}" y="{H - PAD + 16}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="10">{xv:g}</text>'
        )
    for i, (name, ys) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join("%.2f,%.2f" % px(a, float(b)) for a, b in zip(xs, ys))
        body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        body.append(
            f'<text x="{W - PAD * 1.5:.2f}" y="{PAD + 16 * i:.2f}" text-anchor="end" font-family="sans-serif" '
            f'font-size="12" fill="{color}">{escape(name)}</text>'
        )
    return _svg(body, title)
