"""Minimal self-contained SVG charts for pixels-over-threshold series."""

from __future__ import annotations

from xml.sax.saxutils import escape

WIDTH, HEIGHT = 720, 360
MARGIN = (60, 20, 30, 45)  # left, right, top, bottom


def _scale(lo, hi, a, b):
    span = hi - lo if hi > lo else 1.0
    return lambda v: a + (v - lo) * (b - a) / span


def series_chart(title: str, raw, recon, sweep=None) -> str:
    """Raw counts as crosses, reconstructed counts as circles, sweep curves as faint lines."""
    left, right, top, bottom = MARGIN
    frames = max(len(raw), len(recon), 1)
    ymax = max([1] + list(raw) + list(recon) + [v for s in (sweep or {}).values() for v in s])
    sx = _scale(0, max(frames - 1, 1), left, WIDTH - right)
    sy = _scale(0, ymax, HEIGHT - bottom, top)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{left}" y1="{HEIGHT - bottom}" x2="{WIDTH - right}" y2="{HEIGHT - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{HEIGHT - bottom}" stroke="black"/>',
        f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle">frame</text>',
        f'<text x="14" y="{HEIGHT / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 14 {HEIGHT / 2:.1f})">pixels over threshold</text>',
    ]
    for v in (0, ymax):
        out.append(f'<text x="{left - 6}" y="{sy(v) + 4:.1f}" text-anchor="end">{v}</text>')
    for t in range(0, frames, max(1, frames // 10)):
        out.append(f'<text x="{sx(t):.1f}" y="{HEIGHT - bottom + 14}" text-anchor="middle">{t}</text>')
    for m, s in (sweep or {}).items():
        pts = " ".join(f"{sx(t):.1f},{sy(v):.1f}" for t, v in enumerate(s))
        out.append(f'<polyline points="{pts}" fill="none" stroke="#e8a0a0" stroke-width="0.8">'
                   f'<title>m={m:g}</title></polyline>')
    for t, v in enumerate(raw):
        x, y = sx(t), sy(v)
        out.append(f'<path d="M{x - 3:.1f},{y - 3:.1f}L{x + 3:.1f},{y + 3:.1f}'
                   f'M{x - 3:.1f},{y + 3:.1f}L{x + 3:.1f},{y - 3:.1f}" stroke="blue"/>')
    for t, v in enumerate(recon):
        out.append(f'<circle cx="{sx(t):.1f}" cy="{sy(v):.1f}" r="3" fill="none" stroke="red"/>')
    lx = WIDTH - right - 130
    out.append(f'<path d="M{lx},{top + 7}l6,6M{lx},{top + 13}l6,-6" stroke="blue"/>'
               f'<text x="{lx + 12}" y="{top + 14}">raw</text>')
    out.append(f'<circle cx="{lx + 3}" cy="{top + 26}" r="3" fill="none" stroke="red"/>'
               f'<text x="{lx + 12}" y="{top + 30}">reconstructed</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
