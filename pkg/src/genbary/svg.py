"""Static SVG scatter plots of input measures and barycenter samples."""

from xml.sax.saxutils import escape

import numpy as np

INPUT_COLOR = "#555555"
BARYCENTER_COLOR = "#ff7f0e"


def scatter_svg(layers, title="", width=480, height=480, margin=30):
    """Render point layers to an SVG document string.

    Parameters
    ----------
    layers : list of (points, color, radius, opacity)
        Points are ``(n, d)`` arrays; only the first two coordinates are drawn.
    """
    arrays = [np.atleast_2d(np.asarray(p, dtype=float))[:, :2] for p, *_ in layers]
    allpts = np.concatenate([a for a in arrays if a.size]) if arrays else np.zeros((1, 2))
    lo, hi = allpts.min(axis=0), allpts.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    scale = min((width - 2 * margin) / span[0], (height - 2 * margin) / span[1])

    def px(p):
        x = margin + (p[0] - lo[0]) * scale
        y = height - margin - (p[1] - lo[1]) * scale
        return x, y

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        out.append(f'<text x="{margin}" y="{margin - 10}" font-family="sans-serif" '
                   f'font-size="12">{escape(title)}</text>')
    for pts, (_, color, radius, opacity) in zip(arrays, layers):
        out.append(f'<g fill="{color}" fill-opacity="{opacity}">')
        for p in pts:
            x, y = px(p)
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_scatter(path, inputs, barycenter, title="", max_points=400, rng=None):
    """Inputs in grey, barycenter samples in orange; large clouds are thinned."""
    g = np.random.default_rng(0) if rng is None else rng

    def thin(X):
        X = np.asarray(X)
        if X.shape[0] <= max_points:
            return X
        return X[np.sort(g.choice(X.shape[0], max_points, replace=False))]

    layers = [(thin(m), INPUT_COLOR, 1.5, 0.35) for m in inputs]
    layers.append((thin(barycenter), BARYCENTER_COLOR, 2.0, 0.8))
    with open(path, "w") as fh:
        fh.write(scatter_svg(layers, title))
