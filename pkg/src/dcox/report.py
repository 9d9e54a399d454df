"""Human-readable report and residual plot data from a written output bundle."""

from __future__ import annotations

import csv
from pathlib import Path

from .errors import IoFailure
from .tables import OutputBundle

REQUIRED_FOR_REPORT = ("MODELINFO", "CENS_SUM", "CONVRG_STATUS", "ITER_PARMS_HIST")
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")

# number of decimals per column in the rendered tables
_DECIMALS = {
    "Estimate": 6, "StdErr": 6, "HazardRatio": 6, "HRLowerCL": 7, "HRUpperCL": 7,
    "ChiSq": 4, "ProbChiSq": 4, "WithoutCovariates": 6, "WithCovariates": 6,
    "PctCensored": 2, "CumHazard": 6, "Survival": 6,
    "MeanLinearPredictor": 6, "MeanMartingale": 6, "MeanDeviance": 6,
}


def _cell(column: str, text: str) -> str:
    places = _DECIMALS.get(column)
    if places is None or text == "":
        return text
    try:
        value = float(text)
    except ValueError:
        return text
    if column == "ProbChiSq" and value < 10.0 ** -places:
        return f"<.{'0' * (places - 1)}1"
    return f"{value:.{places}f}"


def format_table(columns, rows) -> str:
    """Fixed-width text table; numbers right-aligned."""
    body = [[_cell(c, str(v)) for c, v in zip(columns, row)] for row in rows]
    widths = [max([len(c)] + [len(r[i]) for r in body]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in body]
    return "\n".join(lines)


SECTIONS = (
    ("MODELINFO", "Model information"),
    ("CENS_SUM", "Number of events and censored values"),
    ("CONVRG_STATUS", "Convergence status"),
    ("ITER_PARMS_HIST", "Iteration history"),
    ("MODELFIT", "Model fit statistics"),
    ("GLOB_NULL_CHISQ", "Testing global null hypothesis: beta = 0"),
    ("P_EST", "Analysis of maximum likelihood estimates"),
    ("COV_EST", "Estimated covariance matrix"),
    ("RESID_SUM", "Residual summary"),
    ("RESID_SUM_BY_PCT", "Binned residuals by linear-predictor percentile"),
)


def plot_points(bundle: OutputBundle) -> list[dict]:
    """One point per transmitted bin: x mean linear predictor, y mean martingale."""
    if "RESID_SUM_BY_PCT" not in bundle.tables:
        return []
    columns, rows = bundle.tables["RESID_SUM_BY_PCT"]
    idx = {c: i for i, c in enumerate(columns)}
    return [
        {
            "series": str(r[idx["dp_cd"]]),
            "bin": int(r[idx["Bin"]]),
            "x": float(r[idx["MeanLinearPredictor"]]),
            "y": float(r[idx["MeanMartingale"]]),
            "size": int(r[idx["Count"]]),
        }
        for r in rows
    ]


def _svg(points, width=640, height=420, pad=56) -> str:
    """Minimal deterministic scatter: marker area proportional to bin count."""
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>']
    xs = [p["x"] for p in points] or [0.0, 1.0]
    ys = [p["y"] for p in points] + [0.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0
    big = max((p["size"] for p in points), default=1)

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out.append(f'<line x1="{pad}" y1="{sy(0.0):.2f}" x2="{width - pad}" y2="{sy(0.0):.2f}" '
               'stroke="#999" stroke-dasharray="4 3"/>')
    out.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>')
    out.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>')
    for val, anchor in ((x0, "start"), (x1, "end")):
        out.append(f'<text x="{sx(val):.2f}" y="{height - pad + 16}" font-size="11" text-anchor="{anchor}">'
                   f'{val:.3f}</text>')
    for val in (y0, y1):
        out.append(f'<text x="{pad - 6}" y="{sy(val):.2f}" font-size="11" text-anchor="end">{val:.3f}</text>')
    out.append(f'<text x="{width / 2}" y="{height - 12}" font-size="12" text-anchor="middle">'
               'Mean linear predictor</text>')
    out.append(f'<text x="16" y="{height / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {height / 2})">Mean martingale residual</text>')
    series = sorted({p["series"] for p in points}, key=lambda s: (len(s), s))
    for n, name in enumerate(series):
        color = PALETTE[n % len(PALETTE)]
        for p in (q for q in points if q["series"] == name):
            r = 3.0 + 7.0 * (p["size"] / big) ** 0.5
            out.append(f'<circle cx="{sx(p["x"]):.2f}" cy="{sy(p["y"]):.2f}" r="{r:.2f}" '
                       f'fill="{color}" fill-opacity="0.6" stroke="{color}"/>')
        out.append(f'<text x="{width - pad + 4}" y="{pad + 14 * n}" font-size="11" fill="{color}">'
                   f'dp_cd {name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_report(bundle: OutputBundle, destination) -> dict:
    """Write ``<prefix>report.txt``, ``<prefix>resid_plot.csv`` and ``<prefix>resid_plot.svg``.

    Returns a mapping from artifact kind to path.
    """
    missing = [name for name in REQUIRED_FOR_REPORT if name not in bundle.tables]
    if missing:
        raise IoFailure(f"output bundle lacks {', '.join(bundle.filename(m) for m in missing)}")
    dest = Path(destination)
    parts = []
    for name, title in SECTIONS:
        if name not in bundle.tables:
            continue
        columns, rows = bundle.tables[name]
        parts.append(f"{title}\n{format_table(columns, rows)}")
    points = plot_points(bundle)
    if "RESID_SUM_BY_PCT" in bundle.tables and not points:
        parts.append("Residual plot\nNo binned residuals were transmitted: every partner was below the "
                     "minimum bin count, so the summary was suppressed.")
    text = "\n\n".join(parts) + "\n"

    paths = {
        "report": dest / f"{bundle.prefix}report.txt",
        "plot_data": dest / f"{bundle.prefix}resid_plot.csv",
        "plot": dest / f"{bundle.prefix}resid_plot.svg",
    }
    try:
        dest.mkdir(parents=True, exist_ok=True)
        paths["report"].write_text(text, encoding="utf-8")
        with open(paths["plot_data"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series", "bin", "x", "y", "size"])
            for p in points:
                w.writerow([p["series"], p["bin"], repr(p["x"]), repr(p["y"]), p["size"]])
        paths["plot"].write_text(_svg(points), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write report to {dest}: {exc}") from exc
    return paths
