"""Cost-sweep tables and per-publisher histogram data."""

from __future__ import annotations

from collections import defaultdict

from .evaluate import NIReport, per_publisher_histogram

_POLICY_LABELS = {"simple": "Simple", "tree": "Tree", "none": "None"}


def _usd(x: float) -> str:
    sign = "-" if x < 0 else ""
    return f"{sign}${abs(x):,.2f}"


def _pct(p) -> str:
    return "undefined" if p is None else f"{p:.2f}%"


def render_table(reports: list) -> str:
    """Plain-text table with one block per (cost, replay mode), policies as rows."""
    blocks = defaultdict(list)
    for r in reports:
        blocks[(round(r.cost.cpm_cents, 10), r.mode)].append(r)
    rows = [("Abort rule", "NI delta change", "NI percent change")]
    headers = {}
    for key in sorted(blocks):
        cost, mode = key
        base = blocks[key][0].baseline_net_income
        headers[len(rows)] = f"c={cost:g} CPM cents, NI_c,0={_usd(base)}, {mode} replay"
        rows.append(None)
        order = {"simple": 0, "tree": 1}
        for r in sorted(blocks[key], key=lambda r: (order.get(r.policy, 9), r.policy)):
            rows.append((_POLICY_LABELS.get(r.policy, r.policy), _usd(r.delta), _pct(r.percent)))
    widths = [max(len(row[i]) for row in rows if row is not None) for i in range(3)]
    # widen the last column so block headers fit
    widths[2] = max(widths[2], max((len(h) for h in headers.values()), default=0) - widths[0] - widths[1] - 6)
    inner = sum(widths) + 6
    rule = "+" + "-" * (inner + 2) + "+"
    out = [rule]
    for i, row in enumerate(rows):
        if row is None:
            out.append(rule)
            out.append("| " + headers[i].center(inner) + " |")
            out.append(rule)
        else:
            out.append("| " + " | ".join(cell.ljust(w) for cell, w in zip(row, widths)) + " |")
    out.append(rule)
    return "\n".join(out) + "\n"


def histogram_csv(reports: list, bins: int) -> str:
    lines = ["policy,mode,cost_cpm_cents,bin_low,bin_high,count"]
    for r in sorted(reports, key=lambda r: (r.cost.cpm_cents, r.mode, r.policy)):
        hist = per_publisher_histogram(r, bins)
        for lo, hi, n in hist.rows():
            lines.append(f"{r.policy},{r.mode},{r.cost.cpm_cents!r},{lo!r},{hi!r},{n}")
    return "\n".join(lines) + "\n"


def load_reports(docs: list) -> list:
    return [NIReport.from_dict(d) for d in docs]
