"""Deterministic report writers: delimited tables, JSON twins, and figures.

Every writer here produces byte-identical output for identical input, which
is what makes rerun checks of the fixture pipeline meaningful. Figures are
rendered with the Agg backend so the report path works headless.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analysis import BucketCount
from .evalharness import Category, ServiceReport, Source, format_percent

logger = logging.getLogger(__name__)

_PNG_METADATA = {"Software": "smsintel"}

_FIGURE_STYLE = {
    "figure.figsize": (7.0, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 10,
    "legend.fontsize": 9,
}


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_json(path: str | Path, payload) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")


def _save_figure(fig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)
    logger.info("wrote figure %s", path)


def plot_quarterly_trends(
    rows: Sequence[BucketCount], path: str | Path, title: str, top_n: int = 5
) -> None:
    """Line chart of quarterly counts for the top groups by total volume."""
    totals: dict[str, int] = {}
    for row in rows:
        totals[row.key] = totals.get(row.key, 0) + row.count
    top_keys = [k for k, _ in sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))[:top_n]]
    buckets = sorted({row.bucket for row in rows})
    with plt.rc_context(_FIGURE_STYLE):
        fig, ax = plt.subplots()
        for key in top_keys:
            by_bucket = {r.bucket: r.count for r in rows if r.key == key}
            ax.plot(
                range(len(buckets)),
                [by_bucket.get(b, 0) for b in buckets],
                marker="o",
                label=key,
            )
        ax.set_xticks(range(len(buckets)))
        ax.set_xticklabels(buckets, rotation=45, ha="right")
        ax.set_ylabel("messages")
        ax.set_title(title)
        if top_keys:
            ax.legend()
        fig.tight_layout()
        _save_figure(fig, path)


def plot_service_rates(
    reports: Sequence[ServiceReport], path: str | Path, title: str, ylabel: str
) -> None:
    """Bar chart of each service's overall hit fraction, labeled in percent."""
    names = [r.service_name for r in reports]
    fractions = [r.overall.fraction for r in reports]
    with plt.rc_context(_FIGURE_STYLE):
        fig, ax = plt.subplots()
        bars = ax.bar(range(len(names)), fractions, color="#4878cf")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        for bar, fraction in zip(bars, fractions):
            ax.annotate(
                format_percent(fraction),
                (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                ha="center",
                va="bottom",
            )
        fig.tight_layout()
        _save_figure(fig, path)


def service_report_rows(reports: Sequence[ServiceReport]) -> list[list[str]]:
    """Rows in the service / overall %% / by-source / by-category table order."""
    rows = []
    for report in reports:
        rows.append(
            [
                report.service_name,
                report.display_percent,
                str(report.by_source[Source.TWITTER]),
                str(report.by_source[Source.HISTORICAL]),
                str(report.by_category[Category.ADS]),
                str(report.by_category[Category.FRAUD]),
            ]
        )
    return rows


SERVICE_REPORT_HEADER = ["service", "rate", "twitter", "historical", "ads", "fraud"]


def service_report_payload(reports: Sequence[ServiceReport]) -> list[dict]:
    """JSON twin of the service table, keeping exact fractions."""
    payload = []
    for report in reports:
        payload.append(
            {
                "service": report.service_name,
                "rate": report.overall.fraction,
                "rate_display": report.display_percent,
                "overall": {"hits": report.overall.hits, "total": report.overall.total},
                "by_source": {
                    source.value: {"hits": c.hits, "total": c.total}
                    for source, c in report.by_source.items()
                },
                "by_category": {
                    category.value: {"hits": c.hits, "total": c.total}
                    for category, c in report.by_category.items()
                },
                "errors": report.errors,
            }
        )
    return payload
