"""Artifact writers: provenance header, JSONL traces, TSV tables and PNG figures."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import __version__  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "legend.frameon": False,
}
COLORS = ("#2b6f97", "#d1793b", "#5a9a4b", "#8c5aa8")


def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def provenance(command: str, config: Mapping, seed: int) -> dict:
    return {"tool": "qbalab", "version": __version__, "command": command, "seed": seed,
            "config_hash": config_hash(config), "config": dict(sorted(config.items()))}


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def write_jsonl(path: Path, header: Mapping, records: Iterable[Mapping]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps({"provenance": header}) + "\n")
        for rec in records:
            fh.write(_dumps(rec) + "\n")
    return path


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def write_tsv(path: Path, header: Mapping, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + _dumps({"provenance": header}) + "\n")
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(v) for v in row) + "\n")
    return path


def read_tsv(path: Path) -> list[dict]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    cols = lines[0].split("\t")
    return [dict(zip(cols, ln.split("\t"))) for ln in lines[1:]]


def read_jsonl(path: Path) -> tuple[dict, list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return json.loads(lines[0])["provenance"], [json.loads(ln) for ln in lines[1:]]


def text_table(columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [list(columns)] + [[_cell(v) for v in r] for r in rows]
    widths = [max(len(r[k]) for r in cells) for k in range(len(columns))]
    out = ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in cells]
    out.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(out)


# ---------------------------------------------------------------------------
# figures


def _save(fig, path: Path, header: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": "qbalab", "Description": _dumps(header)})
    plt.close(fig)
    return path


def reduction_figure(path, header, rows: Sequence[tuple], title: str) -> Path:
    """Quantum vs classical trace probabilities, one point per trace."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        pq = [r[1] for r in rows]
        pc = [r[2] for r in rows]
        hi = max(pq + pc + [1e-3]) * 1.05
        ax.plot([0, hi], [0, hi], color="0.7", lw=0.8)
        ax.scatter(pq, pc, s=12, color=COLORS[0])
        ax.set_xlabel("P[trace]  quantum, full information")
        ax.set_ylabel("P[trace]  classical, private channel")
        ax.set_title(title)
        ax.set_xlim(0, hi)
        ax.set_ylim(0, hi)
        fig.tight_layout()
        return _save(fig, path, header)


def bar_figure(path, header, labels: Sequence[str], series: Mapping[str, Sequence[float]],
               title: str, ylabel: str, reference: float | None = None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.6, 0.6 * len(labels) + 2), 3.2))
        k = len(series)
        width = 0.8 / max(k, 1)
        for s, (name, vals) in enumerate(series.items()):
            xs = [x + (s - (k - 1) / 2) * width for x in range(len(labels))]
            ax.bar(xs, vals, width=width, label=name, color=COLORS[s % len(COLORS)])
        if reference is not None:
            ax.axhline(reference, color="0.3", lw=0.8, ls="--")
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        if k > 1:
            ax.legend()
        fig.tight_layout()
        return _save(fig, path, header)


def histogram_figure(path, header, counts: Mapping, title: str, xlabel: str) -> Path:
    keys = sorted(counts)
    return bar_figure(path, header, [str(k) for k in keys], {"count": [counts[k] for k in keys]},
                      title, "trials") if keys else bar_figure(path, header, ["-"], {"count": [0]},
                                                               title, "trials")
