"""Summary indices and report rendering.

Per-subset records are averaged metric by metric into one semantic record
(all subsets but SMIYC) and one OOD record (SMIYC and Synobjs). The Semantic
and OOD summaries are harmonic means of those averaged records, with the
lower-is-better metrics (ECE, FPR@95) reversed as ``100 - value``. The BRAVO
index is the harmonic mean of the two summaries. Per-subset summaries are
kept in the report as well, so other aggregation orders can be recomputed.
"""

import json
from dataclasses import dataclass, field

from . import __version__
from .errors import DegenerateCurveError, HarmonicMeanError, MetricError, ValidationError
from .metrics import OOD_KEYS, SEMANTIC_KEYS, MetricsRecord

SUBSETS = ("acdc", "smiyc", "outofcontext", "synflare", "synobjs", "synrain")
SEMANTIC_SUBSETS = ("acdc", "outofcontext", "synflare", "synobjs", "synrain")
OOD_SUBSETS = ("smiyc", "synobjs")

SUBSET_TITLES = {
    "acdc": "ACDC",
    "smiyc": "SMIYC",
    "outofcontext": "Out-of-context",
    "synflare": "Synflare",
    "synobjs": "Synobjs",
    "synrain": "Synrain",
}

# column order of the leaderboard tables
SEMANTIC_COLUMNS = (
    ("miou", "mIoU"),
    ("aupr_error", "AUPR-Error"),
    ("aupr_success", "AUPR-Success"),
    ("auroc", "AUROC"),
    ("ece", "ECE"),
    ("fpr95", "FPR@95"),
)
OOD_COLUMNS = (("auprc", "AUPRC"), ("auroc", "AUROC"), ("fpr95", "FPR@95"))
REVERSED = {"semantic": ("ece", "fpr95"), "ood": ("fpr95",)}

DASH = "—"


def harmonic_mean(values, names=None):
    values = list(values)
    if not values:
        raise ValidationError("harmonic mean of an empty list")
    names = list(names) if names is not None else [f"value[{i}]" for i in range(len(values))]
    for name, v in zip(names, values):
        if v is None or not v > 0:
            raise HarmonicMeanError(name, v)
    return len(values) / sum(1.0 / v for v in values)


def reverse_metric(value):
    """Turn a lower-is-better percentage into a higher-is-better one."""
    if not 0.0 <= value <= 100.0:
        raise ValidationError(f"cannot reverse {value!r}: outside [0, 100]")
    return 100.0 - value


def _summary_terms(record):
    flipped = REVERSED[record.kind]
    names, values = [], []
    for key, value in record.values.items():
        if value is None:
            raise DegenerateCurveError("metric is degenerate", metric=key)
        names.append(f"reversed {key}" if key in flipped else key)
        values.append(reverse_metric(value) if key in flipped else value)
    return names, values


def semantic_summary(record):
    if record.kind != "semantic":
        raise ValidationError("semantic_summary needs a semantic record")
    names, values = _summary_terms(record)
    return harmonic_mean(values, names)


def ood_summary(record):
    if record.kind != "ood":
        raise ValidationError("ood_summary needs an OOD record")
    names, values = _summary_terms(record)
    return harmonic_mean(values, names)


def bravo_index(semantic, ood):
    return harmonic_mean([semantic, ood], ["semantic summary", "ood summary"])


def average_records(records, kind):
    """Metric-wise arithmetic mean; a metric missing in any record stays missing."""
    records = [r for r in records if r is not None]
    if not records:
        return None
    keys = SEMANTIC_KEYS if kind == "semantic" else OOD_KEYS
    values = {}
    for k in keys:
        column = [r.values[k] for r in records]
        values[k] = None if any(v is None for v in column) else sum(column) / len(column)
    degenerate = sorted({k for r in records for k in r.degenerate}, key=keys.index)
    return MetricsRecord(kind, values, tuple(degenerate))


def _attempt(fn, *args):
    try:
        return fn(*args), None
    except MetricError as exc:
        return None, str(exc)


@dataclass
class SubsetReport:
    name: str
    semantic: MetricsRecord = None
    ood: MetricsRecord = None
    items: int = 0
    semantic_summary: float = None
    ood_summary: float = None
    harmonic_mean: float = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.name not in SUBSETS:
            raise ValidationError(f"unknown subset {self.name!r}; expected one of {SUBSETS}")
        if self.semantic is not None and self.name not in SEMANTIC_SUBSETS:
            raise ValidationError(f"{self.name} carries no semantic metrics")
        if self.ood is not None and self.name not in OOD_SUBSETS:
            raise ValidationError(f"{self.name} carries no OOD metrics")

    @classmethod
    def build(cls, name, semantic=None, ood=None, items=0):
        rep = cls(name, semantic, ood, items)
        terms, names = [], []
        for record, attr, fn in ((semantic, "semantic_summary", semantic_summary), (ood, "ood_summary", ood_summary)):
            if record is None:
                continue
            value, note = _attempt(fn, record)
            setattr(rep, attr, value)
            if note:
                rep.notes.append(f"{record.kind} summary undefined: {note}")
                terms = None
            elif terms is not None:
                n, v = _summary_terms(record)
                names += [f"{record.kind} {x}" for x in n]
                terms += v
        if terms:
            rep.harmonic_mean, note = _attempt(harmonic_mean, terms, names)
            if note:
                rep.notes.append(f"subset harmonic mean undefined: {note}")
        return rep

    def to_dict(self):
        return {
            "name": self.name,
            "items": self.items,
            "semantic": self.semantic.to_dict() if self.semantic else None,
            "ood": self.ood.to_dict() if self.ood else None,
            "semantic_summary": self.semantic_summary,
            "ood_summary": self.ood_summary,
            "harmonic_mean": self.harmonic_mean,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            name=d["name"],
            semantic=MetricsRecord.from_dict(d["semantic"]) if d.get("semantic") else None,
            ood=MetricsRecord.from_dict(d["ood"]) if d.get("ood") else None,
            items=d.get("items", 0),
            semantic_summary=d.get("semantic_summary"),
            ood_summary=d.get("ood_summary"),
            harmonic_mean=d.get("harmonic_mean"),
            notes=list(d.get("notes", [])),
        )


@dataclass
class BenchmarkReport:
    subsets: list
    config: dict
    semantic: MetricsRecord = None
    ood: MetricsRecord = None
    semantic_summary: float = None
    ood_summary: float = None
    bravo_index: float = None
    notes: list = field(default_factory=list)
    engine_version: str = __version__

    @classmethod
    def build(cls, subsets, config):
        subsets = sorted(subsets, key=lambda s: SUBSETS.index(s.name))
        rep = cls(subsets=subsets, config=dict(config))
        rep.semantic = average_records([s.semantic for s in subsets if s.name in SEMANTIC_SUBSETS], "semantic")
        rep.ood = average_records([s.ood for s in subsets if s.name in OOD_SUBSETS], "ood")
        if rep.semantic is None:
            rep.notes.append("no semantic subsets evaluated")
        else:
            rep.semantic_summary, note = _attempt(semantic_summary, rep.semantic)
            if note:
                rep.notes.append(f"semantic summary undefined: {note}")
        if rep.ood is None:
            rep.notes.append("no OOD subsets evaluated")
        else:
            rep.ood_summary, note = _attempt(ood_summary, rep.ood)
            if note:
                rep.notes.append(f"OOD summary undefined: {note}")
        if rep.semantic_summary is not None and rep.ood_summary is not None:
            rep.bravo_index, note = _attempt(bravo_index, rep.semantic_summary, rep.ood_summary)
            if note:
                rep.notes.append(f"BRAVO index undefined: {note}")
        return rep

    @property
    def degenerate(self):
        out = []
        for s in self.subsets:
            for record in (s.semantic, s.ood):
                if record is not None:
                    out += [(s.name, record.kind, k) for k in record.degenerate]
        return out

    def to_dict(self):
        return {
            "engine_version": self.engine_version,
            "config": dict(self.config),
            "subsets": [s.to_dict() for s in self.subsets],
            "semantic": self.semantic.to_dict() if self.semantic else None,
            "ood": self.ood.to_dict() if self.ood else None,
            "semantic_summary": self.semantic_summary,
            "ood_summary": self.ood_summary,
            "bravo_index": self.bravo_index,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            subsets=[SubsetReport.from_dict(s) for s in d["subsets"]],
            config=dict(d["config"]),
            semantic=MetricsRecord.from_dict(d["semantic"]) if d.get("semantic") else None,
            ood=MetricsRecord.from_dict(d["ood"]) if d.get("ood") else None,
            semantic_summary=d.get("semantic_summary"),
            ood_summary=d.get("ood_summary"),
            bravo_index=d.get("bravo_index"),
            notes=list(d.get("notes", [])),
            engine_version=d.get("engine_version", __version__),
        )

    def __eq__(self, other):
        if not isinstance(other, BenchmarkReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _cell(value, width, marks=None, key=None):
    if value is None:
        text = DASH + ("*" if marks is not None and key in marks else "")
    else:
        text = f"{value:.1f}"
    return text.rjust(width)


def _table(title, header, rows):
    first = max([len(header[0])] + [len(r[0]) for r in rows])
    widths = [first] + [max(len(h), 6) for h in header[1:]]
    lines = [title, "  ".join(h.rjust(w) if i else h.ljust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    lines.append("-" * len(lines[-1]))
    for label, cells in rows:
        lines.append("  ".join([label.ljust(widths[0])] + [c(w) for c, w in zip(cells, widths[1:])]))
    return "\n".join(lines)


def _record_cells(record, columns):
    if record is None:
        return [lambda w: "".rjust(w) for _ in columns]
    marks = record.degenerate
    return [lambda w, k=k: _cell(record.values[k], w, marks, k) for k, _ in columns]


def render_text(report, label="report"):
    """Plain-text tables laid out like the challenge leaderboard tables."""
    blocks = []
    blocks.append(
        _table(
            "BRAVO index",
            ["Method", "BRAVO", "Semantic", "OOD"],
            [(label, [lambda w, v=v: _cell(v, w) for v in (report.bravo_index, report.semantic_summary, report.ood_summary)])],
        )
    )
    by_name = {s.name: s for s in report.subsets}
    blocks.append(
        _table(
            "Subset harmonic means",
            ["Method"] + [SUBSET_TITLES[n] for n in SUBSETS],
            [(label, [lambda w, n=n: _cell(by_name[n].harmonic_mean, w) if n in by_name else "".rjust(w) for n in SUBSETS])],
        )
    )
    sem_rows = [(f"{label} (mean)", _record_cells(report.semantic, SEMANTIC_COLUMNS))]
    sem_rows += [(f"  {SUBSET_TITLES[s.name]}", _record_cells(s.semantic, SEMANTIC_COLUMNS)) for s in report.subsets if s.semantic]
    blocks.append(_table("Semantic metrics", ["Method"] + [t for _, t in SEMANTIC_COLUMNS], sem_rows))
    ood_rows = [(f"{label} (mean)", _record_cells(report.ood, OOD_COLUMNS))]
    ood_rows += [(f"  {SUBSET_TITLES[s.name]}", _record_cells(s.ood, OOD_COLUMNS)) for s in report.subsets if s.ood]
    blocks.append(_table("OOD metrics", ["Method"] + [t for _, t in OOD_COLUMNS], ood_rows))

    footnotes = []
    policy = report.config.get("degenerate_policy", "error")
    for subset, kind, key in report.degenerate:
        footnotes.append(f"* {SUBSET_TITLES[subset]} {kind} {key}: degenerate curve (policy={policy})")
    footnotes += [f"note: {n}" for n in report.notes]
    for s in report.subsets:
        footnotes += [f"note: {SUBSET_TITLES[s.name]}: {n}" for n in s.notes]
    cfg = ", ".join(f"{k}={v}" for k, v in report.config.items())
    footnotes.append(f"config: {cfg}; engine {report.engine_version}")
    blocks.append("\n".join(footnotes))
    return "\n\n".join(blocks) + "\n"


def render_json(report):
    return json.dumps(report.to_dict(), indent=2) + "\n"


def render_report(report, fmt="json", label="report"):
    if fmt == "json":
        return render_json(report)
    if fmt in ("table", "text", "text-table"):
        return render_text(report, label)
    raise ValidationError(f"unknown report format {fmt!r}")


def load_report(text):
    return BenchmarkReport.from_dict(json.loads(text))


def comparable_config(config):
    return {k: v for k, v in config.items() if k != "engine_version"}


def render_comparison(named_reports, fmt="table"):
    """Rank several reports by BRAVO index, best first.

    Reports with an undefined index sort last, in input order.
    """
    ranked = sorted(
        enumerate(named_reports),
        key=lambda p: (p[1][1].bravo_index is None, -(p[1][1].bravo_index or 0.0), p[0]),
    )
    rows = [(name, rep) for _, (name, rep) in ranked]
    if fmt == "json":
        return json.dumps(
            [
                {"name": n, "bravo_index": r.bravo_index, "semantic_summary": r.semantic_summary, "ood_summary": r.ood_summary}
                for n, r in rows
            ],
            indent=2,
        ) + "\n"
    return _table(
        "BRAVO index",
        ["Method", "BRAVO", "Semantic", "OOD"],
        [(n, [lambda w, v=v: _cell(v, w) for v in (r.bravo_index, r.semantic_summary, r.ood_summary)]) for n, r in rows],
    ) + "\n"
