"""Table rendering for metric reports: JSON records plus aligned text."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .metrics import MetricsReport

SEG_COLUMNS = ("mDice", "mIoU", "ME")
DET_COLUMNS = ("Precision", "Recall", "F1", "mAP@0.5", "mAP@0.5:0.95")
DECIMALS = 4


def _seg_values(r: MetricsReport) -> dict:
    return {"mDice": r.mdice, "mIoU": r.miou, "ME": r.me}


def _det_values(r: MetricsReport) -> dict:
    return {
        "Precision": r.mean_precision,
        "Recall": r.mean_recall,
        "F1": r.mean_f1,
        "mAP@0.5": r.map_50,
        "mAP@0.5:0.95": r.map_50_95,
    }


@dataclass
class ReportDocument:
    columns: tuple
    records: list = field(default_factory=list)  # [{"name": ..., <column>: value}]

    def to_json(self) -> str:
        return json.dumps({"columns": list(self.columns), "records": self.records}, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ReportDocument":
        doc = json.loads(text)
        return cls(tuple(doc["columns"]), doc["records"])

    def to_text(self) -> str:
        names = [str(r["name"]) for r in self.records]
        first = max([len("Network")] + [len(n) for n in names])
        widths = [max(len(c), DECIMALS + 2) for c in self.columns]
        lines = ["  ".join(["Network".ljust(first)] + [c.rjust(w) for c, w in zip(self.columns, widths)])]
        for rec, name in zip(self.records, names):
            cells = [f"{rec[c]:.{DECIMALS}f}".rjust(w) for c, w in zip(self.columns, widths)]
            lines.append("  ".join([name.ljust(first)] + cells))
        return "\n".join(lines) + "\n"


def render_report(rows, kind: str = "seg") -> ReportDocument:
    """``rows`` is a sequence of ``(name, MetricsReport)``; values are rounded
    to four decimals in both renderings."""
    if kind == "seg":
        columns, extract = SEG_COLUMNS, _seg_values
    elif kind == "det":
        columns, extract = DET_COLUMNS, _det_values
    else:
        raise ValueError(f"unknown report kind {kind!r}")
    records = []
    for name, rep in rows:
        vals = extract(rep)
        rec = {"name": name}
        rec.update({c: round(float(vals[c]), DECIMALS) for c in columns})
        records.append(rec)
    return ReportDocument(columns, records)
