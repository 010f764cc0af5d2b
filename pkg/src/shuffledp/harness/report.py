"""JSON and CSV report files."""

from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

from .experiment import TRIAL_COLUMNS, ExperimentReport

SCHEMA_VERSION = 1
TIMING_FIELDS = ("wall_time_s",)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def render_report(report: ExperimentReport | dict, fmt: str = "json") -> str:
    d = report.to_dict() if isinstance(report, ExperimentReport) else report
    if fmt == "json":
        return json.dumps(d, indent=2, allow_nan=False) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(f"# schema_version={SCHEMA_VERSION}\n")
        buf.write(f"# protocol={d['protocol']}\n")
        buf.write("# config=" + json.dumps(d["config"], separators=(",", ":")) + "\n")
        buf.write("# params=" + json.dumps(d["params"], separators=(",", ":")) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for t in d["trials"]:
            w.writerow([_cell(t[c]) for c in TRIAL_COLUMNS])
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(report: ExperimentReport | dict, fmt: str = "json", path: str | Path | None = None) -> str:
    """Write the report to ``path`` (stdout for ``None`` or ``-``) and return the text.

    I/O errors are not caught.
    """
    text = render_report(report, fmt)
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")
    return text


def _parse_cell(v: str):
    if v == "":
        return None
    if v in ("true", "false"):
        return v == "true"
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def read_report(path: str | Path) -> dict:
    """Parse a report written by :func:`emit_report`; CSV gives header fields plus trial rows."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        d = json.loads(text)
    else:
        d = {}
        lines = text.splitlines()
        body = []
        for line in lines:
            if line.startswith("# "):
                key, _, val = line[2:].partition("=")
                d[key] = json.loads(val) if key in ("config", "params") else _parse_cell(val)
            else:
                body.append(line)
        rows = list(csv.reader(body))
        header, rows = rows[0], rows[1:]
        d["columns"] = header
        d["trials"] = [{h: _parse_cell(v) for h, v in zip(header, r)} for r in rows]
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"{path}: unsupported schema version {d.get('schema_version')!r}")
    return d


def mask_timing(d: dict) -> dict:
    """Copy of a parsed report with timing fields removed, for reproducibility checks."""
    out = {k: v for k, v in d.items() if k not in TIMING_FIELDS}
    if "trials" in out:
        out["trials"] = [{k: v for k, v in t.items() if k not in TIMING_FIELDS} for t in out["trials"]]
    return out
