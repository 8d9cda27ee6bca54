"""Run manifests, verdicts and versioned CSV output.

Everything in a manifest except its ``run`` block is a function of the
configuration and seed. The ``run`` block holds timestamps, thread count and
paths, which legitimately differ between reruns.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

__all__ = ["SCHEMA", "Verdict", "FileRecord", "RunManifest", "write_csv", "digest"]

SCHEMA = "bbm-yaglom/manifest/1"
CSV_SCHEMA = "bbm-yaglom/{name}/1"


def _clean(v):
    """JSON has no NaN or infinity; store them as strings."""
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if hasattr(v, "item") and not isinstance(v, (str, bytes)):
        return _clean(v.item())
    return v


@dataclass
class Verdict:
    """Outcome of one acceptance check.

    ``kind`` is ``exact``, ``statistical``, ``bound`` or ``trend``. Trend
    verdicts check a monotone approach to a limit that has no known rate.
    """

    name: str
    kind: str
    passed: bool
    statistic: float | None = None
    threshold: str = ""
    detail: str = ""

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = bool(self.passed)
        d["status"] = self.status
        return _clean(d)

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        stat = d.get("statistic")
        if isinstance(stat, str):
            stat = float(stat)
        return cls(d["name"], d["kind"], bool(d["passed"]), stat, d.get("threshold", ""), d.get("detail", ""))


@dataclass
class FileRecord:
    name: str
    sha256: str
    bytes: int
    schema: str


@dataclass
class RunManifest:
    experiment: str
    version: str
    config: dict
    summary: dict = field(default_factory=dict)
    verdicts: list = field(default_factory=list)
    files: list = field(default_factory=list)
    run: dict = field(default_factory=dict)
    schema: str = SCHEMA

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def to_dict(self, volatile: bool = True) -> dict:
        d = {
            "schema": self.schema,
            "experiment": self.experiment,
            "version": self.version,
            "config": _clean(self.config),
            "summary": _clean(self.summary),
            "verdicts": [v.to_dict() for v in self.verdicts],
            "files": [asdict(f) for f in self.files],
            "passed": self.passed,
        }
        if volatile:
            d["run"] = _clean(self.run)
        return d

    def to_json(self, volatile: bool = True) -> str:
        return json.dumps(self.to_dict(volatile), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        return cls(
            experiment=d["experiment"], version=d["version"], config=d["config"], summary=d["summary"],
            verdicts=[Verdict.from_dict(v) for v in d["verdicts"]],
            files=[FileRecord(**f) for f in d["files"]], run=d.get("run", {}), schema=d["schema"],
        )

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "manifest.json"
        path.write_text(self.to_json())
        return path


def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(out_dir, name: str, columns, rows) -> FileRecord:
    """Write ``<name>.csv`` with a schema comment line and return its record.

    Floats are written with ``repr`` (shortest round-trip form), so equal
    numbers always give equal bytes.
    """
    schema = CSV_SCHEMA.format(name=name)
    buf = io.StringIO()
    buf.write(f"# schema: {schema}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    data = buf.getvalue().encode()
    path = Path(out_dir) / f"{name}.csv"
    path.write_bytes(data)
    return FileRecord(path.name, hashlib.sha256(data).hexdigest(), len(data), schema)
