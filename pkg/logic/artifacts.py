"""
File storage for stage outputs.

Every stage writes plain JSON and CSV under its own directory plus a
manifest.json (stage, config hash, seed, tool version, files). Floats are
written with repr() so a load returns the exact same values. Nothing here
writes timestamps: reruns with the same config and seed are byte-identical.
"""

import csv
import hashlib
import json
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from logic.errors import ArtifactParseError, MissingArtifactError

TOOL_VERSION = "1.0.0"


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def dumps(payload) -> str:
    return json.dumps(payload, indent=2, default=_jsonable) + "\n"


def write_json(path, payload) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    path.write_text(dumps(payload))
    return path


def read_json(path, stage: Optional[str] = None) -> Dict:
    """
    Load a JSON artifact.

    Args:
        path: file to read
        stage: pipeline stage that produces the file; when given, a missing
            file raises MissingArtifactError telling the user to run it

    Returns:
        Parsed document
    """
    path = Path(path)
    if not path.exists():
        if stage:
            raise MissingArtifactError(str(path), stage)
        raise ArtifactParseError(str(path), "file not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ArtifactParseError(str(path), e.msg, line=e.lineno)


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    return path


def read_csv(path, stage: Optional[str] = None) -> Tuple[List[str], List[List[str]]]:
    path = Path(path)
    if not path.exists():
        if stage:
            raise MissingArtifactError(str(path), stage)
        raise ArtifactParseError(str(path), "file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ArtifactParseError(str(path), "empty file", line=1)
        rows = [row for row in reader]
    return header, rows


def parse_float_rows(path, header: List[str], rows: List[List[str]], first_line: int = 2) -> np.ndarray:
    """Convert CSV rows to a float matrix, reporting the first bad line/field."""
    out = np.empty((len(rows), len(header)), dtype=float)
    for r, row in enumerate(rows):
        line_no = first_line + r
        if len(row) != len(header):
            raise ArtifactParseError(str(path), f"expected {len(header)} fields, got {len(row)}", line=line_no)
        for col, raw in enumerate(row):
            try:
                out[r, col] = float(raw)
            except ValueError:
                raise ArtifactParseError(str(path), f"not a number: {raw!r}", line=line_no, field=header[col])
    return out


def config_hash(payload: Dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(canonical.encode()).hexdigest()


def write_manifest(stage_dir, stage: str, cfg_hash: str, master_seed: int, files: Iterable) -> Path:
    stage_dir = Path(stage_dir)
    names = sorted(str(Path(f).relative_to(stage_dir)) for f in files)
    return write_json(stage_dir / "manifest.json", {
        "stage": stage,
        "config_hash": cfg_hash,
        "master_seed": master_seed,
        "tool_version": TOOL_VERSION,
        "files": names,
    })
