"""File formats: JSON-lines annotations, external triple TSV, atomic writes."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataError
from .schema import SceneAnnotation, normalize_label

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecordError:
    """A rejected input record: file line number plus the reason."""

    line: int
    message: str


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def write_json(path: str | Path, obj) -> None:
    """Deterministic JSON output: sorted keys, fixed indentation."""
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_annotations(path: str | Path) -> tuple[list[SceneAnnotation], list[RecordError]]:
    """Read scene annotations from a JSON-lines file.

    Malformed lines are rejected individually (with their line number) and
    parsing continues; valid annotations are returned in file order.
    """
    annotations: list[SceneAnnotation] = []
    rejects: list[RecordError] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                annotations.append(SceneAnnotation.from_record(record))
            except (json.JSONDecodeError, ValueError) as exc:
                rejects.append(RecordError(lineno, str(exc)))
                log.warning("%s:%d: rejected annotation record: %s", path, lineno, exc)
    return annotations, rejects


def write_annotations(path: str | Path, annotations: Iterable[SceneAnnotation]) -> None:
    lines = [json.dumps(a.to_record(), sort_keys=True) + "\n" for a in annotations]
    atomic_write_text(path, "".join(lines))


def read_external_triples(
    path: str | Path,
) -> Iterator[tuple[str, str, str]]:
    """Yield (head label, relation name, tail label) rows from a 3-column TSV.

    Labels are normalized; rows without exactly three columns raise DataError
    immediately since a malformed TSV usually means the wrong file.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated columns")
            head, rel, tail = parts
            yield normalize_label(head), rel.strip(), normalize_label(tail)
