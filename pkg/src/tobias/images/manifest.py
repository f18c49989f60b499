"""Line-delimited JSON dataset manifests.

One record per line::

    {"image": "images/00000.ppm", "box": [x1, y1, x2, y2], "label": 1}

``box`` (inclusive pixel corners in original resolution) and ``label`` are
optional.  Relative image paths resolve against the manifest's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from tobias.errors import ParseError, TobiasIOError


@dataclass(frozen=True)
class ManifestRecord:
    image: str
    box: tuple[int, int, int, int] | None = None
    label: int | None = None

    def to_json(self) -> str:
        d = {"image": self.image}
        if self.box is not None:
            d["box"] = list(self.box)
        if self.label is not None:
            d["label"] = self.label
        return json.dumps(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        if "image" not in d:
            raise ParseError("manifest record has no 'image' field")
        box = d.get("box")
        if box is not None:
            if len(box) != 4:
                raise ParseError(f"box must have 4 coordinates, got {box}")
            box = tuple(int(v) for v in box)
            x1, y1, x2, y2 = box
            if not (0 <= x1 <= x2 and 0 <= y1 <= y2):
                raise ParseError(f"invalid box {box}")
        label = d.get("label")
        return cls(str(d["image"]), box, None if label is None else int(label))


def parse_manifest(text: str) -> list[ManifestRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            records.append(ManifestRecord.from_dict(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise ParseError(f"manifest line {lineno}: {exc.msg}") from None
        except ParseError as exc:
            raise ParseError(f"manifest line {lineno}: {exc}") from None
    return records


def serialize_manifest(records) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    try:
        return parse_manifest(path.read_text())
    except OSError as exc:
        raise TobiasIOError(f"cannot read manifest {path}: {exc}") from exc


def write_manifest(path, records) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_manifest(records))
    return path


def resolve_image(record: ManifestRecord, root) -> Path:
    p = Path(record.image)
    return p if p.is_absolute() or root is None else Path(root) / p
