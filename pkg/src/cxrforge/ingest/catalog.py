"""Catalog-level operations: blocklist exclusion and line-delimited export."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from ..geometry import BBox
from .adapters import normalize_stem
from .records import (
    Annotation,
    ClassLabels,
    DatasetCatalog,
    ImageRef,
    LabeledBox,
    PhraseBox,
    QAPair,
    StudyRecord,
)


@dataclass
class ExclusionReport:
    images: int = 0
    studies: int = 0
    annotations: int = 0
    blocked_ids: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.images + self.studies + self.annotations


def read_blocklist(path: str | Path) -> set[str]:
    """Newline-delimited image identifiers; blank lines and ``#`` comments ignored."""
    out = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            out.add(line)
    return out


class Blocklist:
    """Matches images by exact id or by normalized file stem."""

    def __init__(self, ids: Iterable[str] = ()) -> None:
        self.ids = set(ids)
        self.stems = {normalize_stem(i) for i in self.ids}

    def __bool__(self) -> bool:
        return bool(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def blocks(self, image_id: str, path: str | None = None) -> bool:
        if image_id in self.ids or normalize_stem(image_id) in self.stems:
            return True
        return path is not None and normalize_stem(path) in self.stems

    def blocks_ref(self, ref: ImageRef) -> bool:
        return self.blocks(ref.image_id, ref.path)


def exclude_images(catalog: DatasetCatalog, blocklist: Blocklist | Iterable[str]) -> tuple[DatasetCatalog, ExclusionReport]:
    """Return a copy of ``catalog`` without any record that touches a blocked image.

    A study with any blocked image is dropped whole, since its report also
    describes the blocked image.
    """
    bl = blocklist if isinstance(blocklist, Blocklist) else Blocklist(blocklist)
    report = ExclusionReport()
    out = DatasetCatalog(
        catalog.dataset_id,
        catalog.split,
        catalog.finding_vocabulary,
        warnings=list(catalog.warnings),
        dropped=dict(catalog.dropped),
    )
    if not bl:
        out.images = dict(catalog.images)
        out.studies = list(catalog.studies)
        out.annotations = list(catalog.annotations)
        return out, report

    blocked = {k for k, ref in catalog.images.items() if bl.blocks_ref(ref)}
    for s in catalog.studies:
        if any(i.image_id in blocked for i in s.images):
            report.studies += 1
            blocked.update(i.image_id for i in s.images)
        else:
            out.studies.append(s)
    for k, ref in catalog.images.items():
        if k in blocked:
            report.images += 1
        else:
            out.images[k] = ref
    for a in catalog.annotations:
        if any(i in blocked or bl.blocks(i) for i in a.image_ids):
            report.annotations += 1
        else:
            out.annotations.append(a)
    report.blocked_ids = sorted(blocked)
    if report.total:
        out.note_drop("blocklisted", report.total)
    return out, report


# ---------------------------------------------------------------- export


def _box_json(b: BBox) -> list[float]:
    return [b.x1, b.y1, b.x2, b.y2]


def _payload_json(a: Annotation) -> dict:
    p = a.payload
    if isinstance(p, ClassLabels):
        return {"positives": list(p.positives)}
    if isinstance(p, LabeledBox):
        return {"label": p.label, "box": _box_json(p.box)}
    if isinstance(p, PhraseBox):
        return {"phrase": p.phrase, "box": _box_json(p.box)}
    if isinstance(p, QAPair):
        return {"question": p.question, "answer": p.answer}
    raise TypeError(type(p))


def catalog_records(catalog: DatasetCatalog) -> Iterator[dict]:
    """Catalog as plain records: one per image, study and annotation."""
    yield {
        "type": "catalog",
        "dataset": catalog.dataset_id,
        "split": catalog.split.value,
        "vocabulary": list(catalog.finding_vocabulary.names) if catalog.finding_vocabulary else None,
        "dropped": dict(sorted(catalog.dropped.items())),
    }
    for ref in catalog.images.values():
        yield {"type": "image", **ref.to_json()}
    for s in catalog.studies:
        yield {
            "type": "study",
            "study_id": s.study_id,
            "patient_id": s.patient_id,
            "order_key": s.order_key,
            "images": [i.image_id for i in s.images],
            "findings": s.findings_section,
        }
    for a in catalog.annotations:
        yield {
            "type": "annotation",
            "dataset": a.dataset_id,
            "images": list(a.image_ids),
            "kind": a.kind.value,
            **_payload_json(a),
        }


def export_catalog(catalog: DatasetCatalog, path: str | Path) -> int:
    n = 0
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in catalog_records(catalog):
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def study_images(studies: Iterable[StudyRecord]) -> set[str]:
    return {i.image_id for s in studies for i in s.images}
