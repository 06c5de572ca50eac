"""Per-dataset adapters.

Every adapter reads a small set of source tables and applies that dataset's
preprocessing rules. Source tables come in a handful of shapes:

``images`` (CSV)
    ``image_id, path, width, height`` and optionally ``view, study_id,
    patient_id, split``.
``studies`` (CSV, MIMIC-CXR)
    ``study_id, patient_id, report`` and optionally ``study_datetime, split``.
``labels`` (CSV)
    ``image_id`` plus either a ``labels`` column of ``|``-separated positives
    or one column per label holding ``1 / 0 / -1 / blank``.
``boxes`` (CSV)
    ``image_id, label`` and either ``x1, y1, x2, y2`` or ``x, y, w, h``.
    Empty coordinates mark a label-only row.
``circles`` (CSV, JSRT)
    ``image_id, label, cx, cy, r``.
``masks`` (CSV)
    ``image_id, label, rle`` and optionally ``kind`` (``finding``/``organ``).
    ``rle`` holds space-separated run lengths starting with a background run;
    mask size is the image size.
``phrases`` / ``regions`` (CSV)
    ``image_id, phrase`` (or ``region``) and box coordinates.
``qa`` / ``instructions`` (JSONL)
    one JSON object per line, see the individual adapters.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterator, Mapping

from ..errors import DuplicateRecordError, FormatError, InputError, UnknownDatasetError
from ..geometry import BBox, RleMask, circle_to_bbox, mask_to_bboxes, merge_overlapping
from ..vocab import FindingVocabulary
from .records import (
    Annotation,
    AnnotationKind,
    ClassLabels,
    DatasetCatalog,
    ImageRef,
    LabeledBox,
    PhraseBox,
    QAPair,
    Split,
    StudyRecord,
    View,
)
from .text import DEFAULT_SECTION_HEADERS, admit_report, clean_report_text, extract_findings_section

log = logging.getLogger(__name__)

IMAGENOME_REGIONS = (
    "right lung",
    "right upper lung zone",
    "right mid lung zone",
    "right lower lung zone",
    "right hilar structures",
    "right apical zone",
    "right costophrenic angle",
    "right hemidiaphragm",
    "left lung",
    "left upper lung zone",
    "left mid lung zone",
    "left lower lung zone",
    "left hilar structures",
    "left apical zone",
    "left costophrenic angle",
    "left hemidiaphragm",
    "trachea",
    "spine",
    "right clavicle",
    "left clavicle",
    "aortic arch",
    "mediastinum",
    "upper mediastinum",
    "svc",
    "cardiac silhouette",
    "cavoatrial junction",
    "right atrium",
    "carina",
    "abdomen",
)

MAX_COVID_RADIOGRAPHY_REGIONS = 3
RSNA_KEEP = {"lung opacity": "pneumonia", "normal": "normal"}
RADIALOG_EXCLUDED_TASKS = {"rg", "report generation", "report_generation"}

_META_COLUMNS = {"image_id", "path", "split", "study_id", "patient_id", "view", "width", "height"}


@dataclass
class AdapterInput:
    dataset_id: str
    paths: Mapping[str, Path]
    split: Split
    vocabulary: FindingVocabulary | None = None
    options: Mapping[str, object] = field(default_factory=dict)
    exclude_stems: frozenset[str] = frozenset()
    section_headers: tuple[str, ...] = DEFAULT_SECTION_HEADERS

    def path(self, name: str, required: bool = True) -> Path | None:
        p = self.paths.get(name)
        if p is None:
            if required:
                raise InputError(f"{self.dataset_id}: missing source path {name!r}")
            return None
        return Path(p)

    @property
    def inclusive_boxes(self) -> bool:
        return self.options.get("box_convention", "edge") == "inclusive"


# ---------------------------------------------------------------- readers


def read_csv(path: Path) -> Iterator[tuple[int, dict[str, str]]]:
    if not path.exists():
        raise FormatError("file not found", str(path))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            if None in row:
                raise FormatError("row has more fields than the header", str(path), reader.line_num)
            yield reader.line_num, {k.strip(): (v or "").strip() for k, v in row.items()}


def read_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    if not path.exists():
        raise FormatError("file not found", str(path))
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", str(path), lineno) from None
            if not isinstance(obj, dict):
                raise FormatError("expected a JSON object", str(path), lineno)
            yield lineno, obj


def _require(row: Mapping[str, object], key: str, path: Path, line: int) -> str:
    value = row.get(key)
    if value is None or str(value).strip() == "":
        raise FormatError(f"missing value for {key!r}", str(path), line)
    return str(value).strip()


def _number(raw: str, key: str, path: Path, line: int) -> float:
    try:
        return float(raw)
    except ValueError:
        raise FormatError(f"{key!r} is not a number: {raw!r}", str(path), line) from None


def normalize_stem(path_or_id: str) -> str:
    """File stem lowercased with non-alphanumerics removed, for cross-dataset dedup."""
    stem = Path(path_or_id.strip()).stem
    return re.sub(r"[^a-z0-9]", "", stem.lower())


def _label(raw: str) -> str:
    return " ".join(raw.strip().lower().split())


# ---------------------------------------------------------------- shared pieces


def _row_in_split(row: Mapping[str, object], split: Split, path: Path, line: int) -> bool:
    raw = row.get("split")
    if raw is None or str(raw).strip() == "":
        return True
    try:
        return Split.parse(str(raw)) is split
    except ValueError:
        raise FormatError(f"unknown split {raw!r}", str(path), line) from None


def _add_image(cat: DatasetCatalog, ref: ImageRef, path: Path, line: int) -> None:
    if ref.image_id in cat.images:
        raise DuplicateRecordError(f"{path}:{line}: duplicate image {(cat.dataset_id, ref.image_id)}")
    cat.images[ref.image_id] = ref


def load_images(cat: DatasetCatalog, inp: AdapterInput) -> None:
    path = inp.path("images")
    for line, row in read_csv(path):
        if not _row_in_split(row, cat.split, path, line):
            cat.note_drop("other split")
            continue
        image_id = _require(row, "image_id", path, line)
        width = int(_number(row["width"], "width", path, line)) if row.get("width") else 0
        height = int(_number(row["height"], "height", path, line)) if row.get("height") else 0
        ref = ImageRef(
            dataset_id=cat.dataset_id,
            image_id=image_id,
            path=row.get("path") or image_id,
            width=width,
            height=height,
            view=View.parse(row.get("view")),
            study_id=row.get("study_id") or None,
            patient_id=row.get("patient_id") or None,
        )
        _add_image(cat, ref, path, line)


def _implicit_image(cat: DatasetCatalog, image_id: str, image_path: str | None, path: Path, line: int) -> None:
    if image_id not in cat.images:
        _add_image(cat, ImageRef(cat.dataset_id, image_id, image_path or image_id), path, line)


def _clamp_to_image(cat: DatasetCatalog, box: BBox, ref: ImageRef, path: Path, line: int) -> BBox | None:
    if ref.width <= 0 or ref.height <= 0:
        raise FormatError(f"image {ref.image_id!r} has no dimensions but carries a box", str(path), line)
    x1, y1 = min(box.x1, ref.width), min(box.y1, ref.height)
    x2, y2 = min(box.x2, ref.width), min(box.y2, ref.height)
    if (x1, y1, x2, y2) != box.as_tuple():
        msg = f"{path}:{line}: box {box.as_tuple()} clamped to image {ref.width}x{ref.height}"
        cat.warnings.append(msg)
        log.warning(msg)
        if x1 >= ref.width or y1 >= ref.height:
            cat.note_drop("box outside image")
            return None
    return BBox(x1, y1, x2, y2)


def _row_box(row: Mapping[str, str], inp: AdapterInput, path: Path, line: int) -> BBox | None:
    if all(row.get(k) for k in ("x1", "y1", "x2", "y2")):
        x1, y1, x2, y2 = (_number(row[k], k, path, line) for k in ("x1", "y1", "x2", "y2"))
    elif all(row.get(k) for k in ("x", "y", "w", "h")):
        x, y, w, h = (_number(row[k], k, path, line) for k in ("x", "y", "w", "h"))
        x1, y1, x2, y2 = x, y, x + w, y + h
    elif any(row.get(k) for k in ("x1", "y1", "x2", "y2", "x", "y", "w", "h")):
        raise FormatError("incomplete box coordinates", str(path), line)
    else:
        return None
    try:
        if inp.inclusive_boxes:
            return BBox.from_inclusive(max(x1, 0), max(y1, 0), x2, y2)
        return BBox(max(x1, 0), max(y1, 0), x2, y2)
    except InputError as exc:
        raise FormatError(str(exc), str(path), line) from None


def _known_image(cat: DatasetCatalog, image_id: str) -> ImageRef | None:
    ref = cat.images.get(image_id)
    if ref is None:
        cat.note_drop("unknown or other-split image")
    return ref


def read_label_table(cat: DatasetCatalog, inp: AdapterInput) -> tuple[dict[str, list[str]], list[str]]:
    """Positives per image and the label column order (empty for pipe format)."""
    path = inp.path("labels")
    positives: dict[str, list[str]] = OrderedDict()
    columns: list[str] = []
    for line, row in read_csv(path):
        if not _row_in_split(row, cat.split, path, line):
            continue
        image_id = _require(row, "image_id", path, line)
        if "labels" in row:
            found = [_label(x) for x in row["labels"].split("|") if x.strip()]
        else:
            if not columns:
                columns = [_label(k) for k in row if k not in _META_COLUMNS]
            found = []
            for k, v in row.items():
                if k in _META_COLUMNS or not v:
                    continue
                if _number(v, k, path, line) == 1:
                    found.append(_label(k))
        positives.setdefault(image_id, [])
        positives[image_id].extend(f for f in found if f not in positives[image_id])
    return positives, columns


def read_boxes(cat: DatasetCatalog, inp: AdapterInput, name: str = "boxes", label_key: str = "label"):
    """Yield (image ref, label, box or None) rows from a box table."""
    path = inp.path(name)
    for line, row in read_csv(path):
        if not _row_in_split(row, cat.split, path, line):
            continue
        image_id = _require(row, "image_id", path, line)
        label = _require(row, label_key, path, line)
        ref = _known_image(cat, image_id)
        if ref is None:
            continue
        box = _row_box(row, inp, path, line)
        if box is not None:
            box = _clamp_to_image(cat, box, ref, path, line)
            if box is None:
                continue
        yield ref, label, box


def read_masks(cat: DatasetCatalog, inp: AdapterInput):
    """Yield (image ref, label, kind, boxes) with one box per mask component."""
    path = inp.path("masks")
    for line, row in read_csv(path):
        if not _row_in_split(row, cat.split, path, line):
            continue
        image_id = _require(row, "image_id", path, line)
        label = _label(_require(row, "label", path, line))
        kind = (row.get("kind") or "finding").lower()
        if kind not in ("finding", "organ"):
            raise FormatError(f"unknown mask kind {kind!r}", str(path), line)
        ref = _known_image(cat, image_id)
        if ref is None:
            continue
        if ref.width <= 0 or ref.height <= 0:
            raise FormatError(f"image {image_id!r} has no dimensions for its mask", str(path), line)
        try:
            mask = RleMask.parse(ref.width, ref.height, row.get("rle", ""))
        except FormatError as exc:
            raise FormatError(exc.reason, str(path), line) from None
        yield ref, label, kind, mask_to_bboxes(mask)


def _vocabulary(inp: AdapterInput, seen: list[str]) -> FindingVocabulary | None:
    if inp.vocabulary is not None:
        return inp.vocabulary
    if not seen:
        return None
    return FindingVocabulary.of(seen)


def _class_annotations(
    cat: DatasetCatalog, positives: Mapping[str, list[str]], vocab: FindingVocabulary | None
) -> None:
    if vocab is None:
        return
    for image_id, found in positives.items():
        if image_id not in cat.images:
            cat.note_drop("unknown or other-split image")
            continue
        kept = [f for f in found if f in vocab]
        if len(kept) != len(found):
            cat.note_drop("label outside vocabulary", len(found) - len(kept))
        named = [vocab.canonical(f) for f in kept if vocab.canonical(f) != vocab.no_finding]
        cat.annotations.append(
            Annotation(cat.dataset_id, (image_id,), AnnotationKind.CLASS_LABELS, ClassLabels(tuple(vocab.ordered(named))))
        )


def _box_annotations(cat: DatasetCatalog, kind: AnnotationKind, boxes: Mapping[tuple[str, str], list[BBox]]) -> None:
    for (image_id, label), items in boxes.items():
        for box in items:
            if box.area == 0:
                msg = f"{cat.dataset_id}/{image_id}: degenerate {label} box {box.as_tuple()} kept"
                cat.warnings.append(msg)
                log.warning(msg)
            cat.annotations.append(Annotation(cat.dataset_id, (image_id,), kind, LabeledBox(label, box)))


def _sorted_labels(*groups) -> list[str]:
    out: set[str] = set()
    for g in groups:
        out.update(g)
    return sorted(out)


# ---------------------------------------------------------------- dataset adapters


def _mimic_order_keys(studies: list[dict]) -> None:
    by_patient: dict[str, list[dict]] = defaultdict(list)
    for s in studies:
        by_patient[s["patient_id"]].append(s)
    for group in by_patient.values():
        if all(s["when"] is not None for s in group):
            for seq, s in enumerate(group):
                s["order_key"] = f"{s['when'].isoformat()}#{seq:06d}"
        else:
            for seq, s in enumerate(group):
                s["order_key"] = f"{seq:08d}"


def _parse_when(raw: str, path: Path, line: int) -> datetime | None:
    if not raw:
        return None
    for fmt in ("%Y%m%d %H%M%S", "%Y%m%d"):
        try:
            return datetime.strptime(raw, fmt)
        except ValueError:
            pass
    try:
        return datetime.fromisoformat(raw)
    except ValueError:
        raise FormatError(f"unparseable study_datetime {raw!r}", str(path), line) from None


def adapt_mimic_cxr(inp: AdapterInput) -> DatasetCatalog:
    cat = DatasetCatalog(inp.dataset_id, inp.split, inp.vocabulary)
    load_images(cat, inp)
    by_study: dict[str, list[ImageRef]] = defaultdict(list)
    for ref in cat.images.values():
        if ref.study_id is None:
            raise FormatError(f"image {ref.image_id!r} lacks study_id", str(inp.path("images")))
        by_study[ref.study_id].append(ref)

    path = inp.path("studies")
    rows: list[dict] = []
    seen: set[str] = set()
    for line, row in read_csv(path):
        if not _row_in_split(row, cat.split, path, line):
            continue
        study_id = _require(row, "study_id", path, line)
        if study_id in seen:
            raise DuplicateRecordError(f"{path}:{line}: duplicate study {study_id!r}")
        seen.add(study_id)
        rows.append(
            {
                "study_id": study_id,
                "patient_id": _require(row, "patient_id", path, line),
                "when": _parse_when(row.get("study_datetime", ""), path, line),
                "report": row.get("report", ""),
            }
        )

    admitted = []
    for r in rows:
        raw_findings = extract_findings_section(r["report"], inp.section_headers)
        findings = clean_report_text(raw_findings) if raw_findings is not None else None
        if not admit_report(findings):
            cat.note_drop("report not admitted")
            continue
        if not by_study.get(r["study_id"]):
            cat.note_drop("study without images")
            continue
        r["findings"] = findings
        admitted.append(r)
    _mimic_order_keys(admitted)

    keep_images: set[str] = set()
    for r in admitted:
        images = tuple(by_study[r["study_id"]])
        keep_images.update(i.image_id for i in images)
        cat.studies.append(
            StudyRecord(
                study_id=r["study_id"],
                patient_id=r["patient_id"],
                images=images,
                order_key=r["order_key"],
                report=clean_report_text(r["report"]),
                findings_section=r["findings"],
            )
        )
    dropped = [k for k in cat.images if k not in keep_images]
    for k in dropped:
        del cat.images[k]
    if dropped:
        cat.note_drop("image of non-admitted study", len(dropped))
    return cat


def adapt_classification(inp: AdapterInput) -> DatasetCatalog:
    """BRAX, CheXpert: label table only."""
    cat = DatasetCatalog(inp.dataset_id, inp.split)
    load_images(cat, inp)
    positives, columns = read_label_table(cat, inp)
    vocab = _vocabulary(inp, columns or _sorted_labels(*positives.values()))
    cat.finding_vocabulary = vocab
    _class_annotations(cat, positives, vocab)
    return cat


def _finding_boxes_dataset(
    inp: AdapterInput,
    *,
    merge: bool = False,
    rename: Mapping[str, str] | None = None,
) -> tuple[DatasetCatalog, dict[str, list[str]], dict[tuple[str, str], list[BBox]], dict]:
    cat = DatasetCatalog(inp.dataset_id, inp.split)
    load_images(cat, inp)
    positives: dict[str, list[str]] = OrderedDict((i, []) for i in cat.images)
    boxes: dict[tuple[str, str], list[BBox]] = OrderedDict()
    organs: dict[tuple[str, str], list[BBox]] = OrderedDict()

    def add(image_id: str, label: str, box: BBox | None, target=boxes) -> None:
        label = _label(label)
        if rename:
            label = rename.get(label, label)
        if target is boxes and label not in positives[image_id]:
            positives[image_id].append(label)
        if box is not None:
            target.setdefault((image_id, label), []).append(box)

    if inp.path("boxes", required=False):
        for ref, label, box in read_boxes(cat, inp):
            add(ref.image_id, label, box)
    if inp.path("circles", required=False):
        path = inp.path("circles")
        for line, row in read_csv(path):
            if not _row_in_split(row, cat.split, path, line):
                continue
            ref = _known_image(cat, _require(row, "image_id", path, line))
            if ref is None:
                continue
            cx, cy, r = (_number(_require(row, k, path, line), k, path, line) for k in ("cx", "cy", "r"))
            try:
                box = circle_to_bbox(cx, cy, r)
            except InputError as exc:
                raise FormatError(str(exc), str(path), line) from None
            box = _clamp_to_image(cat, box, ref, path, line)
            if box is not None:
                add(ref.image_id, _require(row, "label", path, line), box)
    if inp.path("masks", required=False):
        for ref, label, kind, comps in read_masks(cat, inp):
            for box in comps:
                add(ref.image_id, label, box, organs if kind == "organ" else boxes)
    if inp.path("labels", required=False):
        extra, _ = read_label_table(cat, inp)
        for image_id, found in extra.items():
            if image_id not in positives:
                cat.note_drop("unknown or other-split image")
                continue
            for f in found:
                f = rename.get(f, f) if rename else f
                if f not in positives[image_id]:
                    positives[image_id].append(f)

    if merge:
        boxes = OrderedDict((k, merge_overlapping(v)) for k, v in boxes.items())
    return cat, positives, boxes, organs


def _finish_box_dataset(cat, positives, boxes, organs, *, inp: AdapterInput) -> DatasetCatalog:
    vocab = _vocabulary(inp, _sorted_labels(*positives.values()))
    cat.finding_vocabulary = vocab
    _class_annotations(cat, positives, vocab)
    _box_annotations(cat, AnnotationKind.FINDING_BOX, boxes)
    _box_annotations(cat, AnnotationKind.ORGAN_BOX, organs)
    return cat


def adapt_vindr(inp: AdapterInput) -> DatasetCatalog:
    """VinDr-CXR: same-label boxes overlapping by more than half are merged."""
    return _finish_box_dataset(*_finding_boxes_dataset(inp, merge=True), inp=inp)


def adapt_box_dataset(inp: AdapterInput) -> DatasetCatalog:
    """ChestX-ray14, ChestX-Det10, SIIM, JSRT, COVID-QU-Ex: boxes, circles or masks."""
    return _finish_box_dataset(*_finding_boxes_dataset(inp), inp=inp)


def adapt_rsna(inp: AdapterInput) -> DatasetCatalog:
    """RSNA: keep only lung-opacity and normal images; lung opacity becomes pneumonia."""
    cat, positives, boxes, organs = _finding_boxes_dataset(inp, rename={"lung opacity": "pneumonia"})
    keep = {i for i, found in positives.items() if found and all(f in RSNA_KEEP.values() for f in found)}
    dropped = [i for i in cat.images if i not in keep]
    for i in dropped:
        del cat.images[i]
        del positives[i]
    if dropped:
        cat.note_drop("rsna label not kept", len(dropped))
    boxes = OrderedDict((k, v) for k, v in boxes.items() if k[0] in keep)
    if inp.vocabulary is None:
        inp = replace(inp, vocabulary=FindingVocabulary(("pneumonia", "normal"), "normal"))
    return _finish_box_dataset(cat, positives, boxes, organs, inp=inp)


def adapt_covid19_radiography(inp: AdapterInput) -> DatasetCatalog:
    """COVID-19 Radiography: images whose masks split into more than three regions are dropped."""
    cat, positives, boxes, organs = _finding_boxes_dataset(inp)
    regions: dict[str, int] = defaultdict(int)
    for (image_id, _), items in list(boxes.items()) + list(organs.items()):
        regions[image_id] += len(items)
    dropped = [i for i in cat.images if regions[i] > MAX_COVID_RADIOGRAPHY_REGIONS]
    for i in dropped:
        del cat.images[i]
        del positives[i]
    if dropped:
        cat.note_drop("more than three mask regions", len(dropped))
    gone = set(dropped)
    boxes = OrderedDict((k, v) for k, v in boxes.items() if k[0] not in gone)
    organs = OrderedDict((k, v) for k, v in organs.items() if k[0] not in gone)
    return _finish_box_dataset(cat, positives, boxes, organs, inp=inp)


def adapt_qata(inp: AdapterInput) -> DatasetCatalog:
    """QaTa-COV19: images also present in COVID-QU-Ex are removed."""
    stems = set(inp.exclude_stems)
    other = inp.path("qu_ex_images", required=False)
    if other is not None:
        for line, row in read_csv(other):
            stems.add(normalize_stem(row.get("path") or _require(row, "image_id", other, line)))
    cat, positives, boxes, organs = _finding_boxes_dataset(inp)
    dropped = [
        i for i, ref in cat.images.items() if normalize_stem(ref.path) in stems or normalize_stem(i) in stems
    ]
    for i in dropped:
        del cat.images[i]
        del positives[i]
    if dropped:
        cat.note_drop("overlaps covid-qu-ex", len(dropped))
    gone = set(dropped)
    boxes = OrderedDict((k, v) for k, v in boxes.items() if k[0] not in gone)
    organs = OrderedDict((k, v) for k, v in organs.items() if k[0] not in gone)
    return _finish_box_dataset(cat, positives, boxes, organs, inp=inp)


def _phrase_rows(cat: DatasetCatalog, inp: AdapterInput, name: str = "phrases") -> None:
    path = inp.path(name)
    for line, row in read_csv(path):
        if not _row_in_split(row, cat.split, path, line):
            continue
        ref = _known_image(cat, _require(row, "image_id", path, line))
        if ref is None:
            continue
        phrase = " ".join(_require(row, "phrase", path, line).split())
        box = _row_box(row, inp, path, line)
        if box is None:
            raise FormatError("phrase row without a box", str(path), line)
        box = _clamp_to_image(cat, box, ref, path, line)
        if box is not None:
            cat.annotations.append(
                Annotation(cat.dataset_id, (ref.image_id,), AnnotationKind.PHRASE_BOX, PhraseBox(phrase, box))
            )


def adapt_ms_cxr(inp: AdapterInput) -> DatasetCatalog:
    cat = DatasetCatalog(inp.dataset_id, inp.split)
    load_images(cat, inp)
    _phrase_rows(cat, inp)
    return cat


def adapt_imagenome(inp: AdapterInput) -> DatasetCatalog:
    """ImaGenome: phrase boxes plus boxes for the 29 anatomical regions."""
    cat = DatasetCatalog(inp.dataset_id, inp.split)
    load_images(cat, inp)
    if inp.path("phrases", required=False):
        _phrase_rows(cat, inp)
    if inp.path("regions", required=False):
        allowed = set(IMAGENOME_REGIONS)
        for ref, label, box in read_boxes(cat, inp, "regions", label_key="region"):
            name = _label(label)
            if name not in allowed:
                cat.note_drop("unknown anatomical region")
                continue
            if box is None:
                continue
            cat.annotations.append(
                Annotation(cat.dataset_id, (ref.image_id,), AnnotationKind.ANATOMICAL_REGION_BOX, LabeledBox(name, box))
            )
    return cat


def _answer_text(raw: object) -> str | None:
    if raw is None:
        return None
    if isinstance(raw, list):
        parts = [str(a).strip() for a in raw if str(a).strip()]
        return ", ".join(parts) if parts else None
    text = str(raw).strip()
    return text or None


def _qa_images(cat: DatasetCatalog, inp: AdapterInput) -> bool:
    if inp.path("images", required=False):
        load_images(cat, inp)
        return True
    return False


def _qa_image(cat: DatasetCatalog, explicit: bool, row: dict, key: str, path: Path, line: int) -> str | None:
    image_id = _require(row, key, path, line)
    if explicit:
        return image_id if _known_image(cat, image_id) else None
    _implicit_image(cat, image_id, row.get(f"{key[:-3]}_path") or row.get("image_path"), path, line)
    return image_id


def adapt_vqa(inp: AdapterInput) -> DatasetCatalog:
    """MIMIC-CXR-VQA: ``{"image_id", "question", "answer"}`` lines."""
    cat = DatasetCatalog(inp.dataset_id, inp.split)
    explicit = _qa_images(cat, inp)
    path = inp.path("qa")
    for line, row in read_jsonl(path):
        if not _row_in_split(row, cat.split, path, line):
            continue
        answer = _answer_text(row.get("answer"))
        if answer is None:
            cat.note_drop("question without answer")
            continue
        image_id = _qa_image(cat, explicit, row, "image_id", path, line)
        if image_id is None:
            continue
        q = _require(row, "question", path, line)
        cat.annotations.append(Annotation(cat.dataset_id, (image_id,), AnnotationKind.QA_PAIR, QAPair(q, answer)))
    return cat


def adapt_diff_vqa(inp: AdapterInput) -> DatasetCatalog:
    """MIMIC-Diff-VQA: difference questions pair a reference and a main image.

    Lines carry ``reference_image_id, main_image_id, question, answer,
    question_type``; non-difference questions become plain VQA on the main image.
    """
    cat = DatasetCatalog(inp.dataset_id, inp.split)
    explicit = _qa_images(cat, inp)
    path = inp.path("qa")
    for line, row in read_jsonl(path):
        if not _row_in_split(row, cat.split, path, line):
            continue
        answer = _answer_text(row.get("answer"))
        if answer is None:
            cat.note_drop("question without answer")
            continue
        q = _require(row, "question", path, line)
        main = _qa_image(cat, explicit, row, "main_image_id", path, line)
        if main is None:
            continue
        if str(row.get("question_type", "")).strip().lower() == "difference":
            ref = _qa_image(cat, explicit, row, "reference_image_id", path, line)
            if ref is None:
                continue
            cat.annotations.append(
                Annotation(cat.dataset_id, (ref, main), AnnotationKind.DIFF_QA_PAIR, QAPair(q, answer))
            )
        else:
            cat.annotations.append(Annotation(cat.dataset_id, (main,), AnnotationKind.QA_PAIR, QAPair(q, answer)))
    return cat


def adapt_radialog(inp: AdapterInput) -> DatasetCatalog:
    """RaDialog instruct data minus report generation, MIMIC-CXR images only.

    Lines carry ``image_id, task, instruction, answer`` and optionally
    ``image_dataset`` (default ``mimic-cxr``).
    """
    cat = DatasetCatalog(inp.dataset_id, inp.split)
    explicit = _qa_images(cat, inp)
    path = inp.path("instructions")
    for line, row in read_jsonl(path):
        if not _row_in_split(row, cat.split, path, line):
            continue
        task = str(row.get("task", "")).strip().lower()
        if task in RADIALOG_EXCLUDED_TASKS:
            cat.note_drop("report generation instruction")
            continue
        source = str(row.get("image_dataset", "mimic-cxr")).strip().lower()
        if source not in ("mimic-cxr", "mimic_cxr", "mimiccxr"):
            cat.note_drop("non mimic-cxr image")
            continue
        answer = _answer_text(row.get("answer"))
        if answer is None:
            cat.note_drop("instruction without answer")
            continue
        image_id = _qa_image(cat, explicit, row, "image_id", path, line)
        if image_id is None:
            continue
        q = _require(row, "instruction", path, line)
        cat.annotations.append(
            Annotation(cat.dataset_id, (image_id,), AnnotationKind.INSTRUCTION_PAIR, QAPair(q, answer))
        )
    return cat


ADAPTERS: dict[str, Callable[[AdapterInput], DatasetCatalog]] = {
    "mimic-cxr": adapt_mimic_cxr,
    "brax": adapt_classification,
    "chexpert": adapt_classification,
    "vindr-cxr": adapt_vindr,
    "chestx-ray14": adapt_box_dataset,
    "chestx-det10": adapt_box_dataset,
    "siim": adapt_box_dataset,
    "rsna": adapt_rsna,
    "covid19-radiography": adapt_covid19_radiography,
    "jsrt": adapt_box_dataset,
    "covid-qu-ex": adapt_box_dataset,
    "qata-cov19": adapt_qata,
    "ms-cxr": adapt_ms_cxr,
    "imagenome": adapt_imagenome,
    "mimic-cxr-vqa": adapt_vqa,
    "mimic-diff-vqa": adapt_diff_vqa,
    "radialog": adapt_radialog,
}


def _is_empty_source(paths: Mapping[str, Path]) -> bool:
    return all(Path(p).exists() and Path(p).stat().st_size == 0 for p in paths.values())


def load_dataset(
    dataset_id: str,
    paths: Mapping[str, str | Path],
    *,
    split: Split | str = Split.TRAIN,
    vocabulary: FindingVocabulary | None = None,
    options: Mapping[str, object] | None = None,
    exclude_stems: frozenset[str] = frozenset(),
    section_headers: tuple[str, ...] = DEFAULT_SECTION_HEADERS,
) -> DatasetCatalog:
    """Parse one dataset's sources and apply its preprocessing rules."""
    if dataset_id not in ADAPTERS:
        raise UnknownDatasetError(dataset_id)
    split = Split.parse(split) if isinstance(split, str) else split
    resolved = {k: Path(v) for k, v in paths.items()}
    if resolved and _is_empty_source(resolved):
        cat = DatasetCatalog(dataset_id, split, vocabulary)
        msg = f"{dataset_id}: all source files are empty"
        cat.warnings.append(msg)
        log.warning(msg)
        return cat
    inp = AdapterInput(
        dataset_id=dataset_id,
        paths=resolved,
        split=split,
        vocabulary=vocabulary,
        options=dict(options or {}),
        exclude_stems=exclude_stems,
        section_headers=tuple(section_headers),
    )
    return ADAPTERS[dataset_id](inp)
