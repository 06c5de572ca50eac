"""Catalog record types shared by the dataset adapters."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Union

from ..geometry import BBox
from ..vocab import FindingVocabulary


class View(str, Enum):
    PA = "PA"
    AP = "AP"
    LATERAL = "lateral"
    OTHER = "other"
    UNKNOWN = "unknown"

    @classmethod
    def parse(cls, raw: str | None) -> "View":
        if raw is None:
            return cls.UNKNOWN
        v = raw.strip().upper()
        if not v:
            return cls.UNKNOWN
        if v in ("PA", "POSTEROANTERIOR"):
            return cls.PA
        if v in ("AP", "ANTEROPOSTERIOR"):
            return cls.AP
        if v in ("LATERAL", "LL", "LAT", "RL"):
            return cls.LATERAL
        if v in ("UNKNOWN", "NONE", "NAN"):
            return cls.UNKNOWN
        return cls.OTHER


class Split(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"

    @classmethod
    def parse(cls, raw: str) -> "Split":
        v = raw.strip().lower()
        aliases = {"val": "validation", "valid": "validation", "dev": "validation"}
        return cls(aliases.get(v, v))


class AnnotationKind(str, Enum):
    CLASS_LABELS = "class_labels"
    FINDING_BOX = "finding_box"
    PHRASE_BOX = "phrase_box"
    ORGAN_BOX = "organ_box"
    ANATOMICAL_REGION_BOX = "anatomical_region_box"
    QA_PAIR = "qa_pair"
    DIFF_QA_PAIR = "diff_qa_pair"
    INSTRUCTION_PAIR = "instruction_pair"


@dataclass(frozen=True)
class ImageRef:
    dataset_id: str
    image_id: str
    path: str
    width: int = 0
    height: int = 0
    view: View = View.UNKNOWN
    study_id: str | None = None
    patient_id: str | None = None

    @property
    def key(self) -> tuple[str, str]:
        return (self.dataset_id, self.image_id)

    def to_json(self) -> dict:
        return {
            "dataset": self.dataset_id,
            "image_id": self.image_id,
            "path": self.path,
            "width": self.width,
            "height": self.height,
            "view": self.view.value,
            "study_id": self.study_id,
            "patient_id": self.patient_id,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ImageRef":
        return cls(
            dataset_id=d["dataset"],
            image_id=d["image_id"],
            path=d.get("path", ""),
            width=int(d.get("width") or 0),
            height=int(d.get("height") or 0),
            view=View(d.get("view", "unknown")),
            study_id=d.get("study_id"),
            patient_id=d.get("patient_id"),
        )


@dataclass(frozen=True)
class StudyRecord:
    study_id: str
    patient_id: str
    images: tuple[ImageRef, ...]
    order_key: str
    report: str | None = None
    findings_section: str | None = None


@dataclass(frozen=True)
class ClassLabels:
    positives: tuple[str, ...]


@dataclass(frozen=True)
class LabeledBox:
    """Payload for finding, organ and anatomical-region boxes."""

    label: str
    box: BBox


@dataclass(frozen=True)
class PhraseBox:
    phrase: str
    box: BBox


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str


Payload = Union[ClassLabels, LabeledBox, PhraseBox, QAPair]

_PAYLOAD_FOR_KIND = {
    AnnotationKind.CLASS_LABELS: ClassLabels,
    AnnotationKind.FINDING_BOX: LabeledBox,
    AnnotationKind.ORGAN_BOX: LabeledBox,
    AnnotationKind.ANATOMICAL_REGION_BOX: LabeledBox,
    AnnotationKind.PHRASE_BOX: PhraseBox,
    AnnotationKind.QA_PAIR: QAPair,
    AnnotationKind.DIFF_QA_PAIR: QAPair,
    AnnotationKind.INSTRUCTION_PAIR: QAPair,
}


@dataclass(frozen=True)
class Annotation:
    """One labeled fact about an image (or, for difference VQA, an image pair).

    ``image_ids`` has two entries (reference, main) for ``diff_qa_pair`` and
    one entry otherwise.
    """

    dataset_id: str
    image_ids: tuple[str, ...]
    kind: AnnotationKind
    payload: Payload

    def __post_init__(self) -> None:
        expected = _PAYLOAD_FOR_KIND[self.kind]
        if not isinstance(self.payload, expected):
            raise TypeError(f"{self.kind.value} needs a {expected.__name__} payload")
        want = 2 if self.kind is AnnotationKind.DIFF_QA_PAIR else 1
        if len(self.image_ids) != want:
            raise ValueError(f"{self.kind.value} references {want} image(s), got {len(self.image_ids)}")

    @property
    def image_id(self) -> str:
        return self.image_ids[-1]


@dataclass
class DatasetCatalog:
    dataset_id: str
    split: Split
    finding_vocabulary: FindingVocabulary | None = None
    images: dict[str, ImageRef] = field(default_factory=dict)
    studies: list[StudyRecord] = field(default_factory=list)
    annotations: list[Annotation] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    dropped: dict[str, int] = field(default_factory=dict)

    def note_drop(self, reason: str, n: int = 1) -> None:
        self.dropped[reason] = self.dropped.get(reason, 0) + n

    def __len__(self) -> int:
        return len(self.images) + len(self.studies) + len(self.annotations)

    def annotations_of(self, kind: AnnotationKind) -> list[Annotation]:
        return [a for a in self.annotations if a.kind is kind]
