"""Template rendering of catalog records into instruction-following conversations."""

from __future__ import annotations

import hashlib
import re
from collections import OrderedDict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import yaml

from . import tasks as T
from .errors import ConversationError
from .geometry import NormalizedBBox, normalize, render_bbox
from .ingest.records import (
    Annotation,
    AnnotationKind,
    DatasetCatalog,
    ImageRef,
    PhraseBox,
    QAPair,
)
from .ingest.scenarios import Scenario, ScenarioInstance
from .labeler import ObservationLabels, binarize
from .vocab import FindingVocabulary

IMAGE_MARKER = "<image>"
ROLES = ("system", "user", "assistant")
_PLACEHOLDER = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True)
class Turn:
    role: str
    content: str


@dataclass(frozen=True)
class ConversationSample:
    sample_id: str
    task_id: str
    dataset_id: str
    images: tuple[ImageRef, ...]
    turns: tuple[Turn, ...]
    target_flags: tuple[bool, ...]
    template_id: str
    meta: Mapping[str, object] = field(default_factory=dict, compare=False, hash=False)

    @property
    def slot_count(self) -> int:
        return sum(t.content.count(IMAGE_MARKER) for t in self.turns)

    def assistant_turns(self) -> list[Turn]:
        return [t for t in self.turns if t.role == "assistant"]


def check_sample(sample: ConversationSample) -> list[str]:
    """Structural invariant violations, empty when the sample is well formed."""
    problems = []
    if sample.slot_count != len(sample.images):
        problems.append(f"{sample.slot_count} image slots for {len(sample.images)} images")
    prev = None
    for i, t in enumerate(sample.turns):
        if t.role not in ROLES:
            problems.append(f"turn {i} has unknown role {t.role!r}")
        if t.role == "system" and i != 0:
            problems.append(f"system turn at position {i}")
        if t.role == "assistant" and prev != "user":
            problems.append(f"assistant turn {i} does not follow a user turn")
        prev = t.role
    n_assistant = len(sample.assistant_turns())
    if len(sample.target_flags) != n_assistant:
        problems.append(f"{len(sample.target_flags)} target flags for {n_assistant} assistant turns")
    if not any(sample.target_flags):
        problems.append("no target turn")
    return problems


# ---------------------------------------------------------------- templates


@dataclass(frozen=True)
class Template:
    template_id: str
    turns: tuple[tuple[str, str], ...]

    @property
    def placeholders(self) -> list[str]:
        names: list[str] = []
        for _, text in self.turns:
            for n in _PLACEHOLDER.findall(text):
                if n not in names:
                    names.append(n)
        return names

    def render(self, values: Mapping[str, str]) -> list[Turn]:
        missing = [n for n in self.placeholders if values.get(n) is None]
        if missing:
            raise ConversationError(f"{self.template_id}: missing placeholder values {missing}")
        for name, v in values.items():
            if not name.endswith("images") and IMAGE_MARKER in str(v):
                raise ConversationError(f"{self.template_id}: value for {name!r} contains an image marker")
        return [Turn(role, _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), text)) for role, text in self.turns]

    def _pattern(self, text: str) -> re.Pattern[str]:
        parts = []
        pos = 0
        seen: set[str] = set()
        for m in _PLACEHOLDER.finditer(text):
            parts.append(re.escape(text[pos : m.start()]))
            name = m.group(1)
            parts.append(f"(?P={name})" if name in seen else f"(?P<{name}>.*?)")
            seen.add(name)
            pos = m.end()
        parts.append(re.escape(text[pos:]))
        return re.compile("^" + "".join(parts) + "$", re.DOTALL)

    def extract(self, turns: Sequence[Turn]) -> dict[str, str]:
        """Recover placeholder values from rendered turns (system turn excluded)."""
        if len(turns) != len(self.turns):
            raise ConversationError(f"{self.template_id}: expected {len(self.turns)} turns, got {len(turns)}")
        values: dict[str, str] = {}
        for (role, text), turn in zip(self.turns, turns):
            if role != turn.role:
                raise ConversationError(f"{self.template_id}: role {turn.role!r} where {role!r} expected")
            m = self._pattern(text).match(turn.content)
            if m is None:
                raise ConversationError(f"{self.template_id}: turn does not match template: {turn.content[:80]!r}")
            for k, v in m.groupdict().items():
                if k in values and values[k] != v:
                    raise ConversationError(f"{self.template_id}: inconsistent values for {k!r}")
                values[k] = v
        return values


@dataclass(frozen=True)
class TemplateSet:
    version: int
    system_prompt: str
    empty_answer: str
    templates: Mapping[str, Template]
    digest: str

    @classmethod
    def from_yaml(cls, raw: bytes, system_prompt: str | None = None) -> "TemplateSet":
        doc = yaml.safe_load(raw)
        if doc.get("image_marker", IMAGE_MARKER) != IMAGE_MARKER:
            raise ConversationError(f"unsupported image marker {doc['image_marker']!r}")
        templates = {}
        for task_id, turns in doc["tasks"].items():
            if task_id not in T.TASK_TYPES:
                raise ConversationError(f"template for unknown task {task_id!r}")
            parsed = tuple((str(role), str(text)) for role, text in turns)
            if any(role not in ("user", "assistant") for role, _ in parsed):
                raise ConversationError(f"{task_id}: template turns must be user/assistant")
            templates[task_id] = Template(task_id, parsed)
        missing = set(T.ALL_TASKS) - set(templates)
        if missing:
            raise ConversationError(f"templates missing for tasks {sorted(missing)}")
        prompt = system_prompt if system_prompt is not None else " ".join(str(doc["system_prompt"]).split())
        digest = hashlib.sha256(raw + b"\0" + prompt.encode()).hexdigest()
        return cls(int(doc["version"]), prompt, str(doc.get("empty_answer", "none")), templates, digest)

    @classmethod
    def load(cls, path: str | Path | None = None, system_prompt: str | None = None) -> "TemplateSet":
        if path is None:
            raw = resources.files("cxrforge").joinpath("data/templates_v1.yaml").read_bytes()
        else:
            raw = Path(path).read_bytes()
        return cls.from_yaml(raw, system_prompt)

    def __getitem__(self, task_id: str) -> Template:
        try:
            return self.templates[task_id]
        except KeyError:
            raise ConversationError(f"no template for task {task_id!r}") from None

    def empty_value(self, vocab: FindingVocabulary | None) -> str:
        if vocab is not None and vocab.no_finding is not None:
            return vocab.no_finding
        return self.empty_answer


_DEFAULT_TEMPLATES: TemplateSet | None = None


def default_templates() -> TemplateSet:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = TemplateSet.load()
    return _DEFAULT_TEMPLATES


def _assemble(
    templates: TemplateSet,
    template_id: str,
    values: Mapping[str, str],
    *,
    sample_id: str,
    task_id: str,
    dataset_id: str,
    images: Sequence[ImageRef],
    meta: Mapping[str, object] | None = None,
) -> ConversationSample:
    body = templates[template_id].render(values)
    turns = (Turn("system", templates.system_prompt), *body)
    flags = tuple(True for t in body if t.role == "assistant")
    sample = ConversationSample(
        sample_id=sample_id,
        task_id=task_id,
        dataset_id=dataset_id,
        images=tuple(images),
        turns=turns,
        target_flags=flags,
        template_id=template_id,
        meta=dict(meta or {}),
    )
    problems = check_sample(sample)
    if problems:
        raise ConversationError(f"{sample_id}: {'; '.join(problems)}")
    return sample


def markers(n: int) -> str:
    return " ".join([IMAGE_MARKER] * n)


def finding_list(names: Iterable[str]) -> str:
    return ", ".join(names)


# ---------------------------------------------------------------- report generation


def build_cot_mrg(
    instance: ScenarioInstance,
    labels: ObservationLabels,
    vocab: FindingVocabulary,
    *,
    dataset_id: str = "mimic-cxr",
    templates: TemplateSet | None = None,
) -> ConversationSample:
    """Two-turn report generation: name the present findings, then write the report."""
    templates = templates or default_templates()
    if tuple(labels.vocabulary.names) != tuple(vocab.names):
        raise ConversationError("label vocabulary differs from prompt vocabulary")
    report = instance.study.findings_section
    if not report:
        raise ConversationError(f"study {instance.study.study_id} has no findings section")
    positives = vocab.ordered(binarize(labels))
    values = {
        "findings": finding_list(vocab.names),
        "answer": finding_list(positives) if positives else templates.empty_value(vocab),
        "report": report,
    }
    task_id = {
        Scenario.SINGLE_IMAGE: T.MRG_SINGLE_IMAGE,
        Scenario.MULTI_IMAGE: T.MRG_MULTI_IMAGE,
        Scenario.MULTI_STUDY: T.MRG_MULTI_STUDY,
    }[instance.scenario]
    template_id = task_id
    if instance.scenario is Scenario.MULTI_IMAGE:
        values["images"] = markers(len(instance.images))
    elif instance.scenario is Scenario.MULTI_STUDY:
        if instance.prior is None:
            template_id = T.MRG_MULTI_IMAGE
            values["images"] = markers(len(instance.images))
        else:
            if not instance.prior.findings_section:
                raise ConversationError(f"prior study {instance.prior.study_id} has no report")
            values["prior_images"] = markers(len(instance.prior.images))
            values["prior_report"] = instance.prior.findings_section
            values["followup_images"] = markers(len(instance.images))
    return _assemble(
        templates,
        template_id,
        values,
        sample_id=f"{task_id}:{dataset_id}:{instance.instance_id}",
        task_id=task_id,
        dataset_id=dataset_id,
        images=instance.all_images,
        meta={"study_id": instance.study.study_id, "prior_study_id": instance.prior.study_id if instance.prior else None},
    )


# ---------------------------------------------------------------- image understanding and VQA


@dataclass(frozen=True)
class TaskRecord:
    """The annotations that make up one sample of a non-report task."""

    key: str
    images: tuple[ImageRef, ...]
    annotations: tuple[Annotation, ...]


_KIND_FOR_TASK = {
    T.DISEASE_CLASSIFICATION: AnnotationKind.CLASS_LABELS,
    T.FINDING_GROUNDING: AnnotationKind.FINDING_BOX,
    T.GROUNDED_FINDING: AnnotationKind.FINDING_BOX,
    T.ABNORMALITY_DETECTION: AnnotationKind.FINDING_BOX,
    T.MULTI_FINDING_GROUNDING: AnnotationKind.FINDING_BOX,
    T.ORGAN_GROUNDING: AnnotationKind.ORGAN_BOX,
    T.GROUNDED_ORGAN: AnnotationKind.ORGAN_BOX,
    T.GROUNDED_PHRASE_GENERATION: AnnotationKind.PHRASE_BOX,
    T.PHRASE_GROUNDING: AnnotationKind.PHRASE_BOX,
    T.ANATOMICAL_REGION_GROUNDING: AnnotationKind.ANATOMICAL_REGION_BOX,
    T.GROUNDED_ANATOMICAL_REGION: AnnotationKind.ANATOMICAL_REGION_BOX,
    T.VQA: AnnotationKind.QA_PAIR,
    T.DIFFERENCE_VQA: AnnotationKind.DIFF_QA_PAIR,
    T.VISUAL_INSTRUCTION_FOLLOWING: AnnotationKind.INSTRUCTION_PAIR,
}

# tasks whose sample gathers every box sharing (image, label) or (image,)
_GROUP_BY_LABEL = {T.FINDING_GROUNDING, T.ORGAN_GROUNDING, T.ANATOMICAL_REGION_GROUNDING}
_GROUP_BY_IMAGE = {T.ABNORMALITY_DETECTION, T.MULTI_FINDING_GROUNDING}


def required_kind(task_id: str) -> AnnotationKind:
    try:
        return _KIND_FOR_TASK[task_id]
    except KeyError:
        raise ConversationError(f"task {task_id!r} is not rendered from annotations") from None


def task_records(catalog: DatasetCatalog, task_id: str) -> list[TaskRecord]:
    kind = required_kind(task_id)
    groups: "OrderedDict[str, list[Annotation]]" = OrderedDict()
    counters: dict[str, int] = {}
    for a in catalog.annotations:
        if a.kind is not kind:
            continue
        image = a.image_id
        if task_id in _GROUP_BY_LABEL:
            key = f"{image}#{a.payload.label}"
        elif task_id in _GROUP_BY_IMAGE or kind is AnnotationKind.CLASS_LABELS:
            key = image
        else:
            n = counters.get(image, 0)
            counters[image] = n + 1
            key = f"{'+'.join(a.image_ids)}#{n:04d}"
        groups.setdefault(key, []).append(a)
    out = []
    for key, anns in groups.items():
        images = tuple(catalog.images[i] for i in anns[0].image_ids)
        out.append(TaskRecord(key, images, tuple(anns)))
    return out


def _norm(box, image: ImageRef) -> NormalizedBBox:
    return normalize(box, image.width, image.height)


def _boxes_text(anns: Iterable[Annotation], image: ImageRef) -> str:
    boxes = sorted({_norm(a.payload.box, image) for a in anns})
    return ", ".join(render_bbox(b) for b in boxes)


def _class_positives(catalog_labels: Sequence[Annotation]) -> list[str]:
    out: list[str] = []
    for a in catalog_labels:
        for p in a.payload.positives:
            if p not in out:
                out.append(p)
    return out


def render_task(
    record: TaskRecord,
    task_id: str,
    vocab: FindingVocabulary | None = None,
    *,
    templates: TemplateSet | None = None,
    class_labels: Sequence[str] = (),
) -> ConversationSample:
    """Render one non-report record with its task template.

    ``class_labels`` lets multi-finding grounding list findings known from
    image-level labels that have no box.
    """
    templates = templates or default_templates()
    kind = required_kind(task_id)
    anns = record.annotations
    if not anns or any(a.kind is not kind for a in anns):
        raise ConversationError(f"{task_id} needs {kind.value} annotations")
    first = anns[0]
    image = record.images[-1]
    p = first.payload
    values: dict[str, str]

    if task_id == T.DISEASE_CLASSIFICATION:
        if vocab is None:
            raise ConversationError("disease classification needs a vocabulary")
        positives = vocab.ordered(_class_positives(anns))
        values = {
            "findings": finding_list(vocab.names),
            "answer": finding_list(positives) if positives else templates.empty_value(vocab),
        }
    elif task_id in (T.FINDING_GROUNDING, T.ORGAN_GROUNDING, T.ANATOMICAL_REGION_GROUNDING):
        name_key = {T.FINDING_GROUNDING: "finding", T.ORGAN_GROUNDING: "organ"}.get(task_id, "name")
        values = {name_key: p.label, "bbox": _boxes_text(anns, image)}
    elif task_id in (T.GROUNDED_FINDING, T.GROUNDED_ORGAN, T.GROUNDED_ANATOMICAL_REGION):
        name_key = {T.GROUNDED_FINDING: "finding", T.GROUNDED_ORGAN: "organ"}.get(task_id, "name")
        values = {"bbox": render_bbox(_norm(p.box, image)), name_key: p.label}
    elif task_id == T.ABNORMALITY_DETECTION:
        values = {"bbox": _boxes_text(anns, image)}
    elif task_id == T.MULTI_FINDING_GROUNDING:
        if vocab is None:
            raise ConversationError("multi finding grounding needs a vocabulary")
        by_label: dict[str, list[Annotation]] = {}
        for a in anns:
            by_label.setdefault(vocab.canonical(a.payload.label), []).append(a)
        named = [n for n in class_labels if n in vocab and vocab.canonical(n) != vocab.no_finding]
        present = vocab.ordered(list(by_label) + named)
        parts = []
        for name in present:
            if name in by_label:
                parts.append(f"{name}: {_boxes_text(by_label[name], image)}")
            else:
                parts.append(name)
        values = {
            "findings": finding_list(vocab.names),
            "answer": "; ".join(parts) if parts else templates.empty_value(vocab),
        }
    elif task_id in (T.GROUNDED_PHRASE_GENERATION, T.PHRASE_GROUNDING):
        assert isinstance(p, PhraseBox)
        values = {"phrase": p.phrase, "bbox": render_bbox(_norm(p.box, image))}
    else:
        assert isinstance(p, QAPair)
        values = {"question": p.question, "answer": p.answer}

    return _assemble(
        templates,
        task_id,
        values,
        sample_id=f"{task_id}:{first.dataset_id}:{record.key}",
        task_id=task_id,
        dataset_id=first.dataset_id,
        images=record.images,
    )


def render_catalog_task(
    catalog: DatasetCatalog, task_id: str, templates: TemplateSet | None = None
) -> list[ConversationSample]:
    """Every sample a catalog yields for one non-report task."""
    labels_by_image: dict[str, list[str]] = {}
    if task_id == T.MULTI_FINDING_GROUNDING:
        for a in catalog.annotations_of(AnnotationKind.CLASS_LABELS):
            labels_by_image.setdefault(a.image_id, []).extend(a.payload.positives)
    out = []
    for rec in task_records(catalog, task_id):
        out.append(
            render_task(
                rec,
                task_id,
                catalog.finding_vocabulary,
                templates=templates,
                class_labels=labels_by_image.get(rec.images[-1].image_id, ()),
            )
        )
    return out


# ---------------------------------------------------------------- flat prompt serialization

_ROLE_TAG = re.compile(r"<\|(system|user|assistant)\|>\n")


@dataclass(frozen=True)
class FlatPrompt:
    text: str
    image_paths: tuple[str, ...]
    slot_offsets: tuple[int, ...]


def interleave_image_slots(sample: ConversationSample) -> FlatPrompt:
    """Serialize a sample to one string; the i-th ``<image>`` is ``images[i]``."""
    if not sample.images:
        raise ConversationError(f"{sample.sample_id}: sample has no images")
    if sample.slot_count != len(sample.images):
        raise ConversationError(
            f"{sample.sample_id}: {sample.slot_count} slots for {len(sample.images)} images"
        )
    chunks = []
    for t in sample.turns:
        if _ROLE_TAG.search(t.content):
            raise ConversationError(f"{sample.sample_id}: turn content contains a role tag")
        chunks.append(f"<|{t.role}|>\n{t.content}\n")
    text = "".join(chunks)
    offsets = []
    start = 0
    while True:
        i = text.find(IMAGE_MARKER, start)
        if i < 0:
            break
        offsets.append(i)
        start = i + len(IMAGE_MARKER)
    return FlatPrompt(text, tuple(i.path for i in sample.images), tuple(offsets))


def split_flat_prompt(text: str) -> list[Turn]:
    """Inverse of :func:`interleave_image_slots` for the turn structure."""
    matches = list(_ROLE_TAG.finditer(text))
    if not matches or matches[0].start() != 0:
        raise ConversationError("flat prompt must start with a role tag")
    turns = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        body = text[m.end() : end]
        if not body.endswith("\n"):
            raise ConversationError("turn body must end with a newline")
        turns.append(Turn(m.group(1), body[:-1]))
    return turns


# ---------------------------------------------------------------- round trip


def roundtrip_problems(sample: ConversationSample, templates: TemplateSet) -> list[str]:
    """Re-extract placeholder values and re-render; report any difference."""
    try:
        template = templates[sample.template_id]
        body = [t for t in sample.turns if t.role != "system"]
        values = template.extract(body)
        again = template.render(values)
    except ConversationError as exc:
        return [str(exc)]
    problems = []
    if tuple(again) != tuple(body):
        problems.append("re-rendered turns differ from stored turns")
    if sample.turns and sample.turns[0].role == "system" and sample.turns[0].content != templates.system_prompt:
        problems.append("system prompt differs from template set")
    return problems
