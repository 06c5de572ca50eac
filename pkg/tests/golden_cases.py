"""Hand-built inputs for the golden conversation of every task.

Expected outputs live in tests/golden/<task>.txt as flat prompts and were
typed by hand from the template wording, not produced by the renderer.
"""

from __future__ import annotations

from pathlib import Path

from cxrforge.conversation import TaskRecord, build_cot_mrg, interleave_image_slots, render_task
from cxrforge.geometry import BBox
from cxrforge.ingest.records import (
    Annotation,
    AnnotationKind,
    ClassLabels,
    ImageRef,
    LabeledBox,
    PhraseBox,
    QAPair,
    StudyRecord,
)
from cxrforge.ingest.scenarios import Scenario, ScenarioInstance
from cxrforge.labeler import ObservationLabels
from cxrforge.tasks import ALL_TASKS
from cxrforge.vocab import FindingVocabulary

GOLDEN_DIR = Path(__file__).parent / "golden"
VOCAB = FindingVocabulary.of(["cardiomegaly", "edema", "pleural effusion", "no finding"])


def _img(i: str, ds: str = "d") -> ImageRef:
    return ImageRef(ds, i, f"{i}.png", 512, 512)


def _study(sid: str, n: int, findings: str, order: str) -> StudyRecord:
    return StudyRecord(sid, "p", tuple(_img(f"{sid}-{k}", "mimic-cxr") for k in range(n)), order, findings, findings)


def _labels(**classes: str) -> ObservationLabels:
    full = {n: "blank" for n in VOCAB.names}
    full.update({k.replace("_", " "): v for k, v in classes.items()})
    return ObservationLabels.from_mapping(VOCAB, full)


def _rec(kind: AnnotationKind, *payloads, images=("a",)) -> TaskRecord:
    refs = tuple(_img(i) for i in images)
    anns = tuple(Annotation("d", tuple(images), kind, p) for p in payloads)
    return TaskRecord("k", refs, anns)


def render_golden(task_id: str):
    """The sample rendered from this task's hand-built input."""
    heart = BBox(128, 128, 384, 384)  # [25, 25, 75, 75] on a 512 square
    left_half = BBox(0, 0, 256, 512)  # [0, 0, 50, 100]
    right_half = BBox(256, 0, 512, 512)  # [50, 0, 100, 100]
    effusion = BBox(300, 350, 500, 500)  # [59, 68, 98, 98]
    fb = AnnotationKind.FINDING_BOX
    if task_id == "mrg_single_image":
        s = _study("s1", 1, "the heart is enlarged. small right pleural effusion.", "1")
        inst = ScenarioInstance(Scenario.SINGLE_IMAGE, s, s.images)
        labels = _labels(cardiomegaly="positive", pleural_effusion="positive", edema="negative")
        return build_cot_mrg(inst, labels, VOCAB)
    if task_id == "mrg_multi_image":
        s = _study("s2", 2, "lungs are clear. no pleural effusion.", "1")
        inst = ScenarioInstance(Scenario.MULTI_IMAGE, s, s.images)
        return build_cot_mrg(inst, _labels(pleural_effusion="negative", edema="uncertain"), VOCAB)
    if task_id == "mrg_multi_study":
        prior = _study("s3", 1, "mild pulmonary edema.", "1")
        s = _study("s4", 2, "persistent pulmonary edema, slightly improved.", "2")
        inst = ScenarioInstance(Scenario.MULTI_STUDY, s, s.images, prior)
        return build_cot_mrg(inst, _labels(edema="positive"), VOCAB)
    if task_id == "disease_classification":
        rec = _rec(AnnotationKind.CLASS_LABELS, ClassLabels(("pleural effusion", "edema")))
    elif task_id == "finding_grounding" or task_id == "grounded_finding":
        rec = _rec(fb, LabeledBox("cardiomegaly", heart))
    elif task_id == "abnormality_detection":
        rec = _rec(fb, LabeledBox("cardiomegaly", heart), LabeledBox("pleural effusion", left_half))
    elif task_id == "multi_finding_grounding":
        rec = _rec(fb, LabeledBox("pleural effusion", left_half), LabeledBox("cardiomegaly", heart))
    elif task_id in ("organ_grounding", "grounded_organ"):
        rec = _rec(AnnotationKind.ORGAN_BOX, LabeledBox("left lung", right_half))
    elif task_id in ("grounded_phrase_generation", "phrase_grounding"):
        rec = _rec(AnnotationKind.PHRASE_BOX, PhraseBox("small left effusion", effusion))
    elif task_id in ("anatomical_region_grounding", "grounded_anatomical_region"):
        rec = _rec(AnnotationKind.ANATOMICAL_REGION_BOX, LabeledBox("right lung", left_half))
    elif task_id == "vqa":
        rec = _rec(AnnotationKind.QA_PAIR, QAPair("Is there cardiomegaly?", "yes"))
    elif task_id == "difference_vqa":
        rec = _rec(AnnotationKind.DIFF_QA_PAIR, QAPair("What has changed?", "the edema has resolved"), images=("r", "m"))
    elif task_id == "visual_instruction_following":
        rec = _rec(
            AnnotationKind.INSTRUCTION_PAIR, QAPair("Summarize the findings in plain words.", "The heart looks big.")
        )
    else:
        raise KeyError(task_id)
    return render_task(rec, task_id, VOCAB)


def golden_mismatches() -> list[str]:
    """Tasks whose rendered flat prompt differs from the stored golden bytes."""
    bad = []
    for task_id in ALL_TASKS:
        text = interleave_image_slots(render_golden(task_id)).text
        expected = (GOLDEN_DIR / f"{task_id}.txt").read_text(encoding="utf-8")
        if text != expected:
            bad.append(task_id)
    return bad
