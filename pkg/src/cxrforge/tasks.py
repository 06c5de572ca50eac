"""Task and dataset registry: the 17 tasks, their types, and default task-datasets."""

from __future__ import annotations

from enum import Enum


class TaskType(str, Enum):
    MRG = "MRG"
    IMAGE_UNDERSTANDING = "ImageUnderstanding"
    VQA = "VQA"


MRG_SINGLE_IMAGE = "mrg_single_image"
MRG_MULTI_IMAGE = "mrg_multi_image"
MRG_MULTI_STUDY = "mrg_multi_study"
DISEASE_CLASSIFICATION = "disease_classification"
FINDING_GROUNDING = "finding_grounding"
GROUNDED_FINDING = "grounded_finding"
ABNORMALITY_DETECTION = "abnormality_detection"
MULTI_FINDING_GROUNDING = "multi_finding_grounding"
ORGAN_GROUNDING = "organ_grounding"
GROUNDED_ORGAN = "grounded_organ"
GROUNDED_PHRASE_GENERATION = "grounded_phrase_generation"
PHRASE_GROUNDING = "phrase_grounding"
ANATOMICAL_REGION_GROUNDING = "anatomical_region_grounding"
GROUNDED_ANATOMICAL_REGION = "grounded_anatomical_region"
VQA = "vqa"
DIFFERENCE_VQA = "difference_vqa"
VISUAL_INSTRUCTION_FOLLOWING = "visual_instruction_following"

TASK_TYPES: dict[str, TaskType] = {
    MRG_SINGLE_IMAGE: TaskType.MRG,
    MRG_MULTI_IMAGE: TaskType.MRG,
    MRG_MULTI_STUDY: TaskType.MRG,
    DISEASE_CLASSIFICATION: TaskType.IMAGE_UNDERSTANDING,
    FINDING_GROUNDING: TaskType.IMAGE_UNDERSTANDING,
    GROUNDED_FINDING: TaskType.IMAGE_UNDERSTANDING,
    ABNORMALITY_DETECTION: TaskType.IMAGE_UNDERSTANDING,
    MULTI_FINDING_GROUNDING: TaskType.IMAGE_UNDERSTANDING,
    ORGAN_GROUNDING: TaskType.IMAGE_UNDERSTANDING,
    GROUNDED_ORGAN: TaskType.IMAGE_UNDERSTANDING,
    GROUNDED_PHRASE_GENERATION: TaskType.IMAGE_UNDERSTANDING,
    PHRASE_GROUNDING: TaskType.IMAGE_UNDERSTANDING,
    ANATOMICAL_REGION_GROUNDING: TaskType.IMAGE_UNDERSTANDING,
    GROUNDED_ANATOMICAL_REGION: TaskType.IMAGE_UNDERSTANDING,
    VQA: TaskType.VQA,
    DIFFERENCE_VQA: TaskType.VQA,
    VISUAL_INSTRUCTION_FOLLOWING: TaskType.VQA,
}

ALL_TASKS: tuple[str, ...] = tuple(TASK_TYPES)
MRG_TASKS = (MRG_SINGLE_IMAGE, MRG_MULTI_IMAGE, MRG_MULTI_STUDY)

# scenario name used by scenario assembly for each MRG task
SCENARIO_OF_TASK = {
    MRG_SINGLE_IMAGE: "single_image",
    MRG_MULTI_IMAGE: "multi_image",
    MRG_MULTI_STUDY: "multi_study",
}

# task-datasets used for training, in table order
DEFAULT_TASKS: dict[str, tuple[str, ...]] = {
    "mimic-cxr": MRG_TASKS,
    "brax": (DISEASE_CLASSIFICATION,),
    "chexpert": (DISEASE_CLASSIFICATION,),
    "vindr-cxr": (
        DISEASE_CLASSIFICATION,
        FINDING_GROUNDING,
        GROUNDED_FINDING,
        ABNORMALITY_DETECTION,
        MULTI_FINDING_GROUNDING,
    ),
    "chestx-ray14": (DISEASE_CLASSIFICATION, FINDING_GROUNDING, MULTI_FINDING_GROUNDING),
    "chestx-det10": (
        DISEASE_CLASSIFICATION,
        FINDING_GROUNDING,
        GROUNDED_FINDING,
        ABNORMALITY_DETECTION,
        MULTI_FINDING_GROUNDING,
    ),
    "siim": (DISEASE_CLASSIFICATION, FINDING_GROUNDING, GROUNDED_FINDING, ABNORMALITY_DETECTION),
    "rsna": (DISEASE_CLASSIFICATION, FINDING_GROUNDING, GROUNDED_FINDING, ABNORMALITY_DETECTION),
    "covid19-radiography": (DISEASE_CLASSIFICATION, ORGAN_GROUNDING, GROUNDED_ORGAN),
    "jsrt": (FINDING_GROUNDING, GROUNDED_FINDING, ABNORMALITY_DETECTION),
    "covid-qu-ex": (
        FINDING_GROUNDING,
        GROUNDED_FINDING,
        ABNORMALITY_DETECTION,
        ORGAN_GROUNDING,
        GROUNDED_ORGAN,
    ),
    "qata-cov19": (FINDING_GROUNDING, GROUNDED_FINDING, ABNORMALITY_DETECTION),
    "ms-cxr": (GROUNDED_PHRASE_GENERATION, PHRASE_GROUNDING),
    "imagenome": (
        GROUNDED_PHRASE_GENERATION,
        PHRASE_GROUNDING,
        ANATOMICAL_REGION_GROUNDING,
        GROUNDED_ANATOMICAL_REGION,
    ),
    "mimic-cxr-vqa": (VQA,),
    "mimic-diff-vqa": (VQA, DIFFERENCE_VQA),
    "radialog": (VISUAL_INSTRUCTION_FOLLOWING,),
}


def task_type(task_id: str) -> TaskType:
    try:
        return TASK_TYPES[task_id]
    except KeyError:
        raise KeyError(f"unknown task {task_id!r}") from None
