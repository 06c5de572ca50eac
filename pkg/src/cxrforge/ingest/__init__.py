from .adapters import ADAPTERS, IMAGENOME_REGIONS, load_dataset, normalize_stem
from .catalog import Blocklist, ExclusionReport, exclude_images, export_catalog, read_blocklist
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
from .scenarios import Scenario, ScenarioInstance, scenario_studies
from .text import admit_report, clean_report_text, extract_findings_section

__all__ = [
    "ADAPTERS",
    "IMAGENOME_REGIONS",
    "Annotation",
    "AnnotationKind",
    "Blocklist",
    "ClassLabels",
    "DatasetCatalog",
    "ExclusionReport",
    "ImageRef",
    "LabeledBox",
    "PhraseBox",
    "QAPair",
    "Scenario",
    "ScenarioInstance",
    "Split",
    "StudyRecord",
    "View",
    "admit_report",
    "clean_report_text",
    "exclude_images",
    "export_catalog",
    "extract_findings_section",
    "load_dataset",
    "normalize_stem",
    "read_blocklist",
    "scenario_studies",
]
