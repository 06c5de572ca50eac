"""Assembly of report-generation instances for the three input scenarios."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from enum import Enum

from .records import DatasetCatalog, ImageRef, StudyRecord

MAX_MULTI_IMAGE = 5
MAX_MULTI_STUDY = 10


class Scenario(str, Enum):
    SINGLE_IMAGE = "single_image"
    MULTI_IMAGE = "multi_image"
    MULTI_STUDY = "multi_study"


@dataclass(frozen=True)
class ScenarioInstance:
    scenario: Scenario
    study: StudyRecord
    images: tuple[ImageRef, ...]
    prior: StudyRecord | None = None

    @property
    def instance_id(self) -> str:
        if self.scenario is Scenario.SINGLE_IMAGE:
            return f"{self.study.study_id}/{self.images[0].image_id}"
        if self.prior is not None:
            return f"{self.prior.study_id}+{self.study.study_id}"
        return self.study.study_id

    @property
    def all_images(self) -> tuple[ImageRef, ...]:
        """Prior images first, then the target study's images."""
        if self.prior is None:
            return self.images
        return self.prior.images + self.images


def _by_patient(studies: list[StudyRecord]) -> dict[str, list[StudyRecord]]:
    groups: dict[str, list[StudyRecord]] = defaultdict(list)
    for s in studies:
        groups[s.patient_id].append(s)
    for g in groups.values():
        g.sort(key=lambda s: s.order_key)
    return groups


def scenario_studies(catalog: DatasetCatalog, scenario: Scenario | str) -> list[ScenarioInstance]:
    """Instances for one scenario over the catalog's admitted studies.

    multi_study pairs each study with the patient's immediately preceding
    study; a patient's first study yields a follow-up-only instance.
    """
    scenario = Scenario(scenario)
    out: list[ScenarioInstance] = []
    if scenario is Scenario.SINGLE_IMAGE:
        for s in catalog.studies:
            for img in s.images:
                out.append(ScenarioInstance(scenario, s, (img,)))
    elif scenario is Scenario.MULTI_IMAGE:
        for s in catalog.studies:
            if 1 <= len(s.images) <= MAX_MULTI_IMAGE:
                out.append(ScenarioInstance(scenario, s, s.images))
    else:
        for group in _by_patient(catalog.studies).values():
            for i, s in enumerate(group):
                prior = group[i - 1] if i > 0 else None
                count = len(s.images) + (len(prior.images) if prior else 0)
                if 1 <= len(s.images) and count <= MAX_MULTI_STUDY:
                    out.append(ScenarioInstance(scenario, s, s.images, prior))
    return out
