"""Build configuration: a YAML file validated with strict key checking.

Example::

    seed: 7
    output_dir: out
    vocabulary: [cardiomegaly, edema, consolidation, atelectasis, pleural effusion, no finding]
    labeler: {kind: keyword_stub}
    mixture: mixture.yaml          # or "table_ratio" for the packaged weight table
    blocklists: [ms_cxr_test_ids.txt]
    datasets:
      - id: mimic-cxr
        split: train
        paths: {images: mimic/images.csv, studies: mimic/studies.csv}
        tasks: [mrg_single_image]

Relative paths resolve against the directory holding the config file.
``FORGE_SEED`` in the environment overrides ``seed``.
"""

from __future__ import annotations

import hashlib
import os
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .ingest.adapters import ADAPTERS
from .tasks import DEFAULT_TASKS, TASK_TYPES
from .vocab import CHEXBERT_14, FindingVocabulary

SEED_ENV = "FORGE_SEED"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LabelerConfig(_Strict):
    kind: Literal["keyword_stub", "precomputed_file", "remote_service"] = "keyword_stub"
    path: str | None = None
    url: str | None = None
    delimiter: str | None = None
    timeout: float = 30.0
    retries: int = Field(default=3, ge=0)
    max_in_flight: int = Field(default=4, ge=1)
    keywords: dict[str, list[str]] | None = None


class DatasetConfig(_Strict):
    id: str
    split: str = "train"
    paths: dict[str, str]
    tasks: list[str] | None = None
    vocabulary: list[str] | None = None
    no_finding: str | None = None
    options: dict[str, Any] = Field(default_factory=dict)

    @field_validator("id")
    @classmethod
    def _known(cls, v: str) -> str:
        if v not in ADAPTERS:
            raise ValueError(f"unknown dataset id {v!r}")
        return v

    @field_validator("tasks")
    @classmethod
    def _known_tasks(cls, v: list[str] | None) -> list[str] | None:
        for t in v or ():
            if t not in TASK_TYPES:
                raise ValueError(f"unknown task {t!r}")
        return v

    def task_list(self) -> list[str]:
        return list(self.tasks) if self.tasks is not None else list(DEFAULT_TASKS.get(self.id, ()))


class ForgeConfig(_Strict):
    seed: int = 0
    output_dir: str = "forge-out"
    templates: str | None = None
    system_prompt: str | None = None
    vocabulary: list[str] = Field(default_factory=lambda: list(CHEXBERT_14))
    section_headers: list[str] | None = None
    labeler: LabelerConfig = Field(default_factory=LabelerConfig)
    mixture: str | None = None
    blocklists: list[str] = Field(default_factory=list)
    datasets: list[DatasetConfig] = Field(default_factory=list)

    @field_validator("datasets")
    @classmethod
    def _unique(cls, v: list[DatasetConfig]) -> list[DatasetConfig]:
        ids = [d.id for d in v]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise ValueError(f"datasets declared twice: {dup}")
        return v


class LoadedConfig:
    """A validated config plus where it came from."""

    def __init__(self, model: ForgeConfig, base_dir: Path, raw: bytes) -> None:
        self.model = model
        self.base_dir = base_dir
        self.raw = raw

    @property
    def seed(self) -> int:
        return self.model.seed

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.raw).hexdigest()

    def resolve(self, p: str | os.PathLike[str]) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.model.output_dir)

    @property
    def vocabulary(self) -> FindingVocabulary:
        return FindingVocabulary.of(self.model.vocabulary)

    def check_paths(self) -> list[str]:
        """Referenced input files that do not exist."""
        missing = []
        refs: list[str] = list(self.model.blocklists)
        if self.model.templates:
            refs.append(self.model.templates)
        if self.model.mixture and self.model.mixture != "table_ratio":
            refs.append(self.model.mixture)
        if self.model.labeler.kind == "precomputed_file" and self.model.labeler.path:
            refs.append(self.model.labeler.path)
        for d in self.model.datasets:
            refs.extend(d.paths.values())
        for r in refs:
            if not self.resolve(r).exists():
                missing.append(str(self.resolve(r)))
        return missing


def load_config(path: str | Path, env: dict[str, str] | None = None) -> LoadedConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(raw) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            doc["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    try:
        model = ForgeConfig.model_validate(doc)
    except ValidationError as exc:
        lines = [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigError(f"{path}: invalid config\n  " + "\n  ".join(lines)) from None
    cfg = LoadedConfig(model, path.resolve().parent, raw)
    missing = cfg.check_paths()
    if missing:
        raise ConfigError("missing input files:\n  " + "\n  ".join(missing))
    return cfg
