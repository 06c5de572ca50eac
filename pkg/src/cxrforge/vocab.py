from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

from .errors import InputError

NO_FINDING_NAMES = ("no finding", "normal")

# the five labels scored by F1-5
FIVE_LABELS = ("cardiomegaly", "edema", "consolidation", "atelectasis", "pleural effusion")

# CheXbert's observation set; deployers should confirm against their labeler
CHEXBERT_14 = (
    "enlarged cardiomediastinum",
    "cardiomegaly",
    "lung opacity",
    "lung lesion",
    "edema",
    "consolidation",
    "pneumonia",
    "atelectasis",
    "pneumothorax",
    "pleural effusion",
    "pleural other",
    "fracture",
    "support devices",
    "no finding",
)


@dataclass(frozen=True)
class FindingVocabulary:
    """Ordered finding names; ``no_finding`` names the entry used for empty answers."""

    names: tuple[str, ...]
    no_finding: str | None = None

    def __post_init__(self) -> None:
        if not self.names:
            raise InputError("vocabulary must not be empty")
        if any(not n or not n.strip() for n in self.names):
            raise InputError("vocabulary names must be non-empty")
        if len({n.lower() for n in self.names}) != len(self.names):
            raise InputError(f"duplicate vocabulary names in {self.names}")
        if self.no_finding is not None and self.no_finding not in self.names:
            raise InputError(f"no_finding entry {self.no_finding!r} not in vocabulary")

    @classmethod
    def of(cls, names: Iterable[str], no_finding: str | None = None) -> "FindingVocabulary":
        names = tuple(names)
        if no_finding is None:
            no_finding = next((n for n in names if n.lower() in NO_FINDING_NAMES), None)
        return cls(names, no_finding)

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and name.lower() in self._lookup

    def __iter__(self):
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)

    @cached_property
    def _lookup(self) -> dict[str, str]:
        return {n.lower(): n for n in self.names}

    def canonical(self, name: str) -> str:
        try:
            return self._lookup[name.lower()]
        except KeyError:
            raise InputError(f"{name!r} is not in the vocabulary") from None

    def ordered(self, members: Iterable[str]) -> list[str]:
        """Members deduplicated and sorted by vocabulary position."""
        wanted = {self.canonical(m) for m in members}
        return [n for n in self.names if n in wanted]

    def subset(self, labels: Sequence[str]) -> "FindingVocabulary":
        picked = self.ordered(labels)
        nf = self.no_finding if self.no_finding in picked else None
        return FindingVocabulary(tuple(picked), nf)
