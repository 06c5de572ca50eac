"""Observation labeling endpoints and the binarization rule.

The neural labeler lives outside this package. Three endpoints are offered:
a precomputed label table, a remote HTTP service, and a keyword stub that is
good enough for tests and smoke runs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import httpx

from .errors import LabelerError
from .vocab import FindingVocabulary

log = logging.getLogger(__name__)


class LabelClass(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    UNCERTAIN = "uncertain"
    BLANK = "blank"

    @classmethod
    def parse(cls, raw: object) -> "LabelClass":
        v = str(raw).strip().lower() if raw is not None else ""
        aliases = {"": "blank", "nan": "blank", "1": "positive", "1.0": "positive", "0": "negative",
                   "0.0": "negative", "-1": "uncertain", "-1.0": "uncertain"}
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise LabelerError(f"unknown label class {raw!r}") from None


@dataclass(frozen=True)
class ObservationLabels:
    vocabulary: FindingVocabulary
    classes: tuple[LabelClass, ...]

    def __post_init__(self) -> None:
        if len(self.classes) != len(self.vocabulary):
            raise LabelerError(
                f"{len(self.classes)} classes for a vocabulary of {len(self.vocabulary)} labels"
            )

    @classmethod
    def from_mapping(cls, vocab: FindingVocabulary, mapping: Mapping[str, object]) -> "ObservationLabels":
        lookup = {k.lower(): v for k, v in mapping.items()}
        missing = [n for n in vocab.names if n.lower() not in lookup]
        if missing:
            raise LabelerError(f"labels missing for {missing}")
        return cls(vocab, tuple(LabelClass.parse(lookup[n.lower()]) for n in vocab.names))

    def as_dict(self) -> dict[str, str]:
        return {n: c.value for n, c in zip(self.vocabulary.names, self.classes)}

    def __getitem__(self, name: str) -> LabelClass:
        return self.classes[self.vocabulary.names.index(self.vocabulary.canonical(name))]


def binarize(labels: ObservationLabels) -> frozenset[str]:
    """Positive labels only; uncertain and blank count as negative."""
    return frozenset(n for n, c in zip(labels.vocabulary.names, labels.classes) if c is LabelClass.POSITIVE)


class Endpoint(Protocol):
    kind: str

    def label(self, text: str, vocab: FindingVocabulary, report_id: str | None = None) -> ObservationLabels: ...

    def content_hash(self) -> str: ...


# ---------------------------------------------------------------- keyword stub

DEFAULT_KEYWORDS: dict[str, tuple[str, ...]] = {
    "cardiomegaly": ("cardiomegaly", "enlarged heart", "heart is enlarged", "enlarged cardiac silhouette"),
    "edema": ("edema", "oedema"),
    "consolidation": ("consolidation", "consolidations"),
    "atelectasis": ("atelectasis", "atelectatic"),
    "pleural effusion": ("pleural effusion", "pleural effusions", "effusion", "effusions"),
}

NEGATION_WINDOW = 3
_NEGATORS = ("no", "without")
_SENTENCE = re.compile(r"[.;!?\n]")
_TOKEN = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _negated(tokens: Sequence[str], start: int) -> bool:
    window = tokens[max(0, start - NEGATION_WINDOW) : start]
    if any(t in _NEGATORS for t in window):
        return True
    return any(a == "free" and b == "of" for a, b in zip(window, window[1:]))


@dataclass
class KeywordStub:
    """Keyword matcher: positive if a keyword appears un-negated, negative if only negated."""

    keywords: Mapping[str, Sequence[str]] = field(default_factory=lambda: dict(DEFAULT_KEYWORDS))
    kind: str = "keyword_stub"

    def label(self, text: str, vocab: FindingVocabulary, report_id: str | None = None) -> ObservationLabels:
        table = {k.lower(): [_tokens(p) for p in v] for k, v in self.keywords.items()}
        sentences = [_tokens(s) for s in _SENTENCE.split(text or "")]
        classes = []
        for name in vocab.names:
            status = LabelClass.BLANK
            for phrase in table.get(name.lower(), ()):
                n = len(phrase)
                if n == 0:
                    continue
                for toks in sentences:
                    for i in range(len(toks) - n + 1):
                        if toks[i : i + n] != phrase:
                            continue
                        if _negated(toks, i):
                            if status is LabelClass.BLANK:
                                status = LabelClass.NEGATIVE
                        else:
                            status = LabelClass.POSITIVE
            classes.append(status)
        return ObservationLabels(vocab, tuple(classes))

    def content_hash(self) -> str:
        canon = json.dumps({k: list(v) for k, v in sorted(self.keywords.items())}, sort_keys=True)
        return hashlib.sha256(f"keyword_stub:{canon}".encode()).hexdigest()


# ---------------------------------------------------------------- precomputed table


class PrecomputedFile:
    """Delimited table with one row per report id and one column per label."""

    kind = "precomputed_file"

    def __init__(self, path: str | Path, delimiter: str | None = None) -> None:
        self.path = Path(path)
        if not self.path.exists():
            raise LabelerError(f"label file not found: {self.path}")
        self._bytes = self.path.read_bytes()
        if delimiter is None:
            delimiter = "\t" if self.path.suffix.lower() in (".tsv", ".tab") else ","
        text = self._bytes.decode("utf-8")
        reader = csv.DictReader(text.splitlines(), delimiter=delimiter)
        fields = reader.fieldnames or []
        id_col = next((f for f in fields if f.strip().lower() in ("report_id", "id", "study_id")), None)
        if id_col is None:
            raise LabelerError(f"{self.path}: no report_id column")
        self.rows: dict[str, dict[str, str]] = {}
        for row in reader:
            rid = (row.get(id_col) or "").strip()
            self.rows[rid] = {k.strip().lower(): (v or "") for k, v in row.items() if k != id_col}

    def label(self, text: str, vocab: FindingVocabulary, report_id: str | None = None) -> ObservationLabels:
        if report_id is None or report_id not in self.rows:
            raise LabelerError(f"{self.path}: no labels for report {report_id!r}")
        return ObservationLabels.from_mapping(vocab, self.rows[report_id])

    def content_hash(self) -> str:
        return hashlib.sha256(self._bytes).hexdigest()


# ---------------------------------------------------------------- remote service


class _Rejected(LabelerError):
    """4xx response; retrying will not help."""


class RemoteLabeler:
    """HTTP labeler.

    Request: ``POST {url}`` with JSON ``{"id", "text", "vocabulary"}``.
    Response: JSON ``{"labels": {name: class}}`` or ``{"labels": [class, ...]}``
    aligned with the request vocabulary.
    """

    kind = "remote_service"

    def __init__(
        self,
        url: str,
        timeout: float = 30.0,
        retries: int = 3,
        max_in_flight: int = 4,
        backoff: float = 0.5,
        client: httpx.Client | None = None,
    ) -> None:
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.max_in_flight = max(1, max_in_flight)
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    def _parse(self, body: object, vocab: FindingVocabulary) -> ObservationLabels:
        if not isinstance(body, dict) or "labels" not in body:
            raise LabelerError(f"malformed labeler response: {body!r:.200}")
        labels = body["labels"]
        if isinstance(labels, list):
            return ObservationLabels(vocab, tuple(LabelClass.parse(v) for v in labels))
        if isinstance(labels, dict):
            return ObservationLabels.from_mapping(vocab, labels)
        raise LabelerError(f"malformed labels field: {labels!r:.200}")

    def label(self, text: str, vocab: FindingVocabulary, report_id: str | None = None) -> ObservationLabels:
        payload = {"id": report_id, "text": text, "vocabulary": list(vocab.names)}
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.url, json=payload, timeout=self.timeout)
                if resp.status_code >= 500:
                    raise LabelerError(f"labeler returned HTTP {resp.status_code}")
                if resp.status_code >= 400:
                    raise _Rejected(f"labeler rejected request: HTTP {resp.status_code}")
                return self._parse(resp.json(), vocab)
            except _Rejected:
                raise
            except (httpx.TransportError, LabelerError, ValueError) as exc:
                last = exc
                if attempt < self.retries:
                    log.warning("labeler attempt %d failed: %s", attempt + 1, exc)
                    time.sleep(self.backoff * (2**attempt))
        raise LabelerError(f"labeler failed after {self.retries + 1} attempts: {last}")

    def content_hash(self) -> str:
        return hashlib.sha256(f"remote_service:{self.url}".encode()).hexdigest()


def label_report(
    findings: str, vocab: FindingVocabulary, endpoint: Endpoint, report_id: str | None = None
) -> ObservationLabels:
    return endpoint.label(findings, vocab, report_id)


def label_many(
    items: Iterable[tuple[str, str]], vocab: FindingVocabulary, endpoint: Endpoint
) -> dict[str, ObservationLabels]:
    """Label ``(report_id, text)`` pairs; remote endpoints run with bounded concurrency."""
    items = list(items)
    workers = getattr(endpoint, "max_in_flight", 1)
    if workers <= 1 or len(items) <= 1:
        return {rid: endpoint.label(text, vocab, rid) for rid, text in items}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda it: endpoint.label(it[1], vocab, it[0]), items))
    return {rid: res for (rid, _), res in zip(items, results)}


def make_endpoint(spec: Mapping[str, object], base_dir: Path | None = None) -> Endpoint:
    kind = spec.get("kind", "keyword_stub")
    if kind == "keyword_stub":
        extra = spec.get("keywords") or {}
        table = dict(DEFAULT_KEYWORDS)
        for k, v in dict(extra).items():
            table[str(k).lower()] = tuple(v)
        return KeywordStub(table)
    if kind == "precomputed_file":
        path = Path(str(spec["path"]))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return PrecomputedFile(path, spec.get("delimiter"))
    if kind == "remote_service":
        return RemoteLabeler(
            str(spec["url"]),
            timeout=float(spec.get("timeout", 30.0)),
            retries=int(spec.get("retries", 3)),
            max_in_flight=int(spec.get("max_in_flight", 4)),
        )
    raise LabelerError(f"unknown labeler kind {kind!r}")
