"""Report cleaning and FINDINGS-section extraction."""

from __future__ import annotations

import re
from typing import Sequence

DEFAULT_SECTION_HEADERS = ("FINDINGS", "IMPRESSION", "COMPARISON", "INDICATION", "TECHNIQUE")
MIN_FINDINGS_CHARS = 5

_ENUMERATION = re.compile(r"(^|[.\n]\s*)\d{1,2}\s?[.)]\s+", re.MULTILINE)
_DISALLOWED = re.compile(r"[^a-z0-9.,:;()/\-\s]")
_SPACES = re.compile(r"\s+")


def clean_report_text(raw: str) -> str:
    """Lowercase, drop list numbering and special characters, collapse whitespace."""
    text = _ENUMERATION.sub(r"\1", raw)
    text = text.lower()
    text = _DISALLOWED.sub(" ", text)
    text = _SPACES.sub(" ", text)
    return text.strip()


def _header_pattern(headers: Sequence[str]) -> re.Pattern[str]:
    names = "|".join(re.escape(h) for h in sorted(headers, key=len, reverse=True))
    return re.compile(rf"\b({names})\s*:")


def extract_findings_section(
    report: str, headers: Sequence[str] = DEFAULT_SECTION_HEADERS
) -> str | None:
    """Text between the FINDINGS header and the next known header, or None."""
    if "FINDINGS" not in headers:
        headers = ("FINDINGS", *headers)
    pattern = _header_pattern(headers)
    matches = list(pattern.finditer(report))
    for i, m in enumerate(matches):
        if m.group(1) != "FINDINGS":
            continue
        end = matches[i + 1].start() if i + 1 < len(matches) else len(report)
        section = report[m.end() : end].strip()
        return section or None
    return None


def admit_report(findings: str | None) -> bool:
    return findings is not None and len(findings) >= MIN_FINDINGS_CHARS
