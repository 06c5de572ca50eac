"""Scoring for generated reports, grounding answers and VQA answers.

Text metrics share one tokenizer: lowercase, then split into word runs and
single punctuation characters.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import InputError
from .geometry import NormalizedBBox, iou, parse_bboxes_from_text
from .vocab import FindingVocabulary

_TOKEN = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall((text or "").lower())


@dataclass
class MetricReport:
    name: str
    values: dict[str, float]
    count: int
    per_label: dict[str, dict[str, float]] = field(default_factory=dict)

    def scaled(self, factor: float = 100.0) -> dict[str, float]:
        return {k: v * factor for k, v in self.values.items()}

    def to_json(self) -> dict:
        out = {"metric": self.name, "count": self.count, "values": dict(self.values)}
        if self.per_label:
            out["per_label"] = self.per_label
        return out

    def rows(self) -> list[tuple[str, str, float]]:
        """(metric, label, value x100) rows; label is "all" for aggregates, support stays a count."""
        rows = [(k, "all", round(v * 100, 4)) for k, v in self.values.items()]
        for label, stats in sorted(self.per_label.items()):
            for k, v in stats.items():
                rows.append((k, label, v if k == "support" else round(v * 100, 4)))
        return rows

    def render(self) -> str:
        lines = [f"{self.name} (n={self.count})"]
        lines += [f"  {k:<12} {v * 100:7.2f}" for k, v in self.values.items()]
        return "\n".join(lines)


# ---------------------------------------------------------------- F1 family


@dataclass(frozen=True)
class LabelPredictionPair:
    sample_id: str
    predicted: frozenset[str]
    reference: frozenset[str]


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_scores(
    pairs: Sequence[LabelPredictionPair],
    vocabulary: FindingVocabulary,
    subset: Sequence[str] | None = None,
) -> MetricReport:
    """Micro, macro and example-based F1 over ``subset`` (default: whole vocabulary)."""
    if not pairs:
        raise InputError("f1_scores needs at least one sample")
    if subset is None:
        labels = list(vocabulary.names)
    else:
        missing = [s for s in subset if s not in vocabulary]
        if missing:
            raise InputError(f"subset labels not in vocabulary: {missing}")
        labels = [vocabulary.canonical(s) for s in subset]
    scored = set(labels)
    counts = {l: [0, 0, 0] for l in labels}
    example = []
    for p in pairs:
        pred = {vocabulary.canonical(x) for x in p.predicted} & scored
        ref = {vocabulary.canonical(x) for x in p.reference} & scored
        for l in pred & ref:
            counts[l][0] += 1
        for l in pred - ref:
            counts[l][1] += 1
        for l in ref - pred:
            counts[l][2] += 1
        if not pred and not ref:
            example.append(1.0)
        else:
            example.append(_f1(len(pred & ref), len(pred - ref), len(ref - pred)))
    tp = sum(c[0] for c in counts.values())
    fp = sum(c[1] for c in counts.values())
    fn = sum(c[2] for c in counts.values())
    per_label = {l: {"f1": _f1(*c), "support": float(c[0] + c[2])} for l, c in counts.items()}
    values = {
        "micro_f1": _f1(tp, fp, fn),
        "macro_f1": math.fsum(v["f1"] for v in per_label.values()) / len(labels) if labels else 0.0,
        "example_f1": math.fsum(example) / len(example),
    }
    return MetricReport("f1", values, len(pairs), per_label)


# ---------------------------------------------------------------- BLEU


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _bleu_from_counts(matches: Sequence[int], totals: Sequence[int], cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    if any(m == 0 for m in matches) or any(t == 0 for t in totals):
        return 0.0
    log_p = math.fsum(math.log(m / t) for m, t in zip(matches, totals)) / len(matches)
    bp = 1.0 if cand_len > ref_len else math.exp(1 - ref_len / cand_len)
    return bp * math.exp(log_p)


def _clip_counts(cand: list[str], ref: list[str], max_n: int) -> tuple[list[int], list[int]]:
    matches, totals = [], []
    for n in range(1, max_n + 1):
        c, r = _ngrams(cand, n), _ngrams(ref, n)
        matches.append(sum(min(v, r[g]) for g, v in c.items()))
        totals.append(max(len(cand) - n + 1, 0))
    return matches, totals


def bleu(candidates: Sequence[str], references: Sequence[str], max_n: int = 4) -> float:
    """Corpus BLEU, single reference per candidate, no smoothing."""
    if not candidates:
        raise InputError("bleu needs a non-empty corpus")
    if len(candidates) != len(references):
        raise InputError("candidate and reference counts differ")
    if max_n < 1:
        raise InputError("max_n must be at least 1")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for c, r in zip(candidates, references):
        ct, rt = tokenize(c), tokenize(r)
        m, t = _clip_counts(ct, rt, max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        cand_len += len(ct)
        ref_len += len(rt)
    return _bleu_from_counts(matches, totals, cand_len, ref_len)


def sentence_bleu1(candidate: str, reference: str) -> float:
    ct, rt = tokenize(candidate), tokenize(reference)
    m, t = _clip_counts(ct, rt, 1)
    return _bleu_from_counts(m, t, len(ct), len(rt))


def mean_sentence_bleu1(candidates: Sequence[str], references: Sequence[str]) -> float:
    if not candidates:
        raise InputError("bleu needs a non-empty corpus")
    return math.fsum(sentence_bleu1(c, r) for c, r in zip(candidates, references)) / len(candidates)


# ---------------------------------------------------------------- ROUGE-L

ROUGE_BETA = 1.2


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str, beta: float = ROUGE_BETA) -> float:
    ct, rt = tokenize(candidate), tokenize(reference)
    if not ct or not rt:
        return 0.0
    lcs = lcs_length(ct, rt)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(ct), lcs / len(rt)
    b2 = beta * beta
    return (1 + b2) * p * r / (r + b2 * p)


def mean_rouge_l(candidates: Sequence[str], references: Sequence[str]) -> float:
    if not candidates:
        raise InputError("rouge_l needs a non-empty corpus")
    return math.fsum(rouge_l(c, r) for c, r in zip(candidates, references)) / len(candidates)


def report_text_metrics(candidates: Sequence[str], references: Sequence[str]) -> dict[str, float]:
    return {
        "bleu1": bleu(candidates, references, 1),
        "bleu4": bleu(candidates, references, 4),
        "rouge_l": mean_rouge_l(candidates, references),
    }


# ---------------------------------------------------------------- grounding

GROUNDING_THRESHOLD = 0.5


def first_box(text: str | None) -> NormalizedBBox | None:
    boxes = parse_bboxes_from_text(text or "")
    return boxes[0] if boxes else None


def grounding_eval(
    predictions: Sequence[str | NormalizedBBox | None],
    references: Sequence[NormalizedBBox],
    threshold: float = GROUNDING_THRESHOLD,
) -> MetricReport:
    """Accuracy at IoU >= threshold and mean IoU; unparsable predictions score 0."""
    if not references:
        raise InputError("grounding_eval needs at least one sample")
    if len(predictions) != len(references):
        raise InputError("prediction and reference counts differ")
    ious = []
    for p, r in zip(predictions, references):
        box = first_box(p) if isinstance(p, str) or p is None else p
        ious.append(0.0 if box is None else iou(box, r))
    acc = sum(1 for v in ious if v >= threshold) / len(ious)
    return MetricReport("grounding", {"accuracy": acc, "miou": math.fsum(ious) / len(ious)}, len(ious))


# ---------------------------------------------------------------- VQA


def _norm_answer(text: str) -> str:
    return (text or "").strip().lower()


def vqa_eval(predictions: Sequence[str], references: Sequence[str]) -> MetricReport:
    if not references:
        raise InputError("vqa_eval needs at least one sample")
    if len(predictions) != len(references):
        raise InputError("prediction and reference counts differ")
    exact = sum(1 for p, r in zip(predictions, references) if _norm_answer(p) == _norm_answer(r))
    recalls = []
    for p, r in zip(predictions, references):
        ref_words = set(tokenize(r))
        if not ref_words:
            continue
        recalls.append(len(ref_words & set(tokenize(p))) / len(ref_words))
    values = {
        "accuracy": exact / len(references),
        "recall": math.fsum(recalls) / len(recalls) if recalls else 0.0,
        "bleu1": mean_sentence_bleu1(predictions, references),
    }
    return MetricReport("vqa", values, len(references))


def align(pred: Mapping[str, str], ref: Mapping[str, str]) -> list[str]:
    """Shared ids in reference order; raises when either side has ids the other lacks."""
    missing = sorted(set(ref) - set(pred))
    extra = sorted(set(pred) - set(ref))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing predictions for ids: {', '.join(missing[:20])}")
        if extra:
            parts.append(f"predictions for unknown ids: {', '.join(extra[:20])}")
        raise InputError("; ".join(parts))
    return list(ref)


def pairs_from_sets(
    ids: Iterable[str], pred: Mapping[str, frozenset[str]], ref: Mapping[str, frozenset[str]]
) -> list[LabelPredictionPair]:
    return [LabelPredictionPair(i, pred[i], ref[i]) for i in ids]
