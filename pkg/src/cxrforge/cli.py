"""``forge`` command line.

Exit codes: 0 success, 1 validation failure, 2 input or config error.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path
from typing import Callable

import click

from .config import load_config
from .corpus import build_corpus, corpus_stats, mix_corpus, read_records, validate_corpus, write_atomic
from .errors import ForgeError, InputError, ValidationFailed
from .geometry import NormalizedBBox, parse_bboxes_from_text
from .labeler import KeywordStub, PrecomputedFile, RemoteLabeler, binarize, label_many
from .metrics import MetricReport, align, f1_scores, grounding_eval, pairs_from_sets, report_text_metrics, vqa_eval
from .vocab import CHEXBERT_14, FIVE_LABELS, FindingVocabulary

log = logging.getLogger("cxrforge")


def _write_tables(prefix: str | None, payload: dict, rows: list[tuple], header: tuple[str, ...]) -> None:
    if not prefix:
        return
    base = Path(prefix)
    write_atomic(base.with_suffix(".json"), [json.dumps(payload, indent=2, sort_keys=True) + "\n"])

    def csv_lines():
        import io

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        yield buf.getvalue()

    write_atomic(base.with_suffix(".csv"), csv_lines())


def _guard(fn: Callable) -> Callable:
    """Map package errors onto the exit-code contract."""

    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationFailed as exc:
            click.echo(str(exc), err=True)
            sys.exit(1)
        except ForgeError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool) -> None:
    """Compile chest X-ray instruction corpora and score model outputs."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("-c", "--config", "config_path", required=True, type=click.Path(dir_okay=False))
@_guard
def build(config_path: str) -> None:
    """Ingest datasets, render conversations and write the corpus."""
    cfg = load_config(config_path)
    res = build_corpus(cfg)
    m = res.manifest
    click.echo(f"wrote {m['total']} records in {len(res.shards)} files to {res.output_dir}")
    for name, n in sorted(res.shards.items()):
        click.echo(f"  {name}: {n}")
    if m["excluded_images"]:
        click.echo(f"  excluded images: {m['excluded_images']}")


@main.command()
@click.option("-c", "--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("-n", "n", required=True, type=click.IntRange(min=0))
@click.option("-o", "--out", "out", required=True, type=click.Path(dir_okay=False))
@_guard
def mix(config_path: str, n: int, out: str) -> None:
    """Sample N records from the built corpus into one training file."""
    cfg = load_config(config_path)
    stats = mix_corpus(cfg, n, out)
    click.echo(f"wrote {stats.total} records to {out}")


def _read_texts(path: str, field: str = "text") -> dict[str, str]:
    out: dict[str, str] = {}
    for line, rec in read_records(path):
        if "id" not in rec:
            raise InputError(f"{path}:{line}: record has no id")
        rid = str(rec["id"])
        if rid in out:
            raise InputError(f"{path}:{line}: duplicate id {rid}")
        out[rid] = rec.get(field, rec.get("text", "")) or ""
    return out


def _read_ref_boxes(path: str) -> dict[str, NormalizedBBox]:
    out = {}
    for line, rec in read_records(path):
        rid = str(rec.get("id"))
        if "box" in rec:
            box = NormalizedBBox(*[int(v) for v in rec["box"]])
        else:
            boxes = parse_bboxes_from_text(rec.get("text", ""))
            if not boxes:
                raise InputError(f"{path}:{line}: reference has no box")
            box = boxes[0]
        out[rid] = box
    return out


def _eval_report(pred: dict[str, str], ref: dict[str, str], ids: list[str], labeler_url, pred_labels, ref_labels) -> MetricReport:
    if pred_labels or ref_labels:
        if not (pred_labels and ref_labels):
            raise InputError("--pred-labels and --ref-labels must be given together")
        vocab = FindingVocabulary.of(CHEXBERT_14)
        p_ep, r_ep = PrecomputedFile(pred_labels), PrecomputedFile(ref_labels)
    elif labeler_url:
        vocab = FindingVocabulary.of(CHEXBERT_14)
        p_ep = r_ep = RemoteLabeler(labeler_url)
    else:
        # the keyword stub only knows the five common findings
        vocab = FindingVocabulary.of(FIVE_LABELS)
        p_ep = r_ep = KeywordStub()
    p_lab = label_many([(i, pred[i]) for i in ids], vocab, p_ep)
    r_lab = label_many([(i, ref[i]) for i in ids], vocab, r_ep)
    pairs = pairs_from_sets(ids, {i: binarize(v) for i, v in p_lab.items()}, {i: binarize(v) for i, v in r_lab.items()})
    values: dict[str, float] = {}
    per_label = {}
    full = f1_scores(pairs, vocab)
    suffix = str(len(vocab))
    for k, v in full.values.items():
        values[f"{k}_{suffix}"] = v
    per_label = full.per_label
    if len(vocab) != len(FIVE_LABELS):
        five = f1_scores(pairs, vocab, FIVE_LABELS)
        for k, v in five.values.items():
            values[f"{k}_5"] = v
    values.update(report_text_metrics([pred[i] for i in ids], [ref[i] for i in ids]))
    return MetricReport("report", values, len(ids), per_label)


@main.command(name="eval")
@click.option("--kind", type=click.Choice(["report", "grounding", "vqa"]), required=True)
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--ref", "ref_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--labeler-url", default=None, help="Remote labeler for report scoring.")
@click.option("--pred-labels", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--ref-labels", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--threshold", default=0.5, show_default=True, help="IoU threshold for grounding accuracy.")
@click.option("--out", default=None, help="Write PREFIX.json and PREFIX.csv.")
@_guard
def eval_cmd(kind, pred_path, ref_path, labeler_url, pred_labels, ref_labels, threshold, out) -> None:
    """Score predictions against references (JSONL with id and text)."""
    pred = _read_texts(pred_path)
    if kind == "grounding":
        ref_boxes = _read_ref_boxes(ref_path)
        ids = align(pred, ref_boxes)
        report = grounding_eval([pred[i] for i in ids], [ref_boxes[i] for i in ids], threshold)
    else:
        ref = _read_texts(ref_path)
        ids = align(pred, ref)
        if kind == "vqa":
            report = vqa_eval([pred[i] for i in ids], [ref[i] for i in ids])
        else:
            report = _eval_report(pred, ref, ids, labeler_url, pred_labels, ref_labels)
    click.echo(report.render())
    _write_tables(out, report.to_json(), report.rows(), ("metric", "label", "value"))


@main.command()
@click.argument("path", type=click.Path(exists=True))
@_guard
def validate(path: str) -> None:
    """Check every record of a corpus directory or JSONL file."""
    rep = validate_corpus(path)
    for w in rep.warnings:
        click.echo(f"warning: {w}", err=True)
    if not rep.ok:
        for v in rep.violations:
            click.echo(v)
        raise ValidationFailed(f"FAIL: {len(rep.violations)} violations in {rep.records} records")
    click.echo(f"OK: {rep.records} records in {rep.files} files")


@main.command()
@click.argument("path", type=click.Path(exists=True))
@click.option("--out", default=None, help="Write PREFIX.json and PREFIX.csv.")
@_guard
def stats(path: str, out: str | None) -> None:
    """Counts and frequencies by task type, task, dataset and pair."""
    s = corpus_stats(path)
    data = s.to_json()
    click.echo(json.dumps(data, indent=2, sort_keys=True))
    _write_tables(out, data, s.rows(), ("group", "key", "count", "frequency"))


if __name__ == "__main__":
    main()
