"""Corpus persistence: build, validate, mix and summarize.

A built corpus is a directory::

    manifest.json
    templates.yaml            copy of the template set used
    blocklist.txt             union of the configured blocklists
    corpus/<task>__<dataset>.jsonl

Each JSONL line is one conversation sample; lines are sorted by id and keys
are sorted so identical inputs give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from . import __version__
from .config import LoadedConfig
from .conversation import (
    ConversationSample,
    TemplateSet,
    Turn,
    build_cot_mrg,
    check_sample,
    interleave_image_slots,
    render_catalog_task,
    roundtrip_problems,
)
from .errors import ConfigError, ConversationError, FormatError, MixtureError
from .geometry import invalid_box_candidates
from .ingest import Blocklist, DatasetCatalog, Scenario, exclude_images, load_dataset, normalize_stem, read_blocklist, scenario_studies
from .ingest.records import ImageRef
from .labeler import Endpoint, label_many, make_endpoint
from .mixer import GENERATOR_VERSION, MixtureSpec, MixtureStats, load_spec, sample_stream, table_ratio_spec
from .tasks import MRG_TASKS, SCENARIO_OF_TASK, task_type
from .vocab import FindingVocabulary

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
TEMPLATE_COPY = "templates.yaml"
BLOCKLIST_COPY = "blocklist.txt"
CORPUS_DIR = "corpus"

# covid-qu-ex must be loaded before qata-cov19 so duplicates can be dropped
_LOAD_FIRST = ("covid-qu-ex",)


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def dumps(obj: object) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def shard_name(task_id: str, dataset_id: str) -> str:
    return f"{task_id}__{dataset_id}.jsonl"


# ---------------------------------------------------------------- record IO


def sample_to_record(sample: ConversationSample, meta: Mapping[str, object]) -> dict:
    return {
        "id": sample.sample_id,
        "task": sample.task_id,
        "dataset": sample.dataset_id,
        "template": sample.template_id,
        "images": [i.to_json() for i in sample.images],
        "conversation": [{"role": t.role, "content": t.content} for t in sample.turns],
        "targets": list(sample.target_flags),
        "meta": {**dict(sample.meta), **dict(meta)},
    }


def record_to_sample(rec: Mapping) -> ConversationSample:
    try:
        return ConversationSample(
            sample_id=rec["id"],
            task_id=rec["task"],
            dataset_id=rec["dataset"],
            images=tuple(ImageRef.from_json(i) for i in rec["images"]),
            turns=tuple(Turn(t["role"], t["content"]) for t in rec["conversation"]),
            target_flags=tuple(bool(x) for x in rec["targets"]),
            template_id=rec.get("template", rec["task"]),
            meta=dict(rec.get("meta") or {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed record: {exc!r}") from None


def read_records(path: str | Path) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", str(path), n) from None
            if not isinstance(rec, dict):
                raise FormatError("record is not an object", str(path), n)
            yield n, rec


def write_atomic(path: Path, lines: Iterable[str]) -> None:
    """Write through a temp file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            for line in lines:
                fh.write(line)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def corpus_files(path: str | Path) -> list[Path]:
    """JSONL files of a corpus directory, or the file itself."""
    path = Path(path)
    if path.is_dir():
        sub = path / CORPUS_DIR
        return sorted((sub if sub.is_dir() else path).glob("*.jsonl"))
    if path.is_file():
        return [path]
    raise ConfigError(f"no such corpus: {path}")


def read_manifest(path: str | Path) -> dict | None:
    path = Path(path)
    m = path / MANIFEST if path.is_dir() else None
    if m is None or not m.exists():
        return None
    try:
        return json.loads(m.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid manifest: {exc.msg}", str(m)) from None


# ---------------------------------------------------------------- build


@dataclass
class BuildResult:
    output_dir: Path
    manifest: dict
    shards: dict[str, int] = field(default_factory=dict)


def _template_bytes(cfg: LoadedConfig) -> bytes:
    if cfg.model.templates:
        return cfg.resolve(cfg.model.templates).read_bytes()
    return resources.files("cxrforge").joinpath("data/templates_v1.yaml").read_bytes()


def _load_blocklist(cfg: LoadedConfig) -> Blocklist:
    ids: set[str] = set()
    for p in cfg.model.blocklists:
        ids |= read_blocklist(cfg.resolve(p))
    return Blocklist(ids)


def _load_catalogs(cfg: LoadedConfig, blocklist: Blocklist) -> tuple[dict[str, DatasetCatalog], dict[str, dict]]:
    order = sorted(cfg.model.datasets, key=lambda d: (d.id not in _LOAD_FIRST, cfg.model.datasets.index(d)))
    catalogs: dict[str, DatasetCatalog] = {}
    exclusions: dict[str, dict] = {}
    headers = tuple(cfg.model.section_headers) if cfg.model.section_headers else None
    for d in order:
        stems: frozenset[str] = frozenset()
        if d.id == "qata-cov19" and "covid-qu-ex" in catalogs:
            stems = frozenset(normalize_stem(r.path or r.image_id) for r in catalogs["covid-qu-ex"].images.values())
        vocab = FindingVocabulary.of(d.vocabulary, d.no_finding) if d.vocabulary else None
        kwargs = {"section_headers": headers} if headers else {}
        cat = load_dataset(
            d.id,
            {k: cfg.resolve(v) for k, v in d.paths.items()},
            split=d.split,
            vocabulary=vocab,
            options=d.options,
            exclude_stems=stems,
            **kwargs,
        )
        cat, report = exclude_images(cat, blocklist)
        catalogs[d.id] = cat
        exclusions[d.id] = {
            "images": report.images,
            "studies": report.studies,
            "annotations": report.annotations,
            "dropped": dict(sorted(cat.dropped.items())),
        }
    return catalogs, exclusions


def _mrg_samples(
    catalog: DatasetCatalog, task_id: str, vocab: FindingVocabulary, endpoint: Endpoint, templates: TemplateSet
) -> list[ConversationSample]:
    instances = scenario_studies(catalog, Scenario(SCENARIO_OF_TASK[task_id]))
    to_label = {}
    for inst in instances:
        to_label[inst.study.study_id] = inst.study.findings_section or ""
    labels = label_many(sorted(to_label.items()), vocab, endpoint)
    return [
        build_cot_mrg(inst, labels[inst.study.study_id], vocab, dataset_id=catalog.dataset_id, templates=templates)
        for inst in instances
    ]


def render_samples(cfg: LoadedConfig) -> tuple[dict[tuple[str, str], list[ConversationSample]], dict]:
    """Render every configured (task, dataset) shard in memory."""
    templates = TemplateSet.from_yaml(_template_bytes(cfg), cfg.model.system_prompt)
    blocklist = _load_blocklist(cfg)
    catalogs, exclusions = _load_catalogs(cfg, blocklist)
    endpoint = make_endpoint(cfg.model.labeler.model_dump(exclude_none=True), cfg.base_dir)
    vocab = cfg.vocabulary
    shards: dict[tuple[str, str], list[ConversationSample]] = {}
    for d in cfg.model.datasets:
        cat = catalogs[d.id]
        for task_id in d.task_list():
            if task_id in MRG_TASKS:
                samples = _mrg_samples(cat, task_id, vocab, endpoint, templates)
            else:
                samples = render_catalog_task(cat, task_id, templates)
            ids = [s.sample_id for s in samples]
            if len(set(ids)) != len(ids):
                raise ConversationError(f"{task_id}/{d.id}: duplicate sample ids")
            shards[(task_id, d.id)] = sorted(samples, key=lambda s: s.sample_id)
    info = {
        "exclusions": exclusions,
        "blocklist": sorted(blocklist.ids),
        "templates": templates,
        "labeler_hash": endpoint.content_hash(),
        "warnings": {k: list(c.warnings) for k, c in sorted(catalogs.items()) if c.warnings},
    }
    return shards, info


def _input_hashes(cfg: LoadedConfig) -> dict[str, str]:
    out = {}
    for d in cfg.model.datasets:
        for name, p in sorted(d.paths.items()):
            out[f"{d.id}/{name}"] = sha256_bytes(cfg.resolve(p).read_bytes())
    return out


def build_corpus(cfg: LoadedConfig) -> BuildResult:
    """Render all shards, then commit them and the manifest.

    Nothing is written until every shard renders; any failure leaves the
    output directory as it was.
    """
    shards, info = render_samples(cfg)
    out = cfg.output_dir
    tpl_bytes = _template_bytes(cfg)
    meta = {"config_hash": cfg.config_hash, "seed": cfg.seed}
    counts = {}
    files: dict[str, list[str]] = {}
    for (task_id, dataset_id), samples in sorted(shards.items()):
        name = shard_name(task_id, dataset_id)
        files[name] = [dumps(sample_to_record(s, meta)) + "\n" for s in samples]
        counts[name] = {"task": task_id, "dataset": dataset_id, "count": len(samples)}
    blocked = info["blocklist"]
    manifest = {
        "corpus_id": sha256_bytes(f"{cfg.config_hash}:{cfg.seed}".encode())[:16],
        "tool_version": __version__,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "template_hash": sha256_bytes(tpl_bytes),
        "labeler_hash": info["labeler_hash"],
        "blocklist_hash": sha256_bytes("".join(f"{i}\n" for i in blocked).encode()),
        "inputs": _input_hashes(cfg),
        "files": counts,
        "total": sum(c["count"] for c in counts.values()),
        "exclusions": info["exclusions"],
        "excluded_images": sum(e["images"] for e in info["exclusions"].values()),
        "warnings": info["warnings"],
    }

    staging = Path(tempfile.mkdtemp(prefix=".forge-build-", dir=_ensure_dir(out)))
    try:
        (staging / CORPUS_DIR).mkdir()
        for name, lines in files.items():
            write_atomic(staging / CORPUS_DIR / name, lines)
        write_atomic(staging / TEMPLATE_COPY, [tpl_bytes.decode("utf-8")])
        write_atomic(staging / BLOCKLIST_COPY, [f"{i}\n" for i in blocked])
        write_atomic(staging / MANIFEST, [json.dumps(manifest, indent=2, sort_keys=True) + "\n"])
        corpus = out / CORPUS_DIR
        corpus.mkdir(parents=True, exist_ok=True)
        for old in corpus.glob("*.jsonl"):
            if old.name not in files:
                old.unlink()
        for name in files:
            os.replace(staging / CORPUS_DIR / name, corpus / name)
        for name in (TEMPLATE_COPY, BLOCKLIST_COPY, MANIFEST):
            os.replace(staging / name, out / name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    log.info("built %d records in %d files under %s", manifest["total"], len(files), out)
    return BuildResult(out, manifest, {k: v["count"] for k, v in counts.items()})


def _ensure_dir(p: Path) -> Path:
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------- validate


@dataclass
class ValidationReport:
    records: int = 0
    files: int = 0
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_corpus(path: str | Path, templates: TemplateSet | None = None) -> ValidationReport:
    """Check sample invariants, boxes, template round trip, blocklist and manifest counts."""
    path = Path(path)
    report = ValidationReport()
    manifest = read_manifest(path)
    blocklist = Blocklist()
    if path.is_dir():
        tpl = path / TEMPLATE_COPY
        if templates is None and tpl.exists():
            raw = tpl.read_bytes()
            if manifest and sha256_bytes(raw) != manifest.get("template_hash"):
                report.violations.append(f"{TEMPLATE_COPY}: hash differs from manifest")
            templates = TemplateSet.from_yaml(raw)
        bl = path / BLOCKLIST_COPY
        if bl.exists():
            blocklist = Blocklist(read_blocklist(bl))
    templates = templates or TemplateSet.load()
    files = corpus_files(path)
    report.files = len(files)
    seen_counts: dict[str, int] = {}
    for f in files:
        prev_id = None
        n_file = 0
        for line, rec in read_records(f):
            n_file += 1
            where = f"{f.name}:{line}"
            try:
                sample = record_to_sample(rec)
            except FormatError as exc:
                report.violations.append(f"{where}: {exc.reason}")
                continue
            sid = sample.sample_id
            problems = list(check_sample(sample))
            for t in sample.turns:
                for bad in invalid_box_candidates(t.content):
                    problems.append(f"invalid box {bad}")
            problems += roundtrip_problems(sample, templates)
            try:
                interleave_image_slots(sample)
            except ConversationError as exc:
                problems.append(str(exc).split(": ", 1)[-1])
            for ref in sample.images:
                if blocklist.blocks_ref(ref):
                    problems.append(f"references blocklisted image {ref.image_id}")
            if manifest is not None:
                meta = sample.meta
                if meta.get("config_hash") != manifest.get("config_hash") or meta.get("seed") != manifest.get("seed"):
                    problems.append("config hash or seed differs from manifest")
            if "mix" not in sample.meta and prev_id is not None and sid <= prev_id:
                problems.append("records not sorted by id")
            prev_id = sid
            report.violations += [f"{where}: {sid}: {p}" for p in dict.fromkeys(problems)]
        seen_counts[f.name] = n_file
        report.records += n_file
    if manifest is not None:
        declared = {k: v["count"] for k, v in manifest.get("files", {}).items()}
        for name in sorted(set(declared) | set(seen_counts)):
            if declared.get(name) != seen_counts.get(name):
                report.violations.append(
                    f"{name}: manifest count {declared.get(name)} but {seen_counts.get(name)} records found"
                )
    if report.records == 0:
        report.warnings.append("corpus is empty")
    return report


# ---------------------------------------------------------------- mix


def mixture_for(cfg: LoadedConfig, counts: Mapping[tuple[str, str], int]) -> MixtureSpec:
    src = cfg.model.mixture
    if src is None:
        raise ConfigError("config has no mixture")
    spec = table_ratio_spec() if src == "table_ratio" else load_spec(cfg.resolve(src))
    return spec.with_seed(cfg.seed).with_pool_sizes(counts)


def _load_shards(out: Path) -> dict[tuple[str, str], list[str]]:
    manifest = read_manifest(out)
    if manifest is None:
        raise ConfigError(f"{out}: no built corpus (run build first)")
    shards = {}
    for name, info in sorted(manifest["files"].items()):
        lines = (out / CORPUS_DIR / name).read_text(encoding="utf-8").splitlines()
        shards[(info["task"], info["dataset"])] = lines
    return shards


def mix_corpus(cfg: LoadedConfig, n: int, dest: str | Path) -> MixtureStats:
    """Materialize ``n`` tickets from the built corpus into one JSONL file."""
    shards = _load_shards(cfg.output_dir)
    spec = mixture_for(cfg, {k: len(v) for k, v in shards.items()})
    tickets = sample_stream(spec, n)
    spec_hash = spec.digest()
    stats = MixtureStats()
    lines = []
    for t in tickets:
        pool = shards.get((t.task_id, t.dataset_id))
        if not pool:
            raise MixtureError(f"ticket {t.seq} references empty pool {t.task_id}/{t.dataset_id}")
        rec = json.loads(pool[t.record_index])
        rec["meta"]["mix"] = {
            "seq": t.seq,
            "seed": spec.seed,
            "spec_hash": spec_hash,
            "generator": GENERATOR_VERSION,
        }
        lines.append(dumps(rec) + "\n")
        stats.add(t.task_id, t.dataset_id)
    write_atomic(Path(dest), lines)
    return stats


# ---------------------------------------------------------------- stats


def corpus_stats(path: str | Path) -> MixtureStats:
    stats = MixtureStats()
    for f in corpus_files(path):
        for _, rec in read_records(f):
            try:
                task_type(rec["task"])
                stats.add(rec["task"], rec["dataset"])
            except (KeyError, ValueError) as exc:
                raise FormatError(f"record without a known task/dataset: {exc}", str(f)) from None
    return stats
