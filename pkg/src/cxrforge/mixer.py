"""Deterministic weighted sampling over (task, dataset) pools.

Tickets come from a stateless counter-based generator: the draw for ticket
``i`` depends only on ``(seed, i)``, so any index range can be produced
independently and streams are identical across runs and platforms.

Generator ``splitmix64-ctr/1`` (frozen; changing it changes every stream)::

    key      = splitmix64(seed mod 2**64)
    draw(i, lane) = splitmix64(key XOR splitmix64((4*i + lane) mod 2**64))
    uniform  = (draw >> 11) * 2**-53

Lane 0 picks the pool by inverse CDF over the computed probabilities; lane 1
picks a record index as ``(draw * pool_size) >> 64``.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Literal, Mapping, Sequence

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import MixtureError
from .tasks import TASK_TYPES, TaskType, task_type

GENERATOR_VERSION = "splitmix64-ctr/1"
_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


class CounterRNG:
    def __init__(self, seed: int) -> None:
        self.key = splitmix64(seed & _MASK)

    def draw(self, index: int, lane: int = 0) -> int:
        return splitmix64(self.key ^ splitmix64((4 * index + lane) & _MASK))

    def uniform(self, index: int, lane: int = 0) -> float:
        return (self.draw(index, lane) >> 11) * (1.0 / (1 << 53))

    def below(self, n: int, index: int, lane: int) -> int:
        return (self.draw(index, lane) * n) >> 64


class Strategy(str, Enum):
    EXPLICIT = "explicit"
    PER_TASK_DATASET = "per_task_dataset"  # D1
    PER_SIZE = "per_size"  # D2
    PER_TASK_TYPE_THEN_TASK_DATASET = "per_task_type_then_task_dataset"  # D3
    PER_TASK_TYPE_THEN_SIZE = "per_task_type_then_size"  # D4


STRATEGY_ALIASES = {
    "D1": Strategy.PER_TASK_DATASET,
    "D2": Strategy.PER_SIZE,
    "D3": Strategy.PER_TASK_TYPE_THEN_TASK_DATASET,
    "D4": Strategy.PER_TASK_TYPE_THEN_SIZE,
}


@dataclass(frozen=True)
class MixtureEntry:
    task_id: str
    dataset_id: str
    weight: float = 1.0
    pool_size: int = 0

    @property
    def key(self) -> tuple[str, str]:
        return (self.task_id, self.dataset_id)


@dataclass(frozen=True)
class MixtureSpec:
    strategy: Strategy
    entries: tuple[MixtureEntry, ...]
    seed: int = 0
    task_type_weights: Mapping[TaskType, float] | None = None
    mode: Literal["with_replacement", "epoch"] = "with_replacement"

    def __post_init__(self) -> None:
        if not self.entries:
            raise MixtureError("mixture has no entries")
        keys = [e.key for e in self.entries]
        if len(set(keys)) != len(keys):
            raise MixtureError("duplicate (task, dataset) entries")
        for e in self.entries:
            if e.task_id not in TASK_TYPES:
                raise MixtureError(f"unknown task {e.task_id!r}")
            if not math.isfinite(e.weight) or e.weight < 0:
                raise MixtureError(f"weight for {e.key} must be finite and non-negative")
            if e.pool_size < 0:
                raise MixtureError(f"pool size for {e.key} is negative")
        if self.task_type_weights is not None:
            for v in self.task_type_weights.values():
                if not math.isfinite(v) or v < 0:
                    raise MixtureError("task type weights must be finite and non-negative")

    def with_pool_sizes(self, sizes: Mapping[tuple[str, str], int]) -> "MixtureSpec":
        entries = tuple(
            MixtureEntry(e.task_id, e.dataset_id, e.weight, sizes.get(e.key, 0)) for e in self.entries
        )
        return MixtureSpec(self.strategy, entries, self.seed, self.task_type_weights, self.mode)

    def with_seed(self, seed: int) -> "MixtureSpec":
        return MixtureSpec(self.strategy, self.entries, seed, self.task_type_weights, self.mode)

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "seed": self.seed,
            "mode": self.mode,
            "task_type_weights": (
                {k.value: v for k, v in sorted(self.task_type_weights.items())} if self.task_type_weights else None
            ),
            "entries": [
                {"task": e.task_id, "dataset": e.dataset_id, "weight": e.weight, "pool_size": e.pool_size}
                for e in self.entries
            ],
        }

    def digest(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------- spec files


class _EntryModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    task: str
    dataset: str
    weight: float = 1.0
    pool_size: int = Field(default=0, ge=0)


class _SpecModel(BaseModel):
    model_config = ConfigDict(extra="forbid")
    strategy: str
    seed: int = 0
    mode: Literal["with_replacement", "epoch"] = "with_replacement"
    task_type_weights: dict[str, float] | None = None
    entries: list[_EntryModel]


def spec_from_mapping(doc: Mapping[str, object]) -> MixtureSpec:
    try:
        m = _SpecModel.model_validate(doc)
    except ValidationError as exc:
        raise MixtureError(f"invalid mixture spec: {exc}") from None
    strategy = STRATEGY_ALIASES.get(m.strategy.upper()) if m.strategy.upper() in STRATEGY_ALIASES else None
    if strategy is None:
        try:
            strategy = Strategy(m.strategy)
        except ValueError:
            raise MixtureError(f"unknown strategy {m.strategy!r}") from None
    ttw = None
    if m.task_type_weights is not None:
        try:
            ttw = {TaskType(k): float(v) for k, v in m.task_type_weights.items()}
        except ValueError as exc:
            raise MixtureError(str(exc)) from None
    entries = tuple(MixtureEntry(e.task, e.dataset, e.weight, e.pool_size) for e in m.entries)
    return MixtureSpec(strategy, entries, m.seed, ttw, m.mode)


def load_spec(path: str | Path) -> MixtureSpec:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise MixtureError(f"{path}: mixture spec must be a mapping")
    return spec_from_mapping(doc)


def table_ratio_spec(seed: int = 0) -> MixtureSpec:
    """The published per-task-dataset weight table, with training-set sizes as pools."""
    raw = resources.files("cxrforge").joinpath("data/mixtures/table_ratio.yaml").read_text(encoding="utf-8")
    return spec_from_mapping(yaml.safe_load(raw)).with_seed(seed)


# ---------------------------------------------------------------- weights


def _inner(entries: Sequence[MixtureEntry], by_size: bool) -> list[float]:
    if by_size:
        total = math.fsum(e.pool_size for e in entries)
        if total <= 0:
            raise MixtureError("per-size weighting needs positive pool sizes")
        return [e.pool_size / total for e in entries]
    return [1.0 / len(entries)] * len(entries)


def compute_weights(spec: MixtureSpec) -> dict[tuple[str, str], float]:
    """Sampling probability of each (task, dataset) entry, in entry order."""
    entries = spec.entries
    s = spec.strategy
    if s is Strategy.EXPLICIT:
        total = math.fsum(e.weight for e in entries)
        if total <= 0:
            raise MixtureError("all mixture weights are zero")
        probs = [e.weight / total for e in entries]
    elif s is Strategy.PER_TASK_DATASET:
        probs = _inner(entries, by_size=False)
    elif s is Strategy.PER_SIZE:
        probs = _inner(entries, by_size=True)
    else:
        by_size = s is Strategy.PER_TASK_TYPE_THEN_SIZE
        groups: dict[TaskType, list[int]] = {}
        for i, e in enumerate(entries):
            groups.setdefault(task_type(e.task_id), []).append(i)
        if spec.task_type_weights:
            tw = {t: spec.task_type_weights.get(t, 0.0) for t in groups}
        else:
            tw = {t: 1.0 for t in groups}
        total = math.fsum(tw.values())
        if total <= 0:
            raise MixtureError("task type weights are all zero")
        probs = [0.0] * len(entries)
        for t, idx in groups.items():
            inner = _inner([entries[i] for i in idx], by_size)
            for i, p in zip(idx, inner):
                probs[i] = tw[t] / total * p
    return {e.key: p for e, p in zip(entries, probs)}


# ---------------------------------------------------------------- tickets


@dataclass(frozen=True)
class SampleTicket:
    seq: int
    task_id: str
    dataset_id: str
    record_index: int

    def to_json(self) -> dict:
        return {"seq": self.seq, "task": self.task_id, "dataset": self.dataset_id, "record": self.record_index}


class _Sampler:
    def __init__(self, spec: MixtureSpec) -> None:
        self.spec = spec
        self.entries = spec.entries
        weights = compute_weights(spec)
        self.probs = [weights[e.key] for e in self.entries]
        self.cum: list[float] = []
        acc = 0.0
        for p in self.probs:
            acc += p
            self.cum.append(acc)
        self.last_positive = max(i for i, p in enumerate(self.probs) if p > 0)
        self.rng = CounterRNG(spec.seed)
        self._seen: Counter[int] = Counter()
        self._perms: dict[tuple[int, int], list[int]] = {}

    def pick_entry(self, i: int) -> int:
        u = self.rng.uniform(i, 0) * self.cum[-1]
        k = bisect.bisect_right(self.cum, u)
        return min(k, self.last_positive)

    def _perm(self, entry: int, epoch: int, n: int) -> list[int]:
        key = (entry, epoch)
        if key not in self._perms:
            rng = CounterRNG(splitmix64(self.spec.seed ^ splitmix64(entry << 32 | epoch)))
            arr = list(range(n))
            for j in range(n - 1, 0, -1):
                k = rng.below(j + 1, j, 2)
                arr[j], arr[k] = arr[k], arr[j]
            self._perms[key] = arr
        return self._perms[key]

    def ticket(self, i: int) -> SampleTicket:
        k = self.pick_entry(i)
        e = self.entries[k]
        if e.pool_size <= 0:
            raise MixtureError(f"ticket {i} references empty pool {e.key}")
        if self.spec.mode == "epoch":
            c = self._seen[k]
            self._seen[k] += 1
            epoch, pos = divmod(c, e.pool_size)
            rec = self._perm(k, epoch, e.pool_size)[pos]
        else:
            rec = self.rng.below(e.pool_size, i, 1)
        return SampleTicket(i, e.task_id, e.dataset_id, rec)


def iter_stream(spec: MixtureSpec, n: int, start: int = 0) -> Iterator[SampleTicket]:
    if n < 0:
        raise MixtureError("ticket count must be non-negative")
    if n == 0:
        return
    sampler = _Sampler(spec)
    if spec.mode == "epoch" and start:
        raise MixtureError("epoch mode streams must start at index 0")
    for i in range(start, start + n):
        yield sampler.ticket(i)


def sample_stream(spec: MixtureSpec, n: int, start: int = 0) -> list[SampleTicket]:
    """Tickets ``start .. start+n-1`` of the spec's deterministic stream."""
    return list(iter_stream(spec, n, start))


# ---------------------------------------------------------------- stats


@dataclass
class MixtureStats:
    total: int = 0
    by_task: Counter = field(default_factory=Counter)
    by_dataset: Counter = field(default_factory=Counter)
    by_task_type: Counter = field(default_factory=Counter)
    by_pair: Counter = field(default_factory=Counter)

    def add(self, task_id: str, dataset_id: str, n: int = 1) -> None:
        self.total += n
        self.by_task[task_id] += n
        self.by_dataset[dataset_id] += n
        self.by_task_type[task_type(task_id).value] += n
        self.by_pair[f"{task_id}/{dataset_id}"] += n

    def merge(self, other: "MixtureStats") -> "MixtureStats":
        out = MixtureStats(self.total + other.total)
        for name in ("by_task", "by_dataset", "by_task_type", "by_pair"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        return out

    def frequencies(self, counter: Counter) -> dict[str, float]:
        if self.total == 0:
            return {k: 0.0 for k in counter}
        return {k: v / self.total for k, v in sorted(counter.items())}

    def to_json(self) -> dict:
        out: dict = {"total": self.total}
        for name in ("by_task_type", "by_task", "by_dataset", "by_pair"):
            c = getattr(self, name)
            out[name] = {
                k: {"count": c[k], "frequency": (c[k] / self.total if self.total else 0.0)} for k in sorted(c)
            }
        if self.total == 0:
            out["by_task_type"] = {t.value: {"count": 0, "frequency": 0.0} for t in TaskType}
        return out

    def rows(self) -> list[tuple[str, str, int, float]]:
        """Flat (group, key, count, frequency) rows for table output."""
        data = self.to_json()
        rows = [("total", "all", self.total, 1.0 if self.total else 0.0)]
        for group in ("by_task_type", "by_task", "by_dataset", "by_pair"):
            for k, v in data[group].items():
                rows.append((group, k, v["count"], v["frequency"]))
        return rows


def mixture_stats(tickets: Iterable[SampleTicket | tuple[str, str]]) -> MixtureStats:
    stats = MixtureStats()
    for t in tickets:
        if isinstance(t, SampleTicket):
            stats.add(t.task_id, t.dataset_id)
        else:
            stats.add(t[0], t[1])
    return stats
