"""In-place corruptions of a built corpus, one per validator rule."""

from __future__ import annotations

import json
import shutil
from pathlib import Path
from typing import Callable

from fixture_data import BLOCKED

SHARD = "corpus/phrase_grounding__ms-cxr.jsonl"


def _edit_first(out: Path, change: Callable[[dict], None], shard: str = SHARD) -> None:
    path = out / shard
    lines = path.read_text(encoding="utf-8").splitlines()
    rec = json.loads(lines[0])
    change(rec)
    lines[0] = json.dumps(rec, sort_keys=True, separators=(",", ":"))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def slot_mismatch(out: Path) -> None:
    _edit_first(out, lambda r: r["images"].append(dict(r["images"][0], image_id="extra")))


def invalid_box(out: Path) -> None:
    def change(r):
        r["conversation"][-1]["content"] = "[75, 25, 25, 75]"

    _edit_first(out, change)


def assistant_without_user(out: Path) -> None:
    def change(r):
        del r["conversation"][1]
        r["targets"] = [True]

    _edit_first(out, change)


def no_target(out: Path) -> None:
    def change(r):
        r["targets"] = [False] * len(r["targets"])

    _edit_first(out, change)


def blocklisted_image(out: Path) -> None:
    def change(r):
        r["images"][0]["image_id"] = BLOCKED[0]

    _edit_first(out, change)


def template_tamper(out: Path) -> None:
    path = out / "templates.yaml"
    path.write_text(path.read_text(encoding="utf-8").replace("Provide the bounding", "Give the bounding"), encoding="utf-8")


FAULTS: dict[str, Callable[[Path], None]] = {
    "slot mismatch": slot_mismatch,
    "invalid box": invalid_box,
    "assistant without user": assistant_without_user,
    "no target": no_target,
    "blocklisted image": blocklisted_image,
    "template tamper": template_tamper,
}


def corrupted_copy(out: Path, dest: Path, fault: str) -> Path:
    shutil.copytree(out, dest)
    FAULTS[fault](dest)
    return dest
