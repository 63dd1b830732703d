"""Shared helpers: stable seeding, hashing, atomic file writes."""
from __future__ import annotations

import hashlib
import json
import os
import random
import re
import tempfile
from pathlib import Path
from typing import Any, Iterable


def stable_digest(*parts: Any) -> str:
    """sha256 hex digest of the parts, stable across runs and platforms.

    Parts are coerced through canonical JSON (sorted keys), so dicts and
    lists participate without ordering surprises. Never uses ``hash()``.
    """
    h = hashlib.sha256()
    for part in parts:
        h.update(json.dumps(part, sort_keys=True, ensure_ascii=False,
                            default=str).encode("utf-8"))
        h.update(b"\x1f")
    return h.hexdigest()


def stable_rng(*parts: Any) -> random.Random:
    """A ``random.Random`` seeded deterministically from the parts."""
    return random.Random(int(stable_digest(*parts)[:16], 16))


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write text via a temp file and rename, so readers never see partials."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_jsonl(records: Iterable[dict]) -> str:
    """Serialize records one per line, preserving insertion field order."""
    lines = [json.dumps(r, ensure_ascii=False) for r in records]
    return "\n".join(lines) + ("\n" if lines else "")


def load_jsonl(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]


_WORD_RE = re.compile(r"[a-z0-9]+(?:[-'][a-z0-9]+)*")


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; hyphenated compounds stay single tokens."""
    return _WORD_RE.findall(text.lower())
