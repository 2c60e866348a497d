"""Canonical JSON serialization shared by reports, stores, and the CLI."""

from __future__ import annotations

import json


def canonical_dumps(obj) -> str:
    """Stable, diff-friendly JSON: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def canonical_bytes(obj) -> bytes:
    return canonical_dumps(obj).encode("utf-8")
