"""Ordered message log with per-channel visibility rules.

Every record is a plain dict serialized with sorted keys, so identical runs
produce identical bytes. Records on anonymous channels never carry a sender.
"""
from __future__ import annotations

import json
from typing import Any, Iterable

import numpy as np

from .bits import BitString

AUTHENTICATED = "authenticated"
ANON_CLASSICAL = "anonymous-classical"
ANON_QUANTUM = "anonymous-quantum"
PUBLIC = "public-broadcast"
LOCAL = "local"  # a party's private bookkeeping; never leaves that party

CHANNELS = (AUTHENTICATED, ANON_CLASSICAL, ANON_QUANTUM, PUBLIC, LOCAL)
ANONYMOUS = (ANON_CLASSICAL, ANON_QUANTUM)


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, BitString):
        return obj.to_json()
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


class Transcript:
    def __init__(self, context: dict | None = None):
        self.records: list[dict] = []
        self.context = dict(context or {})

    def record(self, step: str, channel: str, payload: dict | None = None, *,
               sender: str | None = None, recipient: str | None = None, **extra) -> dict:
        if channel not in CHANNELS:
            raise ValueError(f"unknown channel {channel!r}")
        rec = {"seq": len(self.records), **self.context, **extra, "step": step, "channel": channel}
        if sender is not None and channel not in ANONYMOUS:
            rec["sender"] = sender
        if recipient is not None:
            rec["recipient"] = recipient
        rec["payload"] = to_jsonable(payload or {})
        self.records.append(rec)
        return rec

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def dumps(self) -> str:
        return "".join(dumps_record(r) + "\n" for r in self.records)


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def load_jsonl(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def visible_to(records: Iterable[dict], role: str) -> list[dict]:
    """Records a given role observes: its own sends/receipts, its local state, and public broadcasts."""
    out = []
    for r in records:
        ch = r["channel"]
        if ch == PUBLIC:
            out.append(r)
        elif ch == LOCAL:
            if r.get("sender") == role:
                out.append(r)
        elif r.get("recipient") == role or r.get("sender") == role:
            out.append(r)
    return out


def public_records(records: Iterable[dict]) -> list[dict]:
    return [r for r in records if r["channel"] == PUBLIC]
