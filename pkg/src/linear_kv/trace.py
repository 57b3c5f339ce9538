"""Decode traces: in-memory records plus the versioned JSON-lines layout.

File layout, one JSON object per line, in chronological order::

    {"record": "header", "schema": 1, "config": {...}, "rng": "numpy-pcg64"}
    {"record": "step", "i": 0, "line": 1, "token": 17, "span": 8,
     "visual_len": 1, "step_ns": 52100, "attn": {...}?}
    {"record": "eviction", "line": 3, "layer": 0, "head": 0,
     "evicted_positions": [...], "post_len": 16}
    {"record": "summary", "final_hidden": [...], "cache": {...}}

Eviction records follow their line's last step. ``step_ns`` is the only
timing field anywhere in the file; :meth:`DecodeTrace.canonical_body` drops
it so byte comparison between runs ignores wall-clock noise. Headers carry
no clock data at all.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import LinearKVError
from .policy import EvictionEvent

TRACE_SCHEMA = 1
TIMING_FIELDS = ("step_ns",)


@dataclass
class StepRecord:
    """One decode step. ``span`` counts the entries attended per head
    (conditional plus visual, before this step's append); ``visual_len`` is
    the per-head store length after the append and any compression."""

    index: int
    line: int
    token: int
    span: int
    visual_len: int
    step_ns: int | None = None
    attn: list | None = None


def _attn_to_json(attn):
    out = []
    for layer_rec in attn:
        out.append(
            {
                "kv_positions": [list(map(int, p)) for p in layer_rec["kv_positions"]],
                "probs": [np.asarray(row).tolist() for row in layer_rec["probs"]],
            }
        )
    return out


def _attn_from_json(attn):
    out = []
    for layer_rec in attn:
        out.append(
            {
                "kv_positions": [list(p) for p in layer_rec["kv_positions"]],
                "probs": [np.asarray(row, dtype=np.float64) for row in layer_rec["probs"]],
            }
        )
    return out


@dataclass
class DecodeTrace:
    """Everything one generation run produced, reproducible from its header."""

    header: dict
    steps: list[StepRecord] = field(default_factory=list)
    evictions: list[EvictionEvent] = field(default_factory=list)
    final_hidden: np.ndarray | None = None
    cache_snapshot: dict | None = None

    @property
    def config(self) -> dict:
        return self.header["config"]

    def records(self):
        """All records as dicts, in file order."""
        yield {"record": "header", "schema": TRACE_SCHEMA, **self.header}
        by_line: dict[int, list[EvictionEvent]] = {}
        for ev in self.evictions:
            by_line.setdefault(ev.line, []).append(ev)
        width = self.config["width"]
        for step in self.steps:
            rec = {
                "record": "step",
                "i": step.index,
                "line": step.line,
                "token": step.token,
                "span": step.span,
                "visual_len": step.visual_len,
                "step_ns": step.step_ns,
            }
            if step.attn is not None:
                rec["attn"] = _attn_to_json(step.attn)
            yield rec
            if (step.index + 1) % width == 0:
                for ev in by_line.get(step.line, ()):
                    yield {
                        "record": "eviction",
                        "line": ev.line,
                        "layer": ev.layer,
                        "head": ev.head,
                        "evicted_positions": ev.evicted_positions,
                        "post_len": ev.post_len,
                    }
        summary = {"record": "summary"}
        if self.final_hidden is not None:
            summary["final_hidden"] = np.asarray(self.final_hidden).tolist()
        if self.cache_snapshot is not None:
            summary["cache"] = self.cache_snapshot
        yield summary

    def dumps(self) -> str:
        return "".join(
            json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"
            for rec in self.records()
        )

    def canonical_body(self) -> bytes:
        """Serialized records with every timing field removed."""
        lines = []
        for rec in self.records():
            clean = {k: v for k, v in rec.items() if k not in TIMING_FIELDS}
            lines.append(json.dumps(clean, sort_keys=True, separators=(",", ":")))
        return ("\n".join(lines) + "\n").encode()

    def write(self, path: str) -> str:
        """Atomic write: temp file in the target directory, then rename."""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(self.dumps())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    @classmethod
    def read(cls, path: str) -> "DecodeTrace":
        header = None
        steps: list[StepRecord] = []
        evictions: list[EvictionEvent] = []
        final_hidden = None
        snapshot = None
        with open(path) as fh:
            for raw in fh:
                raw = raw.strip()
                if not raw:
                    continue
                rec = json.loads(raw)
                kind = rec.get("record")
                if header is None and kind != "header":
                    raise LinearKVError("trace-missing-header", path)
                if kind == "header":
                    if rec.get("schema") != TRACE_SCHEMA:
                        raise LinearKVError(
                            "trace-schema-mismatch",
                            f"schema {rec.get('schema')} != {TRACE_SCHEMA}",
                        )
                    header = {k: v for k, v in rec.items() if k not in ("record", "schema")}
                elif kind == "step":
                    steps.append(
                        StepRecord(
                            index=rec["i"],
                            line=rec["line"],
                            token=rec["token"],
                            span=rec["span"],
                            visual_len=rec["visual_len"],
                            step_ns=rec.get("step_ns"),
                            attn=_attn_from_json(rec["attn"]) if "attn" in rec else None,
                        )
                    )
                elif kind == "eviction":
                    evictions.append(
                        EvictionEvent(
                            line=rec["line"],
                            layer=rec["layer"],
                            head=rec["head"],
                            evicted_positions=list(rec["evicted_positions"]),
                            post_len=rec["post_len"],
                        )
                    )
                elif kind == "summary":
                    if "final_hidden" in rec:
                        final_hidden = np.asarray(rec["final_hidden"], dtype=np.float64)
                    snapshot = rec.get("cache")
        if header is None:
            raise LinearKVError("trace-missing-header", path)
        return cls(header, steps, evictions, final_hidden, snapshot)
