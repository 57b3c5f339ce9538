"""Attention analyses over recorded traces.

Three views of where attention mass goes during a run: the conditional
versus visual split per step, the cosine overlap between adjacent lines'
attention on their shared prefix, and a raster-distance histogram. All of
them consume traces recorded with attention enabled; runs without it raise
``trace-missing-attention``.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import LinearKVError
from .trace import DecodeTrace

SIMILARITY_MEASURE = "cosine"
NORMALIZATION_TOLERANCE = 1e-5


@dataclass(frozen=True)
class Allocation:
    """Mass split of one attention row over conditional vs visual entries."""

    cond_mass: float
    visual_mass: float
    cond_mean: float
    visual_mean: float


def attention_allocation(row, cond_len: int) -> Allocation:
    """Split one normalized attention row at the conditional boundary.

    ``cond_mean`` and ``visual_mean`` are per-token averages within each
    block; an empty visual block (the very first step) has mean zero.
    """
    r = np.asarray(row, dtype=np.float64)
    total = float(r.sum())
    if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
        raise LinearKVError(
            "non-normalized-attention", f"row sums to {total}, expected 1"
        )
    if not 1 <= cond_len <= r.size:
        raise LinearKVError("shape-mismatch", f"cond_len {cond_len} vs row of {r.size}")
    cond_mass = float(r[:cond_len].sum())
    visual_mass = 1.0 - cond_mass
    visual_count = r.size - cond_len
    return Allocation(
        cond_mass=cond_mass,
        visual_mass=visual_mass,
        cond_mean=cond_mass / cond_len,
        visual_mean=visual_mass / visual_count if visual_count else 0.0,
    )


def _require_attention(trace: DecodeTrace):
    if not trace.steps or trace.steps[0].attn is None:
        raise LinearKVError(
            "trace-missing-attention", "run was not recorded with attention enabled"
        )


def _kv_head_of(trace: DecodeTrace, head: int) -> int:
    group = trace.config["heads"] // trace.config["kv_heads"]
    return head // group


def _line_steps(trace: DecodeTrace, line: int):
    return [s for s in trace.steps if s.line == line]


def interline_similarity(trace: DecodeTrace, layer: int, head: int, line: int) -> float:
    """Cosine overlap of two adjacent lines' mean attention on their prefix.

    The shared support is every position below ``(line - 1) * width``: the
    entries that already existed when ``line`` began. Each line's vector is
    its mean attention mass per shared position across the line's steps,
    with zero where an entry was evicted before the later line ran.
    Nonnegative by construction; zero when the supports ended up disjoint.
    """
    _require_attention(trace)
    width = trace.config["width"]
    height = trace.config["height"]
    if not 1 <= line < height:
        raise LinearKVError("line-out-of-range", f"need lines {line} and {line + 1} on the grid")
    cond = trace.config["cond_len"]
    kv_head = _kv_head_of(trace, head)
    limit = (line - 1) * width
    first = _line_steps(trace, line)
    second = _line_steps(trace, line + 1)
    candidates = [p for p in first[0].attn[layer]["kv_positions"][kv_head] if p < limit]
    if not candidates:
        return 0.0
    vectors = []
    for steps in (first, second):
        acc = dict.fromkeys(candidates, 0.0)
        for step in steps:
            rec = step.attn[layer]
            positions = rec["kv_positions"][kv_head]
            row = rec["probs"][head]
            for j, pos in enumerate(positions):
                if pos in acc:
                    acc[pos] += float(row[cond + j])
        vectors.append(np.array([acc[p] / len(steps) for p in candidates]))
    a, b = vectors
    denom = float(np.linalg.norm(a) * np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(a @ b / denom)


@dataclass(frozen=True)
class LocalityProfile:
    """Visual attention mass split into the anchor bucket and exact raster
    distances (query position minus key position, always at least one)."""

    anchor_mass: float
    distance_mass: dict[int, float]
    total_visual_mass: float


def locality_profile(trace: DecodeTrace, layer: int, head: int) -> LocalityProfile:
    """Aggregate one head's visual attention by raster distance.

    Keys below ``n_init`` land in the anchor bucket, everything else in the
    exact-distance histogram; the buckets partition the visual mass.
    """
    _require_attention(trace)
    cond = trace.config["cond_len"]
    n_init = trace.config["n_init"]
    kv_head = _kv_head_of(trace, head)
    anchor = 0.0
    distances: dict[int, float] = {}
    total = 0.0
    for step in trace.steps:
        rec = step.attn[layer]
        positions = np.asarray(rec["kv_positions"][kv_head])
        if positions.size == 0:
            continue
        visual = np.asarray(rec["probs"][head])[cond:]
        total += float(visual.sum())
        anchor_mask = positions < n_init
        anchor += float(visual[anchor_mask].sum())
        far = step.index - positions[~anchor_mask]
        for dist, mass in zip(far.tolist(), visual[~anchor_mask].tolist()):
            distances[dist] = distances.get(dist, 0.0) + mass
    return LocalityProfile(anchor_mass=anchor, distance_mass=distances, total_visual_mass=total)


# -- file emitters -----------------------------------------------------------


def _atomic_write(path: str, text: str) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_allocation_csv(trace: DecodeTrace, path: str) -> str:
    """One row per (layer, head, line): mean cond/visual mass over the line."""
    _require_attention(trace)
    cond = trace.config["cond_len"]
    rows = []
    for layer in range(trace.config["layers"]):
        for head in range(trace.config["heads"]):
            for line in range(1, trace.config["height"] + 1):
                steps = _line_steps(trace, line)
                allocs = [
                    attention_allocation(step.attn[layer]["probs"][head], cond)
                    for step in steps
                ]
                rows.append(
                    [
                        layer,
                        head,
                        line,
                        sum(a.cond_mass for a in allocs) / len(allocs),
                        sum(a.visual_mass for a in allocs) / len(allocs),
                    ]
                )
    return _atomic_write(
        path, _csv_text(["layer", "head", "line", "cond_mass", "visual_mass"], rows)
    )


def write_interline_csv(trace: DecodeTrace, path: str) -> str:
    """One row per (layer, head, line) with the cosine to the next line."""
    rows = []
    for layer in range(trace.config["layers"]):
        for head in range(trace.config["heads"]):
            for line in range(1, trace.config["height"]):
                rows.append(
                    [layer, head, line, interline_similarity(trace, layer, head, line)]
                )
    return _atomic_write(
        path, _csv_text(["layer", "head", "line", SIMILARITY_MEASURE], rows)
    )


def write_locality_csv(trace: DecodeTrace, path: str) -> str:
    """One row per (layer, head, bucket); buckets are 'anchor' or a distance."""
    rows = []
    for layer in range(trace.config["layers"]):
        for head in range(trace.config["heads"]):
            profile = locality_profile(trace, layer, head)
            rows.append([layer, head, "anchor", profile.anchor_mass])
            for dist in sorted(profile.distance_mass):
                rows.append([layer, head, str(dist), profile.distance_mass[dist]])
    return _atomic_write(path, _csv_text(["layer", "head", "bucket", "mass"], rows))


def write_summary_json(trace: DecodeTrace, path: str) -> str:
    """Aggregate allocation/similarity numbers plus the measure metadata."""
    _require_attention(trace)
    cond = trace.config["cond_len"]
    cond_masses = []
    for step in trace.steps:
        for layer in range(trace.config["layers"]):
            for head in range(trace.config["heads"]):
                cond_masses.append(
                    attention_allocation(step.attn[layer]["probs"][head], cond).cond_mass
                )
    sims = [
        interline_similarity(trace, layer, head, line)
        for layer in range(trace.config["layers"])
        for head in range(trace.config["heads"])
        for line in range(1, trace.config["height"])
    ]
    payload = {
        "similarity_measure": SIMILARITY_MEASURE,
        "config": trace.config,
        "mean_cond_mass": sum(cond_masses) / len(cond_masses),
        "mean_interline_similarity": sum(sims) / len(sims) if sims else None,
    }
    return _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
