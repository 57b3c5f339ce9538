"""Line-guided progressive cache compression.

Compression runs at end-of-line synchronization points once a head's store
has filled its budget: partition the store into anchor / mid / recent
regions, score the mid region, evict exactly one line's worth of the
lowest-scoring entries, and leave one line of headroom for the next line.

The default scorer replays the queries collected while the current line was
generated against the mid-region keys. Each key's saliency is its mean
attention mass under a softmax restricted to the mid region, so the scores
form a probability vector over eviction candidates. Keys the just-finished
line did not look at are the ones dropped before the next line starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cache import RegionPartition, VisualKVCache
from .errors import LinearKVError
from .grid import BudgetConfig, GridSpec


@dataclass(frozen=True)
class EvictionEvent:
    """One head's eviction at one line boundary, in raster positions."""

    line: int
    layer: int
    head: int
    evicted_positions: list[int]
    post_len: int


class GuideQueue:
    """Per (layer, kv head) queries of the line currently being generated.

    Holds at most ``width`` entries and is cleared at every line boundary.
    With grouped-query attention each kv head receives the rows of all query
    heads in its group, so one generated token contributes
    ``heads // kv_heads`` rows.
    """

    def __init__(self, layers: int, kv_heads: int, width: int):
        self.width = width
        self._blocks: dict[tuple[int, int], list[np.ndarray]] = {
            (l, h): [] for l in range(layers) for h in range(kv_heads)
        }

    def push(self, layer: int, head: int, rows) -> None:
        blocks = self._blocks[layer, head]
        assert len(blocks) < self.width, "guide queue holds at most one line of queries"
        blocks.append(np.atleast_2d(np.asarray(rows, dtype=np.float64)))

    def count(self, layer: int, head: int) -> int:
        return len(self._blocks[layer, head])

    def matrix(self, layer: int, head: int) -> np.ndarray:
        blocks = self._blocks[layer, head]
        if not blocks:
            raise LinearKVError("guide-queue-empty", f"layer {layer} head {head}")
        return np.vstack(blocks)

    def clear(self) -> None:
        for blocks in self._blocks.values():
            blocks.clear()


def saliency(guide_rows, mid_keys, scale: float | None = None) -> np.ndarray:
    """Mean attention mass each mid-region key receives from the guide rows.

    The softmax runs over the mid-region keys only, which makes the result a
    probability vector: elementwise in [0, 1] and summing to one regardless
    of how many guide rows vote.
    """
    guide = np.atleast_2d(np.asarray(guide_rows, dtype=np.float64))
    keys = np.atleast_2d(np.asarray(mid_keys, dtype=np.float64))
    if guide.shape[0] == 0:
        raise LinearKVError("guide-queue-empty", "no guide queries to score with")
    if keys.shape[0] == 0:
        raise LinearKVError("empty-mid-region", "no mid-region keys to score")
    if guide.shape[1] != keys.shape[1]:
        raise LinearKVError(
            "shape-mismatch", f"guide width {guide.shape[1]} vs key width {keys.shape[1]}"
        )
    if scale is None:
        scale = 1.0 / math.sqrt(guide.shape[1])
    if not (np.isfinite(guide).all() and np.isfinite(keys).all()):
        raise LinearKVError("non-finite-input", "guide rows or mid keys contain NaN or Inf")
    # one logits allocation for the whole scoring pass; the softmax runs
    # in place with the same operation order as softmax_rows
    logits = (guide * scale) @ keys.T
    np.subtract(logits, logits.max(axis=1, keepdims=True), out=logits)
    np.exp(logits, out=logits)
    logits /= logits.sum(axis=1, keepdims=True)
    return logits.mean(axis=0)


def bottom_k(scores, k: int) -> np.ndarray:
    """Indices of the ``k`` smallest scores, returned in ascending index order.

    Ties resolve to the smaller index; in store order that means the older
    raster position goes first.
    """
    s = np.asarray(scores, dtype=np.float64)
    assert k >= 0
    if k > s.size:
        raise LinearKVError(
            "insufficient-mid-tokens", f"need {k} eviction candidates, have {s.size}"
        )
    order = np.argsort(s, kind="stable")
    return np.sort(order[:k])


def should_compress(cfg: BudgetConfig, spec: GridSpec, line: int, head_len: int) -> bool:
    """True when the end of ``line`` (1-based) is a compression point.

    Never under a full budget, never before the store has filled, and never
    after the final line since nothing is generated next.
    """
    return cfg.rho < 1 and head_len >= cfg.budget and line < spec.height


def compress_end_of_line(
    cache: VisualKVCache,
    spec: GridSpec,
    cfg: BudgetConfig,
    line: int,
    select,
    on_compact=None,
) -> list[EvictionEvent]:
    """Run one compression event over every (layer, kv head).

    ``select(layer, head, partition)`` must return exactly one line's worth
    of store indices drawn from the partition's mid region;
    ``on_compact(layer, head, evict_idx)`` lets scorers with per-entry state
    shrink in lockstep. Heads are partitioned independently, so eviction
    sets differ across heads while every post-compaction length equals
    budget minus one line.
    """
    width = spec.width
    events = []
    for layer, head in cache.heads():
        part = cache.partition(layer, head, spec, cfg, line)
        if part.mid_idx.size < width:
            raise LinearKVError(
                "insufficient-mid-tokens",
                f"mid region holds {part.mid_idx.size} entries, need {width} "
                f"(layer {layer}, head {head}, line {line})",
            )
        evict = np.asarray(select(layer, head, part), dtype=np.int64)
        assert evict.size == width, "selection must evict exactly one line"
        positions = cache.positions(layer, head)[evict]
        cache.compact(layer, head, evict, part)
        if on_compact is not None:
            on_compact(layer, head, evict)
        events.append(
            EvictionEvent(
                line=line,
                layer=layer,
                head=head,
                evicted_positions=sorted(int(p) for p in positions),
                post_len=cache.visual_len(layer, head),
            )
        )
    return events


class AttentionMassTracker:
    """Running attention mass received by each cached visual entry.

    Masses are raw sums from each entry's creation onward, with no age
    normalization, and shrink in lockstep with the store on compaction.
    """

    def __init__(self, layers: int, kv_heads: int):
        self._mass = {
            (l, h): np.zeros(16) for l in range(layers) for h in range(kv_heads)
        }
        self._len = {(l, h): 0 for l in range(layers) for h in range(kv_heads)}

    def add(self, layer: int, head: int, visual_mass: np.ndarray) -> None:
        n = self._len[layer, head]
        assert visual_mass.shape == (n,), "mass row must align with the store"
        self._mass[layer, head][:n] += visual_mass

    def on_append(self, layer: int, head: int) -> None:
        n = self._len[layer, head]
        buf = self._mass[layer, head]
        if n == buf.shape[0]:
            grown = np.zeros(2 * n)
            grown[:n] = buf
            self._mass[layer, head] = buf = grown
        buf[n] = 0.0
        self._len[layer, head] = n + 1

    def on_compact(self, layer: int, head: int, evict_idx) -> None:
        n = self._len[layer, head]
        keep = np.ones(n, dtype=bool)
        keep[np.asarray(evict_idx, dtype=np.int64)] = False
        buf = self._mass[layer, head]
        survivors = buf[:n][keep]
        buf[: survivors.size] = survivors
        self._len[layer, head] = survivors.size

    def mass(self, layer: int, head: int) -> np.ndarray:
        return self._mass[layer, head][: self._len[layer, head]]


def attacc_scores(history: np.ndarray, mid_idx) -> np.ndarray:
    """Accumulated attention restricted to the mid region.

    A drop-in replacement for :func:`saliency` scores; note the values are
    raw masses, not a normalized distribution.
    """
    return np.asarray(history, dtype=np.float64)[np.asarray(mid_idx, dtype=np.int64)]


class EvictionPolicy:
    """Owns per-stream scoring state and the end-of-line decision.

    The decoder feeds observations each step (queries and/or attention
    rows, depending on the ``wants_*`` flags) and calls
    :meth:`end_of_line` after each line's last append.
    """

    name = "?"
    wants_queries = False
    wants_attention = False

    def bind(
        self,
        layers: int,
        kv_heads: int,
        group_size: int,
        spec: GridSpec,
        cfg: BudgetConfig,
        seed: int,
    ) -> None:
        self.layers = layers
        self.kv_heads = kv_heads
        self.group_size = group_size
        self.spec = spec
        self.cfg = cfg
        self.seed = seed

    def observe_queries(self, layer: int, head: int, rows) -> None:
        pass

    def observe_attention(self, layer: int, head: int, visual_mass: np.ndarray) -> None:
        pass

    def notify_append(self, layer: int, head: int) -> None:
        pass

    def end_of_line(self, cache: VisualKVCache, line: int) -> list[EvictionEvent] | None:
        """Compress when due; returns the eviction events, else None."""
        head_len = next(cache.visual_len(l, h) for l, h in cache.heads())
        if not should_compress(self.cfg, self.spec, line, head_len):
            self.line_boundary()
            return None
        events = compress_end_of_line(
            cache,
            self.spec,
            self.cfg,
            line,
            select=lambda layer, head, part: self.select(cache, line, layer, head, part),
            on_compact=self.shrink_state,
        )
        self.line_boundary()
        return events

    def select(
        self,
        cache: VisualKVCache,
        line: int,
        layer: int,
        head: int,
        part: RegionPartition,
    ) -> np.ndarray:
        raise NotImplementedError

    def shrink_state(self, layer: int, head: int, evict_idx) -> None:
        pass

    def line_boundary(self) -> None:
        pass


class FullCachePolicy(EvictionPolicy):
    """Reference behaviour: keep every entry, never compress."""

    name = "full"

    def end_of_line(self, cache, line):
        return None


class LineGuidedPolicy(EvictionPolicy):
    """Evict the mid-region keys least attended by the current line's queries."""

    name = "lineattn"
    wants_queries = True

    def bind(self, layers, kv_heads, group_size, spec, cfg, seed):
        super().bind(layers, kv_heads, group_size, spec, cfg, seed)
        self.guide = GuideQueue(layers, kv_heads, spec.width)

    def observe_queries(self, layer, head, rows):
        self.guide.push(layer, head, rows)

    def select(self, cache, line, layer, head, part):
        guide = self.guide.matrix(layer, head)
        scores = saliency(guide, cache.keys(layer, head)[part.mid_idx])
        return part.mid_idx[bottom_k(scores, self.spec.width)]

    def line_boundary(self):
        self.guide.clear()


class AccumulatedAttentionPolicy(EvictionPolicy):
    """Evict the mid-region entries with the least lifetime attention mass.

    Registered under two names: ``attacc`` as the selection-swap arm of the
    line-guided pipeline and ``h2o`` as the heavy-hitter baseline. Both are
    the same raw accumulated-mass rule.
    """

    wants_attention = True

    def __init__(self, name: str = "attacc"):
        self.name = name

    def bind(self, layers, kv_heads, group_size, spec, cfg, seed):
        super().bind(layers, kv_heads, group_size, spec, cfg, seed)
        self.tracker = AttentionMassTracker(layers, kv_heads)

    def observe_attention(self, layer, head, visual_mass):
        self.tracker.add(layer, head, visual_mass)

    def notify_append(self, layer, head):
        self.tracker.on_append(layer, head)

    def select(self, cache, line, layer, head, part):
        scores = attacc_scores(self.tracker.mass(layer, head), part.mid_idx)
        return part.mid_idx[bottom_k(scores, self.spec.width)]

    def shrink_state(self, layer, head, evict_idx):
        self.tracker.on_compact(layer, head, evict_idx)
