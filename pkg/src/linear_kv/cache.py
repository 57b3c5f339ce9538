"""Per-head visual KV store with raster positions and physical compaction.

Every (layer, kv head) pair owns an independent store, so eviction choices
can diverge across heads while lengths stay uniform. Conditional entries
live in a separate immutable block: no eviction index can reach them.
Positions are original raster indices and stay strictly increasing through
any append/compact sequence, which is what lets the partition logic reason
in positions rather than ages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LinearKVError
from .grid import BudgetConfig, GridSpec

SNAPSHOT_SCHEMA = 1


@dataclass(frozen=True)
class RegionPartition:
    """Store indices split into anchor block, evictable mid region, and
    recent window. The three index sets are disjoint and cover the store."""

    init_idx: np.ndarray
    mid_idx: np.ndarray
    rec_idx: np.ndarray

    @property
    def size(self) -> int:
        return self.init_idx.size + self.mid_idx.size + self.rec_idx.size


class _HeadStore:
    __slots__ = ("keys", "values", "positions", "length")

    def __init__(self, head_dim: int, capacity: int):
        self.keys = np.empty((capacity, head_dim))
        self.values = np.empty((capacity, head_dim))
        self.positions = np.empty(capacity, dtype=np.int64)
        self.length = 0

    def ensure(self, needed: int) -> None:
        cap = self.positions.shape[0]
        if needed <= cap:
            return
        new_cap = max(needed, 2 * cap)
        for name in ("keys", "values"):
            old = getattr(self, name)
            grown = np.empty((new_cap, old.shape[1]))
            grown[: self.length] = old[: self.length]
            setattr(self, name, grown)
        grown_pos = np.empty(new_cap, dtype=np.int64)
        grown_pos[: self.length] = self.positions[: self.length]
        self.positions = grown_pos


class VisualKVCache:
    """Compacted key/value store for the visual tokens of one decode stream."""

    def __init__(self, layers: int, kv_heads: int, head_dim: int, capacity: int = 16):
        self.layers = layers
        self.kv_heads = kv_heads
        self.head_dim = head_dim
        self._stores = {
            (l, h): _HeadStore(head_dim, capacity)
            for l in range(layers)
            for h in range(kv_heads)
        }
        self._cond: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
        self._cond_len: int | None = None

    # -- conditional block ---------------------------------------------------

    def set_conditional(self, layer: int, head: int, keys, values) -> None:
        """Install the immutable conditional block for one head. Once per head."""
        if (layer, head) in self._cond:
            raise LinearKVError("conditional-already-set", f"layer {layer} head {head}")
        k = np.array(keys, dtype=np.float64)
        v = np.array(values, dtype=np.float64)
        if k.ndim != 2 or k.shape != v.shape or k.shape[1] != self.head_dim:
            raise LinearKVError("shape-mismatch", f"conditional block {k.shape} vs {v.shape}")
        if self._cond_len is None:
            self._cond_len = k.shape[0]
        elif k.shape[0] != self._cond_len:
            raise LinearKVError("shape-mismatch", "conditional length differs across heads")
        k.setflags(write=False)
        v.setflags(write=False)
        self._cond[layer, head] = (k, v)

    def conditional(self, layer: int, head: int) -> tuple[np.ndarray, np.ndarray]:
        return self._cond[layer, head]

    @property
    def cond_len(self) -> int:
        return self._cond_len or 0

    # -- visual block --------------------------------------------------------

    def heads(self):
        return self._stores.keys()

    def visual_len(self, layer: int, head: int) -> int:
        return self._stores[layer, head].length

    def positions(self, layer: int, head: int) -> np.ndarray:
        s = self._stores[layer, head]
        return s.positions[: s.length]

    def keys(self, layer: int, head: int) -> np.ndarray:
        s = self._stores[layer, head]
        return s.keys[: s.length]

    def values(self, layer: int, head: int) -> np.ndarray:
        s = self._stores[layer, head]
        return s.values[: s.length]

    def append(self, layer: int, head: int, key, value, position: int) -> None:
        """Append one entry; positions must strictly increase per head."""
        s = self._stores[layer, head]
        if s.length and position <= s.positions[s.length - 1]:
            raise LinearKVError(
                "position-regression",
                f"position {position} not after {s.positions[s.length - 1]}",
            )
        if position < 0:
            raise LinearKVError("position-out-of-grid", f"position {position} negative")
        s.ensure(s.length + 1)
        s.keys[s.length] = key
        s.values[s.length] = value
        s.positions[s.length] = position
        s.length += 1

    def partition(
        self, layer: int, head: int, spec: GridSpec, cfg: BudgetConfig, line: int
    ) -> RegionPartition:
        """Split one head's store for the end of ``line`` (1-based).

        Anchors are positions below ``n_init``; the recent window is every
        non-anchor position in the last ``recent_lines`` lines counting
        ``line`` itself, never fewer than ``line`` alone; the mid region is
        the remainder and is the only evictable part. Only meaningful once
        the cache can have filled its budget, hence the activation guard.
        """
        if line < cfg.budget // spec.width:
            raise LinearKVError(
                "compression-not-active",
                f"line {line} ends before the store can reach budget {cfg.budget}",
            )
        s = self._stores[layer, head]
        pos = s.positions[: s.length]
        init_mask = pos < cfg.n_init
        rec_mask = (pos >= (line - cfg.protected_lines) * spec.width) & ~init_mask
        mid_mask = ~init_mask & ~rec_mask
        idx = np.arange(s.length)
        return RegionPartition(idx[init_mask], idx[mid_mask], idx[rec_mask])

    def compact(
        self,
        layer: int,
        head: int,
        evict_idx,
        partition: RegionPartition | None = None,
    ) -> None:
        """Physically remove the given store indices, preserving order.

        When a partition is supplied, indices outside its mid region are
        refused: anchors, the recent window, and (structurally) the
        conditional block are not evictable.
        """
        evict = np.unique(np.asarray(evict_idx, dtype=np.int64))
        s = self._stores[layer, head]
        if evict.size == 0:
            return
        if evict.size != np.asarray(evict_idx).size:
            raise LinearKVError("protected-region-eviction", "duplicate eviction indices")
        if evict[0] < 0 or evict[-1] >= s.length:
            raise LinearKVError(
                "protected-region-eviction",
                f"eviction index outside store of length {s.length}",
            )
        if partition is not None:
            outside = np.setdiff1d(evict, partition.mid_idx)
            if outside.size:
                raise LinearKVError(
                    "protected-region-eviction",
                    f"indices {outside.tolist()} (positions "
                    f"{s.positions[outside].tolist()}) are outside the mid region",
                )
        keep = np.ones(s.length, dtype=bool)
        keep[evict] = False
        new_len = int(keep.sum())
        s.keys[:new_len] = s.keys[: s.length][keep]
        s.values[:new_len] = s.values[: s.length][keep]
        s.positions[:new_len] = s.positions[: s.length][keep]
        s.length = new_len

    def snapshot(self) -> dict:
        """JSON-ready cache state.

        Layout::

            {"schema": 1, "cond_len": C,
             "heads": {"<layer>:<head>": {"length": n, "positions": [...]}}}
        """
        return {
            "schema": SNAPSHOT_SCHEMA,
            "cond_len": self.cond_len,
            "heads": {
                f"{l}:{h}": {
                    "length": self.visual_len(l, h),
                    "positions": self.positions(l, h).tolist(),
                }
                for (l, h) in self._stores
            },
        }
