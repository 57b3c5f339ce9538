"""Seeded toy causal decoder generating raster-grid token streams.

The model is deliberately tiny and fully deterministic: fixed pseudo-random
weights, greedy argmax decoding, no positional encoding (order enters only
through causal cache growth and the stored raster indices). It exists to
exercise cache policies end to end under real attention arithmetic, not to
make images.

Step contract: a step attends over the conditional block plus the visual
entries already cached, then appends its own per-layer KV. The first step
therefore attends over exactly the conditional entries, and a step ``k``
tokens into a line after compression sees ``cond_len + budget - width + k``
entries.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .attention import softmax_inplace, softmax_rows
from .cache import VisualKVCache
from .errors import ConfigError, LinearKVError
from .grid import BudgetConfig, GridSpec
from .policy import EvictionEvent, EvictionPolicy
from .trace import DecodeTrace, StepRecord

RNG_NAME = "numpy-pcg64"
WEIGHT_ORDER = "embed, per layer (wq, wk, wv, wo, w1, w2), unembed"


@dataclass(frozen=True)
class ModelConfig:
    """Toy decoder dimensions and the run seed.

    Weights are drawn from ``numpy.random.Generator(PCG64(seed))`` in a
    fixed order (embedding, then per layer the query/key/value/output
    projections and the two feed-forward matrices, then the unembedding),
    so a seed pins every parameter. The same seed also drives synthesized
    conditional tokens and the random policy's per-event streams.
    """

    layers: int = 4
    heads: int = 4
    kv_heads: int = 4
    head_dim: int = 32
    vocab: int = 256
    cond_len: int = 8
    seed: int = 0

    def __post_init__(self):
        if min(self.layers, self.heads, self.kv_heads, self.head_dim, self.vocab) < 1:
            raise ConfigError("model-config-invalid", "all dimensions must be positive")
        if self.heads % self.kv_heads:
            raise ConfigError(
                "model-config-invalid",
                f"heads {self.heads} not divisible by kv_heads {self.kv_heads}",
            )
        if self.cond_len < 1:
            raise ConfigError("model-config-invalid", "cond_len must be at least 1")

    @property
    def model_dim(self) -> int:
        return self.heads * self.head_dim

    @property
    def group_size(self) -> int:
        return self.heads // self.kv_heads


@dataclass
class _LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray


@dataclass
class DecodeState:
    """Mutable cursor of one generation run."""

    spec: GridSpec
    cfg: BudgetConfig
    policy: EvictionPolicy
    cache: VisualKVCache
    cond_tokens: list[int]
    trace_attention: bool = False
    position: int = 0
    tokens: list[int] = field(default_factory=list)
    evictions: list[EvictionEvent] = field(default_factory=list)
    last_hidden: np.ndarray | None = None
    last_step: dict | None = None
    # logits workspace sized for the longest possible span, reused every
    # head of every step so the hot loop allocates nothing span-shaped
    scratch: np.ndarray | None = None


def synth_condition(cfg: ModelConfig) -> list[int]:
    """Deterministic conditional ids for CLI runs; stream [seed, 1]."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    return rng.integers(0, cfg.vocab, size=cfg.cond_len).tolist()


class RasterDecoder:
    """Greedy decoder over a fixed random transformer."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
        dim = cfg.model_dim
        qk = cfg.heads * cfg.head_dim
        kv = cfg.kv_heads * cfg.head_dim
        self.embed = rng.standard_normal((cfg.vocab, dim))
        self.layers = []
        for _ in range(cfg.layers):
            self.layers.append(
                _LayerWeights(
                    wq=rng.standard_normal((dim, qk)) / math.sqrt(dim),
                    wk=rng.standard_normal((dim, kv)) / math.sqrt(dim),
                    wv=rng.standard_normal((dim, kv)) / math.sqrt(dim),
                    wo=rng.standard_normal((qk, dim)) / math.sqrt(qk),
                    w1=rng.standard_normal((dim, 2 * dim)) / math.sqrt(dim),
                    w2=rng.standard_normal((2 * dim, dim)) / math.sqrt(2 * dim),
                )
            )
        self.unembed = rng.standard_normal((dim, cfg.vocab)) / math.sqrt(dim)
        self.scale = 1.0 / math.sqrt(cfg.head_dim)

    # -- setup ---------------------------------------------------------------

    def prefill(
        self,
        cond_tokens,
        spec: GridSpec,
        cfg: BudgetConfig,
        policy: EvictionPolicy,
        trace_attention: bool = False,
    ) -> DecodeState:
        """Process the conditional tokens causally and freeze their KV block."""
        cond = [int(t) for t in cond_tokens]
        if not cond:
            raise LinearKVError("empty-condition", "need at least one conditional token")
        if any(not 0 <= t < self.cfg.vocab for t in cond):
            raise ConfigError("token-out-of-vocab", f"ids must be in [0, {self.cfg.vocab})")
        mc = self.cfg
        capacity = cfg.budget if cfg.rho < 1 else spec.total
        cache = VisualKVCache(mc.layers, mc.kv_heads, mc.head_dim, capacity=max(capacity, 1))
        cond_k = [[[] for _ in range(mc.kv_heads)] for _ in range(mc.layers)]
        cond_v = [[[] for _ in range(mc.kv_heads)] for _ in range(mc.layers)]
        for j, tok in enumerate(cond):
            x = self.embed[tok]
            for li, lw in enumerate(self.layers):
                q = (x @ lw.wq).reshape(mc.heads, mc.head_dim)
                k = (x @ lw.wk).reshape(mc.kv_heads, mc.head_dim)
                v = (x @ lw.wv).reshape(mc.kv_heads, mc.head_dim)
                heads_out = np.zeros((mc.heads, mc.head_dim))
                if j > 0:
                    for g in range(mc.kv_heads):
                        kc = np.asarray(cond_k[li][g])
                        vc = np.asarray(cond_v[li][g])
                        for h in range(g * mc.group_size, (g + 1) * mc.group_size):
                            probs = softmax_rows(kc @ q[h] * self.scale)
                            heads_out[h] = probs @ vc
                for g in range(mc.kv_heads):
                    cond_k[li][g].append(k[g])
                    cond_v[li][g].append(v[g])
                x = x + heads_out.reshape(-1) @ lw.wo
                x = x + np.tanh(x @ lw.w1) @ lw.w2
        for li in range(mc.layers):
            for g in range(mc.kv_heads):
                cache.set_conditional(li, g, np.asarray(cond_k[li][g]), np.asarray(cond_v[li][g]))
        policy.bind(mc.layers, mc.kv_heads, mc.group_size, spec, cfg, mc.seed)
        return DecodeState(
            spec=spec,
            cfg=cfg,
            policy=policy,
            cache=cache,
            cond_tokens=cond,
            trace_attention=trace_attention,
            scratch=np.empty(len(cond) + max(capacity, 1)),
        )

    # -- decoding ------------------------------------------------------------

    def decode_step(self, state: DecodeState) -> int:
        """Emit one token and append one KV entry per layer/kv-head."""
        if state.position >= state.spec.total:
            raise LinearKVError(
                "generation-complete", f"all {state.spec.total} positions generated"
            )
        mc = self.cfg
        policy = state.policy
        cache = state.cache
        p = state.position
        cond_len = cache.cond_len
        span = cond_len + cache.visual_len(0, 0)
        prev = state.tokens[-1] if state.tokens else state.cond_tokens[-1]
        x = self.embed[prev]
        attn_trace = [] if state.trace_attention else None
        for li, lw in enumerate(self.layers):
            q = (x @ lw.wq).reshape(mc.heads, mc.head_dim)
            k = (x @ lw.wk).reshape(mc.kv_heads, mc.head_dim)
            v = (x @ lw.wv).reshape(mc.kv_heads, mc.head_dim)
            # scale folded into the queries once; q itself stays raw because
            # the guide queue applies the scale at eviction time
            qs = q * self.scale
            heads_out = np.empty((mc.heads, mc.head_dim))
            layer_rec = (
                {"kv_positions": [], "probs": []} if attn_trace is not None else None
            )
            for g in range(mc.kv_heads):
                kc, vc = cache.conditional(li, g)
                kv_keys = cache.keys(li, g)
                kv_values = cache.values(li, g)
                group = range(g * mc.group_size, (g + 1) * mc.group_size)
                visual_mass = (
                    np.zeros(kv_keys.shape[0]) if policy.wants_attention else None
                )
                logits = state.scratch[: cond_len + kv_keys.shape[0]]
                for h in group:
                    np.matmul(kc, qs[h], out=logits[:cond_len])
                    np.matmul(kv_keys, qs[h], out=logits[cond_len:])
                    probs = softmax_inplace(logits)
                    heads_out[h] = probs[:cond_len] @ vc + probs[cond_len:] @ kv_values
                    if visual_mass is not None:
                        visual_mass += probs[cond_len:]
                    if layer_rec is not None:
                        layer_rec["probs"].append(probs.copy())
                if visual_mass is not None:
                    policy.observe_attention(li, g, visual_mass)
                if layer_rec is not None:
                    layer_rec["kv_positions"].append(cache.positions(li, g).tolist())
                if policy.wants_queries:
                    policy.observe_queries(li, g, q[g * mc.group_size : (g + 1) * mc.group_size])
                cache.append(li, g, k[g], v[g], p)
                policy.notify_append(li, g)
            if attn_trace is not None:
                attn_trace.append(layer_rec)
            x = x + heads_out.reshape(-1) @ lw.wo
            x = x + np.tanh(x @ lw.w1) @ lw.w2
        token = int(np.argmax(x @ self.unembed))
        state.tokens.append(token)
        state.last_hidden = x
        state.position = p + 1
        events = None
        if state.position % state.spec.width == 0:
            line = state.position // state.spec.width
            events = policy.end_of_line(cache, line)
            if events:
                state.evictions.extend(events)
        state.last_step = {
            "span": span,
            "visual_len": cache.visual_len(0, 0),
            "attn": attn_trace,
            "events": events,
        }
        return token

    def generate(
        self,
        cond_tokens,
        spec: GridSpec,
        cfg: BudgetConfig,
        policy: EvictionPolicy,
        trace_attention: bool = False,
    ) -> DecodeTrace:
        """Run the full raster scan and assemble the trace."""
        state = self.prefill(cond_tokens, spec, cfg, policy, trace_attention)
        mc = self.cfg
        header = {
            "config": {
                "height": spec.height,
                "width": spec.width,
                "rho": str(cfg.rho),
                "budget": cfg.budget,
                "n_init": cfg.n_init,
                "recent_lines": cfg.recent_lines,
                "policy": policy.name,
                "layers": mc.layers,
                "heads": mc.heads,
                "kv_heads": mc.kv_heads,
                "head_dim": mc.head_dim,
                "vocab": mc.vocab,
                "cond_len": len(state.cond_tokens),
                "seed": mc.seed,
                "trace_attention": trace_attention,
            },
            "rng": RNG_NAME,
            "weight_order": WEIGHT_ORDER,
        }
        steps: list[StepRecord] = []
        for i in range(spec.total):
            t0 = time.perf_counter_ns()
            token = self.decode_step(state)
            elapsed = time.perf_counter_ns() - t0
            info = state.last_step
            steps.append(
                StepRecord(
                    index=i,
                    line=i // spec.width + 1,
                    token=token,
                    span=info["span"],
                    visual_len=info["visual_len"],
                    step_ns=elapsed,
                    attn=info["attn"],
                )
            )
        return DecodeTrace(
            header=header,
            steps=steps,
            evictions=state.evictions,
            final_hidden=state.last_hidden.copy(),
            cache_snapshot=state.cache.snapshot(),
        )
