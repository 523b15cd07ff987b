"""Dual-source Transformer: one shared encoder, two sources, one decoder.

The article and the property names are encoded separately by the same
encoder parameters. Each decoder layer runs self-attention, then
cross-attention over both encoded sources (property first by default),
then a feed-forward block, each followed by residual + layer norm. Token
embeddings are shared by encoder, decoder and the output projection.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .batching import Batch
from .layers import (
    FeedForward,
    LayerNorm,
    Module,
    MultiHeadAttention,
    causal_mask,
    glorot,
    padding_mask,
    sinusoid_positions,
)
from .tensor import Parameter, Tensor
from .tokenize import BOS, PAD


@dataclass
class DualSourceConfig:
    model_dim: int = 64
    heads: int = 4
    ffn_dim: int = 256
    depth: int = 2
    vocab_size: int = 800
    dropout: float = 0.0
    max_positions: int = 256
    label_smoothing: float = 0.0
    cross_order: tuple[str, ...] = ("property", "article")
    dtype: str = "float32"

    def __post_init__(self):
        self.cross_order = tuple(self.cross_order)
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if sorted(self.cross_order) != ["article", "property"]:
            raise ValueError(f"cross_order must order 'property' and 'article', got {self.cross_order}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cross_order"] = list(self.cross_order)
        return d


PRESETS = {
    "desk": DualSourceConfig(),
    "paper": DualSourceConfig(
        model_dim=512, heads=8, ffn_dim=2048, depth=4, vocab_size=32000,
        dropout=0.1, max_positions=512, label_smoothing=0.1,
    ),
    "toy": DualSourceConfig(model_dim=16, heads=2, ffn_dim=32, depth=2, vocab_size=50, dtype="float64"),
}


class EncoderLayer(Module):
    def __init__(self, name, cfg: DualSourceConfig, rng, dtype):
        self.attn = MultiHeadAttention(f"{name}.self_attn", cfg.model_dim, cfg.heads, rng, dtype)
        self.ln_attn = LayerNorm(f"{name}.ln_attn", cfg.model_dim, dtype)
        self.ffn = FeedForward(f"{name}.ffn", cfg.model_dim, cfg.ffn_dim, rng, dtype)
        self.ln_ffn = LayerNorm(f"{name}.ln_ffn", cfg.model_dim, dtype)

    def __call__(self, x, mask, drop=0.0, rng=None):
        x = self.ln_attn(T.add(x, T.dropout(self.attn(x, x, mask, drop, rng), drop, rng)))
        return self.ln_ffn(T.add(x, T.dropout(self.ffn(x, drop, rng), drop, rng)))


class Encoder(Module):
    def __init__(self, name, cfg: DualSourceConfig, rng, dtype):
        self.layers = [EncoderLayer(f"{name}.{i}", cfg, rng, dtype) for i in range(cfg.depth)]

    def __call__(self, x, mask, drop=0.0, rng=None):
        for layer in self.layers:
            x = layer(x, mask, drop, rng)
        return x


class DecoderLayer(Module):
    def __init__(self, name, cfg: DualSourceConfig, rng, dtype):
        d = cfg.model_dim
        self.self_attn = MultiHeadAttention(f"{name}.self_attn", d, cfg.heads, rng, dtype)
        self.ln_self = LayerNorm(f"{name}.ln_self", d, dtype)
        self.cross_property = MultiHeadAttention(f"{name}.cross_property", d, cfg.heads, rng, dtype)
        self.ln_property = LayerNorm(f"{name}.ln_property", d, dtype)
        self.cross_article = MultiHeadAttention(f"{name}.cross_article", d, cfg.heads, rng, dtype)
        self.ln_article = LayerNorm(f"{name}.ln_article", d, dtype)
        self.ffn = FeedForward(f"{name}.ffn", d, cfg.ffn_dim, rng, dtype)
        self.ln_ffn = LayerNorm(f"{name}.ln_ffn", d, dtype)
        self.order = cfg.cross_order

    def __call__(self, y, self_mask, sources, drop=0.0, rng=None):
        y = self.ln_self(T.add(y, T.dropout(self.self_attn(y, y, self_mask, drop, rng), drop, rng)))
        for name in self.order:
            mem, mask = sources[name]
            attn = self.cross_property if name == "property" else self.cross_article
            ln = self.ln_property if name == "property" else self.ln_article
            y = ln(T.add(y, T.dropout(attn(y, mem, mask, drop, rng), drop, rng)))
        return self.ln_ffn(T.add(y, T.dropout(self.ffn(y, drop, rng), drop, rng)))


@dataclass
class EncodedSources:
    article: Tensor
    article_mask: np.ndarray
    properties: Tensor
    properties_mask: np.ndarray


class DualSourceModel(Module):
    def __init__(self, cfg: DualSourceConfig, seed: int = 0):
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(seed)
        d = cfg.model_dim
        self.embedding = Parameter(glorot(rng, (cfg.vocab_size, d), dtype), "embedding")
        self.encoder = Encoder("encoder", cfg, rng, dtype)
        # Both sources go through one parameter set; tests may swap in a copy.
        self.property_encoder = self.encoder
        self.decoder = [DecoderLayer(f"decoder.{i}", cfg, rng, dtype) for i in range(cfg.depth)]
        self.dtype = dtype
        self._positions = sinusoid_positions(cfg.max_positions, d, dtype)

    # -- embedding ------------------------------------------------------------

    def positions(self, length: int) -> np.ndarray:
        if length > self._positions.shape[0]:
            self._positions = sinusoid_positions(2 * length, self.cfg.model_dim, self.dtype)
        return self._positions[:length]

    def embed(self, ids: np.ndarray, use_positions: bool = True) -> Tensor:
        x = T.scale(T.embedding_lookup(self.embedding, ids), math.sqrt(self.cfg.model_dim))
        if use_positions:
            pos = np.broadcast_to(self.positions(ids.shape[1]), x.shape)
            x = T.add(x, T.constant(np.ascontiguousarray(pos)))
        return x

    # -- encoder --------------------------------------------------------------

    def encode_sources(
        self,
        article: np.ndarray,
        article_mask: np.ndarray,
        properties: np.ndarray,
        properties_mask: np.ndarray,
        rng=None,
        use_positions: bool = True,
    ) -> EncodedSources:
        drop = self.cfg.dropout if rng is not None else 0.0
        art = self.encoder(
            T.dropout(self.embed(article, use_positions), drop, rng), padding_mask(article_mask), drop, rng
        )
        prop = self.property_encoder(
            T.dropout(self.embed(properties, use_positions), drop, rng), padding_mask(properties_mask), drop, rng
        )
        return EncodedSources(art, article_mask, prop, properties_mask)

    def encode_pair(
        self,
        article_ids: Sequence[int],
        property_ids: Sequence[int],
        use_positions: bool = True,
        warnings: dict | None = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Encode one example; returns ``(len_article, d)`` and ``(len_props, d)`` states."""
        article_ids = list(article_ids)
        if not article_ids or not property_ids:
            raise ValueError("both sources must be non-empty")
        if len(article_ids) > self.cfg.max_positions:
            article_ids = article_ids[: self.cfg.max_positions - 1] + [article_ids[-1]]
            if warnings is not None:
                warnings["truncated_articles"] = warnings.get("truncated_articles", 0) + 1
        a = np.asarray([article_ids], dtype=np.int64)
        p = np.asarray([list(property_ids)], dtype=np.int64)
        enc = self.encode_sources(a, np.ones_like(a, bool), p, np.ones_like(p, bool), use_positions=use_positions)
        return enc.article.data[0], enc.properties.data[0]

    # -- decoder --------------------------------------------------------------

    def decode(self, decoder_in: np.ndarray, enc: EncodedSources, rng=None) -> Tensor:
        """Logits of shape (batch, len, vocab) for teacher-forced inputs."""
        drop = self.cfg.dropout if rng is not None else 0.0
        y = T.dropout(self.embed(decoder_in), drop, rng)
        n = decoder_in.shape[1]
        self_mask = causal_mask(n) & padding_mask(np.ones_like(decoder_in, dtype=bool))
        sources = {
            "article": (enc.article, padding_mask(enc.article_mask)),
            "property": (enc.properties, padding_mask(enc.properties_mask)),
        }
        for layer in self.decoder:
            y = layer(y, self_mask, sources, drop, rng)
        return T.matmul(y, T.transpose(self.embedding, (1, 0)))

    def loss(self, batch: Batch, rng=None, label_smoothing: float | None = None) -> Tensor:
        enc = self.encode_sources(
            batch.article, batch.article_mask, batch.properties, batch.properties_mask, rng=rng
        )
        logits = self.decode(batch.decoder_in, enc, rng)
        ls = self.cfg.label_smoothing if label_smoothing is None else label_smoothing
        return T.cross_entropy_mean(logits, batch.decoder_out, batch.target_mask, ls)

    # -- inference ------------------------------------------------------------

    def scorer(self, article_ids: Sequence[int], property_ids: Sequence[int]):
        """Next-token log-prob function for :func:`dualsource.decoding.beam_search`."""
        art = np.asarray([list(article_ids)], dtype=np.int64)
        prop = np.asarray([list(property_ids)], dtype=np.int64)
        enc = self.encode_sources(art, np.ones_like(art, bool), prop, np.ones_like(prop, bool))

        def score_same_length(prefixes):
            n = len(prefixes)
            dec = np.asarray([[BOS, *p] for p in prefixes], dtype=np.int64)
            rep = EncodedSources(
                T.constant(np.repeat(enc.article.data, n, axis=0)),
                np.repeat(enc.article_mask, n, axis=0),
                T.constant(np.repeat(enc.properties.data, n, axis=0)),
                np.repeat(enc.properties_mask, n, axis=0),
            )
            return self.decode(dec, rep).data[:, -1, :].astype(np.float64)

        def score(prefixes):
            # beam search sends equal lengths; group otherwise
            by_len: dict[int, list[int]] = {}
            for i, p in enumerate(prefixes):
                by_len.setdefault(len(p), []).append(i)
            logits = np.empty((len(prefixes), self.cfg.vocab_size))
            for rows in by_len.values():
                logits[rows] = score_same_length([prefixes[i] for i in rows])
            m = logits.max(axis=1, keepdims=True)
            return logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))

        return score

    def ablated_scorer(self, property_ids: Sequence[int]):
        """Scorer whose article source is a single PAD state."""
        return self.scorer([PAD], property_ids)

    # -- persistence ----------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in arrays:
                raise KeyError(f"checkpoint lacks parameter {p.name}")
            src = arrays[p.name]
            if src.shape != p.shape:
                raise ValueError(f"{p.name}: checkpoint shape {src.shape} != model shape {p.shape}")
            p.data[...] = src


def config_from_dict(d: dict) -> DualSourceConfig:
    fields = DualSourceConfig.__dataclass_fields__
    return DualSourceConfig(**{k: v for k, v in d.items() if k in fields})


def ablate_article(model: DualSourceModel, property_ids: Sequence[int], beam: int = 8, max_len: int = 64):
    """Decode conditioned on property names only."""
    from .decoding import beam_search

    return beam_search(model.ablated_scorer(property_ids), beam=beam, max_len=max_len)
