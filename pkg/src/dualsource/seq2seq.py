"""Basic seq2seq baseline: unidirectional LSTM encoder-decoder, no attention.

The input is ``property <sep> article`` tokenized and lowercased; the
decoder starts from the encoder's final states and emits ``v1 | v2``.
Generated text is truecased afterwards.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .batching import pad
from .layers import Module, glorot
from .recycler import MultiPropertyRecord
from .targets import serialize_values
from .tensor import Parameter, Tensor
from .tokenize import BOS, EOS, SEP, SubwordModel, baseline_normalize


@dataclass
class Seq2SeqConfig:
    embedding_dim: int = 128
    hidden_dim: int = 256
    layers: int = 1
    vocab_size: int = 800
    validation_interval: int = 100
    patience: int = 10
    max_source: int = 256
    dtype: str = "float32"

    def __post_init__(self):
        if self.validation_interval <= 0 or self.patience <= 0:
            raise ValueError("validation_interval and patience must be positive")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


SEQ2SEQ_PRESETS = {
    "desk": Seq2SeqConfig(),
    "paper": Seq2SeqConfig(vocab_size=32000, validation_interval=10_000, patience=10, max_source=512),
    "toy": Seq2SeqConfig(embedding_dim=8, hidden_dim=12, layers=2, vocab_size=50, dtype="float64"),
}


class LSTMLayer(Module):
    def __init__(self, name: str, n_in: int, hidden: int, rng, dtype):
        self.w_input = Parameter(glorot(rng, (n_in, 4 * hidden), dtype), f"{name}.w_input")
        self.w_hidden = Parameter(glorot(rng, (hidden, 4 * hidden), dtype), f"{name}.w_hidden")
        bias = np.zeros(4 * hidden, dtype=dtype)
        bias[hidden:2 * hidden] = 1.0  # forget gate starts open
        self.bias = Parameter(bias, f"{name}.bias")
        self.hidden = hidden

    def step(self, x: Tensor, h: Tensor, c: Tensor, mask=None) -> tuple[Tensor, Tensor]:
        gates = T.add(T.add(T.matmul(x, self.w_input), T.matmul(h, self.w_hidden)), self.bias)
        return lstm_cell_step(gates, h, c, mask)


def lstm_cell_step(gates: Tensor, h: Tensor, c: Tensor, mask=None) -> tuple[Tensor, Tensor]:
    """One LSTM recurrence from gate pre-activations; returns ``(h, c)``."""
    hid = c.shape[1]
    hc = T.lstm_pointwise(gates, c, h, mask)
    return T.slice_axis(hc, 0, hid, axis=1), T.slice_axis(hc, hid, 2 * hid, axis=1)


@dataclass
class Seq2SeqBatch:
    source: np.ndarray
    source_mask: np.ndarray
    decoder_in: np.ndarray
    decoder_out: np.ndarray
    target_mask: np.ndarray
    keys: list[tuple[str, ...]]

    @property
    def size(self) -> int:
        return self.source.shape[0]


@dataclass
class Seq2SeqExample:
    source: list[int]
    target: list[int]
    key: tuple[str, ...] = ()

    @property
    def size(self) -> int:
        return max(len(self.source), len(self.target) + 1)


def baseline_source(sp: SubwordModel, prop: str, text: str, max_source: int) -> list[int]:
    ids = sp.encode(baseline_normalize(prop)) + [SEP] + sp.encode(baseline_normalize(text))
    return ids[:max_source]


def build_seq2seq_examples(
    records: Iterable[MultiPropertyRecord], sp: SubwordModel, max_source: int = 256
) -> list[Seq2SeqExample]:
    out = []
    for rec in records:
        for name, vals in sorted(rec.properties.items()):
            tgt = sp.encode(serialize_values(baseline_normalize(v) for v in vals)) + [EOS]
            out.append(Seq2SeqExample(baseline_source(sp, name, rec.text, max_source), tgt, (rec.article_id, name)))
    return out


def collate_seq2seq(examples: Sequence[Seq2SeqExample]) -> Seq2SeqBatch:
    src, src_m = pad([e.source for e in examples])
    dec_in, _ = pad([[BOS] + e.target[:-1] for e in examples])
    dec_out, tgt_m = pad([e.target for e in examples])
    return Seq2SeqBatch(src, src_m, dec_in, dec_out, tgt_m, [e.key for e in examples])


class BasicSeq2Seq(Module):
    def __init__(self, cfg: Seq2SeqConfig, seed: int = 0):
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(seed)
        e, h = cfg.embedding_dim, cfg.hidden_dim
        self.embedding = Parameter(glorot(rng, (cfg.vocab_size, e), dtype), "embedding")
        self.encoder = [LSTMLayer(f"encoder.{i}", e if i == 0 else h, h, rng, dtype) for i in range(cfg.layers)]
        self.decoder = [LSTMLayer(f"decoder.{i}", e if i == 0 else h, h, rng, dtype) for i in range(cfg.layers)]
        self.out_weight = Parameter(glorot(rng, (h, cfg.vocab_size), dtype), "output.weight")
        self.out_bias = Parameter(np.zeros(cfg.vocab_size, dtype=dtype), "output.bias")
        self.dtype = dtype

    def _zeros(self, b: int) -> Tensor:
        return T.constant(np.zeros((b, self.cfg.hidden_dim), dtype=self.dtype))

    def encode(self, source: np.ndarray, source_mask: np.ndarray) -> list[tuple[Tensor, Tensor]]:
        b, n = source.shape
        states = [(self._zeros(b), self._zeros(b)) for _ in self.encoder]
        for t in range(n):
            x = T.embedding_lookup(self.embedding, source[:, t])
            m = source_mask[:, t]
            new = []
            for layer, (h, c) in zip(self.encoder, states):
                h, c = layer.step(x, h, c, m)
                new.append((h, c))
                x = h
            states = new
        return states

    def _decode_step(self, tokens: np.ndarray, states):
        x = T.embedding_lookup(self.embedding, tokens)
        new = []
        for layer, (h, c) in zip(self.decoder, states):
            h, c = layer.step(x, h, c)
            new.append((h, c))
            x = h
        return x, new

    def logits(self, batch: Seq2SeqBatch) -> Tensor:
        states = self.encode(batch.source, batch.source_mask)
        b, n = batch.decoder_in.shape
        outs = []
        for t in range(n):
            top, states = self._decode_step(batch.decoder_in[:, t], states)
            outs.append(T.reshape(top, (b, 1, self.cfg.hidden_dim)))
        hidden = T.concat(outs, axis=1) if len(outs) > 1 else outs[0]
        return T.add(T.matmul(hidden, self.out_weight), self.out_bias)

    def loss(self, batch: Seq2SeqBatch, rng=None, label_smoothing: float | None = None) -> Tensor:
        """Mean per-word cross-entropy over non-pad target tokens."""
        return T.cross_entropy_mean(self.logits(batch), batch.decoder_out, batch.target_mask, label_smoothing or 0.0)

    def scorer(self, source_ids: Sequence[int]):
        src = np.asarray([list(source_ids)], dtype=np.int64)
        enc = self.encode(src, np.ones_like(src, dtype=bool))
        cache: dict[tuple[int, ...], tuple] = {}

        def states_for(prefix: tuple[int, ...]):
            if prefix in cache:
                return cache[prefix]
            if not prefix:
                prev, tok = enc, BOS
            else:
                prev, tok = states_for(prefix[:-1])[1], prefix[-1]
            top, st = self._decode_step(np.asarray([tok]), prev)
            cache[prefix] = (top, st)
            return cache[prefix]

        def score(prefixes):
            rows = []
            for p in prefixes:
                top, _ = states_for(tuple(p))
                rows.append(top.data[0])
            h = np.stack(rows)
            logits = (h @ self.out_weight.data + self.out_bias.data).astype(np.float64)
            m = logits.max(axis=1, keepdims=True)
            return logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))

        return score

    def state(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in arrays:
                raise KeyError(f"checkpoint lacks parameter {p.name}")
            if arrays[p.name].shape != p.shape:
                raise ValueError(f"{p.name}: checkpoint shape {arrays[p.name].shape} != {p.shape}")
            p.data[...] = arrays[p.name]


def seq2seq_config_from_dict(d: dict) -> Seq2SeqConfig:
    fields = Seq2SeqConfig.__dataclass_fields__
    return Seq2SeqConfig(**{k: v for k, v in d.items() if k in fields})
