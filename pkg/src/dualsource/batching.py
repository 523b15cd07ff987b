"""Training examples and token-budget (dynamic) batching."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .recycler import MultiPropertyRecord
from .targets import serialize_target, serialize_values
from .tokenize import BOS, EOS, PAD, SEP, SubwordModel


@dataclass
class TrainingExample:
    article: list[int]
    properties: list[int]
    target: list[int]  # ends with EOS, no BOS
    key: tuple[str, ...] = ()  # (article_id,) or (article_id, property)

    @property
    def size(self) -> int:
        return max(len(self.article), len(self.properties), len(self.target) + 1)


@dataclass
class Batch:
    article: np.ndarray
    article_mask: np.ndarray
    properties: np.ndarray
    properties_mask: np.ndarray
    decoder_in: np.ndarray
    decoder_out: np.ndarray
    target_mask: np.ndarray
    keys: list[tuple[str, ...]]

    @property
    def size(self) -> int:
        return self.article.shape[0]

    @property
    def target_tokens(self) -> int:
        return int(self.target_mask.sum())


def pad(seqs: Sequence[Sequence[int]], value: int = PAD) -> tuple[np.ndarray, np.ndarray]:
    width = max(1, max((len(s) for s in seqs), default=1))
    out = np.full((len(seqs), width), value, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
        mask[i, : len(s)] = True
    return out, mask


def collate(examples: Sequence[TrainingExample]) -> Batch:
    art, art_m = pad([e.article for e in examples])
    prop, prop_m = pad([e.properties for e in examples])
    dec_in, _ = pad([[BOS] + e.target[:-1] for e in examples])
    dec_out, tgt_m = pad([e.target for e in examples])
    return Batch(art, art_m, prop, prop_m, dec_in, dec_out, tgt_m, [e.key for e in examples])


def encode_property_names(sp: SubwordModel, names: Iterable[str]) -> list[int]:
    """BOS name1 SEP name2 ... EOS with names sorted lexicographically."""
    ids = [BOS]
    for i, name in enumerate(sorted(names)):
        if i:
            ids.append(SEP)
        ids.extend(sp.encode(name))
    ids.append(EOS)
    return ids


def encode_article(sp: SubwordModel, text: str, max_positions: int, warnings: dict | None = None) -> list[int]:
    ids = sp.encode(text, add_bos_eos=True)
    if len(ids) > max_positions:
        ids = ids[: max_positions - 1] + [EOS]
        if warnings is not None:
            warnings["truncated_articles"] = warnings.get("truncated_articles", 0) + 1
    return ids


def build_examples(
    records: Iterable[MultiPropertyRecord],
    sp: SubwordModel,
    mode: str = "multi",
    max_positions: int = 512,
    ablate_article: bool = False,
    warnings: dict | None = None,
) -> list[TrainingExample]:
    """Turn records into dual-source examples.

    ``multi`` yields one example per article whose target lists every
    property; ``single`` yields one example per (article, property).
    With ``ablate_article`` the article source is a lone PAD token.
    """
    if mode not in ("multi", "single"):
        raise ValueError(f"mode must be 'multi' or 'single', got {mode!r}")
    out = []
    for rec in records:
        art = [PAD] if ablate_article else encode_article(sp, rec.text, max_positions, warnings)
        if mode == "multi":
            tgt = sp.encode(serialize_target(rec.properties)) + [EOS]
            out.append(TrainingExample(art, encode_property_names(sp, rec.properties), tgt, (rec.article_id,)))
        else:
            for name, vals in sorted(rec.properties.items()):
                tgt = sp.encode(serialize_values(vals)) + [EOS]
                out.append(
                    TrainingExample(art, encode_property_names(sp, [name]), tgt, (rec.article_id, name))
                )
    return out


def dynamic_batches(
    examples: Sequence[TrainingExample],
    max_tokens: int,
    seed: int | None = None,
    max_examples: int | None = None,
) -> list[list[TrainingExample]]:
    """Pack examples under a padded-token budget.

    Examples are sorted by length and greedily packed so that
    ``len(batch) * longest_example`` stays within ``max_tokens``; the batch
    order is then shuffled with ``seed`` (kept sorted when ``seed`` is None).
    An example longer than the budget forms its own batch.
    """
    order = sorted(range(len(examples)), key=lambda i: (examples[i].size, i))
    batches: list[list[TrainingExample]] = []
    cur: list[TrainingExample] = []
    longest = 0
    for i in order:
        ex = examples[i]
        new_longest = max(longest, ex.size)
        full = max_examples is not None and len(cur) >= max_examples
        if cur and (new_longest * (len(cur) + 1) > max_tokens or full):
            batches.append(cur)
            cur, new_longest = [], ex.size
        cur.append(ex)
        longest = new_longest
    if cur:
        batches.append(cur)
    if seed is not None:
        random.Random(seed).shuffle(batches)
    return batches
