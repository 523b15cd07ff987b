"""Byte-level BPE subwords, a frequency truecaser and a plain word splitter."""

from __future__ import annotations

import json
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

PAD, BOS, EOS, UNK, SEP = 0, 1, 2, 3, 4
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>", "<sep>")
SEP_TEXT = "<sep>"
NUM_BASE = len(SPECIAL_TOKENS) + 256
WORD_MARK = "▁"  # shown in place of the space byte

_CHUNK = re.compile(rb" [^ ]*|[^ ]+")


def _chunks(text: str) -> list[bytes]:
    return _CHUNK.findall(text.encode("utf-8"))


def _show(tok: bytes) -> str:
    return tok.decode("latin-1").replace(" ", WORD_MARK)


@dataclass
class SubwordModel:
    merges: list[tuple[bytes, bytes]]
    _ids: dict[bytes, int] = field(init=False, repr=False)
    _tokens: list[bytes] = field(init=False, repr=False)
    _ranks: dict[tuple[bytes, bytes], int] = field(init=False, repr=False)
    _cache: dict[bytes, tuple[int, ...]] = field(init=False, repr=False)

    def __post_init__(self):
        self._tokens = [s.encode() for s in SPECIAL_TOKENS] + [bytes([b]) for b in range(256)]
        self._ids = {bytes([b]): len(SPECIAL_TOKENS) + b for b in range(256)}
        self._ranks = {}
        for rank, (a, b) in enumerate(self.merges):
            tok = a + b
            if a not in self._ids or b not in self._ids:
                raise ValueError(f"merge {rank} uses unknown symbol")
            self._ranks[(a, b)] = rank
            if tok not in self._ids:
                self._ids[tok] = len(self._tokens)
                self._tokens.append(tok)
        self._cache = {}

    @property
    def vocab_size(self) -> int:
        return len(self._tokens)

    @property
    def specials(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(SPECIAL_TOKENS)}

    def vocab(self) -> list[str]:
        return list(SPECIAL_TOKENS) + [_show(t) for t in self._tokens[len(SPECIAL_TOKENS):]]

    def _encode_chunk(self, chunk: bytes) -> tuple[int, ...]:
        hit = self._cache.get(chunk)
        if hit is not None:
            return hit
        syms = [bytes([b]) for b in chunk]
        ranks = self._ranks
        while len(syms) > 1:
            best = None
            best_rank = None
            for i in range(len(syms) - 1):
                r = ranks.get((syms[i], syms[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = i, r
            if best is None:
                break
            pair = (syms[best], syms[best + 1])
            merged = []
            i = 0
            while i < len(syms):
                if i < len(syms) - 1 and (syms[i], syms[i + 1]) == pair:
                    merged.append(pair[0] + pair[1])
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            syms = merged
        ids = tuple(self._ids[s] for s in syms)
        if len(self._cache) < 200_000:
            self._cache[chunk] = ids
        return ids

    def encode(self, text: str, add_bos_eos: bool = False) -> list[int]:
        out = [BOS] if add_bos_eos else []
        for k, piece in enumerate(text.split(SEP_TEXT)):
            if k:
                out.append(SEP)
            for chunk in _chunks(piece):
                out.extend(self._encode_chunk(chunk))
        if add_bos_eos:
            out.append(EOS)
        return out

    def decode(self, ids: Iterable[int]) -> str:
        parts: list[bytes] = []
        for i in ids:
            i = int(i)
            if i in (PAD, BOS, EOS):
                continue
            if i == SEP:
                parts.append(SEP_TEXT.encode())
            elif i == UNK or not 0 <= i < len(self._tokens):
                parts.append("�".encode())
            else:
                parts.append(self._tokens[i])
        return b"".join(parts).decode("utf-8", errors="replace")

    def token_strings(self, ids: Iterable[int]) -> list[str]:
        vocab = self.vocab()
        return [vocab[int(i)] for i in ids]

    def to_json(self) -> str:
        payload = {
            "format": "dualsource-bpe/1",
            "specials": self.specials,
            "merges": [[_show(a), _show(b)] for a, b in self.merges],
            "vocab": self.vocab(),
        }
        return json.dumps(payload, ensure_ascii=False, indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> SubwordModel:
        payload = json.loads(text)

        def unshow(s: str) -> bytes:
            return s.replace(WORD_MARK, " ").encode("latin-1")

        model = cls([(unshow(a), unshow(b)) for a, b in payload["merges"]])
        if payload.get("vocab") and payload["vocab"] != model.vocab():
            raise ValueError("vocab listing does not match the merge table")
        return model

    @classmethod
    def load(cls, path) -> SubwordModel:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def train_subword(corpus: Iterable[str], vocab_size: int) -> SubwordModel:
    """Greedy BPE: repeatedly merge the most frequent adjacent symbol pair.

    Ties go to the lexicographically smallest pair. Stops at ``vocab_size``
    or when no pair occurs at least twice.
    """
    if vocab_size < NUM_BASE:
        raise ValueError(f"vocab_size must be >= {NUM_BASE} (specials + byte alphabet)")
    word_freq: Counter[bytes] = Counter()
    lines = 0
    for line in corpus:
        lines += 1
        for piece in line.split(SEP_TEXT):
            word_freq.update(_chunks(piece))
    if lines == 0:
        raise ValueError("cannot train a subword model on an empty corpus")

    words = [[bytes([b]) for b in w] for w in word_freq]
    freqs = list(word_freq.values())
    pair_counts: Counter[tuple[bytes, bytes]] = Counter()
    where: dict[tuple[bytes, bytes], set[int]] = defaultdict(set)
    for wi, syms in enumerate(words):
        for pair in zip(syms, syms[1:]):
            pair_counts[pair] += freqs[wi]
            where[pair].add(wi)

    merges: list[tuple[bytes, bytes]] = []
    known = {bytes([b]) for b in range(256)}
    size = NUM_BASE
    while size < vocab_size:
        best = None
        best_count = 1
        for pair, cnt in pair_counts.items():
            if cnt > best_count or (cnt == best_count and cnt > 1 and pair < best):
                best, best_count = pair, cnt
        if best is None:
            break
        merges.append(best)
        new_sym = best[0] + best[1]
        if new_sym not in known:
            known.add(new_sym)
            size += 1
        for wi in sorted(where.pop(best, ())):
            syms = words[wi]
            f = freqs[wi]
            for pair in zip(syms, syms[1:]):
                pair_counts[pair] -= f
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
            merged = []
            i = 0
            while i < len(syms):
                if i < len(syms) - 1 and syms[i] == best[0] and syms[i + 1] == best[1]:
                    merged.append(new_sym)
                    i += 2
                else:
                    merged.append(syms[i])
                    i += 1
            words[wi] = merged
            for pair in zip(merged, merged[1:]):
                pair_counts[pair] += f
                where[pair].add(wi)
        pair_counts.pop(best, None)
    return SubwordModel(merges)


# ---------------------------------------------------------------------------
# word-level pipeline for the LSTM baseline
# ---------------------------------------------------------------------------

_WORD = re.compile(r"\w+(?:['\-]\w+)*|[^\w\s]")
_NO_SPACE_BEFORE = set(",.;:!?%)]}")
_NO_SPACE_AFTER = set("([{")


def word_tokenize(text: str) -> list[str]:
    """Split on whitespace and punctuation; punctuation marks become tokens."""
    return _WORD.findall(text)


def detokenize(tokens: list[str]) -> str:
    out = ""
    for tok in tokens:
        if out and tok not in _NO_SPACE_BEFORE and out[-1] not in _NO_SPACE_AFTER:
            out += " "
        out += tok
    return out


def baseline_normalize(text: str) -> str:
    """Tokenize and lowercase, as the baseline consumes and emits text."""
    return " ".join(word_tokenize(text.lower()))


@dataclass
class Truecaser:
    table: dict[str, str]
    sentence_initial: bool = False

    def apply(self, text: str) -> str:
        first = True

        def recase(m: re.Match) -> str:
            nonlocal first
            tok = m.group(0)
            cased = self.table.get(tok, tok)
            if first and self.sentence_initial:
                up = cased[:1].upper() + cased[1:]
                if up.lower() == tok:
                    cased = up
            first = False
            return cased

        return _WORD.sub(recase, text)

    def to_json(self) -> str:
        payload = {"sentence_initial": self.sentence_initial, "table": self.table}
        return json.dumps(payload, ensure_ascii=False, indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Truecaser:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(dict(payload["table"]), bool(payload.get("sentence_initial", False)))


def truecase_train(corpus: Iterable[str], sentence_initial: bool = False) -> Truecaser:
    """Learn each token's majority casing.

    With ``sentence_initial`` the first token of every line is not counted
    (its capital is positional) and :meth:`Truecaser.apply` capitalises the
    first token instead.
    """
    counts: dict[str, Counter[str]] = defaultdict(Counter)
    for line in corpus:
        toks = word_tokenize(line)
        if sentence_initial:
            toks = toks[1:]
        for tok in toks:
            low = tok.lower()
            if len(low) == len(tok):
                counts[low][tok] += 1
    table = {}
    for low, forms in counts.items():
        best = min(forms.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        if best != low and best.lower() == low:
            table[low] = best
    return Truecaser(dict(sorted(table.items())), sentence_initial)


def truecase_apply(tc: Truecaser, lowercased_text: str) -> str:
    return tc.apply(lowercased_text)
