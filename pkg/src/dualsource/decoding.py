"""Beam search over an arbitrary next-token scorer, plus ensembling.

A scorer maps a list of equally long token prefixes (BOS excluded) to an
array of next-token log-probabilities, one row per prefix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .tokenize import EOS

Scorer = Callable[[Sequence[Sequence[int]]], np.ndarray]


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    finished: bool

    def score(self, alpha: float) -> float:
        return self.logprob / max(len(self.tokens), 1) ** alpha


@dataclass
class BeamResult:
    best: Hypothesis
    nbest: list[Hypothesis]
    flags: list[str]


def _rank_key(alpha: float):
    return lambda h: (-h.score(alpha), h.tokens)


def beam_search(
    scorer: Scorer,
    beam: int = 8,
    max_len: int = 64,
    length_norm: float = 0.6,
    eos: int = EOS,
) -> BeamResult:
    """Keep the ``beam`` best prefixes by cumulative log-probability.

    Finished hypotheses leave the beam and compete on
    ``logprob / len**length_norm``; search stops once ``beam`` of them exist
    or nothing is left to extend. Ties go to the smaller token sequence.
    When nothing finished within ``max_len`` the best unfinished hypothesis
    is returned with the ``no_eos`` flag.
    """
    if beam < 1:
        raise ValueError("beam width must be >= 1")
    active = [Hypothesis((), 0.0, False)]
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        if not active or len(finished) >= beam:
            break
        logp = np.asarray(scorer([h.tokens for h in active]), dtype=np.float64)
        if logp.ndim != 2 or logp.shape[0] != len(active):
            raise ValueError(f"scorer returned shape {logp.shape} for {len(active)} prefixes")
        vocab = logp.shape[1]
        k = min(beam, vocab)
        cands = []
        for i, h in enumerate(active):
            row = logp[i]
            if k < vocab:
                top = np.argpartition(-row, k - 1)[:k]
                # keep everything tied with the k-th best so tie-breaking stays by token id
                kth = row[top].min()
                top = np.flatnonzero(row >= kth)
            else:
                top = range(vocab)
            for t in top:
                t = int(t)
                cands.append((h.logprob + float(row[t]), h.tokens + (t,)))
        cands.sort(key=lambda c: (-c[0], c[1]))
        active = []
        for lp, toks in cands[:beam]:
            if toks[-1] == eos:
                finished.append(Hypothesis(toks, lp, True))
            else:
                active.append(Hypothesis(toks, lp, False))
    key = _rank_key(length_norm)
    flags = []
    if finished:
        pool = sorted(finished, key=key)
    else:
        flags.append("no_eos")
        pool = sorted(active, key=key)
    return BeamResult(pool[0], pool[:beam], flags)


def greedy_search(scorer: Scorer, max_len: int = 64, eos: int = EOS) -> Hypothesis:
    toks: tuple[int, ...] = ()
    lp = 0.0
    for _ in range(max_len):
        row = np.asarray(scorer([toks]), dtype=np.float64)[0]
        t = int(np.argmax(row))
        toks += (t,)
        lp += float(row[t])
        if t == eos:
            return Hypothesis(toks, lp, True)
    return Hypothesis(toks, lp, False)


def sequence_logprob(scorer: Scorer, tokens: Sequence[int]) -> float:
    """Re-score a full token sequence one step at a time."""
    total = 0.0
    for i, t in enumerate(tokens):
        total += float(np.asarray(scorer([tuple(tokens[:i])]), dtype=np.float64)[0, t])
    return total


def ensemble_scorer(scorers: Sequence[Scorer]) -> Scorer:
    """Average member probabilities (not log-probabilities) and re-log."""
    if not scorers:
        raise ValueError("an ensemble needs at least one scorer")
    if len(scorers) == 1:
        return scorers[0]

    def score(prefixes):
        probs = None
        for s in scorers:
            p = np.exp(np.asarray(s(prefixes), dtype=np.float64))
            if probs is None:
                probs = p
            elif p.shape != probs.shape:
                raise ValueError(f"ensemble members disagree on vocabulary: {p.shape} vs {probs.shape}")
            else:
                probs = probs + p
        with np.errstate(divide="ignore"):
            return np.log(probs / len(scorers))

    return score


def average_checkpoints(states: Sequence[Mapping[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Element-wise mean of parameter arrays, the weight-averaging alternative."""
    if not states:
        raise ValueError("nothing to average")
    names = list(states[0])
    for st in states[1:]:
        if list(st) != names:
            raise ValueError("checkpoints hold different parameter sets")
    return {n: np.mean([st[n] for st in states], axis=0).astype(states[0][n].dtype) for n in names}
