"""End-to-end helpers: fit a tokenizer, train either model, predict property maps."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .batching import build_examples, collate, encode_article, encode_property_names
from .decoding import beam_search, ensemble_scorer
from .recycler import MultiPropertyRecord
from .seq2seq import BasicSeq2Seq, Seq2SeqConfig, baseline_source, build_seq2seq_examples, collate_seq2seq
from .targets import parse_target, parse_values, serialize_target
from .tokenize import (
    PAD,
    SubwordModel,
    Truecaser,
    baseline_normalize,
    detokenize,
    train_subword,
    truecase_train,
    word_tokenize,
)
from .training import TrainConfig, Trainer, TrainResult
from .transformer import DualSourceConfig, DualSourceModel

logger = logging.getLogger(__name__)


def tokenizer_corpus(records: Iterable[MultiPropertyRecord], lowercase: bool = False) -> list[str]:
    """Inputs and outputs together: article texts, property names, targets."""
    lines = []
    for r in records:
        if lowercase:
            lines.append(baseline_normalize(r.text))
            lines.extend(baseline_normalize(k) for k in r.properties)
            lines.extend(baseline_normalize(v) for vals in r.properties.values() for v in vals)
        else:
            lines.append(r.text)
            lines.append(serialize_target(r.properties))
    return lines


def fit_tokenizer(records: Sequence[MultiPropertyRecord], vocab_size: int, lowercase: bool = False) -> SubwordModel:
    return train_subword(tokenizer_corpus(records, lowercase), vocab_size)


def vocab_fingerprint(sp: SubwordModel) -> str:
    return hashlib.sha256(sp.to_json().encode("utf-8")).hexdigest()[:16]


@dataclass
class Prediction:
    properties: dict[str, list[str]]
    score: float
    flags: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# dual-source transformer
# ---------------------------------------------------------------------------

def train_dual(
    train: Sequence[MultiPropertyRecord],
    valid: Sequence[MultiPropertyRecord],
    sp: SubwordModel,
    cfg: DualSourceConfig,
    tcfg: TrainConfig,
    mode: str = "multi",
    ablate: bool = False,
    outdir=None,
    seed: int = 0,
    on_validation=None,
    model: DualSourceModel | None = None,
) -> tuple[DualSourceModel, TrainResult]:
    """Train a dual-source model; pass ``model`` to keep a handle on it during training."""
    if cfg.vocab_size != sp.vocab_size:
        raise ValueError(f"config vocab_size {cfg.vocab_size} != tokenizer vocab {sp.vocab_size}")
    model = model or DualSourceModel(cfg, seed=seed)
    tr = build_examples(train, sp, mode, cfg.max_positions, ablate_article=ablate)
    va = build_examples(valid, sp, mode, cfg.max_positions, ablate_article=ablate)
    meta = {"model": "dual", "mode": mode, "ablate_article": ablate, "config": cfg.to_dict(),
            "vocab": vocab_fingerprint(sp)}
    trainer = Trainer(model, tr, va, collate, tcfg, outdir=outdir, meta=meta, use_dropout=cfg.dropout > 0)
    result = trainer.fit(on_validation)
    return model, result


def predict_dual(
    models: Sequence[DualSourceModel],
    sp: SubwordModel,
    records: Iterable[MultiPropertyRecord],
    mode: str = "multi",
    beam: int = 8,
    max_len: int = 96,
    ablate: bool = False,
) -> dict[str, Prediction]:
    """Decode the queried properties of each record.

    Several models are ensembled by probability averaging. Predicted keys
    that were not queried are dropped and flagged.
    """
    out = {}
    for rec in records:
        art = [PAD] if ablate else encode_article(sp, rec.text, models[0].cfg.max_positions)
        if mode == "multi":
            prop = encode_property_names(sp, rec.properties)
            res = beam_search(ensemble_scorer([m.scorer(art, prop) for m in models]), beam, max_len)
            parsed, malformed = parse_target(sp.decode(res.best.tokens))
            flags = list(res.flags)
            if malformed:
                flags.append(f"malformed={malformed}")
            extra = sorted(set(parsed) - set(rec.properties))
            if extra:
                flags.append(f"unqueried={len(extra)}")
            props = {k: v for k, v in parsed.items() if k in rec.properties}
            out[rec.article_id] = Prediction(props, res.best.logprob, flags)
        else:
            props, score, flags = {}, 0.0, []
            for name in sorted(rec.properties):
                prop = encode_property_names(sp, [name])
                res = beam_search(ensemble_scorer([m.scorer(art, prop) for m in models]), beam, max_len)
                vals = parse_values(sp.decode(res.best.tokens))
                if vals:
                    props[name] = vals
                score += res.best.logprob
                flags.extend(f"{name}:{f}" for f in res.flags)
            out[rec.article_id] = Prediction(props, score, flags)
    return out


# ---------------------------------------------------------------------------
# basic seq2seq
# ---------------------------------------------------------------------------

def train_basic(
    train: Sequence[MultiPropertyRecord],
    valid: Sequence[MultiPropertyRecord],
    sp: SubwordModel,
    cfg: Seq2SeqConfig,
    tcfg: TrainConfig,
    outdir=None,
    seed: int = 0,
    on_validation=None,
    model: BasicSeq2Seq | None = None,
) -> tuple[BasicSeq2Seq, TrainResult]:
    if cfg.vocab_size != sp.vocab_size:
        raise ValueError(f"config vocab_size {cfg.vocab_size} != tokenizer vocab {sp.vocab_size}")
    model = model or BasicSeq2Seq(cfg, seed=seed)
    tr = build_seq2seq_examples(train, sp, cfg.max_source)
    va = build_seq2seq_examples(valid, sp, cfg.max_source)
    meta = {"model": "basic", "mode": "single", "config": cfg.to_dict(), "vocab": vocab_fingerprint(sp)}
    trainer = Trainer(model, tr, va, collate_seq2seq, tcfg, outdir=outdir, meta=meta, use_dropout=False)
    return model, trainer.fit(on_validation)


def fit_truecaser(records: Iterable[MultiPropertyRecord]) -> Truecaser:
    lines = []
    for r in records:
        lines.append(r.text)
        lines.extend(v for vals in r.properties.values() for v in vals)
    return truecase_train(lines)


def predict_basic(
    models: Sequence[BasicSeq2Seq],
    sp: SubwordModel,
    records: Iterable[MultiPropertyRecord],
    truecaser: Truecaser | None = None,
    beam: int = 8,
    max_len: int = 48,
) -> dict[str, Prediction]:
    """One decode per (article, property); outputs are detokenized and truecased."""
    out = {}
    for rec in records:
        props, score, flags = {}, 0.0, []
        for name in sorted(rec.properties):
            src = baseline_source(sp, name, rec.text, models[0].cfg.max_source)
            res = beam_search(ensemble_scorer([m.scorer(src) for m in models]), beam, max_len)
            # targets were word-tokenized; undo that before truecasing
            vals = [detokenize(word_tokenize(v)) for v in parse_values(sp.decode(res.best.tokens))]
            if truecaser is not None:
                vals = [truecaser.apply(v) for v in vals]
            if vals:
                props[name] = vals
            score += res.best.logprob
            flags.extend(f"{name}:{f}" for f in res.flags)
        out[rec.article_id] = Prediction(props, score, flags)
    return out


def as_property_maps(preds: dict[str, Prediction]) -> dict[str, dict[str, list[str]]]:
    return {aid: p.properties for aid, p in preds.items()}


def gold_maps(records: Iterable[MultiPropertyRecord]) -> dict[str, dict[str, list[str]]]:
    return {r.article_id: r.properties for r in records}
