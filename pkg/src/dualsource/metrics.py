"""Answer-level F1 metrics for single- and multi-property extraction.

Values are compared as normalised strings (lowercase, collapsed whitespace,
outer punctuation stripped) collected into sets, so every score is
invariant to the order in which answers are generated.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

_PUNCT = string.punctuation + "“”‘’«»„—–…"

Properties = Mapping[str, Sequence[str]]


def normalize_value(value: str) -> str:
    return " ".join(value.lower().split()).strip(_PUNCT + " ")


def value_set(values: Iterable[str]) -> frozenset[str]:
    return frozenset(normalize_value(v) for v in values)


def set_f1(pred: Iterable[str], gold: Iterable[str]) -> float:
    """F1 between two answer sets; both empty counts as a perfect match."""
    p, g = value_set(pred), value_set(gold)
    if not p and not g:
        return 1.0
    hit = len(p & g)
    if hit == 0:
        return 0.0
    precision = hit / len(p)
    recall = hit / len(g)
    return 2 * precision * recall / (precision + recall)


def set_f1_exact(pred: Iterable[str], gold: Iterable[str]) -> Fraction:
    """``set_f1`` as a fraction: 2|P&G| / (|P| + |G|)."""
    p, g = value_set(pred), value_set(gold)
    if not p and not g:
        return Fraction(1)
    return Fraction(2 * len(p & g), len(p) + len(g))


def mean_f1(pairs: Sequence[tuple[Iterable[str], Iterable[str]]]) -> float:
    if not pairs:
        raise ValueError("mean_f1 needs at least one (pred, gold) pair")
    return math.fsum(set_f1(p, g) for p, g in pairs) / len(pairs)


def _index_predictions(preds: Mapping[str, Properties], golds: Mapping[str, Properties]):
    for aid, props in preds.items():
        if aid not in golds:
            raise KeyError(f"prediction for unknown article {aid!r}")
        extra = set(props) - set(golds[aid])
        if extra:
            raise KeyError(f"article {aid!r}: predicted keys {sorted(extra)} were not queried")


def article_scores(preds: Mapping[str, Properties], golds: Mapping[str, Properties]) -> dict[str, float]:
    """Per-article mean of per-key F1 over the gold (queried) keys."""
    _index_predictions(preds, golds)
    out = {}
    for aid, gold in golds.items():
        if not gold:
            raise ValueError(f"gold article {aid!r} has no properties")
        pred = preds.get(aid, {})
        out[aid] = math.fsum(set_f1(pred.get(k, ()), vals) for k, vals in gold.items()) / len(gold)
    return out


def mean_multilabel_f1(preds: Mapping[str, Properties], golds: Mapping[str, Properties]) -> float:
    if not golds:
        raise ValueError("mean_multilabel_f1 needs at least one gold article")
    scores = article_scores(preds, golds)
    return math.fsum(scores[a] for a in sorted(scores)) / len(scores)


def per_label_f1(preds: Mapping[str, Properties], golds: Mapping[str, Properties], key: str) -> float:
    _index_predictions(preds, golds)
    scores = [
        set_f1(preds.get(aid, {}).get(key, ()), gold[key])
        for aid, gold in sorted(golds.items())
        if key in gold
    ]
    if not scores:
        raise KeyError(f"property {key!r} does not occur in any gold record")
    return math.fsum(scores) / len(scores)


def subset_recall(
    preds: Mapping[str, Properties],
    golds: Mapping[str, Properties],
    tags: Mapping[tuple[str, str, str], str],
    which: str,
) -> float:
    """Share of gold values tagged ``which`` (``"EM"`` or ``"IN"``) that were predicted.

    ``tags`` maps ``(article_id, property, value)`` to a tag; values are
    matched after normalisation.
    """
    if which not in ("EM", "IN"):
        raise ValueError(f"subset must be EM or IN, got {which!r}")
    norm_tags = {(a, k, normalize_value(v)): t for (a, k, v), t in tags.items()}
    total = hit = 0
    for aid, gold in golds.items():
        pred = preds.get(aid, {})
        for key, vals in gold.items():
            predicted = value_set(pred.get(key, ()))
            for v in value_set(vals):
                if norm_tags.get((aid, key, v)) != which:
                    continue
                total += 1
                hit += v in predicted
    if total == 0:
        raise ValueError(f"no gold value carries the {which} tag")
    return hit / total


@dataclass
class MetricReport:
    mean_f1: float
    mean_multilabel_f1: float
    per_label: dict[str, float] = field(default_factory=dict)
    em_recall: float | None = None
    in_recall: float | None = None
    counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = [("Mean-F1", self.mean_f1), ("Mean-MultiLabel-F1", self.mean_multilabel_f1)]
        if self.em_recall is not None:
            rows.append(("EM recall", self.em_recall))
        if self.in_recall is not None:
            rows.append(("IN recall", self.in_recall))
        rows += [(f"  {k}", v) for k, v in sorted(self.per_label.items())]
        width = max(len(name) for name, _ in rows)
        lines = [f"{name:<{width}}  {score:8.4f}" for name, score in rows]
        lines += [f"{name:<{width}}  {n:8d}" for name, n in sorted(self.counts.items())]
        return "\n".join(lines) + "\n"


class StreamingMetrics:
    """Accumulate every metric one article at a time.

    Sums are kept as exact fractions, so the result does not depend on the
    order in which articles, keys or values arrive. Besides the per-label
    sums only the set of seen article ids is retained.
    """

    def __init__(self):
        self.instances = 0
        self.articles = 0
        self._f1_sum = Fraction(0)
        self._article_sum = Fraction(0)
        self._label_sum: dict[str, Fraction] = {}
        self._label_n: dict[str, int] = {}
        self._subset = {"EM": [0, 0], "IN": [0, 0]}
        self._seen: set[str] = set()

    def add(
        self,
        article_id: str,
        pred: Properties,
        gold: Properties,
        tags: Mapping[tuple[str, str], str] | None = None,
    ) -> None:
        """Score one article. ``tags`` maps ``(property, value)`` to EM or IN."""
        if article_id in self._seen:
            raise ValueError(f"article {article_id!r} scored twice")
        if not gold:
            raise ValueError(f"gold article {article_id!r} has no properties")
        extra = set(pred) - set(gold)
        if extra:
            raise KeyError(f"article {article_id!r}: predicted keys {sorted(extra)} were not queried")
        self._seen.add(article_id)
        norm_tags = {(k, normalize_value(v)): t for (k, v), t in (tags or {}).items()}
        total = Fraction(0)
        for key, vals in gold.items():
            f = set_f1_exact(pred.get(key, ()), vals)
            total += f
            self._label_sum[key] = self._label_sum.get(key, Fraction(0)) + f
            self._label_n[key] = self._label_n.get(key, 0) + 1
            if norm_tags:
                predicted = value_set(pred.get(key, ()))
                for v in value_set(vals):
                    t = norm_tags.get((key, v))
                    if t in self._subset:
                        self._subset[t][0] += v in predicted
                        self._subset[t][1] += 1
        self._f1_sum += total
        self._article_sum += total / len(gold)
        self.instances += len(gold)
        self.articles += 1

    @property
    def mean_f1(self) -> float:
        if not self.instances:
            raise ValueError("no instances scored")
        return float(self._f1_sum / self.instances)

    @property
    def mean_multilabel_f1(self) -> float:
        if not self.articles:
            raise ValueError("no articles scored")
        return float(self._article_sum / self.articles)

    def per_label(self, key: str) -> float:
        if key not in self._label_n:
            raise KeyError(f"property {key!r} does not occur in any gold record")
        return float(self._label_sum[key] / self._label_n[key])

    def subset_recall(self, which: str) -> float | None:
        hit, total = self._subset[which]
        return hit / total if total else None

    def report(self) -> MetricReport:
        return MetricReport(
            mean_f1=self.mean_f1,
            mean_multilabel_f1=self.mean_multilabel_f1,
            per_label={k: self.per_label(k) for k in sorted(self._label_n)},
            em_recall=self.subset_recall("EM"),
            in_recall=self.subset_recall("IN"),
            counts={"articles": self.articles, "instances": self.instances, "labels": len(self._label_n)},
        )


def evaluate(
    preds: Mapping[str, Properties],
    golds: Mapping[str, Properties],
    tags: Mapping[tuple[str, str, str], str] | None = None,
) -> MetricReport:
    """Every metric at once; Mean-F1 treats each (article, key) as one instance.

    Articles without a prediction score as if every key were left empty.
    """
    _index_predictions(preds, golds)
    by_article: dict[str, dict[tuple[str, str], str]] = {}
    for (aid, k, v), t in (tags or {}).items():
        by_article.setdefault(aid, {})[(k, v)] = t
    acc = StreamingMetrics()
    for aid in sorted(golds):
        acc.add(aid, preds.get(aid, {}), golds[aid], by_article.get(aid))
    return acc.report()
