"""Build a multi-property dataset with leakage-free train/validation/test splits.

Per-property instances are merged into one record per article. Property
names are partitioned into four label sets:

    set1  test only          set2  validation only
    set3  test + validation  set4  unrestricted

Articles are then drafted into blocks A-G in a fixed order (A, C, E form
the test split; B, D, F validation; G train). Each block strips the label
sets it must not contain, and once a block is drafted the remaining pool
loses the label sets that no later block may carry.
"""

from __future__ import annotations

import json
import logging
import random
import re
import string
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .metrics import normalize_value

logger = logging.getLogger(__name__)

DEFAULT_PROPORTIONS = (0.2, 0.2, 0.1, 0.5)
FULL_BLOCK_SIZES = {"A": 1000, "B": 1000, "C": 2000, "D": 2000, "E": 2000, "F": 2000}
TEST_BLOCKS = ("A", "C", "E")
VALIDATION_BLOCKS = ("B", "D", "F")


@dataclass
class SingleInstance:
    article_id: str
    text: str
    property: str
    values: list[str]

    def __post_init__(self):
        self.values = list(dict.fromkeys(self.values))
        if not self.values:
            raise ValueError(f"instance {self.article_id}/{self.property} has no values")

    def to_json(self) -> dict:
        return {"id": self.article_id, "text": self.text, "property": self.property, "values": self.values}

    @classmethod
    def from_json(cls, obj: Mapping, fields: Mapping[str, str] | None = None) -> SingleInstance:
        """Read one JSON object; ``fields`` renames keys for foreign dumps."""
        f = {"id": "id", "text": "text", "property": "property", "values": "values"}
        f.update(fields or {})
        values = obj[f["values"]]
        if isinstance(values, str):
            values = [values]
        return cls(str(obj[f["id"]]), obj[f["text"]], obj[f["property"]], list(values))


@dataclass
class MultiPropertyRecord:
    article_id: str
    text: str
    properties: dict[str, list[str]]

    def value_count(self) -> int:
        return sum(len(v) for v in self.properties.values())

    def to_json(self) -> dict:
        return {"id": self.article_id, "text": self.text, "properties": self.properties}

    @classmethod
    def from_json(cls, obj: Mapping) -> MultiPropertyRecord:
        props = {k: list(v) for k, v in obj["properties"].items()}
        if not props:
            raise ValueError(f"record {obj.get('id')!r} has no properties")
        return cls(str(obj["id"]), obj.get("text", ""), props)


def merge(instances: Iterable[SingleInstance], warnings: dict | None = None) -> Iterator[MultiPropertyRecord]:
    """Combine per-property instances into one record per article id.

    Value lists for the same property are unioned in first-seen order.
    When one id carries different texts the longest wins and the conflict
    is counted in ``warnings["text_conflicts"]``.
    """
    texts: dict[str, str] = {}
    props: dict[str, dict[str, dict[str, None]]] = {}
    conflicts = 0
    for inst in instances:
        aid = inst.article_id
        prev = texts.get(aid)
        if prev is None:
            texts[aid] = inst.text
            props[aid] = {}
        elif prev != inst.text:
            conflicts += 1
            if len(inst.text) > len(prev) or (len(inst.text) == len(prev) and inst.text < prev):
                texts[aid] = inst.text
        slot = props[aid].setdefault(inst.property, {})
        for v in inst.values:
            slot[v] = None
    if warnings is not None:
        warnings["text_conflicts"] = warnings.get("text_conflicts", 0) + conflicts
    if conflicts:
        logger.warning("%d conflicting article texts while merging; kept the longest", conflicts)
    for aid in sorted(texts):
        yield MultiPropertyRecord(
            aid, texts[aid], {k: list(v) for k, v in sorted(props[aid].items())}
        )


# ---------------------------------------------------------------------------
# label partition
# ---------------------------------------------------------------------------

@dataclass
class LabelPartition:
    set1: frozenset[str]
    set2: frozenset[str]
    set3: frozenset[str]
    set4: frozenset[str]
    seed: int = 0

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return len(self.set1), len(self.set2), len(self.set3), len(self.set4)

    def label_set(self, prop: str) -> int:
        for i, s in enumerate((self.set1, self.set2, self.set3, self.set4), start=1):
            if prop in s:
                return i
        raise KeyError(f"property {prop!r} is not in the partition")

    def to_json(self) -> str:
        payload = {
            "seed": self.seed,
            "set1": sorted(self.set1),
            "set2": sorted(self.set2),
            "set3": sorted(self.set3),
            "set4": sorted(self.set4),
        }
        return json.dumps(payload, indent=1, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> LabelPartition:
        p = json.loads(text)
        return cls(*(frozenset(p[f"set{i}"]) for i in range(1, 5)), seed=p.get("seed", 0))


def partition_labels(
    properties: Iterable[str],
    proportions: Sequence[float] = DEFAULT_PROPORTIONS,
    seed: int = 0,
) -> LabelPartition:
    """Assign each property to one of the four label sets.

    Sets 1-3 get ``round(p * N)`` properties; set 4 takes the remainder.
    The assignment is a seeded shuffle of the sorted property names.
    """
    props = sorted(set(properties))
    n = len(props)
    if len(proportions) != 4 or abs(sum(proportions) - 1.0) > 1e-9:
        raise ValueError(f"proportions must be four fractions summing to 1, got {tuple(proportions)}")
    if any(p < 0 for p in proportions):
        raise ValueError("proportions must be non-negative")
    if n < 4:
        raise ValueError(f"need at least 4 properties to partition, got {n}")
    sizes = [int(round(p * n)) for p in proportions[:3]]
    if sum(sizes) > n:
        raise ValueError(f"rounded label-set sizes {sizes} exceed {n} properties")
    random.Random(seed).shuffle(props)
    a, b, c = sizes
    return LabelPartition(
        frozenset(props[:a]),
        frozenset(props[a:a + b]),
        frozenset(props[a + b:a + b + c]),
        frozenset(props[a + b + c:]),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# split drafting
# ---------------------------------------------------------------------------

class InsufficientArticles(ValueError):
    def __init__(self, shortfall: dict[str, int]):
        self.shortfall = shortfall
        detail = ", ".join(f"{b}: short by {n}" for b, n in shortfall.items())
        super().__init__(f"not enough eligible articles ({detail})")


@dataclass
class SplitPlan:
    block_counts: dict[str, int]
    train: list[MultiPropertyRecord]
    validation: list[MultiPropertyRecord]
    test: list[MultiPropertyRecord]
    blocks: dict[str, list[str]] = field(default_factory=dict)
    audit: dict = field(default_factory=dict)


def _strip(rec: MultiPropertyRecord, banned: frozenset[str]) -> MultiPropertyRecord:
    return MultiPropertyRecord(
        rec.article_id, rec.text, {k: v for k, v in rec.properties.items() if k not in banned}
    )


def scaled_block_sizes(scale: float = 1.0, base: Mapping[str, int] = FULL_BLOCK_SIZES) -> dict[str, int]:
    return {b: max(1, int(round(n * scale))) for b, n in base.items()}


def draft_splits(
    records: Iterable[MultiPropertyRecord],
    partition: LabelPartition,
    block_sizes: Mapping[str, int] = FULL_BLOCK_SIZES,
    seed: int = 0,
) -> SplitPlan:
    """Draft blocks A-F in order and leave the rest as training block G.

    Block A prefers articles with the most set1 properties (ties by id);
    the other blocks draw a seeded random sample from their eligible pool.
    Raises :class:`InsufficientArticles` listing every block that could not
    be filled.
    """
    s1, s2, s3 = partition.set1, partition.set2, partition.set3
    pool: dict[str, MultiPropertyRecord] = OrderedDict(
        (r.article_id, r) for r in sorted(records, key=lambda r: r.article_id)
    )
    rng = random.Random(seed)
    total_values = sum(r.value_count() for r in pool.values())
    stripped = 0
    dropped_articles = 0
    shortfall: dict[str, int] = {}
    blocks: dict[str, list[MultiPropertyRecord]] = {}

    def restrict_pool(banned: frozenset[str]) -> None:
        nonlocal stripped, dropped_articles
        for aid in list(pool):
            rec = pool[aid]
            kept = _strip(rec, banned)
            stripped += rec.value_count() - kept.value_count()
            if kept.properties:
                pool[aid] = kept
            else:
                del pool[aid]
                dropped_articles += 1

    def take(name: str, must: frozenset[str], banned: frozenset[str], prefer: bool = False) -> None:
        nonlocal stripped
        want = block_sizes.get(name, 0)
        eligible = [aid for aid, r in pool.items() if any(k in must for k in r.properties)]
        if prefer:
            eligible.sort(key=lambda a: (-sum(k in must for k in pool[a].properties), a))
        else:
            rng.shuffle(eligible)
        if len(eligible) < want:
            shortfall[name] = want - len(eligible)
        chosen = []
        for aid in eligible[:want]:
            rec = pool.pop(aid)
            kept = _strip(rec, banned)
            stripped += rec.value_count() - kept.value_count()
            chosen.append(kept)
        blocks[name] = sorted(chosen, key=lambda r: r.article_id)

    none = frozenset()
    take("A", s1, s2, prefer=True)
    take("B", s2, s1)
    restrict_pool(s1 | s2)
    take("C", s3, none)
    take("D", s3, none)
    restrict_pool(s3)
    take("E", partition.set4, none)
    take("F", partition.set4, none)
    blocks["G"] = list(pool.values())
    if shortfall:
        raise InsufficientArticles(shortfall)

    def union(names):
        return sorted((r for n in names for r in blocks[n]), key=lambda r: r.article_id)

    plan = SplitPlan(
        block_counts={b: len(rs) for b, rs in blocks.items()},
        train=list(blocks["G"]),
        validation=union(VALIDATION_BLOCKS),
        test=union(TEST_BLOCKS),
        blocks={b: [r.article_id for r in rs] for b, rs in blocks.items()},
    )
    plan.audit = audit_splits(plan.train, plan.validation, plan.test, partition, blocks=blocks)
    kept_values = sum(r.value_count() for rs in blocks.values() for r in rs)
    plan.audit["accounting"] = {
        "input_values": total_values,
        "stripped_values": stripped,
        "kept_values": kept_values,
        "dropped_articles": dropped_articles,
        "balanced": total_values - stripped == kept_values,
    }
    plan.audit["block_counts"] = plan.block_counts
    return plan


_BLOCK_RULES = {
    # block: (label set that must occur, label sets that must not occur)
    "A": (1, (2,)),
    "B": (2, (1,)),
    "C": (3, (1, 2)),
    "D": (3, (1, 2)),
    "E": (4, (1, 2, 3)),
    "F": (4, (1, 2, 3)),
    "G": (4, (1, 2, 3)),
}


def audit_splits(
    train: Sequence[MultiPropertyRecord],
    validation: Sequence[MultiPropertyRecord],
    test: Sequence[MultiPropertyRecord],
    partition: LabelPartition,
    blocks: Mapping[str, Sequence[MultiPropertyRecord]] | None = None,
) -> dict:
    """Exhaustively check article disjointness and label containment.

    ``audit["ok"]`` is true only when every overlap and violation count is 0.
    """
    ids = {name: {r.article_id for r in rs} for name, rs in
           (("train", train), ("validation", validation), ("test", test))}
    overlap = {
        "train_test": len(ids["train"] & ids["test"]),
        "train_validation": len(ids["train"] & ids["validation"]),
        "test_validation": len(ids["test"] & ids["validation"]),
    }
    sets = {1: partition.set1, 2: partition.set2, 3: partition.set3, 4: partition.set4}

    def count(rs, label_sets):
        return sum(1 for r in rs for k in r.properties if any(k in sets[i] for i in label_sets))

    unknown = sorted({k for rs in (train, validation, test) for r in rs for k in r.properties}
                     - set().union(*sets.values()))
    violations = {
        "set1_in_train": count(train, (1,)),
        "set1_in_validation": count(validation, (1,)),
        "set2_in_train": count(train, (2,)),
        "set2_in_test": count(test, (2,)),
        "set3_in_train": count(train, (3,)),
        "empty_records": sum(1 for rs in (train, validation, test) for r in rs if not r.properties),
        "unknown_properties": len(unknown),
    }
    if blocks is not None:
        for name, rs in blocks.items():
            must, banned = _BLOCK_RULES[name]
            violations[f"block_{name}_missing_set{must}"] = sum(
                1 for r in rs if not any(k in sets[must] for k in r.properties)
            )
            violations[f"block_{name}_banned"] = count(rs, banned)
    ok = all(v == 0 for v in overlap.values()) and all(v == 0 for v in violations.values())
    return {
        "ok": ok,
        "sizes": {k: len(v) for k, v in ids.items()},
        "overlap": overlap,
        "violations": violations,
    }


# ---------------------------------------------------------------------------
# annotation filter and EM/IN tags
# ---------------------------------------------------------------------------

def apply_annotation_filter(
    records: Iterable[MultiPropertyRecord], removals: Iterable[Mapping]
) -> tuple[list[MultiPropertyRecord], dict]:
    """Remove values (or whole properties) judged unanswerable.

    Each removal is ``{"id", "property"}`` plus an optional ``"value"``;
    without a value the whole property goes. Articles left empty are
    dropped. Returns the filtered records and removal statistics.
    """
    records = list(records)
    by_id = {r.article_id: r for r in records}
    whole: dict[str, set[str]] = {}
    single: dict[tuple[str, str], set[str]] = {}
    unknown = 0
    for entry in removals:
        aid = str(entry["id"])
        if aid not in by_id:
            unknown += 1
            continue
        if entry.get("value") is None:
            whole.setdefault(aid, set()).add(entry["property"])
        else:
            single.setdefault((aid, entry["property"]), set()).add(entry["value"])
    total_values = sum(r.value_count() for r in records)
    removed = 0
    out = []
    for rec in records:
        props = {}
        for k, vals in rec.properties.items():
            if k in whole.get(rec.article_id, ()):
                removed += len(vals)
                continue
            gone = single.get((rec.article_id, k), set())
            kept = [v for v in vals if v not in gone]
            removed += len(vals) - len(kept)
            if kept:
                props[k] = kept
        if props:
            out.append(MultiPropertyRecord(rec.article_id, rec.text, props))
    dropped = len(records) - len(out)
    stats = {
        "values_total": total_values,
        "values_removed": removed,
        "values_removed_pct": 100.0 * removed / total_values if total_values else 0.0,
        "articles_total": len(records),
        "articles_dropped": dropped,
        "articles_dropped_pct": 100.0 * dropped / len(records) if records else 0.0,
        "unknown_articles": unknown,
    }
    return out, stats


_PUNCT = string.punctuation + "“”‘’«»„—–…"
_SPACE = re.compile(r"\s+")


def _norm_tokens(text: str) -> list[str]:
    toks = (t.strip(_PUNCT) for t in _SPACE.split(normalize_value(text)))
    return [t for t in toks if t]


def _contains(hay: Sequence[str], needle: Sequence[str]) -> bool:
    n = len(needle)
    if n == 0:
        return False
    first = needle[0]
    for i in range(len(hay) - n + 1):
        if hay[i] == first and list(hay[i:i + n]) == list(needle):
            return True
    return False


def tag_em_in(record: MultiPropertyRecord) -> dict[tuple[str, str], str]:
    """Tag each (property, value) as ``EM`` when the value appears in the text.

    Appearance means a contiguous run of normalised article tokens equal to
    the normalised value tokens, so "art" does not match inside "Earth".
    """
    hay = _norm_tokens(record.text)
    tags = {}
    for k, vals in record.properties.items():
        for v in vals:
            tags[(k, v)] = "EM" if _contains(hay, _norm_tokens(v)) else "IN"
    return tags


# ---------------------------------------------------------------------------
# JSONL helpers
# ---------------------------------------------------------------------------

def read_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def write_jsonl(path, objects: Iterable[Mapping]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for obj in objects:
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def read_records(path) -> list[MultiPropertyRecord]:
    return [MultiPropertyRecord.from_json(o) for o in read_jsonl(path)]


def write_records(path, records: Iterable[MultiPropertyRecord]) -> int:
    return write_jsonl(path, (r.to_json() for r in records))
