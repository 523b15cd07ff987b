"""Seeded synthetic corpora used by tests, benchmarks and the CLI smoke runs."""

from __future__ import annotations

import random

from .recycler import MultiPropertyRecord, SingleInstance

FIRST = ["anna", "boris", "clara", "dmitri", "elena", "felix", "greta", "hugo", "irena", "jonas",
         "karol", "lena", "marek", "nina", "oskar", "pola", "rafal", "sara", "tomas", "ula"]
LAST = ["nowak", "kowalski", "weber", "dubois", "rossi", "novak", "larsen", "silva", "moreau", "fischer",
        "berg", "costa", "wolf", "lindqvist", "marin", "horvat"]
CITIES = {"paris": "france", "lyon": "france", "berlin": "germany", "munich": "germany",
          "warsaw": "poland", "krakow": "poland", "rome": "italy", "milan": "italy",
          "madrid": "spain", "lisbon": "portugal", "vienna": "austria", "prague": "czechia"}
JOBS = ["painter", "poet", "chemist", "architect", "violinist", "surgeon", "judge", "engineer", "botanist", "sculptor"]


def _cap(s: str) -> str:
    return " ".join(w.capitalize() for w in s.split())


def extraction_corpus(n: int = 50, seed: int = 0) -> list[MultiPropertyRecord]:
    """Short biographies with 2-4 queried properties each.

    Place of birth, occupation and given name occur in the text; country of
    citizenship and instance of have to be inferred.
    """
    rng = random.Random(seed)
    cities = sorted(CITIES)
    out = []
    for i in range(n):
        first, last = rng.choice(FIRST), rng.choice(LAST)
        city = rng.choice(cities)
        jobs = sorted(rng.sample(JOBS, rng.choice([1, 1, 2])))
        job_text = " and ".join(jobs)
        year = rng.randint(1820, 1990)
        text = (
            f"{_cap(first)} {_cap(last)} ({year}) was a {job_text} born in {_cap(city)}. "
            f"{_cap(first)} worked for many years before moving abroad."
        )
        facts = {
            "place of birth": [_cap(city)],
            "occupation": jobs,
            "given name": [_cap(first)],
            "country of citizenship": [_cap(CITIES[city])],
            "instance of": ["human"],
        }
        keys = sorted(rng.sample(sorted(facts), rng.randint(2, 4)))
        out.append(MultiPropertyRecord(f"bio{i:04d}", text, {k: facts[k] for k in keys}))
    return out


def copy_corpus(n: int = 50, seed: int = 0) -> list[MultiPropertyRecord]:
    """The value of the single property ``copy`` is the article text itself."""
    rng = random.Random(seed)
    words = FIRST + JOBS
    out = []
    for i in range(n):
        text = " ".join(rng.choice(words) for _ in range(rng.randint(3, 6)))
        out.append(MultiPropertyRecord(f"copy{i:04d}", text, {"copy": [text]}))
    return out


def correlated_corpus(n: int = 200, seed: int = 0, correlated: bool = True) -> list[MultiPropertyRecord]:
    """Records whose ``instance of`` value is (or is not) implied by the other property names.

    Person-like records carry ``educated at`` and ``spouse``; place-like
    ones carry ``population`` and ``located in``. When ``correlated`` is
    False the ``instance of`` value is drawn independently of that choice.
    """
    rng = random.Random(seed)
    kinds = {
        "human": ("educated at", "spouse"),
        "city": ("population", "located in"),
    }
    out = []
    for i in range(n):
        kind = rng.choice(sorted(kinds))
        label = kind if correlated else rng.choice(sorted(kinds))
        token = f"{rng.choice(FIRST)}{rng.randint(10, 99)}"
        props = {k: [f"{k.split()[0]} {token}"] for k in kinds[kind]}
        props["instance of"] = [label]
        out.append(MultiPropertyRecord(f"cor{i:05d}", f"Entry {token} describes something.", props))
    return out


def split_corpus(n_articles: int = 5000, n_properties: int = 40, seed: int = 0) -> list[MultiPropertyRecord]:
    """Many articles over a fixed property universe with Zipf-like label frequencies."""
    rng = random.Random(seed)
    props = [f"prop{j:03d}" for j in range(n_properties)]
    weights = [1.0 / (j + 1) ** 0.5 for j in range(n_properties)]
    out = []
    for i in range(n_articles):
        k = rng.randint(1, 5)
        chosen = set()
        while len(chosen) < k:
            chosen.add(rng.choices(props, weights)[0])
        p = {name: [f"v{rng.randint(0, 50)}" for _ in range(rng.randint(1, 2))] for name in sorted(chosen)}
        p = {name: list(dict.fromkeys(v)) for name, v in p.items()}
        out.append(MultiPropertyRecord(f"art{i:06d}", f"article {i} text", p))
    return out


def explode(records) -> list[SingleInstance]:
    """Back to the original one-instance-per-property schema."""
    return [SingleInstance(r.article_id, r.text, k, list(v)) for r in records for k, v in r.properties.items()]
