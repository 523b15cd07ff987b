"""Text format for decoder targets.

A multi-property target reads ``name = v1 | v2 <sep> name2 = v3``:
properties in lexicographic order, values sorted and deduplicated.
Inside names and values the characters ``\\ = | <`` are backslash-escaped,
so an unescaped ``<sep>`` is always a separator. Whitespace at either end
of a name or value is escaped too, which lets the parser strip the
separator padding without touching the payload.
"""

from __future__ import annotations

from typing import Iterable, Mapping

from .tokenize import SEP_TEXT

_SPECIAL = "\\=|<"


def escape(s: str) -> str:
    out = ["\\" + c if c in _SPECIAL else c for c in s]
    if out and s[0].isspace():
        out[0] = "\\" + s[0]
    if len(out) > 1 and s[-1].isspace():
        out[-1] = "\\" + s[-1]
    return "".join(out)


def unescape(s: str) -> str:
    out = []
    i = 0
    while i < len(s):
        if s[i] == "\\" and i + 1 < len(s):
            out.append(s[i + 1])
            i += 2
        else:
            out.append(s[i])
            i += 1
    return "".join(out)


def _strip_unescaped(s: str) -> str:
    """Strip outer whitespace that is not protected by a backslash."""
    s = s.lstrip()
    end = len(s)
    while end and s[end - 1].isspace():
        slashes = 0
        while end - 2 - slashes >= 0 and s[end - 2 - slashes] == "\\":
            slashes += 1
        if slashes % 2:
            break
        end -= 1
    return s[:end]


def _split_unescaped(s: str, sep: str, maxsplit: int = -1) -> list[str]:
    parts = []
    cur = []
    i = 0
    n = len(sep)
    while i < len(s):
        if s[i] == "\\" and i + 1 < len(s):
            cur.append(s[i:i + 2])
            i += 2
        elif s.startswith(sep, i) and maxsplit != 0:
            parts.append("".join(cur))
            cur = []
            i += n
            maxsplit -= 1
        else:
            cur.append(s[i])
            i += 1
    parts.append("".join(cur))
    return parts


def normalize_map(m: Mapping[str, Iterable[str]]) -> dict[str, list[str]]:
    return {k: sorted(set(m[k])) for k in sorted(m)}


def serialize_values(values: Iterable[str]) -> str:
    return " | ".join(escape(v) for v in sorted(set(values)))


def parse_values(text: str) -> list[str]:
    vals = (unescape(_strip_unescaped(v)) for v in _split_unescaped(text, "|"))
    return sorted({v for v in vals if v})


def serialize_target(m: Mapping[str, Iterable[str]]) -> str:
    return f" {SEP_TEXT} ".join(
        f"{escape(k)} = {serialize_values(vals)}" for k, vals in normalize_map(m).items()
    )


def parse_target(text: str) -> tuple[dict[str, list[str]], int]:
    """Inverse of :func:`serialize_target`, tolerant of broken model output.

    Returns the recovered map and the number of malformed segments (no
    ``=``, empty name, or no values); malformed segments are skipped.
    """
    if not text.strip():
        return {}, 0
    out: dict[str, set[str]] = {}
    malformed = 0
    for seg in _split_unescaped(text, SEP_TEXT):
        pieces = _split_unescaped(seg, "=", maxsplit=1)
        if len(pieces) != 2:
            malformed += 1
            continue
        name = unescape(_strip_unescaped(pieces[0]))
        values = parse_values(pieces[1])
        if not name or not values:
            malformed += 1
            continue
        out.setdefault(name, set()).update(values)
    return {k: sorted(v) for k, v in sorted(out.items())}, malformed
