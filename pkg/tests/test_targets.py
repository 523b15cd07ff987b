from hypothesis import given, settings
from hypothesis import strategies as st

from dualsource.targets import (
    escape,
    normalize_map,
    parse_target,
    parse_values,
    serialize_target,
    serialize_values,
    unescape,
)

tricky = st.text(alphabet=st.sampled_from(list("ab =|<>\\sep ü\t")), min_size=1, max_size=8)
maps = st.dictionaries(tricky, st.lists(tricky, min_size=1, max_size=3), min_size=1, max_size=4)


def test_format_is_sorted_and_readable():
    text = serialize_target({"place of birth": ["Paris"], "occupation": ["poet", "painter"]})
    assert text == "occupation = painter | poet <sep> place of birth = Paris"


def test_escaping_of_reserved_characters():
    assert escape("a=b|c<sep>") == "a\\=b\\|c\\<sep>"
    assert unescape(escape("x\\y")) == "x\\y"
    assert parse_values(serialize_values(["a|b", "c"])) == ["a|b", "c"]


@settings(max_examples=300, deadline=None)
@given(maps)
def test_round_trip(m):
    parsed, malformed = parse_target(serialize_target(m))
    assert malformed == 0
    assert parsed == normalize_map(m)


def test_malformed_output_is_counted():
    parsed, malformed = parse_target("a = x <sep> garbage <sep> = y <sep> b = <sep> c = z | z")
    assert parsed == {"a": ["x"], "c": ["z"]}
    assert malformed == 3
    assert parse_target("") == ({}, 0)


def test_repeated_property_values_are_unioned():
    parsed, _ = parse_target("a = x <sep> a = y")
    assert parsed == {"a": ["x", "y"]}
