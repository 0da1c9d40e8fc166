import pytest
from hypothesis import given, strategies as st

from prada.dhr import DhrRequest, UnknownDhrType, UnknownProperty
from prada.query import Delete, Insert, ParseError, Select, Update, parse, render

PAPER_STYLE_INSERT = (
    "INSERT INTO t (k, c1) VALUES ('x','v') "
    "WITH REQUIREMENTS location = { 'DE', 'FR', 'UK' } AND encryption = { 'AES-256' }"
)


def test_parse_insert_with_requirements(registry):
    stmt = parse(PAPER_STYLE_INSERT, registry)
    assert isinstance(stmt, Insert)
    assert stmt.key == "x"
    assert stmt.columns == {"c1": b"v"}
    assert stmt.req.demands == {
        "location": frozenset({"DE", "FR", "UK"}),
        "encryption": frozenset({256}),
    }


def test_parse_plain_select(registry):
    stmt = parse("SELECT * FROM t WHERE key='x'", registry)
    assert stmt == Select("x")


def test_parse_is_case_insensitive(registry):
    stmt = parse("select * from T where KEY='x'", registry)
    assert stmt == Select("x")


def test_parse_unknown_property_is_rejected(registry):
    with pytest.raises(UnknownProperty):
        parse("INSERT INTO t (k) VALUES ('x') WITH REQUIREMENTS location = { 'XX' }", registry)


def test_parse_unknown_type_is_rejected(registry):
    with pytest.raises(UnknownDhrType):
        parse("INSERT INTO t (k) VALUES ('x') WITH REQUIREMENTS color = { 'red' }", registry)


def test_parse_update_with_and_without_requirements(registry):
    stmt = parse("UPDATE t SET c1='v2' WHERE key='x'", registry)
    assert stmt == Update("x", {"c1": b"v2"}, None)
    stmt = parse(
        "UPDATE t SET c1='v2' WHERE key='x' WITH REQUIREMENTS location = { 'FR' }",
        registry,
    )
    assert stmt.req == DhrRequest({"location": {"FR"}})


def test_parse_delete(registry):
    assert parse("DELETE FROM t WHERE key='x'", registry) == Delete("x")


def test_parse_quote_escaping(registry):
    stmt = parse("INSERT INTO t (k, c) VALUES ('it''s', 'a''''b')", registry)
    assert stmt.key == "it's"
    assert stmt.columns == {"c": b"a''b"}


def test_error_position_is_byte_offset(registry):
    text = "INSERT INTO t (k) VALUES ('x') WITH REQUIREMENTS location = { }"
    with pytest.raises(ParseError) as exc:
        parse(text, registry)
    assert 0 <= exc.value.position <= len(text.encode("utf-8"))
    # multi-byte content before the error shifts the byte offset past the char offset
    text2 = "INSERT INTO t (k, c) VALUES ('éé', 'v') WITH"
    with pytest.raises(ParseError) as exc2:
        parse(text2, registry)
    assert exc2.value.position == len(text2.encode("utf-8"))


def test_empty_requirements_variants_rejected(registry):
    with pytest.raises(ParseError):
        parse("INSERT INTO t (k) VALUES ('x') WITH REQUIREMENTS", registry)
    with pytest.raises(ParseError):
        parse("INSERT INTO t (k) VALUES ('x') WITH REQUIREMENTS location = {}", registry)


def test_duplicate_columns_rejected(registry):
    with pytest.raises(ParseError):
        parse("INSERT INTO t (k, c, c) VALUES ('x', 'a', 'b')", registry)
    with pytest.raises(ParseError):
        parse("UPDATE t SET c='a', c='b' WHERE key='x'", registry)


def test_duplicate_requirement_type_rejected(registry):
    with pytest.raises(ParseError):
        parse(
            "INSERT INTO t (k) VALUES ('x') WITH REQUIREMENTS "
            "location = { 'DE' } AND location = { 'FR' }",
            registry,
        )


def test_empty_key_rejected(registry):
    with pytest.raises(ParseError):
        parse("SELECT * FROM t WHERE key=''", registry)
    with pytest.raises(ParseError):
        parse("INSERT INTO t (k) VALUES ('')", registry)


def test_column_count_mismatch_rejected(registry):
    with pytest.raises(ParseError):
        parse("INSERT INTO t (k, c1) VALUES ('x')", registry)


def test_trailing_garbage_rejected(registry):
    with pytest.raises(ParseError):
        parse("DELETE FROM t WHERE key='x' bogus", registry)


def test_render_select_canonical():
    assert render(Select("x")) == "SELECT * FROM t WHERE key='x'"


def test_render_parse_roundtrip_paper_statement(registry):
    stmt = parse(PAPER_STYLE_INSERT, registry)
    assert parse(render(stmt), registry) == stmt


def test_render_update_with_empty_requirements_is_invalid():
    with pytest.raises(ValueError):
        render(Update("x", {"c": b"v"}, DhrRequest()))


# --- generated round trips -----------------------------------------------------

_text = st.text(
    alphabet=st.characters(min_codepoint=32, max_codepoint=0x2FF),
    min_size=1, max_size=12,
)
_colname = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True).filter(
    lambda s: s not in ("insert", "into", "values", "select", "from", "where",
                        "update", "set", "delete", "with", "requirements", "and")
)
_columns = st.dictionaries(_colname, _text.map(lambda s: s.encode("utf-8")), max_size=4)
_demands = st.dictionaries(
    st.sampled_from(["location", "encryption"]),
    st.nothing(),  # placeholder, replaced below
    max_size=0,
)


def _req_strategy():
    loc = st.frozensets(st.sampled_from(["DE", "FR", "UK", "US", "SG"]), min_size=1, max_size=4)
    enc = st.frozensets(st.sampled_from([0, 128, 192, 256]), min_size=1, max_size=3)
    return st.builds(
        lambda l, e, which: DhrRequest(
            {k: v for k, v in (("location", l), ("encryption", e)) if k in which}
        ),
        loc, enc,
        st.sampled_from([(), ("location",), ("encryption",), ("location", "encryption")]),
    )


_statements = st.one_of(
    st.builds(Insert, _text, _columns, _req_strategy()),
    st.builds(Select, _text),
    st.builds(
        Update, _text,
        st.dictionaries(_colname, _text.map(lambda s: s.encode("utf-8")),
                        min_size=1, max_size=4),
        st.one_of(st.none(), _req_strategy().filter(bool)),
    ),
    st.builds(Delete, _text),
)


@given(stmt=_statements)
def test_parse_render_identity(stmt):
    from prada.dhr import DhrRegistry

    from conftest import REGISTRY_DOC

    assert parse(render(stmt), DhrRegistry.from_json(REGISTRY_DOC)) == stmt
