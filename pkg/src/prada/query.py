"""Statement language for the store: single-key CRUD with an optional
``WITH REQUIREMENTS`` postfix that attaches data handling requirements.

The grammar is a small CQL-like subset::

    INSERT INTO <table> (<keycol>, <col>...) VALUES ('<key>', '<val>'...)
        [WITH REQUIREMENTS <type> = { '<prop>' [, '<prop>']* } [AND ...]*]
    SELECT * FROM <table> WHERE <keycol> = '<key>'
    UPDATE <table> SET <col> = '<val>' [, ...] WHERE <keycol> = '<key>'
        [WITH REQUIREMENTS ...]
    DELETE FROM <table> WHERE <keycol> = '<key>'

Keywords are case-insensitive; string literals are single-quoted with ''
escaping. The first column of an INSERT is the item key. Requirement
clauses are validated against a type registry at parse time.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

from .dhr import DhrRegistry, DhrRequest

__all__ = [
    "Statement",
    "Insert",
    "Select",
    "Update",
    "Delete",
    "ParseError",
    "parse",
    "render",
]


class ParseError(Exception):
    """Syntax error with the byte offset of the offending token."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at byte {position})")
        self.position = position


@dataclass(frozen=True)
class Insert:
    key: str
    columns: Mapping[str, bytes]
    req: DhrRequest = field(default_factory=DhrRequest)


@dataclass(frozen=True)
class Select:
    key: str


@dataclass(frozen=True)
class Update:
    key: str
    columns: Mapping[str, bytes]
    req: DhrRequest | None = None  # None: keep whatever the item already has


@dataclass(frozen=True)
class Delete:
    key: str


Statement = Insert | Select | Update | Delete


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_\-]*)
  | (?P<sym>[(),={}*])
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "insert", "into", "values", "select", "from", "where",
    "update", "set", "delete", "with", "requirements", "and",
}


@dataclass(frozen=True)
class _Token:
    kind: str  # 'string' | 'ident' | 'sym' | 'end'
    text: str  # raw text; for strings, the unescaped value
    pos: int   # char offset; converted to bytes when reporting


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i = 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            raise ParseError(f"unexpected character {text[i]!r}", _byte_pos(text, i))
        if m.lastgroup == "string":
            raw = m.group("string")
            tokens.append(_Token("string", raw[1:-1].replace("''", "'"), i))
        elif m.lastgroup == "ident":
            tokens.append(_Token("ident", m.group("ident"), i))
        elif m.lastgroup == "sym":
            tokens.append(_Token("sym", m.group("sym"), i))
        i = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


def _byte_pos(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, registry: DhrRegistry):
        self.text = text
        self.registry = registry
        self.tokens = _tokenize(text)
        self.i = 0

    # token helpers ------------------------------------------------------

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, expected: str) -> ParseError:
        tok = self.peek()
        got = "end of input" if tok.kind == "end" else repr(tok.text)
        return ParseError(f"expected {expected}, got {got}", _byte_pos(self.text, tok.pos))

    def match_keyword(self, word: str) -> bool:
        tok = self.peek()
        if tok.kind == "ident" and tok.text.lower() == word:
            self.advance()
            return True
        return False

    def expect_keyword(self, word: str) -> None:
        if not self.match_keyword(word):
            raise self.error(word.upper())

    def expect_sym(self, sym: str) -> None:
        tok = self.peek()
        if tok.kind == "sym" and tok.text == sym:
            self.advance()
            return
        raise self.error(f"'{sym}'")

    def expect_ident(self, what: str) -> str:
        tok = self.peek()
        if tok.kind == "ident" and tok.text.lower() not in _KEYWORDS:
            self.advance()
            return tok.text
        raise self.error(what)

    def expect_string(self, what: str = "string literal") -> _Token:
        tok = self.peek()
        if tok.kind == "string":
            self.advance()
            return tok
        raise self.error(what)

    # grammar ------------------------------------------------------------

    def parse_statement(self) -> Statement:
        if self.match_keyword("insert"):
            stmt = self.parse_insert()
        elif self.match_keyword("select"):
            stmt = self.parse_select()
        elif self.match_keyword("update"):
            stmt = self.parse_update()
        elif self.match_keyword("delete"):
            stmt = self.parse_delete()
        else:
            raise self.error("INSERT, SELECT, UPDATE or DELETE")
        if self.peek().kind != "end":
            raise self.error("end of statement")
        return stmt

    def parse_insert(self) -> Insert:
        self.expect_keyword("into")
        self.expect_ident("table name")
        self.expect_sym("(")
        names = [self.expect_ident("column name")]
        while self.match_sym(","):
            names.append(self.expect_ident("column name"))
        self.expect_sym(")")
        if len(set(names)) != len(names):
            raise ParseError("duplicate column name", _byte_pos(self.text, self.tokens[self.i - 1].pos))
        self.expect_keyword("values")
        self.expect_sym("(")
        values = [self.expect_string()]
        while self.match_sym(","):
            values.append(self.expect_string())
        self.expect_sym(")")
        if len(values) != len(names):
            raise ParseError(
                f"{len(names)} columns but {len(values)} values",
                _byte_pos(self.text, self.tokens[self.i - 1].pos),
            )
        key_tok = values[0]
        if not key_tok.text:
            raise ParseError("item key must be non-empty", _byte_pos(self.text, key_tok.pos))
        columns = {n: v.text.encode("utf-8") for n, v in zip(names[1:], values[1:])}
        req = self.parse_requirements() if self.match_keyword("with") else DhrRequest()
        return Insert(key_tok.text, columns, req)

    def parse_select(self) -> Select:
        self.expect_sym("*")
        self.expect_keyword("from")
        self.expect_ident("table name")
        return Select(self.parse_where())

    def parse_update(self) -> Update:
        self.expect_ident("table name")
        self.expect_keyword("set")
        columns: dict[str, bytes] = {}
        while True:
            name = self.expect_ident("column name")
            if name in columns:
                raise ParseError("duplicate column name", _byte_pos(self.text, self.tokens[self.i - 1].pos))
            self.expect_sym("=")
            columns[name] = self.expect_string().text.encode("utf-8")
            if not self.match_sym(","):
                break
        key = self.parse_where()
        req = self.parse_requirements() if self.match_keyword("with") else None
        return Update(key, columns, req)

    def parse_delete(self) -> Delete:
        self.expect_keyword("from")
        self.expect_ident("table name")
        return Delete(self.parse_where())

    def parse_where(self) -> str:
        self.expect_keyword("where")
        self.expect_ident("key column")
        self.expect_sym("=")
        key_tok = self.expect_string("key literal")
        if not key_tok.text:
            raise ParseError("item key must be non-empty", _byte_pos(self.text, key_tok.pos))
        return key_tok.text

    def parse_requirements(self) -> DhrRequest:
        self.expect_keyword("requirements")
        demands: dict[str, frozenset] = {}
        while True:
            tok = self.peek()
            type_name = self.expect_ident("requirement type")
            dhr_type = self.registry.get(type_name)  # raises UnknownDhrType
            if type_name in demands:
                raise ParseError(f"duplicate requirement type {type_name!r}", _byte_pos(self.text, tok.pos))
            self.expect_sym("=")
            self.expect_sym("{")
            props = {dhr_type.resolve(self.expect_string().text)}
            while self.match_sym(","):
                props.add(dhr_type.resolve(self.expect_string().text))
            self.expect_sym("}")
            demands[type_name] = frozenset(props)
            if not self.match_keyword("and"):
                break
        return DhrRequest(demands)

    def match_sym(self, sym: str) -> bool:
        tok = self.peek()
        if tok.kind == "sym" and tok.text == sym:
            self.advance()
            return True
        return False


def parse(text: str, registry: DhrRegistry) -> Statement:
    """Parse one statement, validating any requirement clause against the
    registry. Raises ParseError, UnknownDhrType, or UnknownProperty."""
    return _Parser(text, registry).parse_statement()


def _quote(value: str) -> str:
    return "'" + value.replace("'", "''") + "'"


def _render_req(req: DhrRequest) -> str:
    clauses = []
    for type_id in sorted(req.demands):
        props = sorted(req.demands[type_id], key=lambda p: (isinstance(p, str), str(p)))
        literals = ", ".join(_quote(str(p)) for p in props)
        clauses.append(f"{type_id} = {{ {literals} }}")
    return " WITH REQUIREMENTS " + " AND ".join(clauses)


def render(stmt: Statement) -> str:
    """Canonical text for a statement; ``parse(render(s))`` is structurally
    equal to ``s`` for any valid statement."""
    if isinstance(stmt, Insert):
        names = sorted(stmt.columns)
        key_col = "k"
        while key_col in stmt.columns:
            key_col += "_"
        cols = ", ".join([key_col] + names)
        vals = ", ".join([_quote(stmt.key)] + [_quote(stmt.columns[n].decode("utf-8")) for n in names])
        text = f"INSERT INTO t ({cols}) VALUES ({vals})"
        if stmt.req:
            text += _render_req(stmt.req)
        return text
    if isinstance(stmt, Select):
        return f"SELECT * FROM t WHERE key={_quote(stmt.key)}"
    if isinstance(stmt, Update):
        sets = ", ".join(f"{n} = {_quote(stmt.columns[n].decode('utf-8'))}" for n in sorted(stmt.columns))
        text = f"UPDATE t SET {sets} WHERE key={_quote(stmt.key)}"
        if stmt.req is not None:
            if not stmt.req:
                # the grammar has no spelling for "replace with no requirements"
                raise ValueError("update with an explicit empty requirements clause")
            text += _render_req(stmt.req)
        return text
    if isinstance(stmt, Delete):
        return f"DELETE FROM t WHERE key={_quote(stmt.key)}"
    raise TypeError(f"not a statement: {stmt!r}")
