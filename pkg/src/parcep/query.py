"""
Pattern queries
===============

Parser and printer for the ``PATTERN ... WHERE [key] WITHIN <dur>``
language, plus the single-operator matcher used as the correctness
reference for the parallel runtime.

Semantics
---------
* ``SEQ(a, b)`` matches when ``a.st < b.st`` (strict).
* ``AND(a, b)`` matches regardless of order; equal timestamps allowed.
* A nested node consumes the composite results of its children and
  compares them through their ``st``/``et``.
* The window is span based: ``max(et) - min(st) <= window`` over all
  constituents, checked at every node.
* ``WHERE [k]`` requires every constituent to carry attribute ``k`` and
  all values to be equal.
* Every qualifying combination is reported.
"""

from __future__ import annotations

import re
from bisect import bisect_left, bisect_right
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence, Union

from .events import CompositeEvent, EventType, PrimitiveEvent, US_PER_S, intern_type

MATCH_TYPE = intern_type("MATCH")


@dataclass(frozen=True, slots=True)
class Leaf:
    event_type: EventType

    def __str__(self) -> str:
        return self.event_type.name


@dataclass(frozen=True, slots=True)
class Seq:
    left: "PatternExpr"
    right: "PatternExpr"

    def __str__(self) -> str:
        return f"SEQ({self.left}, {self.right})"


@dataclass(frozen=True, slots=True)
class And:
    left: "PatternExpr"
    right: "PatternExpr"

    def __str__(self) -> str:
        return f"AND({self.left}, {self.right})"


PatternExpr = Union[Leaf, Seq, And]


def leaves(expr: PatternExpr) -> list[EventType]:
    """Leaf event types in left-to-right order."""
    if isinstance(expr, Leaf):
        return [expr.event_type]
    return leaves(expr.left) + leaves(expr.right)


@dataclass(frozen=True)
class PatternQuery:
    pattern: PatternExpr
    window: int
    where_key: Optional[str] = None

    def __post_init__(self) -> None:
        if self.window <= 0:
            raise ValueError("window must be positive")
        types = leaves(self.pattern)
        if len(set(types)) != len(types):
            raise ValueError("each event type may appear only once in a pattern")

    @property
    def types(self) -> list[EventType]:
        return leaves(self.pattern)

    @property
    def partitioned_type(self) -> EventType:
        """The stream that is split across workers: the rightmost leaf."""
        return self.types[-1]

    @property
    def retains_partitioned(self) -> bool:
        """Whether a worker must keep its partitioned events after evaluating them.

        Not needed when every ancestor of the partitioned leaf is a SEQ with the
        leaf on its right: no later event can then complete a match with it.
        """
        node = self.pattern
        while not isinstance(node, Leaf):
            if isinstance(node, And):
                return True
            node = node.right
        return False

    def __str__(self) -> str:
        return format_query(self)


# -- parsing ----------------------------------------------------------------


class QuerySyntaxError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{msg} (line {line}, column {col})")
        self.line = line
        self.col = col


_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<num>\d+(?:\.\d+)?)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<punct>[(),\[\]])"
)

_UNITS = {"us": 1, "ms": 1_000, "s": US_PER_S, "sec": US_PER_S, "min": 60 * US_PER_S}
_OPERATORS = {"SEQ": Seq, "AND": And}
_KEYWORDS = {"PATTERN", "WHERE", "WITHIN"}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        mo = _TOKEN_RE.match(text, pos)
        if mo is None:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = mo.lastgroup
        if kind == "nl":
            line += 1
            line_start = mo.end()
        elif kind != "ws":
            toks.append(_Tok(kind, mo.group(), line, pos - line_start + 1))
        pos = mo.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: Optional[_Tok] = None) -> QuerySyntaxError:
        tok = tok or self.tok
        return QuerySyntaxError(msg, tok.line, tok.col)

    def keyword(self, word: str) -> bool:
        t = self.tok
        if t.kind == "ident" and t.text.upper() == word:
            self.i += 1
            return True
        return False

    def expect_keyword(self, word: str) -> None:
        if not self.keyword(word):
            raise self.error(f"expected {word}, found {self.tok.text or 'end of input'!r}")

    def expect(self, text: str) -> _Tok:
        t = self.tok
        if t.text != text:
            raise self.error(f"expected {text!r}, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def expr(self) -> PatternExpr:
        t = self.tok
        if t.kind != "ident" or t.text.upper() in _KEYWORDS:
            raise self.error("expected event type or operator")
        self.i += 1
        if self.tok.text != "(":
            return Leaf(intern_type(t.text))
        op = _OPERATORS.get(t.text.upper())
        if op is None:
            raise self.error(f"unknown operator {t.text!r}", t)
        self.expect("(")
        args = [self.expr()]
        while self.tok.text == ",":
            self.i += 1
            args.append(self.expr())
        if self.tok.text != ")":
            raise self.error(f"expected ')' or ',', found {self.tok.text or 'end of input'!r}")
        self.i += 1
        if len(args) != 2:
            raise self.error(f"{t.text.upper()} takes exactly 2 operands, got {len(args)}", t)
        return op(args[0], args[1])

    def duration(self) -> int:
        t = self.tok
        if t.kind != "num":
            raise self.error("expected window duration")
        self.i += 1
        unit = "s"
        if self.tok.kind == "ident" and self.tok.text.lower() in _UNITS:
            unit = self.tok.text.lower()
            self.i += 1
        value = float(t.text) * _UNITS[unit]
        if value <= 0:
            raise self.error("window must be positive", t)
        if value != int(value):
            raise self.error("window must be a whole number of microseconds", t)
        return int(value)

    def query(self) -> PatternQuery:
        self.expect_keyword("PATTERN")
        pattern = self.expr()
        key = None
        if self.keyword("WHERE"):
            self.expect("[")
            t = self.tok
            if t.kind != "ident":
                raise self.error("expected attribute name")
            self.i += 1
            key = t.text
            self.expect("]")
        self.expect_keyword("WITHIN")
        window = self.duration()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected trailing input {self.tok.text!r}")
        try:
            return PatternQuery(pattern, window, key)
        except ValueError as exc:
            raise QuerySyntaxError(str(exc), 1, 1) from None


def parse_query(text: str) -> PatternQuery:
    return _Parser(text).query()


def format_window(us: int) -> str:
    for unit, scale in (("s", US_PER_S), ("ms", 1_000)):
        if us % scale == 0:
            return f"{us // scale} {unit}"
    return f"{us} us"


def format_query(q: PatternQuery) -> str:
    """Canonical single-line text; ``parse_query(format_query(q)) == q``."""
    parts = [f"PATTERN {q.pattern}"]
    if q.where_key is not None:
        parts.append(f"WHERE [{q.where_key}]")
    parts.append(f"WITHIN {format_window(q.window)}")
    return " ".join(parts)


# -- pairwise predicates ----------------------------------------------------


def _key_ok(events: Sequence[PrimitiveEvent], key: Optional[str]) -> bool:
    if key is None:
        return True
    values = [e.get(key) for e in events]
    return values[0] is not None and all(v == values[0] for v in values)


def _span_ok(events: Sequence[PrimitiveEvent], window: int) -> bool:
    return max(e.end_ts for e in events) - min(e.start_ts for e in events) <= window


def seq_match(e_i: PrimitiveEvent, e_j: PrimitiveEvent, query: PatternQuery) -> bool:
    pair = (e_i, e_j)
    return e_i.start_ts < e_j.start_ts and _span_ok(pair, query.window) and _key_ok(pair, query.where_key)


def and_match(e_i: PrimitiveEvent, e_j: PrimitiveEvent, query: PatternQuery) -> bool:
    pair = (e_i, e_j)
    return _span_ok(pair, query.window) and _key_ok(pair, query.where_key)


# -- tree evaluation --------------------------------------------------------

# partial match: (st, et, constituents in leaf order)
_Partial = tuple[int, int, tuple[PrimitiveEvent, ...]]


def _first(p: _Partial) -> int:
    return p[0]


def _join(left: list[_Partial], right: list[_Partial], window: int, ordered: bool,
          left_sorted: bool = False, right_sorted: bool = False) -> tuple[list[_Partial], bool]:
    """Pairs of partials whose union fits the window (and is ordered for SEQ).

    Iterates the shorter side and bisects the longer one on start time.
    Returns the joined partials and whether they come out sorted by start.
    """
    out = []
    if len(left) <= len(right):
        if not right_sorted:
            right.sort(key=_first)
        starts = [p[0] for p in right]
        for lst, let, lev in left:
            # span <= window forces r.st into [l.et - window, l.st + window]
            lo = bisect_left(starts, let - window)
            if ordered:
                lo = max(lo, bisect_right(starts, lst))
            hi = bisect_right(starts, lst + window)
            for k in range(lo, hi):
                rst, ret, rev = right[k]
                st = lst if lst < rst else rst
                et = let if let > ret else ret
                if et - st <= window:
                    out.append((st, et, lev + rev))
        # SEQ output starts at l.st, so it inherits the order of ``left``
        return out, ordered and left_sorted
    if not left_sorted:
        left.sort(key=_first)
    starts = [p[0] for p in left]
    for rst, ret, rev in right:
        lo = bisect_left(starts, ret - window)
        hi = bisect_left(starts, rst) if ordered else bisect_right(starts, rst + window)
        for k in range(lo, hi):
            lst, let, lev = left[k]
            st = lst if lst < rst else rst
            et = let if let > ret else ret
            if et - st <= window:
                out.append((st, et, lev + rev))
    return out, False


def _evaluate(expr: PatternExpr, candidates, window: int) -> tuple[list[_Partial], bool]:
    if expr.__class__ is Leaf:
        # candidate sequences are held in timestamp order
        return [(e.start_ts, e.end_ts, (e,)) for e in candidates.get(expr.event_type, ())], True
    left, lsorted = _evaluate(expr.left, candidates, window)
    if not left:
        return [], True
    right, rsorted = _evaluate(expr.right, candidates, window)
    if not right:
        return [], True
    return _join(left, right, window, expr.__class__ is Seq, lsorted, rsorted)


def evaluate_tree(
    expr: PatternExpr, candidates: Mapping[EventType, Sequence[PrimitiveEvent]], window: int
) -> list[_Partial]:
    """All matches of ``expr`` whose leaves are drawn from ``candidates``.

    Each candidate sequence must be in timestamp order. Keys are not
    checked here; callers pre-group candidates by key.
    """
    return _evaluate(expr, candidates, window)[0]


def match_order(c: CompositeEvent) -> tuple:
    cs = c.constituents
    return tuple([e.start_ts for e in cs] + [e.eid for e in cs])


def group_by_key(
    events: Iterable[PrimitiveEvent], types: set[EventType], key: Optional[str]
) -> dict[object, dict[EventType, list[PrimitiveEvent]]]:
    """Bucket events by key value then type; each bucket is in timestamp order."""
    groups: dict[object, dict[EventType, list[PrimitiveEvent]]] = defaultdict(lambda: defaultdict(list))
    for e in sorted(events, key=lambda e: e.start_ts):
        if e.event_type not in types:
            continue
        k = None if key is None else e.get(key)
        if key is not None and k is None:
            continue
        groups[k][e.event_type].append(e)
    return groups


def reference_evaluate(query: PatternQuery, stream: Sequence[PrimitiveEvent]) -> list[CompositeEvent]:
    """Evaluate ``query`` over the whole stream on a single operator.

    Returns the match multiset sorted lexicographically by constituent
    timestamps (ties by event id).
    """
    types = set(query.types)
    matches = []
    for group in group_by_key(stream, types, query.where_key).values():
        for st, et, evs in evaluate_tree(query.pattern, group, query.window):
            matches.append(CompositeEvent(MATCH_TYPE, evs, st, et))
    matches.sort(key=match_order)
    return matches
