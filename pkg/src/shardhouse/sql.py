"""A small SQL front end for the query router.

Covers the slice of SQL the warehouse can answer: single SELECT statements
over comma or ``JOIN .. ON`` equi-joins, WHERE trees of AND/OR over
comparisons, BETWEEN, IN, LIKE and IS [NOT] NULL, aggregate functions
SUM/COUNT/AVG/MIN/MAX over arithmetic expressions, GROUP BY, HAVING,
ORDER BY and LIMIT.  Parsing is a hand-rolled recursive descent over a
regex tokenizer; the output is a tree of frozen dataclasses.

The evaluator at the bottom applies SQL NULL semantics on the client:
NULL propagates through arithmetic, comparisons involving NULL are not
matches, and aggregates skip NULL inputs.  Providers never see SQL; the
router compiles the tree into the share-level wire predicate language.
"""

from __future__ import annotations

import datetime
import re
from dataclasses import dataclass, field

from .errors import PlanError

__all__ = [
    "Column", "Literal", "BinOp", "Compare", "Between", "InList", "IsNull",
    "Like", "And", "Or", "Not", "Aggregate", "SelectItem", "JoinSpec",
    "Query", "parse", "eval_expr", "like_match", "expr_columns",
    "expr_aggregates", "expr_to_sql",
]

AGG_FUNCS = ("SUM", "COUNT", "AVG", "MIN", "MAX")


class Node:
    """Base for all expression AST nodes."""


@dataclass(frozen=True)
class Column(Node):
    name: str
    table: str = None

    def key(self) -> str:
        return self.name


@dataclass(frozen=True)
class Literal(Node):
    value: object


@dataclass(frozen=True)
class BinOp(Node):
    op: str  # + - * /
    left: object
    right: object


@dataclass(frozen=True)
class Compare(Node):
    op: str  # = != < <= > >=
    left: object
    right: object


@dataclass(frozen=True)
class Between(Node):
    expr: object
    low: object
    high: object
    negated: bool = False


@dataclass(frozen=True)
class InList(Node):
    expr: object
    values: tuple
    negated: bool = False


@dataclass(frozen=True)
class IsNull(Node):
    expr: object
    negated: bool = False


@dataclass(frozen=True)
class Like(Node):
    expr: object
    pattern: str
    negated: bool = False


@dataclass(frozen=True)
class And(Node):
    args: tuple


@dataclass(frozen=True)
class Or(Node):
    args: tuple


@dataclass(frozen=True)
class Not(Node):
    arg: object


@dataclass(frozen=True)
class Aggregate(Node):
    func: str  # SUM COUNT AVG MIN MAX
    arg: object = None  # None for COUNT(*)


@dataclass(frozen=True)
class SelectItem:
    expr: object
    alias: str = None

    def label(self) -> str:
        if self.alias:
            return self.alias
        return expr_to_sql(self.expr)


@dataclass(frozen=True)
class JoinSpec:
    table: str
    left: Column = None
    right: Column = None


@dataclass(frozen=True)
class Query:
    select: tuple
    tables: tuple  # base table first
    joins: tuple   # JoinSpec for every non-base table with an ON clause
    where: object = None
    group_by: tuple = ()
    having: object = None
    order_by: tuple = ()  # (expr, descending) pairs
    limit: int = None
    star: bool = False


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+\.\d+|\.\d+|\d+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*(?:\.[A-Za-z_][A-Za-z_0-9]*)?)
  | (?P<op><=|>=|<>|!=|=|<|>|\(|\)|,|\*|\+|-|/)
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "LIMIT",
    "AND", "OR", "NOT", "IN", "IS", "NULL", "BETWEEN", "LIKE", "AS",
    "JOIN", "INNER", "ON", "ASC", "DESC", "TRUE", "FALSE", "DISTINCT",
    *AGG_FUNCS,
}


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise PlanError(f"cannot tokenize SQL at {text[pos:pos+20]!r}")
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        val = m.group()
        if m.lastgroup == "name" and val.upper() in _KEYWORDS and "." not in val:
            tokens.append(("kw", val.upper()))
        else:
            tokens.append((m.lastgroup, val))
    tokens.append(("end", ""))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def accept_kw(self, *words) -> bool:
        kind, val = self.peek()
        if kind == "kw" and val in words:
            self.pos += 1
            return True
        return False

    def expect_kw(self, word):
        if not self.accept_kw(word):
            raise PlanError(f"expected {word}, found {self.peek()[1]!r}")

    def accept_op(self, *ops) -> bool:
        kind, val = self.peek()
        if kind == "op" and val in ops:
            self.pos += 1
            return True
        return False

    def expect_op(self, op):
        if not self.accept_op(op):
            raise PlanError(f"expected {op!r}, found {self.peek()[1]!r}")

    # -- grammar ------------------------------------------------------------

    def parse_query(self) -> Query:
        self.expect_kw("SELECT")
        star = False
        items = []
        if self.accept_op("*"):
            star = True
        else:
            items.append(self.parse_select_item())
            while self.accept_op(","):
                items.append(self.parse_select_item())
        self.expect_kw("FROM")
        tables = [self.parse_table_name()]
        joins = []
        while True:
            if self.accept_op(","):
                tables.append(self.parse_table_name())
                continue
            if self.accept_kw("INNER"):
                self.expect_kw("JOIN")
            elif not self.accept_kw("JOIN"):
                break
            else:
                pass
            name = self.parse_table_name()
            self.expect_kw("ON")
            left = self.parse_column()
            self.expect_op("=")
            right = self.parse_column()
            tables.append(name)
            joins.append(JoinSpec(name, left, right))
        where = None
        if self.accept_kw("WHERE"):
            where = self.parse_or()
        group_by = ()
        if self.accept_kw("GROUP"):
            self.expect_kw("BY")
            cols = [self.parse_column()]
            while self.accept_op(","):
                cols.append(self.parse_column())
            group_by = tuple(cols)
        having = None
        if self.accept_kw("HAVING"):
            having = self.parse_or()
        order_by = []
        if self.accept_kw("ORDER"):
            self.expect_kw("BY")
            while True:
                expr = self.parse_additive()
                desc = False
                if self.accept_kw("DESC"):
                    desc = True
                else:
                    self.accept_kw("ASC")
                order_by.append((expr, desc))
                if not self.accept_op(","):
                    break
        limit = None
        if self.accept_kw("LIMIT"):
            kind, val = self.next()
            if kind != "number" or "." in val:
                raise PlanError(f"LIMIT expects an integer, found {val!r}")
            limit = int(val)
        kind, val = self.peek()
        if kind != "end":
            raise PlanError(f"unexpected trailing input at {val!r}")
        return Query(
            select=tuple(items),
            tables=tuple(tables),
            joins=tuple(joins),
            where=where,
            group_by=group_by,
            having=having,
            order_by=tuple(order_by),
            limit=limit,
            star=star,
        )

    def parse_table_name(self) -> str:
        kind, val = self.next()
        if kind != "name" or "." in val:
            raise PlanError(f"expected table name, found {val!r}")
        return val

    def parse_column(self) -> Column:
        kind, val = self.next()
        if kind != "name":
            raise PlanError(f"expected column name, found {val!r}")
        if "." in val:
            table, name = val.split(".", 1)
            return Column(name, table)
        return Column(val)

    def parse_select_item(self) -> SelectItem:
        expr = self.parse_additive()
        alias = None
        if self.accept_kw("AS"):
            kind, val = self.next()
            if kind != "name":
                raise PlanError(f"expected alias, found {val!r}")
            alias = val
        else:
            kind, val = self.peek()
            if kind == "name" and "." not in val:
                alias = val
                self.pos += 1
        return SelectItem(expr, alias)

    # Boolean precedence: OR < AND < NOT < predicate.

    def parse_or(self):
        args = [self.parse_and()]
        while self.accept_kw("OR"):
            args.append(self.parse_and())
        if len(args) == 1:
            return args[0]
        return Or(tuple(args))

    def parse_and(self):
        args = [self.parse_not()]
        while self.accept_kw("AND"):
            args.append(self.parse_not())
        if len(args) == 1:
            return args[0]
        return And(tuple(args))

    def parse_not(self):
        if self.accept_kw("NOT"):
            return Not(self.parse_not())
        return self.parse_predicate()

    def parse_predicate(self):
        # A parenthesized boolean expression, or a comparison.
        if self.peek() == ("op", "("):
            save = self.pos
            self.pos += 1
            try:
                inner = self.parse_or()
                self.expect_op(")")
            except PlanError:
                self.pos = save
            else:
                kind, val = self.peek()
                boolean_follow = (
                    kind in ("kw", "end")
                    and val in ("AND", "OR", "GROUP", "HAVING", "ORDER", "LIMIT", "")
                ) or self.peek() == ("op", ")")
                if boolean_follow and not isinstance(inner, (Literal, Column, BinOp)):
                    return inner
                self.pos = save
        left = self.parse_additive()
        negated = self.accept_kw("NOT")
        if self.accept_kw("BETWEEN"):
            low = self.parse_additive()
            self.expect_kw("AND")
            high = self.parse_additive()
            return Between(left, low, high, negated)
        if self.accept_kw("IN"):
            self.expect_op("(")
            values = [self.parse_additive()]
            while self.accept_op(","):
                values.append(self.parse_additive())
            self.expect_op(")")
            for v in values:
                if not isinstance(v, Literal):
                    raise PlanError("IN list items must be literals")
            return InList(left, tuple(values), negated)
        if self.accept_kw("LIKE"):
            kind, val = self.next()
            if kind != "string":
                raise PlanError("LIKE expects a string pattern")
            return Like(left, _unquote(val), negated)
        if self.accept_kw("IS"):
            neg = self.accept_kw("NOT")
            self.expect_kw("NULL")
            return IsNull(left, neg)
        if negated:
            raise PlanError("NOT must be followed by BETWEEN, IN or LIKE here")
        for op in ("<=", ">=", "<>", "!=", "=", "<", ">"):
            if self.accept_op(op):
                right = self.parse_additive()
                op_norm = "!=" if op == "<>" else op
                # Equality against NULL can only mean a null test.
                if op_norm in ("=", "!="):
                    if isinstance(right, Literal) and right.value is None:
                        return IsNull(left, negated=(op_norm == "!="))
                    if isinstance(left, Literal) and left.value is None:
                        return IsNull(right, negated=(op_norm == "!="))
                return Compare(op_norm, left, right)
        raise PlanError(f"expected a predicate, found {self.peek()[1]!r}")

    # Arithmetic precedence: additive < multiplicative < unary < primary.

    def parse_additive(self):
        left = self.parse_multiplicative()
        while True:
            if self.accept_op("+"):
                left = BinOp("+", left, self.parse_multiplicative())
            elif self.accept_op("-"):
                left = BinOp("-", left, self.parse_multiplicative())
            else:
                return left

    def parse_multiplicative(self):
        left = self.parse_unary()
        while True:
            if self.accept_op("*"):
                left = BinOp("*", left, self.parse_unary())
            elif self.accept_op("/"):
                left = BinOp("/", left, self.parse_unary())
            else:
                return left

    def parse_unary(self):
        if self.accept_op("-"):
            inner = self.parse_unary()
            if isinstance(inner, Literal) and isinstance(inner.value, (int, float)):
                return Literal(-inner.value)
            return BinOp("-", Literal(0), inner)
        return self.parse_primary()

    def parse_primary(self):
        kind, val = self.peek()
        if kind == "op" and val == "(":
            self.pos += 1
            expr = self.parse_additive()
            self.expect_op(")")
            return expr
        if kind == "number":
            self.pos += 1
            return Literal(float(val) if "." in val else int(val))
        if kind == "string":
            self.pos += 1
            return Literal(_unquote(val))
        if kind == "kw" and val == "NULL":
            self.pos += 1
            return Literal(None)
        if kind == "kw" and val == "TRUE":
            self.pos += 1
            return Literal(True)
        if kind == "kw" and val == "FALSE":
            self.pos += 1
            return Literal(False)
        if kind == "kw" and val in AGG_FUNCS:
            self.pos += 1
            self.expect_op("(")
            if val == "COUNT" and self.accept_op("*"):
                self.expect_op(")")
                return Aggregate("COUNT", None)
            if self.accept_kw("DISTINCT"):
                raise PlanError("DISTINCT aggregates are not supported")
            arg = self.parse_additive()
            self.expect_op(")")
            return Aggregate(val, arg)
        if kind == "name":
            self.pos += 1
            if "." in val:
                table, name = val.split(".", 1)
                return Column(name, table)
            return Column(val)
        raise PlanError(f"unexpected token {val!r}")


def _unquote(tok: str) -> str:
    return tok[1:-1].replace("''", "'")


def parse(text: str) -> Query:
    return _Parser(text).parse_query()


# ---------------------------------------------------------------------------
# Tree utilities


def expr_columns(node, out=None):
    """All Column nodes under ``node`` (aggregate arguments included)."""
    if out is None:
        out = []
    if isinstance(node, Column):
        out.append(node)
    elif isinstance(node, (BinOp, Compare)):
        expr_columns(node.left, out)
        expr_columns(node.right, out)
    elif isinstance(node, Between):
        expr_columns(node.expr, out)
        expr_columns(node.low, out)
        expr_columns(node.high, out)
    elif isinstance(node, (InList, IsNull, Like)):
        expr_columns(node.expr, out)
    elif isinstance(node, (And, Or)):
        for a in node.args:
            expr_columns(a, out)
    elif isinstance(node, Not):
        expr_columns(node.arg, out)
    elif isinstance(node, Aggregate):
        if node.arg is not None:
            expr_columns(node.arg, out)
    return out


def expr_aggregates(node, out=None):
    if out is None:
        out = []
    if isinstance(node, Aggregate):
        out.append(node)
    elif isinstance(node, BinOp):
        expr_aggregates(node.left, out)
        expr_aggregates(node.right, out)
    return out


def expr_to_sql(node) -> str:
    if isinstance(node, Column):
        return f"{node.table}.{node.name}" if node.table else node.name
    if isinstance(node, Literal):
        if node.value is None:
            return "NULL"
        if isinstance(node.value, bool):
            return "TRUE" if node.value else "FALSE"
        if isinstance(node.value, str):
            return "'" + node.value.replace("'", "''") + "'"
        return str(node.value)
    if isinstance(node, BinOp):
        return f"({expr_to_sql(node.left)} {node.op} {expr_to_sql(node.right)})"
    if isinstance(node, Compare):
        return f"{expr_to_sql(node.left)} {node.op} {expr_to_sql(node.right)}"
    if isinstance(node, Between):
        neg = "NOT " if node.negated else ""
        return (
            f"{expr_to_sql(node.expr)} {neg}BETWEEN "
            f"{expr_to_sql(node.low)} AND {expr_to_sql(node.high)}"
        )
    if isinstance(node, InList):
        neg = "NOT " if node.negated else ""
        vals = ", ".join(expr_to_sql(v) for v in node.values)
        return f"{expr_to_sql(node.expr)} {neg}IN ({vals})"
    if isinstance(node, IsNull):
        neg = "NOT " if node.negated else ""
        return f"{expr_to_sql(node.expr)} IS {neg}NULL"
    if isinstance(node, Like):
        neg = "NOT " if node.negated else ""
        return f"{expr_to_sql(node.expr)} {neg}LIKE '{node.pattern}'"
    if isinstance(node, And):
        return "(" + " AND ".join(expr_to_sql(a) for a in node.args) + ")"
    if isinstance(node, Or):
        return "(" + " OR ".join(expr_to_sql(a) for a in node.args) + ")"
    if isinstance(node, Not):
        return f"NOT {expr_to_sql(node.arg)}"
    if isinstance(node, Aggregate):
        arg = "*" if node.arg is None else expr_to_sql(node.arg)
        return f"{node.func}({arg})"
    raise PlanError(f"cannot print node {node!r}")


# ---------------------------------------------------------------------------
# Client-side evaluation with SQL NULL semantics


def like_match(pattern: str, value: str) -> bool:
    regex = []
    for ch in pattern:
        if ch == "%":
            regex.append(".*")
        elif ch == "_":
            regex.append(".")
        else:
            regex.append(re.escape(ch))
    return re.fullmatch("".join(regex), value, re.DOTALL) is not None


def _coerce_pair(a, b):
    """Date cells come back as datetime.date, literals as ISO strings."""
    if isinstance(a, datetime.date) and isinstance(b, str):
        return a, datetime.date.fromisoformat(b)
    if isinstance(b, datetime.date) and isinstance(a, str):
        return datetime.date.fromisoformat(a), b
    return a, b


def _compare(op, a, b):
    if a is None or b is None:
        return None
    a, b = _coerce_pair(a, b)
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise PlanError(f"unknown comparison {op!r}")


def eval_expr(node, resolve):
    """Evaluate ``node`` against ``resolve(column) -> value``.

    Boolean results use three-valued logic with None for unknown; the
    caller treats None as not-a-match.  Aggregate nodes must not appear
    here, they are computed per group by the post-processor.
    """
    if isinstance(node, Literal):
        return node.value
    if isinstance(node, Column):
        return resolve(node)
    if isinstance(node, BinOp):
        a = eval_expr(node.left, resolve)
        b = eval_expr(node.right, resolve)
        if a is None or b is None:
            return None
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if b == 0:
                raise PlanError("division by zero")
            q = a / b
            return q
        raise PlanError(f"unknown operator {node.op!r}")
    if isinstance(node, Compare):
        return _compare(node.op, eval_expr(node.left, resolve), eval_expr(node.right, resolve))
    if isinstance(node, Between):
        v = eval_expr(node.expr, resolve)
        lo = eval_expr(node.low, resolve)
        hi = eval_expr(node.high, resolve)
        if v is None or lo is None or hi is None:
            return None
        v, lo = _coerce_pair(v, lo)
        v, hi = _coerce_pair(v, hi)
        result = lo <= v <= hi
        return (not result) if node.negated else result
    if isinstance(node, InList):
        v = eval_expr(node.expr, resolve)
        if v is None:
            return None
        hit = False
        for lit in node.values:
            r = _compare("=", v, lit.value)
            if r:
                hit = True
                break
        return (not hit) if node.negated else hit
    if isinstance(node, IsNull):
        v = eval_expr(node.expr, resolve)
        return (v is not None) if node.negated else (v is None)
    if isinstance(node, Like):
        v = eval_expr(node.expr, resolve)
        if v is None:
            return None
        if not isinstance(v, str):
            v = str(v)
        hit = like_match(node.pattern, v)
        return (not hit) if node.negated else hit
    if isinstance(node, And):
        saw_null = False
        for a in node.args:
            r = eval_expr(a, resolve)
            if r is False:
                return False
            if r is None:
                saw_null = True
        return None if saw_null else True
    if isinstance(node, Or):
        saw_null = False
        for a in node.args:
            r = eval_expr(a, resolve)
            if r is True:
                return True
            if r is None:
                saw_null = True
        return None if saw_null else False
    if isinstance(node, Not):
        r = eval_expr(node.arg, resolve)
        return None if r is None else (not r)
    if isinstance(node, Aggregate):
        raise PlanError("aggregate in a row-level expression")
    raise PlanError(f"cannot evaluate node {node!r}")
