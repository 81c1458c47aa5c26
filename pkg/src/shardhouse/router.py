"""Query planning and execution across the provider fleet.

The router turns a parsed query into a plan with three layers:

* pushdown: predicates each provider can apply to its own shares.
  Plaintext-key operators pass through; equality and small enumerable
  ranges on shared columns become whole-tuple share literals, encoded
  separately for every provider with its own coefficient row.
* residual: everything else, evaluated on the client after
  reconstruction.  The full WHERE clause is re-checked client-side in
  rows mode, so a provider-side false positive can never leak into a
  result.
* post-processing: grouping, aggregates, HAVING, ORDER BY, LIMIT.

Execution picks the ``t`` healthiest providers, fans the rewritten
request out in parallel, intersects the per-provider row sets on the
base table's primary key, verifies outer signatures, reconstructs, and
re-filters.  A provider that fails its transport or its signatures is
swapped out for a spare and the query is retried on a fresh group; when
corruption leaves no usable group the query fails loudly rather than
returning doubtful rows.

Aggregate plans push slot-wise share sums down and rebuild the true
totals from summed shares.  Reconstructing a sum of ``R`` rows leaves
``2R`` extra in every digit slot (each stored digit carries a +2
offset), which is subtracted before the positional weights are applied;
a slot-sum congruence check against the summed inner signatures guards
the result, and any mismatch falls back to fetching rows.
"""

from __future__ import annotations

import datetime
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import sql
from .codec import ColumnCodec, blocks_to_value, value_to_blocks
from .errors import (
    CorruptionError,
    DomainError,
    IntegrityError,
    PlanError,
    StoreError,
    TransportError,
    UnavailabilityError,
)
from .sharing import (
    SharingConfig,
    CoefficientSet,
    build_reconstruction,
    get_inner_hash,
    reconstruct_blocks,
    share_block,
)

__all__ = [
    "RouterContext",
    "QueryPlan",
    "plan_query",
    "execute_plan",
    "run_query",
    "reconstruct_sum",
    "RANGE_ENUM_LIMIT",
]

RANGE_ENUM_LIMIT = 10_000


@dataclass
class RouterContext:
    """Everything the router needs to know about one warehouse."""

    config: SharingConfig
    coeffs: CoefficientSet
    codecs: dict            # table -> {column -> ColumnCodec}
    transports: dict        # csp_id -> Transport
    translate: object = None  # (table, col, value) -> stored value
    restore: object = None    # (table, col, value) -> original value

    def codec(self, table: str, col: str) -> ColumnCodec:
        return self.codecs[table][col]

    def translate_value(self, table, col, value):
        if self.translate is None:
            return value
        return self.translate(table, col, value)

    def restore_value(self, table, col, value):
        if self.restore is None:
            return value
        return self.restore(table, col, value)


@dataclass
class _ColRef:
    table: str
    codec: ColumnCodec


@dataclass
class QueryPlan:
    mode: str                  # "rows" or "aggregate"
    query: sql.Query
    base_table: str
    base_pk: tuple
    joins: tuple               # wire join specs
    pushdown: object           # plan predicate tree (share literals unencoded)
    residual: object           # sql expr tree or None, checked client-side
    fetch_columns: tuple       # columns to project, base pk first
    column_refs: dict          # name -> _ColRef
    aggregate_spec: dict = None  # {"group_by", "sums", "counts"}
    agg_results: dict = None     # sql text of Aggregate node -> kind
    fallback: object = None      # rows-mode plan backing an aggregate plan

    def explain(self) -> str:
        lines = [f"mode: {self.mode}", f"base: {self.base_table}"]
        for j in self.joins:
            lines.append(f"join: {j['table']} on {j['left']} = {j['right']}")
        lines.append("pushdown: " + _plan_pred_text(self.pushdown))
        if self.mode == "aggregate":
            spec = self.aggregate_spec
            lines.append(
                "aggregate: group_by=%s sums=%s counts=%s"
                % (list(spec["group_by"]), list(spec["sums"]), list(spec["counts"]))
            )
        else:
            lines.append("fetch: " + ", ".join(self.fetch_columns))
        lines.append(
            "residual: " + (sql.expr_to_sql(self.residual) if self.residual else "none")
        )
        return "\n".join(lines)


def _plan_pred_text(node) -> str:
    if node is None:
        return "none"
    op = node["op"]
    if op == "and":
        return " AND ".join(_plan_pred_text(a) for a in node["args"])
    if op in ("eq",):
        return f"{node['col']} = {node['value']!r}"
    if op == "in":
        return f"{node['col']} IN ({len(node['values'])} values)"
    if op in ("isnull", "notnull"):
        return f"{node['col']} {op}"
    if op == "share_eq":
        return f"{node['col']} = <share literal>"
    if op == "share_in":
        return f"{node['col']} IN <{len(node['values'])} share literals>"
    return op


# ---------------------------------------------------------------------------
# Planning


def _flatten_and(node, out):
    if isinstance(node, sql.And):
        for a in node.args:
            _flatten_and(a, out)
    elif node is not None:
        out.append(node)
    return out


def _resolve_columns(query: sql.Query, ctx: RouterContext) -> dict:
    refs = {}
    for table in query.tables:
        if table not in ctx.codecs:
            raise PlanError(f"unknown table {table!r}")
        for col, codec in ctx.codecs[table].items():
            if col in refs:
                raise PlanError(
                    f"column {col!r} appears in both {refs[col].table!r} and "
                    f"{table!r}; joined tables need distinct column names"
                )
            refs[col] = _ColRef(table, codec)
    return refs


def _check_column(col: sql.Column, refs: dict) -> _ColRef:
    ref = refs.get(col.name)
    if ref is None:
        raise PlanError(f"unknown column {col.name!r}")
    if col.table is not None and col.table != ref.table:
        raise PlanError(f"column {col.name!r} does not belong to table {col.table!r}")
    return ref


def _literal_value(node):
    if isinstance(node, sql.Literal):
        return node.value, True
    return None, False


def _as_date(value):
    if isinstance(value, datetime.date):
        return value
    if isinstance(value, str):
        return datetime.date.fromisoformat(value)
    raise PlanError(f"expected a date literal, got {value!r}")


def _enumerate_range(codec: ColumnCodec, low, high, inc_low=True, inc_high=True):
    """Domain points of an enumerable codec inside [low, high], or None."""
    if codec.kind == "integer":
        lo, hi = int(low), int(high)
        if not inc_low:
            lo += 1
        if not inc_high:
            hi -= 1
        lo = max(lo, codec.min_value)
        hi = min(hi, codec.max_value)
        if hi < lo:
            return []
        if hi - lo + 1 > RANGE_ENUM_LIMIT:
            return None
        return list(range(lo, hi + 1))
    if codec.kind == "character":
        if not (isinstance(low, str) and isinstance(high, str) and len(low) == 1 and len(high) == 1):
            return None
        lo, hi = ord(low), ord(high)
        if not inc_low:
            lo += 1
        if not inc_high:
            hi -= 1
        lo = max(lo, codec.min_value)
        hi = min(hi, codec.max_value)
        if hi < lo:
            return []
        if hi - lo + 1 > RANGE_ENUM_LIMIT:
            return None
        return [chr(v) for v in range(lo, hi + 1)]
    if codec.kind == "date":
        lo, hi = _as_date(low), _as_date(high)
        if not inc_low:
            lo += datetime.timedelta(days=1)
        if not inc_high:
            hi -= datetime.timedelta(days=1)
        lo = max(lo, datetime.date(1970, 1, 1) + datetime.timedelta(days=codec.min_value))
        hi = min(hi, datetime.date(1970, 1, 1) + datetime.timedelta(days=codec.max_value))
        if hi < lo:
            return []
        days = (hi - lo).days + 1
        if days > RANGE_ENUM_LIMIT:
            return None
        return [lo + datetime.timedelta(days=i) for i in range(days)]
    # Reals and strings are not enumerable.
    return None


def _compile_conjunct(node, refs: dict, ctx: RouterContext):
    """Return a pushdown plan node for one WHERE conjunct, or None."""
    if isinstance(node, sql.Compare) and node.op == "=":
        # Column = literal, either order.
        for left, right in ((node.left, node.right), (node.right, node.left)):
            if isinstance(left, sql.Column):
                value, is_lit = _literal_value(right)
                if not is_lit:
                    continue
                ref = _check_column(left, refs)
                codec = ref.codec
                if not codec.shared:
                    return {
                        "op": "eq",
                        "col": left.name,
                        "value": ctx.translate_value(ref.table, left.name, value),
                    }
                return {"op": "share_eq", "col": left.name, "value": value, "table": ref.table}
        return None
    if isinstance(node, sql.Compare) and node.op in ("<", "<=", ">", ">="):
        for left, right, op in (
            (node.left, node.right, node.op),
            (node.right, node.left, _flip(node.op)),
        ):
            if isinstance(left, sql.Column):
                value, is_lit = _literal_value(right)
                if not is_lit or value is None:
                    continue
                ref = _check_column(left, refs)
                codec = ref.codec
                if op in ("<", "<="):
                    points = _range_points(codec, None, value, inc_high=(op == "<="))
                else:
                    points = _range_points(codec, value, None, inc_low=(op == ">="))
                return _points_node(left.name, ref, points, ctx)
        return None
    if isinstance(node, sql.Between) and not node.negated:
        if isinstance(node.expr, sql.Column):
            lo, lo_ok = _literal_value(node.low)
            hi, hi_ok = _literal_value(node.high)
            if lo_ok and hi_ok and lo is not None and hi is not None:
                ref = _check_column(node.expr, refs)
                points = _enumerate_range(ref.codec, lo, hi)
                return _points_node(node.expr.name, ref, points, ctx)
        return None
    if isinstance(node, sql.InList) and not node.negated:
        if isinstance(node.expr, sql.Column):
            ref = _check_column(node.expr, refs)
            values = [v.value for v in node.values if v.value is not None]
            if not values:
                return None
            if not ref.codec.shared:
                return {
                    "op": "in",
                    "col": node.expr.name,
                    "values": [
                        ctx.translate_value(ref.table, node.expr.name, v) for v in values
                    ],
                }
            return {
                "op": "share_in",
                "col": node.expr.name,
                "values": values,
                "table": ref.table,
            }
        return None
    if isinstance(node, sql.IsNull):
        if isinstance(node.expr, sql.Column):
            _check_column(node.expr, refs)
            return {"op": "notnull" if node.negated else "isnull", "col": node.expr.name}
        return None
    if isinstance(node, sql.Like) and not node.negated:
        # A pattern with no wildcards is exact string equality.
        if isinstance(node.expr, sql.Column) and "%" not in node.pattern and "_" not in node.pattern:
            ref = _check_column(node.expr, refs)
            if ref.codec.shared:
                return {
                    "op": "share_eq",
                    "col": node.expr.name,
                    "value": node.pattern,
                    "table": ref.table,
                }
            return {
                "op": "eq",
                "col": node.expr.name,
                "value": ctx.translate_value(ref.table, node.expr.name, node.pattern),
            }
        return None
    if isinstance(node, sql.Or):
        # OR of equalities on one column collapses to IN.
        col_name = None
        values = []
        for arm in node.args:
            if not (isinstance(arm, sql.Compare) and arm.op == "="):
                return None
            pair = None
            for left, right in ((arm.left, arm.right), (arm.right, arm.left)):
                if isinstance(left, sql.Column):
                    v, is_lit = _literal_value(right)
                    if is_lit:
                        pair = (left, v)
                        break
            if pair is None:
                return None
            col, v = pair
            if col_name is None:
                col_name = col.name
            elif col_name != col.name:
                return None
            values.append(v)
        merged = sql.InList(sql.Column(col_name), tuple(sql.Literal(v) for v in values))
        return _compile_conjunct(merged, refs, ctx)
    return None


def _flip(op):
    return {"<": ">", "<=": ">=", ">": "<", ">=": "<="}[op]


def _range_points(codec, low, high, inc_low=True, inc_high=True):
    if low is None:
        if codec.kind == "integer":
            low = codec.min_value
        elif codec.kind == "character":
            low = chr(codec.min_value)
        elif codec.kind == "date":
            low = datetime.date(1970, 1, 1) + datetime.timedelta(days=codec.min_value)
        else:
            return None
    if high is None:
        if codec.kind == "integer":
            high = codec.max_value
        elif codec.kind == "character":
            high = chr(codec.max_value)
        elif codec.kind == "date":
            high = datetime.date(1970, 1, 1) + datetime.timedelta(days=codec.max_value)
        else:
            return None
    return _enumerate_range(codec, low, high, inc_low, inc_high)


def _points_node(name, ref, points, ctx):
    if points is None:
        return None
    if not ref.codec.shared:
        return {
            "op": "in",
            "col": name,
            "values": [ctx.translate_value(ref.table, name, v) for v in points],
        }
    return {"op": "share_in", "col": name, "values": points, "table": ref.table}


def _is_join_conjunct(node, query: sql.Query, refs: dict):
    """Key-equality between two tables, usable as a join edge."""
    if not (isinstance(node, sql.Compare) and node.op == "="):
        return None
    if not (isinstance(node.left, sql.Column) and isinstance(node.right, sql.Column)):
        return None
    a, b = _check_column(node.left, refs), _check_column(node.right, refs)
    if a.table == b.table:
        return None
    if a.codec.shared or b.codec.shared:
        return None
    # Orient the edge so the right side belongs to the later table.
    order = {t: i for i, t in enumerate(query.tables)}
    if order[a.table] < order[b.table]:
        return sql.JoinSpec(b.table, node.left, node.right)
    return sql.JoinSpec(a.table, node.right, node.left)


def plan_query(query: sql.Query, ctx: RouterContext) -> QueryPlan:
    refs = _resolve_columns(query, ctx)
    base = query.tables[0]
    base_pk = tuple(_table_pk(base, ctx))

    # Collect join edges from explicit JOIN .. ON and from WHERE conjuncts.
    joins = {j.table: j for j in query.joins}
    conjuncts = _flatten_and(query.where, [])
    plain_conjuncts = []
    for c in conjuncts:
        edge = _is_join_conjunct(c, query, refs)
        if edge is not None and edge.table != base and edge.table not in joins:
            joins[edge.table] = edge
        else:
            plain_conjuncts.append(c)
    for spec in query.joins:
        _check_column(spec.left, refs)
        right_ref = _check_column(spec.right, refs)
        if right_ref.codec.shared:
            raise PlanError("join keys must be plaintext columns")
    for table in query.tables[1:]:
        if table not in joins:
            raise PlanError(f"table {table!r} has no join condition")
        spec = joins[table]
        pk = _table_pk(spec.table, ctx)
        right_ref = _check_column(spec.right, refs)
        if right_ref.table != spec.table or tuple(pk) != (spec.right.name,):
            raise PlanError(
                f"join to {spec.table!r} must equate its primary key "
                f"({', '.join(pk)})"
            )
    wire_joins = tuple(
        {"table": joins[t].table, "left": joins[t].left.name, "right": joins[t].right.name}
        for t in query.tables[1:]
    )

    # Compile each remaining conjunct; those that fail stay residual-only.
    pushdown_nodes = []
    residual_only = []
    for c in plain_conjuncts:
        node = _compile_conjunct(c, refs, ctx)
        if node is not None:
            pushdown_nodes.append(node)
        else:
            residual_only.append(c)
    pushdown = None
    if pushdown_nodes:
        pushdown = (
            pushdown_nodes[0]
            if len(pushdown_nodes) == 1
            else {"op": "and", "args": pushdown_nodes}
        )

    # The client re-checks every non-join conjunct after reconstruction.
    residual = None
    if plain_conjuncts:
        residual = (
            plain_conjuncts[0]
            if len(plain_conjuncts) == 1
            else sql.And(tuple(plain_conjuncts))
        )

    # Validate select items and decide the aggregate story.
    aggregates = _collect_aggregates(query)
    group_cols = [c.name for c in query.group_by]
    for c in query.group_by:
        _check_column(c, refs)
    grouped = bool(group_cols) or bool(aggregates)
    if grouped:
        for item in query.select:
            _check_grouping(item.expr, group_cols, refs, query.star)

    fetch = _fetch_columns(query, refs, residual, base_pk)
    plan = QueryPlan(
        mode="rows",
        query=query,
        base_table=base,
        base_pk=base_pk,
        joins=wire_joins,
        pushdown=pushdown,
        residual=residual,
        fetch_columns=fetch,
        column_refs=refs,
    )

    if not aggregates or residual_only:
        return plan
    agg_ok, spec, agg_results = _try_aggregate_spec(
        query, aggregates, group_cols, refs, ctx
    )
    if not agg_ok:
        return plan
    agg_plan = QueryPlan(
        mode="aggregate",
        query=query,
        base_table=base,
        base_pk=base_pk,
        joins=wire_joins,
        pushdown=pushdown,
        residual=None,
        fetch_columns=fetch,
        column_refs=refs,
        aggregate_spec=spec,
        agg_results=agg_results,
        fallback=plan,
    )
    return agg_plan


def _collect_aggregates(query: sql.Query):
    aggregates = []
    for item in query.select:
        aggregates.extend(sql.expr_aggregates(item.expr))
    if query.having is not None:
        _having_aggregates(query.having, aggregates)
    for expr, _ in query.order_by:
        aggregates.extend(sql.expr_aggregates(expr))
    return aggregates


def _having_aggregates(node, out=None):
    if out is None:
        out = []
    if isinstance(node, sql.Aggregate):
        out.append(node)
    elif isinstance(node, (sql.And, sql.Or)):
        for a in node.args:
            _having_aggregates(a, out)
    elif isinstance(node, sql.Not):
        _having_aggregates(node.arg, out)
    elif isinstance(node, (sql.Compare, sql.BinOp)):
        _having_aggregates(node.left, out)
        _having_aggregates(node.right, out)
    elif isinstance(node, sql.Between):
        _having_aggregates(node.expr, out)
        _having_aggregates(node.low, out)
        _having_aggregates(node.high, out)
    elif isinstance(node, (sql.InList, sql.IsNull, sql.Like)):
        _having_aggregates(node.expr, out)
    return out


def _check_grouping(expr, group_cols, refs, star):
    """Bare columns outside aggregates must be grouping columns."""
    if isinstance(expr, sql.Aggregate):
        return
    if isinstance(expr, sql.Column):
        if expr.name not in group_cols:
            raise PlanError(
                f"column {expr.name!r} must appear in GROUP BY or inside an aggregate"
            )
        return
    if isinstance(expr, sql.BinOp):
        _check_grouping(expr.left, group_cols, refs, star)
        _check_grouping(expr.right, group_cols, refs, star)
        return
    if isinstance(expr, sql.Literal):
        return
    raise PlanError(f"unsupported select expression {expr!r}")


def _table_pk(table: str, ctx: RouterContext):
    codecs = ctx.codecs.get(table)
    if codecs is None:
        raise PlanError(f"unknown table {table!r}")
    return [name for name, codec in codecs.items() if codec.kind == "key"]


def _fetch_columns(query, refs, residual, base_pk):
    if query.star:
        names = list(refs)
    else:
        cols = []
        for item in query.select:
            cols.extend(sql.expr_columns(item.expr))
        if residual is not None:
            cols.extend(sql.expr_columns(residual))
        if query.having is not None:
            cols.extend(sql.expr_columns(query.having))
        for expr, _ in query.order_by:
            cols.extend(sql.expr_columns(expr))
        cols.extend(query.group_by)
        names = []
        for c in cols:
            if c.name not in names and c.name in refs:
                names.append(c.name)
    out = list(base_pk)
    for n in names:
        if n not in out:
            out.append(n)
    return tuple(out)


def _try_aggregate_spec(query, aggregates, group_cols, refs, ctx):
    """Aggregates push down only when every one of them is provably exact
    on summed shares: unsigned fixed-point codecs, the additive inner
    hash, plaintext grouping keys, and no residual predicates."""
    if not get_inner_hash(ctx.config.inner_hash).additive:
        return False, None, None
    for g in group_cols:
        ref = refs.get(g)
        if ref is None or ref.codec.shared:
            return False, None, None
    sums = []
    counts = []
    agg_results = {}
    for agg in aggregates:
        key = sql.expr_to_sql(agg)
        if agg.func == "COUNT":
            if agg.arg is None:
                agg_results[key] = ("rows", None)
                continue
            if not isinstance(agg.arg, sql.Column):
                return False, None, None
            _check_column(agg.arg, refs)
            counts.append(agg.arg.name)
            agg_results[key] = ("count", agg.arg.name)
            continue
        if agg.func in ("SUM", "AVG"):
            if not isinstance(agg.arg, sql.Column):
                return False, None, None
            ref = _check_column(agg.arg, refs)
            codec = ref.codec
            if not codec.shared or codec.kind not in ("integer", "real") or codec.signed:
                return False, None, None
            sums.append(agg.arg.name)
            agg_results[key] = (agg.func.lower(), agg.arg.name)
            continue
        return False, None, None
    spec = {
        "group_by": list(group_cols),
        "sums": sorted(set(sums)),
        "counts": sorted(set(counts)),
    }
    return True, spec, agg_results


# ---------------------------------------------------------------------------
# Share-literal rewriting


def _encode_share_tuple(value, table, col, ctx, csp_id):
    codec = ctx.codec(table, col)
    encoded = value_to_blocks(value, codec, ctx.config)
    if encoded.tag != "shared":
        raise PlanError(f"column {col!r} is not a shared column")
    return tuple(
        share_block(block, ctx.coeffs, csp_id, ctx.config).e for block in encoded.blocks
    )


def rewrite_equality(value, table, col, ctx, csp_id):
    """Share tuple a given provider stores for ``value`` in ``col``."""
    return _encode_share_tuple(value, table, col, ctx, csp_id)


def rewrite_range(low, high, table, col, ctx, csp_id):
    """Share tuples for every domain point in [low, high]."""
    codec = ctx.codec(table, col)
    points = _enumerate_range(codec, low, high)
    if points is None:
        raise PlanError(f"range on {col!r} is not enumerable")
    return [_encode_share_tuple(v, table, col, ctx, csp_id) for v in points]


def _rewrite_for_csp(node, ctx, csp_id):
    if node is None:
        return None
    op = node["op"]
    if op == "and":
        return {"op": "and", "args": [_rewrite_for_csp(a, ctx, csp_id) for a in node["args"]]}
    if op == "share_eq":
        e = _encode_share_tuple(node["value"], node["table"], node["col"], ctx, csp_id)
        return {"op": "share_eq", "col": node["col"], "e": [str(v) for v in e]}
    if op == "share_in":
        tuples = [
            _encode_share_tuple(v, node["table"], node["col"], ctx, csp_id)
            for v in node["values"]
        ]
        return {
            "op": "share_in",
            "col": node["col"],
            "tuples": [[str(v) for v in tup] for tup in tuples],
        }
    out = dict(node)
    out.pop("table", None)
    return out


# ---------------------------------------------------------------------------
# Execution


class _GroupFailure(Exception):
    def __init__(self, message, bad_csps=(), corruption=False):
        super().__init__(message)
        self.bad_csps = set(bad_csps)
        self.corruption = corruption


class _AggregateFallback(Exception):
    pass


def _probe_health(ctx: RouterContext):
    latencies = {}
    for cid, transport in ctx.transports.items():
        try:
            latencies[cid] = transport.ping()
        except (TransportError, StoreError):
            continue
    return latencies


def _pick_group(latencies, bad, tried, t):
    alive = [cid for cid in latencies if cid not in bad]
    if len(alive) < t:
        return None
    best = None
    for combo in itertools.combinations(sorted(alive), t):
        if combo in tried:
            continue
        score = (sum(latencies[c] for c in combo), combo)
        if best is None or score < best[0]:
            best = (score, combo)
    return best[1] if best else None


def execute_plan(plan: QueryPlan, ctx: RouterContext):
    """Run a plan; returns (headers, rows)."""
    t = ctx.config.t
    latencies = _probe_health(ctx)
    if len(latencies) < t:
        raise UnavailabilityError(
            f"need {t} reachable providers, only {len(latencies)} of "
            f"{len(ctx.transports)} answered"
        )
    bad = set()
    tried = set()
    corruption_seen = False
    last = None
    while True:
        group = _pick_group(latencies, bad, tried, t)
        if group is None:
            if corruption_seen:
                raise IntegrityError(
                    "no provider group yields a verifiable result; "
                    f"last failure: {last}"
                )
            raise UnavailabilityError(
                f"fewer than {t} trustworthy providers remain; last failure: {last}"
            )
        tried.add(group)
        try:
            return _run_group(plan, ctx, group)
        except _AggregateFallback:
            return execute_plan(plan.fallback, ctx)
        except _GroupFailure as failure:
            bad |= failure.bad_csps
            corruption_seen = corruption_seen or failure.corruption
            last = str(failure)


def run_query(text: str, ctx: RouterContext, explain: bool = False):
    plan = plan_query(sql.parse(text), ctx)
    if explain:
        return plan.explain()
    return execute_plan(plan, ctx)


def _fan_out(plan, ctx, group, op, payload_for):
    results = {}

    def call(cid):
        payload = payload_for(cid)
        return ctx.transports[cid].request(op, plan.base_table, payload)

    with ThreadPoolExecutor(max_workers=len(group)) as pool:
        futures = {cid: pool.submit(call, cid) for cid in group}
        for cid, fut in futures.items():
            try:
                results[cid] = fut.result()
            except (TransportError, StoreError) as exc:
                raise _GroupFailure(
                    f"provider {cid} failed: {exc}", bad_csps={cid}
                )
    return results


def _run_group(plan, ctx, group):
    if plan.mode == "aggregate":
        return _run_aggregate(plan, ctx, group)
    return _run_rows(plan, ctx, group)


def _run_rows(plan, ctx, group):
    def payload_for(cid):
        return {
            "joins": list(plan.joins),
            "predicate": _rewrite_for_csp(plan.pushdown, ctx, cid),
            "project": list(plan.fetch_columns),
        }

    results = _fan_out(plan, ctx, group, "select", payload_for)
    npk = len(plan.base_pk)
    per_csp = {}
    for cid, resp in results.items():
        keyed = {}
        for row in resp["rows"]:
            keyed[_freeze(row[:npk])] = row
        per_csp[cid] = keyed
    # Honest providers evaluate equivalent predicates over the same logical
    # rows, so their key sets must agree exactly; a provider with tampered
    # shares would otherwise silently censor rows from an intersection.
    common = None
    for cid in group:
        keys = set(per_csp[cid])
        if common is None:
            common = keys
        elif common != keys:
            raise _GroupFailure(
                "providers disagree on the matching row set", corruption=True
            )
    common = sorted(common, key=_sort_token)

    rows = _merge_rows(plan, ctx, group, per_csp, common)
    return _post_process(plan, ctx, rows)


def _freeze(cells):
    return tuple(tuple(c) if isinstance(c, list) else _freeze_cell(c) for c in cells)


def _freeze_cell(c):
    if isinstance(c, dict):
        return (tuple(c.get("e", ())), tuple(c.get("s", ())))
    return c


def _sort_token(key):
    out = []
    for v in key:
        if v is None:
            out.append((0, ""))
        elif isinstance(v, bool):
            out.append((1, str(v)))
        elif isinstance(v, (int, float)):
            out.append((2, v))
        else:
            out.append((3, str(v)))
    return tuple(out)


def _merge_rows(plan, ctx, group, per_csp, common):
    """Verify, reconstruct and decode the intersected rows."""
    config = ctx.config
    rctx = build_reconstruction(group, ctx.coeffs, config)
    columns = plan.fetch_columns
    refs = plan.column_refs

    shared_cols = [
        (i, name) for i, name in enumerate(columns) if refs[name].codec.shared
    ]
    plain_cols = [
        (i, name) for i, name in enumerate(columns) if not refs[name].codec.shared
    ]

    # Outer signatures first, attributing failures to one provider.
    for cid in group:
        keyed = per_csp[cid]
        for key in common:
            row = keyed[key]
            for i, name in shared_cols:
                cell = row[i]
                if cell is None:
                    continue
                for e_str, s in zip(cell["e"], cell["s"]):
                    if int(e_str) % config.p2 != s:
                        raise _GroupFailure(
                            f"provider {cid} returned a share failing its outer "
                            f"signature in column {name!r}",
                            bad_csps={cid},
                            corruption=True,
                        )

    # Plaintext cells must agree across the group.
    for key in common:
        reference = per_csp[group[0]][key]
        for cid in group[1:]:
            other = per_csp[cid][key]
            for i, name in plain_cols:
                if reference[i] != other[i]:
                    raise _GroupFailure(
                        f"providers disagree on plaintext column {name!r}",
                        corruption=True,
                    )

    # Batch reconstruction per column with a share-tuple cache, so a
    # dimension row decoded once is never reconstructed again.
    decoded_rows = []
    cache = {name: {} for _, name in shared_cols}
    pending = {name: [] for _, name in shared_cols}
    for key in common:
        for i, name in shared_cols:
            lengths = set()
            for cid in group:
                cell = per_csp[cid][key][i]
                lengths.add(None if cell is None else len(cell["e"]))
            if len(lengths) != 1:
                raise _GroupFailure(
                    f"providers disagree on the shape of column {name!r}",
                    corruption=True,
                )
            if None in lengths:
                continue
            tuples = tuple(
                tuple(int(v) for v in per_csp[cid][key][i]["e"]) for cid in group
            )
            if tuples not in cache[name]:
                cache[name][tuples] = None
                pending[name].append(tuples)

    for name, items in pending.items():
        if not items:
            continue
        share_rows = []
        spans = []
        for tuples in items:
            nblocks = len(tuples[0])
            spans.append((tuples, len(share_rows), nblocks))
            for b in range(nblocks):
                share_rows.append([tuples[j][b] for j in range(len(group))])
        try:
            # Stored units are zero-filled, never padded, so a pad digit
            # here can only mean tampering.
            blocks = reconstruct_blocks(share_rows, rctx, allow_pad=False)
        except CorruptionError as exc:
            raise _GroupFailure(str(exc), corruption=True)
        ref = plan.column_refs[name]
        for tuples, start, nblocks in spans:
            try:
                value = blocks_to_value(
                    blocks[start : start + nblocks], ref.codec, ctx.config
                )
            except (CorruptionError, DomainError) as exc:
                raise _GroupFailure(str(exc), corruption=True)
            cache[name][tuples] = value

    first = group[0]
    for key in common:
        row = per_csp[first][key]
        out = {}
        for i, name in plain_cols:
            ref = plan.column_refs[name]
            value = row[i]
            if ref.codec.kind == "key" and value is not None:
                value = ctx.restore_value(ref.table, name, value)
            out[name] = value
        for i, name in shared_cols:
            cell = row[i]
            if cell is None:
                out[name] = None
                continue
            tuples = tuple(
                tuple(int(v) for v in per_csp[cid][key][i]["e"]) for cid in group
            )
            out[name] = cache[name][tuples]
        decoded_rows.append(out)
    return decoded_rows


def reconstruct_sum(per_csp_slots, count, codec, rctx, config):
    """Rebuild an exact column total from per-provider share sums.

    ``per_csp_slots`` maps csp_id to the slot-wise share sums of one
    column (length = blocks per value).  Every digit slot carries a +2
    offset per summed row, so 2*count is subtracted after the exact
    division; the summed inner signatures must stay congruent to the
    summed digits mod p.
    """
    if count == 0:
        return None
    group = rctx.group
    t = config.t
    p = config.p
    nblocks = codec.block_count(config)
    slot_totals = []
    for b in range(nblocks):
        shares = [per_csp_slots[cid][b] for cid in group]
        values = []
        for i in range(t):
            acc = 0
            for j in range(t):
                acc += rctx.adj[i][j] * shares[j]
            if acc % rctx.det != 0:
                raise CorruptionError(
                    f"summed shares are not divisible in block {b}", group=group, block=b
                )
            values.append(acc // rctx.det)
        digits = [q - 2 * count for q in values[: t - 1]]
        sig_total = values[t - 1]
        if any(d < 0 for d in digits) or sig_total < 0:
            raise CorruptionError(
                f"summed shares decode to negative totals in block {b}",
                group=group,
                block=b,
            )
        if sum(digits) % p != sig_total % p:
            raise CorruptionError(
                f"summed inner signatures do not match in block {b}",
                group=group,
                block=b,
            )
        slot_totals.extend(digits)
    total = 0
    for i, slot in enumerate(slot_totals):
        total += slot * (p ** i)
    return total


def _run_aggregate(plan, ctx, group):
    spec = plan.aggregate_spec

    def payload_for(cid):
        return {
            "joins": list(plan.joins),
            "predicate": _rewrite_for_csp(plan.pushdown, ctx, cid),
            "group_by": list(spec["group_by"]),
            "sums": list(spec["sums"]),
            "counts": list(spec["counts"]),
        }

    results = _fan_out(plan, ctx, group, "aggregate", payload_for)
    per_csp = {}
    for cid, resp in results.items():
        keyed = {}
        for g in resp["groups"]:
            keyed[_freeze(g["key"])] = g
        per_csp[cid] = keyed
    key_sets = [set(per_csp[cid]) for cid in group]
    if any(ks != key_sets[0] for ks in key_sets[1:]):
        raise _AggregateFallback()
    rctx = build_reconstruction(group, ctx.coeffs, ctx.config)

    if not spec["group_by"] and not key_sets[0]:
        # A scalar aggregate over no rows still yields one output row.
        empty = {
            "key": (),
            "rows": 0,
            "counts": {n: 0 for n in set(spec["counts"]) | set(spec["sums"])},
            "sums": {n: None for n in spec["sums"]},
        }
        return _post_process_aggregate(plan, ctx, [empty])

    out_groups = []
    for key in sorted(key_sets[0], key=_sort_token):
        rows_counts = {per_csp[cid][key]["rows"] for cid in group}
        if len(rows_counts) != 1:
            raise _AggregateFallback()
        counts = {}
        for name in set(spec["counts"]) | set(spec["sums"]):
            vals = {per_csp[cid][key]["counts"][name] for cid in group}
            if len(vals) != 1:
                raise _AggregateFallback()
            counts[name] = vals.pop()
        sums = {}
        for name in spec["sums"]:
            codec = plan.column_refs[name].codec
            slots = {
                cid: [int(v) for v in per_csp[cid][key]["sums"][name]] for cid in group
            }
            try:
                sums[name] = reconstruct_sum(slots, counts[name], codec, rctx, ctx.config)
            except CorruptionError:
                raise _AggregateFallback()
        out_groups.append(
            {
                "key": key,
                "rows": rows_counts.pop(),
                "counts": counts,
                "sums": sums,
            }
        )
    return _post_process_aggregate(plan, ctx, out_groups)


# ---------------------------------------------------------------------------
# Client-side post-processing


def _row_resolver(plan, ctx, row):
    def resolve(col: sql.Column):
        if col.name not in row:
            raise PlanError(f"unknown column {col.name!r}")
        return row[col.name]

    return resolve


def _post_process(plan, ctx, rows):
    query = plan.query
    if plan.residual is not None:
        kept = []
        for row in rows:
            if sql.eval_expr(plan.residual, _row_resolver(plan, ctx, row)) is True:
                kept.append(row)
        rows = kept

    aggregates = []
    for item in query.select:
        aggregates.extend(sql.expr_aggregates(item.expr))
    if query.having is not None:
        aggregates.extend(_having_aggregates(query.having))
    grouped = bool(query.group_by) or bool(aggregates)

    if query.star:
        headers = list(plan.fetch_columns)
        out = [[row[name] for name in headers] for row in rows]
        out = _order_limit_star(plan, rows, out)
        return headers, out

    if not grouped:
        out_rows = []
        for row in rows:
            resolve = _row_resolver(plan, ctx, row)
            out_rows.append(
                (row, [sql.eval_expr(item.expr, resolve) for item in query.select])
            )
        out_rows = _apply_order(plan, ctx, out_rows, agg_values=None)
        out = [vals for _, vals in out_rows]
        if query.limit is not None:
            out = out[: query.limit]
        return [item.label() for item in query.select], out

    # Group.
    groups = {}
    for row in rows:
        resolve = _row_resolver(plan, ctx, row)
        key = tuple(sql.eval_expr(sql.Column(c.name), resolve) for c in query.group_by)
        groups.setdefault(key, []).append(row)
    if not query.group_by and not groups:
        groups[()] = []

    out_rows = []
    for key, members in groups.items():
        agg_values = {}
        for agg in set(aggregates):
            agg_values[sql.expr_to_sql(agg)] = _compute_aggregate(plan, ctx, agg, members)
        sample = members[0] if members else {name: None for name in plan.fetch_columns}
        row_view = dict(sample)
        for c, v in zip(query.group_by, key):
            row_view[c.name] = v
        if query.having is not None:
            keep = _eval_with_aggs(query.having, plan, ctx, row_view, agg_values)
            if keep is not True:
                continue
        vals = [
            _eval_with_aggs(item.expr, plan, ctx, row_view, agg_values)
            for item in query.select
        ]
        out_rows.append(((row_view, agg_values), vals))
    out_rows = _apply_order(plan, ctx, out_rows, agg_values="grouped")
    out = [vals for _, vals in out_rows]
    if query.limit is not None:
        out = out[: query.limit]
    return [item.label() for item in query.select], out


def _order_limit_star(plan, rows, out):
    query = plan.query
    if query.order_by:
        pairs = list(zip(rows, out))
        for expr, desc in reversed(query.order_by):
            pairs.sort(
                key=lambda pair: _null_last(
                    sql.eval_expr(expr, _row_resolver(plan, None, pair[0])), desc
                ),
                reverse=desc,
            )
        out = [o for _, o in pairs]
    if query.limit is not None:
        out = out[: query.limit]
    return out


def _compute_aggregate(plan, ctx, agg: sql.Aggregate, members):
    if agg.func == "COUNT":
        if agg.arg is None:
            return len(members)
        n = 0
        for row in members:
            if sql.eval_expr(agg.arg, _row_resolver(plan, ctx, row)) is not None:
                n += 1
        return n
    values = []
    for row in members:
        v = sql.eval_expr(agg.arg, _row_resolver(plan, ctx, row))
        if v is not None:
            values.append(v)
    if not values:
        return None
    if agg.func == "SUM":
        return sum(values)
    if agg.func == "AVG":
        return sum(values) / len(values)
    if agg.func == "MIN":
        return min(values)
    if agg.func == "MAX":
        return max(values)
    raise PlanError(f"unknown aggregate {agg.func!r}")


def _eval_with_aggs(node, plan, ctx, row_view, agg_values):
    if isinstance(node, sql.Aggregate):
        return agg_values[sql.expr_to_sql(node)]
    if isinstance(node, sql.BinOp):
        a = _eval_with_aggs(node.left, plan, ctx, row_view, agg_values)
        b = _eval_with_aggs(node.right, plan, ctx, row_view, agg_values)
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
            return a / b
    if isinstance(node, sql.Compare):
        a = _eval_with_aggs(node.left, plan, ctx, row_view, agg_values)
        b = _eval_with_aggs(node.right, plan, ctx, row_view, agg_values)
        return sql._compare(node.op, a, b)
    if isinstance(node, (sql.And, sql.Or)):
        results = [_eval_with_aggs(a, plan, ctx, row_view, agg_values) for a in node.args]
        if isinstance(node, sql.And):
            if any(r is False for r in results):
                return False
            return None if any(r is None for r in results) else True
        if any(r is True for r in results):
            return True
        return None if any(r is None for r in results) else False
    if isinstance(node, sql.Not):
        r = _eval_with_aggs(node.arg, plan, ctx, row_view, agg_values)
        return None if r is None else (not r)
    if isinstance(node, sql.Between):
        v = _eval_with_aggs(node.expr, plan, ctx, row_view, agg_values)
        lo = _eval_with_aggs(node.low, plan, ctx, row_view, agg_values)
        hi = _eval_with_aggs(node.high, plan, ctx, row_view, agg_values)
        if v is None or lo is None or hi is None:
            return None
        result = lo <= v <= hi
        return (not result) if node.negated else result
    if isinstance(node, (sql.InList, sql.IsNull, sql.Like)) and isinstance(
        node.expr, sql.Aggregate
    ):
        value = agg_values[sql.expr_to_sql(node.expr)]
        return sql.eval_expr(
            type(node)(sql.Literal(value), *_tail_fields(node)),
            lambda col: row_view.get(col.name),
        )
    return sql.eval_expr(node, lambda col: row_view.get(col.name))


def _tail_fields(node):
    if isinstance(node, sql.InList):
        return (node.values, node.negated)
    if isinstance(node, sql.IsNull):
        return (node.negated,)
    return (node.pattern, node.negated)


def _apply_order(plan, ctx, out_rows, agg_values):
    query = plan.query
    if not query.order_by:
        return out_rows
    alias_map = {}
    for i, item in enumerate(query.select):
        if item.alias:
            alias_map[item.alias] = i
        alias_map.setdefault(item.label(), i)

    def sort_value(entry, expr):
        context, vals = entry
        if isinstance(expr, sql.Column) and expr.name in alias_map:
            return vals[alias_map[expr.name]]
        label = sql.expr_to_sql(expr)
        if label in alias_map:
            return vals[alias_map[label]]
        if agg_values == "grouped":
            row_view, aggs = context
            return _eval_with_aggs(expr, plan, ctx, row_view, aggs)
        row = context
        return sql.eval_expr(expr, _row_resolver(plan, ctx, row))

    ordered = list(out_rows)
    for expr, desc in reversed(query.order_by):
        # NULL rows sort after everything in both directions, so the null
        # marker must move with the reversal.
        ordered.sort(
            key=lambda entry: _null_last(sort_value(entry, expr), desc), reverse=desc
        )
    return ordered


def _null_last(value, desc=False):
    null_rank = 0 if desc else 1
    if value is None:
        return (null_rank, (0, 0))
    if isinstance(value, bool):
        return (1 - null_rank, (1, str(value)))
    if isinstance(value, (int, float)):
        return (1 - null_rank, (2, value))
    if isinstance(value, datetime.date):
        return (1 - null_rank, (3, value.isoformat()))
    return (1 - null_rank, (3, str(value)))


def _post_process_aggregate(plan, ctx, groups):
    query = plan.query
    out_rows = []
    for g in groups:
        row_view = {}
        for name, value in zip(plan.aggregate_spec["group_by"], g["key"]):
            ref = plan.column_refs[name]
            if ref.codec.kind == "key" and value is not None:
                value = ctx.restore_value(ref.table, name, value)
            row_view[name] = value
        agg_values = {}
        for key, (kind, col) in plan.agg_results.items():
            if kind == "rows":
                agg_values[key] = g["rows"]
            elif kind == "count":
                agg_values[key] = g["counts"][col]
            else:
                codec = plan.column_refs[col].codec
                total = g["sums"][col]
                if total is None:
                    agg_values[key] = None
                    continue
                if codec.kind == "real":
                    value = total / (10 ** codec.scale)
                else:
                    value = total
                if kind == "avg":
                    value = value / g["counts"][col]
                agg_values[key] = value
        if query.having is not None:
            keep = _eval_with_aggs(query.having, plan, ctx, row_view, agg_values)
            if keep is not True:
                continue
        vals = [
            _eval_with_aggs(item.expr, plan, ctx, row_view, agg_values)
            for item in query.select
        ]
        out_rows.append(((row_view, agg_values), vals))
    out_rows = _apply_order(plan, ctx, out_rows, agg_values="grouped")
    out = [vals for _, vals in out_rows]
    if query.limit is not None:
        out = out[: query.limit]
    return [item.label() for item in query.select], out
