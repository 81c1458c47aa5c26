"""Provider-side share store: an embedded tabular engine.

A store holds one provider's view of every shared table: plaintext key and
boolean columns, and for each sensitive column a list of share integers
plus a list of outer signatures.  The store never sees the digit modulus,
the coefficient matrix, the codecs, or any plaintext non-key value; its
predicate language is limited to plaintext-key operators and whole-tuple
share-literal equality, so it can filter, join on keys, and sum share
integers without learning anything new.

Persistence is an append log per table (one JSON record per line) with an
in-memory primary-key index rebuilt on startup.  Writes are serialized per
table; reads copy the matching rows under the same lock, so a request sees
a consistent point-in-time view.

Share integers are serialized as decimal strings on disk and on the wire;
they are unbounded by design.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
from dataclasses import dataclass, field

from .errors import StoreError

__all__ = ["SharedColumn", "SharedTableSchema", "CspStore", "SNAPSHOT_CHUNK"]

SNAPSHOT_CHUNK = 10_000

ROLES = ("key", "bool", "shared")


@dataclass(frozen=True)
class SharedColumn:
    name: str
    role: str
    nullable: bool = False
    blocks: object = None  # int for fixed block count, None for variable

    def __post_init__(self):
        if self.role not in ROLES:
            raise StoreError(f"unknown column role {self.role!r}")


@dataclass(frozen=True)
class SharedTableSchema:
    """Provider-visible table layout.

    The flattened column list pairs every shared column with its signature
    column, so a table with k keys and s shared attributes presents
    k + 2s columns.
    """

    name: str
    columns: tuple
    primary_key: tuple
    p2: int

    def __post_init__(self):
        if not self.columns:
            raise StoreError(f"table {self.name!r} has no columns")
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise StoreError(f"table {self.name!r} has duplicate column names")
        if not self.primary_key:
            raise StoreError(f"table {self.name!r} needs a primary key")
        plain = {c.name for c in self.columns if c.role != "shared"}
        for k in self.primary_key:
            if k not in plain:
                raise StoreError(f"primary key column {k!r} must be plaintext")
        if self.p2 < 2:
            raise StoreError("p2 must be at least 2")

    def column_names(self):
        out = []
        for c in self.columns:
            out.append(c.name)
            if c.role == "shared":
                out.append(f"sig_{c.name}")
        return out

    def column(self, name: str) -> SharedColumn:
        for c in self.columns:
            if c.name == name:
                return c
        raise StoreError(f"table {self.name!r} has no column {name!r}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    def to_wire(self) -> dict:
        return {
            "name": self.name,
            "primary_key": list(self.primary_key),
            "p2": self.p2,
            "columns": [
                {
                    "name": c.name,
                    "role": c.role,
                    "nullable": c.nullable,
                    "blocks": c.blocks,
                }
                for c in self.columns
            ],
        }

    @classmethod
    def from_wire(cls, obj: dict) -> "SharedTableSchema":
        return cls(
            name=obj["name"],
            columns=tuple(
                SharedColumn(c["name"], c["role"], c.get("nullable", False), c.get("blocks"))
                for c in obj["columns"]
            ),
            primary_key=tuple(obj["primary_key"]),
            p2=int(obj["p2"]),
        )


# ---------------------------------------------------------------------------
# Cell representations.
#
# In memory a shared cell is None or (share_ints, sig_ints) as tuples of
# Python ints; on the wire and in the log it is None or
# {"e": [decimal strings], "s": [small ints]}.


def cell_to_wire(cell, column: SharedColumn):
    if column.role != "shared":
        return cell
    if cell is None:
        return None
    e, s = cell
    return {"e": [str(v) for v in e], "s": list(s)}


def cell_from_wire(obj, column: SharedColumn):
    if column.role != "shared":
        return obj
    if obj is None:
        return None
    try:
        e = tuple(int(v) for v in obj["e"])
        s = tuple(int(v) for v in obj["s"])
    except (TypeError, KeyError, ValueError) as exc:
        raise StoreError(f"malformed share cell in column {column.name!r}: {exc}")
    return (e, s)


def _canon_key(value):
    if value is None:
        return (0, "")
    if isinstance(value, bool):
        return (1, str(value))
    if isinstance(value, (int, float)):
        return (2, value)
    return (3, str(value))


def row_sort_key(pk_tuple):
    return tuple(_canon_key(v) for v in pk_tuple)


class _Table:
    def __init__(self, schema: SharedTableSchema):
        self.schema = schema
        self.rows = {}  # pk tuple -> list of memory cells in column order
        self.lock = threading.Lock()

    def pk_of(self, cells):
        idx = {c.name: i for i, c in enumerate(self.schema.columns)}
        return tuple(cells[idx[k]] for k in self.schema.primary_key)

    def validate_row(self, cells):
        cols = self.schema.columns
        if len(cells) != len(cols):
            raise StoreError(
                f"table {self.schema.name!r}: row has {len(cells)} cells, "
                f"schema has {len(cols)} columns"
            )
        for cell, col in zip(cells, cols):
            if col.role != "shared":
                if cell is None and not col.nullable:
                    raise StoreError(f"column {col.name!r} is not nullable")
                continue
            if cell is None:
                if not col.nullable:
                    raise StoreError(f"column {col.name!r} is not nullable")
                continue
            e, s = cell
            if len(e) != len(s):
                raise StoreError(
                    f"column {col.name!r}: {len(e)} shares but {len(s)} signature slots"
                )
            if col.blocks is not None and len(e) != col.blocks:
                raise StoreError(
                    f"column {col.name!r}: expected {col.blocks} shares, got {len(e)}"
                )

    def sorted_pks(self):
        return sorted(self.rows, key=row_sort_key)


class CspStore:
    """One provider's embedded store plus its request dispatcher.

    ``handle_request`` implements the full wire semantics; the TCP server
    and the in-process transport both call it, so tests over the local
    transport exercise exactly what the network path would.
    """

    def __init__(self, csp_id: int, data_dir: str = None):
        self.csp_id = int(csp_id)
        self.data_dir = data_dir
        self.tables = {}
        self._staged = {}
        self._meta_lock = threading.Lock()
        if data_dir:
            os.makedirs(data_dir, exist_ok=True)
            self._replay()

    # -- persistence --------------------------------------------------------

    def _log_path(self, table: str) -> str:
        return os.path.join(self.data_dir, f"{table}.log")

    def _append(self, table: str, record: dict):
        if not self.data_dir:
            return
        with open(self._log_path(table), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, separators=(",", ":"), sort_keys=True))
            fh.write("\n")

    def _replay(self):
        for fname in sorted(os.listdir(self.data_dir)):
            if not fname.endswith(".log"):
                continue
            path = os.path.join(self.data_dir, fname)
            table = None
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    rec = json.loads(line)
                    kind = rec["t"]
                    if kind == "create":
                        schema = SharedTableSchema.from_wire(rec["schema"])
                        table = _Table(schema)
                        self.tables[schema.name] = table
                    elif kind == "drop":
                        if table is not None:
                            self.tables.pop(table.schema.name, None)
                        table = None
                    elif kind == "rows" and table is not None:
                        for wire_row in rec["rows"]:
                            cells = [
                                cell_from_wire(c, col)
                                for c, col in zip(wire_row, table.schema.columns)
                            ]
                            table.rows[table.pk_of(cells)] = cells

    # -- request dispatch ----------------------------------------------------

    def handle_request(self, req: dict) -> dict:
        seq = req.get("seq")
        try:
            op = req.get("op")
            handler = getattr(self, f"_op_{op}", None)
            if handler is None:
                raise StoreError(f"unknown op {op!r}")
            result = handler(req.get("table"), req.get("payload") or {})
            resp = {"seq": seq, "status": "ok"}
            resp.update(result)
            return resp
        except StoreError as exc:
            return {
                "seq": seq,
                "status": "error",
                "error": {"type": type(exc).__name__, "message": str(exc)},
            }

    def _table(self, name) -> _Table:
        if not name or name not in self.tables:
            raise StoreError(f"no such table {name!r}")
        return self.tables[name]

    # -- ops ------------------------------------------------------------------

    def _op_health(self, table, payload):
        return {
            "csp": self.csp_id,
            "tables": {name: len(t.rows) for name, t in self.tables.items()},
        }

    def _op_create(self, table, payload):
        schema = SharedTableSchema.from_wire(payload["schema"])
        with self._meta_lock:
            if schema.name in self.tables:
                raise StoreError(f"table {schema.name!r} already exists")
            self.tables[schema.name] = _Table(schema)
        self._append(schema.name, {"t": "create", "schema": schema.to_wire()})
        return {"columns": self.tables[schema.name].schema.column_names()}

    def _op_drop(self, table, payload):
        t = self._table(table)
        with self._meta_lock:
            del self.tables[table]
        if self.data_dir:
            try:
                os.remove(self._log_path(table))
            except FileNotFoundError:
                pass
        return {"dropped": t.schema.name}

    def _decode_rows(self, t: _Table, wire_rows):
        rows = []
        for wire_row in wire_rows:
            if len(wire_row) != len(t.schema.columns):
                raise StoreError(
                    f"table {t.schema.name!r}: row has {len(wire_row)} cells, "
                    f"schema has {len(t.schema.columns)} columns"
                )
            cells = [
                cell_from_wire(c, col) for c, col in zip(wire_row, t.schema.columns)
            ]
            t.validate_row(cells)
            rows.append(cells)
        return rows

    def _op_insert(self, table, payload):
        t = self._table(table)
        mode = payload.get("mode", "insert")
        stage = payload.get("stage", "direct")
        if mode not in ("insert", "upsert"):
            raise StoreError(f"unknown insert mode {mode!r}")
        if stage == "prepare":
            rows = self._decode_rows(t, payload.get("rows", []))
            with t.lock:
                if mode == "insert":
                    for cells in rows:
                        if t.pk_of(cells) in t.rows:
                            raise StoreError(
                                f"duplicate key {t.pk_of(cells)!r} in table {table!r}"
                            )
            batch = payload.get("batch")
            if batch is None:
                raise StoreError("prepare requires a batch id")
            self._staged[(table, batch)] = (mode, rows)
            return {"staged": len(rows)}
        if stage == "commit":
            batch = payload.get("batch")
            staged = self._staged.pop((table, batch), None)
            if staged is None:
                raise StoreError(f"no staged batch {batch!r} for table {table!r}")
            mode, rows = staged
            return self._apply_rows(t, rows, mode)
        if stage == "abort":
            self._staged.pop((table, payload.get("batch")), None)
            return {"aborted": True}
        if stage != "direct":
            raise StoreError(f"unknown stage {stage!r}")
        rows = self._decode_rows(t, payload.get("rows", []))
        return self._apply_rows(t, rows, mode)

    def _apply_rows(self, t: _Table, rows, mode):
        with t.lock:
            if mode == "insert":
                for cells in rows:
                    if t.pk_of(cells) in t.rows:
                        raise StoreError(
                            f"duplicate key {t.pk_of(cells)!r} in table {t.schema.name!r}"
                        )
            for cells in rows:
                t.rows[t.pk_of(cells)] = cells
        self._append(
            t.schema.name,
            {
                "t": "rows",
                "rows": [
                    [cell_to_wire(c, col) for c, col in zip(cells, t.schema.columns)]
                    for cells in rows
                ],
            },
        )
        return {"applied": len(rows)}

    # -- predicate evaluation -------------------------------------------------

    def _resolve(self, tables, name):
        """Find (table, column) for a bare column name across joined tables."""
        hits = [(t, t.schema.column(name)) for t in tables if t.schema.has_column(name)]
        if not hits:
            raise StoreError(f"unknown column {name!r}")
        if len(hits) > 1:
            raise StoreError(f"ambiguous column {name!r}")
        return hits[0]

    def _normalize_predicate(self, node, tables):
        """Validate the tree and pre-parse share literals into int tuples."""
        if node is None:
            return None
        op = node.get("op")
        if op == "and":
            return {"op": "and", "args": [self._normalize_predicate(a, tables) for a in node["args"]]}
        col_name = node.get("col")
        _, col = self._resolve(tables, col_name)
        if op in ("eq", "in"):
            if col.role == "shared":
                raise StoreError(
                    f"plaintext comparison on shared column {col_name!r}; "
                    "use a share literal"
                )
            if op == "eq":
                return {"op": "eq", "col": col_name, "value": node["value"]}
            return {"op": "in", "col": col_name, "values": set(_hashable(v) for v in node["values"])}
        if op in ("isnull", "notnull"):
            return {"op": op, "col": col_name}
        if op in ("share_eq", "share_in"):
            if col.role != "shared":
                raise StoreError(f"share literal on plaintext column {col_name!r}")
            if op == "share_eq":
                return {"op": "share_eq", "col": col_name, "e": tuple(int(v) for v in node["e"])}
            return {
                "op": "share_in",
                "col": col_name,
                "tuples": set(tuple(int(v) for v in tup) for tup in node["tuples"]),
            }
        raise StoreError(f"unsupported predicate op {op!r}")

    def _eval_predicate(self, node, view):
        if node is None:
            return True
        op = node["op"]
        if op == "and":
            return all(self._eval_predicate(a, view) for a in node["args"])
        cell = view[node["col"]]
        if op == "eq":
            return cell is not None and cell == node["value"]
        if op == "in":
            return cell is not None and _hashable(cell) in node["values"]
        if op == "isnull":
            return cell is None
        if op == "notnull":
            return cell is not None
        if op == "share_eq":
            return cell is not None and cell[0] == node["e"]
        if op == "share_in":
            return cell is not None and cell[0] in node["tuples"]
        raise StoreError(f"unsupported predicate op {op!r}")

    def _join_views(self, base: _Table, joins):
        """Yield merged column views for the inner join of base with the
        joined tables.  Join keys must be plaintext; the right side must be
        the joined table's single-column primary key."""
        tables = [base]
        plans = []
        for spec in joins or []:
            jt = self._table(spec["table"])
            right = spec["right"]
            left = spec["left"]
            if tuple(jt.schema.primary_key) != (right,):
                raise StoreError(
                    f"join target {spec['table']!r} must be keyed by {right!r}"
                )
            lt, lcol = self._resolve(tables, left)
            if lcol.role == "shared":
                raise StoreError(f"join key {left!r} must be plaintext")
            with jt.lock:
                index = {pk[0]: cells for pk, cells in jt.rows.items()}
            plans.append((jt, left, index))
            tables.append(jt)
        with base.lock:
            base_rows = list(base.rows.values())
        base_cols = [c.name for c in base.schema.columns]
        join_cols = [[c.name for c in jt.schema.columns] for jt, _, _ in plans]
        for cells in base_rows:
            view = dict(zip(base_cols, cells))
            ok = True
            for (jt, left, index), names in zip(plans, join_cols):
                probe = view.get(left)
                hit = index.get(probe) if probe is not None else None
                if hit is None:
                    ok = False
                    break
                view.update(zip(names, hit))
            if ok:
                yield view, tables

    def _select_tables(self, table, payload):
        base = self._table(table)
        tables = [base]
        for spec in payload.get("joins") or []:
            tables.append(self._table(spec["table"]))
        return base, tables

    def _op_select(self, table, payload):
        base, tables = self._select_tables(table, payload)
        pred = self._normalize_predicate(payload.get("predicate"), tables)
        project = payload.get("project") or []
        proj_cols = [self._resolve(tables, name)[1] for name in project]
        out = []
        for view, _ in self._join_views(base, payload.get("joins")):
            if self._eval_predicate(pred, view):
                out.append(
                    [cell_to_wire(view[name], col) for name, col in zip(project, proj_cols)]
                )
        return {"rows": out}

    def _op_aggregate(self, table, payload):
        base, tables = self._select_tables(table, payload)
        pred = self._normalize_predicate(payload.get("predicate"), tables)
        group_by = payload.get("group_by") or []
        for g in group_by:
            _, col = self._resolve(tables, g)
            if col.role == "shared":
                raise StoreError(f"cannot group on shared column {g!r}")
        sum_cols = payload.get("sums") or []
        sum_meta = {}
        for name in sum_cols:
            _, col = self._resolve(tables, name)
            if col.role != "shared":
                raise StoreError(f"share sum on plaintext column {name!r}")
            if col.blocks is None:
                raise StoreError(f"column {name!r} has variable width; cannot sum")
            sum_meta[name] = col.blocks
        count_cols = [c for c in (payload.get("counts") or []) if c != "*"]
        for name in count_cols:
            self._resolve(tables, name)
        groups = {}
        for view, _ in self._join_views(base, payload.get("joins")):
            if not self._eval_predicate(pred, view):
                continue
            key = tuple(view[g] for g in group_by)
            g = groups.get(key)
            if g is None:
                g = {
                    "rows": 0,
                    "sums": {name: [0] * blocks for name, blocks in sum_meta.items()},
                    "counts": {name: 0 for name in set(count_cols) | set(sum_cols)},
                }
                groups[key] = g
            g["rows"] += 1
            for name in sum_meta:
                cell = view[name]
                if cell is None:
                    continue
                acc = g["sums"][name]
                for i, e in enumerate(cell[0]):
                    acc[i] += e
                g["counts"][name] += 1
            for name in count_cols:
                if name not in sum_meta and view[name] is not None:
                    g["counts"][name] += 1
        out = []
        for key in sorted(groups, key=row_sort_key):
            g = groups[key]
            out.append(
                {
                    "key": list(key),
                    "rows": g["rows"],
                    "sums": {n: [str(v) for v in acc] for n, acc in g["sums"].items()},
                    "counts": g["counts"],
                }
            )
        return {"groups": out}

    def _op_verify(self, table, payload):
        names = [table] if table else sorted(self.tables)
        failures = []
        for name in names:
            t = self._table(name)
            p2 = t.schema.p2
            with t.lock:
                items = [(pk, list(cells)) for pk, cells in t.rows.items()]
            for pk, cells in sorted(items, key=lambda kv: row_sort_key(kv[0])):
                for cell, col in zip(cells, t.schema.columns):
                    if col.role != "shared" or cell is None:
                        continue
                    for i, (e, s) in enumerate(zip(*cell)):
                        if e % p2 != s:
                            failures.append(
                                {"table": name, "key": list(pk), "col": col.name, "block": i}
                            )
        return {"failures": failures}

    def _op_snapshot(self, table, payload):
        t = self._table(table)
        cursor = int(payload.get("cursor", 0))
        with t.lock:
            pks = t.sorted_pks()
            chunk = pks[cursor : cursor + SNAPSHOT_CHUNK]
            rows = [
                [cell_to_wire(c, col) for c, col in zip(t.rows[pk], t.schema.columns)]
                for pk in chunk
            ]
        nxt = cursor + len(chunk)
        return {"rows": rows, "next": nxt if nxt < len(pks) else None}

    def _op_digest(self, table, payload):
        t = self._table(table)
        with t.lock:
            rows = [
                [cell_to_wire(c, col) for c, col in zip(t.rows[pk], t.schema.columns)]
                for pk in t.sorted_pks()
            ]
        blob = json.dumps(
            {"schema": t.schema.to_wire(), "rows": rows},
            sort_keys=True,
            separators=(",", ":"),
        ).encode()
        return {"digest": hashlib.sha256(blob).hexdigest()}

    def _op_corrupt(self, table, payload):
        pattern = payload.get("pattern")
        if pattern not in ("add-delta", "random-replace", "sig-replace"):
            raise StoreError(f"unknown corruption pattern {pattern!r}")
        rate = float(payload.get("rate", 0.0))
        delta = int(payload.get("delta", 1))
        rng = random.Random(int(payload.get("seed", 0)))
        names = [table] if table else sorted(self.tables)
        count = 0
        rows_touched = 0
        for name in names:
            t = self._table(name)
            with t.lock:
                max_e = 0
                for cells in t.rows.values():
                    for cell, col in zip(cells, t.schema.columns):
                        if col.role == "shared" and cell is not None:
                            for e in cell[0]:
                                if abs(e) > max_e:
                                    max_e = abs(e)
                touched = []
                for pk in t.sorted_pks():
                    cells = t.rows[pk]
                    changed = False
                    new_cells = list(cells)
                    for ci, (cell, col) in enumerate(zip(cells, t.schema.columns)):
                        if col.role != "shared" or cell is None:
                            continue
                        e_list, s_list = list(cell[0]), list(cell[1])
                        for bi in range(len(e_list)):
                            if rng.random() >= rate:
                                continue
                            old = e_list[bi]
                            if pattern == "add-delta":
                                e_list[bi] = old + delta
                            else:
                                new = old
                                while new == old:
                                    new = rng.randrange(max_e + 1) if max_e else old + 1
                                e_list[bi] = new
                                if pattern == "sig-replace":
                                    s_list[bi] = new % t.schema.p2
                            count += 1
                            changed = True
                        if changed:
                            new_cells[ci] = (tuple(e_list), tuple(s_list))
                    if changed:
                        t.rows[pk] = new_cells
                        touched.append(new_cells)
                rows_touched += len(touched)
            for cells in touched:
                self._append(
                    name,
                    {
                        "t": "rows",
                        "rows": [
                            [cell_to_wire(c, col) for c, col in zip(cells, t.schema.columns)]
                        ],
                    },
                )
        return {"count": count, "rows": rows_touched}


def _hashable(v):
    return tuple(v) if isinstance(v, list) else v
