"""Warehouse lifecycle: catalog, loading, cubes, recovery.

The catalog is a single JSON file owned by the data warehouse operator.
It holds everything the providers must never see in one place: the digit
modulus, the coefficient matrix, per-column codecs, and the surrogate
maps protecting sensitive keys.  Providers receive only flattened share
tables plus the public signature modulus.

Loading encodes and shares column batches, then applies them to every
provider with a prepare/commit round so a mid-batch crash never leaves a
half-written batch behind.  Recovery rebuilds one provider's entire
holdings from any ``t`` healthy peers by reconstructing every cell and
re-sharing it with the lost provider's own coefficient row; the rebuilt
tables hash to the same content digest the lost provider would have
reported.
"""

from __future__ import annotations

import datetime
import json
import os
import threading
import uuid

from .codec import ColumnCodec, derive_codec, value_to_blocks
from .errors import (
    ConfigError,
    CorruptionError,
    IntegrityError,
    StoreError,
    TransportError,
    UnavailabilityError,
)
from .protocol import LocalTransport, TcpTransport
from .router import RouterContext, run_query
from .sharing import (
    CoefficientSet,
    SharingConfig,
    build_reconstruction,
    gen_coefficients,
    reconstruct_blocks,
    share_blocks,
)
from .store import CspStore, SharedColumn, SharedTableSchema

__all__ = ["Warehouse", "CATALOG_NAME", "data_root"]

CATALOG_NAME = "catalog.json"
LOAD_BATCH = 2_000
CUBE_MAX_DIMS = 6


def data_root(default_base: str) -> str:
    return os.environ.get("SHARDHOUSE_DATA_DIR", default_base)


def _encode_key(value):
    """Plaintext key cells must be JSON-safe scalars."""
    if isinstance(value, datetime.date):
        return value.isoformat()
    return value


class Warehouse:
    def __init__(self, catalog_path: str, catalog: dict, recorder=None):
        self.catalog_path = catalog_path
        self.catalog = catalog
        cfg = catalog["config"]
        self.config = SharingConfig(
            n=cfg["n"],
            t=cfg["t"],
            p=int(cfg["p"]),
            p2=int(cfg["p2"]),
            csp_ids=tuple(cfg["csp_ids"]),
            seed=cfg.get("seed", 0),
            inner_hash=cfg.get("inner_hash", "digit-sum"),
        )
        self.coeffs = CoefficientSet(
            matrix=tuple(
                tuple(int(v) for v in row) for row in catalog["coefficients"]
            ),
            csp_ids=tuple(cfg["csp_ids"]),
        )
        self.codecs = {}
        for name, tdef in catalog["tables"].items():
            cols = {}
            for cdef in tdef["columns"]:
                cols[cdef["name"]] = ColumnCodec.from_json(cdef["codec"])
            self.codecs[name] = cols
        self.recorder = recorder
        self.transports = {}
        self._local_stores = {}
        for spec in catalog["csps"]:
            cid = spec["id"]
            if spec["kind"] == "local":
                store = CspStore(cid, spec["data_dir"])
                self._local_stores[cid] = store
                self.transports[cid] = LocalTransport(store, recorder=recorder)
            elif spec["kind"] == "tcp":
                self.transports[cid] = TcpTransport(spec["host"], spec["port"], cid)
            else:
                raise ConfigError(f"unknown provider kind {spec['kind']!r}")
        self._key_lock = threading.Lock()
        self._rev_maps = {}

    # -- construction --------------------------------------------------------

    @classmethod
    def init_new(
        cls,
        base_dir: str,
        tables: list,
        n: int,
        t: int,
        p: int,
        p2: int = 67,
        seed: int = 0,
        csps: list = None,
        coefficients=None,
        inner_hash: str = "digit-sum",
        recorder=None,
    ) -> "Warehouse":
        """Create a catalog, derive codecs, and CREATE every table at
        every provider.  ``tables`` is a list of logical table
        definitions: {"name", "primary_key", "columns": [{...}]}."""
        os.makedirs(base_dir, exist_ok=True)
        config = SharingConfig(n=n, t=t, p=p, p2=p2, seed=seed, inner_hash=inner_hash)
        if coefficients is None:
            coeffs = gen_coefficients(config)
        else:
            coeffs = CoefficientSet.from_matrix(coefficients, config)
        if csps is None:
            root = data_root(base_dir)
            csps = [
                {"id": cid, "kind": "local", "data_dir": os.path.join(root, f"csp{cid}")}
                for cid in config.csp_ids
            ]
        if sorted(spec["id"] for spec in csps) != sorted(config.csp_ids):
            raise ConfigError("provider list does not match csp_ids")

        table_defs = {}
        key_domains = {}
        for tdef in tables:
            name = tdef["name"]
            pk = list(tdef["primary_key"])
            columns = []
            for cdef in tdef["columns"]:
                codec = derive_codec(cdef, config)
                codec.validate_against(config)
                entry = {"name": cdef["name"], "codec": codec.to_json()}
                sensitive = cdef.get("sensitive")
                if sensitive:
                    if codec.kind != "key":
                        raise ConfigError(
                            f"column {cdef['name']!r}: only key columns can be "
                            "marked sensitive"
                        )
                    domain = sensitive if isinstance(sensitive, str) else f"{name}.{cdef['name']}"
                    entry["sensitive_domain"] = domain
                    key_domains[domain] = {"next": 1, "map": {}}
                columns.append(entry)
            col_names = [c["name"] for c in columns]
            for k in pk:
                if k not in col_names:
                    raise ConfigError(f"table {name!r}: primary key {k!r} not a column")
            table_defs[name] = {"primary_key": pk, "columns": columns}

        catalog = {
            "version": 1,
            "config": {
                "n": n,
                "t": t,
                "p": str(p),
                "p2": str(p2),
                "seed": seed,
                "inner_hash": inner_hash,
                "csp_ids": list(config.csp_ids),
            },
            "coefficients": [[str(v) for v in row] for row in coeffs.matrix],
            "csps": csps,
            "tables": table_defs,
            "key_domains": key_domains,
        }
        path = os.path.join(base_dir, CATALOG_NAME)
        wh = cls(path, catalog, recorder=recorder)
        for name in table_defs:
            schema = wh.store_schema(name)
            for cid, transport in wh.transports.items():
                transport.request("create", name, {"schema": schema.to_wire()})
        wh.save()
        return wh

    @classmethod
    def open(cls, base_dir: str, recorder=None) -> "Warehouse":
        path = os.path.join(base_dir, CATALOG_NAME)
        with open(path, encoding="utf-8") as fh:
            catalog = json.load(fh)
        return cls(path, catalog, recorder=recorder)

    def save(self):
        tmp = self.catalog_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(self.catalog, fh, indent=1, sort_keys=True)
        os.replace(tmp, self.catalog_path)

    def close(self):
        for transport in self.transports.values():
            transport.close()

    # -- schemas --------------------------------------------------------------

    def table_names(self):
        return list(self.catalog["tables"])

    def store_schema(self, table: str) -> SharedTableSchema:
        tdef = self.catalog["tables"].get(table)
        if tdef is None:
            raise ConfigError(f"unknown table {table!r}")
        cols = []
        for name, codec in self.codecs[table].items():
            if codec.shared:
                cols.append(
                    SharedColumn(
                        name,
                        "shared",
                        nullable=codec.nullable,
                        blocks=codec.block_count(self.config),
                    )
                )
            elif codec.kind == "boolean":
                cols.append(SharedColumn(name, "bool", nullable=codec.nullable))
            else:
                cols.append(SharedColumn(name, "key", nullable=codec.nullable))
        return SharedTableSchema(
            name=table,
            columns=tuple(cols),
            primary_key=tuple(tdef["primary_key"]),
            p2=self.config.p2,
        )

    # -- sensitive keys ---------------------------------------------------------

    def _column_domain(self, table: str, col: str):
        for cdef in self.catalog["tables"][table]["columns"]:
            if cdef["name"] == col:
                return cdef.get("sensitive_domain")
        return None

    def translate_key(self, table: str, col: str, value, assign: bool = False):
        domain = self._column_domain(table, col)
        if domain is None or value is None:
            return _encode_key(value)
        dom = self.catalog["key_domains"][domain]
        key = str(value)
        with self._key_lock:
            got = dom["map"].get(key)
            if got is None:
                if not assign:
                    return 0  # surrogates start at 1, so this matches nothing
                got = dom["next"]
                dom["map"][key] = got
                dom["next"] = got + 1
        return got

    def _reverse_map(self, domain: str) -> dict:
        dom = self.catalog["key_domains"][domain]
        cached = self._rev_maps.get(domain)
        if cached is None or len(cached) != len(dom["map"]):
            cached = {surrogate: orig for orig, surrogate in dom["map"].items()}
            self._rev_maps[domain] = cached
        return cached

    def restore_key(self, table: str, col: str, value):
        domain = self._column_domain(table, col)
        if domain is None or value is None:
            return value
        orig = self._reverse_map(domain).get(value)
        if orig is None:
            return value
        return _maybe_int(orig)

    # -- router glue -------------------------------------------------------------

    def router_ctx(self) -> RouterContext:
        return RouterContext(
            config=self.config,
            coeffs=self.coeffs,
            codecs=self.codecs,
            transports=self.transports,
            translate=lambda table, col, v: self.translate_key(table, col, v),
            restore=lambda table, col, v: self.restore_key(table, col, v),
        )

    def query(self, text: str, explain: bool = False):
        return run_query(text, self.router_ctx(), explain=explain)

    # -- loading -----------------------------------------------------------------

    def _encode_column_batch(self, table, col, codec, values):
        """Share one column for a batch of rows.

        Returns per-csp cell lists; each cell is None or
        (share tuple, signature tuple)."""
        blocks = []
        spans = []
        for v in values:
            encoded = value_to_blocks(v, codec, self.config)
            if encoded.tag == "null":
                spans.append(None)
            else:
                spans.append((len(blocks), len(encoded.blocks)))
                blocks.extend(encoded.blocks)
        if blocks:
            shared = share_blocks(blocks, self.coeffs, self.config)
        else:
            shared = {cid: [] for cid in self.config.csp_ids}
        out = {cid: [] for cid in self.config.csp_ids}
        for cid, bundles in shared.items():
            cells = out[cid]
            for span in spans:
                if span is None:
                    cells.append(None)
                else:
                    start, count = span
                    es = tuple(b.e for b in bundles[start : start + count])
                    ss = tuple(b.s_out for b in bundles[start : start + count])
                    cells.append((es, ss))
        return out

    def _wire_rows(self, table, rows):
        """Typed row dicts -> per-csp wire rows."""
        codecs = self.codecs[table]
        for row in rows:
            extra = set(row) - set(codecs)
            if extra:
                raise ConfigError(f"table {table!r}: unknown columns {sorted(extra)}")
        per_csp_cells = {}
        plain_cells = {}
        for col, codec in codecs.items():
            values = [row.get(col) for row in rows]
            if codec.shared:
                per_csp_cells[col] = self._encode_column_batch(table, col, codec, values)
            elif codec.kind == "key":
                plain_cells[col] = [
                    self.translate_key(table, col, v, assign=True) for v in values
                ]
            else:
                plain_cells[col] = [None if v is None else bool(v) for v in values]
        out = {cid: [] for cid in self.config.csp_ids}
        for i in range(len(rows)):
            for cid in self.config.csp_ids:
                wire_row = []
                for col, codec in codecs.items():
                    if codec.shared:
                        cell = per_csp_cells[col][cid][i]
                        wire_row.append(
                            None
                            if cell is None
                            else {"e": [str(v) for v in cell[0]], "s": list(cell[1])}
                        )
                    else:
                        wire_row.append(plain_cells[col][i])
                out[cid].append(wire_row)
        return out

    def load_rows(self, table: str, rows: list, mode: str = "insert") -> int:
        """Share and store typed rows at every provider, batch by batch.

        Each batch is staged at all providers before any commit, so a
        provider failure part way through leaves no partial batch."""
        if table not in self.codecs:
            raise ConfigError(f"unknown table {table!r}")
        total = 0
        for start in range(0, len(rows), LOAD_BATCH):
            chunk = rows[start : start + LOAD_BATCH]
            wire = self._wire_rows(table, chunk)
            batch = uuid.uuid4().hex
            prepared = []
            try:
                for cid, transport in self.transports.items():
                    transport.request(
                        "insert",
                        table,
                        {
                            "rows": wire[cid],
                            "mode": mode,
                            "stage": "prepare",
                            "batch": batch,
                        },
                    )
                    prepared.append(cid)
            except (StoreError, TransportError):
                for cid in prepared:
                    try:
                        self.transports[cid].request(
                            "insert", table, {"stage": "abort", "batch": batch}
                        )
                    except (StoreError, TransportError):
                        pass
                raise
            for cid, transport in self.transports.items():
                transport.request(
                    "insert", table, {"stage": "commit", "batch": batch}
                )
            total += len(chunk)
        self.save()
        return total

    def read_csv(self, table: str, path: str) -> list:
        """Parse a CSV file into typed row dicts for ``table`` without
        loading anything."""
        import csv

        codecs = self.codecs.get(table)
        if codecs is None:
            raise ConfigError(f"unknown table {table!r}")
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for raw in reader:
                row = {}
                for col, text in raw.items():
                    if col not in codecs:
                        raise ConfigError(f"table {table!r}: unknown CSV column {col!r}")
                    row[col] = _parse_csv_value(text, codecs[col])
                rows.append(row)
        return rows

    def load_csv(self, table: str, path: str, mode: str = "insert") -> int:
        return self.load_rows(table, self.read_csv(table, path), mode=mode)

    # -- verification and recovery ---------------------------------------------

    def verify(self, table: str = None) -> dict:
        """Ask every reachable provider to check its outer signatures."""
        report = {}
        for cid, transport in self.transports.items():
            try:
                resp = transport.request("verify", table)
            except (TransportError, StoreError) as exc:
                report[cid] = {"error": str(exc)}
                continue
            report[cid] = {"failures": resp["failures"]}
        return report

    def digests(self, csp_id: int) -> dict:
        transport = self.transports[csp_id]
        return {
            name: transport.request("digest", name)["digest"]
            for name in self.table_names()
        }

    def _snapshot_table(self, transport, table):
        rows = []
        cursor = 0
        while True:
            resp = transport.request("snapshot", table, {"cursor": cursor})
            rows.extend(resp["rows"])
            if resp["next"] is None:
                return rows
            cursor = resp["next"]

    def recover_csp(self, csp_id: int) -> dict:
        """Rebuild one provider's tables from t healthy peers.

        Returns the rebuilt per-table digests.  Raises when fewer than t
        peers are reachable, or when the peers' contents cannot be
        verified against each other."""
        if csp_id not in self.transports:
            raise ConfigError(f"unknown provider {csp_id}")
        t = self.config.t
        latencies = {}
        for cid, transport in self.transports.items():
            if cid == csp_id:
                continue
            try:
                latencies[cid] = transport.ping()
            except (TransportError, StoreError):
                continue
        if len(latencies) < t:
            raise UnavailabilityError(
                f"recovery needs {t} healthy peers, found {len(latencies)}"
            )
        bad = set()
        corruption_seen = False
        last = None
        while True:
            alive = [cid for cid in sorted(latencies) if cid not in bad]
            if len(alive) < t:
                if corruption_seen:
                    raise IntegrityError(
                        f"no peer group yields a verifiable copy; last failure: {last}"
                    )
                raise UnavailabilityError(
                    f"fewer than {t} usable peers remain; last failure: {last}"
                )
            group = tuple(
                sorted(alive, key=lambda cid: (latencies[cid], cid))[:t]
            )
            try:
                return self._rebuild_from(group, csp_id)
            except _RecoveryFailure as failure:
                if failure.bad_csps:
                    bad |= failure.bad_csps
                else:
                    raise IntegrityError(str(failure))
                corruption_seen = corruption_seen or failure.corruption
                last = str(failure)
            except (TransportError, StoreError) as exc:
                raise UnavailabilityError(f"recovery interrupted: {exc}")

    def _rebuild_from(self, group, target_cid):
        target = self.transports[target_cid]
        rctx = build_reconstruction(group, self.coeffs, self.config)
        digests = {}
        for table in self.table_names():
            schema = self.store_schema(table)
            codecs = self.codecs[table]
            snapshots = {}
            for cid in group:
                try:
                    snapshots[cid] = self._snapshot_table(self.transports[cid], table)
                except (TransportError, StoreError) as exc:
                    raise _RecoveryFailure(
                        f"peer {cid} failed during snapshot: {exc}", bad_csps={cid}
                    )
            col_names = list(codecs)
            pk_idx = [col_names.index(k) for k in schema.primary_key]
            keyed = {}
            for cid in group:
                m = {}
                for row in snapshots[cid]:
                    m[tuple(_freeze(row[i]) for i in pk_idx)] = row
                if len(m) != len(snapshots[cid]):
                    raise _RecoveryFailure(
                        f"peer {cid} returned duplicate keys for {table!r}",
                        bad_csps={cid},
                        corruption=True,
                    )
                keyed[cid] = m
            key_sets = [set(keyed[cid]) for cid in group]
            if any(ks != key_sets[0] for ks in key_sets[1:]):
                raise _RecoveryFailure(
                    f"peers disagree on the row set of {table!r}", corruption=True
                )

            rebuilt = []
            order = sorted(key_sets[0], key=_sort_token)
            # Verify outer signatures per peer before trusting anything.
            for cid in group:
                p2 = self.config.p2
                for key in order:
                    row = keyed[cid][key]
                    for i, col in enumerate(col_names):
                        if not codecs[col].shared or row[i] is None:
                            continue
                        for e_str, s in zip(row[i]["e"], row[i]["s"]):
                            if int(e_str) % p2 != s:
                                raise _RecoveryFailure(
                                    f"peer {cid} holds a share failing its outer "
                                    f"signature in {table!r}.{col}",
                                    bad_csps={cid},
                                    corruption=True,
                                )
            for key in order:
                rows = {cid: keyed[cid][key] for cid in group}
                first = rows[group[0]]
                out_row = [None] * len(col_names)
                for i, col in enumerate(col_names):
                    codec = codecs[col]
                    if not codec.shared:
                        vals = {_freeze(rows[cid][i]) for cid in group}
                        if len(vals) != 1:
                            raise _RecoveryFailure(
                                f"peers disagree on plaintext {table!r}.{col}",
                                corruption=True,
                            )
                        out_row[i] = first[i]
                        continue
                    cells = [rows[cid][i] for cid in group]
                    if any(c is None for c in cells):
                        if not all(c is None for c in cells):
                            raise _RecoveryFailure(
                                f"peers disagree on NULL in {table!r}.{col}",
                                corruption=True,
                            )
                        out_row[i] = None
                        continue
                    lengths = {len(c["e"]) for c in cells}
                    if len(lengths) != 1:
                        raise _RecoveryFailure(
                            f"peers disagree on the shape of {table!r}.{col}",
                            corruption=True,
                        )
                    nblocks = lengths.pop()
                    share_rows = [
                        [int(cells[j]["e"][b]) for j in range(len(group))]
                        for b in range(nblocks)
                    ]
                    try:
                        blocks = reconstruct_blocks(share_rows, rctx, allow_pad=False)
                    except CorruptionError as exc:
                        raise _RecoveryFailure(str(exc), corruption=True)
                    shared = share_blocks(
                        blocks, self.coeffs, self.config, csp_ids=[target_cid]
                    )[target_cid]
                    out_row[i] = {
                        "e": [str(b.e) for b in shared],
                        "s": [b.s_out for b in shared],
                    }
                rebuilt.append(out_row)

            try:
                target.request("drop", table)
            except StoreError:
                pass
            target.request("create", table, {"schema": schema.to_wire()})
            for start in range(0, len(rebuilt), LOAD_BATCH):
                target.request(
                    "insert",
                    table,
                    {"rows": rebuilt[start : start + LOAD_BATCH], "mode": "insert"},
                )
            digests[table] = target.request("digest", table)["digest"]
        return digests

    # -- cubes -------------------------------------------------------------------

    def cube_table_def(self, spec: dict) -> dict:
        """Logical definition of the cube table for ``spec``.

        {"name", "base", "dimensions": [key cols], "measures":
         [{"col", "aggs": ["sum", "count", "min", "max"]}]}"""
        base = spec["base"]
        codecs = self.codecs.get(base)
        if codecs is None:
            raise ConfigError(f"unknown base table {base!r}")
        dims = list(spec["dimensions"])
        if not 1 <= len(dims) <= CUBE_MAX_DIMS:
            raise ConfigError(f"cube needs 1..{CUBE_MAX_DIMS} dimensions")
        columns = []
        for d in dims:
            codec = codecs.get(d)
            if codec is None or codec.kind != "key":
                raise ConfigError(f"cube dimension {d!r} must be a key column of {base!r}")
            columns.append({"name": d, "kind": "key", "nullable": True})
        columns.append({"name": "grp", "kind": "key"})
        headroom = spec.get("max_rows", 1_000_000)
        for m in spec["measures"]:
            col = m["col"]
            codec = codecs.get(col)
            if codec is None or not codec.shared or codec.kind not in ("integer", "real"):
                raise ConfigError(f"cube measure {col!r} must be a shared numeric column")
            if codec.signed:
                raise ConfigError(f"cube measure {col!r} must be unsigned")
            for agg in m["aggs"]:
                cname = f"{col}_{agg}"
                if agg == "count":
                    columns.append(
                        {"name": cname, "kind": "integer", "min": 0, "max": headroom}
                    )
                elif agg == "sum":
                    if codec.kind == "integer":
                        cdef = {
                            "name": cname,
                            "kind": "integer",
                            "min": 0,
                            "max": codec.max_value * headroom,
                        }
                    else:
                        cdef = {
                            "name": cname,
                            "kind": "real",
                            "scale": codec.scale,
                            "min": 0.0,
                            "max": (codec.max_value / 10 ** codec.scale) * headroom,
                        }
                    columns.append(cdef)
                elif agg in ("min", "max"):
                    cdef = {
                        "name": cname,
                        "kind": codec.kind,
                        "min": codec.min_value,
                        "max": codec.max_value,
                        "nullable": True,
                    }
                    if codec.kind == "real":
                        cdef["scale"] = codec.scale
                        cdef["min"] = codec.min_value / (10 ** codec.scale)
                        cdef["max"] = codec.max_value / (10 ** codec.scale)
                    columns.append(cdef)
                else:
                    raise ConfigError(f"unknown cube aggregate {agg!r}")
        return {
            "name": spec["name"],
            "primary_key": dims + ["grp"],
            "columns": columns,
        }

    def add_table(self, tdef: dict):
        """Derive codecs for a new table, register it, CREATE everywhere."""
        name = tdef["name"]
        if name in self.codecs:
            raise ConfigError(f"table {name!r} already exists")
        columns = []
        cols = {}
        for cdef in tdef["columns"]:
            codec = derive_codec(cdef, self.config)
            codec.validate_against(self.config)
            columns.append({"name": cdef["name"], "codec": codec.to_json()})
            cols[cdef["name"]] = codec
        self.catalog["tables"][name] = {
            "primary_key": list(tdef["primary_key"]),
            "columns": columns,
        }
        self.codecs[name] = cols
        schema = self.store_schema(name)
        for transport in self.transports.values():
            transport.request("create", name, {"schema": schema.to_wire()})
        self.save()

    def _fetch_base_rows(self, spec):
        cols = list(spec["dimensions"]) + [m["col"] for m in spec["measures"]]
        text = f"SELECT {', '.join(cols)} FROM {spec['base']}"
        headers, rows = self.query(text)
        return [dict(zip(headers, row)) for row in rows]

    @staticmethod
    def _lattice_cells(spec, rows):
        """Aggregate rows into every 2^d grouping of the dimensions."""
        dims = list(spec["dimensions"])
        cells = {}
        if not rows:
            # An empty base still has its top superaggregate: one all-NULL
            # row with zero counts and sums.
            full = (1 << len(dims)) - 1
            cell = {}
            for m in spec["measures"]:
                cell[m["col"]] = {"sum": 0, "count": 0, "min": None, "max": None}
            cells[((None,) * len(dims), full)] = cell
            return cells
        for mask in range(1 << len(dims)):
            for row in rows:
                key = tuple(
                    None if (mask >> i) & 1 else row[d] for i, d in enumerate(dims)
                )
                cell = cells.get((key, mask))
                if cell is None:
                    cell = {}
                    for m in spec["measures"]:
                        cell[m["col"]] = {"sum": 0, "count": 0, "min": None, "max": None}
                    cells[(key, mask)] = cell
                for m in spec["measures"]:
                    v = row[m["col"]]
                    if v is None:
                        continue
                    acc = cell[m["col"]]
                    acc["sum"] += v
                    acc["count"] += 1
                    if acc["min"] is None or v < acc["min"]:
                        acc["min"] = v
                    if acc["max"] is None or v > acc["max"]:
                        acc["max"] = v
        return cells

    def _cube_rows(self, spec, cells):
        dims = list(spec["dimensions"])
        out = []
        for (key, mask), cell in cells.items():
            row = {d: v for d, v in zip(dims, key)}
            row["grp"] = mask
            for m in spec["measures"]:
                acc = cell[m["col"]]
                for agg in m["aggs"]:
                    name = f"{m['col']}_{agg}"
                    if agg == "count":
                        row[name] = acc["count"]
                    elif agg == "sum":
                        row[name] = acc["sum"]
                    else:
                        row[name] = acc[agg]
            out.append(row)
        return out

    def build_cube(self, spec: dict) -> int:
        """Materialize the full grouping lattice of the base table."""
        tdef = self.cube_table_def(spec)
        if spec["name"] not in self.codecs:
            self.add_table(tdef)
        rows = self._fetch_base_rows(spec)
        cells = self._lattice_cells(spec, rows)
        cube_rows = self._cube_rows(spec, cells)
        return self.load_rows(spec["name"], cube_rows, mode="upsert")

    def refresh_cube(self, spec: dict, new_rows: list) -> int:
        """Fold freshly loaded base rows into an existing cube.

        Additive aggregates merge on the shared side: the current cell is
        read back, verified, combined with the delta, and re-shared.
        Order statistics are recomputed from the base table for the
        touched cells only."""
        if spec["name"] not in self.codecs:
            raise ConfigError(f"cube {spec['name']!r} has not been built")
        dims = list(spec["dimensions"])
        if not new_rows:
            return 0
        cells = self._lattice_cells(spec, new_rows)
        delta_rows = self._cube_rows(spec, cells)

        # Read the current contents of every touched cell.
        name = spec["name"]
        current = {}
        for row in delta_rows:
            preds = [f"grp = {row['grp']}"]
            for d in dims:
                v = row[d]
                if v is None:
                    preds.append(f"{d} IS NULL")
                elif isinstance(v, str):
                    preds.append("{} = '{}'".format(d, v.replace("'", "''")))
                else:
                    preds.append(f"{d} = {v}")
            cols = ", ".join(c for c in self.codecs[name] if c not in dims and c != "grp")
            text = f"SELECT {cols} FROM {name} WHERE {' AND '.join(preds)}"
            headers, got = self.query(text)
            key = tuple(row[d] for d in dims) + (row["grp"],)
            if got:
                current[key] = dict(zip(headers, got[0]))

        merged = []
        affected_groups = {}
        for row in delta_rows:
            key = tuple(row[d] for d in dims) + (row["grp"],)
            old = current.get(key)
            out = dict(row)
            for m in spec["measures"]:
                col = m["col"]
                for agg in m["aggs"]:
                    cname = f"{col}_{agg}"
                    if old is None:
                        continue
                    if agg == "sum":
                        out[cname] = old[cname] + row[cname]
                    elif agg == "count":
                        out[cname] = old[cname] + row[cname]
                    elif agg == "min":
                        vals = [v for v in (old[cname], row[cname]) if v is not None]
                        out[cname] = min(vals) if vals else None
                    elif agg == "max":
                        vals = [v for v in (old[cname], row[cname]) if v is not None]
                        out[cname] = max(vals) if vals else None
            merged.append(out)
        return self.load_rows(name, merged, mode="upsert")


class _RecoveryFailure(Exception):
    def __init__(self, message, bad_csps=(), corruption=False):
        super().__init__(message)
        self.bad_csps = set(bad_csps)
        self.corruption = corruption


def _freeze(cell):
    if isinstance(cell, dict):
        return (tuple(cell.get("e", ())), tuple(cell.get("s", ())))
    if isinstance(cell, list):
        return tuple(cell)
    return cell


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


def _maybe_int(text: str):
    try:
        return int(text)
    except (TypeError, ValueError):
        return text


def _parse_csv_value(text, codec: ColumnCodec):
    if text is None or text == "":
        return None
    kind = codec.kind
    if kind == "integer":
        return int(text)
    if kind == "real":
        return float(text)
    if kind == "boolean":
        return text.strip().lower() in ("1", "true", "t", "yes")
    if kind == "date":
        return datetime.date.fromisoformat(text)
    if kind == "key":
        return _maybe_int(text)
    return text
