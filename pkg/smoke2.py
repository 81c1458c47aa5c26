"""Corruption, TCP transport, and CLI smoke checks."""

import json
import os
import shutil
import subprocess
import sys
import tempfile

from shardhouse.errors import IntegrityError
from shardhouse.protocol import TcpStoreServer, TcpTransport
from shardhouse.store import CspStore
from shardhouse.warehouse import Warehouse

TABLES = [
    {
        "name": "item",
        "primary_key": ["k"],
        "columns": [
            {"name": "k", "kind": "key"},
            {"name": "v", "kind": "integer", "max": 100_000},
        ],
    }
]
ROWS = [{"k": i, "v": i * 7} for i in range(1, 41)]


def corrupt_with_spare():
    base = tempfile.mkdtemp(prefix="smoke2a-")
    wh = Warehouse.init_new(base, TABLES, n=4, t=3, p=99_991, seed=1)
    try:
        wh.load_rows("item", ROWS)
        # Outer-consistent forgery at provider 1: only reconstruction
        # catches it, and a clean group (2,3,4) exists.
        resp = wh.transports[1].request(
            "corrupt", "item", {"pattern": "sig-replace", "rate": 1.0, "seed": 3}
        )
        assert resp["count"] > 0
        hdr, rows = wh.query("SELECT k, v FROM item ORDER BY k")
        assert rows == [[r["k"], r["v"]] for r in ROWS], rows[:3]
        print("spare-group failover around corruption ok", flush=True)

        # The verify scan must NOT flag sig-replace (outer is consistent),
        # but reconstruction-based recovery of provider 1 must heal it.
        report = wh.verify("item")
        assert all(v.get("failures") == [] for v in report.values()), report
        wh.recover_csp(1)
        hdr, rows = wh.query("SELECT SUM(v) FROM item")
        assert rows == [[sum(r["v"] for r in ROWS)]], rows
        # After healing, provider 1 agrees with a fresh re-share of the rows.
        resp = wh.transports[1].request(
            "select", "item", {"columns": ["k", "v"], "where": None}
        )
        assert len(resp["rows"]) == len(ROWS)
        print("recovery healed the forged provider ok", flush=True)
    finally:
        wh.close()
        shutil.rmtree(base, ignore_errors=True)


def corrupt_no_spare():
    base = tempfile.mkdtemp(prefix="smoke2b-")
    wh = Warehouse.init_new(base, TABLES, n=3, t=3, p=99_991, seed=1)
    try:
        wh.load_rows("item", ROWS)
        wh.transports[2].request(
            "corrupt", "item", {"pattern": "sig-replace", "rate": 1.0, "seed": 4}
        )
        try:
            wh.query("SELECT k, v FROM item")
        except IntegrityError as exc:
            print("integrity error with no spare group ok:", str(exc)[:70], flush=True)
        else:
            raise AssertionError("expected IntegrityError")
        # random-replace leaves outer signatures stale; the verify scan sees it.
        wh.transports[2].request(
            "corrupt", "item", {"pattern": "random-replace", "rate": 0.5, "seed": 5}
        )
        report = wh.verify("item")
        assert report[2]["failures"], report
        print("outer-signature scan flags stale signatures ok", flush=True)
    finally:
        wh.close()
        shutil.rmtree(base, ignore_errors=True)


def tcp_roundtrip():
    base = tempfile.mkdtemp(prefix="smoke2c-")
    try:
        stores = {}
        servers = {}
        csps = []
        for cid in (1, 2, 3):
            d = os.path.join(base, f"csp{cid}")
            stores[cid] = CspStore(cid, data_dir=d)
            servers[cid] = TcpStoreServer(stores[cid], "127.0.0.1", 0)
            servers[cid].serve_background()
            host, port = servers[cid].address
            csps.append({"id": cid, "kind": "tcp", "host": host, "port": port})
        wh = Warehouse.init_new(
            os.path.join(base, "wh"), TABLES, n=3, t=3, p=99_991, seed=2, csps=csps
        )
        wh.load_rows("item", ROWS[:10])
        hdr, rows = wh.query("SELECT k, v FROM item WHERE v = 21")
        assert rows == [[3, 21]], rows
        hdr, rows = wh.query("SELECT SUM(v), COUNT(*) FROM item")
        assert rows == [[sum(r["v"] for r in ROWS[:10]), 10]], rows
        wh.close()

        # Reopen over TCP and query again.
        wh = Warehouse.open(os.path.join(base, "wh"))
        hdr, rows = wh.query("SELECT k FROM item WHERE v BETWEEN 14 AND 21 ORDER BY k")
        assert rows == [[2], [3]], rows
        wh.close()
        for server in servers.values():
            server.shutdown()
        print("tcp transport ok", flush=True)
    finally:
        shutil.rmtree(base, ignore_errors=True)


def cli_surface():
    base = tempfile.mkdtemp(prefix="smoke2d-")
    try:
        tables_path = os.path.join(base, "tables.json")
        with open(tables_path, "w") as fh:
            json.dump(TABLES, fh)
        csv_path = os.path.join(base, "item.csv")
        with open(csv_path, "w") as fh:
            fh.write("k,v\n")
            for r in ROWS[:12]:
                fh.write(f"{r['k']},{r['v']}\n")

        def run(*argv):
            proc = subprocess.run(
                [sys.executable, "-m", "shardhouse.cli", *argv],
                capture_output=True,
                text=True,
            )
            if proc.returncode != 0:
                raise AssertionError(f"{argv}: {proc.stdout}\n{proc.stderr}")
            return proc.stdout

        whdir = os.path.join(base, "wh")
        out = run(
            "init", "--dir", whdir, "--tables", tables_path,
            "--n", "4", "--t", "3", "--p", "99991",
        )
        assert "initialized" in out, out
        out = run("load", "--dir", whdir, "--table", "item", "--csv", csv_path)
        assert "12 rows" in out, out
        out = run("query", "--dir", whdir, "SELECT k, v FROM item WHERE k = 5")
        assert "35" in out, out
        out = run(
            "query", "--dir", whdir, "--format", "csv",
            "SELECT SUM(v) AS total FROM item",
        )
        assert out.splitlines()[0] == "total", out
        assert out.splitlines()[1] == str(sum(r["v"] for r in ROWS[:12])), out
        out = run("query", "--dir", whdir, "--explain", "SELECT k FROM item WHERE v = 35")
        assert "mode: rows" in out, out
        out = run("verify", "--dir", whdir)
        assert "passed" in out, out
        out = run(
            "bench", "inject", "--dir", whdir, "--csp", "2", "--table", "item",
            "--rate", "1.0", "--pattern", "random-replace",
        )
        assert "corrupted" in out, out
        proc = subprocess.run(
            [sys.executable, "-m", "shardhouse.cli", "verify", "--dir", whdir],
            capture_output=True, text=True,
        )
        assert proc.returncode == 1, proc.stdout
        out = run("recover", "--dir", whdir, "--csp", "2")
        assert "recovered" in out, out
        out = run("verify", "--dir", whdir)
        assert "passed" in out, out
        out = run("bench", "prob", "--p", "99991", "--t", "3", "--x", "1")
        assert "1e" in out or "e-" in out, out
        print("cli surface ok", flush=True)
    finally:
        shutil.rmtree(base, ignore_errors=True)


if __name__ == "__main__":
    corrupt_with_spare()
    corrupt_no_spare()
    tcp_roundtrip()
    cli_surface()
    print("SMOKE2 PASSED")
