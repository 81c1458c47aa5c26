"""End-to-end smoke run against the worked-example configuration."""

import shutil
import tempfile

from shardhouse.errors import UnavailabilityError
from shardhouse.warehouse import Warehouse

MATRIX = [[1, 0, 2], [3, 1, 0], [2, 1, 1], [0, 2, 1]]
TABLES = [
    {
        "name": "product",
        "primary_key": ["pid"],
        "columns": [
            {"name": "pid", "kind": "key"},
            {"name": "pname", "kind": "string", "max_len": 8},
            {"name": "colour", "kind": "string", "max_len": 8},
            {"name": "price", "kind": "integer", "max": 168, "nullable": True},
        ],
    }
]
ROWS = [
    {"pid": 1, "pname": "Shirt", "colour": "Red", "price": 75},
    {"pid": 2, "pname": "Shoe", "colour": "Red", "price": 80},
    {"pid": 3, "pname": "Ring", "colour": "Red", "price": None},
]

# Frozen share/sig tables for the three stored strings and prices.
EXPECTED = {
    1: {  # csp 1, row f1 = (1,0,2)
        "Shirt": ([29, 18, 21, 22, 28], [1, 4, 0, 1, 0]),
        "75": ([16], [2]),
        "80": ([20], [6]),
    },
    2: {"75": ([43], [1])},
    3: {"75": ([33], [5]), "80": ([24], [3])},
}


def main():
    base = tempfile.mkdtemp(prefix="smoke-")
    wh = Warehouse.init_new(
        base, TABLES, n=4, t=3, p=13, p2=7, seed=0, coefficients=MATRIX
    )
    try:
        wh.load_rows("product", ROWS)
        print("loaded", flush=True)

        # Stored shares at csp1 for the Shirt row.
        snap = {}
        for cid in (1, 2, 3):
            snap[cid] = wh._snapshot_table(wh.transports[cid], "product")
        cols = list(wh.codecs["product"])
        print("columns:", cols)
        i_name = cols.index("pname")
        i_price = cols.index("price")

        shirt1 = snap[1][0]
        got = ([int(e) for e in shirt1[i_name]["e"]], shirt1[i_name]["s"])
        assert got == EXPECTED[1]["Shirt"], f"csp1 Shirt {got}"
        got_price = ([int(e) for e in shirt1[i_price]["e"]], shirt1[i_price]["s"])
        assert got_price == EXPECTED[1]["75"], f"csp1 price75 {got_price}"
        shoe1 = snap[1][1]
        got80 = ([int(e) for e in shoe1[i_price]["e"]], shoe1[i_price]["s"])
        assert got80 == EXPECTED[1]["80"], f"csp1 price80 {got80}"
        assert snap[1][2][i_price] is None, "NULL must stay NULL"
        p2 = snap[2][0][i_price]
        assert ([int(e) for e in p2["e"]], p2["s"]) == EXPECTED[2]["75"]
        p3 = snap[3][0][i_price]
        assert ([int(e) for e in p3["e"]], p3["s"]) == EXPECTED[3]["75"]
        p3b = snap[3][1][i_price]
        assert ([int(e) for e in p3b["e"]], p3b["s"]) == EXPECTED[3]["80"]
        print("stored share tables match the worked example", flush=True)

        # Plain select with equality pushdown on a shared string.
        hdr, rows = wh.query("SELECT pid, pname, price FROM product WHERE colour = 'Red'")
        print("rows query:", hdr, rows, flush=True)
        assert rows == [[1, "Shirt", 75], [2, "Shoe", 80], [3, "Ring", None]], rows

        hdr, rows = wh.query("SELECT pid FROM product WHERE price = 75")
        assert rows == [[1]], rows
        print("share-equality pushdown ok", flush=True)

        # Range rewrite.
        hdr, rows = wh.query("SELECT pid FROM product WHERE price BETWEEN 75 AND 77")
        assert rows == [[1]], rows

        # Aggregate pushdown: SUM over shares, expect 155 from two non-NULL rows.
        print(wh.query("SELECT SUM(price), COUNT(*) FROM product", explain=True), flush=True)
        hdr, rows = wh.query("SELECT SUM(price), COUNT(*) FROM product")
        print("aggregate:", hdr, rows, flush=True)
        assert rows == [[155, 3]], rows

        hdr, rows = wh.query(
            "SELECT colour, SUM(price), COUNT(price) FROM product GROUP BY colour"
        )
        assert rows == [["Red", 155, 2]], rows
        print("aggregate pushdown ok", flush=True)

        # ORDER BY / MIN / MAX client side.
        hdr, rows = wh.query("SELECT pid FROM product ORDER BY price DESC")
        assert [r[0] for r in rows] == [2, 1, 3], rows
        hdr, rows = wh.query("SELECT MIN(price), MAX(price), AVG(price) FROM product")
        assert rows == [[75, 80, 77.5]], rows

        # Failover: kill one provider, same answers.
        wh.transports[2].kill()
        hdr, rows = wh.query("SELECT pid, price FROM product WHERE price = 75")
        assert rows == [[1, 75]], rows
        hdr, rows = wh.query("SELECT SUM(price) FROM product")
        assert rows == [[155]], rows
        print("failover ok", flush=True)

        # Verify scan: dead provider reports an error, live ones are clean.
        report = wh.verify()
        assert "error" in report[2], report
        assert all(
            cid == 2 or report[cid]["failures"] == [] for cid in report
        ), report
        wh.transports[2].revive()

        # Recovery: wipe csp2's table, rebuild from peers, digests must match.
        before = wh.digests(2)
        wh.transports[2].request("drop", "product", {})
        rebuilt = wh.recover_csp(2)
        after = wh.digests(2)
        assert rebuilt == after == before, (before, rebuilt, after)
        print("recovery digest-identical ok", flush=True)

        # Two healthy providers is not enough.
        wh.transports[1].kill()
        wh.transports[2].kill()
        try:
            wh.query("SELECT pid FROM product WHERE price = 75")
        except UnavailabilityError as exc:
            print("unavailability raised as expected:", exc, flush=True)
        else:
            raise AssertionError("expected UnavailabilityError")
        wh.transports[1].revive()
        wh.transports[2].revive()

        # Reopen from disk and query again.
        wh.close()
        wh = Warehouse.open(base)
        hdr, rows = wh.query("SELECT pid FROM product WHERE price = 80")
        assert rows == [[2]], rows
        print("reopen ok", flush=True)
        print("SMOKE PASSED")
    finally:
        wh.close()
        shutil.rmtree(base, ignore_errors=True)


if __name__ == "__main__":
    main()
