"""Cube build/refresh and bench-function smoke checks."""

import shutil
import tempfile
from fractions import Fraction

from shardhouse import bench
from shardhouse.warehouse import Warehouse

TABLES = [
    {
        "name": "sales",
        "primary_key": ["sid"],
        "columns": [
            {"name": "sid", "kind": "key"},
            {"name": "shop", "kind": "key"},
            {"name": "item", "kind": "key"},
            {"name": "amount", "kind": "integer", "max": 10_000, "nullable": True},
        ],
    }
]
ROWS = [
    {"sid": 1, "shop": "north", "item": "bolt", "amount": 10},
    {"sid": 2, "shop": "north", "item": "nut", "amount": 25},
    {"sid": 3, "shop": "south", "item": "bolt", "amount": 7},
    {"sid": 4, "shop": "south", "item": "nut", "amount": None},
    {"sid": 5, "shop": "south", "item": "bolt", "amount": 40},
]
CUBE = {
    "name": "sales_cube",
    "base": "sales",
    "dimensions": ["shop", "item"],
    "measures": [{"col": "amount", "aggs": ["sum", "count", "min", "max"]}],
}


def expect_cells(rows):
    """Aggregate the plaintext rows over the full lattice.

    A set bit in the mask means the dimension is aggregated away (NULL).
    """
    cells = {}
    for mask in range(4):
        for r in rows:
            shop = None if mask & 1 else r["shop"]
            item = None if mask & 2 else r["item"]
            key = (mask, shop, item)
            cur = cells.setdefault(key, {"sum": 0, "count": 0, "min": None, "max": None})
            v = r["amount"]
            if v is None:
                continue
            cur["sum"] += v
            cur["count"] += 1
            cur["min"] = v if cur["min"] is None else min(cur["min"], v)
            cur["max"] = v if cur["max"] is None else max(cur["max"], v)
    return cells


def check_cube(wh, plain_rows):
    hdr, got = wh.query(
        "SELECT grp, shop, item, amount_sum, amount_count, amount_min, amount_max "
        "FROM sales_cube"
    )
    want = expect_cells(plain_rows)
    assert len(got) == len(want), (len(got), len(want))
    for grp, shop, item, s, c, lo, hi in got:
        cell = want[(grp, shop, item)]
        assert (s, c, lo, hi) == (
            cell["sum"], cell["count"], cell["min"], cell["max"],
        ), ((grp, shop, item), (s, c, lo, hi), cell)


def cube_smoke():
    base = tempfile.mkdtemp(prefix="smoke4-")
    wh = Warehouse.init_new(base, TABLES, n=4, t=3, p=99_991, seed=5)
    try:
        wh.load_rows("sales", ROWS)
        cells = wh.build_cube(CUBE)
        print(f"cube built: {cells} cells", flush=True)
        check_cube(wh, ROWS)

        delta = [
            {"sid": 6, "shop": "north", "item": "bolt", "amount": 3},
            {"sid": 7, "shop": "east", "item": "washer", "amount": 11},
        ]
        wh.load_rows("sales", delta)
        touched = wh.refresh_cube(CUBE, delta)
        print(f"cube refreshed: {touched} cells touched", flush=True)
        check_cube(wh, ROWS + delta)
        print("cube ok", flush=True)
    finally:
        wh.close()
        shutil.rmtree(base, ignore_errors=True)


def bench_smoke():
    exact, approx = bench.breach_probability(13, 3, 1)
    assert exact == Fraction(1, 13**4), exact
    grid = bench.breach_grid(value_bits=32, t_values=range(2, 10))
    assert len(grid) == sum(t - 1 for t in range(2, 10))
    for row in grid:
        assert 0 < row["float"] < 1e-9, row
    print("breach grid ok", flush=True)

    det = bench.detection_experiment(p=99_991, trials=2_000, seed=1, mode="combined")
    assert det["missed"] == 0, det
    weak = bench.detection_experiment(p=13, trials=20_000, seed=1, mode="inner-only")
    assert 0.02 < weak["miss_rate"] < 0.2, weak
    print(f"detection ok (weak miss rate {weak['miss_rate']:.3f} ~ 1/13)", flush=True)

    scaling = bench.scaling_bench(blocks=5_000, repeats=3)
    shares = [item["median_s"] for item in scaling["share"]]
    print("share medians:", [f"{v*1e3:.1f}ms" for v in shares], flush=True)
    kern = bench.kernel_bench(blocks=5_000, repeats=3)
    if kern["c_available"]:
        print(
            f"kernel speedups: share {kern['timings']['share_speedup']:.1f}x, "
            f"reconstruct {kern['timings']['reconstruct_speedup']:.1f}x",
            flush=True,
        )
    print("bench ok", flush=True)


def volume_smoke():
    base = tempfile.mkdtemp(prefix="smoke4v-")
    wh = Warehouse.init_new(base, TABLES, n=4, t=3, p=251, seed=5)
    try:
        wh.load_rows("sales", ROWS)
        report = bench.measure_volume(wh, "sales")
        assert report["stored_int_ratio"] == Fraction(4, 2), report["stored_int_ratio"]
        for cid, item in report["per_csp"].items():
            assert item["modeled_ratio"] is not None
        print(
            "volume ok: stored ratio",
            report["stored_int_ratio"],
            "modeled",
            {cid: round(v["modeled_ratio"], 3) for cid, v in report["per_csp"].items()},
            flush=True,
        )
    finally:
        wh.close()
        shutil.rmtree(base, ignore_errors=True)


if __name__ == "__main__":
    cube_smoke()
    bench_smoke()
    volume_smoke()
    print("SMOKE4 PASSED")
