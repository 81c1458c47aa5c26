"""Star-schema workload smoke: shared warehouse versus plaintext oracle."""

import shutil
import sys
import tempfile
import time

sys.path.insert(0, "tests")
import plainsql

from shardhouse import ssb
from shardhouse.warehouse import Warehouse


def canon(rows):
    out = []
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, float):
                v = round(v, 6)
            cells.append(v)
        out.append(tuple(cells))
    return out


def main():
    data = ssb.generate(seed=7, lineorders=2_000, customers=120, suppliers=40, parts=150)
    defs = ssb.table_defs()
    base = tempfile.mkdtemp(prefix="smoke3-")
    t0 = time.perf_counter()
    wh = Warehouse.init_new(base, defs, n=4, t=3, p=251, seed=11)
    try:
        for tdef in defs:
            name = tdef["name"]
            count = wh.load_rows(name, data[name])
            print(f"loaded {name}: {count} rows", flush=True)
        print(f"load time {time.perf_counter() - t0:.1f}s", flush=True)

        checked = 0
        for name, text in ssb.queries() + ssb.aggregate_queries():
            t1 = time.perf_counter()
            hdr, got = wh.query(text)
            dt = time.perf_counter() - t1
            ehdr, want = plainsql.run(text, data)
            q = __import__("shardhouse.sql", fromlist=["parse"]).parse(text)
            g, w = canon(got), canon(want)
            if not q.order_by:
                g, w = sorted(g, key=repr), sorted(w, key=repr)
            assert hdr == ehdr, (name, hdr, ehdr)
            assert g == w, (name, g[:4], w[:4], len(g), len(w))
            print(f"{name}: {len(got)} rows in {dt:.2f}s ok", flush=True)
            checked += 1
        print(f"total {time.perf_counter() - t0:.1f}s for load + {checked} queries")
        print("SMOKE3 PASSED")
    finally:
        wh.close()
        shutil.rmtree(base, ignore_errors=True)


if __name__ == "__main__":
    main()
