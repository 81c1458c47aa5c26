"""Dry run for the acceptance criterion 5 pipeline at full size."""

import sys
import time

sys.path.insert(0, "tests")

import plainsql
from shardhouse import ssb
from shardhouse.warehouse import Warehouse

t0 = time.time()
data = ssb.generate(seed=11, lineorders=10_000, customers=300, suppliers=100, parts=400)
print("gen %.1fs" % (time.time() - t0), {k: len(v) for k, v in data.items()})

t0 = time.time()
wh = Warehouse.init_new("/tmp/ssb_acc/wh", ssb.table_defs(), n=4, t=3, p=251, p2=67, seed=0)
for name, rows in data.items():
    wh.load_rows(name, rows)
print("load %.1fs" % (time.time() - t0))


def sort_token(row):
    out = []
    for v in row:
        if v is None:
            out.append((0, ""))
        elif isinstance(v, bool):
            out.append((1, str(v)))
        elif isinstance(v, (int, float)):
            out.append((2, float(v), ""))
        else:
            out.append((3, 0.0, str(v)))
    return out


def check(label, text):
    t0 = time.time()
    got_h, got = wh.query(text)
    want_h, want = plainsql.run(text, data)
    assert got_h == want_h, (label, got_h, want_h)
    assert sorted(got, key=sort_token) == sorted(want, key=sort_token), (
        label,
        got[:3],
        want[:3],
        len(got),
        len(want),
    )
    print("  %-12s %4d rows  %5.2fs" % (label, len(got), time.time() - t0))


t_all = time.time()
for label, text in ssb.queries() + ssb.aggregate_queries():
    check(label, text)
print("queries total %.1fs" % (time.time() - t_all))
wh.close()
