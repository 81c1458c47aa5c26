"""Command line front end.

Verbs: init, load, query, verify, recover, cube build/refresh, serve,
and the bench family (gen, inject, volume, prob, run).
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from fractions import Fraction

from . import bench as bench_mod
from . import ssb
from .errors import ShardhouseError
from .store import CspStore
from .warehouse import Warehouse, data_root


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def _json_default(obj):
    if isinstance(obj, Fraction):
        return {"num": obj.numerator, "den": obj.denominator, "float": float(obj)}
    if isinstance(obj, (datetime.date, datetime.datetime)):
        return obj.isoformat()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _dump(report, path=None):
    text = json.dumps(report, indent=1, default=_json_default, sort_keys=True)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        print(f"report written to {path}")
    else:
        print(text)


def _cell_text(v) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:g}"
    if isinstance(v, (datetime.date, datetime.datetime)):
        return v.isoformat()
    return str(v)


def _print_table(headers, rows, out=None):
    out = out if out is not None else sys.stdout
    cells = [[_cell_text(v) for v in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in cells:
        for i, v in enumerate(row):
            widths[i] = max(widths[i], len(v))
    line = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    out.write(line.rstrip() + "\n")
    out.write("  ".join("-" * w for w in widths) + "\n")
    for row in cells:
        out.write("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() + "\n")
    out.write(f"({len(rows)} row{'s' if len(rows) != 1 else ''})\n")


def _print_csv(headers, rows, out=None):
    import csv

    writer = csv.writer(out if out is not None else sys.stdout)
    writer.writerow(headers)
    for row in rows:
        writer.writerow(["" if v is None else _cell_text(v) for v in row])


# ---------------------------------------------------------------------------
# Verbs


def cmd_init(args) -> int:
    with open(args.tables, encoding="utf-8") as fh:
        tables = json.load(fh)
    csps = None
    if args.csp:
        csps = []
        for spec in args.csp:
            cid, _, addr = spec.partition("=")
            host, _, port = addr.rpartition(":")
            csps.append({"id": int(cid), "kind": "tcp", "host": host, "port": int(port)})
    wh = Warehouse.init_new(
        args.dir,
        tables,
        n=args.n,
        t=args.t,
        p=args.p,
        p2=args.p2,
        seed=args.seed,
        csps=csps,
        inner_hash=args.inner_hash,
    )
    try:
        names = ", ".join(sorted(wh.table_names()))
        print(
            f"initialized warehouse in {args.dir}: n={args.n} t={args.t} "
            f"p={args.p} p2={args.p2}; tables: {names}"
        )
    finally:
        wh.close()
    return 0


def cmd_load(args) -> int:
    wh = Warehouse.open(args.dir)
    try:
        count = wh.load_csv(args.table, args.csv, mode=args.mode)
        print(f"loaded {count} rows into {args.table}")
    finally:
        wh.close()
    return 0


def cmd_query(args) -> int:
    if args.file:
        with open(args.file, encoding="utf-8") as fh:
            text = fh.read()
    elif args.sql:
        text = args.sql
    else:
        text = sys.stdin.read()
    wh = Warehouse.open(args.dir)
    try:
        if args.explain:
            print(wh.query(text, explain=True))
            return 0
        headers, rows = wh.query(text)
        if args.format == "csv":
            _print_csv(headers, rows)
        elif args.format == "json":
            payload = [dict(zip(headers, row)) for row in rows]
            print(json.dumps(payload, indent=1, default=_json_default))
        else:
            _print_table(headers, rows)
    finally:
        wh.close()
    return 0


def cmd_verify(args) -> int:
    wh = Warehouse.open(args.dir)
    try:
        report = wh.verify(args.table)
    finally:
        wh.close()
    bad = 0
    unreachable = 0
    for cid in sorted(report):
        entry = report[cid]
        if "error" in entry:
            unreachable += 1
            print(f"provider {cid}: unreachable ({entry['error']})")
            continue
        for item in entry["failures"]:
            bad += 1
            print(
                f"provider {cid}: table={item['table']} key={item['key']} "
                f"col={item['col']} block={item['block']}"
            )
    if bad or unreachable:
        print(f"verification FAILED: {bad} bad blocks, {unreachable} providers unreachable")
        return 1
    print("verification passed: every stored share matches its signature")
    return 0


def cmd_recover(args) -> int:
    wh = Warehouse.open(args.dir)
    try:
        digests = wh.recover_csp(args.csp)
    finally:
        wh.close()
    for table in sorted(digests):
        print(f"rebuilt {table}: digest {digests[table]}")
    print(f"provider {args.csp} recovered")
    return 0


def cmd_cube(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        spec = json.load(fh)
    wh = Warehouse.open(args.dir)
    try:
        if args.cube_cmd == "build":
            count = wh.build_cube(spec)
            print(f"cube {spec['name']} built: {count} cells")
        else:
            rows = wh.read_csv(spec["base"], args.rows)
            if not args.skip_load:
                wh.load_rows(spec["base"], rows, mode="insert")
            count = wh.refresh_cube(spec, rows)
            print(f"cube {spec['name']} refreshed: {count} cells touched")
    finally:
        wh.close()
    return 0


def cmd_serve(args) -> int:
    from .protocol import TcpStoreServer

    host, _, port = args.listen.rpartition(":")
    root = args.data_dir or os.environ.get("SHARDHOUSE_DATA_DIR")
    if not root:
        return _fail("--data-dir or SHARDHOUSE_DATA_DIR required")
    store = CspStore(args.csp, data_dir=os.path.join(root, f"csp{args.csp}"))
    server = TcpStoreServer(store, host or "127.0.0.1", int(port))
    bound = server.address
    print(f"provider {args.csp} serving on {bound[0]}:{bound[1]} (data: {root})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
    return 0


# ---------------------------------------------------------------------------
# bench verbs


def cmd_bench_gen(args) -> int:
    data = ssb.generate(
        seed=args.seed,
        lineorders=args.lineorders,
        customers=args.customers,
        suppliers=args.suppliers,
        parts=args.parts,
    )
    ssb.write_dataset(args.out, data)
    counts = ", ".join(f"{k}={len(v)}" for k, v in sorted(data.items()))
    print(f"dataset written to {args.out}: {counts}")
    return 0


def cmd_bench_inject(args) -> int:
    wh = Warehouse.open(args.dir)
    try:
        transport = wh.transports.get(args.csp)
        if transport is None:
            return _fail(f"unknown provider {args.csp}")
        resp = transport.request(
            "corrupt",
            args.table,
            {"rate": args.rate, "pattern": args.pattern, "seed": args.seed},
        )
    finally:
        wh.close()
    print(
        f"provider {args.csp}: corrupted {resp['count']} blocks "
        f"in {resp['rows']} rows of {args.table} (pattern {args.pattern})"
    )
    return 0


def cmd_bench_volume(args) -> int:
    plain_bytes = os.path.getsize(args.plain) if args.plain else None
    wh = Warehouse.open(args.dir)
    try:
        report = bench_mod.measure_volume(wh, args.table, plain_bytes=plain_bytes)
    finally:
        wh.close()
    ratio = report["stored_int_ratio"]
    print(
        f"table {args.table}: {report['total_share_ints']} stored share ints "
        f"for {report['original_digits']} original digits "
        f"= {ratio.numerator}/{ratio.denominator} "
        f"(n/(t-1) = {report['n']}/{report['t'] - 1})"
    )
    for cid in sorted(report["per_csp"]):
        item = report["per_csp"][cid]
        r = item["modeled_ratio"]
        print(
            f"  provider {cid}: {item['share_ints']} shares, modeled "
            f"{item['modeled_share_bits']} bits over {item['modeled_orig_bits']} "
            f"original bits = {r:.3f}" if r else f"  provider {cid}: empty"
        )
    if report["raw_disk"]:
        for cid in sorted(report["raw_disk"]):
            item = report["raw_disk"][cid]
            print(
                f"  provider {cid} on disk: {item['bytes']} bytes "
                f"({item['ratio']:.2f}x the {report['plain_bytes']}-byte CSV)"
            )
    if args.out:
        _dump(report, args.out)
    return 0


def cmd_bench_prob(args) -> int:
    if args.p:
        exact, approx = bench_mod.breach_probability(args.p, args.t, args.x)
        print(
            f"p={args.p} t={args.t} x={args.x}: breach probability "
            f"1/{exact.denominator} = {approx:.3e}"
        )
        if args.out:
            _dump({"p": args.p, "t": args.t, "x": args.x, "exact": exact}, args.out)
        return 0
    rows = bench_mod.breach_grid(value_bits=args.bits)
    print(f"{'t':>3} {'x':>3} {'p':>12} probability")
    for row in rows:
        print(f"{row['t']:>3} {row['x']:>3} {row['p']:>12} {row['float']:.3e}")
    if args.out:
        _dump(rows, args.out)
    return 0


def cmd_bench_run(args) -> int:
    scale = 10 if args.quick else 1
    report = {"seed": args.seed, "quick": args.quick}

    print("error detection (combined checks, forged share with consistent outer signature)")
    det = bench_mod.detection_experiment(
        p=99_991, trials=100_000 // scale, seed=args.seed, mode="combined"
    )
    report["detection_combined"] = det
    print(
        f"  p={det['p']}: {det['detected']}/{det['trials']} detected "
        f"({100 * (1 - det['miss_rate']):.4f}%)"
    )

    print("error detection (signature congruence alone)")
    sweep = bench_mod.detection_sweep(base_trials=100_000 // scale, seed=args.seed)
    report["detection_inner_only"] = sweep
    for item in sweep:
        print(
            f"  p={item['p']:>6}: missed {item['missed']}/{item['trials']} "
            f"(rate {item['miss_rate']:.2e}, 1/p = {1 / item['p']:.2e})"
        )

    print("scaling (t=3, fleet sizes 3..6)")
    scaling = bench_mod.scaling_bench(
        blocks=60_000 // scale, seed=args.seed, repeats=3 if args.quick else 5
    )
    report["scaling"] = scaling
    for item in scaling["share"]:
        print(
            f"  share       n={item['n']}: {item['median_s'] * 1e3:8.2f} ms "
            f"({item['blocks_per_s']:,.0f} blocks/s)"
        )
    for item in scaling["reconstruct"]:
        print(
            f"  reconstruct n={item['n']}: {item['median_s'] * 1e3:8.2f} ms "
            f"({item['blocks_per_s']:,.0f} blocks/s)"
        )

    print("kernel backends")
    kern = bench_mod.kernel_bench(
        blocks=40_000 // scale, seed=args.seed, repeats=3 if args.quick else 5
    )
    report["kernels"] = kern
    timings = kern["timings"]
    if kern["c_available"]:
        print(
            f"  share:       python {timings['share_python_s'] * 1e3:8.2f} ms, "
            f"c {timings['share_c_s'] * 1e3:8.2f} ms "
            f"({timings['share_speedup']:.1f}x)"
        )
        print(
            f"  reconstruct: python {timings['reconstruct_python_s'] * 1e3:8.2f} ms, "
            f"c {timings['reconstruct_c_s'] * 1e3:8.2f} ms "
            f"({timings['reconstruct_speedup']:.1f}x)"
        )
    else:
        print("  compiled kernels unavailable; python path only")
        print(f"  share:       python {timings['share_python_s'] * 1e3:8.2f} ms")
        print(f"  reconstruct: python {timings['reconstruct_python_s'] * 1e3:8.2f} ms")

    if args.out:
        _dump(report, args.out)
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shardhouse",
        description="Threshold-shared relational warehouse over untrusted providers.",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("init", help="create a warehouse catalog and provider tables")
    p.add_argument("--dir", required=True, help="warehouse directory")
    p.add_argument("--tables", required=True, help="logical table definitions (JSON)")
    p.add_argument("--n", type=int, required=True, help="number of providers")
    p.add_argument("--t", type=int, required=True, help="reconstruction threshold")
    p.add_argument("--p", type=int, required=True, help="digit base (prime)")
    p.add_argument("--p2", type=int, default=67, help="outer signature modulus")
    p.add_argument("--seed", type=int, default=0, help="coefficient generator seed")
    p.add_argument("--inner-hash", default="digit-sum", help="inner signature scheme")
    p.add_argument(
        "--csp",
        action="append",
        metavar="ID=HOST:PORT",
        help="remote provider address (repeatable; default: local stores)",
    )
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("load", help="share a CSV file into one table")
    p.add_argument("--dir", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--mode", choices=("insert", "upsert"), default="insert")
    p.set_defaults(fn=cmd_load)

    p = sub.add_parser("query", help="run a query against the shared warehouse")
    p.add_argument("--dir", required=True)
    p.add_argument("sql", nargs="?", help="query text (or use --file / stdin)")
    p.add_argument("--file", help="read the query from a file")
    p.add_argument("--explain", action="store_true", help="print the plan, do not run")
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("verify", help="check every stored share against its signature")
    p.add_argument("--dir", required=True)
    p.add_argument("--table", default=None)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("recover", help="rebuild one provider from t healthy peers")
    p.add_argument("--dir", required=True)
    p.add_argument("--csp", type=int, required=True)
    p.set_defaults(fn=cmd_recover)

    p = sub.add_parser("cube", help="materialized aggregation lattice")
    cube_sub = p.add_subparsers(dest="cube_cmd", required=True)
    for name, help_text in (
        ("build", "aggregate the base table and share the cube"),
        ("refresh", "fold delta rows into an existing cube"),
    ):
        cp = cube_sub.add_parser(name, help=help_text)
        cp.add_argument("--dir", required=True)
        cp.add_argument("--spec", required=True, help="cube definition (JSON)")
        if name == "refresh":
            cp.add_argument("--rows", required=True, help="delta rows (CSV)")
            cp.add_argument(
                "--skip-load",
                action="store_true",
                help="delta rows are already loaded into the base table",
            )
        cp.set_defaults(fn=cmd_cube)

    p = sub.add_parser("serve", help="run one provider store over TCP")
    p.add_argument("--csp", type=int, required=True)
    p.add_argument("--listen", required=True, metavar="HOST:PORT")
    p.add_argument("--data-dir", help="storage root (or SHARDHOUSE_DATA_DIR)")
    p.set_defaults(fn=cmd_serve)

    p = sub.add_parser("bench", help="experiments and measurements")
    bench_sub = p.add_subparsers(dest="bench_cmd", required=True)

    bp = bench_sub.add_parser("gen", help="generate the star-schema sample dataset")
    bp.add_argument("--out", required=True)
    bp.add_argument("--seed", type=int, default=7)
    bp.add_argument("--lineorders", type=int, default=10_000)
    bp.add_argument("--customers", type=int, default=300)
    bp.add_argument("--suppliers", type=int, default=100)
    bp.add_argument("--parts", type=int, default=400)
    bp.set_defaults(fn=cmd_bench_gen)

    bp = bench_sub.add_parser("inject", help="corrupt stored shares at one provider")
    bp.add_argument("--dir", required=True)
    bp.add_argument("--csp", type=int, required=True)
    bp.add_argument("--table", required=True)
    bp.add_argument("--rate", type=float, default=0.01)
    bp.add_argument(
        "--pattern",
        choices=("random-replace", "add-delta", "sig-replace"),
        default="random-replace",
    )
    bp.add_argument("--seed", type=int, default=0)
    bp.set_defaults(fn=cmd_bench_inject)

    bp = bench_sub.add_parser("volume", help="storage overhead of one table")
    bp.add_argument("--dir", required=True)
    bp.add_argument("--table", required=True)
    bp.add_argument("--plain", help="plaintext CSV for the on-disk comparison")
    bp.add_argument("--out", help="write the JSON report here")
    bp.set_defaults(fn=cmd_bench_volume)

    bp = bench_sub.add_parser("prob", help="breach probability table")
    bp.add_argument("--bits", type=int, default=32, help="value width for the grid")
    bp.add_argument("--p", type=int, help="evaluate one point instead of the grid")
    bp.add_argument("--t", type=int, default=3)
    bp.add_argument("--x", type=int, default=1)
    bp.add_argument("--out")
    bp.set_defaults(fn=cmd_bench_prob)

    bp = bench_sub.add_parser("run", help="detection, scaling, and kernel benchmarks")
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--quick", action="store_true", help="1/10 of the trial counts")
    bp.add_argument("--out", help="write the JSON report here")
    bp.set_defaults(fn=cmd_bench_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ShardhouseError as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
