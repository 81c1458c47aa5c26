"""A miniature star-schema retail dataset and its query suite.

One fact table (lineorder) and four dimensions (date, customer,
supplier, part) with realistic hierarchies: region > nation > city,
manufacturer > category > brand.  Sizes are tuned so a full load and the
thirteen classic drill-down queries run in seconds while still hitting
every planner path: key joins, shared-column equality and IN, enumerable
ranges, LIKE, OR collapsed to IN, residual-only predicates, grouping on
shared columns, and aggregate pushdown.

Everything is generated deterministically from a seed.
"""

from __future__ import annotations

import csv
import json
import os
import random

__all__ = [
    "REGIONS",
    "NATIONS",
    "table_defs",
    "generate",
    "queries",
    "aggregate_queries",
    "write_dataset",
]

REGIONS = ["AFRICA", "AMERICA", "ASIA", "EUROPE", "MIDDLE EAST"]

NATIONS = {
    "AFRICA": ["ALGERIA", "ETHIOPIA", "KENYA", "MOROCCO", "MOZAMBIQUE"],
    "AMERICA": ["ARGENTINA", "BRAZIL", "CANADA", "PERU", "UNITED STATES"],
    "ASIA": ["CHINA", "INDIA", "INDONESIA", "JAPAN", "VIETNAM"],
    "EUROPE": ["FRANCE", "GERMANY", "ROMANIA", "RUSSIA", "UNITED KINGDOM"],
    "MIDDLE EAST": ["EGYPT", "IRAN", "IRAQ", "JORDAN", "SAUDI ARABIA"],
}

MONTHS = [
    "January", "February", "March", "April", "May", "June",
    "July", "August", "September", "October", "November", "December",
]

SHIP_MODES = ["AIR", "FOB", "MAIL", "RAIL", "REG AIR", "SHIP", "TRUCK"]

SEGMENTS = ["AUTOMOBILE", "BUILDING", "FURNITURE", "HOUSEHOLD", "MACHINERY"]

_DAYS_IN_MONTH = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31]

YEARS = (1992, 1998)


def _city(nation: str, rng: random.Random) -> str:
    # Digits 1 and 5 are over-weighted so city-pair drilldowns still hit
    # at desk scale.
    roll = rng.random()
    if roll < 0.35:
        digit = 1
    elif roll < 0.60:
        digit = 5
    else:
        digit = rng.randrange(10)
    return f"{nation[:9]:<9}{digit}"


def _pick_nation(rng: random.Random):
    # One nation is over-weighted for the same reason.
    if rng.random() < 0.15:
        return "AMERICA", "UNITED STATES"
    region = REGIONS[rng.randrange(len(REGIONS))]
    return region, NATIONS[region][rng.randrange(5)]


def table_defs(max_lineorder: int = 200_000) -> list:
    """Logical table definitions for Warehouse.init_new."""
    return [
        {
            "name": "date",
            "primary_key": ["d_datekey"],
            "columns": [
                {"name": "d_datekey", "kind": "key"},
                {"name": "d_year", "kind": "integer", "min": YEARS[0], "max": YEARS[1]},
                {
                    "name": "d_yearmonthnum",
                    "kind": "integer",
                    "min": YEARS[0] * 100 + 1,
                    "max": YEARS[1] * 100 + 12,
                },
                {"name": "d_yearmonth", "kind": "string", "max_len": 7},
                {"name": "d_weeknuminyear", "kind": "integer", "min": 1, "max": 53},
                {"name": "d_month", "kind": "string", "max_len": 9},
            ],
        },
        {
            "name": "customer",
            "primary_key": ["c_custkey"],
            "columns": [
                {"name": "c_custkey", "kind": "key", "sensitive": "customer"},
                {"name": "c_city", "kind": "string", "max_len": 10},
                {"name": "c_nation", "kind": "string", "max_len": 15},
                {"name": "c_region", "kind": "string", "max_len": 12},
                {"name": "c_mktsegment", "kind": "string", "max_len": 10},
            ],
        },
        {
            "name": "supplier",
            "primary_key": ["s_suppkey"],
            "columns": [
                {"name": "s_suppkey", "kind": "key"},
                {"name": "s_city", "kind": "string", "max_len": 10},
                {"name": "s_nation", "kind": "string", "max_len": 15},
                {"name": "s_region", "kind": "string", "max_len": 12},
            ],
        },
        {
            "name": "part",
            "primary_key": ["p_partkey"],
            "columns": [
                {"name": "p_partkey", "kind": "key"},
                {"name": "p_mfgr", "kind": "string", "max_len": 6},
                {"name": "p_category", "kind": "string", "max_len": 7},
                {"name": "p_brand1", "kind": "string", "max_len": 9},
                {"name": "p_size", "kind": "integer", "min": 1, "max": 50},
            ],
        },
        {
            "name": "lineorder",
            "primary_key": ["lo_orderkey", "lo_linenumber"],
            "columns": [
                {"name": "lo_orderkey", "kind": "key"},
                {"name": "lo_linenumber", "kind": "key"},
                {"name": "lo_custkey", "kind": "key", "sensitive": "customer"},
                {"name": "lo_partkey", "kind": "key"},
                {"name": "lo_suppkey", "kind": "key"},
                {"name": "lo_orderdate", "kind": "key"},
                {"name": "lo_commitdate", "kind": "key"},
                {"name": "lo_quantity", "kind": "integer", "min": 1, "max": 50},
                {"name": "lo_extendedprice", "kind": "integer", "min": 0, "max": 60_000_000},
                {
                    "name": "lo_ordtotalprice",
                    "kind": "integer",
                    "min": 0,
                    "max": 400_000_000,
                },
                {"name": "lo_discount", "kind": "integer", "min": 0, "max": 10},
                {"name": "lo_revenue", "kind": "integer", "min": 0, "max": 60_000_000},
                {"name": "lo_supplycost", "kind": "integer", "min": 0, "max": 40_000_000},
                {"name": "lo_tax", "kind": "integer", "min": 0, "max": 8},
                {"name": "lo_shipmode", "kind": "string", "max_len": 7},
            ],
        },
    ]


def _gen_date_rows():
    rows = []
    for year in range(YEARS[0], YEARS[1] + 1):
        day_of_year = 0
        for month in range(12):
            days = _DAYS_IN_MONTH[month] + (
                1 if month == 1 and year % 4 == 0 else 0
            )
            for day in range(1, days + 1):
                day_of_year += 1
                rows.append(
                    {
                        "d_datekey": year * 10_000 + (month + 1) * 100 + day,
                        "d_year": year,
                        "d_yearmonthnum": year * 100 + month + 1,
                        "d_yearmonth": f"{MONTHS[month][:3]}{year}",
                        "d_weeknuminyear": (day_of_year - 1) // 7 + 1,
                        "d_month": MONTHS[month],
                    }
                )
    return rows


def generate(
    seed: int = 7,
    lineorders: int = 10_000,
    customers: int = 300,
    suppliers: int = 100,
    parts: int = 400,
) -> dict:
    rng = random.Random(seed)
    date_rows = _gen_date_rows()
    datekeys = [r["d_datekey"] for r in date_rows]

    customer_rows = []
    for ck in range(1, customers + 1):
        region, nation = _pick_nation(rng)
        customer_rows.append(
            {
                "c_custkey": ck,
                "c_city": _city(nation, rng),
                "c_nation": nation,
                "c_region": region,
                "c_mktsegment": SEGMENTS[rng.randrange(len(SEGMENTS))],
            }
        )

    supplier_rows = []
    for sk in range(1, suppliers + 1):
        region, nation = _pick_nation(rng)
        supplier_rows.append(
            {
                "s_suppkey": sk,
                "s_city": _city(nation, rng),
                "s_nation": nation,
                "s_region": region,
            }
        )

    part_rows = []
    for pk in range(1, parts + 1):
        mfgr = rng.randrange(1, 6)
        cat = rng.randrange(1, 6)
        brand = rng.randrange(1, 41)
        part_rows.append(
            {
                "p_partkey": pk,
                "p_mfgr": f"MFGR#{mfgr}",
                "p_category": f"MFGR#{mfgr}{cat}",
                "p_brand1": f"MFGR#{mfgr}{cat}{brand:02d}",
                "p_size": rng.randrange(1, 51),
            }
        )

    # A December 1997 seasonal spike keeps month drilldowns non-empty.
    dec97 = [k for k in datekeys if 19971201 <= k <= 19971231]

    lineorder_rows = []
    orderkey = 0
    while len(lineorder_rows) < lineorders:
        orderkey += 1
        lines = min(rng.randrange(1, 5), lineorders - len(lineorder_rows))
        custkey = rng.randrange(1, customers + 1)
        if rng.random() < 0.06:
            orderdate = dec97[rng.randrange(len(dec97))]
        else:
            orderdate = datekeys[rng.randrange(len(datekeys))]
        order_lines = []
        total = 0
        for ln in range(1, lines + 1):
            quantity = rng.randrange(1, 51)
            unit = rng.randrange(900, 1_100_000)
            price = quantity * unit
            discount = rng.randrange(0, 11)
            revenue = price * (100 - discount) // 100
            order_lines.append(
                {
                    "lo_orderkey": orderkey,
                    "lo_linenumber": ln,
                    "lo_custkey": custkey,
                    "lo_partkey": rng.randrange(1, parts + 1),
                    "lo_suppkey": rng.randrange(1, suppliers + 1),
                    "lo_orderdate": orderdate,
                    "lo_commitdate": datekeys[rng.randrange(len(datekeys))],
                    "lo_quantity": quantity,
                    "lo_extendedprice": price,
                    "lo_discount": discount,
                    "lo_revenue": revenue,
                    "lo_supplycost": rng.randrange(1, 600_000) * quantity // 10,
                    "lo_tax": rng.randrange(0, 9),
                    "lo_shipmode": SHIP_MODES[rng.randrange(len(SHIP_MODES))],
                }
            )
            total += price
        for row in order_lines:
            row["lo_ordtotalprice"] = total
        lineorder_rows.extend(order_lines)

    return {
        "date": date_rows,
        "customer": customer_rows,
        "supplier": supplier_rows,
        "part": part_rows,
        "lineorder": lineorder_rows,
    }


def queries() -> list:
    """The thirteen drill-down templates, adapted to this schema.

    The fact table leads every FROM clause so it anchors the fan-out."""
    return [
        (
            "q1.1",
            "SELECT SUM(lo_extendedprice * lo_discount) AS revenue "
            "FROM lineorder, date "
            "WHERE lo_orderdate = d_datekey AND d_year = 1993 "
            "AND lo_discount BETWEEN 1 AND 3 AND lo_quantity < 25",
        ),
        (
            "q1.2",
            "SELECT SUM(lo_extendedprice * lo_discount) AS revenue "
            "FROM lineorder, date "
            "WHERE lo_orderdate = d_datekey AND d_yearmonthnum = 199401 "
            "AND lo_discount BETWEEN 4 AND 6 AND lo_quantity BETWEEN 26 AND 35",
        ),
        (
            "q1.3",
            "SELECT SUM(lo_extendedprice * lo_discount) AS revenue "
            "FROM lineorder, date "
            "WHERE lo_orderdate = d_datekey AND d_weeknuminyear = 6 "
            "AND d_year = 1994 "
            "AND lo_discount BETWEEN 5 AND 7 AND lo_quantity BETWEEN 26 AND 35",
        ),
        (
            "q2.1",
            "SELECT SUM(lo_revenue) AS revenue, d_year, p_brand1 "
            "FROM lineorder, date, part, supplier "
            "WHERE lo_orderdate = d_datekey AND lo_partkey = p_partkey "
            "AND lo_suppkey = s_suppkey "
            "AND p_category = 'MFGR#12' AND s_region = 'AMERICA' "
            "GROUP BY d_year, p_brand1 ORDER BY d_year, p_brand1",
        ),
        (
            "q2.2",
            "SELECT SUM(lo_revenue) AS revenue, d_year, p_brand1 "
            "FROM lineorder, date, part, supplier "
            "WHERE lo_orderdate = d_datekey AND lo_partkey = p_partkey "
            "AND lo_suppkey = s_suppkey "
            "AND p_brand1 BETWEEN 'MFGR#2221' AND 'MFGR#2228' "
            "AND s_region = 'ASIA' "
            "GROUP BY d_year, p_brand1 ORDER BY d_year, p_brand1",
        ),
        (
            "q2.3",
            "SELECT SUM(lo_revenue) AS revenue, d_year, p_brand1 "
            "FROM lineorder, date, part, supplier "
            "WHERE lo_orderdate = d_datekey AND lo_partkey = p_partkey "
            "AND lo_suppkey = s_suppkey "
            "AND p_brand1 = 'MFGR#2239' AND s_region = 'EUROPE' "
            "GROUP BY d_year, p_brand1 ORDER BY d_year, p_brand1",
        ),
        (
            "q3.1",
            "SELECT c_nation, s_nation, d_year, SUM(lo_revenue) AS revenue "
            "FROM lineorder, customer, supplier, date "
            "WHERE lo_custkey = c_custkey AND lo_suppkey = s_suppkey "
            "AND lo_orderdate = d_datekey "
            "AND c_region = 'ASIA' AND s_region = 'ASIA' "
            "AND d_year BETWEEN 1992 AND 1997 "
            "GROUP BY c_nation, s_nation, d_year "
            "ORDER BY d_year ASC, revenue DESC",
        ),
        (
            "q3.2",
            "SELECT c_city, s_city, d_year, SUM(lo_revenue) AS revenue "
            "FROM lineorder, customer, supplier, date "
            "WHERE lo_custkey = c_custkey AND lo_suppkey = s_suppkey "
            "AND lo_orderdate = d_datekey "
            "AND c_nation = 'UNITED STATES' AND s_nation = 'UNITED STATES' "
            "AND d_year BETWEEN 1992 AND 1997 "
            "GROUP BY c_city, s_city, d_year ORDER BY d_year ASC, revenue DESC",
        ),
        (
            "q3.3",
            "SELECT c_city, s_city, d_year, SUM(lo_revenue) AS revenue "
            "FROM lineorder, customer, supplier, date "
            "WHERE lo_custkey = c_custkey AND lo_suppkey = s_suppkey "
            "AND lo_orderdate = d_datekey "
            "AND (c_city = 'UNITED ST1' OR c_city = 'UNITED ST5') "
            "AND (s_city = 'UNITED ST1' OR s_city = 'UNITED ST5') "
            "AND d_year BETWEEN 1992 AND 1997 "
            "GROUP BY c_city, s_city, d_year ORDER BY d_year ASC, revenue DESC",
        ),
        (
            "q3.4",
            "SELECT c_city, s_city, d_year, SUM(lo_revenue) AS revenue "
            "FROM lineorder, customer, supplier, date "
            "WHERE lo_custkey = c_custkey AND lo_suppkey = s_suppkey "
            "AND lo_orderdate = d_datekey "
            "AND c_city IN ('UNITED ST1', 'UNITED ST5') "
            "AND s_city IN ('UNITED ST1', 'UNITED ST5') "
            "AND d_yearmonth = 'Dec1997' "
            "GROUP BY c_city, s_city, d_year ORDER BY d_year ASC, revenue DESC",
        ),
        (
            "q4.1",
            "SELECT d_year, c_nation, SUM(lo_revenue - lo_supplycost) AS profit "
            "FROM lineorder, customer, supplier, part, date "
            "WHERE lo_custkey = c_custkey AND lo_suppkey = s_suppkey "
            "AND lo_partkey = p_partkey AND lo_orderdate = d_datekey "
            "AND c_region = 'AMERICA' AND s_region = 'AMERICA' "
            "AND (p_mfgr = 'MFGR#1' OR p_mfgr = 'MFGR#2') "
            "GROUP BY d_year, c_nation ORDER BY d_year, c_nation",
        ),
        (
            "q4.2",
            "SELECT d_year, s_nation, p_category, "
            "SUM(lo_revenue - lo_supplycost) AS profit "
            "FROM lineorder, customer, supplier, part, date "
            "WHERE lo_custkey = c_custkey AND lo_suppkey = s_suppkey "
            "AND lo_partkey = p_partkey AND lo_orderdate = d_datekey "
            "AND c_region = 'AMERICA' AND s_region = 'AMERICA' "
            "AND d_year IN (1997, 1998) "
            "AND (p_mfgr = 'MFGR#1' OR p_mfgr = 'MFGR#2') "
            "GROUP BY d_year, s_nation, p_category "
            "ORDER BY d_year, s_nation, p_category",
        ),
        (
            "q4.3",
            "SELECT d_year, s_city, p_brand1, "
            "SUM(lo_revenue - lo_supplycost) AS profit "
            "FROM lineorder, customer, supplier, part, date "
            "WHERE lo_custkey = c_custkey AND lo_suppkey = s_suppkey "
            "AND lo_partkey = p_partkey AND lo_orderdate = d_datekey "
            "AND c_region = 'AMERICA' AND s_nation = 'UNITED STATES' "
            "AND d_year IN (1997, 1998) AND p_category = 'MFGR#14' "
            "GROUP BY d_year, s_city, p_brand1 "
            "ORDER BY d_year, s_city, p_brand1",
        ),
    ]


def aggregate_queries() -> list:
    """Queries whose aggregates push down to the providers as share sums."""
    return [
        (
            "agg-total",
            "SELECT SUM(lo_revenue) AS revenue, COUNT(*) AS n FROM lineorder",
        ),
        (
            "agg-by-supp",
            "SELECT lo_suppkey, SUM(lo_revenue) AS revenue, COUNT(*) AS n "
            "FROM lineorder GROUP BY lo_suppkey ORDER BY lo_suppkey",
        ),
        (
            "agg-filtered",
            "SELECT SUM(lo_quantity) AS qty, AVG(lo_extendedprice) AS avg_price "
            "FROM lineorder WHERE lo_discount = 5",
        ),
        (
            "agg-by-order",
            "SELECT lo_orderkey, SUM(lo_extendedprice) AS total, "
            "COUNT(lo_quantity) AS lines "
            "FROM lineorder WHERE lo_orderkey IN (1, 2, 3, 4, 5, 6, 7, 8) "
            "GROUP BY lo_orderkey ORDER BY lo_orderkey",
        ),
    ]


def write_dataset(out_dir: str, data: dict, max_lineorder: int = 200_000):
    """CSV files, logical table definitions, and the query list."""
    os.makedirs(out_dir, exist_ok=True)
    defs = table_defs(max_lineorder)
    for tdef in defs:
        name = tdef["name"]
        rows = data[name]
        cols = [c["name"] for c in tdef["columns"]]
        with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols)
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
    with open(os.path.join(out_dir, "tables.json"), "w", encoding="utf-8") as fh:
        json.dump(defs, fh, indent=1)
    with open(os.path.join(out_dir, "queries.sql"), "w", encoding="utf-8") as fh:
        for name, text in queries() + aggregate_queries():
            fh.write(f"-- {name}\n{text};\n\n")
    return defs
