"""Shared fixtures: the worked-example configuration and its frozen values.

The 4x3 coefficient matrix, the base-13 digit pairs, every stored share
and signature, and the aggregate arithmetic below were derived by hand
from the sharing equation e = sum((d_h + 2) * a_h) + sig * a_last and are
asserted byte-for-byte in the tests; they never come from library calls.
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from shardhouse.sharing import CoefficientSet, SharingConfig

# n=4, t=3, p=13, p2=7 with fixed coefficient rows.
MATRIX = ((1, 0, 2), (3, 1, 0), (2, 1, 1), (0, 2, 1))

# Determinants of each 3-row submatrix, keyed by provider group.
SUBSET_DETS = {
    (1, 2, 3): 3,
    (1, 2, 4): 13,
    (1, 3, 4): 7,
    (2, 3, 4): -5,
}

# adjugate(rows 1..3); adj @ A == det * I with det = 3.
ADJ_123 = ((1, 2, -2), (-3, -3, 6), (1, -1, 1))

# Value 75 in base 13: digits (10, 5) little-endian, digit sum 15 -> sig 2.
GOLDEN_VALUE = 75
GOLDEN_DIGITS = (10, 5)
GOLDEN_SIG = 2
GOLDEN_SHARES = {1: 16, 2: 43, 3: 33, 4: 16}
GOLDEN_OUTER = {1: 2, 2: 1, 3: 5, 4: 2}

# Three-row product table and its complete share tables at providers 1-3.
PRODUCT_ROWS = [
    {"prodno": 124, "proname": "Shirt", "proddescr": "Red", "categoryid": 1, "unitprice": 75},
    {"prodno": 125, "proname": "Shoe", "proddescr": None, "categoryid": 2, "unitprice": 80},
    {"prodno": 126, "proname": "Ring", "proddescr": None, "categoryid": 1, "unitprice": 80},
]

FIXTURE_SHARES = {
    1: {
        124: {
            "proname": ([29, 18, 21, 22, 28], [1, 4, 0, 1, 0]),
            "proddescr": ([26, 20, 17], [5, 6, 3]),
            "unitprice": ([16], [2]),
        },
        125: {
            "proname": ([29, 18, 13, 20], [1, 4, 6, 6]),
            "proddescr": None,
            "unitprice": ([20], [6]),
        },
        126: {
            "proname": ([26, 21, 10, 26], [5, 0, 3, 5]),
            "proddescr": None,
            "unitprice": ([20], [6]),
        },
    },
    2: {
        124: {
            "proname": ([29, 16, 19, 46, 52], [1, 2, 5, 4, 3]),
            "proddescr": ([26, 45, 42], [5, 3, 0]),
            "unitprice": ([43], [1]),
        },
        125: {
            "proname": ([29, 16, 37, 45], [1, 2, 2, 3]),
            "proddescr": None,
            "unitprice": ([20], [6]),
        },
        126: {
            "proname": ([26, 19, 34, 51], [5, 5, 6, 2]),
            "proddescr": None,
            "unitprice": ([20], [6]),
        },
    },
    3: {
        124: {
            "proname": ([33, 22, 25, 39, 45], [5, 1, 4, 4, 3]),
            "proddescr": ([30, 37, 34], [2, 2, 6]),
            "unitprice": ([33], [5]),
        },
        125: {
            "proname": ([33, 22, 30, 37], [5, 1, 2, 2]),
            "proddescr": None,
            "unitprice": ([24], [3]),
        },
        126: {
            "proname": ([30, 25, 27, 43], [2, 4, 6, 1]),
            "proddescr": None,
            "unitprice": ([24], [3]),
        },
    },
}

# SUM pushdown over the two prices 75 and 80 at providers 1-3:
# per-slot share sums, then adj/det, then the digit-slot correction 2R.
AGG_SHARE_SUMS = (36, 63, 57)
AGG_SLOTS = (16, 15, 10)  # adj @ sums / det
AGG_DIGIT_TOTALS = (12, 11)  # slots minus 2R with R=2
AGG_TOTAL = 155

PRODUCT_TABLE = {
    "name": "product",
    "primary_key": ["prodno"],
    "columns": [
        {"name": "prodno", "kind": "key"},
        {"name": "proname", "kind": "string", "max_len": 8},
        {"name": "proddescr", "kind": "string", "max_len": 8, "nullable": True},
        {"name": "categoryid", "kind": "key"},
        {"name": "unitprice", "kind": "integer", "max": 168, "nullable": True},
    ],
}


@pytest.fixture
def paper_config():
    return SharingConfig(n=4, t=3, p=13, p2=7, seed=0)


@pytest.fixture
def paper_coeffs(paper_config):
    return CoefficientSet.from_matrix(MATRIX, paper_config)


@pytest.fixture
def paper_warehouse(tmp_path):
    """A live 4-provider warehouse with the fixed matrix and the product table."""
    from shardhouse.warehouse import Warehouse

    wh = Warehouse.init_new(
        str(tmp_path / "wh"),
        [PRODUCT_TABLE],
        n=4,
        t=3,
        p=13,
        p2=7,
        seed=0,
        coefficients=MATRIX,
    )
    yield wh
    wh.close()


@pytest.fixture
def loaded_warehouse(paper_warehouse):
    paper_warehouse.load_rows("product", PRODUCT_ROWS)
    return paper_warehouse


def snapshot_cells(wh, cid, table="product"):
    """{pk: {col: cell}} from one provider's snapshot."""
    cols = list(wh.codecs[table])
    rows = wh._snapshot_table(wh.transports[cid], table)
    pk_cols = wh.catalog["tables"][table]["primary_key"]
    out = {}
    for row in rows:
        cells = dict(zip(cols, row))
        pk = cells[pk_cols[0]] if len(pk_cols) == 1 else tuple(cells[c] for c in pk_cols)
        out[pk] = cells
    return out


def as_pair(cell):
    """Wire cell -> ([share ints], [sig ints]) or None."""
    if cell is None:
        return None
    return [int(e) for e in cell["e"]], list(cell["s"])
