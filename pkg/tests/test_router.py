"""Query router: rewriting goldens, plan shapes, group retry, sum rebuild."""

import pytest

from conftest import GOLDEN_SHARES, MATRIX, PRODUCT_ROWS, PRODUCT_TABLE
from shardhouse import sharing
from shardhouse.errors import (
    CorruptionError,
    IntegrityError,
    PlanError,
    UnavailabilityError,
)
from shardhouse.router import (
    RANGE_ENUM_LIMIT,
    reconstruct_sum,
    rewrite_equality,
    rewrite_range,
)
from shardhouse.sharing import build_reconstruction
from shardhouse.warehouse import Warehouse


# ---------------------------------------------------------------------------
# Share-literal rewriting


def test_rewrite_equality_golden(loaded_warehouse):
    ctx = loaded_warehouse.router_ctx()
    for cid, e in GOLDEN_SHARES.items():
        assert rewrite_equality(75, "product", "unitprice", ctx, cid) == (e,)


def test_rewrite_range_golden(loaded_warehouse):
    ctx = loaded_warehouse.router_ctx()
    assert rewrite_range(75, 77, "product", "unitprice", ctx, 1) == [
        (16,),
        (19,),
        (22,),
    ]


def test_rewrite_string_tuple(loaded_warehouse):
    ctx = loaded_warehouse.router_ctx()
    assert rewrite_equality("Red", "product", "proddescr", ctx, 1) == (26, 20, 17)
    assert rewrite_equality("Shirt", "product", "proname", ctx, 3) == (
        33, 22, 25, 39, 45,
    )


def test_rewrite_rejects_plain_column(loaded_warehouse):
    ctx = loaded_warehouse.router_ctx()
    with pytest.raises(PlanError, match="not a shared column"):
        rewrite_equality(124, "product", "prodno", ctx, 1)
    with pytest.raises(PlanError, match="not enumerable"):
        rewrite_range("a", "b", "product", "proname", ctx, 1)


# ---------------------------------------------------------------------------
# Exact sum reconstruction


def test_reconstruct_sum_golden(loaded_warehouse):
    wh = loaded_warehouse
    ctx = wh.router_ctx()
    rctx = build_reconstruction((1, 2, 3), wh.coeffs, wh.config)
    codec = wh.codecs["product"]["unitprice"]
    # Share sums of 75 and 80: (16+20, 43+20, 33+24).
    total = reconstruct_sum({1: [36], 2: [63], 3: [57]}, 2, codec, rctx, wh.config)
    assert total == 155
    assert reconstruct_sum({1: [0], 2: [0], 3: [0]}, 0, codec, rctx, wh.config) is None


def test_reconstruct_sum_detects_tampering(loaded_warehouse):
    wh = loaded_warehouse
    rctx = build_reconstruction((1, 2, 3), wh.coeffs, wh.config)
    codec = wh.codecs["product"]["unitprice"]
    with pytest.raises(CorruptionError, match="not divisible"):
        reconstruct_sum({1: [37], 2: [63], 3: [57]}, 2, codec, rctx, wh.config)
    with pytest.raises(CorruptionError, match="do not match"):
        # A forged block: 75 carrying signature 3 instead of 2 shares to
        # (18, 43, 34); summed with 80's shares it stays divisible but the
        # signature congruence breaks.
        reconstruct_sum({1: [20 + 18], 2: [20 + 43], 3: [24 + 34]}, 2, codec, rctx, wh.config)


# ---------------------------------------------------------------------------
# Plan classification (via explain text)


def explain(wh, text):
    return wh.query(text, explain=True)


def test_plan_share_equality(loaded_warehouse):
    out = explain(loaded_warehouse, "SELECT prodno FROM product WHERE unitprice = 75")
    assert "mode: rows" in out
    assert "unitprice = <share literal>" in out
    assert "residual: unitprice = 75" in out


def test_plan_key_equality(loaded_warehouse):
    out = explain(loaded_warehouse, "SELECT prodno FROM product WHERE categoryid = 1")
    assert "categoryid = " in out and "share literal" not in out


def test_plan_range_enumeration(loaded_warehouse):
    out = explain(
        loaded_warehouse,
        "SELECT prodno FROM product WHERE unitprice BETWEEN 75 AND 77",
    )
    assert "unitprice IN <3 share literals>" in out
    out = explain(loaded_warehouse, "SELECT prodno FROM product WHERE unitprice > 160")
    assert "IN <8 share literals>" in out  # 161..168 per the declared max


def test_plan_like(loaded_warehouse):
    out = explain(loaded_warehouse, "SELECT prodno FROM product WHERE proname LIKE 'Ring'")
    assert "proname = <share literal>" in out
    out = explain(loaded_warehouse, "SELECT prodno FROM product WHERE proname LIKE 'R%'")
    assert "pushdown: none" in out
    assert "residual: proname LIKE 'R%'" in out


def test_plan_aggregate_pushdown(loaded_warehouse):
    out = explain(
        loaded_warehouse,
        "SELECT categoryid, SUM(unitprice), COUNT(*) FROM product GROUP BY categoryid",
    )
    assert "mode: aggregate" in out
    assert "group_by=['categoryid']" in out
    assert "sums=['unitprice']" in out


def test_plan_aggregate_falls_back_on_residual(loaded_warehouse):
    out = explain(
        loaded_warehouse,
        "SELECT SUM(unitprice) FROM product WHERE proname LIKE '%i%'",
    )
    assert "mode: rows" in out


def test_plan_min_max_stay_client_side(loaded_warehouse):
    out = explain(loaded_warehouse, "SELECT MIN(unitprice) FROM product")
    assert "mode: rows" in out


def test_plan_signed_sum_stays_client_side(tmp_path):
    table = {
        "name": "m",
        "primary_key": ["id"],
        "columns": [
            {"name": "id", "kind": "key"},
            {"name": "v", "kind": "integer", "signed": True, "min": -100, "max": 100},
            {"name": "w", "kind": "integer", "max": 100},
        ],
    }
    wh = Warehouse.init_new(str(tmp_path / "m"), [table], n=4, t=3, p=251)
    try:
        wh.load_rows("m", [{"id": 1, "v": -5, "w": 5}, {"id": 2, "v": 9, "w": 9}])
        assert "mode: rows" in explain(wh, "SELECT SUM(v) FROM m")
        assert "mode: aggregate" in explain(wh, "SELECT SUM(w) FROM m")
        # Zigzag sums of shares would decode garbage; the client path is exact.
        assert wh.query("SELECT SUM(v), SUM(w) FROM m")[1] == [[4, 14]]
    finally:
        wh.close()


def test_plan_nonadditive_hash_stays_client_side(tmp_path):
    name = "router-nonadditive"
    if name not in sharing._INNER_HASHES:
        sharing.register_inner_hash(
            name, lambda digits, p: (sum(digits) ** 2 + 1) % p, additive=False
        )
    table = {
        "name": "m",
        "primary_key": ["id"],
        "columns": [
            {"name": "id", "kind": "key"},
            {"name": "w", "kind": "integer", "max": 100},
        ],
    }
    wh = Warehouse.init_new(
        str(tmp_path / "m"), [table], n=4, t=3, p=251, inner_hash=name
    )
    try:
        wh.load_rows("m", [{"id": 1, "w": 5}, {"id": 2, "w": 9}])
        assert "mode: rows" in explain(wh, "SELECT SUM(w) FROM m")
        assert wh.query("SELECT SUM(w) FROM m")[1] == [[14]]
    finally:
        wh.close()


def test_plan_errors(loaded_warehouse):
    wh = loaded_warehouse
    with pytest.raises(PlanError, match="unknown table"):
        wh.query("SELECT a FROM ghost")
    with pytest.raises(PlanError, match="unknown column"):
        wh.query("SELECT ghost FROM product")
    with pytest.raises(PlanError, match="GROUP BY"):
        wh.query("SELECT unitprice FROM product GROUP BY categoryid")


def test_plan_join_requires_condition(tmp_path):
    cat = {
        "name": "category",
        "primary_key": ["catid"],
        "columns": [
            {"name": "catid", "kind": "key"},
            {"name": "catname", "kind": "string", "max_len": 8, "nullable": True},
        ],
    }
    wh = Warehouse.init_new(
        str(tmp_path / "wj"), [PRODUCT_TABLE, cat], n=4, t=3, p=13, p2=7,
        coefficients=MATRIX,
    )
    try:
        wh.load_rows("product", PRODUCT_ROWS)
        wh.load_rows("category", [
            {"catid": 1, "catname": "cloth"},
            {"catid": 2, "catname": "shoes"},
        ])
        with pytest.raises(PlanError, match="no join condition"):
            wh.query("SELECT prodno FROM product, category")
        headers, rows = wh.query(
            "SELECT prodno, catname FROM product"
            " JOIN category ON product.categoryid = category.catid"
            " WHERE unitprice = 80 ORDER BY prodno"
        )
        assert rows == [[125, "shoes"], [126, "cloth"]]
        # The same join spelled as a WHERE conjunct.
        headers, rows = wh.query(
            "SELECT prodno, catname FROM product, category"
            " WHERE categoryid = catid AND unitprice = 75"
        )
        assert rows == [[124, "cloth"]]
    finally:
        wh.close()


def test_join_tables_must_not_share_names(tmp_path):
    cat = {
        "name": "category",
        "primary_key": ["categoryid"],
        "columns": [
            {"name": "categoryid", "kind": "key"},
            {"name": "catname", "kind": "string", "max_len": 8, "nullable": True},
        ],
    }
    wh = Warehouse.init_new(
        str(tmp_path / "wd"), [PRODUCT_TABLE, cat], n=4, t=3, p=13, p2=7,
        coefficients=MATRIX,
    )
    try:
        with pytest.raises(PlanError, match="distinct column names"):
            wh.query("SELECT prodno FROM product, category")
    finally:
        wh.close()


# ---------------------------------------------------------------------------
# Execution: verification and group retry


def corrupt(wh, cid, pattern, rate=1.0, seed=0):
    return wh.transports[cid].request(
        "corrupt", "product", {"pattern": pattern, "rate": rate, "seed": seed}
    )


def test_query_golden_rows(loaded_warehouse):
    headers, rows = loaded_warehouse.query(
        "SELECT prodno, proname, unitprice FROM product ORDER BY prodno"
    )
    assert headers == ["prodno", "proname", "unitprice"]
    assert rows == [[124, "Shirt", 75], [125, "Shoe", 80], [126, "Ring", 80]]


def test_retry_skips_provider_with_bad_outer_sig(loaded_warehouse):
    wh = loaded_warehouse
    corrupt(wh, 2, "add-delta")
    headers, rows = wh.query("SELECT prodno FROM product WHERE unitprice = 80")
    assert [r[0] for r in rows] == [125, 126]


def test_retry_skips_provider_with_forged_sig(loaded_warehouse):
    wh = loaded_warehouse
    # Forged outer signatures pass the scan; reconstruction still fails,
    # and a group avoiding the bad provider answers.
    corrupt(wh, 1, "sig-replace")
    headers, rows = wh.query("SELECT prodno, unitprice FROM product ORDER BY prodno")
    assert rows == [[124, 75], [125, 80], [126, 80]]


def test_no_clean_group_raises_integrity(tmp_path):
    wh = Warehouse.init_new(
        str(tmp_path / "w3"), [PRODUCT_TABLE], n=3, t=3, p=13, p2=7,
        coefficients=MATRIX[:3],
    )
    try:
        wh.load_rows("product", PRODUCT_ROWS)
        wh.transports[2].request(
            "corrupt", "product", {"pattern": "sig-replace", "rate": 1.0, "seed": 1}
        )
        with pytest.raises(IntegrityError, match="no provider group"):
            wh.query("SELECT prodno, unitprice FROM product")
    finally:
        wh.close()


def test_unavailability(loaded_warehouse):
    wh = loaded_warehouse
    wh.transports[1].kill()
    assert wh.query("SELECT COUNT(*) FROM product")[1] == [[3]]
    wh.transports[2].kill()
    with pytest.raises(UnavailabilityError, match="only 2 of 4"):
        wh.query("SELECT COUNT(*) FROM product")


def test_aggregate_pushdown_matches_fallback(loaded_warehouse):
    wh = loaded_warehouse
    text = "SELECT categoryid, SUM(unitprice), COUNT(*), AVG(unitprice) FROM product GROUP BY categoryid ORDER BY categoryid"
    assert "mode: aggregate" in explain(wh, text)
    headers, rows = wh.query(text)
    assert rows == [[1, 155, 2, 77.5], [2, 80, 1, 80.0]]


def test_order_by_desc_nulls_last(tmp_path):
    table = dict(PRODUCT_TABLE)
    wh = Warehouse.init_new(
        str(tmp_path / "wn"), [table], n=4, t=3, p=13, p2=7, coefficients=MATRIX
    )
    try:
        rows = [dict(r) for r in PRODUCT_ROWS]
        rows[2]["unitprice"] = None
        wh.load_rows("product", rows)
        _, asc = wh.query("SELECT prodno FROM product ORDER BY unitprice")
        _, desc = wh.query("SELECT prodno FROM product ORDER BY unitprice DESC")
        assert [r[0] for r in asc] == [124, 125, 126]
        assert [r[0] for r in desc] == [125, 124, 126]
        _, star = wh.query("SELECT * FROM product ORDER BY unitprice DESC LIMIT 2")
        assert [r[0] for r in star] == [125, 124]
    finally:
        wh.close()


def test_range_enum_limit(loaded_warehouse):
    assert RANGE_ENUM_LIMIT >= 10_000
