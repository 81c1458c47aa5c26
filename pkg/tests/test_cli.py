"""Command line round trips against local provider stores."""

import io
import json
import os

import pytest

from conftest import PRODUCT_TABLE
from shardhouse.cli import main

CSV = (
    "prodno,proname,proddescr,categoryid,unitprice\n"
    "124,Shirt,Red,1,75\n"
    "125,Shoe,,2,80\n"
    "126,Ring,,1,80\n"
)


@pytest.fixture
def wh_dir(tmp_path):
    """An initialized and loaded warehouse directory."""
    tables = tmp_path / "tables.json"
    tables.write_text(json.dumps([PRODUCT_TABLE]), encoding="utf-8")
    csv_path = tmp_path / "product.csv"
    csv_path.write_text(CSV, encoding="utf-8")
    d = str(tmp_path / "wh")
    assert main(["init", "--dir", d, "--tables", str(tables),
                 "--n", "4", "--t", "3", "--p", "13", "--p2", "7"]) == 0
    assert main(["load", "--dir", d, "--table", "product", "--csv", str(csv_path)]) == 0
    return d


def test_init_and_load_messages(tmp_path, capsys):
    tables = tmp_path / "tables.json"
    tables.write_text(json.dumps([PRODUCT_TABLE]), encoding="utf-8")
    csv_path = tmp_path / "p.csv"
    csv_path.write_text(CSV, encoding="utf-8")
    d = str(tmp_path / "wh")
    assert main(["init", "--dir", d, "--tables", str(tables),
                 "--n", "4", "--t", "3", "--p", "13", "--p2", "7"]) == 0
    out = capsys.readouterr().out
    assert "initialized warehouse" in out and "n=4 t=3" in out and "product" in out

    assert main(["load", "--dir", d, "--table", "product", "--csv", str(csv_path)]) == 0
    assert "loaded 3 rows into product" in capsys.readouterr().out


def test_query_formats(wh_dir, capsys):
    sql = "SELECT prodno, unitprice FROM product ORDER BY prodno"
    assert main(["query", "--dir", wh_dir, sql]) == 0
    out = capsys.readouterr().out
    assert "prodno" in out and "124" in out and "(3 rows)" in out

    assert main(["query", "--dir", wh_dir, sql, "--format", "csv"]) == 0
    out = capsys.readouterr().out
    assert "prodno,unitprice" in out and "124,75" in out

    assert main(["query", "--dir", wh_dir, sql, "--format", "json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0] == {"prodno": 124, "unitprice": 75}

    # NULLs print as NULL in tables and empty in CSV.
    assert main(["query", "--dir", wh_dir,
                 "SELECT proddescr FROM product WHERE prodno = 125"]) == 0
    assert "NULL" in capsys.readouterr().out


def test_query_explain_and_stdin(wh_dir, capsys, monkeypatch):
    assert main(["query", "--dir", wh_dir, "--explain",
                 "SELECT prodno FROM product WHERE unitprice = 75"]) == 0
    out = capsys.readouterr().out
    assert "mode:" in out and "pushdown:" in out

    monkeypatch.setattr("sys.stdin", io.StringIO("SELECT COUNT(*) FROM product"))
    assert main(["query", "--dir", wh_dir]) == 0
    assert "(1 row)" in capsys.readouterr().out


def test_query_errors_exit_2(wh_dir, capsys):
    assert main(["query", "--dir", wh_dir, "SELECT FROM"]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["load", "--dir", wh_dir, "--table", "product",
                 "--csv", "/nonexistent.csv"]) == 2
    assert "error:" in capsys.readouterr().err


def test_verify_inject_recover_cycle(wh_dir, capsys):
    assert main(["verify", "--dir", wh_dir]) == 0
    assert "verification passed" in capsys.readouterr().out

    assert main(["bench", "inject", "--dir", wh_dir, "--csp", "2",
                 "--table", "product", "--rate", "1.0",
                 "--pattern", "add-delta"]) == 0
    assert "corrupted" in capsys.readouterr().out

    assert main(["verify", "--dir", wh_dir]) == 1
    out = capsys.readouterr().out
    assert "verification FAILED" in out and "provider 2" in out

    # Peers 1, 3, 4 are intact, so the damaged provider can be rebuilt.
    assert main(["recover", "--dir", wh_dir, "--csp", "2"]) == 0
    assert "provider 2 recovered" in capsys.readouterr().out
    assert main(["verify", "--dir", wh_dir]) == 0


def test_cube_build_and_refresh(wh_dir, tmp_path, capsys):
    spec = {
        "name": "pcube",
        "base": "product",
        "dimensions": ["categoryid"],
        "measures": [{"col": "unitprice", "aggs": ["sum", "count"]}],
    }
    spec_path = tmp_path / "cube.json"
    spec_path.write_text(json.dumps(spec), encoding="utf-8")
    assert main(["cube", "build", "--dir", wh_dir, "--spec", str(spec_path)]) == 0
    assert "cube pcube built: 3 cells" in capsys.readouterr().out

    delta = tmp_path / "delta.csv"
    delta.write_text(
        "prodno,proname,proddescr,categoryid,unitprice\n127,Sock,,1,10\n",
        encoding="utf-8",
    )
    assert main(["cube", "refresh", "--dir", wh_dir, "--spec", str(spec_path),
                 "--rows", str(delta)]) == 0
    assert "refreshed" in capsys.readouterr().out

    assert main(["query", "--dir", wh_dir, "--format", "json",
                 "SELECT unitprice_sum, unitprice_count FROM pcube WHERE grp = 1"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows == [{"unitprice_sum": 245, "unitprice_count": 4}]


def test_bench_prob(capsys, tmp_path):
    assert main(["bench", "prob", "--p", "13", "--t", "3", "--x", "1"]) == 0
    assert "1/28561" in capsys.readouterr().out

    out_path = tmp_path / "grid.json"
    assert main(["bench", "prob", "--bits", "16", "--out", str(out_path)]) == 0
    capsys.readouterr()
    grid = json.loads(out_path.read_text(encoding="utf-8"))
    assert grid[0]["t"] == 2 and grid[0]["p"] == 65537
    # t=2, x=1 leaves 2t - x - 1 = 2 unknown base-p slots.
    assert grid[0]["exact"]["den"] == 65537 ** 2


def test_bench_volume(wh_dir, tmp_path, capsys):
    plain = tmp_path / "plain.csv"
    plain.write_text(CSV, encoding="utf-8")
    assert main(["bench", "volume", "--dir", wh_dir, "--table", "product",
                 "--plain", str(plain)]) == 0
    out = capsys.readouterr().out
    assert "76 stored share ints for 38 original digits = 2/1" in out
    assert "(n/(t-1) = 4/2)" in out
    assert "on disk" in out


def test_bench_gen(tmp_path, capsys):
    out_dir = str(tmp_path / "data")
    assert main(["bench", "gen", "--out", out_dir, "--seed", "1",
                 "--lineorders", "20", "--customers", "5",
                 "--suppliers", "4", "--parts", "6"]) == 0
    assert "lineorder=20" in capsys.readouterr().out
    names = sorted(os.listdir(out_dir))
    assert names == ["customer.csv", "date.csv", "lineorder.csv", "part.csv",
                     "queries.sql", "supplier.csv", "tables.json"]


def test_serve_requires_data_dir(monkeypatch, capsys):
    monkeypatch.delenv("SHARDHOUSE_DATA_DIR", raising=False)
    assert main(["serve", "--csp", "1", "--listen", "127.0.0.1:0"]) == 2
    assert "data-dir" in capsys.readouterr().err
