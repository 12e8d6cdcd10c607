import csv
import io

import pytest

from oblivdp.cli import main


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_gen_to_stdout(capsys):
    assert main(["gen", "--rows", "5", "--set", "table=rankings"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert len(rows) == 5 and set(rows[0]) == {"pageURL", "pageRank", "avgDuration"}


def test_gen_to_file_and_distinct(tmp_path, capsys):
    data = tmp_path / "uv.csv"
    assert main(["gen", "--rows", "2000", "--out", str(data), "--set", "groups=150"]) == 0
    assert main(["distinct", "--input", str(data), "--set", "noiseless=1", "--delta", "1e-3"]) == 0
    row = _csv(capsys.readouterr().out)[0]
    # far fewer than t distinct prefixes: the estimate is the exact count
    assert row["underfilled"] == "True" and float(row["g_tilde"]) == 150


def test_filter_with_config(tmp_path, capsys):
    cfg = tmp_path / "f.cfg"
    cfg.write_text("rows = 3000\ncrypto = plaintext\ndelta = 1e-3\n")
    assert main(["filter", "--config", str(cfg)]) == 0
    out = capsys.readouterr()
    row = _csv(out.out)[0]
    assert row["operator"] == "filter" and row["complexity_ok"] == "True"
    assert "PASS filter transfers" in out.err


def test_group_and_join(capsys):
    assert main(["group", "--rows", "3000", "--delta", "1e-3", "--set", "crypto=plaintext",
                 "--set", "group_slots=900"]) == 0
    assert main(["join", "--rows", "3000", "--delta", "1e-3", "--set", "crypto=plaintext"]) == 0
    out = capsys.readouterr().out
    assert "group_hash" in out and "fitted_sort_c" in out


def test_simulate_bm(capsys):
    assert main(["simulate-bm", "--n", "4096", "--trials", "100", "--delta-list", "2**-5,2**-8,2**-11"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert len(rows) == 3
    for r in rows:
        assert float(r["analytic_bound"]) > float(r["empirical_quantile"])


def test_verify(capsys):
    assert main(["verify", "--trials", "3", "--rows", "3000", "--delta", "1e-3"]) == 0
    rows = _csv(capsys.readouterr().out)
    assert all(r["passed"] == "True" for r in rows) and len(rows) >= 6


def test_bad_key_exits_2(capsys):
    assert main(["filter", "--set", "bogus=1"]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_unknown_verb():
    with pytest.raises(SystemExit):
        main(["sort"])
