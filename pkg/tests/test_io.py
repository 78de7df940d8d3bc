import numpy as np
import pytest

from vi2dssm.errors import ParseError
from vi2dssm.io import (
    parse_config,
    read_config,
    read_csv_series,
    read_table,
    write_csv_series,
    write_table,
)


def test_series_round_trip_with_header(tmp_path):
    X = np.random.default_rng(0).normal(size=(3, 10)) * 1e5
    write_csv_series(tmp_path / "s.csv", X, names=["a", "b", "c"])
    names, Y = read_csv_series(tmp_path / "s.csv")
    assert names == ["a", "b", "c"]
    np.testing.assert_array_equal(Y, X)


def test_series_without_header_and_blank_lines(tmp_path):
    (tmp_path / "s.csv").write_text("1,2\n\n3,4\n5, 6\n")
    names, X = read_csv_series(tmp_path / "s.csv")
    assert names is None
    np.testing.assert_array_equal(X, [[1, 3, 5], [2, 4, 6]])


@pytest.mark.parametrize("text,line,msg", [
    ("a,b\n1,2\n3\n", 3, "columns"),
    ("1,2\n3,x\n", 2, "not a number"),
    ("1,2\n3,nan\n", 2, "non-finite"),
    ("a,b\n", 1, "no data"),
])
def test_series_errors_name_the_line(tmp_path, text, line, msg):
    (tmp_path / "s.csv").write_text(text)
    with pytest.raises(ParseError, match=msg) as info:
        read_csv_series(tmp_path / "s.csv")
    assert info.value.line == line


def test_table_round_trip(tmp_path):
    write_table(tmp_path / "t.csv", ["engine", "C", "x"], [["vi", 16, 0.1 + 0.2]])
    header, rows = read_table(tmp_path / "t.csv")
    assert header == ["engine", "C", "x"]
    assert rows == [["vi", 16.0, 0.1 + 0.2]]
    (tmp_path / "bad.csv").write_text("a,b\n1\n")
    with pytest.raises(ParseError):
        read_table(tmp_path / "bad.csv")


def test_config_parsing(tmp_path):
    (tmp_path / "c.cfg").write_text("# comment\nseed = 4\n\ndelta_long=2.0  # trailing\n")
    assert read_config(tmp_path / "c.cfg") == {"seed": "4", "delta_long": "2.0"}
    with pytest.raises(ParseError) as info:
        parse_config("a = 1\na = 2\n")
    assert info.value.line == 2
    with pytest.raises(ParseError):
        parse_config("just words\n")
