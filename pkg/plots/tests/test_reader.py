"""Reader-level contract: version line, pinned columns, row loading."""

import csv

import pytest

from qsun_plots import EmptyData, SCHEMAS, SchemaMismatch, load_rows


def write_csv(path, schema, columns, rows, version="qsun-csv v1"):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {version} schema={schema}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
    return path


def rstat_file(path, rows=((12, 0.1, 0.386, 0.008),)):
    return write_csv(path, "rstat", SCHEMAS["rstat"], rows)


def test_load_infers_schema_and_parses_rows(tmp_path):
    p = rstat_file(tmp_path / "rstat.csv")
    schema, rows = load_rows([p])
    assert schema == "rstat"
    assert rows == [{"n": "12", "alpha": "0.1", "mean": "0.386", "se": "0.008"}]


def test_explicit_kind_must_match_header(tmp_path):
    p = rstat_file(tmp_path / "rstat.csv")
    with pytest.raises(SchemaMismatch, match="'rstat' where 'dos' was expected"):
        load_rows([p], kind="dos")


def test_missing_column_is_named(tmp_path):
    cols = [c for c in SCHEMAS["rstat"] if c != "se"]
    p = write_csv(tmp_path / "r.csv", "rstat", cols, [(12, 0.1, 0.4)])
    with pytest.raises(SchemaMismatch, match="missing column 'se'"):
        load_rows([p])


def test_unexpected_column_is_named(tmp_path):
    cols = list(SCHEMAS["rstat"]) + ["note"]
    p = write_csv(tmp_path / "r.csv", "rstat", cols, [(12, 0.1, 0.4, 0.01, "x")])
    with pytest.raises(SchemaMismatch, match="unexpected column 'note'"):
        load_rows([p])


def test_wrong_version_line_rejected(tmp_path):
    p = write_csv(tmp_path / "r.csv", "rstat", SCHEMAS["rstat"],
                  [(12, 0.1, 0.4, 0.01)], version="qsun-csv v2")
    with pytest.raises(SchemaMismatch, match="missing 'qsun-csv v1' header"):
        load_rows([p])


def test_unknown_schema_rejected(tmp_path):
    p = write_csv(tmp_path / "r.csv", "mystery", ("a",), [(1,)])
    with pytest.raises(SchemaMismatch, match="unknown schema 'mystery'"):
        load_rows([p])


def test_no_data_rows_raises_empty(tmp_path):
    p = rstat_file(tmp_path / "r.csv", rows=())
    with pytest.raises(EmptyData, match="no data rows"):
        load_rows([p])


def test_no_files_raises_empty():
    with pytest.raises(EmptyData, match="no input files"):
        load_rows([])


def test_multiple_files_concatenate_in_order(tmp_path):
    a = rstat_file(tmp_path / "a.csv", rows=((6, 0.1, 0.40, 0.01),))
    b = rstat_file(tmp_path / "b.csv", rows=((12, 0.2, 0.39, 0.01),))
    schema, rows = load_rows([a, b])
    assert schema == "rstat"
    assert [r["n"] for r in rows] == ["6", "12"]


def test_mixed_schemas_across_files_rejected(tmp_path):
    a = rstat_file(tmp_path / "a.csv")
    b = write_csv(tmp_path / "b.csv", "dos", SCHEMAS["dos"], [("[-1,1]", 2.0, 0.1)])
    with pytest.raises(SchemaMismatch, match="'dos' where 'rstat' was expected"):
        load_rows([a, b])
