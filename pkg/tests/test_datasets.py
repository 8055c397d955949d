import pytest

from dtikit import datasets as ds


CSV = """drug_id,protein_id,smiles,sequence,label
D1,P1,CCO,MKVLAA,1
D2,P1,C1CC,MKVLAA,0
D3,P2,c1ccccc1,GGHHII,0
D4,P2,CCN,GGHHII,2
"""


def write(tmp_path, text):
    p = tmp_path / "data.csv"
    p.write_text(text)
    return p


def test_lenient_load_skips_bad_rows_with_line_numbers(tmp_path):
    result = ds.load_interactions_detailed(write(tmp_path, CSV))
    assert [r.drug_id for r in result.records] == ["D1", "D3"]
    assert [s.row for s in result.skipped] == [3, 5]
    assert "ring" in result.skipped[0].reason
    assert "binary" in result.skipped[1].reason


def test_strict_load_raises(tmp_path):
    with pytest.raises(Exception):
        ds.load_interactions_detailed(write(tmp_path, CSV), strict=True)


def test_missing_column(tmp_path):
    path = write(tmp_path, "a,b\n1,2\n")
    with pytest.raises(ds.MissingColumn):
        ds.load_interactions(path)


def test_derived_ids_follow_first_occurrence(tmp_path):
    text = "smiles,sequence,label\nCCO,MKV,1\nCCN,MKV,0\nCCO,AAA,1\n"
    schema = ds.CsvSchema(drug_id_col=None, protein_id_col=None)
    records = ds.load_interactions(write(tmp_path, text), schema)
    assert [r.drug_id for r in records] == ["d0000", "d0001", "d0000"]
    assert [r.protein_id for r in records] == ["p0000", "p0000", "p0001"]


def test_affinity_labels(tmp_path):
    text = "smiles,sequence,label\nCCO,MKV,6.42\n"
    schema = ds.CsvSchema(drug_id_col=None, protein_id_col=None, label_kind=ds.AFFINITY)
    records = ds.load_interactions(write(tmp_path, text), schema)
    assert records[0].label == pytest.approx(6.42)
    assert records[0].label_kind == ds.AFFINITY


def test_oversized_molecule_rejected_at_load(tmp_path):
    text = "smiles,sequence,label\n" + "C" * 291 + ",MKV,1\n"
    schema = ds.CsvSchema(drug_id_col=None, protein_id_col=None)
    result = ds.load_interactions_detailed(write(tmp_path, text), schema)
    assert not result.records
    assert "290" in result.skipped[0].reason


def test_jsonl_round_trip(tmp_path):
    records = ds.load_interactions(write(tmp_path, CSV))
    out = tmp_path / "cache.jsonl"
    ds.records_to_jsonl(records, out)
    back = ds.records_from_jsonl(out)
    assert back == records
