from collections import Counter

import numpy as np
import pytest

from deepgonet.annotations import (
    AnnotationRecord,
    EXPERIMENTAL_CODES,
    STRICT_EXPERIMENTAL_CODES,
    aggregate_by_protein,
    build_dataset,
    filter_experimental,
    load_dataset,
    parse_annotation_table,
    parse_fasta,
    save_dataset,
)
from deepgonet.errors import CheckpointError, DatasetError, IngestionError
from deepgonet.ontology import TermDictionary, load_obo, parse_obo, top_level_terms

from conftest import naive_ancestors, random_dag

HEADER = "GENE PRODUCT ID\tQUALIFIER\tGO TERM\tGO EVIDENCE CODE\n"


@pytest.fixture
def graph(data_dir):
    return load_obo(data_dir / "mini.obo")


def pipeline(data_dir, graph, namespace, whitelist=EXPERIMENTAL_CODES):
    counters = Counter()
    recs = parse_annotation_table((data_dir / "annotations.tsv").read_bytes(), counters=counters)
    kept = filter_experimental(recs, whitelist)
    d = top_level_terms(graph, namespace)
    agg = aggregate_by_protein(kept, graph, d, counters)
    seqs = parse_fasta((data_dir / "proteins.fasta").read_bytes(), counters=counters)
    return build_dataset(agg, seqs, d, max_len=20, counters=counters), len(recs) - len(kept)


def test_whitelist_contents():
    assert EXPERIMENTAL_CODES == {"EXP", "IDA", "IPI", "IMP", "IGI", "IEP", "TAS", "IC"}
    assert STRICT_EXPERIMENTAL_CODES == EXPERIMENTAL_CODES - {"TAS", "IC"}


def test_whitelist_filter_keeps_only_listed():
    rows = "".join(f"P1\tenables\tGO:0005515\t{c}\n" for c in ("IDA", "IEA", "ND", "TAS"))
    recs = parse_annotation_table(HEADER + rows)
    assert [r.evidence_code for r in filter_experimental(recs)] == ["IDA", "TAS"]
    assert [r.evidence_code for r in filter_experimental(recs, STRICT_EXPERIMENTAL_CODES)] == ["IDA"]


def test_not_qualifier_excluded():
    c = Counter()
    recs = parse_annotation_table(HEADER + "P1\tNOT|enables\tGO:0005515\tIDA\n"
                                  "P1\tenables\tGO:0005488\tIDA\n", counters=c)
    assert [r.go_term for r in recs] == ["GO:0005488"]
    assert c["negated"] == 1


def test_missing_column_named():
    with pytest.raises(IngestionError, match="GO EVIDENCE CODE"):
        parse_annotation_table("GENE PRODUCT ID\tGO TERM\nP1\tGO:0005515\n")


def test_custom_column_names():
    text = "acc\tterm\tcode\nP1\tGO:0005515\tIDA\n"
    recs = parse_annotation_table(text, columns={"protein": "acc", "term": "term",
                                                 "evidence": "code"})
    assert recs[0].protein_id == "P1" and recs[0].qualifier is None


def test_fixture_mf_hand_derived(data_dir, graph):
    ds, dropped = pipeline(data_dir, graph, "molecular_function")
    assert dropped == 2  # IEA and ND rows
    assert ds.protein_ids == ["P00001", "P00002", "P00003", "P00007"]
    assert ds.labels.tolist() == [[1, 1], [0, 1], [0, 1], [0, 1]]
    c = ds.counters
    assert (c["rows"], c["malformed"], c["negated"], c["records"]) == (17, 1, 1, 15)
    assert c["unresolved_term"] == 1 and c["obsolete_term"] == 1
    assert c["other_namespace"] == 3 and c["empty_label_set"] == 1
    assert c["fasta_illegal_symbol"] == 1 and c["fasta_duplicate"] == 1
    assert c["missing_sequence"] == 1
    m = ds.manifest()
    assert m["label_cardinality_histogram"] == {"1": 3, "2": 1}
    assert m["label_frequency"] == {"GO:0003824": 1, "GO:0005488": 4}
    assert m["truncated_sequences"] == 2  # P00001 (44) and P00002 (21)


def test_fixture_bp_and_cc(data_dir, graph):
    bp, _ = pipeline(data_dir, graph, "biological_process")
    assert bp.protein_ids == ["P00001", "P00002"]
    assert bp.labels.tolist() == [[1, 1, 0], [0, 0, 1]]
    assert bp.counters["other_namespace"] == 9
    cc, _ = pipeline(data_dir, graph, "cellular_component")
    assert cc.protein_ids == ["P00001"] and cc.labels.tolist() == [[0, 1]]
    assert cc.counters["other_namespace"] == 10


def test_duplicate_fasta_last_wins(data_dir, caplog):
    seqs = parse_fasta((data_dir / "proteins.fasta").read_bytes())
    assert seqs["P00007"] == "MPEPTIDEWWXUQ"
    assert seqs["P00003"] == "MATTAGLLKWVCPQRST"
    assert "P00006" not in seqs
    assert "duplicate" in caplog.text


def test_fasta_plain_header():
    assert parse_fasta(">Q1 some protein\nMKV\n") == {"Q1": "MKV"}


def test_fasta_data_before_header():
    with pytest.raises(IngestionError):
        parse_fasta("MKV\n>Q1\nMKV\n")


def test_empty_join_raises(graph):
    d = top_level_terms(graph, "molecular_function")
    with pytest.raises(DatasetError):
        build_dataset({"P1": {0}}, {"P2": "MKV"}, d)


def test_dataset_roundtrip(tmp_path, data_dir, graph):
    ds, _ = pipeline(data_dir, graph, "molecular_function")
    save_dataset(ds, tmp_path / "d.bin")
    back = load_dataset(tmp_path / "d.bin")
    assert back.protein_ids == ds.protein_ids
    for name in ("indices", "mask", "lengths", "labels"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
    assert back.dictionary == ds.dictionary
    assert back.manifest() == ds.manifest()


def test_dataset_corruption_detected(tmp_path, data_dir, graph):
    ds, _ = pipeline(data_dir, graph, "molecular_function")
    path = tmp_path / "d.bin"
    save_dataset(ds, path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load_dataset(path)


def test_three_rows_one_negated():
    text = HEADER + ("P1\tenables\tGO:0005515\tIDA\n"
                     "P1\tNOT\tGO:0003677\tIDA\n"
                     "P2\tenables\tGO:0003824\tIMP\n")
    assert len(parse_annotation_table(text)) == 2


def test_hand_listed_records():
    text = HEADER + "".join(f"P{i}\tenables\tGO:000{i}000\t{c}\n"
                            for i, c in enumerate(["IDA", "IEA", "IMP", "ND", "TAS",
                                                   "IC", "EXP", "IGI", "IPI", "IEP"]))
    recs = parse_annotation_table(text)
    assert [(r.protein_id, r.go_term, r.evidence_code) for r in recs] == [
        ("P0", "GO:0000000", "IDA"), ("P1", "GO:0001000", "IEA"), ("P2", "GO:0002000", "IMP"),
        ("P3", "GO:0003000", "ND"), ("P4", "GO:0004000", "TAS"), ("P5", "GO:0005000", "IC"),
        ("P6", "GO:0006000", "EXP"), ("P7", "GO:0007000", "IGI"), ("P8", "GO:0008000", "IPI"),
        ("P9", "GO:0009000", "IEP")]
    assert all(r.qualifier == "enables" for r in recs)


def test_filter_small_cases():
    recs = [AnnotationRecord("P", "GO:0000001", c) for c in ("IDA", "IEA", "IMP")]
    assert [r.evidence_code for r in filter_experimental(recs)] == ["IDA", "IMP"]
    assert filter_experimental(recs, set()) == []


def test_filter_random_against_predicate():
    rng = np.random.default_rng(3)
    codes = ["EXP", "IDA", "IPI", "IMP", "IGI", "IEP", "TAS", "IC", "IEA", "ISS", "ND", "RCA"]
    recs = [AnnotationRecord(f"P{i}", "GO:0000001", str(rng.choice(codes))) for i in range(100)]
    wl = set(rng.choice(codes, 5))
    assert filter_experimental(recs, wl) == [r for r in recs if r.evidence_code in wl]


def test_aggregate_union(data_dir, graph):
    d = top_level_terms(graph, "biological_process")
    recs = [AnnotationRecord("P", "GO:0008152", "IDA"), AnnotationRecord("P", "GO:0006412", "IDA")]
    assert aggregate_by_protein(recs, graph, d) == {"P": {0, 1}}
    c = Counter()
    assert aggregate_by_protein([AnnotationRecord("Q", "GO:0008150", "IDA")], graph, d, c) == {}
    assert c["empty_label_set"] == 1


def test_aggregate_random_against_dfs_union():
    rng = np.random.default_rng(11)
    text, parents = random_dag(20, rng)
    g = parse_obo(text)
    d = top_level_terms(g, "biological_process")
    terms = list(parents)
    recs = [AnnotationRecord(f"P{rng.integers(8)}", terms[rng.integers(20)], "IDA")
            for _ in range(50)]
    expected: dict[str, set[int]] = {}
    for r in recs:
        closure = naive_ancestors(parents, r.go_term) | {r.go_term}
        expected.setdefault(r.protein_id, set()).update(
            i for i, t in enumerate(d.term_ids) if t in closure)
    expected = {p: s for p, s in expected.items() if s}
    got = aggregate_by_protein(recs, g, d)
    assert got == expected
    assert len(got) <= len({r.protein_id for r in recs})


@pytest.mark.parametrize("text,expected,dropped", [
    (">sp|P12345|X\nACDE\nFGH", {"P12345": "ACDEFGH"}, 0),
    (">P1\nacd", {"P1": "ACD"}, 0),
    (">P1\nAC1E", {}, 1),
])
def test_fasta_small_cases(text, expected, dropped):
    c = Counter()
    assert parse_fasta(text, counters=c) == expected
    assert c["fasta_illegal_symbol"] == dropped


def test_build_small_cases():
    d = TermDictionary("molecular_function", ("GO:0000001", "GO:0000002", "GO:0000003",
                                              "GO:0000004"), ("a", "b", "c", "d"))
    ds = build_dataset({"P1": {0, 2}, "P2": {1}}, {"P1": "MKV"}, d, max_len=5)
    assert len(ds) == 1 and ds.labels.tolist() == [[1, 0, 1, 0]]


def test_build_random_against_scripted_join():
    rng = np.random.default_rng(5)
    d = TermDictionary("molecular_function", tuple(f"GO:{i:07d}" for i in range(6)),
                       tuple("x" * 6))
    agg = {f"P{i:03d}": set(rng.choice(6, rng.integers(1, 4), replace=False).tolist())
           for i in range(30)}
    seqs = {f"P{i:03d}": "".join(rng.choice(list("ACDEFGHIK"), rng.integers(3, 12)))
            for i in range(0, 40, 2)}
    ds = build_dataset(agg, seqs, d, max_len=8)
    joined = sorted(set(agg) & set(seqs))
    assert ds.protein_ids == joined
    oracle = np.array([[int(j in agg[p]) for j in range(6)] for p in joined])
    np.testing.assert_array_equal(ds.labels, oracle)
    assert ds.counters["missing_sequence"] == 15
