"""Annotation TSV and FASTA ingestion, evidence filtering, per-protein aggregation."""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np

from . import container
from .encoding import DEFAULT_ALPHABET, Alphabet, encode_batch, encode_labels
from .errors import DatasetError, DomainMismatchError, IngestionError, TermLookupError
from .ontology import GO_ID_RE, OntologyGraph, TermDictionary, map_to_top_level

log = logging.getLogger(__name__)

EXPERIMENTAL_CODES = frozenset({"EXP", "IDA", "IPI", "IMP", "IGI", "IEP", "TAS", "IC"})
STRICT_EXPERIMENTAL_CODES = frozenset({"EXP", "IDA", "IPI", "IMP", "IGI", "IEP"})

DEFAULT_COLUMNS = {
    "protein": "GENE PRODUCT ID",
    "term": "GO TERM",
    "evidence": "GO EVIDENCE CODE",
    "qualifier": "QUALIFIER",
}


@dataclass(frozen=True)
class AnnotationRecord:
    protein_id: str
    go_term: str
    evidence_code: str
    qualifier: str | None = None


def _text(data: bytes | str) -> str:
    return data.decode("utf-8") if isinstance(data, bytes) else data


def parse_annotation_table(data: bytes | str, columns: Mapping[str, str] | None = None,
                           counters: Counter | None = None) -> list[AnnotationRecord]:
    """Read a QuickGO-style TSV export.

    ``columns`` overrides the header names for the keys protein, term,
    evidence and qualifier. Rows qualified with NOT are dropped; rows with a
    bad accession, evidence code or column count are counted as malformed.
    """
    cols = {**DEFAULT_COLUMNS, **(columns or {})}
    counters = counters if counters is not None else Counter()
    reader = csv.reader(io.StringIO(_text(data)), delimiter="\t")
    header = next(reader, None)
    if header is None:
        raise IngestionError(f"annotation table is empty; missing column {cols['protein']!r}")
    header = [h.strip() for h in header]
    idx = {}
    for key in ("protein", "term", "evidence"):
        if cols[key] not in header:
            raise IngestionError(f"annotation table missing required column {cols[key]!r}")
        idx[key] = header.index(cols[key])
    q_idx = header.index(cols["qualifier"]) if cols["qualifier"] in header else None

    records = []
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        counters["rows"] += 1
        if len(row) < len(header):
            counters["malformed"] += 1
            continue
        protein = row[idx["protein"]].strip()
        term = row[idx["term"]].strip()
        code = row[idx["evidence"]].strip()
        qualifier = row[q_idx].strip() if q_idx is not None else None
        if (not protein or not GO_ID_RE.match(term) or not code
                or not (code.isascii() and code.isalpha() and code.isupper())):
            counters["malformed"] += 1
            continue
        if qualifier and "NOT" in qualifier.upper().split("|"):
            counters["negated"] += 1
            continue
        records.append(AnnotationRecord(protein, term, code, qualifier or None))
    counters["records"] += len(records)
    return records


def filter_experimental(records: Iterable[AnnotationRecord],
                        whitelist: Iterable[str] = EXPERIMENTAL_CODES) -> list[AnnotationRecord]:
    allowed = frozenset(whitelist)
    return [r for r in records if r.evidence_code in allowed]


def aggregate_by_protein(records: Iterable[AnnotationRecord], graph: OntologyGraph,
                         dictionary: TermDictionary,
                         counters: Counter | None = None) -> dict[str, set[int]]:
    """Union of top-level indices per protein; proteins with an empty union are dropped."""
    counters = counters if counters is not None else Counter()
    per_protein: dict[str, set[int]] = {}
    for rec in records:
        if rec.go_term not in graph:
            counters["unresolved_term"] += 1
            continue
        term = graph.term(rec.go_term)
        if term.is_obsolete:
            counters["obsolete_term"] += 1
            continue
        try:
            indices = map_to_top_level(graph, term.id, dictionary)
        except DomainMismatchError:
            counters["other_namespace"] += 1
            continue
        except TermLookupError:
            counters["unresolved_term"] += 1
            continue
        per_protein.setdefault(rec.protein_id, set()).update(indices)
    out = {p: s for p, s in per_protein.items() if s}
    counters["empty_label_set"] += len(per_protein) - len(out)
    return out


def _accession_from_header(header: str) -> str:
    if "|" in header:
        fields = header.split("|")
        if len(fields) >= 2 and fields[1].strip():
            return fields[1].strip()
    return header.split()[0] if header.split() else ""


def read_fasta(data: bytes | str) -> list[tuple[str, str]]:
    """Raw (accession, uppercased sequence) records in file order, unvalidated."""
    entries: list[tuple[str, list[str]]] = []
    for raw in _text(data).splitlines():
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        if line.startswith(">"):
            entries.append((_accession_from_header(line[1:].strip()), []))
        elif entries:
            entries[-1][1].append("".join(line.split()))
        else:
            raise IngestionError("FASTA sequence data before first header")
    return [(acc, "".join(chunks).upper()) for acc, chunks in entries]


def parse_fasta(data: bytes | str, alphabet: Alphabet = DEFAULT_ALPHABET,
                counters: Counter | None = None) -> dict[str, str]:
    """Accession -> uppercased sequence. Illegal residues drop the record."""
    counters = counters if counters is not None else Counter()
    out: dict[str, str] = {}
    for acc, seq in read_fasta(data):
        if not acc:
            counters["fasta_bad_header"] += 1
            continue
        if not alphabet.is_valid(seq):
            counters["fasta_illegal_symbol"] += 1
            continue
        if acc in out:
            counters["fasta_duplicate"] += 1
            log.warning("duplicate FASTA accession %s; keeping the last record", acc)
        out[acc] = seq
    return out


@dataclass
class Dataset:
    """Encoded sequences and binary targets for one GO namespace."""

    protein_ids: list[str]
    indices: np.ndarray  # int64 B x max_len
    mask: np.ndarray  # uint8 B x max_len
    lengths: np.ndarray  # int64 B, length before truncation
    labels: np.ndarray  # uint8 B x K
    dictionary: TermDictionary
    max_len: int
    alphabet_hash: str = DEFAULT_ALPHABET.hash
    counters: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.protein_ids)

    def subset(self, rows: np.ndarray | list[int]) -> Dataset:
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset([self.protein_ids[i] for i in rows], self.indices[rows],
                       self.mask[rows], self.lengths[rows], self.labels[rows],
                       self.dictionary, self.max_len, self.alphabet_hash, dict(self.counters))

    def manifest(self) -> dict:
        cardinality = Counter(int(c) for c in self.labels.sum(axis=1))
        return {
            "namespace": self.dictionary.namespace,
            "rows": len(self),
            "labels": self.dictionary.size,
            "max_len": self.max_len,
            "alphabet_hash": self.alphabet_hash,
            "label_cardinality_histogram": {str(k): cardinality[k] for k in sorted(cardinality)},
            "label_frequency": {t: int(n) for t, n in
                                zip(self.dictionary.term_ids, self.labels.sum(axis=0))},
            "truncated_sequences": int((self.lengths > self.max_len).sum()),
            "counters": dict(sorted(self.counters.items())),
        }


def build_dataset(aggregated: Mapping[str, set[int]], sequences: Mapping[str, str],
                  dictionary: TermDictionary, max_len: int = 1000,
                  alphabet: Alphabet = DEFAULT_ALPHABET,
                  counters: Counter | None = None) -> Dataset:
    if max_len < 1:
        raise DatasetError(f"max_len must be >= 1, got {max_len}")
    counters = counters if counters is not None else Counter()
    joined = sorted(p for p in aggregated if p in sequences)
    counters["missing_sequence"] += len(aggregated) - len(joined)
    if not joined:
        raise DatasetError("no protein has both annotations and a sequence")
    idx, mask, lengths = encode_batch((sequences[p] for p in joined), alphabet, max_len)
    labels = np.stack([encode_labels(aggregated[p], dictionary.size) for p in joined])
    return Dataset(joined, idx, mask, lengths, labels, dictionary, max_len,
                   alphabet.hash, dict(counters))


def save_dataset(dataset: Dataset, path) -> None:
    header = {
        "kind": "dataset",
        "dictionary": dataset.dictionary.to_json(),
        "protein_ids": dataset.protein_ids,
        "max_len": dataset.max_len,
        "alphabet_hash": dataset.alphabet_hash,
        "counters": dict(sorted(dataset.counters.items())),
    }
    container.write(path, header, {
        "indices": dataset.indices.astype(np.uint8),
        "mask": dataset.mask.astype(np.uint8),
        "lengths": dataset.lengths.astype(np.int64),
        "labels": dataset.labels.astype(np.uint8),
    })


def load_dataset(path) -> Dataset:
    header, arrays = container.read(path, kind="dataset")
    return Dataset(list(header["protein_ids"]), arrays["indices"].astype(np.int64),
                   arrays["mask"], arrays["lengths"], arrays["labels"],
                   TermDictionary.from_json(header["dictionary"]), int(header["max_len"]),
                   header["alphabet_hash"], dict(header.get("counters", {})))
