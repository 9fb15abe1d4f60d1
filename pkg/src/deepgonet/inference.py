"""Sequence -> top-level GO terms via threshold and dictionary lookup."""

from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from .encoding import DEFAULT_ALPHABET, Alphabet, encode_sequence
from .errors import CheckpointError, EncodingError
from .model import Checkpoint, Model


@dataclass
class Prediction:
    protein_id: str
    terms: list[tuple[str, str, float]] = field(default_factory=list)
    threshold: float = 0.5
    error: str | None = None


def lookup_terms(probs: np.ndarray, term_ids, names, threshold: float,
                 min_one: bool = False) -> list[tuple[str, str, float]]:
    """Indices whose probability exceeds ``threshold``, mapped through the dictionary.

    Sorted by descending probability, ties broken by index.
    """
    hits = [i for i in range(len(probs)) if probs[i] > threshold]
    if not hits and min_one:
        hits = [int(np.argmax(probs))]
    hits.sort(key=lambda i: (-float(probs[i]), i))
    return [(term_ids[i], names[i], float(probs[i])) for i in hits]


def predict(ckpt: Checkpoint, sequences: Mapping[str, str], threshold: float = 0.5,
            min_one: bool = False, alphabet: Alphabet = DEFAULT_ALPHABET,
            batch_size: int = 64, model: Model | None = None) -> list[Prediction]:
    """One :class:`Prediction` per input sequence, in input order.

    A sequence with an illegal residue gets an ``error`` entry; the rest
    are unaffected. ``min_one`` forces the single best term when nothing
    clears the threshold.
    """
    if alphabet.hash != ckpt.model_config.alphabet_hash:
        raise CheckpointError("checkpoint was trained with a different alphabet")
    model = model or ckpt.to_model()
    cfg = model.config
    preds: list[Prediction] = []
    good: list[tuple[int, np.ndarray, np.ndarray]] = []
    for pid, seq in sequences.items():
        pred = Prediction(pid, threshold=threshold)
        try:
            enc = encode_sequence(seq.upper(), alphabet, cfg.max_len)
        except EncodingError as exc:
            pred.error = str(exc)
        else:
            good.append((len(preds), enc.indices, enc.mask))
        preds.append(pred)
    if good:
        idx = np.stack([g[1] for g in good])
        mask = np.stack([g[2] for g in good])
        probs = model.predict_proba(idx, mask, batch_size)
        d = ckpt.dictionary
        for (slot, _, _), row in zip(good, probs):
            preds[slot].terms = lookup_terms(row, d.term_ids, d.names, threshold, min_one)
    return preds


def format_tsv(preds: list[Prediction]) -> str:
    """Summary line per protein followed by its term lines.

    Summary: ``#protein_id<TAB>n_terms<TAB>status``; terms:
    ``protein_id<TAB>GO:accession<TAB>name<TAB>probability``.
    """
    lines = []
    for p in preds:
        status = "ok" if p.error is None else f"error: {p.error}"
        lines.append(f"#{p.protein_id}\t{len(p.terms)}\t{status}")
        lines.extend(f"{p.protein_id}\t{t}\t{n}\t{prob:.6f}" for t, n, prob in p.terms)
    return "\n".join(lines) + "\n" if lines else ""


def format_json(preds: list[Prediction]) -> str:
    return json.dumps([
        {"protein_id": p.protein_id, "threshold": p.threshold, "error": p.error,
         "terms": [{"term": t, "name": n, "probability": prob} for t, n, prob in p.terms]}
        for p in preds
    ], indent=2) + "\n"
