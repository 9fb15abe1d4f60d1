from pathlib import Path

import numpy as np
import pytest

from deepgonet.annotations import Dataset
from deepgonet.encoding import encode_batch
from deepgonet.model import ModelConfig
from deepgonet.ontology import TermDictionary

DATA = Path(__file__).parent / "data"

STANDARD = "ACDEFGHIKLMNPQRSTVWY"
MOTIFS = ("WWC", "HHM", "KPY", "FRD", "NQE")


@pytest.fixture
def data_dir() -> Path:
    return DATA


def tiny_config(output_dim=5, max_len=24, **kw) -> ModelConfig:
    base = dict(embed_dim=6, kernel_sizes=(3, 7, 11), conv_filters=3, gru_hidden=4,
                dense_hidden=7, output_dim=output_dim, max_len=max_len)
    base.update(kw)
    return ModelConfig(**base)


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f() w.r.t. every entry of x (modified in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def motif_sequences(n=20, k=5, max_len=40, seed=7):
    """Random residues with a planted 3-mer per positive label; negatives never contain it."""
    rng = np.random.default_rng(seed)
    seqs, labels = [], []
    for _ in range(n):
        lab = (rng.random(k) < 0.4).astype(np.uint8)
        if lab.sum() == 0:
            lab[rng.integers(k)] = 1
        while True:
            length = int(rng.integers(max_len // 2, max_len + 1))
            s = list(rng.choice(list(STANDARD), length))
            for j in np.flatnonzero(lab):
                p = int(rng.integers(0, length - 3))
                s[p:p + 3] = MOTIFS[j]
            seq = "".join(s)[:length]
            if all((m in seq) == bool(lab[j]) for j, m in enumerate(MOTIFS[:k])):
                break
        seqs.append(seq)
        labels.append(lab)
    return seqs, np.array(labels)


def motif_dataset(n=20, k=5, max_len=40, seed=7, namespace="molecular_function") -> Dataset:
    seqs, labels = motif_sequences(n, k, max_len, seed)
    idx, mask, lengths = encode_batch(seqs, max_len=max_len)
    d = TermDictionary(namespace, tuple(f"GO:{i + 1:07d}" for i in range(k)),
                       tuple(f"term {i}" for i in range(k)))
    return Dataset([f"P{i:05d}" for i in range(n)], idx, mask, lengths, labels, d, max_len)


def random_dag(n: int, rng: np.random.Generator, max_parents: int = 3):
    """OBO text for a random single-namespace DAG; term i only points to lower ids."""
    ids = [f"GO:{i + 1:07d}" for i in range(n)]
    parents = {ids[0]: []}
    lines = ["format-version: 1.2", ""]
    for i in range(n):
        ps = []
        if i > 0:
            k = int(rng.integers(1, max_parents + 1))
            ps = sorted({ids[int(j)] for j in rng.integers(0, i, size=k)})
        parents[ids[i]] = ps
        lines += ["[Term]", f"id: {ids[i]}", f"name: t{i}", "namespace: biological_process"]
        lines += [f"is_a: {p} ! t" for p in ps]
        lines.append("")
    return "\n".join(lines), parents


def naive_ancestors(parents: dict, term: str) -> set:
    out = set()

    def visit(t):
        for p in parents[t]:
            out.add(p)
            visit(p)
    visit(term)
    return out


_acceptance: dict[int, tuple[str, str, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        number, title = marker.args
        _acceptance[number] = (title, status, rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, status, duration = _acceptance[number]
        terminalreporter.write_line(f"{status:4}  criterion {number}: {title} ({duration:.1f} s)")
