"""Gene Ontology OBO parsing, is_a closure and the top-level label space."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from . import NAMESPACES
from .errors import (
    DomainMismatchError,
    OboParseError,
    OntologyValidationError,
    TermLookupError,
)

GO_ID_RE = re.compile(r"^GO:\d{7}$")


@dataclass
class GoTerm:
    id: str
    name: str = ""
    namespace: str | None = None
    is_obsolete: bool = False
    is_a_parents: list[str] = field(default_factory=list)
    alt_ids: list[str] = field(default_factory=list)
    # (relation, target) pairs such as part_of; kept but never used for closure
    relationships: list[tuple[str, str]] = field(default_factory=list)


class OntologyGraph:
    """Validated is_a DAG. Treat as read-only once constructed."""

    def __init__(self, terms: dict[str, GoTerm], aliases: dict[str, str] | None = None,
                 header: dict[str, str] | None = None):
        self.terms = terms
        self.aliases = dict(aliases or {})
        self.header = dict(header or {})
        self.roots: dict[str, str] = {}
        self._ancestors: dict[str, frozenset[str]] = {}
        self._validate()

    def _validate(self) -> None:
        for term in self.terms.values():
            if term.is_obsolete:
                continue
            if term.namespace is None:
                raise OntologyValidationError(f"{term.id} has no namespace")
            if term.namespace not in NAMESPACES:
                raise OntologyValidationError(
                    f"{term.id} has unknown namespace {term.namespace!r}")
            for parent_id in term.is_a_parents:
                parent = self.terms.get(parent_id)
                if parent is None:
                    raise OntologyValidationError(
                        f"{term.id} is_a unknown term {parent_id}")
                if parent.is_obsolete:
                    raise OntologyValidationError(
                        f"{term.id} is_a obsolete term {parent_id}")
                if parent.namespace != term.namespace:
                    raise OntologyValidationError(
                        f"{term.id} ({term.namespace}) is_a {parent_id} "
                        f"({parent.namespace}) across namespaces")

        self._check_acyclic()

        roots: dict[str, list[str]] = {}
        for term in self.terms.values():
            if not term.is_obsolete and not term.is_a_parents:
                roots.setdefault(term.namespace, []).append(term.id)
        for ns, ids in roots.items():
            if len(ids) != 1:
                raise OntologyValidationError(
                    f"namespace {ns} has {len(ids)} roots: {', '.join(sorted(ids)[:5])}")
            self.roots[ns] = ids[0]

    def _check_acyclic(self) -> None:
        # iterative three-colour DFS; GRAY on the stack means a back edge
        WHITE, GRAY, BLACK = 0, 1, 2
        colour = {tid: WHITE for tid, t in self.terms.items() if not t.is_obsolete}
        for start in colour:
            if colour[start] != WHITE:
                continue
            stack = [(start, iter(self.terms[start].is_a_parents))]
            colour[start] = GRAY
            while stack:
                node, parents = stack[-1]
                for parent in parents:
                    if colour[parent] == GRAY:
                        raise OntologyValidationError(
                            f"is_a cycle detected through {parent}")
                    if colour[parent] == WHITE:
                        colour[parent] = GRAY
                        stack.append((parent, iter(self.terms[parent].is_a_parents)))
                        break
                else:
                    colour[node] = BLACK
                    stack.pop()

    def resolve(self, term_id: str) -> str:
        """Canonical accession for ``term_id`` (which may be an alt_id)."""
        if term_id in self.terms:
            return term_id
        if term_id in self.aliases:
            return self.aliases[term_id]
        raise TermLookupError(f"unknown GO term {term_id}")

    def __contains__(self, term_id: str) -> bool:
        return term_id in self.terms or term_id in self.aliases

    def __len__(self) -> int:
        return len(self.terms)

    def term(self, term_id: str) -> GoTerm:
        return self.terms[self.resolve(term_id)]

    def namespace_counts(self, include_obsolete: bool = False) -> dict[str, int]:
        counts = Counter(t.namespace for t in self.terms.values()
                         if include_obsolete or not t.is_obsolete)
        return {ns: counts.get(ns, 0) for ns in NAMESPACES}

    @property
    def obsolete_count(self) -> int:
        return sum(t.is_obsolete for t in self.terms.values())

    @property
    def edge_count(self) -> int:
        return sum(len(t.is_a_parents) for t in self.terms.values() if not t.is_obsolete)


@dataclass(frozen=True)
class TermDictionary:
    """Ordered index <-> top-level term bijection for one namespace."""

    namespace: str
    term_ids: tuple[str, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "term_ids", tuple(self.term_ids))
        names = tuple(self.names) if self.names else ("",) * len(self.term_ids)
        if len(names) != len(self.term_ids):
            raise ValueError("names and term_ids differ in length")
        object.__setattr__(self, "names", names)
        if len(set(self.term_ids)) != len(self.term_ids):
            raise ValueError("duplicate term ids in dictionary")

    @property
    def size(self) -> int:
        return len(self.term_ids)

    def __len__(self) -> int:
        return len(self.term_ids)

    @property
    def entries(self) -> list[tuple[int, str]]:
        return list(enumerate(self.term_ids))

    def index_of(self, term_id: str) -> int:
        return self.term_ids.index(term_id)

    def to_tsv(self) -> str:
        return "".join(f"{i}\t{t}\t{n}\n" for i, (t, n) in enumerate(zip(self.term_ids, self.names)))

    def to_json(self) -> dict:
        return {"namespace": self.namespace, "term_ids": list(self.term_ids),
                "names": list(self.names)}

    @classmethod
    def from_json(cls, obj: dict) -> TermDictionary:
        return cls(obj["namespace"], tuple(obj["term_ids"]), tuple(obj.get("names") or ()))


def _text(data: bytes | str) -> str:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return data


def _strip_value(value: str) -> str:
    """Drop a trailing '! comment' and '{modifiers}' block from a tag value."""
    value = value.split(" !", 1)[0]
    if value.startswith("!"):
        return ""
    value = re.sub(r"\s*\{[^}]*\}\s*$", "", value)
    return value.strip()


def _accession(value: str, lineno: int, tag: str) -> str:
    acc = _strip_value(value).split()[0] if _strip_value(value) else ""
    if not GO_ID_RE.match(acc):
        raise OboParseError(f"malformed GO accession {acc!r} in {tag}", lineno)
    return acc


def parse_obo(data: bytes | str) -> OntologyGraph:
    """Parse OBO 1.2 text into a validated :class:`OntologyGraph`.

    Only ``[Term]`` stanzas are read; tags other than id, name, namespace,
    is_a, is_obsolete, alt_id and relationship are ignored.
    """
    text = _text(data)
    terms: dict[str, GoTerm] = {}
    aliases: dict[str, str] = {}
    header: dict[str, str] = {}
    current: GoTerm | None = None
    current_start = 0
    in_header = True
    in_term = False

    def finish():
        nonlocal current
        if current is None:
            return
        if current.id in terms:
            raise OboParseError(f"duplicate term {current.id}", current_start)
        terms[current.id] = current
        for alt in current.alt_ids:
            aliases[alt] = current.id
        current = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("!"):
            continue
        if line.startswith("[") and line.endswith("]"):
            if in_term and current is None:
                raise OboParseError("[Term] stanza without id", current_start)
            finish()
            in_header = False
            in_term = line == "[Term]"
            current_start = lineno
            continue
        if ":" not in line:
            if in_term or in_header:
                raise OboParseError(f"expected 'tag: value', got {line!r}", lineno)
            continue
        tag, value = line.split(":", 1)
        tag, value = tag.strip(), value.strip()
        if in_header:
            header.setdefault(tag, value)
            continue
        if not in_term:
            continue
        if tag == "id":
            if current is not None:
                raise OboParseError("second id tag in stanza", lineno)
            current = GoTerm(id=_accession(value, lineno, "id"))
            continue
        if current is None:
            raise OboParseError(f"tag {tag!r} before id in [Term] stanza", lineno)
        if tag == "name":
            current.name = value
        elif tag == "namespace":
            current.namespace = _strip_value(value)
        elif tag == "is_a":
            current.is_a_parents.append(_accession(value, lineno, "is_a"))
        elif tag == "is_obsolete":
            current.is_obsolete = _strip_value(value).lower() == "true"
        elif tag == "alt_id":
            current.alt_ids.append(_accession(value, lineno, "alt_id"))
        elif tag == "relationship":
            parts = _strip_value(value).split()
            if len(parts) >= 2:
                current.relationships.append((parts[0], parts[1]))
    if in_term and current is None:
        raise OboParseError("[Term] stanza without id", current_start)
    finish()

    for term in terms.values():
        if term.is_obsolete:
            term.is_a_parents = []
    for alt, canonical in list(aliases.items()):
        if alt in terms:
            del aliases[alt]
    return OntologyGraph(terms, aliases, header)


def load_obo(path: str | Path) -> OntologyGraph:
    return parse_obo(Path(path).read_bytes())


def _live_term(graph: OntologyGraph, term_id: str) -> GoTerm:
    term = graph.terms[graph.resolve(term_id)]
    if term.is_obsolete:
        raise TermLookupError(f"{term.id} is obsolete")
    return term


def ancestors(graph: OntologyGraph, term_id: str) -> frozenset[str]:
    """All is_a ancestors of ``term_id`` (excluding itself), memoized per graph."""
    start = _live_term(graph, term_id).id
    memo = graph._ancestors
    if start in memo:
        return memo[start]
    # post-order walk so every parent's closure exists before its child's
    stack = [(start, False)]
    while stack:
        node, expanded = stack.pop()
        if node in memo:
            continue
        parents = graph.terms[node].is_a_parents
        if expanded:
            acc: set[str] = set()
            for p in parents:
                acc.add(p)
                acc |= memo[p]
            memo[node] = frozenset(acc)
        else:
            stack.append((node, True))
            stack.extend((p, False) for p in parents if p not in memo)
    return memo[start]


def top_level_terms(graph: OntologyGraph, namespace: str) -> TermDictionary:
    if namespace not in graph.roots:
        raise OntologyValidationError(f"namespace {namespace} has no root")
    root = graph.roots[namespace]
    children = sorted(
        t.id for t in graph.terms.values()
        if not t.is_obsolete and root in t.is_a_parents
    )
    return TermDictionary(namespace, tuple(children),
                          tuple(graph.terms[c].name for c in children))


def map_to_top_level(graph: OntologyGraph, term_id: str, dictionary: TermDictionary) -> set[int]:
    term = _live_term(graph, term_id)
    if term.namespace != dictionary.namespace:
        raise DomainMismatchError(
            f"{term.id} is in {term.namespace}, dictionary is {dictionary.namespace}")
    closure = ancestors(graph, term.id) | {term.id}
    return {i for i, t in enumerate(dictionary.term_ids) if t in closure}
