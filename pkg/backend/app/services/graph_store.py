"""
In-memory Triple Store

Holds the lifted IFC facts, the geometric facts and everything the forward
chainer derives. Terms are interned to integers; three nested indexes
(subject-first, predicate-first, object-first) serve pattern lookups.

Index choice for a pattern: the index keyed on the leftmost bound position in
(subject, predicate, object) order; a pattern with no bound position scans the
subject index.
"""
import threading
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Set, Tuple, Union

import structlog

from app.utils.namespaces import XSD, iri_sort_key

logger = structlog.get_logger()


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Iri:
    """Absolute IRI"""

    value: str

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class BNode:
    """Blank node, local to one graph"""

    id: int


class LiteralKind(str, Enum):
    TEXT = "text"
    DECIMAL = "decimal"
    INTEGER = "integer"
    BOOLEAN = "boolean"


_DATATYPES = {
    LiteralKind.DECIMAL: XSD + "decimal",
    LiteralKind.INTEGER: XSD + "integer",
    LiteralKind.BOOLEAN: XSD + "boolean",
}


class Literal:
    """
    Literal value in object position.

    Numeric literals compare by value within their kind: decimal "9.0" equals
    decimal "9.000000", but never integer 9 or text "9".
    """

    __slots__ = ("lexical", "kind", "_key")

    def __init__(self, lexical: str, kind: LiteralKind = LiteralKind.TEXT):
        self.lexical = lexical
        self.kind = LiteralKind(kind)
        key: Any
        if self.kind in (LiteralKind.DECIMAL, LiteralKind.INTEGER):
            try:
                number = Decimal(lexical)
            except InvalidOperation as e:
                raise ValueError(f"{lexical!r} is not a {self.kind.value} literal") from e
            if not number.is_finite():
                raise ValueError(f"{lexical!r} is not a finite number")
            if self.kind is LiteralKind.INTEGER and number != number.to_integral_value():
                raise ValueError(f"{lexical!r} is not an integer literal")
            key = number
        elif self.kind is LiteralKind.BOOLEAN:
            if lexical not in ("true", "false"):
                raise ValueError(f"{lexical!r} is not a boolean literal")
            key = lexical
        else:
            key = lexical
        self._key = (self.kind, key)

    @classmethod
    def text(cls, value: str) -> "Literal":
        return cls(value, LiteralKind.TEXT)

    @classmethod
    def integer(cls, value: int) -> "Literal":
        return cls(str(int(value)), LiteralKind.INTEGER)

    @classmethod
    def boolean(cls, value: bool) -> "Literal":
        return cls("true" if value else "false", LiteralKind.BOOLEAN)

    @classmethod
    def decimal(cls, value: Union[Decimal, float, int, str], places: Optional[int] = None) -> "Literal":
        """Decimal literal; ``places`` fixes the number of decimals in the lexical form"""
        if isinstance(value, Decimal):
            number = value
        elif isinstance(value, float):
            number = Decimal(repr(float(value)))
        else:
            number = Decimal(str(value))
        if places is not None:
            text = f"{number:.{places}f}"
            if text.startswith("-") and Decimal(text) == 0:
                text = text[1:]
            return cls(text, LiteralKind.DECIMAL)
        text = format(number.normalize(), "f")
        if "." not in text:
            text += ".0"
        return cls(text, LiteralKind.DECIMAL)

    @property
    def is_numeric(self) -> bool:
        return self.kind in (LiteralKind.DECIMAL, LiteralKind.INTEGER)

    @property
    def value(self) -> Union[str, Decimal, bool]:
        """Python value: Decimal for numbers, bool for booleans, str for text"""
        if self.is_numeric:
            return self._key[1]
        if self.kind is LiteralKind.BOOLEAN:
            return self.lexical == "true"
        return self.lexical

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Literal) and self._key == other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __repr__(self) -> str:
        return f"Literal({self.lexical!r}, {self.kind.value})"


Term = Union[Iri, Literal, BNode]


@dataclass(frozen=True)
class Var:
    """Named variable in a pattern (written ?name in rules)"""

    name: str

    def __str__(self) -> str:
        return f"?{self.name}"


PatternTerm = Union[Term, Var]


@dataclass(frozen=True)
class Triple:
    """Subject - Predicate - Object fact"""

    subject: Union[Iri, BNode]
    predicate: Iri
    object: Term

    def __post_init__(self) -> None:
        if not isinstance(self.subject, (Iri, BNode)):
            raise TypeError(f"subject must be an IRI or blank node, got {self.subject!r}")
        if not isinstance(self.predicate, Iri):
            raise TypeError(f"predicate must be an IRI, got {self.predicate!r}")


@dataclass(frozen=True)
class TriplePattern:
    """Triple with variables allowed in any position; repeated variables join"""

    subject: PatternTerm
    predicate: PatternTerm
    object: PatternTerm

    @property
    def positions(self) -> Tuple[PatternTerm, PatternTerm, PatternTerm]:
        return (self.subject, self.predicate, self.object)

    def variables(self) -> Set[str]:
        return {t.name for t in self.positions if isinstance(t, Var)}

    def constant_count(self) -> int:
        return sum(1 for t in self.positions if not isinstance(t, Var))

    def substitute(self, binding: Mapping[str, Any]) -> "TriplePattern":
        """Replace bound variables by their Term values"""

        def sub(term: PatternTerm) -> PatternTerm:
            if isinstance(term, Var):
                value = binding.get(term.name)
                if isinstance(value, (Iri, Literal, BNode)):
                    return value
            return term

        return TriplePattern(sub(self.subject), sub(self.predicate), sub(self.object))

    def instantiate(self, binding: Mapping[str, Any]) -> Optional[Triple]:
        """Ground triple for a binding, None when the result is not a valid triple"""
        ground = self.substitute(binding)
        if any(isinstance(t, Var) for t in ground.positions):
            return None
        try:
            return Triple(ground.subject, ground.predicate, ground.object)  # type: ignore[arg-type]
        except TypeError:
            return None


Binding = Dict[str, Term]


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------

_Index = Dict[int, Dict[int, Set[int]]]


class Graph:
    """Indexed set of triples (single default graph)"""

    def __init__(self, triples: Optional[Iterable[Triple]] = None):
        self._ids: Dict[Term, int] = {}
        self._terms: List[Term] = []
        self._spo: _Index = {}
        self._pos: _Index = {}
        self._osp: _Index = {}
        self._size = 0
        self._next_bnode = 1
        self._write_lock = threading.Lock()
        if triples is not None:
            for triple in triples:
                self.insert(triple)

    # ----- interning -----

    def _intern(self, term: Term) -> int:
        term_id = self._ids.get(term)
        if term_id is None:
            term_id = len(self._terms)
            self._ids[term] = term_id
            self._terms.append(term)
            if isinstance(term, BNode) and term.id >= self._next_bnode:
                self._next_bnode = term.id + 1
        return term_id

    def _lookup(self, term: PatternTerm) -> Optional[int]:
        return None if isinstance(term, Var) else self._ids.get(term, -1)

    def new_bnode(self) -> BNode:
        """Blank node not used anywhere in this graph yet"""
        with self._write_lock:
            node = BNode(self._next_bnode)
            self._next_bnode += 1
            return node

    # ----- writes -----

    def insert(self, triple: Triple) -> bool:
        """
        Add a triple to all three indexes.

        Returns:
            True iff the triple was not present before
        """
        with self._write_lock:
            s = self._intern(triple.subject)
            p = self._intern(triple.predicate)
            o = self._intern(triple.object)
            objects = self._spo.setdefault(s, {}).setdefault(p, set())
            if o in objects:
                return False
            objects.add(o)
            self._pos.setdefault(p, {}).setdefault(o, set()).add(s)
            self._osp.setdefault(o, {}).setdefault(s, set()).add(p)
            self._size += 1
            return True

    def insert_many(self, triples: Iterable[Triple]) -> int:
        """Insert several triples, returning how many were new"""
        return sum(1 for t in triples if self.insert(t))

    def remove_matching(self, pattern: TriplePattern) -> int:
        """
        Delete every triple matching the pattern from all indexes.

        Returns:
            Number of triples removed
        """
        with self._write_lock:
            doomed = list(self._match_ids(pattern))
            for s, p, o in doomed:
                _discard(self._spo, s, p, o)
                _discard(self._pos, p, o, s)
                _discard(self._osp, o, s, p)
            self._size -= len(doomed)
        if doomed:
            logger.debug("triples_removed", count=len(doomed))
        return len(doomed)

    # ----- reads -----

    def count(self) -> int:
        """Number of distinct triples"""
        return self._size

    def __len__(self) -> int:
        return self._size

    def __contains__(self, triple: Triple) -> bool:
        s, p, o = (self._ids.get(t) for t in (triple.subject, triple.predicate, triple.object))
        if s is None or p is None or o is None:
            return False
        return o in self._spo.get(s, {}).get(p, ())

    def _match_ids(self, pattern: TriplePattern) -> Iterator[Tuple[int, int, int]]:
        s, p, o = (self._lookup(t) for t in pattern.positions)
        if -1 in (s, p, o):
            return
        if s is not None:
            by_p = self._spo.get(s, {})
            predicates = [p] if p is not None else list(by_p)
            for pi in predicates:
                objects = by_p.get(pi, ())
                if o is not None:
                    if o in objects:
                        yield (s, pi, o)
                else:
                    for oi in list(objects):
                        yield (s, pi, oi)
        elif p is not None:
            by_o = self._pos.get(p, {})
            objects = [o] if o is not None else list(by_o)
            for oi in objects:
                for si in list(by_o.get(oi, ())):
                    yield (si, p, oi)
        elif o is not None:
            for si, predicates in list(self._osp.get(o, {}).items()):
                for pi in list(predicates):
                    yield (si, pi, o)
        else:
            for si, by_p in list(self._spo.items()):
                for pi, objects in list(by_p.items()):
                    for oi in list(objects):
                        yield (si, pi, oi)

    def match_pattern(self, pattern: TriplePattern) -> List[Binding]:
        """
        Bindings for every triple matching the pattern.

        Constants match exactly (numeric literals by value and kind); a
        variable repeated inside the pattern must bind the same term in each
        position. A fully constant pattern yields [{}] when present, [] otherwise.
        """
        results: List[Binding] = []
        names = [t.name if isinstance(t, Var) else None for t in pattern.positions]
        for ids in self._match_ids(pattern):
            binding: Binding = {}
            consistent = True
            for name, term_id in zip(names, ids):
                if name is None:
                    continue
                term = self._terms[term_id]
                previous = binding.get(name)
                if previous is not None and previous != term:
                    consistent = False
                    break
                binding[name] = term
            if consistent:
                results.append(binding)
        return results

    def triples(self, pattern: Optional[TriplePattern] = None) -> Iterator[Triple]:
        """Iterate triples, optionally restricted to a pattern"""
        wildcard = pattern or TriplePattern(Var("s"), Var("p"), Var("o"))
        for s, p, o in self._match_ids(wildcard):
            yield Triple(self._terms[s], self._terms[p], self._terms[o])  # type: ignore[arg-type]

    def objects(self, subject: Term, predicate: Iri) -> List[Term]:
        return [b["o"] for b in self.match_pattern(TriplePattern(subject, predicate, Var("o")))]

    def subjects(self, predicate: Iri, obj: Term) -> List[Term]:
        return [b["s"] for b in self.match_pattern(TriplePattern(Var("s"), predicate, obj))]

    def value(self, subject: Term, predicate: Iri) -> Optional[Term]:
        """One object for (subject, predicate), the smallest when several exist"""
        found = self.objects(subject, predicate)
        if not found:
            return None
        return min(found, key=term_text)

    def query(self, patterns: Iterable[TriplePattern], seed: Optional[Binding] = None) -> List[Binding]:
        """
        Evaluate a basic graph pattern by index nested loops.

        Args:
            patterns: Conjunctive patterns, evaluated in the given order
            seed: Bindings applied before the first pattern

        Returns:
            One binding per solution (duplicates possible when patterns overlap)
        """
        rows: List[Binding] = [dict(seed or {})]
        for pattern in patterns:
            next_rows: List[Binding] = []
            for row in rows:
                for found in self.match_pattern(pattern.substitute(row)):
                    merged = dict(row)
                    merged.update(found)
                    next_rows.append(merged)
            rows = next_rows
            if not rows:
                break
        return rows


def _discard(index: _Index, a: int, b: int, c: int) -> None:
    inner = index.get(a)
    if inner is None:
        return
    leaves = inner.get(b)
    if leaves is None:
        return
    leaves.discard(c)
    if not leaves:
        del inner[b]
        if not inner:
            del index[a]


# ---------------------------------------------------------------------------
# N-Triples
# ---------------------------------------------------------------------------


def _escape(text: str) -> str:
    return (
        text.replace("\\", "\\\\")
        .replace('"', '\\"')
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def term_text(term: Term) -> str:
    """N-Triples rendering of a term"""
    if isinstance(term, Iri):
        return f"<{term.value}>"
    if isinstance(term, BNode):
        return f"_:b{term.id}"
    if term.kind is LiteralKind.TEXT:
        return f'"{_escape(term.lexical)}"'
    return f'"{_escape(term.lexical)}"^^<{_DATATYPES[term.kind]}>'


def term_sort_key(term: Term) -> Any:
    """Ordering used for reports and tie-breaks (natural order for IRIs)"""
    if isinstance(term, Iri):
        return (0, iri_sort_key(term.value))
    return (1, term_text(term))


def serialize_ntriples(graph: Graph) -> str:
    """
    Canonical N-Triples: one line per triple, sorted by subject, predicate and
    object text. Byte-identical for equal graphs.
    """
    lines = sorted(
        (term_text(t.subject), term_text(t.predicate), term_text(t.object)) for t in graph.triples()
    )
    if not lines:
        return ""
    return "".join(f"{s} {p} {o} .\n" for s, p, o in lines)
