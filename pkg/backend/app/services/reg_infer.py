"""
Semantic Pre-processor

Forward-chaining materialization of the regulation vocabulary over the lifted
graph, followed by pruning of triples no regulation reads.

Execution model:
    strata run in ascending order; inside a stratum the rewrite rules are
    applied until nothing new is added, then the stratum's aggregate rules
    run once. Rewrite antecedents carry no negation, so every stratum is
    monotone and terminates.

The rule set, prune list and namespace layers come from reg-vocab.json.
"""
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal, DivisionByZero, InvalidOperation
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import networkx as nx
import structlog

from app.core.config import settings
from app.core.exceptions import AggregateError, ConfigError, StratificationError
from app.models.vocab import JsonPattern, JsonTerm, VocabDocument
from app.services.graph_store import Binding, Graph, Iri, Literal, Term, TriplePattern, Var, term_sort_key
from app.utils.namespaces import expand_curie

logger = structlog.get_logger()


@dataclass(frozen=True)
class Param:
    """Named numeric parameter ($name) resolved at run time"""

    name: str


ComputeArg = Union[Var, Literal, Param]


@dataclass(frozen=True)
class Compute:
    """var := args[0] <op> args[1], evaluated with decimals"""

    var: str
    op: str
    args: Tuple[ComputeArg, ComputeArg]


_OPS = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
}


def _pattern_vars(patterns: Iterable[TriplePattern]) -> Set[str]:
    out: Set[str] = set()
    for pattern in patterns:
        out |= pattern.variables()
    return out


@dataclass(frozen=True)
class RewriteRule:
    """Antecedent patterns (shared variables join) -> consequent templates"""

    name: str
    antecedent: Tuple[TriplePattern, ...]
    consequent: Tuple[TriplePattern, ...]
    stratum: int = 0
    compute: Tuple[Compute, ...] = ()

    def __post_init__(self) -> None:
        bound = _pattern_vars(self.antecedent)
        for step in self.compute:
            for arg in step.args:
                if isinstance(arg, Var) and arg.name not in bound:
                    raise ConfigError(f"rule {self.name}: compute uses unbound ?{arg.name}")
            if step.op not in _OPS:
                raise ConfigError(f"rule {self.name}: unknown compute op {step.op!r}")
            bound.add(step.var)
        unbound = _pattern_vars(self.consequent) - bound
        if unbound:
            raise ConfigError(f"rule {self.name}: consequent variables not bound: {sorted(unbound)}")


class AggregateKind(str, Enum):
    MAX = "MAX"
    MIN = "MIN"


@dataclass(frozen=True)
class AggregateRule:
    """
    Pick the extremal ``value`` binding per ``by`` group and assert the
    consequent for it. Ties go to the smallest ``select`` IRI.
    """

    name: str
    group: Tuple[TriplePattern, ...]
    value: str
    kind: AggregateKind
    consequent: Tuple[TriplePattern, ...]
    select: str
    by: Optional[str] = None
    stratum: int = 1

    def __post_init__(self) -> None:
        bound = _pattern_vars(self.group)
        wanted = {self.value, self.select} | ({self.by} if self.by else set())
        missing = (wanted | _pattern_vars(self.consequent)) - bound
        if missing:
            raise ConfigError(f"aggregate {self.name}: variables not bound by the group: {sorted(missing)}")


Rule = Union[RewriteRule, AggregateRule]


# ---------------------------------------------------------------------------
# Vocabulary loading
# ---------------------------------------------------------------------------


def parse_json_term(value: JsonTerm, namespaces: Mapping[str, str]) -> Union[Term, Var]:
    """Pattern term from its reg-vocab.json spelling"""
    if isinstance(value, bool):
        return Literal.boolean(value)
    if isinstance(value, int):
        return Literal.integer(value)
    if isinstance(value, float):
        return Literal.decimal(value)
    if value.startswith("?"):
        return Var(value[1:])
    if len(value) >= 2 and value.startswith('"') and value.endswith('"'):
        return Literal.text(value[1:-1])
    try:
        return Iri(expand_curie(value, namespaces))
    except (KeyError, ValueError) as e:
        raise ConfigError(f"cannot read vocabulary term {value!r}: {e}") from e


def _pattern(raw: JsonPattern, namespaces: Mapping[str, str]) -> TriplePattern:
    return TriplePattern(*(parse_json_term(t, namespaces) for t in raw))


def _compute_arg(value: JsonTerm, namespaces: Mapping[str, str]) -> ComputeArg:
    if isinstance(value, str) and value.startswith("$"):
        return Param(value[1:])
    term = parse_json_term(value, namespaces)
    if isinstance(term, (Var, Literal)):
        return term
    raise ConfigError(f"compute argument {value!r} must be a variable, number or parameter")


def _strip_var(name: str) -> str:
    return name[1:] if name.startswith("?") else name


@dataclass(frozen=True)
class Vocabulary:
    """Namespaces, declared terms per layer, builtin rules and prune list"""

    namespaces: Mapping[str, str]
    layers: Mapping[str, FrozenSet[str]]
    parameters: Mapping[str, float]
    rules: Tuple[RewriteRule, ...] = ()
    aggregates: Tuple[AggregateRule, ...] = ()
    prune: Tuple[TriplePattern, ...] = ()

    @property
    def known_terms(self) -> FrozenSet[str]:
        terms: Set[str] = set()
        for layer_terms in self.layers.values():
            terms |= layer_terms
        return frozenset(terms)

    def is_known(self, iri: str) -> bool:
        return iri in self.known_terms

    @classmethod
    def from_document(cls, doc: VocabDocument) -> "Vocabulary":
        ns = dict(doc.namespaces)
        layers = {}
        for layer in doc.layers:
            try:
                layers[layer.name] = frozenset(expand_curie(t, ns) for t in layer.terms)
            except (KeyError, ValueError) as e:
                raise ConfigError(f"layer {layer.name}: bad term: {e}") from e
        rules = tuple(
            RewriteRule(
                name=spec.name,
                antecedent=tuple(_pattern(p, ns) for p in spec.antecedent),
                consequent=tuple(_pattern(p, ns) for p in spec.consequent),
                stratum=spec.stratum,
                compute=tuple(
                    Compute(_strip_var(c.var), c.op, (_compute_arg(c.args[0], ns), _compute_arg(c.args[1], ns)))
                    for c in spec.compute
                ),
            )
            for spec in doc.rules
        )
        aggregates = tuple(
            AggregateRule(
                name=spec.name,
                group=tuple(_pattern(p, ns) for p in spec.group),
                value=_strip_var(spec.value),
                kind=AggregateKind(spec.kind),
                consequent=tuple(_pattern(p, ns) for p in spec.consequent),
                select=_strip_var(spec.select),
                by=_strip_var(spec.by) if spec.by else None,
                stratum=spec.stratum,
            )
            for spec in doc.aggregates
        )
        vocabulary = cls(
            namespaces=ns,
            layers=layers,
            parameters=dict(doc.parameters),
            rules=rules,
            aggregates=aggregates,
            prune=tuple(_pattern(p, ns) for p in doc.prune),
        )
        check_stratification(list(rules) + list(aggregates))
        return vocabulary


@lru_cache(maxsize=8)
def _load_vocabulary(path: Path) -> Vocabulary:
    vocabulary = Vocabulary.from_document(VocabDocument.load(path))
    logger.info(
        "vocabulary_loaded",
        path=str(path),
        rules=len(vocabulary.rules),
        aggregates=len(vocabulary.aggregates),
        layers=len(vocabulary.layers),
    )
    return vocabulary


def load_vocabulary(path: Optional[Path] = None) -> Vocabulary:
    """Vocabulary from ``path``, or the configured reg-vocab.json"""
    return _load_vocabulary(Path(path or settings.vocab_path))


def builtin_rules() -> List[Rule]:
    """The standard rewrite and aggregate rules shipped in reg-vocab.json"""
    vocabulary = load_vocabulary()
    return [*vocabulary.rules, *vocabulary.aggregates]


# ---------------------------------------------------------------------------
# Stratification
# ---------------------------------------------------------------------------


def _unifiable(a: TriplePattern, b: TriplePattern) -> bool:
    return all(
        isinstance(x, Var) or isinstance(y, Var) or x == y for x, y in zip(a.positions, b.positions)
    )


def _reads(rule: Rule) -> Tuple[TriplePattern, ...]:
    return rule.antecedent if isinstance(rule, RewriteRule) else rule.group


def dependency_graph(rules: Sequence[Rule]) -> "nx.DiGraph":
    """Edge producer -> consumer when a consequent can feed a pattern the consumer reads"""
    graph = nx.DiGraph()
    for rule in rules:
        graph.add_node(rule.name, rule=rule)
    for producer in rules:
        for consumer in rules:
            if any(_unifiable(c, r) for c in producer.consequent for r in _reads(consumer)):
                graph.add_edge(producer.name, consumer.name)
    return graph


def check_stratification(rules: Sequence[Rule]) -> None:
    """
    Reject rule sets whose strata cannot be evaluated bottom-up.

    A rule may read what rules of its own or lower strata produce; anything
    that reads an aggregate's output must sit in a strictly higher stratum.

    Raises:
        StratificationError: naming the offending pair of rules
    """
    names = [r.name for r in rules]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise StratificationError(f"duplicate rule names: {duplicates}")

    graph = dependency_graph(rules)
    for producer_name, consumer_name in graph.edges:
        producer = graph.nodes[producer_name]["rule"]
        consumer = graph.nodes[consumer_name]["rule"]
        if producer.stratum > consumer.stratum:
            raise StratificationError(
                f"{consumer_name} (stratum {consumer.stratum}) depends on "
                f"{producer_name} from higher stratum {producer.stratum}"
            )
        if isinstance(producer, AggregateRule) and producer.stratum == consumer.stratum:
            raise StratificationError(
                f"{consumer_name} reads aggregate {producer_name} in the same stratum {producer.stratum}"
            )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def _ordered(patterns: Sequence[TriplePattern]) -> List[TriplePattern]:
    # most constants first, source order on ties
    return sorted(patterns, key=lambda p: -p.constant_count())


def _numeric(term: Any, rule: str, what: str) -> Decimal:
    if isinstance(term, Literal) and term.is_numeric:
        return term.value  # type: ignore[return-value]
    raise AggregateError(f"{rule}: {what} is not numeric: {term!r}")


def _evaluate_compute(
    rule: RewriteRule, binding: Binding, params: Mapping[str, float]
) -> Optional[Binding]:
    out = dict(binding)
    for step in rule.compute:
        values: List[Decimal] = []
        for arg in step.args:
            if isinstance(arg, Param):
                if arg.name not in params:
                    raise ConfigError(f"rule {rule.name}: parameter ${arg.name} is not set")
                values.append(Decimal(repr(float(params[arg.name]))))
            elif isinstance(arg, Var):
                term = out.get(arg.name)
                if not (isinstance(term, Literal) and term.is_numeric):
                    return None
                values.append(term.value)  # type: ignore[arg-type]
            else:
                values.append(_numeric(arg, rule.name, "constant"))
        try:
            result = _OPS[step.op](values[0], values[1])
        except (DivisionByZero, InvalidOperation):
            logger.warning("compute_skipped", rule=rule.name, op=step.op)
            return None
        out[step.var] = Literal.decimal(result)
    return out


def _fire(graph: Graph, templates: Sequence[TriplePattern], binding: Binding) -> int:
    added = 0
    for template in templates:
        triple = template.instantiate(binding)
        if triple is not None and graph.insert(triple):
            added += 1
    return added


def apply_fixpoint(
    graph: Graph, rules: Sequence[RewriteRule], params: Optional[Mapping[str, float]] = None
) -> int:
    """
    Apply rewrite rules stratum by stratum until nothing new is derived.

    Args:
        graph: Knowledge base, modified in place
        rules: Rewrite rules (stratified)
        params: Values for $parameters used by compute bindings

    Returns:
        Number of triples added

    Raises:
        StratificationError: rule set cannot be stratified
    """
    check_stratification(rules)
    parameters = dict(params or {})
    by_stratum: Dict[int, List[RewriteRule]] = defaultdict(list)
    for rule in rules:
        by_stratum[rule.stratum].append(rule)

    total = 0
    for stratum in sorted(by_stratum):
        total += _run_stratum(graph, by_stratum[stratum], parameters, stratum)
    return total


def _run_stratum(graph: Graph, rules: Sequence[RewriteRule], params: Mapping[str, float], stratum: int) -> int:
    added = 0
    rounds = 0
    while True:
        rounds += 1
        round_added = 0
        for rule in rules:
            for binding in graph.query(_ordered(rule.antecedent)):
                if rule.compute:
                    binding = _evaluate_compute(rule, binding, params)
                    if binding is None:
                        continue
                round_added += _fire(graph, rule.consequent, binding)
        added += round_added
        if round_added == 0:
            break
    logger.debug("fixpoint_stratum_complete", stratum=stratum, rounds=rounds, added=added)
    return added


def apply_aggregates(graph: Graph, rules: Sequence[AggregateRule]) -> int:
    """
    Assert the consequents of each group's extremal binding.

    Returns:
        Number of triples added

    Raises:
        AggregateError: a group binds a non-numeric value (names the rule)
    """
    added = 0
    for rule in rules:
        groups: Dict[Any, List[Binding]] = defaultdict(list)
        for binding in graph.query(_ordered(rule.group)):
            key = binding.get(rule.by) if rule.by else None
            groups[key].append(binding)

        for key in sorted(groups, key=lambda k: term_sort_key(k) if k is not None else ()):
            rows = groups[key]
            values = [_numeric(row[rule.value], rule.name, f"?{rule.value}") for row in rows]
            sign = -1 if rule.kind is AggregateKind.MAX else 1
            best = min(
                range(len(rows)),
                key=lambda i: (sign * values[i], term_sort_key(rows[i][rule.select])),
            )
            added += _fire(graph, rule.consequent, rows[best])
        logger.debug("aggregate_applied", rule=rule.name, groups=len(groups))
    return added


def prune(graph: Graph, patterns: Sequence[TriplePattern]) -> int:
    """Remove every triple matching any pattern; returns the number removed"""
    removed = 0
    for pattern in patterns:
        removed += graph.remove_matching(pattern)
    return removed


# ---------------------------------------------------------------------------
# Pre-processor
# ---------------------------------------------------------------------------


@dataclass
class InferenceStats:
    derived: int = 0
    aggregated: int = 0
    pruned: int = 0
    per_stratum: Dict[int, int] = field(default_factory=dict)


class SemanticPreprocessor:
    """Runs the vocabulary's strata over a graph, then prunes"""

    def __init__(self, vocabulary: Optional[Vocabulary] = None):
        self.vocabulary = vocabulary or load_vocabulary()

    def run(self, graph: Graph, params: Optional[Mapping[str, float]] = None) -> InferenceStats:
        """
        Materialize the regulation vocabulary.

        Args:
            graph: Lifted graph with geometric triples, modified in place
            params: Parameter overrides (e.g. ground_datum) over the vocabulary defaults

        Returns:
            InferenceStats with counts per phase
        """
        parameters: Dict[str, float] = {**self.vocabulary.parameters, **(params or {})}
        all_rules: List[Rule] = [*self.vocabulary.rules, *self.vocabulary.aggregates]
        check_stratification(all_rules)

        stats = InferenceStats()
        strata = sorted({r.stratum for r in all_rules})
        for stratum in strata:
            rewrites = [r for r in self.vocabulary.rules if r.stratum == stratum]
            aggregates = [r for r in self.vocabulary.aggregates if r.stratum == stratum]
            derived = _run_stratum(graph, rewrites, parameters, stratum) if rewrites else 0
            aggregated = apply_aggregates(graph, aggregates) if aggregates else 0
            stats.derived += derived
            stats.aggregated += aggregated
            stats.per_stratum[stratum] = derived + aggregated

        stats.pruned = prune(graph, self.vocabulary.prune)
        logger.info(
            "semantic_preprocessing_complete",
            derived=stats.derived,
            aggregated=stats.aggregated,
            pruned=stats.pruned,
            triples=graph.count(),
        )
        return stats


_semantic_preprocessor: Optional[SemanticPreprocessor] = None


def get_semantic_preprocessor() -> SemanticPreprocessor:
    """Get the global semantic pre-processor (default vocabulary)"""
    global _semantic_preprocessor
    if _semantic_preprocessor is None:
        _semantic_preprocessor = SemanticPreprocessor()
    return _semantic_preprocessor
