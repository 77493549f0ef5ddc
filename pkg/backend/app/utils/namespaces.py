"""IRI namespaces, CURIE expansion and IRI ordering

Prefixes:
- rdf / xsd: W3C vocabularies
- ifc: lifted IFC classes and attributes (simplified ifcOWL flavour)
- reg: Regulations vocabulary (high level concepts such as reg:WC)
- geo: geometric facts emitted by the geometry pre-processor
- inst: lifted model instances, local name = STEP instance number
"""
import re
from typing import Dict, List, Mapping, Optional, Tuple, Union

RDF = "http://www.w3.org/1999/02/22-rdf-syntax-ns#"
XSD = "http://www.w3.org/2001/XMLSchema#"
IFC = "https://w3id.org/regcheck/ifc#"
REG = "https://w3id.org/regcheck/reg#"
GEO = "https://w3id.org/regcheck/geo#"
INST = "https://w3id.org/regcheck/inst/"

DEFAULT_NAMESPACES: Dict[str, str] = {
    "rdf": RDF,
    "xsd": XSD,
    "ifc": IFC,
    "reg": REG,
    "geo": GEO,
    "inst": INST,
}

RDF_TYPE = RDF + "type"

_CURIE = re.compile(r"^([A-Za-z][\w\-]*):([\w.\-]*)$")
_ABSOLUTE = re.compile(r"^[A-Za-z][A-Za-z0-9+.\-]*:[^\s<>\"]+$")
_DIGITS = re.compile(r"(\d+)")


def expand_curie(text: str, namespaces: Optional[Mapping[str, str]] = None) -> str:
    """
    Expand a CURIE (``reg:WC``) or an angle-bracketed IRI into an absolute IRI.

    Args:
        text: CURIE, ``<iri>`` or absolute IRI
        namespaces: Prefix table (defaults to DEFAULT_NAMESPACES)

    Returns:
        Absolute IRI text

    Raises:
        KeyError: unknown prefix
        ValueError: text is neither a CURIE nor an IRI
    """
    table = namespaces if namespaces is not None else DEFAULT_NAMESPACES
    if text.startswith("<") and text.endswith(">"):
        return text[1:-1]
    match = _CURIE.match(text)
    if match and match.group(1) in table:
        return table[match.group(1)] + match.group(2)
    if match and "/" not in text:
        raise KeyError(match.group(1))
    if _ABSOLUTE.match(text):
        return text
    raise ValueError(f"not an IRI or CURIE: {text!r}")


def is_valid_iri(text: str) -> bool:
    """True for an absolute IRI without whitespace or angle brackets"""
    return bool(_ABSOLUTE.match(text))


def compact_iri(iri: str, namespaces: Optional[Mapping[str, str]] = None) -> str:
    """Shorten an IRI to a CURIE when one of the prefixes matches"""
    table = namespaces if namespaces is not None else DEFAULT_NAMESPACES
    for prefix, base in sorted(table.items(), key=lambda kv: -len(kv[1])):
        if iri.startswith(base):
            return f"{prefix}:{iri[len(base):]}"
    return iri


def inst_iri(instance_number: int) -> str:
    """IRI of a lifted STEP instance"""
    return f"{INST}{instance_number}"


def instance_number(iri: str) -> Optional[int]:
    """STEP instance number embedded in an inst: IRI, None for other IRIs"""
    if iri.startswith(INST) and iri[len(INST):].isdigit():
        return int(iri[len(INST):])
    return None


def iri_sort_key(iri: str) -> Tuple[Tuple[int, Union[str, int]], ...]:
    """
    Natural ordering key: digit runs compare numerically.

    inst:7 sorts before inst:12, which keeps tie-breaks and report order
    aligned with STEP instance numbers.
    """
    parts: List[Tuple[int, Union[str, int]]] = []
    for chunk in _DIGITS.split(iri):
        if not chunk:
            continue
        # (tag, value) so str and int are never compared directly
        parts.append((0, int(chunk)) if chunk.isdigit() else (1, chunk))
    return tuple(parts)
