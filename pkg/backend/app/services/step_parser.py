"""
ISO 10303-21 (STEP physical file) Parser

Reads the text encoding used by .ifc files into an entity table:

    #12=IFCBUILDINGSTOREY('2Xk...',#5,'Level 1',$,$,#40,$,$,.ELEMENT.,3000.);

The parser is schema-agnostic. Every DATA statement is kept, including
entities the rest of the pipeline does not know; model lifting decides what
matters. Parsing is two-pass: statements first, reference checks second, so
forward references are legal.
"""
import re
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, Union

import structlog

from app.core.exceptions import StepLookupError, StepParseError

logger = structlog.get_logger()


@dataclass(frozen=True)
class EnumValue:
    """Enumeration tag such as .WCSEAT. (stored without dots, uppercase)"""

    tag: str

    def __post_init__(self) -> None:
        if not self.tag or any(c.isspace() for c in self.tag):
            raise ValueError(f"invalid enumeration tag {self.tag!r}")
        object.__setattr__(self, "tag", self.tag.upper())


@dataclass(frozen=True)
class Ref:
    """Entity reference (#id)"""

    id: int

    def __post_init__(self) -> None:
        if self.id <= 0:
            raise ValueError(f"entity references are positive, got #{self.id}")


class _Marker:
    """Singleton markers for $ and *"""

    def __init__(self, symbol: str):
        self.symbol = symbol

    def __repr__(self) -> str:
        return self.symbol

    def __reduce__(self) -> str:
        return "UNSET" if self.symbol == "$" else "DERIVED"


UNSET = _Marker("$")
DERIVED = _Marker("*")


@dataclass(frozen=True)
class Typed:
    """Typed parameter such as IFCBOOLEAN(.T.) or IFCLENGTHMEASURE(2.5)"""

    name: str
    value: "StepValue"


StepValue = Union[int, float, str, EnumValue, Ref, Tuple["StepValue", ...], _Marker, Typed]


@dataclass(frozen=True)
class StepEntity:
    """One DATA instance"""

    id: int
    name: str
    args: Tuple[StepValue, ...]
    line: int = field(default=0, compare=False)

    def arg(self, index: int) -> StepValue:
        """Positional argument without coercion (see entity_arg)"""
        return entity_arg(self, index)

    def arg_or(self, index: int, default: StepValue = UNSET) -> StepValue:
        """Positional argument, or ``default`` when the entity is shorter"""
        return self.args[index] if 0 <= index < len(self.args) else default


@dataclass(frozen=True)
class StepFile:
    """Parsed physical file: schema identifiers, entity table, warnings"""

    schemas: Tuple[str, ...]
    entities: Mapping[int, StepEntity]
    warnings: Tuple[str, ...] = ()

    @property
    def schema(self) -> str:
        return self.schemas[0] if self.schemas else ""

    def get(self, ref: Union[Ref, int]) -> Optional[StepEntity]:
        """Entity for a reference or instance number, None when dangling"""
        key = ref.id if isinstance(ref, Ref) else ref
        return self.entities.get(key)

    def by_name(self, *names: str) -> List[StepEntity]:
        """Entities with one of the given keywords, in instance-number order"""
        wanted = {n.upper() for n in names}
        return sorted((e for e in self.entities.values() if e.name in wanted), key=lambda e: e.id)

    def __len__(self) -> int:
        return len(self.entities)


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>/\*.*?\*/)
  | (?P<string>'(?:[^']|'')*')
  | (?P<ref>\#[^\s=(),;]*)
  | (?P<enum>\.[A-Za-z_][A-Za-z0-9_]*\.)
  | (?P<real>[+-]?\d+\.\d*(?:[eE][+-]?\d+)?|[+-]?\d+[eE][+-]?\d+)
  | (?P<int>[+-]?\d+)
  | (?P<kw>[A-Za-z_][A-Za-z0-9_\-]*)
  | (?P<punct>[()=,;$*])
    """,
    re.VERBOSE | re.DOTALL,
)

_ENCODED = re.compile(r"\\(?:X2|X4|X|S|P[A-Z]?)\\")

Token = Tuple[str, str, int]  # (kind, text, line)


def _tokenize(source: str) -> List[Token]:
    tokens: List[Token] = []
    pos = 0
    line = 1
    end = len(source)
    while pos < end:
        match = _TOKEN.match(source, pos)
        if match is None:
            char = source[pos]
            if char == "'":
                raise StepParseError("unterminated string", line)
            if source.startswith("/*", pos):
                raise StepParseError("unterminated comment", line)
            raise StepParseError(f"unexpected character {char!r}", line)
        kind = match.lastgroup or ""
        text = match.group()
        if kind not in ("ws", "comment"):
            tokens.append((kind, text, line))
        line += text.count("\n")
        pos = match.end()
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class StepParser:
    """Recursive-descent parser over the token stream of one file"""

    def __init__(self, source: str):
        self.tokens = _tokenize(source)
        self.pos = 0
        self.warnings: List[str] = []

    # ----- token helpers -----

    def _peek(self, offset: int = 0) -> Optional[Token]:
        index = self.pos + offset
        return self.tokens[index] if index < len(self.tokens) else None

    def _line(self) -> int:
        token = self._peek()
        if token is not None:
            return token[2]
        return self.tokens[-1][2] if self.tokens else 1

    def _next(self) -> Token:
        token = self._peek()
        if token is None:
            raise StepParseError("unexpected end of file", self._line())
        self.pos += 1
        return token

    def _expect(self, text: str, context: str = "") -> Token:
        token = self._next()
        if token[1].upper() != text:
            if text == ";":
                raise StepParseError(f"missing semicolon{context}", token[2])
            raise StepParseError(f"expected {text!r}{context}, found {token[1]!r}", token[2])
        return token

    def _at(self, text: str) -> bool:
        token = self._peek()
        return token is not None and token[1].upper() == text

    # ----- grammar -----

    def parse(self) -> StepFile:
        self._expect("ISO-10303-21")
        self._expect(";")
        self._expect("HEADER")
        self._expect(";")
        schemas = self._parse_header()

        entities: Dict[int, StepEntity] = {}
        while self._at("DATA"):
            self._next()
            if self._at("("):
                self._parse_list()
            self._expect(";", " after DATA")
            self._parse_data(entities)

        self._expect("END-ISO-10303-21")
        self._expect(";")

        if not schemas:
            self.warnings.append("FILE_SCHEMA missing from HEADER")

        self._check_references(entities)

        return StepFile(
            schemas=tuple(schemas),
            entities=MappingProxyType(dict(sorted(entities.items()))),
            warnings=tuple(self.warnings),
        )

    def _parse_header(self) -> List[str]:
        schemas: List[str] = []
        while not self._at("ENDSEC"):
            kind, name, line = self._next()
            if kind != "kw":
                raise StepParseError(f"expected header entity, found {name!r}", line)
            args = self._parse_list()
            self._expect(";", f" after {name}")
            if name.upper() == "FILE_SCHEMA" and args and isinstance(args[0], tuple):
                schemas.extend(str(s) for s in args[0] if isinstance(s, str))
        self._expect("ENDSEC")
        self._expect(";", " after ENDSEC")
        return schemas

    def _parse_data(self, entities: Dict[int, StepEntity]) -> None:
        while not self._at("ENDSEC"):
            kind, text, line = self._next()
            if kind != "ref":
                raise StepParseError(f"expected instance name, found {text!r}", line)
            entity_id = self._instance_number(text, line)
            self._expect("=", f" after #{entity_id}")

            if self._at("("):
                # complex instance #n=(A()B()); no IFC subset entity uses one
                self._parse_complex()
                self._expect(";", f" after #{entity_id}")
                self.warnings.append(f"#{entity_id}: complex instance skipped (line {line})")
                continue

            kind, name, name_line = self._next()
            if kind != "kw":
                raise StepParseError(f"expected entity name for #{entity_id}", name_line)
            args = self._parse_list()
            self._expect(";", f" after #{entity_id}")

            if entity_id in entities:
                raise StepParseError(f"duplicate instance id #{entity_id}", line)
            entities[entity_id] = StepEntity(entity_id, name.upper(), args, line)
        self._expect("ENDSEC")
        self._expect(";", " after ENDSEC")

    def _parse_complex(self) -> None:
        self._expect("(")
        while not self._at(")"):
            kind, text, line = self._next()
            if kind != "kw":
                raise StepParseError(f"expected entity name in complex instance, found {text!r}", line)
            self._parse_list()
        self._expect(")")

    def _parse_list(self) -> Tuple[StepValue, ...]:
        self._expect("(")
        values: List[StepValue] = []
        if self._at(")"):
            self._next()
            return ()
        while True:
            values.append(self._parse_value())
            token = self._next()
            if token[1] == ")":
                return tuple(values)
            if token[1] != ",":
                raise StepParseError(f"expected ',' or ')', found {token[1]!r}", token[2])

    def _parse_value(self) -> StepValue:
        token = self._peek()
        if token is None:
            raise StepParseError("unexpected end of file", self._line())
        kind, text, line = token

        if text == "(":
            return self._parse_list()
        self.pos += 1
        if text == "$":
            return UNSET
        if text == "*":
            return DERIVED
        if kind == "string":
            return self._decode_string(text, line)
        if kind == "enum":
            return EnumValue(text[1:-1])
        if kind == "int":
            return int(text)
        if kind == "real":
            return float(text)
        if kind == "ref":
            return Ref(self._instance_number(text, line))
        if kind == "kw" and self._at("("):
            inner = self._parse_list()
            if len(inner) != 1:
                raise StepParseError(f"typed parameter {text} must wrap exactly one value", line)
            return Typed(text.upper(), inner[0])
        raise StepParseError(f"unexpected token {text!r}", line)

    def _instance_number(self, text: str, line: int) -> int:
        digits = text[1:]
        if not digits.isdigit():
            raise StepParseError(f"non-numeric instance id {text!r}", line)
        number = int(digits)
        if number <= 0:
            raise StepParseError(f"instance ids are positive, got {text!r}", line)
        return number

    def _decode_string(self, text: str, line: int) -> str:
        raw = text[1:-1].replace("''", "'")
        if _ENCODED.search(raw):
            self.warnings.append(f"line {line}: encoded string kept verbatim: {raw!r}")
        return raw

    def _check_references(self, entities: Mapping[int, StepEntity]) -> None:
        for entity in entities.values():
            for ref in _iter_refs(entity.args):
                if ref.id not in entities:
                    self.warnings.append(f"#{entity.id} references missing instance #{ref.id}")


def _iter_refs(values: Tuple[StepValue, ...]) -> Iterator[Ref]:
    for value in values:
        if isinstance(value, Ref):
            yield value
        elif isinstance(value, tuple):
            yield from _iter_refs(value)
        elif isinstance(value, Typed):
            yield from _iter_refs((value.value,))


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def parse_step(source: str) -> StepFile:
    """
    Parse an ISO 10303-21 document.

    Args:
        source: Complete file text with HEADER and DATA sections

    Returns:
        StepFile with every DATA instance, FILE_SCHEMA identifiers and warnings

    Raises:
        StepParseError: malformed syntax or duplicate instance id (with line number)
    """
    try:
        step_file = StepParser(source).parse()
    except StepParseError as e:
        logger.error("step_parse_failed", error=str(e), line=e.line)
        raise

    logger.info(
        "step_file_parsed",
        schema=step_file.schema,
        entities=len(step_file.entities),
        warnings=len(step_file.warnings),
    )
    return step_file


def entity_arg(entity: StepEntity, index: int) -> StepValue:
    """
    Positional attribute of an entity, returned without coercion.

    Raises:
        StepLookupError: index outside the argument list
    """
    if index < 0 or index >= len(entity.args):
        raise StepLookupError(entity.id, index, len(entity.args))
    return entity.args[index]


def schema_of(step_file: StepFile) -> str:
    """First FILE_SCHEMA identifier, or "" (the parse recorded a warning)"""
    if not step_file.schemas:
        logger.warning("step_schema_missing")
        return ""
    return step_file.schemas[0]


def format_value(value: StepValue) -> str:
    """Render a StepValue in ISO 10303-21 syntax"""
    if value is UNSET:
        return "$"
    if value is DERIVED:
        return "*"
    if isinstance(value, Ref):
        return f"#{value.id}"
    if isinstance(value, EnumValue):
        return f".{value.tag}."
    if isinstance(value, Typed):
        return f"{value.name}({format_value(value.value)})"
    if isinstance(value, tuple):
        return "(" + ",".join(format_value(v) for v in value) + ")"
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    if isinstance(value, float):
        text = repr(value)
        if "e" in text:
            mantissa, exponent = text.split("e")
            if "." not in mantissa:
                mantissa += "."
            return f"{mantissa}E{exponent}"
        return text if "." in text else text + "."
    return str(value)


def dump_step(step_file: StepFile) -> str:
    """
    Serialize a StepFile back to physical-file text.

    Parsing the result yields an entity table equal to the input's.
    """
    schemas = ",".join(format_value(s) for s in step_file.schemas)
    lines = [
        "ISO-10303-21;",
        "HEADER;",
        "FILE_DESCRIPTION((''),'2;1');",
        "FILE_NAME('','',(''),(''),'','','');",
        f"FILE_SCHEMA(({schemas}));",
        "ENDSEC;",
        "DATA;",
    ]
    for entity_id in sorted(step_file.entities):
        entity = step_file.entities[entity_id]
        args = ",".join(format_value(a) for a in entity.args)
        lines.append(f"#{entity.id}={entity.name}({args});")
    lines.extend(["ENDSEC;", "END-ISO-10303-21;"])
    return "\n".join(lines) + "\n"
