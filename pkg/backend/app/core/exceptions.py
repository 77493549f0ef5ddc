"""Exception hierarchy for the compliance checker"""
from typing import Iterable, List, Optional


class RegcheckError(Exception):
    """Base class for every error raised on purpose by regcheck"""


class ConfigError(RegcheckError):
    """Invalid configuration document, settings or CLI selection"""


class StepParseError(RegcheckError):
    """Malformed ISO 10303-21 input"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class StepLookupError(RegcheckError, IndexError):
    """Positional attribute access outside an entity's argument list"""

    def __init__(self, entity_id: int, index: int, arity: int):
        self.entity_id = entity_id
        self.index = index
        super().__init__(f"#{entity_id} has {arity} arguments, index {index} is out of range")


class GeometryError(RegcheckError):
    """Degenerate placement or representation data"""


class StratificationError(RegcheckError):
    """Rule set whose dependencies cross strata the wrong way"""


class AggregateError(RegcheckError):
    """Aggregate rule applied to non-numeric values"""


class RuleSyntaxError(RegcheckError):
    """Rule text that does not follow the rule grammar"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class RuleCompileError(RegcheckError):
    """Rule that parsed but cannot be turned into a query plan"""


class RuleExecutionError(RegcheckError):
    """Failure while evaluating a compiled rule"""


class ThresholdError(RegcheckError):
    """Invalid fire threshold table or lookup"""


class PackLoadError(RegcheckError):
    """Rule pack that cannot be loaded; carries every problem found"""

    def __init__(self, errors: Iterable[str]):
        self.errors: List[str] = list(errors)
        super().__init__("; ".join(self.errors))
