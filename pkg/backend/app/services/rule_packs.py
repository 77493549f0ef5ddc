"""
Rule Packs

A rule pack is a ZIP archive:

    manifest.json        name, version, description, topics, authors, defaults
    rules/*.rule         one or more rules per file

Packs are also accepted as an unpacked directory with the same layout, which
is how the default pack ships under app/data/packs/default.

Loading parses and compiles every rule and reports every problem found in the
archive at once (PackLoadError.errors), not only the first one.
"""
import io
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Tuple, Union

import structlog

from app.core.config import settings
from app.core.exceptions import ConfigError, PackLoadError, RegcheckError, ThresholdError
from app.models.pack import EngineDefaults, PackManifest
from app.services.reg_infer import Vocabulary, load_vocabulary
from app.services.rule_compiler import QueryPlan, builtin_calls, compile_rule
from app.services.rule_executor import validate_threshold_table
from app.services.rule_parser import RuleAst, parse_rules

logger = structlog.get_logger()

MANIFEST_NAME = "manifest.json"
RULES_DIR = "rules/"
RULE_SUFFIX = ".rule"

# Fixed member timestamp so built archives are byte-stable
ZIP_DATE_TIME = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class RulePack:
    """Loaded pack: manifest, compiled rules in file order, merged defaults"""

    manifest: PackManifest
    plans: Tuple[QueryPlan, ...]
    defaults: EngineDefaults
    namespaces: Mapping[str, str] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.manifest.name

    @property
    def version(self) -> str:
        return self.manifest.version

    @property
    def topics(self) -> List[str]:
        return list(self.manifest.topics)

    @property
    def rules(self) -> List[RuleAst]:
        return [plan.rule for plan in self.plans]

    @property
    def warnings(self) -> List[str]:
        return [w for plan in self.plans for w in plan.warnings]

    def plan(self, rule_id: str) -> QueryPlan:
        for plan in self.plans:
            if plan.rule_id == rule_id:
                return plan
        raise KeyError(rule_id)


def _calls_threshold(ast: RuleAst) -> bool:
    return any(call.name == "FIRETHRESHOLD" for call in builtin_calls(ast))

def _assemble(
    files: Mapping[str, bytes], source: str, vocabulary: Optional[Vocabulary] = None
) -> RulePack:
    """Validate manifest + rule files (name -> bytes) and compile the rules"""
    errors: List[str] = []
    vocabulary = vocabulary or load_vocabulary()

    manifest: Optional[PackManifest] = None
    if MANIFEST_NAME not in files:
        errors.append(f"missing {MANIFEST_NAME}")
    else:
        try:
            manifest = PackManifest.from_json(files[MANIFEST_NAME].decode("utf-8"))
        except (ConfigError, UnicodeDecodeError) as e:
            errors.append(str(e))

    defaults = EngineDefaults.from_settings()
    namespaces: Dict[str, str] = dict(vocabulary.namespaces)
    if manifest is not None:
        defaults = defaults.merged(manifest.defaults)
        namespaces.update(manifest.namespaces)
    if defaults.fire_threshold_table is not None:
        try:
            validate_threshold_table(defaults.fire_threshold_table)
        except ThresholdError as e:
            errors.append(f"{MANIFEST_NAME}: {e}")

    rule_files = sorted(n for n in files if n.startswith(RULES_DIR) and n.endswith(RULE_SUFFIX))
    if not rule_files:
        errors.append(f"no {RULES_DIR}*{RULE_SUFFIX} files")

    plans: List[QueryPlan] = []
    seen: Dict[str, str] = {}
    for name in rule_files:
        try:
            rules = parse_rules(files[name].decode("utf-8"), namespaces)
        except UnicodeDecodeError as e:
            errors.append(f"{name}: not UTF-8 ({e})")
            continue
        except RegcheckError as e:
            errors.append(f"{name}: {e}")
            continue
        for ast in rules:
            if ast.id in seen:
                errors.append(f"{name}: duplicate rule id {ast.id!r} (first defined in {seen[ast.id]})")
                continue
            seen[ast.id] = name
            if manifest is not None and ast.topic not in manifest.topics:
                errors.append(f"{name}: rule {ast.id!r} has topic {ast.topic!r}, not listed in the manifest topics")
            if manifest is not None and defaults.fire_threshold_table is None and _calls_threshold(ast):
                errors.append(
                    f"{name}: rule {ast.id!r} uses FIRETHRESHOLD but the pack defines no fire threshold table"
                )
            try:
                plans.append(compile_rule(ast, vocabulary))
            except RegcheckError as e:
                errors.append(f"{name}: rule {ast.id!r}: {e}")

    if errors:
        logger.error("pack_load_failed", source=source, errors=errors)
        raise PackLoadError(errors)

    assert manifest is not None
    pack = RulePack(manifest=manifest, plans=tuple(plans), defaults=defaults, namespaces=namespaces)
    logger.info("pack_loaded", source=source, name=pack.name, version=pack.version, rules=len(plans))
    return pack


def load_pack(archive: bytes, vocabulary: Optional[Vocabulary] = None) -> RulePack:
    """
    Load a rule pack from ZIP bytes.

    Raises:
        PackLoadError: listing every problem (missing manifest, invalid
            manifest, parse errors, duplicate ids, undeclared topics)
    """
    try:
        with zipfile.ZipFile(io.BytesIO(archive)) as zf:
            files = {info.filename: zf.read(info) for info in zf.infolist() if not info.is_dir()}
    except zipfile.BadZipFile as e:
        raise PackLoadError([f"not a ZIP archive: {e}"]) from e
    return _assemble(files, "<archive>", vocabulary)


def _directory_files(directory: Path) -> Dict[str, bytes]:
    files: Dict[str, bytes] = {}
    manifest = directory / MANIFEST_NAME
    if manifest.is_file():
        files[MANIFEST_NAME] = manifest.read_bytes()
    rules_dir = directory / RULES_DIR
    if rules_dir.is_dir():
        for path in sorted(rules_dir.glob(f"*{RULE_SUFFIX}")):
            files[f"{RULES_DIR}{path.name}"] = path.read_bytes()
    return files


def load_pack_dir(directory: Union[str, Path], vocabulary: Optional[Vocabulary] = None) -> RulePack:
    """Load an unpacked pack tree (manifest.json + rules/)"""
    directory = Path(directory)
    if not directory.is_dir():
        raise PackLoadError([f"{directory} is not a directory"])
    return _assemble(_directory_files(directory), str(directory), vocabulary)


def load_pack_path(path: Optional[Union[str, Path]] = None, vocabulary: Optional[Vocabulary] = None) -> RulePack:
    """Load a pack from a ZIP file or a directory; None selects the shipped default pack"""
    path = Path(path) if path is not None else settings.DEFAULT_PACK_DIR
    if path.is_dir():
        return load_pack_dir(path, vocabulary)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise PackLoadError([f"cannot read {path}: {e}"]) from e
    return load_pack(data, vocabulary)


def _zip_member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=ZIP_DATE_TIME)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def build_pack(directory: Union[str, Path]) -> bytes:
    """
    Zip a pack source tree deterministically.

    Members are written in sorted order with a fixed timestamp and mode, so
    the same tree always yields the same bytes.

    Raises:
        PackLoadError: the directory has no manifest.json
    """
    directory = Path(directory)
    files = _directory_files(directory)
    if MANIFEST_NAME not in files:
        raise PackLoadError([f"missing {MANIFEST_NAME} in {directory}"])
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w") as zf:
        for name in sorted(files):
            _zip_member(zf, name, files[name])
    return buffer.getvalue()


def zip_members(entries: Iterable[Tuple[str, bytes]]) -> bytes:
    """Deterministic ZIP from (name, bytes) pairs in the given order"""
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w") as zf:
        for name, data in entries:
            _zip_member(zf, name, data)
    return buffer.getvalue()
