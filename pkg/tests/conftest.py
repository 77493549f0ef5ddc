"""Shared fixtures: IFC fixture files, knowledge-base builder, default pack"""
from pathlib import Path
from typing import Callable, Optional

import pytest
import structlog

from app.models.report import CheckConfig
from app.services.checker import ComplianceChecker, KnowledgeBase, Stage
from app.services.rule_packs import RulePack, load_pack_path

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def _reset_structlog():
    """Drop logging config bound to a test's captured stderr once the test ends"""
    yield
    structlog.reset_defaults()


FIXTURE_MODELS = ("bathroom.ifc", "bathroom_clear.ifc", "fire.ifc", "classification.ifc", "mixed.ifc")


@pytest.fixture
def fixture_path() -> Callable[[str], Path]:
    """Path of a file under tests/fixtures"""

    def _path(name: str) -> Path:
        return FIXTURES / name

    return _path


@pytest.fixture
def fixture_text() -> Callable[[str], str]:
    """Text of a file under tests/fixtures"""

    def _text(name: str) -> str:
        return (FIXTURES / name).read_text(encoding="utf-8")

    return _text


@pytest.fixture
def build_kb() -> Callable[..., KnowledgeBase]:
    """Run the pipeline on a fixture model up to a stage"""

    def _build(name: str, stage: Stage = Stage.INFERRED, ground: Optional[float] = None) -> KnowledgeBase:
        source = (FIXTURES / name).read_text(encoding="utf-8")
        return ComplianceChecker().build_knowledge_base(source, CheckConfig(ground_datum_m=ground), stage)

    return _build


@pytest.fixture(scope="session")
def default_pack() -> RulePack:
    """The shipped pack, loaded from its source tree"""
    return load_pack_path()


@pytest.fixture
def empty_model(tmp_path: Path) -> Path:
    """Valid IFC file with nothing but a project"""
    path = tmp_path / "empty.ifc"
    path.write_text(
        "ISO-10303-21;\n"
        "HEADER;\n"
        "FILE_DESCRIPTION(('ViewDefinition [ReferenceView]'),'2;1');\n"
        "FILE_NAME('empty.ifc','2024-03-01T10:00:00',(''),(''),'','','');\n"
        "FILE_SCHEMA(('IFC4'));\n"
        "ENDSEC;\n"
        "DATA;\n"
        "#1=IFCSIUNIT(*,.LENGTHUNIT.,$,.METRE.);\n"
        "#2=IFCUNITASSIGNMENT((#1));\n"
        "#3=IFCPROJECT('0EmptyProject00000001',$,'Empty',$,$,$,$,$,#2);\n"
        "ENDSEC;\n"
        "END-ISO-10303-21;\n",
        encoding="utf-8",
    )
    return path
