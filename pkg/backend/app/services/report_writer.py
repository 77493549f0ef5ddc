"""
Report Writers

- report.json: the ComplianceReport as indented UTF-8 JSON, keys in model
  field order
- BCF: ZIP with ``bcf.version`` (2.1) and one ``<uuid>/markup.bcf`` per
  finding; the folder UUID is name-based over rule id + target GUID and every
  member carries a fixed timestamp, so equal reports give equal bytes
"""
import uuid
import xml.etree.ElementTree as ET
from typing import List, Tuple

import structlog

from app.models.report import ComplianceReport, Finding
from app.services.rule_packs import zip_members

logger = structlog.get_logger()

BCF_VERSION = "2.1"
# Namespace for finding topic UUIDs (uuid5 over "<rule id>/<guid or iri>")
TOPIC_NAMESPACE = uuid.UUID("6f1c3f0e-5d0a-4f57-9a4e-2b8f6a1d3c70")
ORIGINATING_SYSTEM = "regcheck"


def write_report_json(report: ComplianceReport) -> bytes:
    """Serialize a report as report.json bytes (stable key order, trailing newline)"""
    return (report.model_dump_json(indent=2) + "\n").encode("utf-8")


def topic_guid(finding: Finding) -> str:
    """Deterministic topic / folder id of a finding"""
    return str(uuid.uuid5(TOPIC_NAMESPACE, f"{finding.rule}/{finding.guid or finding.iri}"))


def _xml(root: ET.Element) -> bytes:
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"


def _version_document() -> bytes:
    root = ET.Element("Version", {"VersionId": BCF_VERSION})
    ET.SubElement(root, "DetailedVersion").text = BCF_VERSION
    return _xml(root)


def _markup(finding: Finding, guid: str) -> bytes:
    root = ET.Element("Markup")
    topic = ET.SubElement(root, "Topic", {"Guid": guid, "TopicType": "Issue", "TopicStatus": "Open"})
    ET.SubElement(topic, "Title").text = finding.rule
    ET.SubElement(topic, "Priority").text = finding.severity
    ET.SubElement(topic, "Labels").text = finding.topic
    ET.SubElement(topic, "Description").text = finding.message

    viewpoint = ET.SubElement(root, "Viewpoints", {"Guid": str(uuid.uuid5(TOPIC_NAMESPACE, guid))})
    selection = ET.SubElement(ET.SubElement(viewpoint, "Components"), "Selection")
    if finding.guid is not None:
        component = ET.SubElement(selection, "Component", {"IfcGuid": finding.guid})
        ET.SubElement(component, "OriginatingSystem").text = ORIGINATING_SYSTEM
        ET.SubElement(component, "AuthoringToolId").text = finding.iri
        seen = {finding.guid}
        for entry in finding.explanation:
            if entry.guid is None or entry.guid in seen:
                continue
            seen.add(entry.guid)
            component = ET.SubElement(selection, "Component", {"IfcGuid": entry.guid})
            ET.SubElement(component, "OriginatingSystem").text = ORIGINATING_SYSTEM
            ET.SubElement(component, "AuthoringToolId").text = entry.iri
    else:
        logger.warning("bcf_finding_without_guid", rule=finding.rule, iri=finding.iri)
    return _xml(root)


def write_bcf(report: ComplianceReport) -> bytes:
    """
    Build a BCF 2.1-shaped ZIP for a report.

    Returns:
        ZIP bytes: ``bcf.version`` then one folder per finding in report order.
        A finding without GUID keeps its folder but lists no components.
    """
    members: List[Tuple[str, bytes]] = [("bcf.version", _version_document())]
    for finding in report.findings:
        guid = topic_guid(finding)
        members.append((f"{guid}/markup.bcf", _markup(finding, guid)))
    logger.debug("bcf_written", topics=len(report.findings))
    return zip_members(members)
