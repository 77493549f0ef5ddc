"""
Tests for the synthetic model generator and the scale target
"""
import time

import pytest

from app.models.report import CheckConfig
from app.services.checker import ComplianceChecker
from app.services.step_parser import parse_step
from scripts.generate_synthetic_model import ELEMENTS_PER_ROOM, generate_model, make_guid


def check(tmp_path, text: str, default_pack, **config):
    path = tmp_path / "synthetic.ifc"
    path.write_text(text, encoding="utf-8")
    return ComplianceChecker().run_check(path, default_pack, CheckConfig(**config))


@pytest.mark.unit
class TestGenerator:
    def test_guids_are_ifc_shaped(self):
        guids = {make_guid(n) for n in range(1, 200)}
        assert len(guids) == 199
        assert all(len(g) == 22 for g in guids)

    def test_same_seed_same_text(self):
        assert generate_model(80, storeys=2, seed=3)[0] == generate_model(80, storeys=2, seed=3)[0]

    def test_statistics(self):
        text, stats = generate_model(40, storeys=2, blocked=0.0)
        assert stats.rooms == 10
        assert stats.storeys == 2
        # four elements per room plus one slab per storey
        assert stats.elements == 10 * ELEMENTS_PER_ROOM + 2
        assert stats.blocked_wcs == []
        assert sum(stats.columns_by_duration.values()) == 10
        assert len(parse_step(text).entities) == stats.entities

    def test_invalid_arguments(self):
        with pytest.raises(ValueError, match="at least 4 elements"):
            generate_model(2)
        with pytest.raises(ValueError, match="blocked share"):
            generate_model(40, blocked=1.5)


@pytest.mark.integration
class TestSyntheticCheck:
    def test_blocked_wcs_are_found(self, tmp_path, default_pack):
        text, stats = generate_model(40, storeys=2, blocked=0.5, seed=3)
        report = check(tmp_path, text, default_pack, topics=["accessibility"])
        assert report.rules[0].candidates == stats.rooms
        assert len(report.findings) == len(stats.blocked_wcs)

    def test_low_building_passes_fire_check(self, tmp_path, default_pack):
        """Two storeys stay under the first threshold row, so 30 minutes is enough"""
        text, _ = generate_model(40, storeys=2, blocked=0.0)
        report = check(tmp_path, text, default_pack)
        assert report.findings == []
        assert all(r.error is None for r in report.rules)


@pytest.mark.slow
@pytest.mark.e2e
def test_ten_thousand_elements_under_thirty_seconds(tmp_path, default_pack):
    text, stats = generate_model(10000, storeys=10, blocked=0.1, seed=7)
    started = time.perf_counter()
    report = check(tmp_path, text, default_pack)
    elapsed = time.perf_counter() - started
    assert elapsed < 30.0
    wc = report.findings_for("acc-wc-freespace-01")
    fire = report.findings_for("fire-structure-01")
    assert len(wc) == len(stats.blocked_wcs)
    # 27 m high: 60 minutes required, the 30-minute columns fail
    assert len(fire) == stats.columns_by_duration[30]
