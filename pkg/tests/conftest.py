import pytest

from sewerdet.core import Annotation, DefectClass, Detection, MosaicGeometry, PixelBox, SeverityClass

FISSURE = DefectClass.FISSURE
ROOT = DefectClass.ROOT


def det(id, x, y, w, h, cls=FISSURE, conf=0.9):
    return Detection(id, PixelBox(x, y, w, h), DefectClass.parse(cls), conf)


def ann(id, x, y, w, h, cls=FISSURE, severity=SeverityClass.MINOR):
    return Annotation(id, PixelBox(x, y, w, h), DefectClass.parse(cls), severity)


@pytest.fixture
def geometry():
    return MosaicGeometry("p", 12000, 1000.0, joint_positions_px=(2500, 5000, 7500, 10000))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
