import pytest

from gamma3.geometry import DetectorAnnulus, Direction3, Point3, VoxelGrid
from gamma3.physics import ComptonCone, PhysicsParams
from gamma3.simulate import DetectionEvent, LineOfResponse


@pytest.fixture
def detector():
    return DetectorAnnulus()


@pytest.fixture
def default_grid():
    return VoxelGrid((19, 19, 24), (5.0, 5.0, 10.0))


@pytest.fixture
def tiny_grid():
    return VoxelGrid((3, 3, 2), (20.0, 20.0, 40.0))


def make_cone(e0=1157.0, e1=450.0, apex=(80.0, 0.0, 0.0), axis=(-1.0, 0.0, 0.0)):
    return ComptonCone.from_energies(Point3(*apex), Direction3(*axis), e0, e1)


def make_lor(p1=(80.0, 0.0, 0.0), p2=(-80.0, 0.0, 0.0), dt_ps=None):
    return LineOfResponse(Point3(*p1), Point3(*p2), dt_ps)


def make_event(tag, **kwargs):
    """Geometrically simple event of any class for kernel tests."""
    if tag == "C02":
        return DetectionEvent("C02", lor=make_lor(**kwargs))
    if tag == "C10":
        return DetectionEvent("C10", cones=(make_cone(**kwargs),))
    if tag == "C01":
        return DetectionEvent("C01", cones=(make_cone(e0=511.0, e1=170.0, **kwargs),))
    if tag == "C11":
        return DetectionEvent(
            "C11",
            cones=(
                make_cone(e0=511.0, e1=170.0, apex=(0.0, 80.0, 0.0), axis=(0.0, -1.0, 0.0)),
                make_cone(),
            ),
        )
    if tag == "C12":
        return DetectionEvent("C12", lor=make_lor(), cones=(make_cone(),))
    raise ValueError(tag)


@pytest.fixture
def physics_quiet():
    """No energy blur, no TOF: noiseless observables."""
    return PhysicsParams(energy_resolution_fwhm_fraction=0.0)
