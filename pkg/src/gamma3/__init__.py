"""gamma3: joint multi-class list-mode MLEM for 3-photon PET imaging.

Monte-Carlo event simulation over five detection classes, per-class
sensitivity maps, per-class Fisher information, and the multi-class
list-mode MLEM iteration, with a CLI tying the pipeline together.
"""

from ._accel import JIT_ENABLED, set_worker_threads
from .geometry import DetectorAnnulus, Direction3, Point3, VoxelGrid
from .infer import (
    ActivityImage,
    BackgroundModel,
    FisherMatrix,
    class_log_likelihood,
    estimate_fisher,
    fisher_summary,
    mlem_step,
    reconstruct,
    total_log_likelihood,
)
from .physics import ComptonCone, PhysicsParams, compton_cos_beta, compton_edge
from .rng import RandomStream
from .simulate import (
    CLASS_TAGS,
    Decay,
    DetectionEvent,
    LineOfResponse,
    ToyModel,
    run_simulation,
    transport_and_classify,
)
from .sysmodel import KernelParams, SensitivityMap, axial_profile, estimate_sensitivity, kernel_value

__version__ = "0.1.0"

__all__ = [
    "ActivityImage",
    "BackgroundModel",
    "CLASS_TAGS",
    "ComptonCone",
    "Decay",
    "DetectionEvent",
    "DetectorAnnulus",
    "Direction3",
    "FisherMatrix",
    "JIT_ENABLED",
    "KernelParams",
    "LineOfResponse",
    "PhysicsParams",
    "Point3",
    "RandomStream",
    "SensitivityMap",
    "ToyModel",
    "VoxelGrid",
    "axial_profile",
    "class_log_likelihood",
    "compton_cos_beta",
    "compton_edge",
    "estimate_fisher",
    "estimate_sensitivity",
    "fisher_summary",
    "kernel_value",
    "mlem_step",
    "reconstruct",
    "run_simulation",
    "set_worker_threads",
    "total_log_likelihood",
    "transport_and_classify",
    "__version__",
]
