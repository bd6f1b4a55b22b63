"""Run configuration: one JSON document, validated fail-closed.

Unknown keys anywhere in the document are errors, so a typo cannot
silently fall back to a default.  The parsed original document is kept on
the result (``echo``) and written into every output header, which makes
any output reproducible from its own header plus the seed.
"""

import json
from dataclasses import dataclass
from typing import Optional

from .geometry import DetectorAnnulus, Point3, VoxelGrid, check_grid_fits_bore
from .infer import BackgroundModel
from .physics import PhysicsParams
from .simulate import CLASS_TAGS, ToyModel
from .sysmodel import KernelParams


class ConfigError(ValueError):
    """Invalid or unusable run configuration (exit code 2)."""


def _check_keys(doc, allowed, path):
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key {path}.{sorted(unknown)[0]}")


def _get(doc, key, default):
    v = doc.get(key, default)
    return default if v is None else v


def parse_classes(value):
    """Class subset from 'all', a comma string, or a list of tags."""
    if value is None or value == "all":
        return list(CLASS_TAGS)
    if isinstance(value, str):
        value = [v.strip() for v in value.split(",") if v.strip()]
    tags = list(value)
    if not tags:
        raise ConfigError("class subset must not be empty")
    for tag in tags:
        if tag not in CLASS_TAGS:
            raise ConfigError(f"unknown class {tag!r}")
    if len(set(tags)) != len(tags):
        raise ConfigError("duplicate class tags in subset")
    return tags


def parse_epsilon(value):
    """Background model from a scalar or a {class: value} mapping (also
    accepts the CLI form 'C12=0.5,C02=0.1')."""
    if value is None:
        return BackgroundModel()
    if isinstance(value, str):
        parts = [p for p in value.split(",") if p.strip()]
        if parts and all("=" in p for p in parts):
            value = {k.strip(): float(v) for k, v in (p.split("=", 1) for p in parts)}
        else:
            value = float(value)
    if isinstance(value, (int, float)):
        return BackgroundModel.constant(float(value))
    if isinstance(value, dict):
        try:
            return BackgroundModel({k: float(v) for k, v in value.items()})
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError("epsilon must be a number or a per-class mapping")


@dataclass
class SimulationSettings:
    n_decays: int
    emissions_per_voxel: int
    seed: Optional[int]
    window_fraction: float
    toy: Optional[ToyModel]


@dataclass
class ReconstructionSettings:
    iterations: int
    classes: list
    background: BackgroundModel
    early_stop: bool
    tolerance: float


@dataclass
class RunConfig:
    detector: DetectorAnnulus
    grid: VoxelGrid
    physics: PhysicsParams
    kernels: KernelParams
    simulation: SimulationSettings
    reconstruction: ReconstructionSettings
    phantom: Optional[dict]
    paths: dict
    echo: dict

    @property
    def seed(self):
        if self.simulation.seed is None:
            raise ConfigError("seed is required (simulation.seed or --seed)")
        return self.simulation.seed


_PHANTOM_KEYS = {
    "point": {"kind", "center_mm", "activity"},
    "uniform-cylinder": {"kind", "center_mm", "radius_mm", "half_length_mm", "activity"},
    "spheres": {"kind", "spheres"},
}


def _parse_phantom(doc):
    if doc is None:
        return None
    kind = doc.get("kind")
    if kind not in _PHANTOM_KEYS:
        raise ConfigError(f"unknown phantom kind {kind!r}")
    _check_keys(doc, _PHANTOM_KEYS[kind], "phantom")
    if kind == "spheres":
        for i, s in enumerate(doc.get("spheres", ())):
            _check_keys(s, {"center_mm", "radius_mm", "activity"}, f"phantom.spheres[{i}]")
        if not doc.get("spheres"):
            raise ConfigError("phantom.spheres must list at least one sphere")
    return dict(doc)


def parse_run_config(doc, seed_override=None):
    """Validate a configuration document into a RunConfig."""
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    _check_keys(
        doc,
        {"geometry", "physics", "kernel", "simulation", "reconstruction", "phantom", "paths"},
        "config",
    )
    try:
        geo = doc.get("geometry", {})
        _check_keys(geo, {"detector", "grid"}, "geometry")
        det_doc = geo.get("detector", {})
        _check_keys(
            det_doc, {"inner_radius_mm", "outer_radius_mm", "axial_half_length_mm"}, "geometry.detector"
        )
        det = DetectorAnnulus(
            float(_get(det_doc, "inner_radius_mm", 70.0)),
            float(_get(det_doc, "outer_radius_mm", 90.0)),
            float(_get(det_doc, "axial_half_length_mm", 120.0)),
        )
        grid_doc = geo.get("grid", {})
        _check_keys(grid_doc, {"dims", "voxel_size_mm", "origin_mm"}, "geometry.grid")
        grid = VoxelGrid(
            tuple(_get(grid_doc, "dims", (19, 19, 24))),
            tuple(_get(grid_doc, "voxel_size_mm", (5.0, 5.0, 10.0))),
            Point3(*_get(grid_doc, "origin_mm", (0.0, 0.0, 0.0))),
        )
        check_grid_fits_bore(grid, det)

        phys_doc = doc.get("physics", {})
        _check_keys(
            phys_doc,
            {
                "mean_free_path_mm",
                "energy_resolution_fwhm_fraction",
                "photoabsorption_fraction",
                "tof_fwhm_ps",
            },
            "physics",
        )
        mfp = phys_doc.get("mean_free_path_mm", {})
        _check_keys(mfp, {"kev_511", "kev_1157"}, "physics.mean_free_path_mm")
        physics = PhysicsParams(
            float(_get(mfp, "kev_511", 30.0)),
            float(_get(mfp, "kev_1157", 45.0)),
            float(_get(phys_doc, "energy_resolution_fwhm_fraction", 0.04)),
            float(_get(phys_doc, "photoabsorption_fraction", 0.35)),
            None
            if phys_doc.get("tof_fwhm_ps") is None
            else float(phys_doc["tof_fwhm_ps"]),
        )

        ker_doc = doc.get("kernel", {})
        _check_keys(
            ker_doc,
            {"lor_transverse_sigma_mm", "tof_sigma_mm", "cone_angular_sigma_rad"},
            "kernel",
        )
        cone_doc = ker_doc.get("cone_angular_sigma_rad", {})
        _check_keys(cone_doc, {"kev_511", "kev_1157"}, "kernel.cone_angular_sigma_rad")
        kernels = KernelParams(
            float(_get(ker_doc, "lor_transverse_sigma_mm", 3.0)),
            None if ker_doc.get("tof_sigma_mm") is None else float(ker_doc["tof_sigma_mm"]),
            (float(_get(cone_doc, "kev_511", 0.04)), float(_get(cone_doc, "kev_1157", 0.03))),
        )

        sim_doc = doc.get("simulation", {})
        _check_keys(
            sim_doc,
            {"n_decays", "emissions_per_voxel", "seed", "energy_window_fraction", "toy"},
            "simulation",
        )
        toy_doc = sim_doc.get("toy")
        toy = None
        if toy_doc is not None:
            _check_keys(toy_doc, {"enabled", "p", "q"}, "simulation.toy")
            if toy_doc.get("enabled", False):
                toy = ToyModel(float(_get(toy_doc, "p", 0.3)), float(_get(toy_doc, "q", 0.5)))
        seed = seed_override if seed_override is not None else sim_doc.get("seed")
        simulation = SimulationSettings(
            n_decays=int(_get(sim_doc, "n_decays", 100000)),
            emissions_per_voxel=int(_get(sim_doc, "emissions_per_voxel", 200)),
            seed=None if seed is None else int(seed),
            window_fraction=float(_get(sim_doc, "energy_window_fraction", 0.1)),
            toy=toy,
        )
        if simulation.n_decays < 1:
            raise ConfigError("simulation.n_decays must be >= 1")
        if simulation.emissions_per_voxel < 1:
            raise ConfigError("simulation.emissions_per_voxel must be >= 1")
        if not 0.0 < simulation.window_fraction < 0.5:
            raise ConfigError("simulation.energy_window_fraction must lie in (0, 0.5)")

        rec_doc = doc.get("reconstruction", {})
        _check_keys(
            rec_doc,
            {"iterations", "classes", "epsilon", "early_stop", "tolerance"},
            "reconstruction",
        )
        reconstruction = ReconstructionSettings(
            iterations=int(_get(rec_doc, "iterations", 30)),
            classes=parse_classes(rec_doc.get("classes")),
            background=parse_epsilon(rec_doc.get("epsilon")),
            early_stop=bool(_get(rec_doc, "early_stop", False)),
            tolerance=float(_get(rec_doc, "tolerance", 1e-7)),
        )
        if reconstruction.iterations < 1:
            raise ConfigError("reconstruction.iterations must be >= 1")

        phantom = _parse_phantom(doc.get("phantom"))

        paths = doc.get("paths", {})
        _check_keys(paths, {"events", "sensitivity", "image", "out"}, "paths")
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc

    echo = {"config": doc}
    if seed_override is not None:
        echo["seed_override"] = int(seed_override)
    return RunConfig(
        detector=det,
        grid=grid,
        physics=physics,
        kernels=kernels,
        simulation=simulation,
        reconstruction=reconstruction,
        phantom=phantom,
        paths=dict(paths),
        echo=echo,
    )


def load_run_config(path, seed_override=None):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_run_config(doc, seed_override)
