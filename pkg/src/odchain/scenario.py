"""Scenario files: one declarative YAML document drives a whole experiment.

A scenario names a network (the packaged ``toy`` preset with optional
overrides, or an inline definition), the time grid, the demand legs with
their totals, OD splits, scheduling parameters and chain feeds, how the
historical matrix is perturbed away from the truth, the filter noise scales,
and the estimation settings.  Times may be written as "HH:MM" or plain
minutes of day.  Randomness is pinned to numpy's default PCG64 generator
seeded from the scenario seed, so identical (scenario, seed) pairs reproduce
identical runs bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path as FsPath

import yaml

from .errors import ConfigurationError
from .departure import ScheduleParams
from .legs import ChainSpec
from .network import (
    OD,
    Link,
    Network,
    Path,
    TimeGrid,
    Zone,
    build_toy_network,
    od_label,
    validate_network,
)

logger = logging.getLogger(__name__)

PERTURBATION_MODES = ("none", "uniform_scale", "scale_plus_noise")
KNOWN_MODELS = ("seed", "kf", "pkf", "spkf")


def parse_minutes(value) -> float:
    """Accept "HH:MM" strings or plain minute numbers."""
    if isinstance(value, str):
        parts = value.split(":")
        if len(parts) != 2:
            raise ConfigurationError(f"cannot parse time {value!r}; expected HH:MM or minutes")
        try:
            hours, minutes = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ConfigurationError(f"cannot parse time {value!r}") from exc
        if not (0 <= minutes < 60):
            raise ConfigurationError(f"minutes out of range in {value!r}")
        return float(hours * 60 + minutes)
    if isinstance(value, (int, float)):
        return float(value)
    raise ConfigurationError(f"cannot parse time {value!r}")


def _parse_od(key: str) -> OD:
    parts = str(key).split("-")
    if len(parts) != 2 or not parts[0] or not parts[1]:
        raise ConfigurationError(f"cannot parse OD pair {key!r}; expected origin-destination")
    return parts[0], parts[1]


@dataclass(frozen=True)
class LegDef:
    """Declarative description of one demand leg."""

    name: str
    total: float
    od_split: dict[OD, float]
    schedule: ScheduleParams
    feeds: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.total < 0:
            raise ConfigurationError(f"leg {self.name!r}: negative total")
        if not self.od_split:
            raise ConfigurationError(f"leg {self.name!r}: empty OD split")
        for od, f in self.od_split.items():
            if f < 0:
                raise ConfigurationError(f"leg {self.name!r}: negative split for {od_label(od)}")
        s = sum(self.od_split.values())
        if abs(s - 1.0) > 1e-9:
            raise ConfigurationError(f"leg {self.name!r}: OD split sums to {s!r}, not 1")


@dataclass(frozen=True)
class PerturbationSpec:
    """How the historical matrix is derived from the truth.

    ``uniform_scale`` multiplies every leg OD flow by (1 + scale);
    ``scale_plus_noise`` additionally applies a per-OD factor
    (1 + noise * u) with u drawn uniformly from [-1, 1].
    """

    mode: str = "uniform_scale"
    scale: float = 0.0
    noise: float = 0.0
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in PERTURBATION_MODES:
            raise ConfigurationError(f"unknown perturbation mode {self.mode!r}")
        if self.scale <= -1.0:
            raise ConfigurationError(f"perturbation scale {self.scale!r} must stay > -1")
        if not (0.0 <= self.noise < 1.0):
            raise ConfigurationError(f"perturbation noise {self.noise!r} must lie in [0, 1)")


@dataclass(frozen=True)
class NoiseFractions:
    """Filter noise scales, as fractions of historical means over positive cells."""

    process: float = 0.05
    measurement: float = 0.10
    prior: float = 0.50
    leg_process: float = 0.05
    leg_prior: float = 0.25
    cumulative_measurement: float = 0.10

    def __post_init__(self) -> None:
        for name in ("process", "measurement", "prior", "leg_process", "leg_prior",
                     "cumulative_measurement"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"noise fraction {name!r} must be > 0")


@dataclass(frozen=True)
class EstimationConfig:
    """Measurement cutoff and prediction settings."""

    cutoff_minute: float
    prediction_intervals: int = 2
    uniform_redistribution: bool = False
    refresh_assignment: bool = False

    def __post_init__(self) -> None:
        if self.prediction_intervals < 1:
            raise ConfigurationError("prediction_intervals must be >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    grid: TimeGrid
    network: Network
    legs: tuple[LegDef, ...]
    perturbation: PerturbationSpec
    noise: NoiseFractions
    estimation: EstimationConfig
    models: tuple[str, ...] = KNOWN_MODELS
    seed: int = 0
    measurement_noise_fraction: float = 0.0
    description: str = ""

    @property
    def cutoff_index(self) -> int:
        """Number of measured intervals (those ending at or before the cutoff)."""
        g = self.grid
        return int((self.estimation.cutoff_minute - g.start) // g.interval_minutes)

    def chain(self) -> ChainSpec:
        return ChainSpec(feeds={leg.name: tuple(leg.feeds) for leg in self.legs})

    def leg_def(self, name: str) -> LegDef:
        for leg in self.legs:
            if leg.name == name:
                return leg
        raise ConfigurationError(f"unknown leg {name!r}")

    def validate(self) -> list[str]:
        """Collect violations; an empty list means the scenario can run."""
        problems = [f"network: {p}" for p in validate_network(self.network)]
        seen: set[str] = set()
        for leg in self.legs:
            if leg.name in seen:
                problems.append(f"leg {leg.name!r}: duplicate name")
            seen.add(leg.name)
            for od in leg.od_split:
                if od not in self.network.paths:
                    problems.append(f"leg {leg.name!r}: no path for OD {od_label(od)}")
        try:
            chain = self.chain()
        except ConfigurationError as exc:
            problems.append(str(exc))
            chain = None
        if chain is not None:
            by_name = {leg.name: leg for leg in self.legs}
            for leg in self.legs:
                for feeder_name in leg.feeds:
                    feeder = by_name.get(feeder_name)
                    if feeder is None:
                        continue
                    current_origins = {od[0] for od in leg.od_split}
                    for od in feeder.od_split:
                        if od[1] not in current_origins:
                            problems.append(
                                f"leg {leg.name!r}: arrivals at zone {od[1]!r} from "
                                f"{feeder_name!r} have no outgoing OD to chain into"
                            )
        cut = self.estimation.cutoff_minute
        if not (self.grid.start < cut <= self.grid.end):
            problems.append(f"estimation cutoff {cut} outside the grid horizon")
        elif self.cutoff_index < 1:
            problems.append("estimation cutoff leaves no measured interval")
        for model in self.models:
            if model not in KNOWN_MODELS:
                problems.append(f"unknown model {model!r}")
        if not (0.0 <= self.measurement_noise_fraction < 1.0):
            problems.append("measurement_noise_fraction must lie in [0, 1)")
        return problems


def _build_inline_network(spec: dict) -> Network:
    zones = {}
    for z in spec.get("zones", []):
        zid = str(z["id"])
        if "-" in zid:
            raise ConfigurationError(f"zone id {zid!r} must not contain '-'")
        zones[zid] = Zone(zid, z.get("kind", "residential"))
    links: dict[str, Link] = {}
    for l in spec.get("links", []):
        label = str(l["label"])
        a, b = str(l["from"]), str(l["to"])
        fft = float(l.get("free_flow_time", 10.0))
        cap = float(l.get("capacity", 4000.0))
        alpha = float(l.get("bpr_alpha", 0.15))
        beta = float(l.get("bpr_beta", 4.0))
        links[f"{label}a"] = Link(f"{label}a", label, a, b, fft, cap, alpha, beta)
        links[f"{label}b"] = Link(f"{label}b", label, b, a, fft, cap, alpha, beta)
    paths = {}
    for key, seq in (spec.get("paths") or {}).items():
        od = _parse_od(key)
        paths[od] = Path(od, tuple(str(s) for s in seq))
    detectors = tuple(str(d) for d in spec.get("detectors", ()))
    return Network(zones=zones, links=links, paths=paths, detectors=detectors)


def _build_network(spec: dict | None) -> Network:
    spec = spec or {"preset": "toy"}
    preset = spec.get("preset")
    if preset is not None:
        if preset != "toy":
            raise ConfigurationError(f"unknown network preset {preset!r}")
        return build_toy_network(spec.get("overrides"))
    return _build_inline_network(spec)


def _build_schedule(spec: dict | None) -> ScheduleParams:
    spec = dict(spec or {})
    if "preferred_arrival" in spec:
        spec["preferred_arrival"] = parse_minutes(spec["preferred_arrival"])
    known = {"alpha", "beta", "gamma", "preferred_arrival", "logit_scale"}
    unknown = set(spec) - known
    if unknown:
        raise ConfigurationError(f"unknown schedule keys: {sorted(unknown)}")
    try:
        return ScheduleParams(**{k: float(v) for k, v in spec.items()})
    except ValueError as exc:
        raise ConfigurationError(f"bad schedule parameters: {exc}") from exc


def scenario_from_mapping(doc: dict) -> ScenarioConfig:
    """Build a scenario from a parsed YAML mapping.

    Raises:
        ConfigurationError: on structural problems; value-level violations are
            additionally reported by :meth:`ScenarioConfig.validate`.
    """
    if not isinstance(doc, dict):
        raise ConfigurationError("scenario document must be a mapping")
    grid_spec = doc.get("time_grid") or {}
    grid = TimeGrid(
        start=int(parse_minutes(grid_spec.get("start", 0))),
        interval_minutes=int(grid_spec.get("interval_minutes", 15)),
        n_intervals=int(grid_spec.get("n_intervals", 96)),
    )
    network = _build_network(doc.get("network"))

    legs = []
    for spec in doc.get("legs", []):
        od_split = {_parse_od(k): float(v) for k, v in (spec.get("od_split") or {}).items()}
        legs.append(
            LegDef(
                name=str(spec["name"]),
                total=float(spec.get("total", 0.0)),
                od_split=od_split,
                schedule=_build_schedule(spec.get("schedule")),
                feeds=tuple(str(f) for f in spec.get("feeds") or ()),
            )
        )
    if not legs:
        raise ConfigurationError("scenario defines no demand legs")

    pert_spec = doc.get("perturbation") or {}
    perturbation = PerturbationSpec(
        mode=str(pert_spec.get("mode", "uniform_scale")),
        scale=float(pert_spec.get("scale", 0.0)),
        noise=float(pert_spec.get("noise", 0.0)),
        seed=None if pert_spec.get("seed") is None else int(pert_spec["seed"]),
    )
    noise_spec = doc.get("noise") or {}
    known_noise = {"process", "measurement", "prior", "leg_process", "leg_prior",
                   "cumulative_measurement"}
    unknown = set(noise_spec) - known_noise
    if unknown:
        raise ConfigurationError(f"unknown noise keys: {sorted(unknown)}")
    noise = NoiseFractions(**{k: float(v) for k, v in noise_spec.items()})

    est_spec = doc.get("estimation") or {}
    estimation = EstimationConfig(
        cutoff_minute=parse_minutes(est_spec.get("cutoff", grid.end)),
        prediction_intervals=int(est_spec.get("prediction_intervals", 2)),
        uniform_redistribution=bool(est_spec.get("uniform_redistribution", False)),
        refresh_assignment=bool(est_spec.get("refresh_assignment", False)),
    )
    models = tuple(str(m) for m in doc.get("models") or KNOWN_MODELS)
    return ScenarioConfig(
        name=str(doc.get("name", "scenario")),
        grid=grid,
        network=network,
        legs=tuple(legs),
        perturbation=perturbation,
        noise=noise,
        estimation=estimation,
        models=models,
        seed=int(doc.get("seed", 0)),
        measurement_noise_fraction=float(doc.get("measurement_noise_fraction", 0.0)),
        description=str(doc.get("description", "")),
    )


def load_scenario(path: str | FsPath) -> ScenarioConfig:
    """Parse a scenario file.

    Raises:
        OSError: if the file cannot be read.
        ConfigurationError: if the document does not describe a scenario.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"cannot parse scenario {path}: {exc}") from exc
    return scenario_from_mapping(doc)


def packaged_scenario_path(name: str = "toy") -> FsPath:
    """Filesystem path of a scenario shipped with the package."""
    ref = resources.files("odchain") / "scenarios" / f"{name}.scenario"
    with resources.as_file(ref) as p:
        return FsPath(p)
