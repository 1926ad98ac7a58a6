"""Modified refractivity and synthetic marine boundary-layer profiles.

The quantity propagated through the rest of the package is the modified
refractivity M(z): radio refractivity N plus the flat-earth correction
term that folds the earth's curvature into the atmosphere.  Working with
M lets the field solver treat the surface as flat while rays still bend
the right way relative to it.

Profiles are stored as explicit (altitude, M) level tables.  Generators
are provided for the four scenario families used by the dataset
pipeline: a linear standard atmosphere, a log-linear evaporation duct,
and two trilinear shapes (surface-based and elevated trapping layers).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    CorruptionError,
    DataError,
    DomainCoverageError,
    InvalidInputError,
    VersionError,
)

PROFILE_SCHEMA_VERSION = 1

# Dry and wet term coefficients for radio refractivity, M-units.
DRY_TERM_COEFF = 77.6
WET_TERM_COEFF = 373256.0

# Default mean earth radius, metres.
DEFAULT_EARTH_RADIUS_M = 6.371e6

# Linear standard-atmosphere M gradient, M-units per metre.
STANDARD_LAPSE_M_PER_M = 0.118

# Default surface M value for generated profiles, M-units.
DEFAULT_SURFACE_M = 340.0

# Neutral-stability evaporation duct constant, M-units per metre.
EVAPORATION_SLOPE_M_PER_M = 0.13

# Aerodynamic roughness length of a calm sea surface, metres.
DEFAULT_ROUGHNESS_LENGTH_M = 1.5e-4

# Evaporation duct heights above this are rejected: the log-linear
# closure stops being meaningful.
MAX_EVAPORATION_DUCT_HEIGHT_M = 40.0

PROFILE_FAMILIES = ("standard", "evaporation", "surface_trilinear", "elevated")


@dataclass(frozen=True)
class EarthModel:
    """Spherical earth used for the flat-earth curvature correction."""

    radius_m: float = DEFAULT_EARTH_RADIUS_M

    def __post_init__(self) -> None:
        if not (math.isfinite(self.radius_m) and self.radius_m > 0):
            raise InvalidInputError(
                f"earth radius must be finite and positive, got {self.radius_m!r}"
            )


@dataclass(frozen=True)
class AtmosphericLevel:
    """Thermodynamic state at one altitude.

    Units: altitude in metres above the surface, temperature in kelvin,
    total pressure and water-vapor partial pressure in millibars.
    """

    altitude_m: float
    temperature_k: float
    pressure_mb: float
    vapor_pressure_mb: float

    def __post_init__(self) -> None:
        vals = (
            self.altitude_m,
            self.temperature_k,
            self.pressure_mb,
            self.vapor_pressure_mb,
        )
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError(f"atmospheric level has non-finite entries: {vals}")
        if self.temperature_k <= 0:
            raise InvalidInputError(
                f"temperature must be positive, got {self.temperature_k}"
            )
        if self.pressure_mb < 0:
            raise InvalidInputError(f"pressure must be >= 0, got {self.pressure_mb}")
        if self.vapor_pressure_mb < 0:
            raise InvalidInputError(
                f"vapor pressure must be >= 0, got {self.vapor_pressure_mb}"
            )
        if self.vapor_pressure_mb > self.pressure_mb:
            raise InvalidInputError(
                "vapor partial pressure cannot exceed total pressure "
                f"({self.vapor_pressure_mb} > {self.pressure_mb})"
            )
        if self.altitude_m < 0:
            raise InvalidInputError(f"altitude must be >= 0, got {self.altitude_m}")


def modified_refractivity(level: AtmosphericLevel, earth: EarthModel | None = None) -> float:
    """Modified refractivity M at one atmospheric level, in M-units.

    Dry and wet refractivity terms plus the altitude/earth-radius
    curvature correction.  With zero pressure the result reduces to the
    pure curvature term, which is handy as an exact reference point.
    """
    if earth is None:
        earth = EarthModel()
    t = level.temperature_k
    dry = DRY_TERM_COEFF * level.pressure_mb / t
    wet = WET_TERM_COEFF * level.vapor_pressure_mb / (t * t)
    curvature = level.altitude_m / earth.radius_m * 1.0e6
    return dry + wet + curvature


@dataclass(frozen=True)
class ModifiedRefractivityProfile:
    """Piecewise-linear M(z) given as a strictly ascending level table.

    ``levels`` holds (altitude_m, m_units) pairs.  Evaluation between
    levels is linear; above the top level the last gradient is
    extrapolated.  Queries below the first level are out of coverage
    unless explicitly allowed (the solver mirrors the atmosphere for
    its below-surface image grid).
    """

    levels: tuple[tuple[float, float], ...]
    family: str = "unspecified"
    seed: int | None = None
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if len(self.levels) < 2:
            raise InvalidInputError(
                f"profile needs at least 2 levels, got {len(self.levels)}"
            )
        alts = [float(z) for z, _ in self.levels]
        ms = [float(m) for _, m in self.levels]
        if not all(math.isfinite(v) for v in alts + ms):
            raise InvalidInputError("profile levels contain non-finite values")
        for lo, hi in zip(alts, alts[1:]):
            if hi <= lo:
                raise InvalidInputError(
                    f"profile altitudes must be strictly increasing ({lo} -> {hi})"
                )
        # normalize storage to plain float tuples
        object.__setattr__(
            self, "levels", tuple((float(z), float(m)) for z, m in self.levels)
        )

    @property
    def altitudes_m(self) -> np.ndarray:
        return np.array([z for z, _ in self.levels], dtype=np.float64)

    @property
    def m_units(self) -> np.ndarray:
        return np.array([m for _, m in self.levels], dtype=np.float64)

    @property
    def top_altitude_m(self) -> float:
        return self.levels[-1][0]

    @property
    def bottom_altitude_m(self) -> float:
        return self.levels[0][0]

    def sample(self, altitudes_m: np.ndarray, *, allow_below: bool = False) -> np.ndarray:
        """Evaluate M on an altitude grid.

        Linear interpolation between levels, gradient extrapolation
        above the top level.  Queries below the bottom level raise
        unless ``allow_below`` is set, in which case the first gradient
        is extrapolated downward.
        """
        z = np.asarray(altitudes_m, dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise InvalidInputError("altitude query contains non-finite values")
        zs = self.altitudes_m
        ms = self.m_units
        if not allow_below and z.size and float(z.min()) < zs[0] - 1e-9:
            raise DomainCoverageError(
                f"profile starts at {zs[0]} m but was queried down to {float(z.min())} m"
            )
        out = np.interp(z, zs, ms)
        # np.interp clamps outside the table; replace with gradient extrapolation
        top_slope = (ms[-1] - ms[-2]) / (zs[-1] - zs[-2])
        above = z > zs[-1]
        if np.any(above):
            out = np.where(above, ms[-1] + (z - zs[-1]) * top_slope, out)
        below = z < zs[0]
        if np.any(below):
            bot_slope = (ms[1] - ms[0]) / (zs[1] - zs[0])
            out = np.where(below, ms[0] + (z - zs[0]) * bot_slope, out)
        return out

    def extrapolates_above(self, altitude_m: float) -> bool:
        """True if evaluating up to ``altitude_m`` leaves the level table."""
        return altitude_m > self.top_altitude_m + 1e-9

    def to_dict(self) -> dict:
        return {
            "schema_version": PROFILE_SCHEMA_VERSION,
            "family": self.family,
            "seed": self.seed,
            "levels": [[z, m] for z, m in self.levels],
            "metadata": dict(self.metadata),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModifiedRefractivityProfile":
        try:
            version = payload["schema_version"]
            family = payload["family"]
            seed = payload.get("seed")
            levels = tuple((float(z), float(m)) for z, m in payload["levels"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptionError(f"malformed profile payload: {exc}") from exc
        if version != PROFILE_SCHEMA_VERSION:
            raise VersionError(
                f"profile schema {version} not supported (expected {PROFILE_SCHEMA_VERSION})"
            )
        return cls(
            levels=levels,
            family=str(family),
            seed=None if seed is None else int(seed),
            metadata=dict(payload.get("metadata", {})),
        )


def write_profile(profile: ModifiedRefractivityProfile, path: str) -> None:
    """Serialize a profile to JSON (full float precision, atomic write)."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(profile.to_dict(), fh, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def read_profile(path: str) -> ModifiedRefractivityProfile:
    """Load a profile written by :func:`write_profile`."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptionError(f"profile file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise CorruptionError(f"profile file {path} does not hold an object")
    return ModifiedRefractivityProfile.from_dict(payload)


def standard_atmosphere_profile(
    z_max_m: float,
    n_levels: int = 2,
    *,
    surface_m: float = DEFAULT_SURFACE_M,
    lapse_m_per_m: float = STANDARD_LAPSE_M_PER_M,
) -> ModifiedRefractivityProfile:
    """Linear M(z) = surface + lapse * z sampled on an even grid."""
    if not (math.isfinite(z_max_m) and z_max_m > 0):
        raise InvalidInputError(f"z_max must be positive, got {z_max_m}")
    if n_levels < 2:
        raise InvalidInputError(f"need at least 2 levels, got {n_levels}")
    if not (math.isfinite(surface_m) and math.isfinite(lapse_m_per_m)):
        raise InvalidInputError("surface value and lapse must be finite")
    z = np.linspace(0.0, z_max_m, n_levels)
    m = surface_m + lapse_m_per_m * z
    return ModifiedRefractivityProfile(
        levels=tuple(zip(z.tolist(), m.tolist())),
        family="standard",
        metadata={"surface_m": surface_m, "lapse_m_per_m": lapse_m_per_m},
    )


@dataclass(frozen=True)
class DuctParameters:
    """Shape parameters for one generated duct profile.

    ``strength_m_units`` is the total M decrease across the trapping
    layer for the trilinear families; the evaporation family derives
    its shape from the duct height alone and ignores it.
    """

    family: str
    duct_height_m: float
    strength_m_units: float = 0.0
    base_m_units: float = DEFAULT_SURFACE_M
    roughness_length_m: float = DEFAULT_ROUGHNESS_LENGTH_M
    lapse_m_per_m: float = STANDARD_LAPSE_M_PER_M

    def __post_init__(self) -> None:
        if self.family not in PROFILE_FAMILIES:
            raise ConfigurationError(
                f"unsupported profile family {self.family!r}; "
                f"known families: {', '.join(PROFILE_FAMILIES)}"
            )
        vals = (
            self.duct_height_m,
            self.strength_m_units,
            self.base_m_units,
            self.roughness_length_m,
            self.lapse_m_per_m,
        )
        if not all(math.isfinite(v) for v in vals):
            raise InvalidInputError(f"duct parameters contain non-finite values: {vals}")
        if self.duct_height_m < 0:
            raise InvalidInputError(
                f"duct height must be >= 0, got {self.duct_height_m}"
            )
        if self.family == "evaporation" and self.duct_height_m > MAX_EVAPORATION_DUCT_HEIGHT_M:
            raise InvalidInputError(
                f"evaporation duct height {self.duct_height_m} m exceeds the "
                f"{MAX_EVAPORATION_DUCT_HEIGHT_M} m validity cap"
            )
        if self.roughness_length_m <= 0:
            raise InvalidInputError(
                f"roughness length must be positive, got {self.roughness_length_m}"
            )
        if self.family in ("surface_trilinear", "elevated"):
            if self.strength_m_units < 0:
                raise InvalidInputError(
                    f"trapping-layer strength must be >= 0, got {self.strength_m_units}"
                )
            if self.duct_height_m <= 0:
                raise InvalidInputError(
                    f"{self.family} profiles need a positive duct height"
                )


# Fraction of the duct height occupied by the trapping layer in the two
# trilinear families.  Surface-based ducts get a thicker layer so that
# moderate strengths already pull M below its surface value.
TRILINEAR_LAYER_FRACTION = {"surface_trilinear": 1.0 / 3.0, "elevated": 1.0 / 4.0}


def _evaporation_m(params: DuctParameters, z: np.ndarray) -> np.ndarray:
    z0 = params.roughness_length_m
    h = params.duct_height_m
    return params.base_m_units + EVAPORATION_SLOPE_M_PER_M * (
        z - h * np.log((z + z0) / z0)
    )


def _trilinear_m(params: DuctParameters, z: np.ndarray) -> np.ndarray:
    h = params.duct_height_m
    layer_bottom = h * (1.0 - TRILINEAR_LAYER_FRACTION[params.family])
    lapse = params.lapse_m_per_m
    layer_thickness = h - layer_bottom
    trap_slope = -params.strength_m_units / layer_thickness
    m_at_layer_bottom = params.base_m_units + lapse * layer_bottom
    m_at_top = m_at_layer_bottom + trap_slope * layer_thickness
    below = params.base_m_units + lapse * z
    inside = m_at_layer_bottom + trap_slope * (z - layer_bottom)
    above = m_at_top + lapse * (z - h)
    return np.where(z < layer_bottom, below, np.where(z <= h, inside, above))


def duct_profile(params: DuctParameters, z_grid_m: np.ndarray) -> ModifiedRefractivityProfile:
    """Evaluate one scenario family on an altitude grid.

    The ``standard`` family ignores the duct parameters other than the
    base value and lapse, and matches ``standard_atmosphere_profile`` on
    the same grid.  Grids for the trilinear families should include the
    layer breakpoints if the kinks must be represented exactly.
    """
    z = np.asarray(z_grid_m, dtype=np.float64)
    if z.ndim != 1 or z.size < 2:
        raise InvalidInputError("z grid must be 1-D with at least 2 points")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("z grid contains non-finite values")
    if np.any(np.diff(z) <= 0):
        raise InvalidInputError("z grid must be strictly increasing")
    if z[0] < 0:
        raise InvalidInputError(f"z grid must start at or above 0, got {z[0]}")

    if params.family == "standard":
        m = params.base_m_units + params.lapse_m_per_m * z
    elif params.family == "evaporation":
        m = _evaporation_m(params, z)
    elif params.family in ("surface_trilinear", "elevated"):
        m = _trilinear_m(params, z)
    else:  # unreachable: DuctParameters validates the family
        raise ConfigurationError(f"unsupported profile family {params.family!r}")

    return ModifiedRefractivityProfile(
        levels=tuple(zip(z.tolist(), m.tolist())),
        family=params.family,
        metadata={
            "duct_height_m": params.duct_height_m,
            "strength_m_units": params.strength_m_units,
            "base_m_units": params.base_m_units,
            "roughness_length_m": params.roughness_length_m,
            "lapse_m_per_m": params.lapse_m_per_m,
        },
    )


@dataclass(frozen=True)
class ProfileFamilySpec:
    """Sampling ranges for one scenario family.

    Ranges are inclusive [low, high] bounds drawn uniformly.  A range
    with low == high pins the parameter; low > high is rejected.  The
    default duct-height and strength ranges depend on the family and
    are resolved by :func:`default_family_spec`.
    """

    family: str
    base_m_range: tuple[float, float] = (300.0, 400.0)
    duct_height_range_m: tuple[float, float] = (0.0, 0.0)
    strength_range_m_units: tuple[float, float] = (0.0, 0.0)
    roughness_length_m: float = DEFAULT_ROUGHNESS_LENGTH_M
    lapse_m_per_m: float = STANDARD_LAPSE_M_PER_M
    z_max_m: float = 1000.0

    def __post_init__(self) -> None:
        if self.family not in PROFILE_FAMILIES:
            raise ConfigurationError(
                f"unsupported profile family {self.family!r}; "
                f"known families: {', '.join(PROFILE_FAMILIES)}"
            )
        for name, rng in (
            ("base_m_range", self.base_m_range),
            ("duct_height_range_m", self.duct_height_range_m),
            ("strength_range_m_units", self.strength_range_m_units),
        ):
            lo, hi = rng
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ConfigurationError(f"{name} contains non-finite bounds: {rng}")
            if lo > hi:
                raise ConfigurationError(f"{name} is empty: low {lo} > high {hi}")
        if not (math.isfinite(self.z_max_m) and self.z_max_m > 0):
            raise ConfigurationError(f"z_max must be positive, got {self.z_max_m}")


# Family-default sampling ranges.  Evaporation duct heights follow the
# few-to-few-tens-of-metres climatology of marine surface layers; the
# trilinear layer heights and strengths cover weak through strongly
# trapping conditions.
_FAMILY_DEFAULTS: dict[str, dict] = {
    "standard": {},
    "evaporation": {"duct_height_range_m": (2.0, 35.0)},
    "surface_trilinear": {
        "duct_height_range_m": (20.0, 120.0),
        "strength_range_m_units": (2.0, 40.0),
    },
    "elevated": {
        "duct_height_range_m": (50.0, 280.0),
        "strength_range_m_units": (2.0, 40.0),
    },
}


def default_family_spec(family: str, **overrides) -> ProfileFamilySpec:
    """Family spec with that family's default parameter ranges."""
    if family not in _FAMILY_DEFAULTS:
        raise ConfigurationError(
            f"unsupported profile family {family!r}; "
            f"known families: {', '.join(PROFILE_FAMILIES)}"
        )
    kwargs: dict = dict(_FAMILY_DEFAULTS[family])
    kwargs.update(overrides)
    return ProfileFamilySpec(family=family, **kwargs)


def _family_z_grid(spec: ProfileFamilySpec, params: DuctParameters) -> np.ndarray:
    """Altitude grid tailored to the family's vertical structure."""
    z_max = spec.z_max_m
    if params.family == "standard":
        return np.array([0.0, z_max])
    if params.family == "evaporation":
        # log-law curvature lives in the lowest tens of metres
        dense_top = min(60.0, z_max / 2.0)
        dense = np.geomspace(1e-3, dense_top, 120)
        coarse = np.linspace(dense_top * 1.2, z_max, 24)
        return np.concatenate(([0.0], dense, coarse))
    # trilinear families: exact breakpoints plus linear fill
    h = params.duct_height_m
    layer_bottom = h * (1.0 - TRILINEAR_LAYER_FRACTION[params.family])
    points = np.unique(np.array([0.0, layer_bottom, h, max(z_max, h * 1.5)]))
    return points


def sample_profile_family(
    seed: int,
    spec: ProfileFamilySpec,
    count: int,
) -> list[ModifiedRefractivityProfile]:
    """Draw ``count`` profiles from one family, deterministically.

    The same (seed, spec, count) always returns the same list.  Each
    profile records the generator seed, its family, and the drawn
    parameters in its metadata.
    """
    if count < 1:
        raise InvalidInputError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    profiles: list[ModifiedRefractivityProfile] = []
    for index in range(count):
        base = float(rng.uniform(*spec.base_m_range))
        duct_height = float(rng.uniform(*spec.duct_height_range_m))
        strength = float(rng.uniform(*spec.strength_range_m_units))
        params = DuctParameters(
            family=spec.family,
            duct_height_m=duct_height,
            strength_m_units=strength,
            base_m_units=base,
            roughness_length_m=spec.roughness_length_m,
            lapse_m_per_m=spec.lapse_m_per_m,
        )
        profile = duct_profile(params, _family_z_grid(spec, params))
        metadata = dict(profile.metadata)
        metadata["draw_index"] = index
        profiles.append(
            ModifiedRefractivityProfile(
                levels=profile.levels,
                family=profile.family,
                seed=int(seed),
                metadata=metadata,
            )
        )
    return profiles
