"""Split-step Fourier parabolic-equation field solver and link-budget math.

Marches the reduced field u(z, r) outward in range by alternating a
refraction phase screen (altitude domain) with a narrow-angle
diffraction step (vertical-wavenumber domain).  The sea surface is a
perfect reflector enforced through odd symmetry: the field is extended
antisymmetrically below z = 0 so a single complex FFT of twice the grid
realizes the sine-transform boundary condition.  A raised-cosine
absorbing layer at the top of the internal domain (plus a matching
spectral low-pass) keeps ceiling artifacts out of the output crop.

The exported quantity is the pattern propagation factor |F|: the field
magnitude relative to free-space propagation from the same antenna, so
a vacuum run gives F = 1 everywhere in the far field.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from ._version import __version__
from .errors import (
    ConfigurationError,
    CorruptionError,
    DomainCoverageError,
    InvalidInputError,
    VersionError,
)
from .refractivity import EarthModel, ModifiedRefractivityProfile

SPEED_OF_LIGHT_M_PER_S = 299_792_458.0

DOMAIN_SCHEMA_VERSION = 1

# Smallest admissible FFT grid; below this the vertical spectrum is too
# coarse for any supported geometry.
MIN_TRANSFORM_SIZE = 1024
MAX_TRANSFORM_SIZE = 1 << 20

# The beam's Gaussian angular spectrum must fit inside the resolved
# angular bandwidth with this many half-power-width multiples of room,
# otherwise the grid clips real beam energy.
BEAM_CONTAINMENT_FACTOR = 1.8

# Fraction of the grid's angular bandwidth kept untouched by the
# spectral low-pass; the top 20 percent is tapered to zero.
SPECTRAL_TAPER_START = 0.8

# Auto-sized grids aim below the angular-bandwidth limit by this factor
# so the tapered spectral band holds no physical beam content.
AUTO_SPACING_MARGIN = 0.8


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SolverConfig:
    """Full parameterization of one propagation run.

    ``transform_size`` may be left ``None`` to have the solver pick the
    smallest power of two satisfying the angular-bandwidth criterion
    for the internal domain.  ``surface_boundary=False`` removes the
    sea surface entirely (free-run mode on a symmetric grid), used for
    free-space checks.  ``absorber_enabled=False`` turns off both the
    spatial taper and the spectral low-pass, leaving a strictly
    norm-conserving march.
    """

    frequency_hz: float
    antenna_height_m: float = 20.0
    antenna_beamwidth_deg: float = 1.0
    max_range_m: float = 50_000.0
    range_step_m: float = 100.0
    output_altitude_max_m: float = 30.0
    output_dz_m: float = 0.2
    transform_size: int | None = None
    absorber_fraction: float = 0.25
    earth: EarthModel = EarthModel()
    theta_max_deg: float = 3.0
    internal_height_factor: float = 4.0
    internal_height_m: float | None = None
    surface_boundary: bool = True
    absorber_enabled: bool = True
    fdb_factor: float = 10.0
    fdb_floor: float = 1e-9

    # -- derived quantities -------------------------------------------------

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT_M_PER_S / self.frequency_hz

    @property
    def wavenumber_rad_per_m(self) -> float:
        return 2.0 * math.pi * self.frequency_hz / SPEED_OF_LIGHT_M_PER_S

    @property
    def aperture_sigma_m(self) -> float:
        """Gaussian aperture width giving the configured half-power beamwidth."""
        theta = math.radians(self.antenna_beamwidth_deg)
        return 2.0 * math.sqrt(math.log(2.0)) / (self.wavenumber_rad_per_m * theta)

    @property
    def resolved_internal_height_m(self) -> float:
        if self.internal_height_m is not None:
            return self.internal_height_m
        return self.internal_height_factor * self.output_altitude_max_m

    @property
    def max_grid_spacing_m(self) -> float:
        """Angular-bandwidth limit on the vertical spacing."""
        return self.wavelength_m / (2.0 * math.sin(math.radians(self.theta_max_deg)))

    @property
    def vertical_span_m(self) -> float:
        """Height covered by the transform grid (doubled in free-run mode)."""
        h = self.resolved_internal_height_m
        return h if self.surface_boundary else 2.0 * h

    def validate(self) -> None:
        def bad(msg: str) -> ConfigurationError:
            return ConfigurationError(msg)

        numeric = {
            "frequency_hz": self.frequency_hz,
            "antenna_height_m": self.antenna_height_m,
            "antenna_beamwidth_deg": self.antenna_beamwidth_deg,
            "max_range_m": self.max_range_m,
            "range_step_m": self.range_step_m,
            "output_altitude_max_m": self.output_altitude_max_m,
            "output_dz_m": self.output_dz_m,
            "absorber_fraction": self.absorber_fraction,
            "theta_max_deg": self.theta_max_deg,
            "internal_height_factor": self.internal_height_factor,
            "fdb_factor": self.fdb_factor,
            "fdb_floor": self.fdb_floor,
        }
        for name, value in numeric.items():
            if not math.isfinite(value):
                raise bad(f"{name} must be finite, got {value!r}")
        if self.frequency_hz <= 0:
            raise bad(f"frequency_hz must be positive, got {self.frequency_hz}")
        if self.output_altitude_max_m <= 0:
            raise bad(
                f"output_altitude_max_m must be positive, got {self.output_altitude_max_m}"
            )
        if not (0 < self.antenna_height_m < self.output_altitude_max_m):
            raise bad(
                "antenna_height_m must satisfy 0 < height < output ceiling, got "
                f"{self.antenna_height_m} with ceiling {self.output_altitude_max_m}"
            )
        if not (0 < self.antenna_beamwidth_deg <= 45.0):
            raise bad(
                f"antenna_beamwidth_deg must be in (0, 45], got {self.antenna_beamwidth_deg}"
            )
        if self.range_step_m <= 0:
            raise bad(f"range_step_m must be positive, got {self.range_step_m}")
        if self.max_range_m < self.range_step_m:
            raise bad(
                f"max_range_m ({self.max_range_m}) must cover at least one "
                f"range step ({self.range_step_m})"
            )
        if not (0 < self.output_dz_m <= self.output_altitude_max_m):
            raise bad(
                f"output_dz_m must be in (0, output_altitude_max_m], got {self.output_dz_m}"
            )
        if not (0.0 < self.absorber_fraction < 0.5):
            raise bad(
                f"absorber_fraction must be in (0, 0.5), got {self.absorber_fraction}"
            )
        if not (0.0 < self.theta_max_deg < 90.0):
            raise bad(f"theta_max_deg must be in (0, 90), got {self.theta_max_deg}")
        min_theta = BEAM_CONTAINMENT_FACTOR * self.antenna_beamwidth_deg
        if self.theta_max_deg < min_theta:
            raise bad(
                "angular bandwidth too small for the antenna beam: theta_max_deg = "
                f"{self.theta_max_deg} < {BEAM_CONTAINMENT_FACTOR} * beamwidth = "
                f"{min_theta:.6g}"
            )
        if self.internal_height_m is not None:
            if not (
                math.isfinite(self.internal_height_m) and self.internal_height_m > 0
            ):
                raise bad(
                    f"internal_height_m must be positive, got {self.internal_height_m}"
                )
        elif self.internal_height_factor <= 0:
            raise bad(
                f"internal_height_factor must be positive, got {self.internal_height_factor}"
            )
        usable = self.resolved_internal_height_m * (1.0 - self.absorber_fraction)
        if usable < self.output_altitude_max_m:
            raise bad(
                "internal domain too short: usable height (below the absorber) is "
                f"{usable:.6g} m but the output ceiling is {self.output_altitude_max_m} m; "
                "raise internal_height_factor or internal_height_m"
            )
        if self.transform_size is not None and not (
            _is_power_of_two(self.transform_size)
            and self.transform_size >= MIN_TRANSFORM_SIZE
        ):
            raise bad(
                f"transform_size must be a power of two >= {MIN_TRANSFORM_SIZE}, "
                f"got {self.transform_size}"
            )
        if self.fdb_factor not in (10.0, 20.0):
            raise bad(f"fdb_factor must be 10 or 20, got {self.fdb_factor}")
        if self.fdb_floor <= 0:
            raise bad(f"fdb_floor must be positive, got {self.fdb_floor}")
        if self.earth.radius_m <= 0:
            raise bad(f"earth radius must be positive, got {self.earth.radius_m}")

    def resolved_transform_size(self) -> int:
        """Transform grid size after applying the angular-bandwidth criterion."""
        span = self.vertical_span_m
        limit = self.max_grid_spacing_m
        if self.transform_size is not None:
            dz = span / self.transform_size
            if dz > limit:
                raise ConfigurationError(
                    "angular-bandwidth criterion violated: vertical spacing "
                    f"dz = {dz:.6g} m > lambda / (2 sin theta_max) = {limit:.6g} m "
                    f"for transform_size {self.transform_size} over a "
                    f"{span:.6g} m span; enlarge transform_size or theta_max_deg"
                )
            return self.transform_size
        target = AUTO_SPACING_MARGIN * limit
        needed = max(MIN_TRANSFORM_SIZE, math.ceil(span / target))
        size = 1 << (needed - 1).bit_length()
        if size > MAX_TRANSFORM_SIZE:
            raise ConfigurationError(
                f"resolved transform_size {size} exceeds the {MAX_TRANSFORM_SIZE} cap; "
                "reduce the internal height or theta_max_deg"
            )
        return size

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "SolverConfig":
        data = dict(payload)
        earth = data.pop("earth", None)
        if earth is not None:
            data["earth"] = EarthModel(**earth)
        try:
            return cls(**data)
        except TypeError as exc:
            raise CorruptionError(f"malformed solver config: {exc}") from exc


@dataclass(frozen=True)
class ComplexFieldColumn:
    """One vertical slice of the reduced field during the march."""

    values: np.ndarray
    range_m: float

    def __post_init__(self) -> None:
        vals = np.asarray(self.values)
        if vals.ndim != 1:
            raise InvalidInputError("field column must be 1-D")
        if not np.all(np.isfinite(vals.real)) or not np.all(np.isfinite(vals.imag)):
            raise InvalidInputError("field column contains non-finite values")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class PropagationDomain:
    """|F|(range, altitude) on a regular output grid, range-major."""

    f_values: np.ndarray
    range_axis_m: np.ndarray
    altitude_axis_m: np.ndarray
    config: SolverConfig
    norm_history: np.ndarray | None = field(default=None, compare=False)
    final_field: ComplexFieldColumn | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        vals = np.asarray(self.f_values, dtype=np.float64)
        ranges = np.asarray(self.range_axis_m, dtype=np.float64)
        alts = np.asarray(self.altitude_axis_m, dtype=np.float64)
        if vals.ndim != 2:
            raise InvalidInputError("f_values must be 2-D (range x altitude)")
        if vals.shape != (ranges.size, alts.size):
            raise InvalidInputError(
                f"f_values shape {vals.shape} does not match axes "
                f"({ranges.size}, {alts.size})"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("f_values contain non-finite entries")
        if np.any(vals < 0):
            raise InvalidInputError("f_values must be non-negative")
        for name, axis in (("range_axis_m", ranges), ("altitude_axis_m", alts)):
            if axis.ndim != 1 or axis.size < 1:
                raise InvalidInputError(f"{name} must be a non-empty 1-D axis")
            if not np.all(np.isfinite(axis)):
                raise InvalidInputError(f"{name} contains non-finite values")
            if axis.size > 1 and np.any(np.diff(axis) <= 0):
                raise InvalidInputError(f"{name} must be strictly increasing")
        object.__setattr__(self, "f_values", vals)
        object.__setattr__(self, "range_axis_m", ranges)
        object.__setattr__(self, "altitude_axis_m", alts)


def _raised_cosine_window(z: np.ndarray, top: float, fraction: float) -> np.ndarray:
    """Amplitude taper: 1 below the absorber, cos^2 ramp to 0 at the top."""
    start = top * (1.0 - fraction)
    w = np.ones_like(z)
    ramp = z >= start
    w[ramp] = np.cos(0.5 * np.pi * (z[ramp] - start) / (top - start)) ** 2
    return w


def _spectral_lowpass(p: np.ndarray) -> np.ndarray:
    """Raised-cosine low-pass over the top of the wavenumber band."""
    p_abs = np.abs(p)
    p_max = p_abs.max()
    start = SPECTRAL_TAPER_START * p_max
    t = np.ones_like(p_abs)
    band = p_abs > start
    t[band] = np.cos(0.5 * np.pi * (p_abs[band] - start) / (p_max - start)) ** 2
    return t


def run_pe(
    profile: ModifiedRefractivityProfile,
    config: SolverConfig,
    *,
    keep_final_field: bool = False,
) -> PropagationDomain:
    """March the field through one range-homogeneous environment.

    Each range step applies half the refraction phase screen, the
    diffraction step in the vertical-wavenumber domain, the second half
    screen, and (when enabled) the absorbing taper.  |F| is extracted
    after every step and interpolated onto the output altitude axis.
    """
    config.validate()
    n = config.resolved_transform_size()
    k0 = config.wavenumber_rad_per_m
    dr = config.range_step_m
    sigma = config.aperture_sigma_m
    height = config.resolved_internal_height_m

    if config.surface_boundary:
        dz = height / n
        z = np.arange(n) * dz
        fft_len = 2 * n
    else:
        dz = 2.0 * height / n
        z = (np.arange(n) - n // 2) * dz
        fft_len = n

    # step-aliasing limit: the steepest resolved ray must not cross the
    # full transform span within one range step
    p_grid_max = math.pi / dz
    dr_limit = k0 * fft_len * dz * dz / (2.0 * math.pi)
    if dr > dr_limit:
        raise ConfigurationError(
            "angular-bandwidth criterion violated: range_step_m = "
            f"{dr:.6g} m > k0 * L * dz^2 / (2 pi) = {dr_limit:.6g} m for the "
            f"resolved transform grid (L = {fft_len}, dz = {dz:.6g} m); "
            "shorten range_step_m or enlarge transform_size"
        )

    if config.surface_boundary and profile.bottom_altitude_m > 1e-9:
        raise DomainCoverageError(
            f"profile starts at {profile.bottom_altitude_m} m but the march "
            "needs coverage from the surface (0 m) upward"
        )

    m_units = profile.sample(z, allow_below=not config.surface_boundary)
    half_screen = np.exp(0.5j * k0 * (m_units * 1.0e-6) * dr)

    p = 2.0 * np.pi * scipy.fft.fftfreq(fft_len, d=dz)
    propagator = np.exp(-0.5j * (p * p) * dr / k0)
    if config.absorber_enabled:
        propagator = propagator * _spectral_lowpass(p)
        if config.surface_boundary:
            window = _raised_cosine_window(z, height, config.absorber_fraction)
        else:
            window = _raised_cosine_window(
                np.abs(z), height, config.absorber_fraction
            )
    else:
        window = None

    u = np.exp(-((z - config.antenna_height_m) ** 2) / (2.0 * sigma * sigma)).astype(
        np.complex128
    )
    if config.surface_boundary:
        u -= np.exp(-((z + config.antenna_height_m) ** 2) / (2.0 * sigma * sigma))
        u[0] = 0.0

    n_steps = int(math.floor(config.max_range_m / dr + 1e-9))
    n_alt = int(round(config.output_altitude_max_m / config.output_dz_m)) + 1
    altitude_axis = np.linspace(0.0, config.output_altitude_max_m, n_alt)
    range_axis = dr * np.arange(1, n_steps + 1)

    f_values = np.empty((n_steps, n_alt), dtype=np.float64)
    norms = np.empty(n_steps + 1, dtype=np.float64)
    norms[0] = math.sqrt(dz * float(np.sum(np.abs(u) ** 2)))

    ext = np.empty(fft_len, dtype=np.complex128) if config.surface_boundary else None

    for step in range(n_steps):
        u *= half_screen
        if config.surface_boundary:
            # odd extension below the surface realizes the sine transform
            ext[:n] = u
            ext[n] = 0.0
            ext[n + 1 :] = -u[:0:-1]
            spec = scipy.fft.fft(ext, overwrite_x=True)
            spec *= propagator
            ext_back = scipy.fft.ifft(spec, overwrite_x=True)
            u = ext_back[:n]
            u[0] = 0.0
        else:
            spec = scipy.fft.fft(u, overwrite_x=True)
            spec *= propagator
            u = scipy.fft.ifft(spec, overwrite_x=True)
        u *= half_screen
        if window is not None:
            u *= window
        norms[step + 1] = math.sqrt(dz * float(np.sum(np.abs(u) ** 2)))
        r = range_axis[step]
        column = np.abs(u) * (math.sqrt(r / k0) / sigma)
        f_values[step] = np.interp(altitude_axis, z, column)

    final = ComplexFieldColumn(u.copy(), float(range_axis[-1])) if keep_final_field else None
    return PropagationDomain(
        f_values=f_values,
        range_axis_m=range_axis,
        altitude_axis_m=altitude_axis,
        config=config,
        norm_history=norms,
        final_field=final,
    )


def two_ray_reference(config: SolverConfig, points) -> np.ndarray:
    """Analytic flat-earth two-ray |F| over a perfectly reflecting sea.

    Direct plus surface-reflected ray with reflection coefficient -1;
    valid well inside the radar horizon where the flat-earth path
    difference 2 h_t h_r / r holds.
    """
    k0 = config.wavenumber_rad_per_m
    h_t = config.antenna_height_m
    out = np.empty(len(points), dtype=np.float64)
    for i, (r, z) in enumerate(points):
        if not (math.isfinite(r) and r > 0):
            raise InvalidInputError(f"range must be positive, got {r}")
        if not (math.isfinite(z) and z >= 0):
            raise InvalidInputError(f"altitude must be >= 0, got {z}")
        half_phase = k0 * h_t * z / r
        out[i] = 2.0 * abs(math.sin(half_phase))
    return out


def f_to_fdb(values, *, factor: float = 10.0, floor: float = 1e-9):
    """Convert |F| to decibels: factor * log10(F).

    Values below ``floor`` (including exact zeros) are clamped to the
    floor before taking the log; the second return value flags which
    entries were clamped.  Scalar input gives scalar output.
    """
    if factor not in (10.0, 20.0):
        raise ConfigurationError(f"fdb factor must be 10 or 20, got {factor}")
    if not (math.isfinite(floor) and floor > 0):
        raise ConfigurationError(f"fdb floor must be positive, got {floor}")
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("F values must be finite")
    if np.any(arr < 0):
        raise InvalidInputError("F values must be non-negative")
    clamped = arr < floor
    out = factor * np.log10(np.maximum(arr, floor))
    if np.isscalar(values) or np.ndim(values) == 0:
        return float(out), bool(clamped)
    return out, clamped


def propagation_loss(values, config: SolverConfig, slant_range_m: float):
    """One-way propagation loss 20 log10(2 k0 R) - 20 log10(F), in dB.

    The field term always uses the 20 log10 power convention regardless
    of the configured F_dB factor.  Returns (loss, clamped_flags) with
    the same clamping semantics as :func:`f_to_fdb`.
    """
    if not (math.isfinite(slant_range_m) and slant_range_m > 0):
        raise InvalidInputError(f"slant range must be positive, got {slant_range_m}")
    fdb20, clamped = f_to_fdb(values, factor=20.0, floor=config.fdb_floor)
    spreading = 20.0 * math.log10(2.0 * config.wavenumber_rad_per_m * slant_range_m)
    if np.isscalar(fdb20):
        return spreading - fdb20, clamped
    return spreading - fdb20, clamped


@dataclass(frozen=True)
class LinkBudget:
    """One-way link parameters: powers in watts, gains unitless."""

    transmit_power_w: float
    transmit_gain: float
    receive_gain: float
    slant_range_m: float

    def __post_init__(self) -> None:
        for name in (
            "transmit_power_w",
            "transmit_gain",
            "receive_gain",
            "slant_range_m",
        ):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidInputError(f"{name} must be finite and positive, got {value}")


def received_power(budget: LinkBudget, f_value: float, config: SolverConfig) -> float:
    """One-way received power P_t * G_t * G_r * (F / (2 k0 R))^2, in watts."""
    if budget.slant_range_m == 0:
        raise InvalidInputError("slant range must be nonzero")
    if not (math.isfinite(f_value) and f_value >= 0):
        raise InvalidInputError(f"F must be finite and >= 0, got {f_value}")
    k0 = config.wavenumber_rad_per_m
    ratio = f_value / (2.0 * k0 * budget.slant_range_m)
    return budget.transmit_power_w * budget.transmit_gain * budget.receive_gain * ratio * ratio


# -- domain raster file ------------------------------------------------------


def write_domain(
    domain: PropagationDomain, path: str, extra_metadata: dict | None = None
) -> None:
    """Write a domain raster: one JSON header line + float32 payload.

    The payload is |F| in range-major order, little-endian float32,
    checksummed with sha256.  Writes are atomic (temp file + rename).
    """
    payload = np.ascontiguousarray(domain.f_values, dtype="<f4").tobytes()
    header = {
        "schema_version": DOMAIN_SCHEMA_VERSION,
        "kind": "propagation_domain",
        "tool_version": __version__,
        "payload_dtype": "<f4",
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "shape": list(domain.f_values.shape),
        "range_axis_m": domain.range_axis_m.tolist(),
        "altitude_axis_m": domain.altitude_axis_m.tolist(),
        "config": domain.config.to_dict(),
        "metadata": dict(extra_metadata or {}),
    }
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)
    os.replace(tmp, path)


def read_domain(path: str) -> PropagationDomain:
    """Load a domain raster written by :func:`write_domain`."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"domain file {path} has an unreadable header: {exc}") from exc
    if not isinstance(header, dict) or header.get("kind") != "propagation_domain":
        raise CorruptionError(f"domain file {path} has the wrong kind")
    if header.get("schema_version") != DOMAIN_SCHEMA_VERSION:
        raise VersionError(
            f"domain schema {header.get('schema_version')} not supported "
            f"(expected {DOMAIN_SCHEMA_VERSION})"
        )
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_sha256"):
        raise CorruptionError(f"domain file {path} failed its payload checksum")
    try:
        shape = tuple(int(v) for v in header["shape"])
        ranges = np.asarray(header["range_axis_m"], dtype=np.float64)
        alts = np.asarray(header["altitude_axis_m"], dtype=np.float64)
        config = SolverConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptionError(f"domain file {path} has a malformed header: {exc}") from exc
    expected_bytes = shape[0] * shape[1] * 4
    if len(payload) != expected_bytes:
        raise CorruptionError(
            f"domain file {path} payload is {len(payload)} bytes, expected {expected_bytes}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    return PropagationDomain(
        f_values=values,
        range_axis_m=ranges,
        altitude_axis_m=alts,
        config=config,
    )


def domain_metadata(path: str) -> dict:
    """Read only the JSON header of a domain raster."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"domain file {path} has an unreadable header: {exc}") from exc
    if not isinstance(header, dict):
        raise CorruptionError(f"domain file {path} has a malformed header")
    return header
