"""Image-comparison metrics and the significance test used in reports.

Three per-image metrics operate on normalized rasters: mean squared
error, structural similarity, and a Frechet distance between patch
feature statistics drawn from a seed-determined convolutional filter
bank. A Welch two-sample t-test compares metric populations between
experiment arms.

All functions are pure; ``FeatureBank`` is immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import stdtr

from .errors import InvalidInputError, NumericalError

SSIM_WINDOW_SIZE = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

PATCH_SIZE = 16
PATCH_STRIDE = 8

# negative covariance eigenvalues beyond this are a hard failure
EIGENVALUE_TOLERANCE = 1e-8

METRIC_CSV_COLUMNS = ("case_id", "frequency", "experiment", "mse", "ssim", "fid")


def _as_image(name: str, arr) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2:
        raise InvalidInputError(f"{name} must be a 2-D array, got ndim={out.ndim}")
    if not np.all(np.isfinite(out)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return out


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    ia = _as_image("a", a)
    ib = _as_image("b", b)
    if ia.shape != ib.shape:
        raise InvalidInputError(f"shape mismatch: {ia.shape} vs {ib.shape}")
    return ia, ib


@dataclass(frozen=True)
class MetricValue:
    """Per-case metric triple attached to a case identifier."""

    case_id: str
    mse: float
    ssim: float
    fid: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mse) and self.mse >= 0.0):
            raise InvalidInputError(f"mse must be finite and >= 0, got {self.mse}")
        if not (math.isfinite(self.ssim) and -1.0 <= self.ssim <= 1.0):
            raise InvalidInputError(f"ssim must lie in [-1, 1], got {self.ssim}")
        if not (math.isfinite(self.fid) and self.fid >= 0.0):
            raise InvalidInputError(f"fid must be finite and >= 0, got {self.fid}")


def mse(a, b) -> float:
    """Mean over all pixels of the squared difference."""
    ia, ib = _check_pair(a, b)
    diff = ia - ib
    return float(np.mean(diff * diff))


def _gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # separable valid-mode correlation; @ keeps summation order fixed
    rows = sliding_window_view(img, kernel.size, axis=0) @ kernel
    return sliding_window_view(rows, kernel.size, axis=1) @ kernel


def ssim(a, b, *, data_range: float = 1.0) -> float:
    """Mean local structural similarity over an 11x11 Gaussian window.

    Window constants follow the classic index: sigma 1.5, K1 = 0.01,
    K2 = 0.03, dynamic range 1 for normalized images. Identical inputs
    score exactly 1.0.
    """
    ia, ib = _check_pair(a, b)
    if not (math.isfinite(data_range) and data_range > 0.0):
        raise InvalidInputError(f"data_range must be positive, got {data_range}")
    if min(ia.shape) < SSIM_WINDOW_SIZE:
        raise InvalidInputError(
            f"image sides must be >= {SSIM_WINDOW_SIZE}, got {ia.shape}"
        )
    kernel = _gaussian_kernel(SSIM_SIGMA, (SSIM_WINDOW_SIZE - 1) // 2)
    ux = _filter_valid(ia, kernel)
    uy = _filter_valid(ib, kernel)
    uxx = _filter_valid(ia * ia, kernel)
    uyy = _filter_valid(ib * ib, kernel)
    uxy = _filter_valid(ia * ib, kernel)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    cov = uxy - ux * uy
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    score = ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / (
        (ux * ux + uy * uy + c1) * (vx + vy + c2)
    )
    return float(np.mean(score))


class FeatureBank:
    """Seed-determined convolutional filters for patch features.

    Filters are zero-mean, unit-norm 5x5 kernels drawn from a PCG64
    stream, so identical seeds reproduce identical banks on any
    platform. Each 16x16 patch is convolved with every filter
    (valid mode), rectified, and mean-pooled over the four quadrants
    of the response, giving n_filters * 4 features per patch.
    """

    def __init__(self, seed: int, *, n_filters: int = 16, filter_size: int = 5):
        if n_filters < 1 or filter_size < 1:
            raise InvalidInputError("n_filters and filter_size must be >= 1")
        if filter_size >= PATCH_SIZE:
            raise InvalidInputError(
                f"filter_size {filter_size} must be smaller than patches ({PATCH_SIZE})"
            )
        if (PATCH_SIZE - filter_size + 1) % 2 != 0:
            raise InvalidInputError(
                "patch response must split into quadrants; use an odd filter_size"
            )
        self._seed = int(seed)
        rng = np.random.default_rng(self._seed)
        raw = rng.standard_normal((n_filters, filter_size, filter_size))
        raw -= raw.mean(axis=(1, 2), keepdims=True)
        raw /= np.linalg.norm(raw.reshape(n_filters, -1), axis=1)[:, None, None]
        self._filters = raw
        self._filters.setflags(write=False)

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def n_filters(self) -> int:
        return self._filters.shape[0]

    @property
    def filter_size(self) -> int:
        return self._filters.shape[1]

    @property
    def filters(self) -> np.ndarray:
        return self._filters

    @property
    def feature_dim(self) -> int:
        return self.n_filters * 4

    def patch_features(self, image) -> np.ndarray:
        """Feature vectors of all 16x16 patches (stride 8), row-major."""
        img = _as_image("image", image)
        h, w = img.shape
        if h < PATCH_SIZE or w < PATCH_SIZE:
            raise InvalidInputError(
                f"image {img.shape} smaller than patch size {PATCH_SIZE}"
            )
        fs = self.filter_size
        # whole-image convolution equals per-patch convolution because
        # every tap of an interior response lies inside the patch
        windows = sliding_window_view(img, (fs, fs))
        response = np.einsum("ijkl,fkl->fij", windows, self._filters, optimize=True)
        np.maximum(response, 0.0, out=response)

        half = (PATCH_SIZE - fs + 1) // 2
        # summed-area tables turn quadrant means into four lookups
        sat = np.zeros(
            (self.n_filters, response.shape[1] + 1, response.shape[2] + 1)
        )
        np.cumsum(response, axis=1, out=sat[:, 1:, 1:])
        np.cumsum(sat[:, 1:, 1:], axis=2, out=sat[:, 1:, 1:])

        row_starts = np.arange(0, h - PATCH_SIZE + 1, PATCH_STRIDE)
        col_starts = np.arange(0, w - PATCH_SIZE + 1, PATCH_STRIDE)
        features = np.empty(
            (row_starts.size * col_starts.size, self.feature_dim)
        )
        rr, cc = np.meshgrid(row_starts, col_starts, indexing="ij")
        rr = rr.ravel()
        cc = cc.ravel()
        q = 0
        for dr in (0, half):
            for dc in (0, half):
                r0 = rr + dr
                c0 = cc + dc
                box = (
                    sat[:, r0 + half, c0 + half]
                    - sat[:, r0, c0 + half]
                    - sat[:, r0 + half, c0]
                    + sat[:, r0, c0]
                )
                features[:, q :: 4] = box.T / float(half * half)
                q += 1
        return features


def feature_statistics(image, bank: FeatureBank) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance of a single image's patch features."""
    feats = bank.patch_features(image)
    return gaussian_statistics(feats)


def gaussian_statistics(features) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance (rows are observations)."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise InvalidInputError(f"features must be 2-D, got ndim={feats.ndim}")
    n = feats.shape[0]
    if n < 2:
        raise InvalidInputError(f"need >= 2 feature vectors for covariance, got {n}")
    mu = feats.mean(axis=0)
    centered = feats - mu
    sigma = (centered.T @ centered) / (n - 1)
    return mu, sigma


def _psd_sqrt(matrix: np.ndarray, label: str) -> np.ndarray:
    sym = 0.5 * (matrix + matrix.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() < -EIGENVALUE_TOLERANCE:
        raise NumericalError(
            f"{label} is not positive semidefinite: min eigenvalue "
            f"{eigvals.min():.3e} below -{EIGENVALUE_TOLERANCE:.0e}"
        )
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def frechet_gaussian_distance(mu_a, sigma_a, mu_b, sigma_b) -> float:
    """Squared Frechet distance between two Gaussians.

    d2 = |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)); the cross
    term is evaluated through the symmetric product
    sqrt(S_a) S_b sqrt(S_a), whose eigenvalues match (S_a S_b) exactly,
    keeping every square root on a symmetric matrix. Eigenvalues below
    -1e-8 raise a numerical error; small negatives are clipped to zero.
    """
    mu_a = np.asarray(mu_a, dtype=np.float64)
    mu_b = np.asarray(mu_b, dtype=np.float64)
    sigma_a = np.asarray(sigma_a, dtype=np.float64)
    sigma_b = np.asarray(sigma_b, dtype=np.float64)
    if mu_a.shape != mu_b.shape or sigma_a.shape != sigma_b.shape:
        raise InvalidInputError("statistic shape mismatch between inputs")
    if sigma_a.shape != (mu_a.size, mu_a.size):
        raise InvalidInputError(
            f"covariance shape {sigma_a.shape} does not match mean size {mu_a.size}"
        )
    root_a = _psd_sqrt(sigma_a, "covariance of a")
    cross = root_a @ sigma_b @ root_a
    cross_eigs = np.linalg.eigvalsh(0.5 * (cross + cross.T))
    if cross_eigs.min() < -EIGENVALUE_TOLERANCE * max(1.0, abs(cross_eigs.max())):
        raise NumericalError(
            f"cross covariance product not positive semidefinite: min eigenvalue "
            f"{cross_eigs.min():.3e}"
        )
    trace_sqrt = float(np.sqrt(np.clip(cross_eigs, 0.0, None)).sum())
    diff = mu_a - mu_b
    d2 = float(diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * trace_sqrt)
    return max(d2, 0.0)


def frechet_feature_distance(a, b, bank: FeatureBank) -> float:
    """Frechet distance between the patch-feature statistics of two images."""
    ia, ib = _check_pair(a, b)
    mu_a, sigma_a = feature_statistics(ia, bank)
    mu_b, sigma_b = feature_statistics(ib, bank)
    return frechet_gaussian_distance(mu_a, sigma_a, mu_b, sigma_b)


@dataclass(frozen=True)
class TTestResult:
    """Welch test outcome; degenerate marks the zero-variance fallback."""

    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    degenerate: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_value <= 1.0:
            raise InvalidInputError(f"p_value must lie in [0, 1], got {self.p_value}")


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> TTestResult:
    """Two-sided Welch unequal-variance t-test."""
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise InvalidInputError("samples must be 1-D sequences")
    if a.size < 2 or b.size < 2:
        raise InvalidInputError(
            f"each sample needs >= 2 elements, got {a.size} and {b.size}"
        )
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInputError("samples contain non-finite values")
    mean_a = float(a.mean())
    mean_b = float(b.mean())
    var_a = float(a.var(ddof=1))
    var_b = float(b.var(ddof=1))
    if var_a == 0.0 and var_b == 0.0:
        if mean_a == mean_b:
            return TTestResult(0.0, 0.0, 1.0, degenerate=True)
        t = math.inf if mean_a > mean_b else -math.inf
        return TTestResult(t, 0.0, 0.0, degenerate=True)
    se_a = var_a / a.size
    se_b = var_b / b.size
    t = (mean_a - mean_b) / math.sqrt(se_a + se_b)
    df = (se_a + se_b) ** 2 / (
        se_a * se_a / (a.size - 1) + se_b * se_b / (b.size - 1)
    )
    p = 2.0 * float(stdtr(df, -abs(t)))
    return TTestResult(t, df, min(max(p, 0.0), 1.0))


def write_metric_csv(path, rows: Iterable[dict]) -> None:
    """Write per-case metric rows as CSV with the standard columns."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            missing = set(METRIC_CSV_COLUMNS) - set(out)
            if missing:
                raise InvalidInputError(f"metric row missing columns: {sorted(missing)}")
            for key in ("mse", "ssim", "fid"):
                out[key] = repr(float(out[key]))
            writer.writerow({k: out[k] for k in METRIC_CSV_COLUMNS})


def read_metric_csv(path) -> list[dict]:
    """Read rows written by write_metric_csv, restoring float columns."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != METRIC_CSV_COLUMNS:
            raise InvalidInputError(
                f"unexpected metric CSV header: {reader.fieldnames}"
            )
        rows = []
        for row in reader:
            parsed = dict(row)
            for key in ("mse", "ssim", "fid"):
                parsed[key] = float(parsed[key])
            rows.append(parsed)
    return rows
