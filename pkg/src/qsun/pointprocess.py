"""Level statistics near zero energy on the mean-spacing scale.

The spectrum in a window around zero is rescaled by the local mean spacing
s_n = (1/sqrt(12)) * 2^-n * sqrt(2 pi n) and compared against a unit-rate
Poisson process: empirical Laplace functionals with closed-form references,
window counts, the gap-ratio statistic, and the cheap semi-perturbed
approximation that replaces the weakly coupled tail by free field shifts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import ModelParams
from .spectral import SpectrumLadder

# sqrt of the single-field variance; the disorder is uniform on [-1/2, 1/2]
S_UNIT = 1.0 / math.sqrt(12.0)

DEFAULT_WINDOW = 25.0


class SupportExceedsWindow(ValueError):
    """Test function support sticks out of the retained window."""


class SplitInvalid(ValueError):
    """Semi-perturbed split scale outside the usable range."""


class TooFewLevels(ValueError):
    """Not enough points in the window for the requested statistic."""


def mean_spacing(n: int) -> float:
    """Mean level spacing at energy zero for an n-site chain."""
    if n < 1:
        raise ValueError("need at least one site")
    return S_UNIT * 2.0**-n * math.sqrt(2.0 * math.pi * n)


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class IndicatorSum:
    """Weighted sum of interval indicators, sum_a b_a * 1_{[lo_a, hi_a]}."""

    intervals: tuple[tuple[float, float], ...]
    heights: tuple[float, ...]
    label: str = "indicator"

    def __post_init__(self) -> None:
        if len(self.intervals) != len(self.heights):
            raise ValueError("one height per interval")
        if any(h < 0 for h in self.heights):
            raise ValueError("heights must be non-negative")
        spans = sorted(self.intervals)
        for (alo, ahi), (blo, bhi) in zip(spans, spans[1:]):
            if ahi > blo:
                raise ValueError("intervals must not overlap")
        if any(lo > hi for lo, hi in self.intervals):
            raise ValueError("empty interval endpoints out of order")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for (lo, hi), h in zip(self.intervals, self.heights):
            out += h * ((x >= lo) & (x <= hi))
        return out

    def support(self) -> float:
        """Outer reach |x| of the support."""
        if not self.intervals:
            return 0.0
        return max(max(abs(lo), abs(hi)) for lo, hi in self.intervals)

    def reference_exponent(self) -> float:
        """integral of 1 - exp(-phi) for a unit-rate Poisson process."""
        return sum(
            (hi - lo) * (1.0 - math.exp(-h))
            for (lo, hi), h in zip(self.intervals, self.heights)
        )


@dataclass(frozen=True)
class TriangularBump:
    """Tent function of given height on [center - half_width, center + half_width]."""

    center: float
    half_width: float
    height: float
    label: str = "bump"

    def __post_init__(self) -> None:
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.height < 0:
            raise ValueError("height must be non-negative")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.height * np.maximum(
            0.0, 1.0 - np.abs(x - self.center) / self.half_width
        )

    def support(self) -> float:
        return abs(self.center) + self.half_width

    def reference_exponent(self) -> float:
        # int (1 - e^-phi) over the tent, in closed form
        w, h = self.half_width, self.height
        if h == 0.0:
            return 0.0
        return 2.0 * w - 2.0 * w * (1.0 - math.exp(-h)) / h


TestFunction = IndicatorSum | TriangularBump


def poisson_reference(phi: TestFunction) -> float:
    """Laplace functional of the unit-rate Poisson process at phi."""
    return math.exp(-phi.reference_exponent())


def default_test_functions() -> tuple[TestFunction, ...]:
    """The stock library: one indicator, one two-step sum, one symmetric tent.

    The tent is centered at zero on purpose: the free chain's spectrum is
    reflection symmetric, and a symmetric test function is the one that
    notices the resulting pairing pathology.
    """
    return (
        IndicatorSum(((0.0, 1.0),), (1.0,), label="ind_unit"),
        IndicatorSum(((-2.0, -1.0), (1.0, 3.0)), (1.0, 2.0), label="ind_pair"),
        TriangularBump(0.0, 1.0, 1.0, label="bump_origin"),
    )


# ---------------------------------------------------------------------------
# rescaling


@dataclass(frozen=True)
class PointProcessSample:
    """Rescaled levels of one realization retained in [-window, window]."""

    realization: int
    n: int
    spacing: float
    window: float
    offset: float
    points: np.ndarray
    energies: np.ndarray

    def __post_init__(self) -> None:
        if self.points.shape != self.energies.shape:
            raise ValueError("points and energies must pair up")


def rescale(
    spectrum: np.ndarray,
    n: int,
    realization: int = 0,
    window: float = DEFAULT_WINDOW,
    offset: float = 0.0,
) -> PointProcessSample:
    """Divide levels near `offset` by the mean spacing, keep [-window, window]."""
    if window <= 0:
        raise ValueError("window must be positive")
    s_n = mean_spacing(n)
    values = np.sort(np.asarray(spectrum, dtype=float))
    scaled = (values - offset) / s_n
    keep = np.abs(scaled) <= window
    return PointProcessSample(
        realization=realization,
        n=n,
        spacing=s_n,
        window=window,
        offset=offset,
        points=scaled[keep],
        energies=values[keep],
    )


def unrescale(sample: PointProcessSample) -> np.ndarray:
    """Raw energies behind the rescaled points, exactly as retained."""
    return sample.energies.copy()


# ---------------------------------------------------------------------------
# ensemble statistics


def _jackknife(values: np.ndarray) -> tuple[float, float]:
    """Mean and leave-one-out jackknife standard error."""
    values = np.asarray(values, dtype=float)
    r = values.size
    if r < 2:
        raise ValueError("need at least two realizations")
    total = values.sum()
    loo = (total - values) / (r - 1)
    center = loo.mean()
    se = math.sqrt((r - 1) / r * np.sum((loo - center) ** 2))
    return float(values.mean()), se


@dataclass(frozen=True)
class LaplaceEstimate:
    phi: TestFunction
    estimate: float
    se: float
    reference: float
    ensemble_size: int


def laplace_functional(
    samples: Sequence[PointProcessSample], phi: TestFunction
) -> LaplaceEstimate:
    """Empirical mean of exp(-sum_j phi(x_j)) with jackknife error bars."""
    if len(samples) < 2:
        raise TooFewLevels("need at least two realizations")
    for sample in samples:
        if phi.support() > sample.window:
            raise SupportExceedsWindow(
                f"support {phi.support():g} exceeds window {sample.window:g}"
            )
    vals = np.array([math.exp(-float(phi(s.points).sum())) for s in samples])
    mean, se = _jackknife(vals)
    return LaplaceEstimate(
        phi=phi,
        estimate=mean,
        se=se,
        reference=poisson_reference(phi),
        ensemble_size=len(samples),
    )


@dataclass(frozen=True)
class DosEstimate:
    interval: tuple[float, float]
    mean: float
    se: float
    ensemble_size: int


def dos_count(
    samples: Sequence[PointProcessSample], interval: tuple[float, float]
) -> DosEstimate:
    """Mean number of rescaled points in the interval; Poisson target is its length."""
    lo, hi = float(interval[0]), float(interval[1])
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError("interval must be bounded")
    if len(samples) < 2:
        raise TooFewLevels("need at least two realizations")
    counts = np.array(
        [float(np.count_nonzero((s.points >= lo) & (s.points <= hi))) for s in samples]
    )
    mean, se = _jackknife(counts)
    return DosEstimate(interval=(lo, hi), mean=mean, se=se, ensemble_size=len(samples))


@dataclass(frozen=True)
class RStatEstimate:
    mean: float
    se: float
    ensemble_size: int


def gap_ratio(samples: Sequence[PointProcessSample]) -> RStatEstimate:
    """Consecutive-gap ratio r = min/max, averaged per realization then pooled.

    The Poisson value is 2 ln 2 - 1; rigid spectra push it toward 1.
    """
    if len(samples) < 2:
        raise TooFewLevels("need at least two realizations")
    per_realization = []
    for s in samples:
        if s.points.size < 3:
            raise TooFewLevels(
                f"realization {s.realization}: {s.points.size} points in window, need 3"
            )
        gaps = np.diff(np.sort(s.points))
        r = np.minimum(gaps[:-1], gaps[1:]) / np.maximum(gaps[:-1], gaps[1:])
        per_realization.append(float(r.mean()))
    mean, se = _jackknife(np.array(per_realization))
    return RStatEstimate(mean=mean, se=se, ensemble_size=len(samples))


POISSON_R_MEAN = 2.0 * math.log(2.0) - 1.0


# ---------------------------------------------------------------------------
# semi-perturbed approximation


@dataclass(frozen=True)
class SemiPerturbedSpectrum:
    """All 2^n approximate levels built from the split-scale spectrum.

    Index eta packs the split-scale rank mu in its low split bits and the
    free spin signs of the remaining sites above; values[eta] is
    E_mu + sum of signed tail fields. The certificate bounds the sorted
    distance to the true spectrum by the norm of the dropped couplings.
    """

    n: int
    split: int
    values: np.ndarray
    certificate: float
    loose_certificate: float

    @property
    def sorted_values(self) -> np.ndarray:
        return np.sort(self.values)


def semi_perturbed(
    ladder: SpectrumLadder, params: ModelParams, split: int | None = None
) -> SemiPerturbedSpectrum:
    """Approximate the full spectrum by split-scale levels plus free shifts."""
    n = params.n
    if split is None:
        split = int(math.floor(params.rho_value * n))
    n_b = params.n_B
    if not n_b <= split < n:
        raise SplitInvalid(f"split {split} outside [{n_b}, {n})")
    if ladder.top_scale < split:
        raise SplitInvalid(
            f"ladder stops at scale {ladder.top_scale}, split {split} unavailable"
        )
    base = ladder.spectrum(split).values
    tail = ladder.disorder.h[split:n]
    n1 = n - split
    # sign of h_i for spin index bit i: bit 0 keeps +h (spin up convention)
    codes = np.arange(1 << n1, dtype=np.int64)
    signs = 1.0 - 2.0 * ((codes[:, None] >> np.arange(n1)[None, :]) & 1)
    shifts = signs @ tail
    values = (shifts[:, None] + base[None, :]).ravel()
    exact = 0.5 * sum(params.alpha**i for i in range(split + 1, n + 1))
    return SemiPerturbedSpectrum(
        n=n,
        split=split,
        values=values,
        certificate=exact,
        loose_certificate=2.0 * params.alpha**split,
    )
