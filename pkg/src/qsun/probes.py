"""Standalone probes of the counting and limit-theorem ingredients.

Four independent checks feed the statistics pipeline: typicality counting of
sign-configuration tuples, Monte Carlo factorization of the free-field energy
process against its Gaussian product reference, a local CLT table for
iterated uniform convolutions, and minimal gap/anti-gap reports.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import ASSUMPTION_TOL, uniform_stream
from .resonance import event_G

TYPICALITY_EXPONENT = 0.75

MC_CHUNK = 1 << 14


class GridTooCoarse(ValueError):
    """Convolution grid too coarse for the requested comparison."""


class Typicality(enum.Enum):
    TYPICAL = "typical"
    ATYPICAL = "atypical"
    DEGENERATE = "degenerate"


# ---------------------------------------------------------------------------
# configuration tuples


@dataclass
class MultiConfiguration:
    """k sign configurations over m sites, stored as a (k, m) array of +-1."""

    sigma: np.ndarray

    def __post_init__(self) -> None:
        self.sigma = np.asarray(self.sigma, dtype=np.int8)
        if self.sigma.ndim != 2:
            raise ValueError("sigma must be a (k, m) array")
        if self.sigma.shape[0] < 1 or self.sigma.shape[1] < 1:
            raise ValueError("need at least one configuration and one site")
        if not np.all(np.abs(self.sigma) == 1):
            raise ValueError("entries must be +1 or -1")

    @property
    def k(self) -> int:
        return self.sigma.shape[0]

    @property
    def m(self) -> int:
        return self.sigma.shape[1]

    def class_sizes(self) -> np.ndarray:
        """Site counts of each relative sign pattern against the first row.

        Pattern bit j is set where row j+1 disagrees with row 1; the 2^(k-1)
        counts partition the m sites.
        """
        k, m = self.k, self.m
        pattern = np.zeros(m, dtype=np.int64)
        for j in range(1, k):
            pattern |= ((self.sigma[0] != self.sigma[j]).astype(np.int64)) << (j - 1)
        return np.bincount(pattern, minlength=1 << (k - 1))


def typicality(
    multi: MultiConfiguration, exponent: float = TYPICALITY_EXPONENT
) -> Typicality:
    """Classify a tuple by how evenly the relative sign patterns fill the sites.

    Typical means every class size is within m^exponent of the even split.
    An anti-aligned pair (sigma_i = -sigma_j everywhere) empties whole
    classes by linear dependence and is reported as degenerate; a merely
    duplicated row stays atypical.
    """
    sizes = multi.class_sizes()
    k, m = multi.k, multi.m
    for i, j in itertools.combinations(range(k), 2):
        if np.all(multi.sigma[i] == -multi.sigma[j]):
            return Typicality.DEGENERATE
    target = m / float(1 << (k - 1))
    if np.max(np.abs(sizes - target)) <= m**exponent:
        return Typicality.TYPICAL
    return Typicality.ATYPICAL


@dataclass(frozen=True)
class AtypicalEstimate:
    m: int
    k: int
    trials: int
    fraction: float
    se: float
    envelope: float


def atypical_fraction(
    m: int,
    k: int,
    trials: int,
    seed: int = 0,
    exponent: float = TYPICALITY_EXPONENT,
) -> AtypicalEstimate:
    """Monte Carlo fraction of non-typical uniform k-tuples.

    Only the k-1 relative sign rows matter, and they are themselves uniform,
    so the draw skips the first row. Degenerate tuples count as non-typical.
    The envelope exp(-m^0.45) is the large-deviation reference scale.
    """
    if k < 1 or m < 1:
        raise ValueError("need k >= 1 and m >= 1")
    if trials < 1:
        raise ValueError("trials must be positive")
    if k == 1:
        return AtypicalEstimate(
            m=m, k=k, trials=trials, fraction=0.0, se=0.0,
            envelope=math.exp(-(m**0.45)),
        )
    classes = 1 << (k - 1)
    target = m / float(classes)
    tol = m**exponent
    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    bad = 0
    done = 0
    while done < trials:
        block = min(MC_CHUNK, trials - done)
        bits = rng.integers(0, 2, size=(block, k - 1, m), dtype=np.int64)
        pattern = np.zeros((block, m), dtype=np.int64)
        for j in range(k - 1):
            pattern |= bits[:, j, :] << j
        flat = pattern + classes * np.arange(block, dtype=np.int64)[:, None]
        counts = np.bincount(flat.ravel(), minlength=block * classes)
        counts = counts.reshape(block, classes)
        bad += int(np.count_nonzero(np.max(np.abs(counts - target), axis=1) > tol))
        done += block
    frac = bad / trials
    return AtypicalEstimate(
        m=m,
        k=k,
        trials=trials,
        fraction=frac,
        se=math.sqrt(frac * (1.0 - frac) / trials),
        envelope=math.exp(-(m**0.45)),
    )


def exact_pair_atypical_fraction(
    m: int, exponent: float = TYPICALITY_EXPONENT
) -> float:
    """Exact non-typical fraction for pairs: the agreement count is binomial."""
    tol = m**exponent
    total = 0
    for agree in range(m + 1):
        if abs(agree - m / 2.0) > tol:
            total += math.comb(m, agree)
    # integer ratio: 2.0**m overflows long before the comb sum does
    return total / (1 << m)


def typical_pattern_count(
    m: int, k: int, exponent: float = TYPICALITY_EXPONENT
) -> int:
    """Number of relative-pattern sequences in {0..2^(k-1)-1}^m that are typical.

    Multinomial sum over admissible class-size vectors; multiply by 2^m for
    the free choice of the first configuration to count typical k-tuples.
    """
    classes = 1 << (k - 1)
    target = m / float(classes)
    tol = m**exponent
    lo = max(0, math.ceil(target - tol))
    hi = min(m, math.floor(target + tol))

    def count(rest: int, remaining: int) -> int:
        if rest == 1:
            return 1 if lo <= remaining <= hi else 0
        total = 0
        for s in range(lo, min(hi, remaining) + 1):
            tail = count(rest - 1, remaining - s)
            if tail:
                total += math.comb(remaining, s) * tail
        return total

    return count(classes, m)


# ---------------------------------------------------------------------------
# free-field factorization


def gaussian_interval_mass(lo: float, hi: float, variance: float) -> float:
    """Mass a centered normal with the given variance puts on [lo, hi]."""
    if variance <= 0:
        raise ValueError("variance must be positive")
    s = math.sqrt(2.0 * variance)
    return 0.5 * (math.erf(hi / s) - math.erf(lo / s))


@dataclass(frozen=True)
class FactorizationReport:
    m: int
    k: int
    trials: int
    joint: float
    product: float
    mc_err: float
    marginals: tuple[float, ...]


def free_factorization(
    multi: MultiConfiguration,
    intervals: Sequence[tuple[float, float]],
    trials: int,
    seed: int = 0,
) -> FactorizationReport:
    """Joint hit probability of the free-field energies against the Gaussian product.

    The free energy of a configuration is the signed sum of the site fields,
    so a Monte Carlo trial is one field draw and k dot products; nothing is
    diagonalized and m in the thousands is fine. The product reference is
    Gaussian with variance m/12 per coordinate, which is what the joint must
    approach for typical tuples.
    """
    k, m = multi.k, multi.m
    if len(intervals) != k:
        raise ValueError("one interval per configuration")
    if trials < 1:
        raise ValueError("trials must be positive")
    lo = np.array([iv[0] for iv in intervals], dtype=float)
    hi = np.array([iv[1] for iv in intervals], dtype=float)
    if np.any(lo > hi):
        raise ValueError("interval endpoints out of order")
    sig = multi.sigma.astype(float).T  # (m, k)
    hits = 0
    done = 0
    chunk = max(1, min(MC_CHUNK, int(2e7) // max(1, m)))
    stream = 0
    while done < trials:
        block = min(chunk, trials - done)
        fields = uniform_stream(seed, stream, block * m).reshape(block, m)
        stream += 1
        energies = fields @ sig
        inside = (energies >= lo[None, :]) & (energies <= hi[None, :])
        hits += int(np.count_nonzero(np.all(inside, axis=1)))
        done += block
    joint = hits / trials
    variance = m / 12.0
    marginals = tuple(
        gaussian_interval_mass(a, b, variance) for a, b in zip(lo, hi)
    )
    return FactorizationReport(
        m=m,
        k=k,
        trials=trials,
        joint=joint,
        product=float(np.prod(marginals)),
        mc_err=math.sqrt(max(joint * (1.0 - joint), 1e-300) / trials),
        marginals=marginals,
    )


# ---------------------------------------------------------------------------
# local CLT for iterated uniform convolutions


@dataclass(frozen=True)
class LcltReport:
    ns: tuple[int, ...]
    scaled_sup: tuple[float, ...]
    step: float
    mass_error: float


def _box_table(n_max: int, step: float, wanted: Iterable[int]) -> tuple[dict, float]:
    """Densities of n-fold uniform convolutions at the wanted orders.

    One pass of windowed antiderivative differences per order; the window of
    half-width 1/2 must sit on the grid or the box is misrepresented.
    """
    w = int(round(0.5 / step))
    if w < 1 or abs(w * step - 0.5) > 1e-9 * step:
        raise GridTooCoarse(f"step {step:g} does not resolve the unit box")
    half = int(math.ceil(n_max / 2.0 / step)) + 2
    x = np.arange(-half, half + 1) * step
    density = np.where(np.abs(x) < 0.5, 1.0, 0.0)
    density[np.isclose(np.abs(x), 0.5, rtol=0.0, atol=1e-12)] = 0.5
    out = {}
    mass_err = 0.0
    if 1 in set(wanted):
        out[1] = density.copy()
    for n in range(2, n_max + 1):
        anti = np.concatenate(
            ([0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * step))
        )
        padded = np.concatenate(
            (np.zeros(w), anti, np.full(w, anti[-1]))
        )
        density = (padded[2 * w :] - padded[: -2 * w]) / 1.0
        density = density[: x.size]
        mass = float(np.sum(0.5 * (density[1:] + density[:-1]) * step))
        mass_err = max(mass_err, abs(mass - 1.0))
        if n in set(wanted):
            out[n] = density.copy()
    return {"x": x, "densities": out}, mass_err


def uniform_convolution(n: int, step: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Grid and density of the n-fold convolution of the unit uniform."""
    if n < 1:
        raise ValueError("n must be positive")
    table, _ = _box_table(n, step, (n,))
    return table["x"], table["densities"][n]


def _scaled_sup_table(n_list: Sequence[int], step: float) -> tuple[list[float], float]:
    table, mass_err = _box_table(max(n_list), step, n_list)
    x = table["x"]
    sups = []
    for n in n_list:
        variance = n / 12.0
        gauss = np.exp(-(x**2) / (2.0 * variance)) / math.sqrt(
            2.0 * math.pi * variance
        )
        sups.append(math.sqrt(n) * float(np.max(np.abs(table["densities"][n] - gauss))))
    return sups, mass_err


def lclt_check(n_list: Sequence[int], step: float = 1e-3) -> LcltReport:
    """Table of sqrt(n) * sup-norm distances to the matching Gaussian.

    Each entry is Richardson-guarded: the same quantity at half the step must
    agree to 10 percent, otherwise the grid is declared too coarse.
    """
    n_list = tuple(int(n) for n in n_list)
    if not n_list or any(n < 1 for n in n_list):
        raise ValueError("n_list must hold positive orders")
    if any(a >= b for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly increasing")
    coarse, mass_err = _scaled_sup_table(n_list, step)
    fine, fine_mass = _scaled_sup_table(n_list, step / 2.0)
    for n, a, b in zip(n_list, coarse, fine):
        if abs(a - b) > 0.10 * max(abs(b), 1e-300):
            raise GridTooCoarse(
                f"order {n}: sup distance moves {a:.4g} -> {b:.4g} on refinement"
            )
    return LcltReport(
        ns=n_list,
        scaled_sup=tuple(coarse),
        step=step,
        mass_error=max(mass_err, fine_mass),
    )


# ---------------------------------------------------------------------------
# gaps and anti-gaps


@dataclass(frozen=True)
class GapReport:
    dmin: float
    dplus: float
    flagged: bool


def gap_antigap(spectrum: np.ndarray) -> GapReport:
    """Minimal gap and minimal anti-gap |E_i + E_j| (repeats allowed)."""
    values = np.sort(np.asarray(spectrum, dtype=float))
    if values.size == 0:
        raise ValueError("empty spectrum")
    dmin = float(np.min(np.diff(values))) if values.size > 1 else math.inf
    _, dplus = event_G(values, 0.0, 0.0)
    return GapReport(
        dmin=dmin,
        dplus=dplus,
        flagged=bool(dmin < ASSUMPTION_TOL or dplus < ASSUMPTION_TOL),
    )
