"""Eigenvector localization observables.

Everything here is evaluated in the product basis, streaming over basis
indices with bit masks.  For an eigenvector labeled sigma, the tail overlap
at cut ell is the weight kept on basis states whose spins agree with sigma
on every site >= ell; the site defect is the weight on states whose spin at
one site disagrees.  Cuts and sites below n_B+1 are rejected: there the
label bits index bath eigenstates, not spins, and the comparison would be
meaningless.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import SpectrumLadder

__all__ = [
    "Unresolved",
    "tail_overlap",
    "site_defect",
    "ipr",
    "tail_overlap_all",
    "site_defect_all",
    "ipr_all",
    "ell_star",
    "fit_ipr_constant",
    "ipr_bound_check",
    "LocalizationReport",
    "localization_report",
    "median_tail_complement",
    "geometric_decay_ok",
]

NORM_TOL = 1e-10


class Unresolved(RuntimeError):
    """The separation event fails at the last simulated step, so no
    localization scale can be certified inside the window."""


def _check_cut(nsites: int, n_B: int, ell: int) -> None:
    if not n_B + 1 <= ell <= nsites:
        raise ValueError(f"cut must lie in [{n_B + 1}, {nsites}], got {ell}")


def tail_overlap(psi: np.ndarray, sigma: int, ell: int, n_B: int = 1) -> float:
    """Weight of psi on basis states agreeing with sigma at all sites >= ell."""
    psi = np.asarray(psi, dtype=float)
    dim = psi.size
    nsites = dim.bit_length() - 1
    _check_cut(nsites, n_B, ell)
    if abs(psi @ psi - 1.0) > NORM_TOL:
        raise ValueError("vector not normalized")
    k = np.arange(dim)
    keep = (k >> (ell - 1)) == (sigma >> (ell - 1))
    return float(np.sum(psi[keep] ** 2))


def site_defect(psi: np.ndarray, sigma: int, site: int, n_B: int = 1) -> float:
    """Weight of psi on basis states whose spin at `site` opposes sigma's."""
    psi = np.asarray(psi, dtype=float)
    dim = psi.size
    nsites = dim.bit_length() - 1
    _check_cut(nsites, n_B, site)
    bits = (np.arange(dim) >> (site - 1)) & 1
    sbit = (sigma >> (site - 1)) & 1
    return float(np.sum(psi[bits != sbit] ** 2))


def ipr(psi: np.ndarray) -> float:
    """Inverse participation ratio: 1 over the fourth-moment sum."""
    psi = np.asarray(psi, dtype=float)
    return float(1.0 / np.sum(psi**4))


# vectorized forms over a full eigenvector matrix (columns = states)

def tail_overlap_all(vectors: np.ndarray, labels: np.ndarray, ell: int, n_B: int = 1) -> np.ndarray:
    dim = vectors.shape[0]
    nsites = dim.bit_length() - 1
    _check_cut(nsites, n_B, ell)
    block = 1 << (ell - 1)
    weights = (vectors**2).reshape(dim // block, block, vectors.shape[1]).sum(axis=1)
    return weights[labels >> (ell - 1), np.arange(vectors.shape[1])]


def site_defect_all(vectors: np.ndarray, labels: np.ndarray, site: int, n_B: int = 1) -> np.ndarray:
    dim = vectors.shape[0]
    nsites = dim.bit_length() - 1
    _check_cut(nsites, n_B, site)
    bits = (np.arange(dim) >> (site - 1)) & 1
    w = vectors**2
    mass1 = w[bits == 1].sum(axis=0)
    mass0 = w[bits == 0].sum(axis=0)
    sbits = (labels >> (site - 1)) & 1
    return np.where(sbits == 1, mass0, mass1)


def ipr_all(vectors: np.ndarray) -> np.ndarray:
    return 1.0 / np.sum(vectors**4, axis=0)


# ---------------------------------------------------------------------------
# localization scale
# ---------------------------------------------------------------------------

def ell_star(a_flags, n0: int, n: int) -> int:
    """Smallest ell in [n0, n-1] with the separation event holding at every
    step m in [ell, n-1].  a_flags maps step scale -> bool."""
    if n0 >= n:
        raise ValueError("window start must be below the top scale")
    for m in range(n0, n):
        if m not in a_flags:
            raise ValueError(f"missing separation flag for step {m}")
    if not a_flags[n - 1]:
        raise Unresolved(f"separation fails at the last step {n - 1}")
    ell = n - 1
    while ell - 1 >= n0 and a_flags[ell - 1]:
        ell -= 1
    return ell


def fit_ipr_constant(iprs: np.ndarray, ell: int) -> float:
    """Smallest C with max(ipr) <= C * 2^ell for this realization."""
    return float(np.max(iprs) / 2.0**ell)


def ipr_bound_check(iprs: np.ndarray, ell: int, C: float) -> bool:
    return bool(np.max(iprs) <= C * 2.0**ell)


# ---------------------------------------------------------------------------
# per-realization report
# ---------------------------------------------------------------------------

@dataclass
class LocalizationReport:
    n: int
    n_B: int
    labels: np.ndarray
    iprs: np.ndarray
    tails: np.ndarray     # shape (n - n_B, states), row j is cut ell = n_B+1+j
    defects: np.ndarray   # same layout, row j is site n_B+1+j
    ell: int | None       # None when the window left the scale unresolved

    def cut_values(self) -> range:
        return range(self.n_B + 1, self.n + 1)

    def tail(self, ell: int) -> np.ndarray:
        _check_cut(self.n, self.n_B, ell)
        return self.tails[ell - self.n_B - 1]

    def defect(self, site: int) -> np.ndarray:
        _check_cut(self.n, self.n_B, site)
        return self.defects[site - self.n_B - 1]


def localization_report(ladder: SpectrumLadder, a_flags=None) -> LocalizationReport:
    """Tail overlaps, defects and IPR for every eigenvector at the top scale.

    a_flags, when given, maps step scale -> separation verdict and feeds the
    localization-scale search; the report carries ell = None if the window
    cannot resolve it.
    """
    p = ladder.params
    spec = ladder.spectrum(ladder.top_scale)
    if spec.vectors is None:
        raise ValueError("ladder was built without eigenvectors at the top scale")
    n, n_B = spec.m, p.n_B
    cuts = range(n_B + 1, n + 1)
    tails = np.stack([tail_overlap_all(spec.vectors, spec.labels, l, n_B) for l in cuts])
    defects = np.stack([site_defect_all(spec.vectors, spec.labels, l, n_B) for l in cuts])
    iprs = ipr_all(spec.vectors)
    ell = None
    if a_flags is not None:
        try:
            ell = ell_star(a_flags, n_B + 1, n)
        except Unresolved:
            ell = None
    return LocalizationReport(n, n_B, spec.labels.copy(), iprs, tails, defects, ell)


def median_tail_complement(reports, ell: int) -> float:
    """Ensemble median of 1 - tail_overlap(ell), pooled over eigenvectors."""
    pooled = np.concatenate([r.tail(ell) for r in reports])
    return float(np.median(1.0 - pooled))


def geometric_decay_ok(medians, ratio: float) -> bool:
    """Is each successive median at most ratio times the previous one?

    Zero medians terminate the comparison: past machine floor nothing more
    can shrink.
    """
    for a, b in zip(medians[:-1], medians[1:]):
        if a <= 0.0:
            return True
        if b > ratio * a:
            return False
    return True
