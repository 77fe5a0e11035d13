"""Resonant patches and their genealogy across scales.

A patch at scale m is a maximal run of consecutive eigenvalues whose gaps
stay at or below the threshold alpha^{theta m}.  Thresholds are computed as
exp(theta * m * ln alpha) so that repeated powering cannot drift.  Event A
asks every shifted patch hull to keep a threshold distance from every other
one after the next half-step; event G asks the sum spectrum to keep clear of
the next field.  When A holds, each patch of the next scale sits inside
exactly one shifted parent hull and genealogy is unambiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Full, Half, assemble, coupling_term
from .spectral import SpectrumLadder

__all__ = [
    "ZeroWidth",
    "EventAViolated",
    "patch_threshold",
    "series_base",
    "PatchPartition",
    "partition_patches",
    "event_A",
    "event_G",
    "trace_genealogy",
    "v_ratio",
    "antiresonance_set",
    "shrink_probability",
]


class ZeroWidth(ValueError):
    """Width is numerically zero, the overlap exponent is undefined."""


class EventAViolated(RuntimeError):
    """The separation event required by this computation does not hold."""


def patch_threshold(alpha: float, theta: float, m: int) -> float:
    return float(math.exp(theta * m * math.log(alpha)))


def series_base(alpha: float, theta: float) -> float:
    """Bookkeeping base 4 alpha^(1-theta) used by the series envelopes."""
    return 4.0 * alpha ** (1.0 - theta)


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------

@dataclass
class PatchPartition:
    values: np.ndarray
    threshold: float
    starts: np.ndarray  # first level of each patch
    ends: np.ndarray    # one past the last level

    @property
    def count(self) -> int:
        return self.starts.size

    @property
    def sizes(self) -> np.ndarray:
        return self.ends - self.starts

    @property
    def los(self) -> np.ndarray:
        return self.values[self.starts]

    @property
    def his(self) -> np.ndarray:
        return self.values[self.ends - 1]

    @property
    def widths(self) -> np.ndarray:
        return self.his - self.los

    def size_counts(self) -> dict:
        ks, cs = np.unique(self.sizes, return_counts=True)
        return {int(k): int(c) for k, c in zip(ks, cs)}

    def singleton_level_fraction(self) -> float:
        return float(np.count_nonzero(self.sizes == 1)) / self.values.size


def partition_patches(values: np.ndarray, threshold: float) -> PatchPartition:
    """Split an ascending spectrum into maximal runs with gaps <= threshold."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty spectrum")
    if np.any(np.diff(values) < 0):
        raise ValueError("values must be ascending")
    cuts = np.nonzero(np.diff(values) > threshold)[0]
    starts = np.concatenate([[0], cuts + 1]).astype(np.int64)
    ends = np.concatenate([cuts + 1, [values.size]]).astype(np.int64)
    return PatchPartition(values, float(threshold), starts, ends)


# ---------------------------------------------------------------------------
# separation events
# ---------------------------------------------------------------------------

def event_A(partition: PatchPartition, h: float, threshold: float):
    """Do all 2P shifted patch hulls stay > threshold apart?

    Returns (holds, min_distance).  Distance between overlapping hulls is
    counted as their (negative) sorted-endpoint gap, which fails the strict
    comparison just the same.
    """
    los = np.concatenate([partition.los + h, partition.los - h])
    his = np.concatenate([partition.his + h, partition.his - h])
    order = np.argsort(los, kind="stable")
    los, his = los[order], his[order]
    if los.size < 2:
        return True, math.inf
    run_hi = np.maximum.accumulate(his)
    dists = los[1:] - run_hi[:-1]
    min_dist = float(np.min(dists))
    return min_dist > threshold, min_dist


def event_G(values: np.ndarray, h: float, threshold: float):
    """Is min over pairs (i <= j, repeats allowed) of |E_i + E_j + 2 nu h|
    above threshold for both signs nu?  Returns (holds, min_value)."""
    v = np.sort(np.asarray(values, dtype=float))
    best = math.inf
    for target in (-2.0 * h, 2.0 * h):
        i, j = 0, v.size - 1
        while i <= j:
            s = v[i] + v[j] - target
            best = min(best, abs(s))
            if s < 0.0:
                i += 1
            else:
                j -= 1
    return best > threshold, float(best)


# ---------------------------------------------------------------------------
# genealogy
# ---------------------------------------------------------------------------

@dataclass
class PatchNode:
    scale: int
    index: int
    start: int
    size: int
    lo: float
    hi: float
    origin: str              # "base", "old" or "new"
    parent: tuple | None     # (parent index, mu) when origin == "old"


@dataclass
class GenealogyStep:
    m: int                   # parent scale
    A_holds: bool
    A_margin: float
    G_holds: bool
    G_margin: float
    new_count: int
    ambiguous: int
    orphans: int
    conservation_ok: bool    # sizes assigned to each shifted copy sum to |p| (checked when A holds)


@dataclass
class GenealogyTrace:
    partitions: dict
    nodes: dict
    steps: list

    def step(self, m: int) -> GenealogyStep:
        for s in self.steps:
            if s.m == m:
                return s
        raise KeyError(m)


def _match_children(child_lo, child_hi, cand_lo, cand_hi):
    """For each child interval, count candidates and find the unique match.

    Candidates are intervals intersecting the child.  Count uses the exact
    prefix identity #(lo <= child_hi) - #(hi < child_lo); the unique match is
    located by scanning from the smallest candidate hi.
    """
    order_lo = np.argsort(cand_lo, kind="stable")
    order_hi = np.argsort(cand_hi, kind="stable")
    lo_sorted = cand_lo[order_lo]
    hi_sorted = cand_hi[order_hi]
    counts = np.searchsorted(lo_sorted, child_hi, side="right") - np.searchsorted(
        hi_sorted, child_lo, side="left"
    )
    matches = np.full(child_lo.size, -1, dtype=np.int64)
    for c in np.nonzero(counts == 1)[0]:
        j = np.searchsorted(hi_sorted, child_lo[c], side="left")
        while j < order_hi.size and cand_lo[order_hi[j]] > child_hi[c]:
            j += 1  # interval ends late enough but starts past the child
        matches[c] = order_hi[j]
    return counts, matches


def trace_genealogy(ladder: SpectrumLadder, m_start: int | None = None) -> GenealogyTrace:
    """Classify every patch at every scale as descended (old) or merged (new).

    A child is old when its hull intersects exactly one shifted parent hull
    expanded by the coupling budget alpha^{m+1} (1 + 1e-6); intersecting two
    or none makes it new (ambiguous descent is counted, not raised).
    """
    p = ladder.params
    m0 = p.n_B if m_start is None else m_start
    scales = sorted(m for m in ladder.spectra if m >= m0)
    partitions, nodes, steps = {}, {}, []

    first = scales[0]
    partitions[first] = partition_patches(
        ladder.spectra[first].values, patch_threshold(p.alpha, p.theta, first)
    )
    nodes[first] = [
        PatchNode(first, i, int(s), int(e - s), float(lo), float(hi), "base", None)
        for i, (s, e, lo, hi) in enumerate(
            zip(
                partitions[first].starts,
                partitions[first].ends,
                partitions[first].los,
                partitions[first].his,
            )
        )
    ]

    for m in scales[:-1]:
        child_scale = m + 1
        parents = partitions[m]
        tau_m = parents.threshold
        tau_child = patch_threshold(p.alpha, p.theta, child_scale)
        h = ladder.disorder.h[child_scale - 1]

        children = partition_patches(ladder.spectra[child_scale].values, tau_child)
        partitions[child_scale] = children

        a_holds, a_margin = event_A(parents, h, tau_m)
        g_holds, g_margin = event_G(ladder.spectra[m].values, h, tau_child)

        tol = p.alpha**child_scale * (1.0 + 1e-6)
        # shifted copy 2i is (parent i, mu=+1), copy 2i+1 is (parent i, mu=-1)
        cand_lo = np.empty(2 * parents.count)
        cand_hi = np.empty(2 * parents.count)
        cand_lo[0::2], cand_lo[1::2] = parents.los + h, parents.los - h
        cand_hi[0::2], cand_hi[1::2] = parents.his + h, parents.his - h
        counts, matches = _match_children(
            children.los, children.his, cand_lo - tol, cand_hi + tol
        )

        assigned = np.zeros(2 * parents.count, dtype=np.int64)
        node_list = []
        new_count = ambiguous = orphans = 0
        for c in range(children.count):
            size = int(children.sizes[c])
            if counts[c] == 1:
                copy = int(matches[c])
                parent_ref = (copy // 2, +1 if copy % 2 == 0 else -1)
                origin = "old"
                assigned[copy] += size
            else:
                parent_ref = None
                origin = "new"
                new_count += 1
                if counts[c] > 1:
                    ambiguous += 1
                else:
                    orphans += 1
            node_list.append(
                PatchNode(
                    child_scale,
                    c,
                    int(children.starts[c]),
                    size,
                    float(children.los[c]),
                    float(children.his[c]),
                    origin,
                    parent_ref,
                )
            )
        conservation_ok = True
        if a_holds:
            expected = np.repeat(parents.sizes, 2)
            conservation_ok = bool(np.array_equal(assigned, expected))
        nodes[child_scale] = node_list
        steps.append(
            GenealogyStep(
                m, a_holds, a_margin, g_holds, g_margin,
                new_count, ambiguous, orphans, conservation_ok,
            )
        )
    return GenealogyTrace(partitions, nodes, steps)


# ---------------------------------------------------------------------------
# overlap exponents
# ---------------------------------------------------------------------------

def v_ratio(parent_width: float, child_width: float, m_child: int, alpha: float, theta: float):
    """Overlap exponents (v_parent, v_child) of a patch and its descendant.

    v = ln(width) / (scale * ln(4 alpha^{1-theta})).  Raises ZeroWidth when
    either width is below 1e-15; both values are positive exactly when the
    patch is resonant in the contractive regime.
    """
    if parent_width <= 1e-15 or child_width <= 1e-15:
        raise ZeroWidth("patch width is numerically zero")
    la = math.log(series_base(alpha, theta))
    if la == 0.0:
        raise ZeroWidth("series base equals 1, exponent undefined")
    return (
        math.log(parent_width) / ((m_child - 1) * la),
        math.log(child_width) / (m_child * la),
    )


# ---------------------------------------------------------------------------
# anti-resonances
# ---------------------------------------------------------------------------

@dataclass
class AntiResonanceReport:
    m: int
    threshold: float
    pairs: list          # (label_i, label_j) with value rank i <= j
    hit_labels: np.ndarray
    hit_fraction: float


def antiresonance_set(spectrum, alpha: float, theta: float) -> AntiResonanceReport:
    """All pairs with |E_i + E_j| < alpha^{theta m} / 4 (i = j allowed).

    Works on a LabeledSpectrum; the hit fraction is |distinct labels in any
    pair| / 2^m.
    """
    v = spectrum.values
    labels = spectrum.labels
    t = patch_threshold(alpha, theta, spectrum.m) / 4.0
    lo_idx = np.searchsorted(v, -t - v, side="right")
    hi_idx = np.searchsorted(v, t - v, side="left")
    pairs = []
    hit = set()
    for i in range(v.size):
        jlo = max(int(lo_idx[i]), i)
        jhi = int(hi_idx[i])
        for j in range(jlo, jhi):
            pairs.append((int(labels[i]), int(labels[j])))
            hit.add(int(labels[i]))
            hit.add(int(labels[j]))
    hit_labels = np.array(sorted(hit), dtype=np.int64)
    return AntiResonanceReport(
        spectrum.m, t, pairs, hit_labels, hit_labels.size / v.size
    )


# ---------------------------------------------------------------------------
# width shrink measure under the sweeping coupling
# ---------------------------------------------------------------------------

@dataclass
class ShrinkReport:
    m: int
    patch_index: int
    mu: int
    width0: float
    v_parent: float
    lambdas: tuple
    nu: tuple
    measures: tuple
    envelopes: tuple          # explicit-constant branch 32 lambda^{1/(v+nu)}
    cartan_fit: tuple | None  # (C, c) fitted on positive measures, reported only
    grid: int


def shrink_probability(
    params,
    disorder,
    m: int,
    patch_index: int,
    mu: int,
    lambdas=(0.5, 0.1, 0.01),
    grid: int = 401,
) -> ShrinkReport:
    """Grid measure of {g in [-1/2,1/2] : width(g) <= lambda * width(0)}.

    The patch lives at scale m-1; the operator swept in g is
    H_{m-1} + h_m Z_m + g alpha^m X_1 X_m.  Requires the separation event at
    the step into scale m (EventAViolated otherwise) so the patch rows can be
    tracked by rank through the sweep.
    """
    if mu not in (+1, -1):
        raise ValueError("mu must be +1 or -1")
    prev_vals = np.linalg.eigvalsh(assemble(params, disorder, Full(m - 1)))
    tau = patch_threshold(params.alpha, params.theta, m - 1)
    parents = partition_patches(prev_vals, tau)
    h = disorder.h[m - 1]
    holds, margin = event_A(parents, h, tau)
    if not holds:
        raise EventAViolated(f"shifted hulls only {margin:.3e} apart, need > {tau:.3e}")
    if not (0 <= patch_index < parents.count):
        raise ValueError("patch index out of range")
    size = int(parents.sizes[patch_index])
    width0 = float(parents.widths[patch_index])
    if size < 2 or width0 <= 1e-15:
        raise ZeroWidth("patch has no width to shrink")

    lo = parents.los[patch_index] + mu * h
    half_sorted = np.sort(np.concatenate([prev_vals + h, prev_vals - h]))
    a = int(np.searchsorted(half_sorted, lo - tau / 2.0))

    base = assemble(params, disorder, Half(m - 1))
    V = coupling_term(params, m, m)
    gs = np.linspace(-0.5, 0.5, grid)
    widths = np.empty(grid)
    amp = params.alpha**m
    for idx, g in enumerate(gs):
        w = np.linalg.eigvalsh(base + (amp * g) * V)
        widths[idx] = w[a + size - 1] - w[a]

    at = series_base(params.alpha, params.theta)
    la = math.log(at)
    v_parent = math.log(width0) / ((m - 1) * la)
    nus, measures, envelopes = [], [], []
    for lam in lambdas:
        nu = math.log(lam) / (m * la)
        nus.append(nu)
        measures.append(float(np.mean(widths <= lam * width0)))
        expo = v_parent + nu
        envelopes.append(math.inf if expo == 0.0 else 32.0 * lam ** (1.0 / expo))

    cartan = None
    pos = [(l, mv) for l, mv in zip(lambdas, measures) if mv > 0.0 and l < 1.0]
    if len(pos) >= 2:
        # fit measure = C * lambda^{c / (m * v * a)} with a = -ln(at)
        xs = np.log([l for l, _ in pos])
        ys = np.log([mv for _, mv in pos])
        slope, intercept = np.polyfit(xs, ys, 1)
        cartan = (float(np.exp(intercept)), float(slope * m * v_parent * (-la)))

    return ShrinkReport(
        m, patch_index, mu, width0, v_parent,
        tuple(lambdas), tuple(nus), tuple(measures), tuple(envelopes), cartan, grid,
    )
