"""Labeled spectra and the arithmetic half-step ladder.

The half-step spectrum at scale m is never diagonalized: it is the exact
multiset  (spec(H_{m-1}) + h_m) u (spec(H_{m-1}) - h_m),  and the label of
an eigenvalue of H_m is inherited from the rank of its half-step partner.
Each full step can move a sorted eigenvalue by at most the coupling norm
alpha^m |g_m| (Weyl), which keeps the rank pairing honest as long as the
deviation check passes.

Labels are configuration bitmasks: bit i-1 holds the Z-orientation of site
i (0 means +1), while the low n_B bits index the bath eigenstate, ascending
order at the base scale mapped to ascending index.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .model import Full, ModelParams, DisorderRealization, assemble

__all__ = [
    "WeylViolation",
    "LabeledSpectrum",
    "SpectrumLadder",
    "diagonalize",
    "label_ladder",
    "cumulative_label_error",
    "dump_ladder",
    "load_ladder",
]

PHASE_TOL = 1e-12   # relative floor for "first nonzero" in the sign convention
TIE_SCALE = 1e-13   # gaps below TIE_SCALE * max(1, ||H||) are recorded as ties


class WeylViolation(RuntimeError):
    """A full step moved some eigenvalue further than the coupling norm allows."""


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    # make the first component larger than PHASE_TOL * colmax positive
    mags = np.abs(vectors)
    first = (mags > PHASE_TOL * mags.max(axis=0)).argmax(axis=0)
    signs = np.sign(vectors[first, np.arange(vectors.shape[1])])
    signs[signs == 0.0] = 1.0
    return vectors * signs


def diagonalize(H: np.ndarray, want_vectors: bool = True):
    """Ascending eigendecomposition with a deterministic sign convention.

    Returns (values, vectors_or_None, ties) where ties is a tuple of
    (index, gap) pairs for near-degenerate neighbors.  Ties are recorded,
    not fatal.
    """
    if want_vectors:
        values, vectors = np.linalg.eigh(H)
        vectors = _fix_phases(vectors)
    else:
        values = np.linalg.eigvalsh(H)
        vectors = None
    tol = TIE_SCALE * max(1.0, float(np.max(np.abs(values))) if values.size else 1.0)
    gaps = np.diff(values)
    ties = tuple((int(i), float(gaps[i])) for i in np.nonzero(gaps < tol)[0])
    return values, vectors, ties


@dataclass
class LabeledSpectrum:
    """Eigenvalues of one scale together with their configuration labels."""

    m: int
    values: np.ndarray
    labels: np.ndarray
    vectors: np.ndarray | None = None
    ties: tuple = ()

    def value_by_label(self) -> np.ndarray:
        """Array E with E[sigma] the eigenvalue labeled sigma."""
        out = np.empty_like(self.values)
        out[self.labels] = self.values
        return out

    def position_by_label(self) -> np.ndarray:
        """Array P with P[sigma] the sorted position of label sigma."""
        out = np.empty(self.labels.size, dtype=np.int64)
        out[self.labels] = np.arange(self.labels.size)
        return out


@dataclass
class SpectrumLadder:
    """All scales of one realization, with half-step bookkeeping.

    half_values[m] / half_labels[m] hold the sorted arithmetic half-step
    leading into scale m; weyl_dev[m] is the observed rank-paired deviation
    and tie_breaks[m] counts exact half-step ties resolved by label order.
    """

    params: ModelParams
    disorder: DisorderRealization
    spectra: dict
    half_values: dict
    half_labels: dict
    weyl_dev: dict
    tie_breaks: dict

    @property
    def top_scale(self) -> int:
        return max(self.spectra)

    def spectrum(self, m: int) -> LabeledSpectrum:
        return self.spectra[m]


def label_ladder(
    params: ModelParams,
    disorder: DisorderRealization,
    m_end: int | None = None,
    want_vectors=(),
    allow_large: bool = False,
) -> SpectrumLadder:
    """Diagonalize scale by scale and thread labels through the half-steps.

    ``want_vectors`` lists the scales whose eigenvectors should be kept
    (vectors roughly double the solve time and dominate memory).

    Raises WeylViolation if any step's rank-paired deviation exceeds
    alpha^m + 1e-12; the additive term floors the bound above solver noise.
    """
    m_end = params.n if m_end is None else m_end
    if not (params.n_B <= m_end <= params.n):
        raise ValueError(f"m_end={m_end} outside [n_B, n]")
    want_vectors = frozenset(want_vectors)

    base_vals, base_vecs, base_ties = diagonalize(
        params.bath_matrix(), params.n_B in want_vectors
    )
    spectra = {
        params.n_B: LabeledSpectrum(
            params.n_B,
            base_vals,
            np.arange(base_vals.size, dtype=np.int64),
            base_vecs,
            base_ties,
        )
    }
    half_values, half_labels, weyl_dev, tie_breaks = {}, {}, {}, {}

    prev = spectra[params.n_B]
    for m in range(params.n_B + 1, m_end + 1):
        h_m = disorder.h[m - 1]
        hv = np.concatenate([prev.values + h_m, prev.values - h_m])
        hl = np.concatenate([prev.labels, prev.labels | (1 << (m - 1))])
        # stable sort resolves exact ties toward the lower concat index,
        # i.e. ascending label (the +h copy carries the smaller bitmask)
        order = np.argsort(hv, kind="stable")
        hv, hl = hv[order], hl[order]
        tie_breaks[m] = int(np.count_nonzero(np.diff(hv) == 0.0))

        vals, vecs, ties = diagonalize(
            assemble(params, disorder, Full(m), allow_large), m in want_vectors
        )
        dev = float(np.max(np.abs(vals - hv)))
        bound = params.alpha**m + 1e-12
        if dev > bound:
            raise WeylViolation(
                f"scale {m}: rank-paired deviation {dev:.3e} exceeds {bound:.3e}"
            )
        half_values[m], half_labels[m], weyl_dev[m] = hv, hl, dev
        spectra[m] = LabeledSpectrum(m, vals, hl.copy(), vecs, ties)
        prev = spectra[m]

    return SpectrumLadder(
        params, disorder, spectra, half_values, half_labels, weyl_dev, tie_breaks
    )


def cumulative_label_error(
    ladder: SpectrumLadder, m_start: int, suffix_bits: int, length: int
) -> float:
    """Worst-case gap between labeled energies and the free-shift prediction.

    Compares E_{(sigma, suffix)} at scale m_start + length against
    E_sigma + sum_j mu_j h_{m_start + j} over every sigma at scale m_start,
    where bit j of ``suffix_bits`` encodes mu_{j+1} (0 means +1).  The
    telescoped Weyl bound guarantees a result <= 2 alpha^{m_start}.
    """
    m_end = m_start + length
    if m_start not in ladder.spectra or m_end not in ladder.spectra:
        raise ValueError("ladder does not cover the requested range")
    if length < 1 or suffix_bits >> length:
        raise ValueError("suffix does not fit the requested length")
    e_start = ladder.spectra[m_start].value_by_label()
    e_end = ladder.spectra[m_end].value_by_label()
    shift = 0.0
    for j in range(length):
        mu = 1.0 - 2.0 * ((suffix_bits >> j) & 1)
        shift += mu * ladder.disorder.h[m_start + j]
    sigma = np.arange(e_start.size, dtype=np.int64)
    idx = sigma | (suffix_bits << m_start)
    return float(np.max(np.abs(e_end[idx] - (e_start + shift))))


# ---------------------------------------------------------------------------
# binary ladder dump: little-endian, one (m, count, values, labels) block per
# scale, magic "QSLD", version 1
# ---------------------------------------------------------------------------

_MAGIC = b"QSLD"


def dump_ladder(ladder: SpectrumLadder, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<I", 1))
        fh.write(struct.pack("<I", len(ladder.spectra)))
        for m in sorted(ladder.spectra):
            sp = ladder.spectra[m]
            fh.write(struct.pack("<iq", m, sp.values.size))
            fh.write(sp.values.astype("<f8").tobytes())
            fh.write(sp.labels.astype("<i8").tobytes())


def load_ladder(path) -> dict:
    """Read a dump back as {m: (values, labels)}."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError("not a ladder dump")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise ValueError(f"unsupported ladder dump version {version}")
        (nscales,) = struct.unpack("<I", fh.read(4))
        out = {}
        for _ in range(nscales):
            m, count = struct.unpack("<iq", fh.read(12))
            values = np.frombuffer(fh.read(8 * count), dtype="<f8").copy()
            labels = np.frombuffer(fh.read(8 * count), dtype="<i8").copy()
            out[m] = (values, labels)
        return out
