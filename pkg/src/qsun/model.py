"""Chain definition, disorder sampling and Hamiltonian assembly.

The chain couples a small ergodic seed (the "bath", an arbitrary symmetric
matrix on the first ``n_B`` spins) to the remaining spins through exponentially
decaying flip-flip terms.  At scale ``m`` the Hamiltonian on ``(C^2)^{x m}``
reads

    H_m = H_B + sum_{i=n_B+1}^{m} ( h_i Z_i + alpha^i g_i X_1 X_i )

with h_i, g_i i.i.d. uniform on [-1/2, 1/2].  The half-step operator adds the
next Z field but not yet the next coupling,

    H_{m+1/2} = H_m + h_{m+1} Z_{m+1},

whose spectrum is a pure arithmetic shift of spec(H_m), which is what makes
the inductive labeling of eigenvalues possible.

Basis convention (used everywhere in this package): site ``i`` lives on bit
``i - 1`` of the basis index, and bit value 0 means Z-eigenvalue +1.  Site 1
is therefore the least significant bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from numpy.random import Generator, Philox

__all__ = [
    "DegenerateBath",
    "DimensionOverflow",
    "DefaultDiagonal",
    "ExplicitMatrix",
    "ModelParams",
    "DisorderRealization",
    "Full",
    "Half",
    "build_bath",
    "sample_disorder",
    "uniform_stream",
    "assemble",
    "load_params",
    "save_params",
]

MAX_SCALE = 14          # dense 2^14 x 2^14 is the largest hermitian solve we allow by default
ASSUMPTION_TOL = 1e-10  # gaps and anti-gaps of the bath must clear this
EXP_GUARD = 700.0       # theta * n * ln(1/alpha) beyond this underflows every threshold


class DegenerateBath(ValueError):
    """Bath violates the non-degeneracy assumption (gap or anti-gap ~ 0)."""


class DimensionOverflow(ValueError):
    """Requested scale exceeds the dense-diagonalization budget."""


# ---------------------------------------------------------------------------
# bath specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DefaultDiagonal:
    """Diagonal bath with entries spread evenly across [center - half_width,
    center + half_width], largest first.

    For a single bath spin this is diag(center + half_width,
    center - half_width).  With center > half_width > 0 all pairwise sums are
    positive and all entries distinct, so both halves of the non-degeneracy
    assumption hold by construction.
    """

    center: float = 0.5
    half_width: float = 0.3


@dataclass(frozen=True)
class ExplicitMatrix:
    """User-supplied symmetric bath matrix, stored as a nested list."""

    entries: tuple

    def matrix(self) -> np.ndarray:
        return np.asarray(self.entries, dtype=float)


def build_bath(spec, n_B: int, norm_bound: float = 1.1) -> np.ndarray:
    """Materialize the bath matrix at size 2^n_B and validate it.

    Parameters
    ----------
    spec : DefaultDiagonal | ExplicitMatrix
    n_B : int
        Number of bath spins.
    norm_bound : float
        Operator-norm budget for the bath.

    Returns
    -------
    ndarray, shape (2**n_B, 2**n_B), symmetric.

    Raises
    ------
    DegenerateBath
        If any eigenvalue gap or anti-gap (E_i + E_j, i <= j) falls below
        1e-10, or the norm bound is exceeded.
    """
    dim = 1 << n_B
    if isinstance(spec, DefaultDiagonal):
        hi = spec.center + spec.half_width
        lo = spec.center - spec.half_width
        mat = np.diag(np.linspace(hi, lo, dim))
    elif isinstance(spec, ExplicitMatrix):
        mat = spec.matrix()
        if mat.shape != (dim, dim):
            raise ValueError(f"bath matrix has shape {mat.shape}, expected {(dim, dim)}")
        if not np.array_equal(mat, mat.T):
            raise ValueError("bath matrix must be symmetric")
    else:
        raise TypeError(f"unknown bath spec {type(spec).__name__}")

    energies = np.linalg.eigvalsh(mat)
    if np.max(np.abs(energies)) > norm_bound + 1e-12:
        raise DegenerateBath(
            f"bath norm {np.max(np.abs(energies)):.6g} exceeds bound {norm_bound}"
        )
    if dim > 1 and np.min(np.diff(energies)) < ASSUMPTION_TOL:
        raise DegenerateBath("bath spectrum has a (near-)degenerate gap")
    # anti-gaps include the i = j pairs, so a zero eigenvalue is also fatal
    sums = np.add.outer(energies, energies)
    if np.min(np.abs(sums[np.triu_indices(dim)])) < ASSUMPTION_TOL:
        raise DegenerateBath("bath spectrum has a (near-)vanishing anti-gap")
    return mat


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def default_rho(alpha: float, theta: float) -> float:
    """Midpoint-ish split exponent, always inside the admissible interval
    (ln 2 / ln(1/alpha), ln 2 / (theta ln(1/alpha)))."""
    return math.log(2.0) / math.log(1.0 / alpha) * (1.0 + 1.0 / theta) / 2.0


@dataclass(frozen=True)
class ModelParams:
    """Validated parameter bundle for one chain ensemble.

    ``rho=None`` selects the default split exponent for the semi-perturbed
    comparison; ``norm_bound`` caps the bath operator norm.
    """

    n: int
    alpha: float
    theta: float
    master_seed: int
    n_B: int = 1
    bath: object = field(default_factory=DefaultDiagonal)
    rho: float | None = None
    norm_bound: float = 1.1

    def __post_init__(self):
        if not isinstance(self.n, int) or not isinstance(self.n_B, int):
            raise ValueError("n and n_B must be integers")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not (2.0 / 3.0 < self.theta < 1.0):
            raise ValueError(f"theta must be in (2/3, 1), got {self.theta}")
        if not (1 <= self.n_B < self.n):
            raise ValueError(f"need 1 <= n_B < n, got n_B={self.n_B}, n={self.n}")
        if self.theta * self.n * math.log(1.0 / self.alpha) >= EXP_GUARD:
            raise ValueError(
                "theta * n * ln(1/alpha) >= 700: patch thresholds would underflow"
            )
        if not (0 <= self.master_seed < 2**64):
            raise ValueError("master_seed must fit in 64 bits")
        lo = math.log(2.0) / math.log(1.0 / self.alpha)
        hi = lo / self.theta
        rho = self.rho if self.rho is not None else default_rho(self.alpha, self.theta)
        if not (lo < rho < hi):
            raise ValueError(
                f"rho must lie in ({lo:.6g}, {hi:.6g}) for this alpha/theta, got {rho:.6g}"
            )

    @property
    def rho_value(self) -> float:
        return self.rho if self.rho is not None else default_rho(self.alpha, self.theta)

    def bath_matrix(self) -> np.ndarray:
        return build_bath(self.bath, self.n_B, self.norm_bound)


# ---------------------------------------------------------------------------
# disorder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DisorderRealization:
    """Field and coupling draws for one realization.

    ``h[i-1]`` and ``g[i-1]`` belong to site ``i``.  Both are sampled for all
    sites 1..n so that a site's draw does not depend on n_B or on the scale
    at which it first enters the Hamiltonian.
    """

    realization: int
    h: np.ndarray
    g: np.ndarray


def _realization_generator(master_seed: int, realization: int) -> Generator:
    # Philox is counter based: the (seed, realization) pair keys an
    # independent stream, and within the stream the draw position encodes
    # (site, field kind), so any prefix is reproducible in isolation.
    return Generator(Philox(key=np.array([master_seed, realization], dtype=np.uint64)))


def sample_disorder(params: ModelParams, realization: int) -> DisorderRealization:
    """Draw (h, g) for one realization, uniform on [-1/2, 1/2].

    The draw at site i sits at stream offset 2(i-1) for h and 2(i-1)+1 for
    g, so enlarging n extends the arrays without changing earlier sites.
    """
    if realization < 0:
        raise ValueError("realization index must be >= 0")
    vals = _realization_generator(params.master_seed, realization).random(2 * params.n)
    vals -= 0.5
    return DisorderRealization(realization, h=vals[0::2].copy(), g=vals[1::2].copy())


def uniform_stream(master_seed: int, stream: int, count: int) -> np.ndarray:
    """Counter-based bulk uniform draws on [-1/2, 1/2] for Monte Carlo work.

    Streams with distinct (master_seed, stream) keys never overlap, so
    trial blocks can be consumed in any order or in parallel.
    """
    vals = _realization_generator(master_seed, stream).random(count)
    vals -= 0.5
    return vals


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Full:
    """All terms up to and including scale m."""

    m: int


@dataclass(frozen=True)
class Half:
    """H_m plus the next Z field h_{m+1} Z_{m+1}, no new coupling.

    Acts on m+1 sites, dimension 2^{m+1}.
    """

    m: int


def assemble(
    params: ModelParams,
    disorder: DisorderRealization,
    part,
    allow_large: bool = False,
) -> np.ndarray:
    """Build the dense symmetric Hamiltonian for Full(m) or Half(m).

    Both triangles are written by the same vectorized statements, so the
    result satisfies ``H == H.T`` bit for bit.

    Raises
    ------
    DimensionOverflow
        If the operator would act on more than MAX_SCALE sites and
        allow_large is not set.
    """
    if isinstance(part, Full):
        m, nsites = part.m, part.m
    elif isinstance(part, Half):
        m, nsites = part.m, part.m + 1
    else:
        raise TypeError(f"part must be Full or Half, got {type(part).__name__}")
    if not (params.n_B <= m <= params.n):
        raise ValueError(f"scale m={m} outside [n_B, n] = [{params.n_B}, {params.n}]")
    if isinstance(part, Half) and m >= params.n:
        raise ValueError(f"Half({m}) needs field h_{m+1}, but n={params.n}")
    if nsites > MAX_SCALE and not allow_large:
        raise DimensionOverflow(
            f"{nsites} sites means dimension 2^{nsites}; pass allow_large=True to force"
        )

    dim = 1 << nsites
    H = np.zeros((dim, dim))

    # bath block on the low n_B bits, repeated along the block diagonal
    hb = params.bath_matrix()
    bd = 1 << params.n_B
    blocks = dim >> params.n_B
    view = H.reshape(blocks, bd, blocks, bd)
    view[np.arange(blocks), :, np.arange(blocks), :] += hb

    k = np.arange(dim)
    diag = np.zeros(dim)
    for i in range(params.n_B + 1, m + 1):
        diag += disorder.h[i - 1] * (1.0 - 2.0 * ((k >> (i - 1)) & 1))
    if isinstance(part, Half):
        diag += disorder.h[m] * (1.0 - 2.0 * ((k >> m) & 1))
    H[k, k] += diag

    # X_1 X_i flips bit 0 and bit i-1; writing H[k, k^mask] for every k hits
    # each unordered pair from both sides with the identical value
    for i in range(params.n_B + 1, m + 1):
        mask = 1 | (1 << (i - 1))
        H[k, k ^ mask] += params.alpha**i * disorder.g[i - 1]
    return H


def coupling_term(params: ModelParams, site: int, nsites: int) -> np.ndarray:
    """Dense X_1 X_site on nsites spins (unit coupling strength)."""
    dim = 1 << nsites
    k = np.arange(dim)
    V = np.zeros((dim, dim))
    V[k, k ^ (1 | (1 << (site - 1)))] = 1.0
    return V


# ---------------------------------------------------------------------------
# config file round trip
# ---------------------------------------------------------------------------
#
# Schema (JSON object):
#   n            int, chain length, 1 <= n_B < n
#   n_B          int, bath size (default 1)
#   alpha        float in (0, 1), coupling decay rate
#   theta        float in (2/3, 1), resonance threshold exponent
#   master_seed  int, 64-bit ensemble seed
#   rho          float or null, semi-perturbed split exponent (null = default)
#   norm_bound   float, bath operator-norm budget (default 1.1)
#   bath         {"kind": "default_diagonal", "center": f, "half_width": f}
#              | {"kind": "explicit", "entries": [[...], ...]}

def params_to_dict(params: ModelParams) -> dict:
    d = asdict(params)
    if isinstance(params.bath, DefaultDiagonal):
        d["bath"] = {
            "kind": "default_diagonal",
            "center": params.bath.center,
            "half_width": params.bath.half_width,
        }
    else:
        d["bath"] = {"kind": "explicit", "entries": [list(r) for r in params.bath.entries]}
    return d


def params_from_dict(d: dict) -> ModelParams:
    d = dict(d)
    bath = d.get("bath", {"kind": "default_diagonal"})
    kind = bath.get("kind", "default_diagonal")
    if kind == "default_diagonal":
        d["bath"] = DefaultDiagonal(
            center=bath.get("center", 0.5), half_width=bath.get("half_width", 0.3)
        )
    elif kind == "explicit":
        d["bath"] = ExplicitMatrix(entries=tuple(tuple(r) for r in bath["entries"]))
    else:
        raise ValueError(f"unknown bath kind {kind!r}")
    return ModelParams(**d)


def save_params(params: ModelParams, path) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_dict(params), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_params(path) -> ModelParams:
    with open(path) as fh:
        return params_from_dict(json.load(fh))
