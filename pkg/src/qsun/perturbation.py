"""Resolvent-contour perturbation series for isolated spectral patches.

The unperturbed operator is diagonalized once and every resolvent is then
diagonal, so a quadrature node costs one scaled matrix product.  The contour
is a circle around the patch hull with clearance alpha^{theta(n-1)}/2; the
trapezoid rule on a circle converges geometrically in the node count for
integrands analytic near the contour, so 256 nodes are far more than enough
whenever the pole-distance check passes.

Complex arithmetic stays inside this module: all published coefficients are
real-symmetrized and the discarded imaginary residue is reported (it must
stay below 1e-9).

Series bookkeeping: with amp = alpha^n and the coupling V normalized to unit
norm, the projector expands as P_g = P_0 + sum g^m B_m^o.  The one-sided
factors R (right-anchored on P_0) and L (left-anchored) obey

    m R^(m) = m B_m^o P_0 + sum_{i<m} (m-i) B_{m-i}^o R^(i)
    m L^(m) = m P_0 B_m^o + sum_{i<m} (m-i) L^(i) B_{m-i}^o

and the projected Hamiltonian is H_P(g) = L_g (H_0 + g amp V) R_g, whose
g^k coefficient lands exactly on the patch block (k x k, symmetric).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Half, assemble, coupling_term

__all__ = [
    "ContourTooClose",
    "BoundViolated",
    "NotIsolated",
    "Contour",
    "default_clearance",
    "contour_projector",
    "SeriesFrame",
    "build_frame",
    "half_step_frame",
    "series_Bmo",
    "ProjectedSeries",
    "projected_hamiltonian_series",
    "phi_tilde",
    "AntiResonanceSeries",
    "antires_series",
    "truncation_certificate",
]

IMAG_TOL = 1e-9
PROJ_TOL = 1e-8
SYM_TOL = 1e-10
BOUND_SLACK = 1.0 + 1e-8  # float headroom on mathematically exact envelopes


class ContourTooClose(RuntimeError):
    """An eigenvalue sits too close to the quadrature circle."""


class BoundViolated(RuntimeError):
    """A stated series envelope failed even after node doubling."""


class NotIsolated(RuntimeError):
    """The requested level has a neighbor inside the isolation margin."""


def default_clearance(alpha: float, theta: float, n: int) -> float:
    return math.exp(theta * (n - 1) * math.log(alpha)) / 2.0


@dataclass(frozen=True)
class Contour:
    center: float
    radius: float
    nodes: int

    def points(self):
        """Midpoint nodes z_t and quadrature weights for (1/2pi i) * integral."""
        phis = 2.0 * math.pi * (np.arange(self.nodes) + 0.5) / self.nodes
        units = np.exp(1j * phis)
        return self.center + self.radius * units, (self.radius / self.nodes) * units


def _circle_margin(evals: np.ndarray, contour: Contour) -> float:
    return float(np.min(np.abs(np.abs(evals - contour.center) - contour.radius)))


def _require_clear(evals: np.ndarray, contour: Contour, clearance: float) -> None:
    margin = _circle_margin(evals, contour)
    if margin < 0.1 * clearance:
        raise ContourTooClose(
            f"eigenvalue {margin:.3e} from the contour, need >= {0.1 * clearance:.3e}"
        )


def contour_projector(H, lo: float, hi: float, clearance: float, nodes: int = 256):
    """Spectral projector of H onto [lo, hi] by resolvent quadrature.

    Returns (P, info); info carries rank, the idempotency defect, the
    imaginary residue and the node count actually used.  The defect budget
    is 1e-8; nodes are doubled once before giving up.
    """
    evals, evecs = np.linalg.eigh(np.asarray(H, dtype=float))
    contour = Contour((lo + hi) / 2.0, (hi - lo) / 2.0 + clearance, nodes)
    _require_clear(evals, contour, clearance)
    expected = int(np.count_nonzero(np.abs(evals - contour.center) < contour.radius))

    attempt = contour
    while True:
        z, w = attempt.points()
        q = (w[:, None] / (z[:, None] - evals[None, :])).sum(axis=0)
        imag = float(np.max(np.abs(q.imag)))
        P = (evecs * q.real[None, :]) @ evecs.T
        p2_err = float(np.linalg.norm(P @ P - P, 2))
        if p2_err <= PROJ_TOL and imag <= IMAG_TOL:
            break
        if attempt.nodes > nodes:
            raise BoundViolated(
                f"projector defect {p2_err:.3e} after doubling to {attempt.nodes} nodes"
            )
        attempt = Contour(contour.center, contour.radius, 2 * nodes)
    rank = int(round(float(np.trace(P))))
    info = {
        "rank": rank,
        "expected_rank": expected,
        "p2_err": p2_err,
        "imag": imag,
        "nodes_used": attempt.nodes,
    }
    return P, info


# ---------------------------------------------------------------------------
# series frame
# ---------------------------------------------------------------------------

@dataclass
class SeriesFrame:
    """Eigen-frame of the unperturbed operator plus patch bookkeeping."""

    evals: np.ndarray
    evecs: np.ndarray
    V_eig: np.ndarray      # coupling rotated to the eigenbasis
    inside: np.ndarray     # bool mask of patch members
    contour: Contour
    clearance: float
    amp: float             # alpha^n
    alpha: float
    theta: float
    n: int

    @property
    def patch_positions(self) -> np.ndarray:
        return np.nonzero(self.inside)[0]

    @property
    def env_bmo(self) -> float:
        return (2.0 * self.alpha ** (1.0 - self.theta)) ** self.n * 2.0 * self.alpha**self.theta

    @property
    def env_rl(self) -> float:
        return (2.0 * self.alpha ** (1.0 - self.theta)) ** self.n

    @property
    def env_bt(self) -> float:
        return (4.0 * self.alpha ** (1.0 - self.theta)) ** self.n

    def to_original(self, mat: np.ndarray) -> np.ndarray:
        return self.evecs @ mat @ self.evecs.T


def build_frame(
    H0,
    V,
    lo: float,
    hi: float,
    alpha: float,
    theta: float,
    clearance: float | None = None,
    amp: float | None = None,
    nodes: int = 256,
) -> SeriesFrame:
    H0 = np.asarray(H0, dtype=float)
    dim = H0.shape[0]
    n = dim.bit_length() - 1
    if clearance is None:
        clearance = default_clearance(alpha, theta, n)
    if amp is None:
        amp = alpha**n
    evals, evecs = np.linalg.eigh(H0)
    contour = Contour((lo + hi) / 2.0, (hi - lo) / 2.0 + clearance, nodes)
    _require_clear(evals, contour, clearance)
    inside = np.abs(evals - contour.center) < contour.radius
    V_eig = evecs.T @ np.asarray(V, dtype=float) @ evecs
    return SeriesFrame(evals, evecs, V_eig, inside, contour, clearance, amp, alpha, theta, n)


def half_step_frame(params, disorder, lo: float, hi: float, nodes: int = 256) -> SeriesFrame:
    """Frame around a hull of the half-step operator, coupling to the last site."""
    H0 = assemble(params, disorder, Half(params.n - 1))
    V = coupling_term(params, params.n, params.n)
    return build_frame(H0, V, lo, hi, params.alpha, params.theta, nodes=nodes)


# ---------------------------------------------------------------------------
# projector series coefficients
# ---------------------------------------------------------------------------

def series_Bmo(frame: SeriesFrame, order: int, nodes: int | None = None):
    """Taylor coefficients B_1^o..B_order^o of the patch projector, eigenbasis.

    Each coefficient must obey its envelope ((2 alpha^(1-theta))^n
    2 alpha^theta)^m; a violation doubles the node count once and then
    raises BoundViolated.
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    base_nodes = frame.contour.nodes if nodes is None else nodes
    attempt = base_nodes
    while True:
        z, w = Contour(frame.contour.center, frame.contour.radius, attempt).points()
        acc = [np.zeros((frame.evals.size, frame.evals.size), dtype=complex) for _ in range(order)]
        for zt, wt in zip(z, w):
            D = 1.0 / (zt - frame.evals)
            W = frame.V_eig * D[None, :]
            A = D[:, None] * W
            acc[0] += wt * A
            for m in range(1, order):
                A = A @ W
                acc[m] += wt * A
        Bs, imag = [], 0.0
        ok = True
        for m in range(1, order + 1):
            coeff = frame.amp**m * acc[m - 1]
            imag = max(imag, float(np.max(np.abs(coeff.imag))))
            B = coeff.real
            Bs.append(B)
            if np.linalg.norm(B, 2) > frame.env_bmo**m * BOUND_SLACK:
                ok = False
        if ok and imag <= IMAG_TOL:
            return Bs, {"nodes_used": attempt, "imag": imag}
        if attempt > base_nodes:
            worst = max(
                np.linalg.norm(B, 2) / frame.env_bmo ** (m + 1) for m, B in enumerate(Bs)
            )
            raise BoundViolated(
                f"projector-series envelope exceeded (worst ratio {worst:.3e}) "
                f"at {attempt} nodes"
            )
        attempt = 2 * base_nodes


# ---------------------------------------------------------------------------
# projected Hamiltonian
# ---------------------------------------------------------------------------

@dataclass
class ProjectedSeries:
    patch_positions: np.ndarray
    order: int
    base: np.ndarray           # k x k, diagonal of unperturbed patch values
    coeffs: list               # B~_1..B~_order, k x k symmetric
    contour: Contour
    amp: float
    coeff_norms: list
    rl_norms: list             # max(|R^(m)|, |L^(m)|) per order
    asym_max: float

    @property
    def size(self) -> int:
        return self.base.shape[0]

    def hamiltonian(self, g: float) -> np.ndarray:
        M = self.base.copy()
        for k, B in enumerate(self.coeffs, start=1):
            M += g**k * B
        return M

    def spectrum(self, g: float) -> np.ndarray:
        return np.linalg.eigvalsh(self.hamiltonian(g))


def projected_hamiltonian_series(frame: SeriesFrame, bmo: list, order: int) -> ProjectedSeries:
    """Assemble the patch-block series H_P(g) = base + sum g^k B~_k.

    Runs the one-sided recursions in the eigenbasis; right factors live as
    dim x k slabs and left factors as k x dim, so no full-dimension products
    beyond the B_m^o themselves appear.
    """
    if order > len(bmo):
        raise ValueError("series order exceeds available projector coefficients")
    idx = frame.patch_positions
    k = idx.size
    if k == 0:
        raise ValueError("contour encloses no eigenvalues")
    dim = frame.evals.size

    R = {0: np.eye(dim)[:, idx]}
    L = {0: np.eye(dim)[idx, :]}
    rl_norms = []
    for m in range(1, order + 1):
        Bm = bmo[m - 1]
        accR = Bm[:, idx].copy()
        accL = Bm[idx, :].copy()
        for i in range(1, m):
            accR += ((m - i) / m) * (bmo[m - i - 1] @ R[i])
            accL += ((m - i) / m) * (L[i] @ bmo[m - i - 1])
        R[m], L[m] = accR, accL
        worst = max(np.linalg.norm(accR, 2), np.linalg.norm(accL, 2))
        rl_norms.append(worst)
        if worst > frame.env_rl**m * BOUND_SLACK:
            raise BoundViolated(
                f"one-sided factor norm {worst:.3e} exceeds envelope at order {m}"
            )

    lam = frame.evals
    coeffs, norms = [], []
    asym_max = 0.0
    for kk in range(1, order + 1):
        acc = np.zeros((k, k))
        for i in range(0, kk + 1):
            acc += L[i] @ (lam[:, None] * R[kk - i])
        for i in range(0, kk):
            acc += frame.amp * (L[i] @ (frame.V_eig @ R[kk - 1 - i]))
        asym = float(np.max(np.abs(acc - acc.T)))
        asym_max = max(asym_max, asym)
        if asym > SYM_TOL:
            raise BoundViolated(f"coefficient asymmetry {asym:.3e} at order {kk}")
        acc = (acc + acc.T) / 2.0
        nrm = float(np.linalg.norm(acc, 2))
        if nrm > frame.env_bt**kk * BOUND_SLACK:
            raise BoundViolated(
                f"projected coefficient norm {nrm:.3e} exceeds envelope at order {kk}"
            )
        coeffs.append(acc)
        norms.append(nrm)

    base = np.diag(lam[idx])
    return ProjectedSeries(
        idx, order, base, coeffs, frame.contour, frame.amp, norms, rl_norms, asym_max
    )


def phi_tilde(series: ProjectedSeries, g: float) -> float:
    """Spread of the extreme diagonal entries of H_P(g): a width proxy that
    can only underestimate the true patch width (Schur-Horn)."""
    if series.size < 2:
        raise ValueError("width proxy needs a patch of at least two levels")
    M = series.hamiltonian(g)
    return float(M[-1, -1] - M[0, 0])


def truncation_certificate(alpha: float, theta: float, n: int, order: int) -> float:
    """A priori sup-norm tail bound of the series past `order` for |g| <= 1/2.

    Finite only in the contractive regime (4 alpha^(1-theta))^n < 1; +inf
    otherwise (the series may still converge, the certificate just does not
    apply).
    """
    at_n = (4.0 * alpha ** (1.0 - theta)) ** n
    if at_n >= 1.0:
        return math.inf
    return 2.0 * at_n ** (order + 1) / (1.0 - at_n)


# ---------------------------------------------------------------------------
# anti-resonance expansion
# ---------------------------------------------------------------------------

@dataclass
class AntiResonanceSeries:
    values: tuple              # the two unperturbed levels
    base: float                # their sum at g = 0
    coeffs: list               # raw g^k coefficients c_k
    normalized: list           # b_k = c_k / (4 alpha^(1-theta))^(n k)

    def value(self, g: float) -> float:
        out = self.base
        for k, c in enumerate(self.coeffs, start=1):
            out += c * g**k
        return out


def antires_series(
    H0,
    V,
    value_a: float,
    value_b: float,
    alpha: float,
    theta: float,
    order: int,
    nodes: int = 256,
) -> AntiResonanceSeries:
    """Expansion of the level-sum E_a(g) + E_b(g) around g = 0.

    Both levels must be isolated by twice the contour clearance; each gets a
    rank-1 contour and a scalar projected series.  The normalized
    coefficients must satisfy |b_k| <= 2.
    """
    H0 = np.asarray(H0, dtype=float)
    n = H0.shape[0].bit_length() - 1
    clearance = default_clearance(alpha, theta, n)
    evals = np.linalg.eigvalsh(H0)
    sums = []
    for val in (value_a, value_b):
        pos = int(np.argmin(np.abs(evals - val)))
        if abs(evals[pos] - val) > 1e-9:
            raise ValueError(f"{val} is not an eigenvalue of the base operator")
        others = np.delete(evals, pos)
        gap = float(np.min(np.abs(others - evals[pos]))) if others.size else math.inf
        if gap <= 2.0 * clearance:
            raise NotIsolated(
                f"nearest neighbor {gap:.3e} away, need > {2.0 * clearance:.3e}"
            )
        frame = build_frame(H0, V, val, val, alpha, theta, nodes=nodes)
        if frame.patch_positions.size != 1:
            raise NotIsolated("contour around the level captured more than one eigenvalue")
        bmo, _ = series_Bmo(frame, order)
        series = projected_hamiltonian_series(frame, bmo, order)
        sums.append((float(series.base[0, 0]), [float(B[0, 0]) for B in series.coeffs]))

    base = sums[0][0] + sums[1][0]
    coeffs = [a + b for a, b in zip(sums[0][1], sums[1][1])]
    at_n = (4.0 * alpha ** (1.0 - theta)) ** n
    normalized = [c / at_n**k for k, c in enumerate(coeffs, start=1)]
    for k, b in enumerate(normalized, start=1):
        if abs(b) > 2.0 * BOUND_SLACK:
            raise BoundViolated(f"normalized coefficient |b_{k}| = {abs(b):.3e} > 2")
    return AntiResonanceSeries((value_a, value_b), base, coeffs, normalized)
