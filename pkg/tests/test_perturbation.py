"""Contour projectors and the projected block series, checked against direct
diagonalization of small operators."""
from __future__ import annotations

import math

import numpy as np
import pytest

from qsun.model import (
    Half,
    ModelParams,
    assemble,
    coupling_term,
    sample_disorder,
)
from qsun.perturbation import (
    BoundViolated,
    ContourTooClose,
    NotIsolated,
    antires_series,
    build_frame,
    contour_projector,
    default_clearance,
    half_step_frame,
    phi_tilde,
    projected_hamiltonian_series,
    series_Bmo,
    truncation_certificate,
)
from qsun.resonance import partition_patches, patch_threshold


# ---------------------------------------------------------------------------
# contour_projector on hand-built diagonal operators

def test_projector_isolated_eigenvalue():
    H = np.diag([0.2, 0.8, 1.5, 2.0])
    P, info = contour_projector(H, 0.2, 0.2, clearance=0.1)
    expected = np.zeros((4, 4))
    expected[0, 0] = 1.0
    assert np.allclose(P, expected, atol=1e-12)
    assert info["rank"] == 1
    assert info["expected_rank"] == 1


def test_projector_enclosing_everything_is_identity():
    H = np.diag([0.2, 0.8, 1.5, 2.0])
    P, info = contour_projector(H, 0.2, 2.0, clearance=0.3)
    assert np.allclose(P, np.eye(4), atol=1e-10)
    assert info["rank"] == 4


def test_projector_empty_enclosure_is_zero():
    H = np.diag([0.2, 0.8, 1.5, 2.0])
    P, info = contour_projector(H, 3.5, 3.5, clearance=0.2)
    assert np.linalg.norm(P, 2) < 1e-8
    assert info["rank"] == 0


def test_projector_rejects_eigenvalue_on_the_contour():
    # 0.3 sits exactly on the circle of radius 0.1 around 0.2.
    H = np.diag([0.2, 0.3])
    with pytest.raises(ContourTooClose):
        contour_projector(H, 0.2, 0.2, clearance=0.1)


# ---------------------------------------------------------------------------
# shared model fixture: a two-level patch of the half-step operator

PARAMS = ModelParams(n=6, alpha=0.3, theta=0.8, master_seed=777)
REALIZATION = 10
PATCH = 2  # indices [2, 3] of the full-model spectrum at the top scale


@pytest.fixture(scope="module")
def patch_frame():
    dis = sample_disorder(PARAMS, REALIZATION)
    from qsun.model import Full

    vals = np.linalg.eigvalsh(assemble(PARAMS, dis, Full(5)))
    part = partition_patches(vals, patch_threshold(PARAMS.alpha, PARAMS.theta, 5))
    lo, hi = part.los[PATCH], part.his[PATCH]
    shift = dis.h[5]
    frame = half_step_frame(PARAMS, dis, lo + shift, hi + shift)
    H0 = assemble(PARAMS, dis, Half(5))
    V = coupling_term(PARAMS, 6, 6)
    return frame, H0, V, hi - lo


def test_frame_locates_the_patch(patch_frame):
    frame, H0, _, _ = patch_frame
    assert frame.patch_positions.tolist() == [2, 3]
    assert frame.amp == pytest.approx(PARAMS.alpha**6)
    assert np.allclose(frame.evals, np.linalg.eigvalsh(H0))


def test_projector_matches_direct_eigenvectors(patch_frame):
    frame, H0, V, _ = patch_frame
    clearance = default_clearance(PARAMS.alpha, PARAMS.theta, 6)
    lo = frame.evals[frame.patch_positions[0]]
    hi = frame.evals[frame.patch_positions[-1]]
    P, info = contour_projector(H0, lo, hi, clearance)
    evals, evecs = np.linalg.eigh(H0)
    U = evecs[:, frame.patch_positions]
    assert np.linalg.norm(P - U @ U.T, 2) < 1e-8
    assert abs(np.trace(P) - 2.0) < 1e-8
    assert info["p2_err"] < 1e-8


def test_series_bmo_vanishes_without_coupling(patch_frame):
    frame, H0, _, _ = patch_frame
    lo = frame.evals[frame.patch_positions[0]]
    hi = frame.evals[frame.patch_positions[-1]]
    quiet = build_frame(H0, np.zeros_like(H0), lo, hi, PARAMS.alpha, PARAMS.theta)
    bmo, _ = series_Bmo(quiet, 3)
    for B in bmo:
        assert np.all(B == 0.0)


def test_series_bmo_first_order_finite_difference(patch_frame):
    frame, H0, V, _ = patch_frame
    bmo, info = series_Bmo(frame, 2)
    assert info["imag"] < 1e-9
    clearance = default_clearance(PARAMS.alpha, PARAMS.theta, 6)
    lo = frame.evals[frame.patch_positions[0]]
    hi = frame.evals[frame.patch_positions[-1]]
    P0, _ = contour_projector(H0, lo, hi, clearance)
    B1 = frame.to_original(bmo[0])
    curvature = np.linalg.norm(bmo[1], 2)

    residuals = []
    for g in (1e-3, 5e-4):
        Pg, _ = contour_projector(H0 + g * frame.amp * V, lo, hi, clearance)
        residuals.append(np.linalg.norm(Pg - P0 - g * B1, 2))
        # remainder is dominated by the quadratic term once g is this small
        assert residuals[-1] <= 2.0 * g**2 * curvature + 1e-14
    ratio = residuals[0] / residuals[1]
    assert 3.0 < ratio < 5.0


def test_series_bmo_rejects_envelope_violation():
    # coupling norm far above 1 breaks the a-priori envelope on purpose
    clearance = default_clearance(1e-3, 0.99, 2)
    H = np.diag([0.0, 3 * clearance, 1.0, 2.0])
    V = np.full((4, 4), 100.0)
    frame = build_frame(H, V, 0.0, 0.0, 1e-3, 0.99)
    with pytest.raises(BoundViolated):
        series_Bmo(frame, 2)


# ---------------------------------------------------------------------------
# projected block series

def test_projected_series_order_zero_is_patch_spectrum(patch_frame):
    frame, _, _, _ = patch_frame
    series = projected_hamiltonian_series(frame, [], 0)
    expected = frame.evals[frame.patch_positions]
    assert np.allclose(series.spectrum(0.7), expected, atol=0.0)


def test_projected_series_tracks_direct_spectrum(patch_frame):
    frame, H0, V, _ = patch_frame
    bmo, _ = series_Bmo(frame, 4)
    series = projected_hamiltonian_series(frame, bmo, 4)
    idx = frame.patch_positions
    for g in (0.3, -0.5):
        direct = np.linalg.eigvalsh(H0 + g * frame.amp * V)[idx]
        assert np.max(np.abs(series.spectrum(g) - direct)) < 1e-12
    assert series.asym_max < 1e-10


def test_projected_series_odd_orders_vanish_for_pure_patch(patch_frame):
    # the coupling flips the outer spin, and both patch levels carry the
    # same outer-spin sign, so odd powers cannot connect the block to itself
    frame, _, _, _ = patch_frame
    bmo, _ = series_Bmo(frame, 4)
    series = projected_hamiltonian_series(frame, bmo, 4)
    assert series.coeff_norms[0] < 1e-12
    assert series.coeff_norms[2] < 1e-12
    assert series.coeff_norms[1] > 1e-8


def test_phi_tilde_matches_width_at_zero(patch_frame):
    frame, _, _, width = patch_frame
    bmo, _ = series_Bmo(frame, 4)
    series = projected_hamiltonian_series(frame, bmo, 4)
    assert phi_tilde(series, 0.0) == pytest.approx(width, abs=1e-9)


def test_phi_tilde_bounded_by_direct_width(patch_frame):
    frame, H0, V, _ = patch_frame
    bmo, _ = series_Bmo(frame, 4)
    series = projected_hamiltonian_series(frame, bmo, 4)
    idx = frame.patch_positions
    for g in np.linspace(-0.5, 0.5, 21):
        w = np.linalg.eigvalsh(H0 + g * frame.amp * V)[idx]
        assert abs(phi_tilde(series, g)) <= (w[-1] - w[0]) + 1e-10


def test_phi_tilde_constant_without_coupling(patch_frame):
    frame, H0, _, width = patch_frame
    lo = frame.evals[frame.patch_positions[0]]
    hi = frame.evals[frame.patch_positions[-1]]
    quiet = build_frame(H0, np.zeros_like(H0), lo, hi, PARAMS.alpha, PARAMS.theta)
    bmo, _ = series_Bmo(quiet, 3)
    series = projected_hamiltonian_series(quiet, bmo, 3)
    for g in (-0.5, 0.0, 0.4):
        assert phi_tilde(series, g) == pytest.approx(width, abs=1e-9)


def test_phi_tilde_needs_two_levels(patch_frame):
    frame, _, _, _ = patch_frame
    series = projected_hamiltonian_series(frame, [], 0)
    single = type(series)(
        patch_positions=series.patch_positions[:1],
        order=0,
        base=series.base[:1, :1],
        coeffs=[],
        contour=series.contour,
        amp=series.amp,
        coeff_norms=[],
        rl_norms=[],
        asym_max=0.0,
    )
    with pytest.raises(ValueError):
        phi_tilde(single, 0.0)


# ---------------------------------------------------------------------------
# truncation certificate

def test_truncation_certificate_contractive_regime():
    atn = (4.0 * (5e-4) ** 0.2) ** 10
    assert atn < 1.0
    got = truncation_certificate(5e-4, 0.8, 10, 2)
    assert got == pytest.approx(2.0 * atn**3 / (1.0 - atn), rel=1e-12)
    # tail bounds shrink as the retained order grows
    orders = [truncation_certificate(5e-4, 0.8, 10, k) for k in range(1, 5)]
    assert all(a > b for a, b in zip(orders, orders[1:]))


def test_truncation_certificate_divergent_regime_is_inf():
    assert truncation_certificate(0.3, 0.8, 6, 4) == math.inf
    assert truncation_certificate(0.3, 0.8, 8, 10) == math.inf


# ---------------------------------------------------------------------------
# scalar anti-resonance series

@pytest.fixture(scope="module")
def isolated_pair(patch_frame):
    frame, H0, V, _ = patch_frame
    ev = frame.evals
    iso = np.minimum(np.diff(ev, prepend=-np.inf), np.diff(ev, append=np.inf))
    order = np.argsort(iso)[::-1]
    return H0, V, ev, order


def test_antires_base_is_level_sum(isolated_pair):
    H0, V, ev, order = isolated_pair
    a, b = ev[order[0]], ev[order[2]]
    series = antires_series(H0, V, a, b, PARAMS.alpha, PARAMS.theta, 4)
    assert series.base == pytest.approx(a + b, abs=1e-12)
    # flipping the outer spin has no diagonal matrix element
    assert abs(series.coeffs[0]) < 1e-14


def test_antires_tracks_direct_level_sum(isolated_pair):
    H0, V, ev, order = isolated_pair
    a, b = ev[order[0]], ev[order[2]]
    series = antires_series(H0, V, a, b, PARAMS.alpha, PARAMS.theta, 4)
    amp = PARAMS.alpha**6
    for g in np.linspace(-0.5, 0.5, 11):
        shifted = np.linalg.eigvalsh(H0 + g * amp * V)
        direct = (
            shifted[np.argmin(np.abs(shifted - a))]
            + shifted[np.argmin(np.abs(shifted - b))]
        )
        assert abs(series.value(g) - direct) < 1e-12
    assert all(abs(c) <= 2.0 + 1e-8 for c in series.normalized)


def test_antires_constant_without_coupling(isolated_pair):
    H0, _, ev, order = isolated_pair
    a, b = ev[order[0]], ev[order[2]]
    series = antires_series(
        H0, np.zeros_like(H0), a, b, PARAMS.alpha, PARAMS.theta, 3
    )
    assert all(c == 0.0 for c in series.coeffs)
    assert series.value(0.37) == series.base


def test_antires_rejects_crowded_level():
    H = np.diag([0.0, 1e-6, 1.0, 2.0])
    V = np.zeros((4, 4))
    with pytest.raises(NotIsolated):
        antires_series(H, V, 0.0, 1.0, 0.3, 0.8, 2)


def test_antires_rejects_value_not_in_spectrum():
    H = np.diag([0.0, 1.0, 2.0, 3.0])
    V = np.zeros((4, 4))
    with pytest.raises(ValueError):
        antires_series(H, V, 0.123, 1.0, 0.3, 0.8, 2)
