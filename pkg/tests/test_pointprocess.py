"""Rescaled statistics against closed-form Poisson references and a simulated
Poisson ensemble; semi-perturbed levels against full diagonalization."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsun.model import DisorderRealization, ModelParams, sample_disorder
from qsun.pointprocess import (
    POISSON_R_MEAN,
    DEFAULT_WINDOW,
    IndicatorSum,
    PointProcessSample,
    SplitInvalid,
    SupportExceedsWindow,
    TooFewLevels,
    TriangularBump,
    default_test_functions,
    dos_count,
    gap_ratio,
    laplace_functional,
    mean_spacing,
    poisson_reference,
    rescale,
    semi_perturbed,
    unrescale,
)
from qsun.spectral import label_ladder


def make_sample(points, realization=0, window=DEFAULT_WINDOW):
    pts = np.sort(np.asarray(points, dtype=float))
    return PointProcessSample(
        realization=realization,
        n=12,
        spacing=1.0,
        window=window,
        offset=0.0,
        points=pts,
        energies=pts,
    )


# ---------------------------------------------------------------------------
# spacing and rescaling

def test_mean_spacing_extended_precision_value():
    # (1/sqrt(12)) * 2^-10 * sqrt(20 pi), evaluated at 40 digits via mpmath
    assert mean_spacing(10) == pytest.approx(2.2345977364838115e-3, rel=1e-14)
    assert mean_spacing(10) == pytest.approx(2.2347e-3, rel=1e-4)


def test_mean_spacing_matches_definition():
    import mpmath as mp

    mp.mp.dps = 40
    for n in (1, 5, 12):
        want = mp.mpf(1) / mp.sqrt(12) * mp.mpf(2) ** -n * mp.sqrt(2 * mp.pi * n)
        assert mean_spacing(n) == pytest.approx(float(want), rel=1e-15)


def test_rescale_divides_and_windows():
    s = mean_spacing(10)
    spectrum = np.array([-30.0 * s, -1.5 * s, 0.0, 2.0 * s, 26.0 * s])
    sample = rescale(spectrum, 10)
    assert np.allclose(sample.points, [-1.5, 0.0, 2.0], atol=1e-12)
    assert sample.spacing == s
    assert sample.window == DEFAULT_WINDOW


def test_rescale_empty_window():
    s = mean_spacing(8)
    sample = rescale(np.array([40.0 * s, -90.0 * s]), 8)
    assert sample.points.size == 0


def test_rescale_linearity_under_doubling():
    rng = np.random.default_rng(7)
    s = mean_spacing(9)
    spectrum = rng.uniform(-10.0 * s, 10.0 * s, 50)
    a = rescale(spectrum, 9)
    b = rescale(2.0 * spectrum, 9)
    assert np.array_equal(2.0 * a.points, b.points)


def test_rescale_offset_recenters():
    s = mean_spacing(10)
    sample = rescale(np.array([1.0, 1.0 + s]), 10, offset=1.0)
    assert np.allclose(sample.points, [0.0, 1.0], atol=1e-12)


def test_unrescale_roundtrip_is_bit_exact():
    rng = np.random.default_rng(11)
    s = mean_spacing(10)
    spectrum = rng.uniform(-20.0 * s, 20.0 * s, 200)
    sample = rescale(spectrum, 10, realization=3)
    again = rescale(unrescale(sample), 10, realization=3)
    assert np.array_equal(sample.points, again.points)
    assert np.array_equal(sample.energies, again.energies)


# ---------------------------------------------------------------------------
# test functions and Poisson references

def test_indicator_reference_closed_form():
    phi = IndicatorSum(((0.0, 1.0),), (1.0,))
    assert poisson_reference(phi) == pytest.approx(
        math.exp(-(1.0 - math.exp(-1.0))), rel=1e-15
    )
    assert poisson_reference(phi) == pytest.approx(0.531464, abs=1e-6)


def test_indicator_pair_reference():
    phi = IndicatorSum(((-2.0, -1.0), (1.0, 3.0)), (1.0, 2.0))
    want = math.exp(-((1.0 - math.exp(-1.0)) + 2.0 * (1.0 - math.exp(-2.0))))
    assert poisson_reference(phi) == pytest.approx(want, rel=1e-15)


def test_bump_reference_against_quadrature():
    from scipy.integrate import quad

    phi = TriangularBump(0.0, 1.0, 1.0)
    integral, err = quad(lambda x: 1.0 - math.exp(-phi(np.array([x]))[0]), -1.0, 1.0)
    assert err < 1e-10
    assert phi.reference_exponent() == pytest.approx(integral, abs=1e-12)
    assert poisson_reference(phi) == pytest.approx(math.exp(-integral), rel=1e-12)


def test_indicator_rejects_overlap_and_negative_height():
    with pytest.raises(ValueError):
        IndicatorSum(((0.0, 2.0), (1.0, 3.0)), (1.0, 1.0))
    with pytest.raises(ValueError):
        IndicatorSum(((0.0, 1.0),), (-0.5,))


def test_default_library_fits_window():
    for phi in default_test_functions():
        assert phi.support() <= DEFAULT_WINDOW


# ---------------------------------------------------------------------------
# Laplace functional estimator

def test_laplace_zero_function_is_one_exactly():
    samples = [make_sample([0.1, 0.5]), make_sample([-3.0])]
    est = laplace_functional(samples, IndicatorSum((), ()))
    assert est.estimate == 1.0
    assert est.se == 0.0
    assert est.reference == 1.0


def test_laplace_hand_computed_two_realizations():
    phi = IndicatorSum(((0.0, 1.0),), (1.0,))
    samples = [make_sample([0.25, 0.75, 5.0]), make_sample([2.0])]
    est = laplace_functional(samples, phi)
    vals = [math.exp(-2.0), 1.0]
    assert est.estimate == pytest.approx(np.mean(vals), rel=1e-15)
    assert est.se == pytest.approx(np.std(vals, ddof=1) / math.sqrt(2), rel=1e-12)


def test_laplace_support_check():
    samples = [make_sample([0.0]), make_sample([1.0])]
    with pytest.raises(SupportExceedsWindow):
        laplace_functional(samples, TriangularBump(24.5, 1.0, 1.0))
    with pytest.raises(SupportExceedsWindow):
        laplace_functional(samples, IndicatorSum(((-30.0, -29.0),), (1.0,)))


@settings(max_examples=50, deadline=None)
@given(
    pts=st.lists(st.floats(-10.0, 10.0), min_size=0, max_size=12),
    pts2=st.lists(st.floats(-10.0, 10.0), min_size=0, max_size=12),
    h=st.floats(0.0, 2.0),
    extra=st.floats(0.0, 2.0),
)
def test_laplace_monotone_in_the_test_function(pts, pts2, h, extra):
    # phi <= phi' pointwise forces estimate(phi) >= estimate(phi')
    samples = [make_sample(pts), make_sample(pts2, realization=1)]
    lower = IndicatorSum(((-4.0, 4.0),), (h,))
    upper = IndicatorSum(((-4.0, 4.0),), (h + extra,))
    assert (
        laplace_functional(samples, lower).estimate
        >= laplace_functional(samples, upper).estimate
    )


def test_laplace_difference_bounded_by_linear_statistic():
    # |E e^-A - E e^-B| <= E|A - B| for A, B >= 0, checked on concrete data
    rng = np.random.default_rng(5)
    samples = [
        make_sample(rng.uniform(-8, 8, rng.integers(0, 20)), realization=r)
        for r in range(40)
    ]
    phi = IndicatorSum(((-2.0, 1.0),), (0.7,))
    psi = TriangularBump(-0.5, 2.0, 0.9)
    a = laplace_functional(samples, phi).estimate
    b = laplace_functional(samples, psi).estimate
    linear = np.mean(
        [abs(float(phi(s.points).sum()) - float(psi(s.points).sum())) for s in samples]
    )
    assert abs(a - b) <= linear + 1e-15


# ---------------------------------------------------------------------------
# simulated Poisson ensemble: estimator calibration

@pytest.fixture(scope="module")
def poisson_ensemble():
    rng = np.random.default_rng(20260816)
    window = DEFAULT_WINDOW
    samples = []
    for r in range(3000):
        npts = rng.poisson(2.0 * window)
        samples.append(make_sample(rng.uniform(-window, window, npts), realization=r))
    return samples


def test_laplace_matches_poisson_reference(poisson_ensemble):
    for phi in default_test_functions():
        est = laplace_functional(poisson_ensemble, phi)
        assert 0.0 < est.estimate <= 1.0
        assert abs(est.estimate - est.reference) <= 4.0 * est.se


def test_dos_matches_interval_length(poisson_ensemble):
    est = dos_count(poisson_ensemble, (-1.0, 1.0))
    assert abs(est.mean - 2.0) <= 4.0 * est.se


def test_gap_ratio_matches_poisson_constant(poisson_ensemble):
    est = gap_ratio(poisson_ensemble)
    assert POISSON_R_MEAN == pytest.approx(2.0 * math.log(2.0) - 1.0, rel=1e-15)
    assert POISSON_R_MEAN == pytest.approx(0.386294, abs=1e-6)
    assert abs(est.mean - POISSON_R_MEAN) <= max(4.0 * est.se, 0.005)


# ---------------------------------------------------------------------------
# counting

def test_dos_empty_interval():
    samples = [make_sample([0.1, 0.2]), make_sample([0.3])]
    est = dos_count(samples, (2.0, 2.0))
    assert est.mean == 0.0


def test_dos_additive_over_disjoint_intervals():
    rng = np.random.default_rng(9)
    samples = [
        make_sample(rng.uniform(-20, 20, 30), realization=r) for r in range(10)
    ]
    left = dos_count(samples, (-5.0, -1.0))
    right = dos_count(samples, (-0.5, 7.0))
    both_counts = [
        np.count_nonzero((s.points >= -5.0) & (s.points <= -1.0))
        + np.count_nonzero((s.points >= -0.5) & (s.points <= 7.0))
        for s in samples
    ]
    assert left.mean + right.mean == pytest.approx(np.mean(both_counts), rel=1e-15)


def test_dos_lattice_with_excised_middle():
    # integer-spaced points with the two nearest to zero removed: the count
    # over [-3, 3] drops by exactly the excised mass, the rescaling does not
    # smear it back
    pts = np.array([-2.5, -1.5, 1.5, 2.5])
    samples = [make_sample(pts), make_sample(pts, realization=1)]
    est = dos_count(samples, (-3.0, 3.0))
    assert est.mean == 4.0
    assert est.se == 0.0


def test_dos_rejects_unbounded_interval():
    samples = [make_sample([0.0]), make_sample([1.0])]
    with pytest.raises(ValueError):
        dos_count(samples, (-math.inf, 0.0))


# ---------------------------------------------------------------------------
# gap ratio

def test_gap_ratio_equally_spaced_is_one():
    samples = [
        make_sample(np.linspace(-10, 10, 21)),
        make_sample(np.linspace(-8, 8, 9), realization=1),
    ]
    est = gap_ratio(samples)
    assert est.mean == 1.0
    assert est.se == 0.0


def test_gap_ratio_needs_three_points():
    samples = [make_sample([0.0, 1.0]), make_sample([0.0, 1.0, 2.0], realization=1)]
    with pytest.raises(TooFewLevels):
        gap_ratio(samples)


def test_gap_ratio_hand_value():
    # gaps 1, 3, 2 give ratios 1/3 and 2/3
    samples = [
        make_sample([0.0, 1.0, 4.0, 6.0]),
        make_sample([0.0, 1.0, 4.0, 6.0], realization=1),
    ]
    est = gap_ratio(samples)
    assert est.mean == pytest.approx(0.5, rel=1e-15)


# ---------------------------------------------------------------------------
# semi-perturbed spectrum

SEMI_PARAMS = ModelParams(n=8, alpha=0.1, theta=0.8, master_seed=31)


@pytest.fixture(scope="module")
def semi_ladder():
    dis = sample_disorder(SEMI_PARAMS, 0)
    return dis, label_ladder(SEMI_PARAMS, dis)


def test_semi_perturbed_certificate_holds(semi_ladder):
    _, ladder = semi_ladder
    full = np.sort(ladder.spectrum(8).values)
    for split in (2, 3, 4, 5):
        sp = semi_perturbed(ladder, SEMI_PARAMS, split=split)
        dev = np.max(np.abs(sp.sorted_values - full))
        assert dev <= sp.certificate
        assert sp.certificate <= sp.loose_certificate
        assert sp.values.size == 2**8


def test_semi_perturbed_certificate_formula(semi_ladder):
    _, ladder = semi_ladder
    sp = semi_perturbed(ladder, SEMI_PARAMS, split=4)
    want = 0.5 * sum(0.1**i for i in range(5, 9))
    assert sp.certificate == pytest.approx(want, rel=1e-12)
    assert sp.loose_certificate == pytest.approx(2e-4, rel=1e-12)


def test_semi_perturbed_default_split_from_rho(semi_ladder):
    _, ladder = semi_ladder
    sp = semi_perturbed(ladder, SEMI_PARAMS)
    assert sp.split == int(math.floor(SEMI_PARAMS.rho_value * 8))


def test_semi_perturbed_exact_without_coupling(semi_ladder):
    dis, _ = semi_ladder
    quiet = DisorderRealization(realization=0, h=dis.h, g=np.zeros_like(dis.g))
    ladder = label_ladder(SEMI_PARAMS, quiet)
    sp = semi_perturbed(ladder, SEMI_PARAMS, split=4)
    full = np.sort(ladder.spectrum(8).values)
    assert np.max(np.abs(sp.sorted_values - full)) < 1e-12


def test_semi_perturbed_label_packing(semi_ladder):
    dis, _ = semi_ladder
    quiet = DisorderRealization(realization=0, h=dis.h, g=np.zeros_like(dis.g))
    ladder = label_ladder(SEMI_PARAMS, quiet)
    sp = semi_perturbed(ladder, SEMI_PARAMS, split=4)
    base = ladder.spectrum(4).values
    # spin code 0b0101: minus h5, plus h6, minus h7, plus h8
    eta = (0b0101 << 4) | 7
    want = base[7] - dis.h[4] + dis.h[5] - dis.h[6] + dis.h[7]
    assert sp.values[eta] == pytest.approx(want, abs=1e-12)


def test_semi_perturbed_split_validation(semi_ladder):
    _, ladder = semi_ladder
    with pytest.raises(SplitInvalid):
        semi_perturbed(ladder, SEMI_PARAMS, split=0)
    with pytest.raises(SplitInvalid):
        semi_perturbed(ladder, SEMI_PARAMS, split=8)
