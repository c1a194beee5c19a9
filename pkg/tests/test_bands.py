import itertools

import numpy as np
import pytest
from scipy.stats import norm

from oracles import all_sign_patterns, isotonic_qp_oracle
from proxidist._validation import InputError
from proxidist.bands import (BandSet, cdf_band, cdf_kernel_density, draw_multipliers,
                             estimated_density_delta_band, first_crossing, invert_band,
                             isotonic_project, monotone_envelope, multiplier_critical_value,
                             multiplier_sup_stats, nonexpansive, pava, pointwise_interval,
                             silverman_bandwidth)
from proxidist.estimator import CdfProcessEstimate


def estimate_from(grid, cdf, influence):
    return CdfProcessEstimate(grid=np.asarray(grid, float), cdf=np.asarray(cdf, float),
                              influence=tuple(np.asarray(m, float) for m in influence))


def band(grid, lower, upper):
    lower, upper = np.atleast_2d(lower), np.atleast_2d(upper)
    return BandSet(grid=np.asarray(grid, float), estimate=(lower + upper) / 2, lower=lower,
                   upper=upper, critical_value=0.0, alpha=0.05, n=1)


def test_zero_influence_gives_zero_critical_value():
    zeros = (np.zeros((10, 4)), np.zeros((10, 4)))
    assert multiplier_critical_value(zeros, 50, seed=0) == 0.0


def test_critical_value_matches_sign_enumeration():
    c = 0.7
    infl = (np.full((3, 1), c), np.zeros((3, 1)))
    signs = all_sign_patterns(3)
    stats = multiplier_sup_stats(infl, signs)
    expected = np.abs(c * signs.sum(1)) / np.sqrt(3)
    np.testing.assert_allclose(stats, expected)
    assert set(np.round(stats, 12)) == {round(c / np.sqrt(3), 12), round(3 * c / np.sqrt(3), 12)}
    for alpha in (0.05, 0.3, 0.5, 0.8):
        ordered = np.sort(expected)
        k = int(np.ceil((1 - alpha) * 8)) - 1
        got = multiplier_critical_value(infl, alpha=alpha, multipliers=signs)
        assert got == pytest.approx(ordered[k])


def test_critical_value_scaling_and_permutation(rng):
    infl = (rng.standard_normal((40, 5)), rng.standard_normal((40, 5)))
    xi = draw_multipliers(200, 40, seed=1)
    base = multiplier_critical_value(infl, multipliers=xi)
    scaled = multiplier_critical_value(tuple(3.0 * m for m in infl), multipliers=xi)
    assert scaled == pytest.approx(3.0 * base, rel=1e-12)
    perm = rng.permutation(40)
    permuted = multiplier_critical_value(tuple(m[perm] for m in infl), multipliers=xi[:, perm])
    assert permuted == pytest.approx(base, rel=1e-12)


def test_multiplier_laws(rng):
    xi = draw_multipliers(2000, 5, seed=3)
    assert set(np.unique(xi)) == {-1.0, 1.0}
    g = draw_multipliers(2000, 5, seed=3, law="gaussian")
    assert abs(g.mean()) < 0.05
    with pytest.raises(InputError):
        draw_multipliers(1, 1, law="poisson")
    with pytest.raises(InputError):
        multiplier_critical_value((np.zeros((3, 1)),), alpha=1.5)


def test_cdf_band_examples():
    est = estimate_from([0.0, 1.0], [[0.3, 0.99], [0.2, 0.5]],
                        (np.zeros((100, 2)), np.zeros((100, 2))))
    zero = cdf_band(est, 0.0)
    np.testing.assert_array_equal(zero.lower, zero.upper)
    wide = cdf_band(est, 0.5)
    assert wide.upper[0, 1] == 1.0
    np.testing.assert_allclose(wide.lower[0], [0.25, 0.94])
    assert np.all(wide.lower <= est.cdf) and np.all(est.cdf <= wide.upper)
    with pytest.raises(InputError):
        cdf_band(est, -1.0)


def test_pava_examples():
    np.testing.assert_allclose(isotonic_project([0.2, 0.5, 0.4, 0.9]), [0.2, 0.45, 0.45, 0.9])
    mono = np.array([0.1, 0.3, 0.3, 0.8])
    np.testing.assert_array_equal(isotonic_project(mono), mono)
    np.testing.assert_allclose(isotonic_project([1.3, -0.2]), [0.55, 0.55])
    np.testing.assert_allclose(isotonic_project([1.4, 1.2, -0.5]), [0.7, 0.7, 0.7])
    with pytest.raises(InputError):
        pava([1.0, 2.0], [1.0, 0.0])


def test_pava_matches_qp_oracle(rng):
    for _ in range(200):
        k = int(rng.integers(1, 9))
        v = rng.uniform(-0.3, 1.3, k)
        w = rng.uniform(0.2, 3.0, k)
        np.testing.assert_allclose(isotonic_project(v, w), isotonic_qp_oracle(v, w, 0.0, 1.0), atol=1e-10)
        unclipped = pava(v, w)
        assert np.all(np.diff(unclipped) >= -1e-15)
        assert w @ unclipped == pytest.approx(w @ v, rel=1e-12, abs=1e-12)


def test_pava_nonexpansive(rng):
    for _ in range(100):
        v = rng.uniform(-0.2, 1.2, 10)
        target = np.sort(rng.uniform(0, 1, 10))
        ok, _, _ = nonexpansive(v, isotonic_project(v), target)
        assert ok


def test_envelope_examples(rng):
    env = monotone_envelope(band([0, 1, 2], [0.1, 0.2, 0.3], [0.5, 0.4, 0.9]))
    np.testing.assert_allclose(env.upper[0], [0.5, 0.5, 0.9])
    assert env.envelope
    mono = band([0, 1, 2], [0.1, 0.2, 0.3], [0.2, 0.4, 0.9])
    np.testing.assert_array_equal(monotone_envelope(mono).upper, mono.upper)
    for _ in range(200):
        lo = rng.uniform(0, 1, 12)
        up = lo + rng.uniform(0, 0.3, 12)
        e = monotone_envelope(band(np.arange(12), lo, up))
        assert np.all(e.lower <= e.upper)


def test_inversion_examples():
    qb = invert_band(band([0, 1, 2], [0.1, 0.4, 0.8], [0.2, 0.6, 0.9]), [0.5])
    assert qb.lower[0, 0] == 1 and qb.upper[0, 0] == 2
    empty = invert_band(band([0, 1, 2], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]), [0.3])
    assert empty.upper[0, 0] == 2.0
    assert first_crossing([0, 1], [0.1, 0.2], [0.9], empty=99.0)[0] == 99.0


def test_qte_cross_differencing():
    lo = np.array([[0.1, 0.5, 0.9], [0.0, 0.3, 0.7]])
    up = np.array([[0.3, 0.7, 1.0], [0.2, 0.6, 1.0]])
    qb = invert_band(band([0.0, 1.0, 2.0], lo, up), [0.5])
    np.testing.assert_allclose(qb.qte_lower, qb.lower[1] - qb.upper[0])
    np.testing.assert_allclose(qb.qte_upper, qb.upper[1] - qb.lower[0])
    assert np.all(qb.qte_lower <= qb.qte_upper)


def test_pointwise_interval():
    infl = np.zeros((50, 2))
    est = estimate_from([0.0, 1.0], [[0.4, 0.6], [0.3, 0.7]], (infl, infl))
    assert pointwise_interval(est, 0, 1) == (0.6, 0.6)
    col = np.tile([1.0, -1.0], 25)
    est = estimate_from([0.0], [[0.5], [0.5]], (col[:, None], col[:, None]))
    lo, hi = pointwise_interval(est, 1, 0, alpha=0.05)
    assert hi - lo == pytest.approx(2 * norm.ppf(0.975) / np.sqrt(50))


def test_kernel_density_normal():
    grid = np.linspace(-6, 6, 4001)
    f = cdf_kernel_density(grid, norm.cdf(grid), [0.0], 0.2)[0]
    assert abs(f / norm.pdf(0) - 1) < 0.05
    sym = cdf_kernel_density(grid, norm.cdf(grid), [-0.7, 0.7], 0.3)
    assert abs(sym[0] - sym[1]) <= 1e-10


def test_silverman_bandwidth(rng):
    x = rng.standard_normal(1000)
    assert silverman_bandwidth(x) == pytest.approx(
        1.06 * min(x.std(ddof=1), np.subtract(*np.quantile(x, [0.75, 0.25])) / 1.34) * 1000 ** -0.2)


def test_delta_band_and_floor(rng):
    grid = np.linspace(-4, 4, 801)
    cdf = np.vstack([norm.cdf(grid), norm.cdf(grid - 0.5)])
    n = 400
    infl = (0.5 * rng.standard_normal((n, grid.size)),) * 2
    est = estimate_from(grid, cdf, infl)
    out = estimated_density_delta_band(est, [0.25, 0.5, 0.75], bandwidth=0.2)
    np.testing.assert_allclose(out.qte, 0.5, atol=0.02)
    assert np.all(out.lower < out.qte) and np.all(out.qte < out.upper)
    assert not out.floored.any()
    step = np.vstack([(grid >= 0).astype(float)] * 2)
    with pytest.warns(RuntimeWarning, match="floor"):
        flat = estimated_density_delta_band(estimate_from(grid, step, infl), [0.5],
                                            bandwidth=2e-4)
    assert flat.floored.all() and flat.upper[0] == 8.0
    with pytest.raises(InputError):
        estimated_density_delta_band(est, [0.5])


def test_inversion_contains_point_quantile(rng):
    for _ in range(100):
        grid = np.sort(rng.uniform(0, 10, 15))
        F = np.sort(rng.uniform(0, 1, 15))
        half = rng.uniform(0, 0.2)
        b = band(grid, np.maximum(F - half, 0), np.minimum(F + half, 1))
        taus = rng.uniform(0.01, 0.99, 20)
        qb = invert_band(b, taus)
        q = first_crossing(grid, F, taus)
        assert np.all(qb.lower[0] <= q) and np.all(q <= qb.upper[0])
