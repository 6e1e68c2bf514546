"""End-to-end acceptance checks, one per laboratory capability.

Each test states its numeric targets inline and asserts its own wall-clock
budget, so a verbose run reads as a pass/fail line per criterion.
"""

import itertools
import math
import time

import numpy as np

from randmaps import cocycles, exponents, kingman, koopman, limits, rng, spaces, sweeps
from randmaps import systems
from randmaps.spaces import Circle, Interval, Projective
from randmaps.systems import RandomMapSystem, affine_interval, circle_wave

GOLDEN = (3.0 + math.sqrt(5.0)) / 2.0


def halves():
    space = Interval(0.0, 1.0)
    return RandomMapSystem(
        space, (affine_interval(0.5, 0.0), affine_interval(0.5, 0.5))
    )


def rotations():
    return RandomMapSystem(
        Circle(), (circle_wave(0.30902, 0.0), circle_wave(0.41421, 0.0))
    )


def two_attractor():
    return RandomMapSystem(
        Circle(), (circle_wave(0.0, -0.5, 2), circle_wave(0.0, -0.8, 2))
    )


def rotation_matrix(t):
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def hyperbolic_rotation_pair():
    return cocycles.Cocycle((np.diag([2.0, 0.5]), rotation_matrix(1.0)))


def golden_cocycle():
    return cocycles.Cocycle(
        (np.array([[2.0, 1.0], [1.0, 1.0]]),), np.array([1.0])
    )


def grid_log_derivative_mean(system, cells):
    """Stationary average of the weighted log derivative on a fine grid."""
    grid = koopman.make_grid(system.space, cells)
    report = koopman.stationary_report(koopman.discretize(system, grid), 1e-10)
    assert len(report.classes) == 1
    centers = grid.centers_array()
    logs = np.zeros(cells)
    for w, fm in zip(system.weights, system.maps):
        logs += w * np.log([fm.derivative_norm(c) for c in centers])
    return float(report.measures[0] @ logs)


def test_criterion_01_dyadic_halves():
    start = time.perf_counter()
    system = halves()
    cert = exponents.mostly_contracting_certificate(system, 0.05, 1, 64, 0.5, 11)
    assert cert.passed
    assert cert.worst_estimate == -math.log(2.0)
    assert cert.worst_stderr == 0.0
    fit = exponents.exponential_contraction_fit(system, 0.3, 0.05, 40, 32, 5)
    assert 0.48 <= fit.q_hat <= 0.52
    grid = koopman.make_grid(system.space, 64)
    report = koopman.stationary_report(koopman.discretize(system, grid), 1e-10)
    assert len(report.classes) == 1
    assert np.abs(report.measures[0] - 1.0 / 64.0).max() <= 1e-6
    law = koopman.law_convergence_test(system, 0.0, grid, [10], 4096, 5)
    assert law.distances[0] <= 2.0**-10 + 1.0 / 64.0
    assert time.perf_counter() - start < 5.0


def test_criterion_02_rotations_null():
    start = time.perf_counter()
    system = rotations()
    cert = exponents.mostly_contracting_certificate(system, 0.1, 5, 32, 0.0, 11)
    assert not cert.passed
    assert all(abs(v) <= 1e-12 for v in cert.estimates)
    assert exponents.synchronization_test(system, 0.2, 30, 64, 1e-6, 5) == 0.0
    two = cocycles.Cocycle((rotation_matrix(1.0), rotation_matrix(0.3)))
    est = cocycles.lyapunov_spectrum(two, 50, 4, 0)
    assert abs(est.exponents[0]) <= 1e-12
    assert abs(est.exponents[1]) <= 1e-12
    assert time.perf_counter() - start < 5.0


def test_criterion_03_constant_golden_matrix():
    start = time.perf_counter()
    cocycle = golden_cocycle()
    target = math.log(GOLDEN)
    lp = cocycles.log_product(cocycle, [0] * 1000)
    assert abs(lp.log_scale / 1000.0 - target) <= 1e-3
    fur = cocycles.furstenberg_estimate(cocycle, 200, 5000, 3)
    assert abs(fur.value - target) <= 1e-3
    assert time.perf_counter() - start < 5.0


def test_criterion_04_sl2_pair_estimator_agreement():
    start = time.perf_counter()
    pair = hyperbolic_rotation_pair()
    spectrum = cocycles.lyapunov_spectrum(pair, 2000, 8, 7)
    fur = cocycles.furstenberg_estimate(pair, 500, 20000, 11)
    ulam_value, ulam_gap = koopman.ulam_top_exponent(pair, 512)
    estimates = [
        (spectrum.exponents[0], spectrum.stderrs[0]),
        (fur.value, fur.stderr),
        (ulam_value, ulam_gap),
    ]
    for (va, sa), (vb, sb) in itertools.combinations(estimates, 2):
        assert abs(va - vb) <= 3.0 * math.hypot(sa, sb)
    cert = exponents.mostly_contracting_certificate(
        cocycles.projective_system(pair), 0.3, 30, 200, 0.1, 11
    )
    assert cert.passed
    assert time.perf_counter() - start < 60.0


def test_criterion_05_two_attractor_circle_family():
    start = time.perf_counter()
    system = two_attractor()
    grid = koopman.make_grid(Circle(), 128)
    report = koopman.stationary_report(koopman.discretize(system, grid), 1e-10)
    # the two attracting cells plus the two single-cell repeller classes
    assert len(report.classes) == 4
    assert {cls[0] for cls in report.classes} == {0, 32, 64, 96}
    r = exponents.annealed_exponent_at(system, 0.0, 2048, 1024, 5)
    assert abs(r.estimate - 0.5 * (math.log(0.5) + math.log(0.2))) <= 1e-3
    basins = koopman.empirical_basins(system, grid, 60, 20, 3, report=report)
    assert basins.unattributed.mean() <= 2.0 / 128.0
    assert time.perf_counter() - start < 30.0


def test_criterion_06_kingman_builtin_chains():
    start = time.perf_counter()
    for name in ("identity", "uniform", "absorbing"):
        P, phi1 = kingman.builtin_chain(name)
        seq = kingman.build_additive(P, phi1, 2048)
        report = kingman.verify_uniform_kingman(P, seq, 64)
        assert report.tolerance == 10.0 / 2048.0
        assert report.spread <= report.tolerance
        assert report.agree
        assert report.additive
        assert report.additive_identity_gap == 0.0
    assert time.perf_counter() - start < 10.0


def test_criterion_07_central_limit_normality():
    start = time.perf_counter()
    pair = hyperbolic_rotation_pair()
    x0 = np.array([1.0, 0.0])
    lam, gap = koopman.ulam_top_exponent(pair, 512)
    samples = limits.collect_sn(pair, x0, [1000], 10000, (lam, gap), 11)
    report = limits.clt_test(samples)
    assert not report.degenerate[0]
    assert report.ks[0] < 0.05

    family = RandomMapSystem(
        Circle(), (circle_wave(0.61803, 0.0), circle_wave(0.0, -0.5))
    )
    lam_f = grid_log_derivative_mean(family, 2048)
    gap_f = abs(lam_f - grid_log_derivative_mean(family, 1024))
    samples = limits.collect_sn(family, 0.2, [1000], 10000, (lam_f, gap_f), 12)
    report = limits.clt_test(samples)
    assert not report.degenerate[0]
    assert report.ks[0] < 0.05

    single = cocycles.Cocycle((np.diag([2.0, 0.5]),), np.array([1.0]))
    det = limits.collect_sn(single, x0, [1000], 1000, math.log(2.0), 0)
    report = limits.clt_test(det)
    assert report.degenerate == (True,)
    assert report.sigma2 == (0.0,)
    assert math.isnan(report.ks[0])
    assert time.perf_counter() - start < 120.0


def test_criterion_08_berry_esseen_rate():
    start = time.perf_counter()
    pair = hyperbolic_rotation_pair()
    lam, gap = koopman.ulam_top_exponent(pair, 512)
    samples = limits.collect_sn(
        pair, np.array([1.0, 0.0]), [100, 400, 1600], 100000, (lam, gap), 13
    )
    fit = limits.berry_esseen_fit(samples)
    assert -0.8 <= fit.slope <= -0.3
    synthetic = limits.synthetic_iid_sums([100, 400, 1600], 100000, 3)
    sfit = limits.berry_esseen_fit(synthetic)
    assert abs(sfit.slope - (-0.5)) <= 0.15
    assert time.perf_counter() - start < 600.0


def test_criterion_09_large_deviation_tail_decay():
    start = time.perf_counter()
    pair = hyperbolic_rotation_pair()
    x0 = np.array([1.0, 0.0])
    lam, gap = koopman.ulam_top_exponent(pair, 512)
    fit = limits.large_deviation_fit(
        pair, x0, [0.1], [25, 50, 100, 150], 10000, (lam, gap), 13
    )
    (row,) = fit.p_hat
    assert len(row) >= 3
    assert (row > 0.0).all()
    assert (np.diff(np.log(row)) < 0.0).all()
    assert fit.h_hat[0] > 3.0 * fit.h_stderr[0]

    rot = cocycles.Cocycle((rotation_matrix(1.0),), np.array([1.0]))
    null = limits.large_deviation_fit(rot, x0, [0.1], [25, 50, 100], 1000, 0.0, 13)
    assert (null.p_hat == 0.0).all()
    assert time.perf_counter() - start < 120.0


def test_criterion_10_continuity_sweeps():
    start = time.perf_counter()
    res = sweeps.lambda1_sweep(
        golden_cocycle(),
        [np.eye(2)],
        (0.0, 0.001, 0.00316, 0.01, 0.0316, 0.1),
        burn_in=200,
        samples=5000,
        seed=7,
    )
    for t, v, se in zip(res.t_list, res.estimates, res.stderrs):
        # shifting a matrix by tI shifts every eigenvalue by t
        assert abs(v - math.log(GOLDEN + t)) <= 3.0 * se + 1e-12
    assert res.fit is not None
    assert 0.8 <= res.fit.gamma_hat <= 1.2

    def attractor_path(t):
        return RandomMapSystem(
            Circle(), (circle_wave(0.0, -(0.5 + t), 2), circle_wave(0.0, -0.8, 2))
        )

    res = sweeps.circle_exponent_sweep(
        attractor_path(0.0),
        attractor_path,
        (0.0, 0.01, 0.02, 0.03, 0.04, 0.05),
        x0=0.0,
        burn_in=100,
        samples=2000,
        seed=11,
    )
    for t, v in zip(res.t_list, res.estimates):
        assert abs(v - 0.5 * (math.log(0.5 - t) + math.log(0.2))) <= 1e-3

    def halves_path(t):
        a = 0.5 + t
        return RandomMapSystem(
            Interval(0.0, 1.0), (affine_interval(a, 0.0), affine_interval(a, 1.0 - a))
        )

    grid = koopman.make_grid(Interval(0.0, 1.0), 128)
    res = sweeps.stationary_stability_sweep(
        halves_path(0.0), halves_path, (-0.05, -0.025, 0.0, 0.025, 0.05), grid, seed=0
    )
    assert res.multiplicities == (1, 1, 1, 1, 1)
    for t, w1 in zip(res.t_list, res.estimates):
        if t == 0.0:
            assert w1 == 0.0
        assert 0.0 <= w1 <= grid.width + 5.0 * abs(t)
    assert time.perf_counter() - start < 60.0


def test_criterion_11_structural_invariants():
    start = time.perf_counter()
    gen = rng.stream(1, rng.AUDIT, 0)

    # metric axioms on all three point spaces; the projective sine formula
    # turns the one-ulp slack of unit normalization into a sqrt(eps) floor
    # on self-distance, so that space gets the wider identity tolerance
    for space in (Interval(0.0, 1.0), Circle(), Projective(2)):
        self_tol = 1e-7 if isinstance(space, Projective) else 1e-12
        pts = list(space.random_points(gen, 10))
        for p in pts:
            assert spaces.distance(space, p, p) <= self_tol
        for p, q in itertools.combinations(pts, 2):
            d = spaces.distance(space, p, q)
            assert d > 0.0
            assert abs(d - spaces.distance(space, q, p)) <= 1e-12
        for p, q, r in itertools.permutations(pts[:5], 3):
            assert spaces.distance(space, p, q) <= (
                spaces.distance(space, p, r) + spaces.distance(space, r, q) + 1e-12
            )

    # chain rule: the Lipschitz factor along a split word multiplies
    waves = RandomMapSystem(
        Circle(), (circle_wave(0.17, 0.6, 1), circle_wave(0.52, -0.4, 3))
    )
    word = systems.sample_word(waves, 14, 41, 0)
    x = 0.37
    full = systems.local_lipschitz_along(waves, word, x)
    head, tail = word.symbols[:7], word.symbols[7:]
    mid = systems.iterate(waves, head, x)[-1]
    prod = systems.local_lipschitz_along(
        waves, head, x
    ) * systems.local_lipschitz_along(waves, tail, mid)
    assert full <= prod * (1.0 + 1e-9)

    # discretized operators are row-stochastic
    for system, cells in ((halves(), 64), (two_attractor(), 96)):
        grid = koopman.make_grid(system.space, cells)
        Q = koopman.discretize(system, grid)
        assert (Q.matrix >= 0.0).all()
        np.testing.assert_allclose(Q.matrix.sum(axis=1), 1.0, atol=1e-12)

    # Fekete subadditivity of the norm sequence and its ratio limit
    A = np.array([[2.0, 1.0], [1.0, 1.0]])
    P = np.eye(2)
    norms = []
    for _ in range(40):
        P = A @ P
        norms.append(math.log(np.linalg.norm(P, 2)))
    a = np.array(norms)
    worst = max(
        a[n + m - 1] - a[n - 1] - a[m - 1]
        for n in range(1, 41)
        for m in range(1, 41 - n)
    )
    assert worst <= 1e-9
    assert (a / np.arange(1, 41) >= math.log(GOLDEN) - 1e-12).all()

    # spectrum ordering and the determinant trace identity
    pair = hyperbolic_rotation_pair()
    est = cocycles.lyapunov_spectrum(pair, 400, 12, 9)
    assert est.exponents[0] >= est.exponents[1]
    total_err = 3.0 * (est.stderrs[0] + est.stderrs[1]) + 1e-9
    assert abs(sum(est.exponents) - pair.mean_log_abs_det()) <= total_err

    # the projective action of M is Lipschitz with constant |M|^2 |M^-1|^2,
    # checked against measured two-point ratios
    proj = Projective(2)
    for _ in range(3):
        M = np.eye(2) + 0.5 * gen.standard_normal((2, 2))
        fm = systems.projective_of_matrix(M)
        bound = (np.linalg.norm(M, 2) * np.linalg.norm(np.linalg.inv(M), 2)) ** 2
        assert systems.global_lipschitz(fm) <= bound * (1.0 + 1e-9)
        pts = list(proj.random_points(gen, 12))
        for p, q in itertools.combinations(pts, 2):
            ratio = spaces.distance(proj, fm(p), fm(q)) / spaces.distance(proj, p, q)
            assert ratio <= bound * (1.0 + 1e-9)

    # bitwise reproducibility across repeat runs and worker counts
    ta = two_attractor()
    c1 = exponents.mostly_contracting_certificate(ta, 0.2, 10, 32, 0.0, 7, workers=1)
    c4 = exponents.mostly_contracting_certificate(ta, 0.2, 10, 32, 0.0, 7, workers=4)
    assert c1.estimates == c4.estimates
    assert c1.stderrs == c4.stderrs
    other = exponents.mostly_contracting_certificate(ta, 0.2, 10, 32, 0.0, 8, workers=1)
    assert other.estimates != c1.estimates
    sa = limits.collect_sn(pair, np.array([1.0, 0.0]), [40], 1000, 0.18, 9)
    sb = limits.collect_sn(pair, np.array([1.0, 0.0]), [40], 1000, 0.18, 9)
    np.testing.assert_array_equal(sa.z[0], sb.z[0])
    assert time.perf_counter() - start < 60.0
