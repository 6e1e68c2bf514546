"""Subadditive-sequence harness: exact growth rates on finite chains."""

import numpy as np
import pytest

from randmaps import kingman
from randmaps.errors import NotInvariantMeasure, SubadditivityViolated


def skew_chain():
    # stationary vector (0.75, 0.25), so the additive rate from (1, -1)
    # is 0.75 - 0.25 = 0.5
    return np.array([[0.9, 0.1], [0.3, 0.7]])


def eigenvalue_one_multiplicity(P, tol=1e-8):
    s = np.linalg.svd(P.T - np.eye(P.shape[0]), compute_uv=False)
    return int((s < tol).sum())


def test_build_additive_identity_chain():
    seq = kingman.build_additive(np.eye(2), np.array([1.0, -1.0]), 3)
    np.testing.assert_array_equal(seq.term(2), [2.0, -2.0])
    np.testing.assert_array_equal(seq.term(3), [3.0, -3.0])


def test_build_additive_uniform_chain_stalls():
    P, phi1 = kingman.builtin_chain("uniform")
    seq = kingman.build_additive(P, phi1, 8)
    # P phi1 vanishes, so every term repeats the first
    np.testing.assert_array_equal(seq.phi, np.tile(phi1, (8, 1)))


def test_build_additive_cycle_completes():
    P = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    seq = kingman.build_additive(P, np.array([1.0, 0.0, 0.0]), 3)
    np.testing.assert_array_equal(seq.term(3), np.ones(3))


def test_build_additive_absorbing_closed_form():
    # state 0 feeds the two absorbing states evenly, so the exact terms
    # are (0.5(n-1), 2n, -n)
    P, phi1 = kingman.builtin_chain("absorbing")
    seq = kingman.build_additive(P, phi1, 12)
    n = np.arange(1, 13)
    expected = np.stack([0.5 * (n - 1), 2.0 * n, -1.0 * n], axis=1)
    np.testing.assert_array_equal(seq.phi, expected)


def test_check_subadditivity_additive_is_equality():
    for name in kingman.BUILTIN_CHAINS:
        P, phi1 = kingman.builtin_chain(name)
        seq = kingman.build_additive(P, phi1, 32)
        check = kingman.check_subadditivity(P, seq)
        assert check.ok
        assert check.residual == 0.0
        assert check.max_deviation == 0.0
    generic = kingman.build_additive(skew_chain(), np.array([1.0, -1.0]), 64)
    check = kingman.check_subadditivity(skew_chain(), generic)
    assert check.ok
    assert check.max_deviation <= 1e-12


def test_check_subadditivity_sqrt_sequence():
    n = np.arange(1, 65)
    seq = kingman.SubadditiveSequence(np.sqrt(n)[:, None] * np.ones((1, 2)))
    check = kingman.check_subadditivity(skew_chain(), seq)
    assert check.ok
    assert check.residual <= 0.0


def test_check_subadditivity_reports_violation_site():
    seq = kingman.build_additive(np.eye(2), np.array([1.0, -1.0]), 4)
    phi = seq.phi.copy()
    phi[1] += 1.0
    check = kingman.check_subadditivity(np.eye(2), phi)
    assert not check.ok
    assert (check.n, check.m) == (1, 1)
    assert check.residual == pytest.approx(1.0)


def test_recurrent_classes_absorbing():
    P, _ = kingman.builtin_chain("absorbing")
    classes, measures = kingman.recurrent_classes(P)
    assert classes == ((1,), (2,))
    np.testing.assert_array_equal(measures[0], [0.0, 1.0, 0.0])
    np.testing.assert_array_equal(measures[1], [0.0, 0.0, 1.0])


def test_recurrent_classes_uniform_exact_halves():
    P, _ = kingman.builtin_chain("uniform")
    classes, measures = kingman.recurrent_classes(P)
    assert classes == ((0, 1),)
    np.testing.assert_array_equal(measures[0], [0.5, 0.5])


def test_recurrent_classes_skew_and_transient():
    classes, measures = kingman.recurrent_classes(skew_chain())
    assert classes == ((0, 1),)
    np.testing.assert_allclose(measures[0], [0.75, 0.25], atol=1e-12)
    lopsided = np.array([[0.5, 0.25, 0.25], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    classes, measures = kingman.recurrent_classes(lopsided)
    assert classes == ((1,), (2,))
    residual = np.abs(measures[0] @ lopsided - measures[0]).max()
    assert residual == 0.0


def test_class_count_matches_rank_oracle():
    cases = [
        np.eye(2),
        kingman.builtin_chain("uniform")[0],
        kingman.builtin_chain("absorbing")[0],
        skew_chain(),
    ]
    for P in cases:
        classes, _ = kingman.recurrent_classes(P)
        assert len(classes) == eigenvalue_one_multiplicity(P)


def test_uniform_limits_identity_chain():
    P, phi1 = kingman.builtin_chain("identity")
    seq = kingman.build_additive(P, phi1, 64)
    report = kingman.verify_uniform_kingman(P, seq, 16)
    assert report.via_max_limit == 1.0
    assert report.via_ergodic_max == 1.0
    assert report.via_pointwise_sup == 1.0
    assert report.via_inf_formula == 1.0
    assert report.spread == 0.0
    assert report.agree
    assert report.agreement == (True, True, True)
    assert report.ergodic_values == (1.0, -1.0)
    assert report.additive
    assert report.additive_identity_gap == 0.0


def test_uniform_limits_mixing_chain():
    P, phi1 = kingman.builtin_chain("uniform")
    seq = kingman.build_additive(P, phi1, 2048)
    report = kingman.verify_uniform_kingman(P, seq, 64)
    assert report.via_ergodic_max == 0.0
    assert report.additive_identity_gap == 0.0
    assert abs(report.via_max_limit) <= report.tolerance
    assert report.spread <= report.tolerance
    assert report.agree


def test_uniform_limits_absorbing_chain():
    # hand computation: the max row grows as 2n exactly, the transient row
    # as 0.5(n-1), so every route returns 2
    P, phi1 = kingman.builtin_chain("absorbing")
    seq = kingman.build_additive(P, phi1, 64)
    report = kingman.verify_uniform_kingman(P, seq, 16)
    assert report.via_max_limit == 2.0
    assert report.via_ergodic_max == 2.0
    assert report.via_pointwise_sup == 2.0
    assert report.via_inf_formula == 2.0
    assert report.ergodic_values == (2.0, -1.0)
    assert report.additive_identity_gap == 0.0
    assert not report.floor_hit


def test_uniform_limits_skew_chain():
    P = skew_chain()
    seq = kingman.build_additive(P, np.array([1.0, -1.0]), 256)
    report = kingman.verify_uniform_kingman(P, seq, 32)
    assert report.via_ergodic_max == pytest.approx(0.5, abs=1e-12)
    assert report.spread <= report.tolerance
    assert report.additive
    assert report.additive_identity_gap <= 1e-12


def test_uniform_limits_nonadditive_sequence():
    n = np.arange(1, 129)
    seq = kingman.SubadditiveSequence(np.sqrt(n)[:, None] * np.ones((1, 2)))
    report = kingman.verify_uniform_kingman(skew_chain(), seq, 16)
    assert not report.additive
    assert report.additive_identity_gap is None
    assert report.via_ergodic_max == pytest.approx(1.0 / np.sqrt(128), abs=1e-12)
    assert report.spread <= report.tolerance


def test_uniform_limits_rejects_violations():
    seq = kingman.build_additive(np.eye(2), np.array([1.0, -1.0]), 4)
    phi = seq.phi.copy()
    phi[1] += 1.0
    with pytest.raises(SubadditivityViolated) as info:
        kingman.verify_uniform_kingman(np.eye(2), phi, 2)
    assert (info.value.n, info.value.m) == (1, 1)
    assert info.value.gap == pytest.approx(1.0)


def test_fekete_max_curve():
    # the max curve of a P-subadditive sequence is subadditive as a plain
    # real sequence, and its running ratio approaches the infimum at 1/n
    # speed with the early terms as the constant
    P = skew_chain()
    seq = kingman.build_additive(P, np.array([1.0, -1.0]), 256)
    a = seq.phi.max(axis=1)
    worst = max(
        a[n + m - 1] - a[n - 1] - a[m - 1]
        for n in range(1, 256)
        for m in range(1, 257 - n)
    )
    assert worst <= 1e-12
    b = a / np.arange(1, 257)
    assert ((b - b.min()) * np.arange(1, 257) <= 2.0).all()


def test_pointwise_identity_chain():
    P, phi1 = kingman.builtin_chain("identity")
    seq = kingman.build_additive(P, phi1, 64)
    report = kingman.verify_pointwise_kingman(P, seq, np.array([1.0, 0.0]))
    np.testing.assert_array_equal(report.g_hat, [1.0, -1.0])
    assert report.lambda_mu == 1.0
    assert report.mean_gap == 0.0
    assert report.ergodic
    assert report.constancy_gap == 0.0
    assert report.constancy_ok


def test_pointwise_mixing_chain():
    P, phi1 = kingman.builtin_chain("uniform")
    N = 64
    seq = kingman.build_additive(P, phi1, N)
    report = kingman.verify_pointwise_kingman(P, seq, np.array([0.5, 0.5]))
    np.testing.assert_array_equal(report.g_hat, [1.0 / N, -1.0 / N])
    assert report.mean_ok
    assert report.ergodic
    assert report.constancy_gap == pytest.approx(2.0 / N)
    assert report.constancy_ok


def test_pointwise_sqrt_sequence():
    n = np.arange(1, 101)
    seq = kingman.SubadditiveSequence(np.sqrt(n)[:, None] * np.ones((1, 2)))
    report = kingman.verify_pointwise_kingman(
        skew_chain(), seq, np.array([0.75, 0.25])
    )
    assert report.lambda_mu == pytest.approx(0.1, abs=1e-12)
    assert report.mean_ok
    assert report.constancy_gap == 0.0


def test_pointwise_mixture_is_not_ergodic():
    P, phi1 = kingman.builtin_chain("absorbing")
    seq = kingman.build_additive(P, phi1, 40)
    mu = np.array([0.0, 0.5, 0.5])
    report = kingman.verify_pointwise_kingman(P, seq, mu)
    assert report.lambda_mu == 0.5
    assert report.mean_gap == 0.0
    assert not report.ergodic
    assert report.constancy_gap is None
    assert report.constancy_ok is None


def test_pointwise_rejects_noninvariant():
    P, phi1 = kingman.builtin_chain("absorbing")
    seq = kingman.build_additive(P, phi1, 8)
    with pytest.raises(NotInvariantMeasure):
        kingman.verify_pointwise_kingman(P, seq, np.array([1.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        kingman.verify_pointwise_kingman(P, seq, np.array([0.0, 0.7, 0.7]))
    with pytest.raises(ValueError):
        kingman.verify_pointwise_kingman(P, seq, np.array([0.0, 1.5, -0.5]))


def test_divergence_floor_flag():
    P = np.array([[1.0]])
    seq = kingman.SubadditiveSequence(np.array([[-2.0e6]]))
    report = kingman.verify_uniform_kingman(P, seq, 1)
    assert report.floor_hit
    pw = kingman.verify_pointwise_kingman(P, seq, np.array([1.0]))
    assert pw.floor_hit


def test_operator_validation():
    with pytest.raises(ValueError):
        kingman.check_subadditivity(np.array([[0.7, 0.2], [0.5, 0.5]]), [[1.0, 1.0]])
    with pytest.raises(ValueError):
        kingman.check_subadditivity(np.array([[1.5, -0.5], [0.0, 1.0]]), [[1.0, 1.0]])
    with pytest.raises(ValueError):
        kingman.check_subadditivity(np.eye(3), [[1.0, 1.0]])
    with pytest.raises(ValueError):
        kingman.build_additive(np.eye(2), np.array([1.0, -1.0]), 0)
    with pytest.raises(ValueError):
        kingman.build_additive(np.eye(2), np.array([1.0, -1.0]), 4097)
    with pytest.raises(ValueError):
        kingman.build_additive(np.eye(2), np.array([1.0]), 4)
    with pytest.raises(ValueError):
        kingman.verify_uniform_kingman(np.eye(2), [[1.0, 1.0]], 2)


def test_sequence_validation():
    with pytest.raises(ValueError):
        kingman.SubadditiveSequence(np.ones(4))
    with pytest.raises(ValueError):
        kingman.SubadditiveSequence(np.ones((2, 513)))
    with pytest.raises(ValueError):
        kingman.SubadditiveSequence(np.array([[np.inf, 0.0]]))
    seq = kingman.SubadditiveSequence(np.ones((3, 2)))
    assert seq.n_terms == 3 and seq.n_states == 2
    with pytest.raises(ValueError):
        seq.term(4)
    with pytest.raises(ValueError):
        kingman.check_subadditivity(np.eye(513), np.ones((1, 513)))


def test_builtin_chain_names():
    for name in kingman.BUILTIN_CHAINS:
        P, phi1 = kingman.builtin_chain(name)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=0.0)
        assert phi1.shape == (P.shape[0],)
    with pytest.raises(ValueError):
        kingman.builtin_chain("lazy")
