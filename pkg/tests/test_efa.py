import warnings

import numpy as np
import pytest

from raterpsy.efa import (
    HeywoodWarning,
    LoadingMatrix,
    congruence,
    extract_factors,
    loading_report,
    match_factors,
    offdiag_residual_ss,
    parallel_analysis,
    promax,
    rotate,
    varimax,
)
from raterpsy.psychometrics import ArityError, eigenvalues, variance_percent


def population_corr(lam, phi=None):
    lam = np.asarray(lam, dtype=float)
    phi = np.eye(lam.shape[1]) if phi is None else np.asarray(phi)
    common = lam @ phi @ lam.T
    r = common.copy()
    np.fill_diagonal(r, 1.0)
    return r


def two_block(phi=0.0):
    lam = np.zeros((8, 2))
    lam[:4, 0] = [0.8, 0.7, 0.6, 0.7]
    lam[4:, 1] = [0.6, 0.7, 0.8, 0.5]
    return lam, np.array([[1.0, phi], [phi, 1.0]])


def sample(lam, phi, n, seed):
    rng = np.random.default_rng(seed)
    r = population_corr(lam, phi)
    return rng.multivariate_normal(np.zeros(len(r)), r, size=n, method="cholesky")


# -- parallel analysis ------------------------------------------------------------


def test_parallel_analysis_pure_noise_retains_zero():
    # The 0.95 quantile makes the null false-retention rate 5% by construction,
    # so the zero-retained share is checked against 0.95 within binomial error.
    runs = 300
    hits = 0
    for run in range(runs):
        x = np.random.default_rng(1000 + run).normal(size=(1000, 10))
        hits += parallel_analysis(x, replications=100, seed=run).n_retained == 0
    se = np.sqrt(0.05 * 0.95 / runs)
    assert hits / runs >= 0.95 - 2.5 * se


def test_parallel_analysis_one_factor():
    lam = np.full((6, 1), 0.8)
    for seed in range(5):
        res = parallel_analysis(sample(lam, None, 500, seed), replications=100, seed=seed)
        assert res.n_retained == 1


def test_parallel_analysis_contract():
    x = np.random.default_rng(0).normal(size=(200, 5))
    with pytest.raises(ValueError):
        parallel_analysis(x, replications=50)
    with pytest.raises(ArityError):
        parallel_analysis(x[:, :1])
    a = parallel_analysis(x, seed=7)
    b = parallel_analysis(x, seed=7, threads=4)
    assert np.array_equal(a.threshold_eigenvalues, b.threshold_eigenvalues)
    assert np.array_equal(a.mean_eigenvalues, b.mean_eigenvalues)
    assert np.all(np.diff(a.threshold_eigenvalues) <= 0)
    assert 0 <= a.n_retained <= 5
    assert a.replications == 100 and a.quantile == 0.95


def test_parallel_analysis_retained_is_prefix():
    lam, phi = two_block(0.3)
    res = parallel_analysis(sample(lam, phi, 400, 2), seed=1)
    above = res.observed_eigenvalues > res.threshold_eigenvalues
    assert res.n_retained == (np.argmin(above) if not above.all() else len(above))


# -- extraction -------------------------------------------------------------------


def test_extract_identity_gives_zero_loadings():
    lm = extract_factors(np.eye(5), 1)
    assert np.max(np.abs(lm.pattern)) < 1e-6


def test_extract_compound_symmetry_closed_form():
    r = np.full((6, 6), 0.49)
    np.fill_diagonal(r, 1.0)
    lm = extract_factors(r, 1)
    np.testing.assert_allclose(lm.pattern[:, 0], 0.7, atol=1e-6)
    np.testing.assert_allclose(lm.uniqueness, 0.51, atol=1e-6)


def test_extract_two_blocks_up_to_rotation():
    lam, phi = two_block(0.0)
    lm = rotate(extract_factors(population_corr(lam, phi), 2), "varimax")
    assert min(match_factors(lm.pattern, lam)) > 0.99


def test_extract_arity_error():
    with pytest.raises(ArityError):
        extract_factors(np.eye(3), 3)
    with pytest.raises(ArityError):
        extract_factors(np.eye(3), 0)


def test_extract_heywood_is_clamped_with_warning():
    r = np.array([[1.0, 0.95, 0.3], [0.95, 1.0, 0.3], [0.3, 0.3, 1.0]])
    r[0, 1] = r[1, 0] = 0.99
    r[0, 2] = r[2, 0] = 0.9
    r[1, 2] = r[2, 1] = 0.6
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        lm = extract_factors(r, 1)
    assert np.all(lm.communalities <= 1 + 1e-12)
    assert np.all(lm.uniqueness >= -1e-12)
    assert any(issubclass(w.category, HeywoodWarning) for w in caught)


def test_reconstruction_and_residual_monotone_in_k():
    lam = np.zeros((9, 3))
    lam[:3, 0] = 0.7
    lam[3:6, 1] = 0.6
    lam[6:, 2] = 0.65
    x = sample(lam, np.eye(3), 600, 4)
    r = np.corrcoef(x, rowvar=False)
    prev = np.inf
    for k in range(1, 5):
        lm = extract_factors(r, k)
        ss = offdiag_residual_ss(r, lm.pattern)
        assert ss <= prev + 1e-10
        prev = ss
        rot = rotate(lm, "promax") if k > 1 else lm
        np.testing.assert_allclose(rot.implied_correlation(), lm.pattern @ lm.pattern.T + np.diag(lm.uniqueness), atol=1e-8)


# -- rotation -----------------------------------------------------------------------


def test_rotation_k1_identity():
    lm = extract_factors(population_corr(np.full((4, 1), 0.6)), 1)
    for method in ["varimax", "promax"]:
        out = rotate(lm, method)
        np.testing.assert_allclose(out.pattern, lm.pattern)
        np.testing.assert_allclose(out.factor_correlations, [[1.0]])


def test_simple_structure_is_fixed_point():
    lam, _ = two_block()
    rot, _ = varimax(lam)
    assert min(match_factors(rot, lam)) > 1 - 1e-8
    pat, phi = promax(lam)
    assert min(match_factors(pat, lam)) > 1 - 1e-6
    assert abs(phi[0, 1]) < 1e-6


def test_varimax_preserves_communalities():
    rng = np.random.default_rng(3)
    for _ in range(20):
        lam = rng.uniform(-0.6, 0.6, size=(10, 3))
        rot, t = varimax(lam)
        np.testing.assert_allclose((rot**2).sum(1), (lam**2).sum(1), atol=1e-8)
        np.testing.assert_allclose(t.T @ t, np.eye(3), atol=1e-10)


def test_promax_factor_correlation_recovered():
    lam, phi = two_block(0.4)
    x = sample(lam, phi, 5000, 8)
    lm = rotate(extract_factors(np.corrcoef(x, rowvar=False), 2), "promax")
    assert abs(lm.factor_correlations[0, 1] - 0.4) <= 0.1
    assert np.allclose(np.diag(lm.factor_correlations), 1.0)
    np.testing.assert_allclose(lm.factor_correlations, lm.factor_correlations.T)
    assert min(match_factors(lm.pattern, lam)) > 0.95


def test_rotation_reproducible():
    lam, phi = two_block(0.3)
    x = sample(lam, phi, 800, 9)
    r = np.corrcoef(x, rowvar=False)
    a = rotate(extract_factors(r, 2), "promax")
    b = rotate(extract_factors(r, 2), "promax")
    np.testing.assert_array_equal(a.pattern, b.pattern)


def test_variance_percent_full_spectrum_sums_to_100():
    lam, phi = two_block(0.3)
    r = np.corrcoef(sample(lam, phi, 300, 1), rowvar=False)
    assert sum(variance_percent(eigenvalues(r), r.shape[0])) == pytest.approx(100.0, abs=1e-9)


def test_congruence_basics():
    a = np.array([0.7, 0.6, 0.0])
    assert congruence(a, 2 * a) == pytest.approx(1.0)
    assert congruence(a, -a) == pytest.approx(-1.0)
    assert match_factors(np.column_stack([-a, a[::-1]]), np.column_stack([a[::-1], a])) == pytest.approx([1.0, 1.0])


# -- report --------------------------------------------------------------------------


def _lm(pattern):
    pattern = np.asarray(pattern, dtype=float)
    k = pattern.shape[1]
    ss = (pattern**2).sum(0)
    return LoadingMatrix(
        pattern=pattern,
        factor_correlations=np.eye(k),
        eigenvalue_per_factor=ss,
        variance_pct_per_factor=100 * ss / pattern.shape[0],
        uniqueness=1 - (pattern**2).sum(1),
        columns=tuple(f"i{j + 1}" for j in range(pattern.shape[0])),
    )


def test_loading_report_suppression():
    lm = _lm([[0.101, 0.05], [-0.105, 0.6]])
    text = loading_report(lm, 0.10, constructs=["A", "B"])
    lines = text.splitlines()
    assert lines[0] == "Items\t1\t2\tDimension"
    assert lines[1] == "i1\t0.101\t\tA"
    assert lines[2] == "i2\t-0.105\t0.600\tB"
    assert lines[3].startswith("Eigenvalue\t")
    assert lines[4].startswith("% variance\t")
    full = loading_report(lm, 0.0).splitlines()
    assert full[1].split("\t")[2] == "0.050"
