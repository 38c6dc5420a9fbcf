import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nzdetect.cgauss import RngStream, build_toeplitz_covariance, cholesky, sample_cn
from nzdetect.errors import DimensionError, DomainError, SingularEstimateError
from nzdetect.estimators import EstimatorKind, SampleSet, batch_scatter, scatter, scm, smv

SIGMA = build_toeplitz_covariance(0.4, 5)
MU = np.full(5, 3 + 4j)


class TestSmv:
    def test_two_scalars(self):
        assert smv([1 + 1j, 3 - 1j]) == pytest.approx([2 + 0j])

    def test_copies(self):
        v = np.array([1 + 2j, -1, 0.5j])
        np.testing.assert_allclose(smv(np.tile(v, (7, 1))), v)

    def test_empty(self):
        with pytest.raises(DomainError):
            smv(np.zeros((0, 3)))

    def test_clt(self):
        n = 100_000
        x = sample_cn(MU, cholesky(SIGMA), n, RngStream(11))
        se = np.sqrt(0.5 / n)
        d = smv(x) - MU
        assert np.all(np.abs(d.real) < 5 * se) and np.all(np.abs(d.imag) < 5 * se)


class TestScm:
    def test_scalar_example(self):
        assert scm([1 + 1j, 3 - 1j], center=[2], check=False)[0, 0] == pytest.approx(2.0)

    def test_divisors(self):
        x = np.array([[1 + 1j], [3 - 1j], [2 + 2j]])
        w = scatter(x, [2])[0, 0]
        assert scm(x, [2], EstimatorKind.SCM_ML)[0, 0] == pytest.approx(w / 3)
        assert scm(x, [2], EstimatorKind.SCM_UNBIASED)[0, 0] == pytest.approx(w / 2)
        assert scm(x, [2], EstimatorKind.SCM_NPLUS1)[0, 0] == pytest.approx(w / 4)

    def test_identical_samples_singular(self):
        v = np.array([1 + 1j, 2, 3j])
        x = np.tile(v, (6, 1))
        np.testing.assert_array_equal(scm(x, v, check=False), np.zeros((3, 3)))
        with pytest.raises(SingularEstimateError, match="more secondary data"):
            scm(x, v)

    def test_rank_deficient_estimated_mean(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
        # N = m with an estimated mean leaves rank N-1 < m
        with pytest.raises(SingularEstimateError):
            scm(x)

    def test_exactly_hermitian(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((20, 4)) + 1j * rng.standard_normal((20, 4))
        s = scm(x)
        np.testing.assert_array_equal(s, s.conj().T)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            scatter(np.ones((4, 3)), np.ones(2))

    def test_sample_set_checks(self):
        ss = SampleSet(np.ones((4, 3)), np.ones(3))
        assert (ss.n, ss.m) == (4, 3)
        with pytest.raises(DimensionError):
            SampleSet(np.ones((4, 3)), np.ones(2))

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 8, 4)) + 1j * rng.standard_normal((3, 8, 4))
        c = x.mean(axis=1)
        w = batch_scatter(x, c)
        for t in range(3):
            np.testing.assert_allclose(w[t], scatter(x[t], c[t]), atol=1e-12)

    def test_expected_value_estimated_mean(self):
        # E[SCM_ML about the sample mean] = (N-1)/N Sigma
        n, reps = 10, 100_000
        stream = RngStream(3)
        L = cholesky(SIGMA)
        x = MU + stream.standard_complex_normal((reps, n, 5)) @ L.T
        w = batch_scatter(x, x.mean(axis=1)) / n
        avg = w.mean(axis=0)
        target = (n - 1) / n * SIGMA
        assert np.linalg.norm(avg - target) / np.linalg.norm(target) < 0.02


REPS, N_SEC = 10_000, 10


@pytest.fixture(scope="module")
def draws():
    L = cholesky(SIGMA)
    x = MU + RngStream(4).standard_complex_normal((REPS, N_SEC, 5)) @ L.T
    mean = x.mean(axis=1)
    return mean, batch_scatter(x, mean)


class TestWishartProperties:
    reps, n = REPS, N_SEC

    def test_mean_independent_of_scatter(self, draws):
        mean, w = draws
        bound = 5 / np.sqrt(self.reps)
        for i, (j, k) in [(0, (0, 0)), (2, (1, 3)), (4, (4, 4)), (1, (0, 2))]:
            for a in (mean[:, i].real, mean[:, i].imag):
                for b in (w[:, j, k].real, w[:, j, k].imag):
                    if np.std(b) == 0:
                        continue
                    assert abs(np.corrcoef(a, b)[0, 1]) < bound

    def test_mean_covariance(self, draws):
        mean, _ = draws
        r = mean - MU
        cov = r.T @ r.conj() / self.reps
        target = SIGMA / self.n
        assert np.linalg.norm(cov - target) / np.linalg.norm(target) < 0.10


@settings(max_examples=50, deadline=None)
@given(
    seed=st.integers(0, 2 ** 32 - 1),
    c_re=st.floats(-5, 5),
    c_im=st.floats(-5, 5),
)
def test_equivariance(seed, c_re, c_im):
    c = complex(c_re, c_im)
    if abs(c) < 1e-2:
        c = 1.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((12, 3)) + 1j * rng.standard_normal((12, 3))
    b = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    center = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    y = c * x + b
    np.testing.assert_allclose(smv(y), c * smv(x) + b, atol=1e-10)
    np.testing.assert_allclose(
        scm(y, c * center + b, check=False), abs(c) ** 2 * scm(x, center, check=False), rtol=1e-9, atol=1e-9
    )
