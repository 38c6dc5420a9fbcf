import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nzdetect.cgauss import RngStream, build_toeplitz_covariance, cholesky
from nzdetect.detectors import (
    FLAG_OK,
    FLAG_SINGULAR,
    FLAG_UNDEFINED,
    DetectorKind,
    DetectorResult,
    amf,
    anmf,
    batch_statistics,
    estimate_amplitude,
    evaluate,
    kelly_generalized,
    kelly_known_mean,
    kelly_plugin,
    mf,
    nmf,
    statistic_from_estimates,
)
from nzdetect.errors import DomainError, SingularEstimateError, UndefinedStatisticError
from nzdetect.estimators import SampleSet, scatter

M, N = 5, 10
SIGMA = build_toeplitz_covariance(0.4, M)
MU = np.full(M, 3 + 4j)
P = np.ones(M) / np.sqrt(M)


def cvec(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def draw(seed, n=N, m=M):
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(build_toeplitz_covariance(0.4, m))
    x = np.full(m, 3 + 4j) + L @ cvec(rng, m) / np.sqrt(2)
    sec = np.full(m, 3 + 4j) + cvec(rng, n, m) @ L.T / np.sqrt(2)
    return x, sec


# explicit-inverse oracles (test only)
def oracle_forms(x, p, center, s):
    si = np.linalg.inv(s)
    d = x - center
    return p.conj() @ si @ d, (p.conj() @ si @ p).real, (d.conj() @ si @ d).real


def oracle(kind, x, p, sec, mu=None):
    n = sec.shape[0]
    if kind is DetectorKind.KELLY_GENERALIZED:
        mu0 = (x + sec.sum(axis=0)) / (n + 1)
        q, pp, qq = oracle_forms(x, p, mu0, scatter(sec, mu0))
        return (n + 1) / n * abs(q) ** 2 / (pp * (1 + qq))
    center = sec.mean(axis=0) if mu is None else mu
    q, pp, qq = oracle_forms(x, p, center, scatter(sec, center) / n)
    if kind in (DetectorKind.AMF, DetectorKind.AMF_KNOWN_MEAN):
        return abs(q) ** 2 / pp
    if kind in (DetectorKind.ANMF, DetectorKind.ANMF_KNOWN_MEAN):
        return abs(q) ** 2 / (pp * qq)
    return abs(q) ** 2 / (pp * (n + qq))


ADAPTIVE = {
    DetectorKind.AMF: lambda x, p, s: amf(x, p, s),
    DetectorKind.AMF_KNOWN_MEAN: lambda x, p, s: amf(x, p, s, mu=MU),
    DetectorKind.ANMF: lambda x, p, s: anmf(x, p, s),
    DetectorKind.ANMF_KNOWN_MEAN: lambda x, p, s: anmf(x, p, s, mu=MU),
    DetectorKind.KELLY_KNOWN_MEAN: lambda x, p, s: kelly_known_mean(x, p, MU, s),
    DetectorKind.KELLY_PLUGIN: lambda x, p, s: kelly_plugin(x, p, s),
    DetectorKind.KELLY_GENERALIZED: lambda x, p, s: kelly_generalized(x, p, s),
}
INVARIANT = (DetectorKind.AMF, DetectorKind.ANMF, DetectorKind.KELLY_PLUGIN, DetectorKind.KELLY_GENERALIZED)


class TestMatchedFilter:
    def test_scalar(self):
        r = mf([2], [1], [0], [[1]])
        assert r.statistic == 4 and r.kind is DetectorKind.MF

    def test_at_mean(self):
        assert mf(MU, P, MU, SIGMA).statistic == 0

    def test_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x, p = cvec(rng, M), cvec(rng, M)
            si = np.linalg.inv(SIGMA)
            want = abs(p.conj() @ si @ (x - MU)) ** 2 / (p.conj() @ si @ p).real
            assert mf(x, p, MU, SIGMA).statistic == pytest.approx(want, rel=1e-10)

    def test_zero_steering(self):
        with pytest.raises(DomainError):
            mf(MU + 1, np.zeros(M), MU, SIGMA)

    def test_non_pd(self):
        with pytest.raises(ArithmeticError):
            mf(MU + 1, P, MU, -SIGMA)


class TestNmf:
    def test_parallel(self):
        assert nmf(MU + (2 - 1j) * P, P, MU, np.eye(M)).statistic == pytest.approx(1.0)

    def test_orthogonal(self):
        d = np.array([1, -1, 0, 0, 0])
        assert nmf(MU + d, P, MU, np.eye(M)).statistic == pytest.approx(0.0, abs=1e-15)

    def test_undefined_at_mean(self):
        with pytest.raises(UndefinedStatisticError):
            nmf(MU, P, MU, SIGMA)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1))
    def test_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        s = nmf(cvec(rng, M), cvec(rng, M), MU, SIGMA).statistic
        assert 0 <= s <= 1 + 1e-12


class TestAdaptive:
    @pytest.mark.parametrize("kind", list(ADAPTIVE))
    def test_oracle(self, kind):
        for seed in range(10):
            x, sec = draw(seed)
            mu = MU if kind.uses_known_mean else None
            got = ADAPTIVE[kind](x, P, sec).statistic
            assert got == pytest.approx(oracle(kind, x, P, sec, mu), rel=1e-10)

    def test_amf_zero_at_sample_mean(self):
        _, sec = draw(1)
        assert amf(sec.mean(axis=0), P, sec).statistic == 0

    def test_anmf_undefined_at_sample_mean(self):
        _, sec = draw(1)
        with pytest.raises(UndefinedStatisticError):
            anmf(sec.mean(axis=0), P, sec)

    def test_kelly_known_at_mean_is_zero(self):
        _, sec = draw(2)
        assert kelly_known_mean(MU, P, MU, sec).statistic == 0

    def test_anmf_parallel_is_one(self):
        _, sec = draw(3)
        x = sec.mean(axis=0) + (1 + 2j) * P
        assert anmf(x, P, sec).statistic == pytest.approx(1.0, rel=1e-12)

    def test_too_few_secondary(self):
        x, sec = draw(4, n=M)
        with pytest.raises(SingularEstimateError):
            amf(x, P, sec)
        with pytest.raises(SingularEstimateError):
            kelly_generalized(x, P, sec)
        assert amf(x, P, sec, mu=MU).statistic >= 0

    def test_singular_message_advises(self):
        x = np.ones(M)
        sec = np.tile(np.ones(M), (N, 1))
        with pytest.raises(SingularEstimateError, match="more secondary data"):
            kelly_plugin(x, P, sec)

    def test_kelly_below_one(self):
        for seed in range(20):
            x, sec = draw(seed)
            x = x + 100 * P
            assert kelly_known_mean(x, P, MU, sec).statistic < 1
            assert kelly_plugin(x, P, sec).statistic < 1

    def test_generalized_bound(self):
        stream = RngStream(9)
        x = stream.standard_complex_normal((100_000, M))
        sec = stream.standard_complex_normal((100_000, N, M))
        x = x + 50 * P  # push toward the bound
        stat, flags = batch_statistics(DetectorKind.KELLY_GENERALIZED, x, P, sec)
        assert np.all(flags == FLAG_OK)
        assert stat.max() < (N + 1) / N

    def test_evaluate_dispatch(self):
        x, sec = draw(5)
        ss = SampleSet(sec, x)
        for kind in DetectorKind:
            r = evaluate(kind, ss, P, mu=MU, sigma=SIGMA)
            assert r.kind is kind

    def test_evaluate_requires_mean(self):
        x, sec = draw(5)
        with pytest.raises(DomainError):
            evaluate(DetectorKind.AMF_KNOWN_MEAN, SampleSet(sec, x), P)

    def test_from_estimates(self):
        x, sec = draw(6)
        c = sec.mean(axis=0)
        w = scatter(sec, c)
        for kind in (DetectorKind.AMF, DetectorKind.ANMF, DetectorKind.KELLY_PLUGIN):
            got = statistic_from_estimates(kind, x, P, c, w, N).statistic
            assert got == pytest.approx(ADAPTIVE[kind](x, P, sec).statistic, rel=1e-12)
        with pytest.raises(DomainError):
            statistic_from_estimates(DetectorKind.KELLY_GENERALIZED, x, P, c, w, N)


class TestInvariance:
    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), kind=st.sampled_from(INVARIANT))
    def test_affine_group(self, seed, kind):
        rng = np.random.default_rng(seed)
        x, sec = draw(seed % 1000)
        a = cvec(rng, M, M) + 3 * np.eye(M)
        b = cvec(rng, M) * 10
        fn = ADAPTIVE[kind]
        before = fn(x, P, sec).statistic
        after = fn(a @ x + b, a @ P, sec @ a.T + b).statistic
        cond = np.linalg.cond(a)
        assert after == pytest.approx(before, rel=1e-12 * cond ** 2 + 1e-10)

    @pytest.mark.parametrize("kind", [DetectorKind.ANMF, DetectorKind.KELLY_PLUGIN, DetectorKind.KELLY_GENERALIZED])
    def test_complex_scaling(self, kind):
        x, sec = draw(7)
        c = -2.5 + 0.7j
        fn = ADAPTIVE[kind]
        assert fn(c * x, P, c * sec).statistic == pytest.approx(fn(x, P, sec).statistic, rel=1e-10)

    def test_kelly_monotone_map(self):
        vals = np.sort(np.array([kelly_plugin(*draw(s)[:1], P, draw(s)[1]).statistic for s in range(50)]))
        mapped = vals / (1 - vals)
        assert np.all(np.diff(mapped) >= 0)

    def test_growing_amplitude(self):
        x, sec = draw(8)
        prev = {k: 0.0 for k in ADAPTIVE}
        for alpha in (1e1, 1e3, 1e5):
            for kind, fn in ADAPTIVE.items():
                prev[kind] = fn(x + alpha * P, P, sec).statistic
        assert prev[DetectorKind.AMF] > 1e8
        for kind in (DetectorKind.ANMF, DetectorKind.KELLY_PLUGIN, DetectorKind.KELLY_KNOWN_MEAN):
            assert prev[kind] == pytest.approx(1.0, rel=1e-6)

    def test_generalized_saturates_below_one(self):
        # The signal also enters the joint mean estimate, so the statistic
        # levels off at a data-dependent value <= 1 instead of (N+1)/N.
        for seed in range(5):
            x, sec = draw(seed)
            far = [kelly_generalized(x + a * P, P, sec).statistic for a in (1e5, 1e7)]
            assert far[1] == pytest.approx(far[0], abs=1e-4)
            assert far[1] <= 1 + 1e-9


class TestAmplitude:
    def test_exact(self):
        assert estimate_amplitude(MU + 3 * P, P, MU, np.eye(M)) == pytest.approx(3.0)

    def test_zero(self):
        assert estimate_amplitude(MU, P, MU, SIGMA) == 0

    def test_grid_minimizer(self):
        rng = np.random.default_rng(10)
        x = MU + cvec(rng, M)
        L = cholesky(SIGMA)
        alphas = np.linspace(-5, 5, 200_001)
        r = np.linalg.solve(L, (x - MU)[:, None] - np.outer(P, alphas))
        best = alphas[np.argmin(np.sum(np.abs(r) ** 2, axis=0))]
        assert estimate_amplitude(x, P, MU, SIGMA) == pytest.approx(best, abs=1e-4)


class TestResult:
    def test_rejects_negative(self):
        with pytest.raises(ArithmeticError):
            DetectorResult(-1.0, DetectorKind.MF, math.inf)

    def test_rejects_nan(self):
        with pytest.raises(ArithmeticError):
            DetectorResult(math.nan, DetectorKind.MF, math.inf)

    def test_rejects_above_bound(self):
        with pytest.raises(ArithmeticError):
            DetectorResult(1.1, DetectorKind.ANMF, 1.0)


class TestBatch:
    @pytest.mark.parametrize("kind", list(DetectorKind))
    def test_matches_scalar(self, kind):
        xs, secs = zip(*(draw(s) for s in range(15)))
        x, sec = np.array(xs), np.array(secs)
        stat, flags = batch_statistics(kind, x, P, sec, mu=MU, sigma=SIGMA)
        assert np.all(flags == FLAG_OK)
        for t in range(15):
            want = evaluate(kind, SampleSet(sec[t], x[t]), P, mu=MU, sigma=SIGMA).statistic
            assert stat[t] == pytest.approx(want, rel=1e-10, abs=1e-14)

    def test_flags(self):
        x, sec = draw(11)
        bad = np.tile(np.ones(M), (N, 1))
        stat, flags = batch_statistics(
            DetectorKind.ANMF, np.array([x, sec.mean(axis=0), x]), P, np.array([sec, sec, bad])
        )
        assert list(flags) == [FLAG_OK, FLAG_UNDEFINED, FLAG_SINGULAR]
        assert stat[1] == 0 and stat[2] == 0

    def test_insufficient_n_flagged(self):
        x, sec = draw(12, n=M)
        _, flags = batch_statistics(DetectorKind.AMF, x[None], P, sec[None])
        assert flags[0] == FLAG_SINGULAR

    def test_zero_steering(self):
        x, sec = draw(13)
        with pytest.raises(DomainError):
            batch_statistics(DetectorKind.AMF, x[None], np.zeros(M), sec[None])

    def test_phase_of_amplitude_irrelevant(self):
        # circular noise: alpha and alpha * e^{j phi} give the same statistic law
        stream = RngStream(14)
        t = 20_000
        out = []
        for alpha in (1.2, 1.2 * np.exp(1j * 2.1)):
            noise = stream.standard_complex_normal((t, N + 1, M))
            data = MU + noise
            x = data[:, 0] + alpha * P
            stat, _ = batch_statistics(DetectorKind.KELLY_PLUGIN, x, P, data[:, 1:])
            out.append(stat)
        assert stats.ks_2samp(*out).pvalue > 0.01
