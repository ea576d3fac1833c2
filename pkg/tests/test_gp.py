import math

import numpy as np
import pytest

from bloomtrack.errors import (
    CoincidentPointError,
    FittingFailedError,
    IllConditionedError,
    ValidationError,
)
from bloomtrack.gp import (
    FitResult,
    GpPosterior,
    KernelParams,
    NoiseModel,
    TrainingSet,
    condition,
    fit_hyperparameters,
    kernel,
    kernel_gradient,
    kernel_matrix,
    log_marginal_likelihood,
)

# ---------------------------------------------------------------------------
# independent oracles: scalar-loop kernel, explicit-inverse marginal likelihood
# ---------------------------------------------------------------------------


def kernel_scalar(sigma2, l0, l1, xi, xj):
    dx, dy = xi[0] - xj[0], xi[1] - xj[1]
    r = math.sqrt(3.0 * (dx / l0) ** 2 + 3.0 * (dy / l1) ** 2)
    return sigma2 * (1.0 + r) * math.exp(-r)


def lml_brute(params, sigma, X, y):
    n = len(X)
    K = np.array(
        [[kernel_scalar(params.sigma2, params.l0, params.l1, X[i], X[j]) for j in range(n)] for i in range(n)]
    )
    A = K + sigma**2 * np.eye(n)
    sign, logdet = np.linalg.slogdet(A)
    assert sign > 0
    return float(-0.5 * y @ np.linalg.inv(A) @ y - 0.5 * logdet - 0.5 * n * math.log(2 * math.pi))


def random_problem(seed, n):
    rng = np.random.default_rng(seed)
    params = KernelParams(
        sigma2=rng.uniform(0.5, 30.0),
        l0=rng.uniform(0.2, 3.0),
        l1=rng.uniform(0.2, 3.0),
    )
    X = rng.uniform(-2, 2, size=(n, 2))
    y = rng.normal(scale=math.sqrt(params.sigma2), size=n)
    return params, X, y


class TestKernel:
    def test_matches_scalar_oracle(self):
        params, X, _ = random_problem(0, 6)
        K = kernel_matrix(params, X, X)
        for i in range(6):
            for j in range(6):
                assert K[i, j] == pytest.approx(
                    kernel_scalar(params.sigma2, params.l0, params.l1, X[i], X[j]), rel=1e-12
                )

    def test_symmetry_and_diagonal(self):
        params, X, _ = random_problem(1, 8)
        K = kernel_matrix(params, X, X)
        np.testing.assert_allclose(K, K.T, rtol=0, atol=1e-14)
        np.testing.assert_allclose(np.diag(K), params.sigma2)

    @pytest.mark.parametrize("seed", range(5))
    def test_positive_semidefinite(self, seed):
        params, X, _ = random_problem(seed + 10, 25)
        K = kernel_matrix(params, X, X)
        assert np.linalg.eigvalsh(K).min() >= -1e-8 * params.sigma2

    def test_anisotropy_frozen_value(self):
        # one length scale along x, offset of l0/sqrt(3): r = 1 exactly,
        # so k = sigma2 * 2 / e
        params = KernelParams(sigma2=18.2106, l0=0.0559, l1=0.0245)
        xi = (0.0, 0.0)
        xj = (0.0559 / math.sqrt(3.0), 0.0)
        assert kernel(params, xi, xj) == pytest.approx(18.2106 * 2.0 * math.exp(-1.0), rel=1e-12)

    def test_decay_with_distance(self):
        params = KernelParams(sigma2=2.0, l0=1.0, l1=1.0)
        ks = [kernel(params, (0, 0), (d, 0)) for d in (0.0, 0.5, 1.0, 2.0, 5.0)]
        assert ks[0] == pytest.approx(2.0)
        assert all(a > b for a, b in zip(ks, ks[1:]))

    @pytest.mark.parametrize("bad", [dict(sigma2=0), dict(l0=-1), dict(l1=float("nan"))])
    def test_invalid_params(self, bad):
        kwargs = dict(sigma2=1.0, l0=1.0, l1=1.0)
        kwargs.update(bad)
        with pytest.raises(ValidationError):
            KernelParams(**kwargs)


class TestKernelGradient:
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_central_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        params = KernelParams(
            sigma2=rng.uniform(0.5, 20.0), l0=rng.uniform(0.3, 2.0), l1=rng.uniform(0.3, 2.0)
        )
        p = rng.uniform(-2, 2, size=2)
        q = p + rng.uniform(0.1, 1.5, size=2) * rng.choice([-1, 1], size=2)
        h = 1e-6 * min(params.l0, params.l1)
        fd = np.array(
            [
                (kernel(params, p + dh, q) - kernel(params, p - dh, q)) / (2 * h)
                for dh in (np.array([h, 0.0]), np.array([0.0, h]))
            ]
        )
        np.testing.assert_allclose(kernel_gradient(params, p, q), fd, rtol=1e-6, atol=1e-10)

    def test_points_toward_the_other_point(self):
        # covariance increases toward the data point, so the gradient points at it
        params = KernelParams(sigma2=1.0, l0=1.0, l1=1.0)
        g = kernel_gradient(params, (1.0, 1.0), (0.0, 0.0))
        assert g[0] < 0 and g[1] < 0

    def test_coincident_rejected(self):
        params = KernelParams(sigma2=1.0, l0=1.0, l1=1.0)
        with pytest.raises(CoincidentPointError):
            kernel_gradient(params, (0.5, 0.5), (0.5, 0.5))


class TestLogMarginalLikelihood:
    def test_two_point_closed_form(self):
        # n=2 hand oracle: A = [[a, b], [b, a]] with a = sigma2 + sigma^2 and
        # b = sigma2 (1 + sqrt(3)) exp(-sqrt(3)); for y = (1, -1),
        # y^T A^-1 y = 2/(a-b) and det A = a^2 - b^2
        params = KernelParams(sigma2=4.0, l0=1.0, l1=1.0)
        a = 4.0 + 0.25
        b = 4.0 * (1.0 + math.sqrt(3.0)) * math.exp(-math.sqrt(3.0))
        expected = -1.0 / (a - b) - 0.5 * math.log(a * a - b * b) - math.log(2 * math.pi)
        train = TrainingSet([[0.0, 0.0], [1.0, 0.0]], [1.0, -1.0])
        assert log_marginal_likelihood(params, NoiseModel(0.5), train) == pytest.approx(
            expected, rel=1e-12
        )

    @pytest.mark.parametrize("seed,n", [(s, n) for s in range(6) for n in (2, 5, 8)])
    def test_matches_brute_force(self, seed, n):
        params, X, y = random_problem(1000 + seed * 17 + n, n)
        sigma = 0.3
        got = log_marginal_likelihood(params, NoiseModel(sigma), TrainingSet(X, y))
        assert got == pytest.approx(lml_brute(params, sigma, X, y), rel=1e-8)

    def test_ill_conditioned_exhausts_ladder(self, monkeypatch):
        params, X, y = random_problem(2, 5)
        monkeypatch.setattr(
            np.linalg, "cholesky", lambda *_a, **_k: (_ for _ in ()).throw(np.linalg.LinAlgError())
        )
        with pytest.raises(IllConditionedError):
            log_marginal_likelihood(params, NoiseModel(0.1), TrainingSet(X, y))


class TestPosterior:
    def test_alpha_residual(self):
        params, X, y = random_problem(3, 40)
        noise = NoiseModel(0.2)
        post = condition(params, noise, X, y)
        K = kernel_matrix(params, X, X) + (noise.sigma**2 + post.jitter) * np.eye(len(X))
        residual = np.linalg.norm(K @ post.alpha - y) / np.linalg.norm(y)
        assert residual < 1e-8

    def test_noiseless_interpolation(self):
        params, X, y = random_problem(4, 20)
        post = condition(params, NoiseModel(0.0), X, y)
        for xi, yi in zip(X, y):
            assert post.predict_mean(xi) == pytest.approx(yi, rel=1e-6, abs=1e-6)

    def test_variance_zero_at_noiseless_training_point(self):
        params, X, y = random_problem(5, 15)
        post = condition(params, NoiseModel(0.0), X, y)
        assert post.predict_variance(X[0]) == pytest.approx(0.0, abs=1e-6)

    def test_variance_bounded_by_prior(self):
        params, X, y = random_problem(6, 30)
        post = condition(params, NoiseModel(0.1), X, y)
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = rng.uniform(-3, 3, size=2)
            assert post.predict_variance(p) <= params.sigma2 + 1e-9

    def test_variance_reverts_to_prior_far_away(self):
        params, X, y = random_problem(7, 10)
        post = condition(params, NoiseModel(0.1), X, y)
        assert post.predict_variance((500.0, 500.0)) == pytest.approx(params.sigma2, rel=1e-9)
        # the alternative prior term returns the raw value, unclamped
        assert post.predict_variance((500.0, 500.0), kstar_star="noise") == pytest.approx(
            0.1**2, rel=1e-6
        )

    def test_variance_switch_validated(self):
        params, X, y = random_problem(8, 5)
        post = condition(params, NoiseModel(0.1), X, y)
        with pytest.raises(ValidationError):
            post.predict_variance((0.0, 0.0), kstar_star="typo")

    def test_negative_variance_clamp_and_error(self):
        params = KernelParams(sigma2=4.0, l0=1.0, l1=1.0)
        X = np.array([[0.0, 0.0]])
        y = np.array([1.0])

        def fake_posterior(explained_excess):
            # single training point: explained energy is (k_star / L)^2;
            # choose L so it exceeds sigma2 by the requested amount
            lower = np.array([[params.sigma2 / math.sqrt(params.sigma2 + explained_excess)]])
            return GpPosterior(
                params=params,
                noise=NoiseModel(0.0),
                positions=X,
                values=y,
                lower=lower,
                alpha=np.array([0.0]),
            )

        assert fake_posterior(5e-10).predict_variance((0.0, 0.0)) == 0.0
        with pytest.raises(IllConditionedError):
            fake_posterior(1e-3).predict_variance((0.0, 0.0))

    def test_jitter_ladder_rescues_duplicates(self):
        params = KernelParams(sigma2=4.0, l0=1.0, l1=1.0)
        X = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
        y = np.array([1.0, 1.0, -1.0])
        post = condition(params, NoiseModel(0.0), X, y)
        assert post.jitter > 0
        assert math.isfinite(post.predict_mean((0.5, 0.5)))


class TestPosteriorGradient:
    @pytest.mark.parametrize("seed", range(6))
    def test_matches_finite_differences_of_mean(self, seed):
        params, X, y = random_problem(50 + seed, 30)
        post = condition(params, NoiseModel(0.15), X, y)
        rng = np.random.default_rng(seed)
        h = 1e-5 * min(params.l0, params.l1)
        for _ in range(10):
            p = rng.uniform(-1.8, 1.8, size=2)
            if np.min(np.linalg.norm(X - p, axis=1)) < 1e-3:
                continue
            fd = np.array(
                [
                    (post.predict_mean(p + dh) - post.predict_mean(p - dh)) / (2 * h)
                    for dh in (np.array([h, 0.0]), np.array([0.0, h]))
                ]
            )
            np.testing.assert_allclose(post.predict_mean_gradient(p), fd, rtol=1e-4, atol=1e-8)

    def test_coincident_conditioning_point_rejected(self):
        params, X, y = random_problem(60, 10)
        post = condition(params, NoiseModel(0.1), X, y)
        with pytest.raises(CoincidentPointError):
            post.predict_mean_gradient(X[3])

    def test_linear_trend_recovered(self):
        # values from a plane; dense coverage; the mean gradient should be
        # close to the plane slope well inside the data
        rng = np.random.default_rng(61)
        X = rng.uniform(0, 4, size=(120, 2))
        y = 2.0 * X[:, 0] - 1.0 * X[:, 1] + 3.0
        params = KernelParams(sigma2=25.0, l0=2.0, l1=2.0)
        post = condition(params, NoiseModel(1e-3), X, y)
        g = post.predict_mean_gradient((2.0, 2.0))
        np.testing.assert_allclose(g, [2.0, -1.0], rtol=0.1)


class TestTrainingSet:
    def test_shape_validation(self):
        with pytest.raises(ValidationError):
            TrainingSet([[0, 0, 0]], [1.0])
        with pytest.raises(ValidationError):
            TrainingSet([[0, 0], [1, 1]], [1.0])
        with pytest.raises(ValidationError):
            TrainingSet(np.empty((0, 2)), [])

    def test_nonfinite_rejected(self):
        with pytest.raises(ValidationError):
            TrainingSet([[0, 0], [1, np.nan]], [1.0, 2.0])


class TestFit:
    def make_day(self, seed, n=60):
        rng = np.random.default_rng(seed)
        X = rng.uniform(0, 3, size=(n, 2))
        true = KernelParams(sigma2=4.0, l0=0.8, l1=0.8)
        K = kernel_matrix(true, X, X) + 1e-10 * np.eye(n)
        y = np.linalg.cholesky(K) @ rng.standard_normal(n)
        return TrainingSet(X, y)

    def test_budget_one_returns_init(self):
        init = KernelParams(sigma2=2.0, l0=1.0, l1=1.0)
        res = fit_hyperparameters([self.make_day(0)], NoiseModel(1e-3), init, budget=1)
        assert res.params == init
        assert res.n_evaluations == 1

    def test_never_worse_than_init(self):
        init = KernelParams(sigma2=0.5, l0=2.5, l1=0.3)
        day = self.make_day(1)
        res = fit_hyperparameters(
            [day], NoiseModel(1e-3), init, budget=400, n_starts=3, seed=7
        )
        assert res.lml >= res.init_lml
        assert res.lml == pytest.approx(
            log_marginal_likelihood(res.params, NoiseModel(1e-3), day), rel=1e-12
        )
        assert res.n_evaluations <= 400
        assert len(res.trace) == res.n_evaluations

    def test_pooled_objective_sums_days(self):
        init = KernelParams(sigma2=2.0, l0=1.0, l1=1.0)
        day = self.make_day(2)
        res = fit_hyperparameters([day, day], NoiseModel(1e-3), init, budget=1)
        assert res.init_lml == pytest.approx(
            2 * log_marginal_likelihood(init, NoiseModel(1e-3), day), rel=1e-12
        )

    def test_all_evaluations_failing(self, monkeypatch):
        monkeypatch.setattr(
            "bloomtrack.gp.log_marginal_likelihood",
            lambda *_a, **_k: (_ for _ in ()).throw(IllConditionedError("forced")),
        )
        init = KernelParams(sigma2=1.0, l0=1.0, l1=1.0)
        with pytest.raises(FittingFailedError):
            fit_hyperparameters([self.make_day(3)], NoiseModel(0.1), init, budget=10)

    def test_summary_mentions_counts(self):
        res = FitResult(
            params=KernelParams(1.0, 1.0, 1.0),
            lml=-5.0,
            init_lml=-9.0,
            n_evaluations=12,
            trace=[-9.0, -7.0, -5.0],
        )
        assert "12 evaluations" in res.summary()
