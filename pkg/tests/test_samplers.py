"""Sampler behavior: Langevin updates, joint sweeps, filtering, consistency."""

import numpy as np
import pytest

from jointebm.energy import ConditioningSpec, EnergyModel
from jointebm.samplers import (
    GibbsConfig,
    LangevinConfig,
    SampleBatch,
    internal_consistency,
    langevin_step,
    likelihood_filter,
    lwg_sample,
    run_langevin,
    sample_labels,
    semi_conditional_marginalize,
    semi_conditional_resample,
)

from helpers import GaussianLogitToy, quadratic_well_grad_fn


def two_mode_toy(delta=0.0, scale=0.18, lo=0.35, hi=0.65):
    """K=1 toy: y=0 sits at lo, y=1 at hi; delta biases y=1."""
    centers = np.array([[[lo], [hi]]])
    scales = np.array([[scale, scale]])
    offsets = np.array([[0.0, delta]])
    return EnergyModel(GaussianLogitToy(centers, scales, offsets))


class TestLangevinStep:
    def test_zero_gradient_noise_off_is_identity(self):
        cfg = LangevinConfig(step_size=0.1, temperature=1.0, clamp=False, noise=False)
        x = np.array([[0.3, 0.7]])
        x2, _, bad = langevin_step(x, lambda z: (np.zeros(1), np.zeros_like(z)), cfg, np.random.default_rng(0))
        np.testing.assert_array_equal(x2, x)
        assert not bad.any()

    def test_quadratic_contraction(self):
        """f = -x^2/2 with unit temperature contracts by (1 - eps^2/2)."""
        eps = 0.2
        cfg = LangevinConfig(step_size=eps, temperature=1.0, clamp=False, noise=False)
        x = np.array([[0.8]])
        x2, _, _ = langevin_step(x, quadratic_well_grad_fn(), cfg, np.random.default_rng(0))
        np.testing.assert_allclose(x2, x * (1.0 - eps**2 / 2.0), rtol=1e-12)

    def test_ar1_stationary_variance(self):
        """Long-run variance of the discretized chain matches closed form."""
        eps, lam = 0.1, 0.05
        cfg = LangevinConfig(step_size=eps, temperature=lam, clamp=False, noise=True)
        a = 1.0 - cfg.grad_coef
        target = eps**2 / (1.0 - a**2)
        rng = np.random.default_rng(42)
        samples = []
        run_langevin(
            np.zeros((1, 1)),
            quadratic_well_grad_fn(),
            cfg,
            rng,
            n_steps=120_000,
            collect=lambda t, x: samples.append(x[0, 0]) if t >= 5_000 else None,
        )
        arr = np.array(samples)
        se = target * np.sqrt(2.0 / arr.size * (1 + a**2) / (1 - a**2))
        assert abs(arr.var() - target) < 3.0 * se

    def test_divergent_energy_freezes_chain(self):
        cfg = LangevinConfig(step_size=0.1, temperature=1.0, clamp=False, noise=False)

        def exploding(x):
            return np.full(x.shape[0], np.inf), np.ones_like(x)

        x = np.array([[0.5]])
        x2, _, bad = langevin_step(x, exploding, cfg, np.random.default_rng(0))
        assert bad.all()
        np.testing.assert_array_equal(x2, x)

    def test_clamp_keeps_unit_box(self):
        cfg = LangevinConfig(step_size=0.5, temperature=0.001, clamp=True, noise=True)
        rng = np.random.default_rng(3)
        x, _ = run_langevin(
            np.full((4, 2), 0.5), quadratic_well_grad_fn(50.0), cfg, rng, n_steps=50
        )
        assert (x >= 0).all() and (x <= 1).all()

    def test_noise_off_is_ascent_on_concave_energy(self):
        cfg = LangevinConfig(step_size=0.05, temperature=1.0, clamp=False, noise=False)
        fn = quadratic_well_grad_fn()
        x = np.array([[0.9, -0.4]])
        energies = [fn(x)[0][0]]
        for _ in range(30):
            x, e, _ = langevin_step(x, fn, cfg, np.random.default_rng(0))
            energies.append(fn(x)[0][0])
        assert all(b >= a for a, b in zip(energies, energies[1:]))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            LangevinConfig(step_size=0.0)
        with pytest.raises(ValueError):
            LangevinConfig(temperature=-1.0)


class TestSampleLabels:
    def test_fair_coin_at_zero_logits(self):
        m = two_mode_toy()
        x = np.full((100_000, 1), 0.5)  # symmetric point: p = 0.5
        y = sample_labels(m, x, np.random.default_rng(0))
        assert abs(y.mean() - 0.5) < 0.005

    def test_saturated_gap_always_one(self):
        m = two_mode_toy(delta=50.0)
        x = np.full((200, 1), 0.5)
        y = sample_labels(m, x, np.random.default_rng(1))
        assert (y == 1).all()

    def test_worked_probability(self):
        """p = 0.75 from logits (0, ln 3); frequency within a binomial CI."""
        m = two_mode_toy(delta=np.log(3.0))
        x = np.full((10_000, 1), 0.5)
        y = sample_labels(m, x, np.random.default_rng(2))
        assert abs(y.mean() - 0.75) < 0.01

    def test_conditioned_indices_copied(self):
        m = two_mode_toy()
        spec = ConditioningSpec(1, (0,), (0,))
        y = sample_labels(m, np.full((50, 1), 0.9), np.random.default_rng(3), spec)
        assert (y == 0).all()


class TestJointSweeps:
    def test_zero_sweeps_returns_init(self):
        m = two_mode_toy()
        init = SampleBatch(np.array([[0.41]]), np.array([[1]]))
        res = lwg_sample(m, init, GibbsConfig(sweeps=0), LangevinConfig(), np.random.default_rng(0))
        np.testing.assert_array_equal(res.x, init.x)
        np.testing.assert_array_equal(res.y, init.y)

    def test_empty_conditioning_matches_unconditional_bitwise(self):
        """Resampling with an empty spec is exactly the joint sampler."""
        m = two_mode_toy(delta=0.3)
        init = SampleBatch(np.array([[0.5], [0.4]]), np.array([[0], [1]]))
        gc = GibbsConfig(sweeps=25, inner_steps=2)
        lc = LangevinConfig(step_size=0.05, temperature=1.0)
        res_a = lwg_sample(m, init.copy(), gc, lc, np.random.default_rng(7))
        res_b = semi_conditional_resample(
            m, ConditioningSpec.empty(1), init.copy(), gc, lc, np.random.default_rng(7)
        )
        assert np.array_equal(res_a.x, res_b.x)
        assert np.array_equal(res_a.y, res_b.y)

    def test_conditioned_bits_never_mutated(self):
        centers = np.zeros((2, 2, 1))
        centers[0, 0, 0], centers[0, 1, 0] = 0.3, 0.7
        centers[1, 0, 0], centers[1, 1, 0] = 0.4, 0.6
        m = EnergyModel(GaussianLogitToy(centers, np.full((2, 2), 0.2), np.zeros((2, 2))))
        spec = ConditioningSpec(2, (1,), (1,))
        seen = []
        init = SampleBatch(np.full((3, 1), 0.5), np.zeros((3, 2), dtype=np.int64))
        semi_conditional_resample(
            m,
            spec,
            init,
            GibbsConfig(sweeps=30),
            LangevinConfig(step_size=0.05, temperature=1.0),
            np.random.default_rng(5),
            trace=lambda t, x, y: seen.append(y[:, 1].copy()),
        )
        assert all((col == 1).all() for col in seen)

    def test_identical_seeds_identical_chains(self):
        m = two_mode_toy(delta=-0.2)
        init = SampleBatch(np.array([[0.52]]), np.array([[0]]))
        gc, lc = GibbsConfig(sweeps=40), LangevinConfig(step_size=0.04, temperature=1.0)
        r1 = semi_conditional_resample(m, ConditioningSpec.empty(1), init.copy(), gc, lc, np.random.default_rng(11))
        r2 = semi_conditional_resample(m, ConditioningSpec.empty(1), init.copy(), gc, lc, np.random.default_rng(11))
        assert np.array_equal(r1.x, r2.x) and np.array_equal(r1.y, r2.y)

    def test_full_conditioning_matches_marginalize_bitwise(self):
        """With every attribute pinned the two algorithms run the same chain."""
        m = two_mode_toy()
        spec = ConditioningSpec(1, (0,), (1,))
        init = SampleBatch(np.array([[0.45]]), np.array([[1]]))
        gc = GibbsConfig(sweeps=20, inner_steps=2)
        lc = LangevinConfig(step_size=0.05, temperature=1.0)
        r1 = semi_conditional_resample(m, spec, init.copy(), gc, lc, np.random.default_rng(13))
        r2 = semi_conditional_marginalize(m, spec, init.copy(), gc, lc, np.random.default_rng(13))
        assert np.array_equal(r1.x, r2.x)
        assert np.array_equal(r1.y, r2.y)

    def test_marginalize_empty_spec_is_langevin_on_marginal(self):
        m = two_mode_toy(delta=0.4)
        spec = ConditioningSpec.empty(1)
        init = SampleBatch(np.array([[0.5]]), np.array([[0]]))
        gc = GibbsConfig(sweeps=15, inner_steps=1)
        lc = LangevinConfig(step_size=0.05, temperature=1.0)
        r = semi_conditional_marginalize(m, spec, init.copy(), gc, lc, np.random.default_rng(17))

        rng = np.random.default_rng(17)
        x, _ = run_langevin(
            init.x,
            lambda z: m.backbone.semicond_energy_grad(z, *spec.as_arrays()),
            lc,
            rng,
            n_steps=15,
        )
        np.testing.assert_array_equal(r.x, x)

    def test_clamped_sweeps_stay_in_unit_box(self):
        m = two_mode_toy()
        init = SampleBatch(np.array([[0.01], [0.99]]), np.array([[0], [1]]))
        res = lwg_sample(
            m,
            init,
            GibbsConfig(sweeps=50),
            LangevinConfig(step_size=0.3, temperature=0.01, clamp=True),
            np.random.default_rng(19),
        )
        assert (res.x >= 0).all() and (res.x <= 1).all()


class TestMarginalizeAgainstQuadrature:
    def test_conditional_mean_within_three_standard_errors(self):
        """Pinned-attribute sampling lands on the quadrature mean of x.

        200 independent chains give independent final samples, so the plain
        standard error of the chain means applies.
        """
        from jointebm.oracles import model_conditional_x_mean

        m = two_mode_toy(delta=0.4, scale=0.12, lo=0.35, hi=0.65)
        cond = ConditioningSpec(1, (0,), (1,))
        rng = np.random.default_rng(99)
        n_chains = 200
        init = SampleBatch(rng.random((n_chains, 1)), np.ones((n_chains, 1), dtype=np.int64))
        lc = LangevinConfig(step_size=0.06, temperature=1.0, clamp=True, noise=True)
        res = semi_conditional_marginalize(m, cond, init, GibbsConfig(sweeps=400), lc, rng)
        target = model_conditional_x_mean(m, cond, 0.0, 1.0)[0]
        se = res.x[:, 0].std() / np.sqrt(n_chains)
        assert abs(res.x[:, 0].mean() - target) < 3 * se


class TestLikelihoodFilter:
    def _model_and_candidates(self):
        m = two_mode_toy(scale=0.1)
        rng = np.random.default_rng(23)
        x = rng.random((20, 1))
        y = np.ones((20, 1), dtype=np.int64)
        return m, SampleBatch(x, y)

    def test_keep_all_preserves_ranking_of_input(self):
        m, cands = self._model_and_candidates()
        spec = ConditioningSpec(1, (0,), (1,))
        kept, scores = likelihood_filter(m, cands, spec, keep=len(cands))
        assert len(kept) == 20
        assert (np.diff(scores) <= 1e-15).all()

    def test_two_candidates_picks_higher_score(self):
        m = two_mode_toy(scale=0.1)
        spec = ConditioningSpec(1, (0,), (1,))
        cands = SampleBatch(np.array([[0.65], [0.35]]), np.ones((2, 1), dtype=np.int64))
        kept, _ = likelihood_filter(m, cands, spec, keep=1)
        np.testing.assert_array_equal(kept.x, [[0.65]])

    def test_matches_brute_force_sort(self):
        from jointebm.samplers import conditioning_log_scores

        m, cands = self._model_and_candidates()
        spec = ConditioningSpec(1, (0,), (1,))
        kept, _ = likelihood_filter(m, cands, spec, keep=2)
        scores = conditioning_log_scores(m, cands.x, spec)
        best = np.argsort(-scores, kind="stable")[:2]
        np.testing.assert_array_equal(kept.x, cands.x[best])

    def test_too_few_candidates_raises(self):
        m, cands = self._model_and_candidates()
        with pytest.raises(ValueError):
            likelihood_filter(m, cands, ConditioningSpec(1, (0,), (1,)), keep=21)

    def test_empty_conditioning_keeps_input_order(self):
        m, cands = self._model_and_candidates()
        kept, _ = likelihood_filter(m, cands, ConditioningSpec.empty(1), keep=5)
        np.testing.assert_array_equal(kept.x, cands.x[:5])


class TestInternalConsistency:
    def test_saturated_samples_score_one(self):
        m = two_mode_toy(scale=0.05)
        spec = ConditioningSpec(1, (0,), (1,))
        samples = SampleBatch(np.full((10, 1), 0.65), np.ones((10, 1), dtype=np.int64))
        assert internal_consistency(m, samples, spec) == 1.0

    def test_adversarial_samples_score_zero(self):
        m = two_mode_toy(scale=0.05)
        spec = ConditioningSpec(1, (0,), (1,))
        samples = SampleBatch(np.full((10, 1), 0.35), np.ones((10, 1), dtype=np.int64))
        assert internal_consistency(m, samples, spec) == 0.0

    def test_empty_sample_list_raises(self):
        m = two_mode_toy()
        empty = SampleBatch(np.zeros((0, 1)), np.zeros((0, 1), dtype=np.int64))
        with pytest.raises(ValueError):
            internal_consistency(m, empty, ConditioningSpec(1, (0,), (1,)))
