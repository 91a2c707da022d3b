import numpy as np
import pytest

from conftest import constant_model
from ghostquery import diffusion as df
from ghostquery.denoiser import ModelDims, forward, init_model
from ghostquery.errors import EmptyInput, InvalidSchedule, InvalidSpec, InvalidStep, ShapeError
from ghostquery.latentdata import CondSeq, Corpus, CorpusItem, SynthSpec, gen_corpus
from ghostquery.numerics import SeededRng


class TestSchedule:
    def test_hand_product(self):
        sched = df.build_schedule(2, 0.1, 0.2)
        assert np.allclose(sched.beta, [0.1, 0.2])
        assert np.allclose(sched.alpha_bar, [0.9, 0.72])

    def test_default_monotone(self):
        sched = df.build_schedule()
        assert sched.N == 50
        assert np.all(np.diff(sched.alpha_bar) < 0)
        assert 0 < sched.alpha_bar[-1] < 1
        assert sched.alpha_bar_at(0) == 1.0

    @pytest.mark.parametrize("args", [(1, 0.1, 0.2), (10, 0.0, 0.2), (10, 0.3, 0.2), (10, 0.1, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(InvalidSchedule):
            df.build_schedule(*args)

    def test_digest_changes_with_params(self):
        assert df.build_schedule().digest() != df.build_schedule(40).digest()


class TestAddNoise:
    def test_zero_noise(self):
        sched = df.build_schedule()
        z0 = SeededRng(0, 0).generator().standard_normal((4, 3))
        out = df.add_noise(z0, 10, np.zeros_like(z0), sched)
        assert np.allclose(out, np.sqrt(sched.alpha_bar[9]) * z0)

    def test_small_noise_limit(self):
        sched = df.build_schedule(50, 1e-6, 1e-5)
        z0 = np.ones((2, 2))
        out = df.add_noise(z0, 1, np.ones_like(z0), sched)
        assert np.allclose(out, z0, atol=2e-3)

    def test_monte_carlo_variance(self):
        sched = df.build_schedule()
        tau = 25
        gen = SeededRng(1, 0).generator()
        z0 = np.zeros((1, 1))
        draws = np.array(
            [df.add_noise(z0, tau, gen.standard_normal((1, 1)), sched)[0, 0] for _ in range(10_000)]
        )
        target = 1.0 - sched.alpha_bar[tau - 1]
        assert abs(draws.var() - target) / target < 0.05

    def test_variance_monotone_in_tau(self):
        sched = df.build_schedule()
        variances = 1.0 - sched.alpha_bar
        assert np.all(np.diff(variances) > 0)

    def test_shape_mismatch(self):
        sched = df.build_schedule()
        with pytest.raises(ShapeError):
            df.add_noise(np.ones((2, 2)), 1, np.ones((3, 2)), sched)

    def test_step_out_of_range(self):
        sched = df.build_schedule()
        with pytest.raises(InvalidStep):
            df.add_noise(np.ones((2, 2)), 0, np.ones((2, 2)), sched)


class TestGuidance:
    @pytest.fixture()
    def setup(self):
        model = init_model("seqattn", ModelDims(4, 4, 8), seed=3)
        gen = SeededRng(3, 0).generator()
        z = gen.standard_normal((3, 4))
        cond = CondSeq(gen.standard_normal((2, 4)))
        other = CondSeq(gen.standard_normal((2, 4)))
        return model, z, cond, other

    def test_w_zero_is_conditional_forward_bitwise(self, setup):
        model, z, cond, _ = setup
        out = df.guided_prediction(model, z, 5, df.GuidanceSpec(0.0, cond))
        assert np.array_equal(out, forward(model, z, 5, cond))

    def test_equal_pos_neg_is_w_invariant(self, setup):
        model, z, cond, _ = setup
        outs = [
            df.guided_prediction(model, z, 5, df.GuidanceSpec(w, cond, cond))
            for w in (0.0, 1.0, 3.5, 10.0)
        ]
        for out in outs[1:]:
            assert np.array_equal(out, outs[0])
        assert np.array_equal(outs[0], forward(model, z, 5, cond))

    def test_null_negative_is_plain_cfg(self, setup):
        model, z, cond, _ = setup
        w = 2.0
        out = df.guided_prediction(model, z, 5, df.GuidanceSpec(w, cond))
        expected = (1 + w) * forward(model, z, 5, cond) - w * forward(
            model, z, 5, CondSeq.null(4)
        )
        assert np.array_equal(out, expected)

    def test_explicit_negative_changes_prediction(self, setup):
        model, z, cond, other = setup
        a = df.guided_prediction(model, z, 5, df.GuidanceSpec(2.0, cond))
        b = df.guided_prediction(model, z, 5, df.GuidanceSpec(2.0, cond, other))
        assert not np.allclose(a, b)

    def test_negative_w_rejected(self, setup):
        _, _, cond, _ = setup
        with pytest.raises(InvalidSpec):
            df.GuidanceSpec(-0.5, cond)


class TestDdimStep:
    def test_to_zero_returns_prediction(self):
        sched = df.build_schedule()
        gen = SeededRng(4, 0).generator()
        z, z0_hat = gen.standard_normal((2, 3, 4))
        assert np.array_equal(df.ddim_step(z, z0_hat, 1, 0, sched), z0_hat)

    @pytest.mark.parametrize("pair", [(5, 2), (2, 5), (50, 1), (1, 50)])
    def test_pair_inverse(self, pair):
        sched = df.build_schedule()
        gen = SeededRng(5, 0).generator()
        z, z0_hat = gen.standard_normal((2, 3, 4))
        a, b = pair
        there = df.ddim_step(z, z0_hat, a, b, sched)
        back = df.ddim_step(there, z0_hat, b, a, sched)
        assert np.linalg.norm(back - z) / np.linalg.norm(z) <= 1e-10

    def test_hand_checked_against_raw_formula(self):
        sched = df.build_schedule(2, 0.1, 0.2)  # alpha_bar = (0.9, 0.72)
        z = np.array([[1.0, -2.0]])
        # independent recomputation from the raw numbers
        eps_hat = (z - np.sqrt(0.9) * z) / np.sqrt(1 - 0.9)
        expected = np.sqrt(0.72) * z + np.sqrt(1 - 0.72) * eps_hat
        assert np.allclose(df.ddim_step(z, z, 1, 2, sched), expected, atol=1e-12)

    def test_from_anchor_rejected(self):
        sched = df.build_schedule()
        z = np.ones((2, 2))
        with pytest.raises(InvalidStep):
            df.ddim_step(z, z, 0, 1, sched)

    def test_equal_steps_rejected(self):
        sched = df.build_schedule()
        z = np.ones((2, 2))
        with pytest.raises(InvalidStep):
            df.ddim_step(z, z, 3, 3, sched)

    def test_out_of_range_rejected(self):
        sched = df.build_schedule()
        z = np.ones((2, 2))
        with pytest.raises(InvalidStep):
            df.ddim_step(z, z, 51, 50, sched)


class TestSample:
    def test_constant_model_returns_constant(self):
        model, c0 = constant_model()
        sched = df.build_schedule()
        cond = CondSeq(SeededRng(6, 0).generator().standard_normal((2, 4)))
        for z in df.sample(model, df.GuidanceSpec(0.0, cond), 3, sched, seed=1, frames=5):
            assert np.array_equal(z, np.tile(c0, (5, 1)))

    def test_seed_reproducible(self):
        model = init_model("seqattn", ModelDims(4, 4, 8), seed=7)
        sched = df.build_schedule()
        cond = CondSeq(SeededRng(7, 0).generator().standard_normal((2, 4)))
        g = df.GuidanceSpec(1.0, cond)
        a = df.sample(model, g, 2, sched, seed=5, frames=3)
        b = df.sample(model, g, 2, sched, seed=5, frames=3)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_queries_independent_across_streams(self):
        model = init_model("seqattn", ModelDims(4, 4, 8), seed=7)
        sched = df.build_schedule()
        cond = CondSeq(SeededRng(7, 1).generator().standard_normal((2, 4)))
        a, b = df.sample(model, df.GuidanceSpec(1.0, cond), 2, sched, seed=5, frames=3)
        assert not np.array_equal(a, b)

    def test_rejects_bad_args(self):
        model = init_model("seqattn", ModelDims(4, 4, 8), seed=7)
        sched = df.build_schedule()
        cond = CondSeq(np.ones((1, 4)))
        with pytest.raises(InvalidSpec):
            df.sample(model, df.GuidanceSpec(1.0, cond), 0, sched, seed=1, frames=3)
        with pytest.raises(InvalidSpec):
            df.sample(model, df.GuidanceSpec(1.0, CondSeq.null(4)), 1, sched, seed=1, frames=3)


class TestInvertEdit:
    def test_exact_round_trip_any_input(self):
        model, _ = constant_model()
        sched = df.build_schedule()
        gen = SeededRng(8, 0).generator()
        z0 = gen.standard_normal((4, 6))
        cond = CondSeq(gen.standard_normal((2, 4)))
        for k in (1, 20, 50):
            back = df.edit(model, z0, df.GuidanceSpec(0.0, cond), k, sched, cond_original=cond)
            assert np.linalg.norm(back - z0) / np.linalg.norm(z0) <= 1e-9

    def test_depth_guards(self):
        model, _ = constant_model()
        sched = df.build_schedule()
        z0 = np.ones((2, 6))
        with pytest.raises(InvalidStep):
            df.invert(model, z0, CondSeq.null(4), 0, sched)
        with pytest.raises(InvalidStep):
            df.invert(model, z0, CondSeq.null(4), 51, sched)

    def test_pivot_moves_toward_noise_scale(self):
        # lifting an in-distribution latent should grow its norm along eps_hat
        model, _ = constant_model()
        sched = df.build_schedule()
        z0 = np.zeros((3, 6)) + 0.1
        piv = df.invert(model, z0, CondSeq.null(4), 50, sched)
        assert piv.shape == z0.shape
        assert not np.allclose(piv, z0)

    def test_full_renoise_uses_guidance_on_way_down(self):
        model = init_model("seqattn", ModelDims(4, 4, 8), seed=9)
        sched = df.build_schedule()
        gen = SeededRng(9, 0).generator()
        z0 = gen.standard_normal((3, 4))
        cond_a = CondSeq(gen.standard_normal((2, 4)))
        cond_b = CondSeq(gen.standard_normal((2, 4)))
        a = df.edit(model, z0, df.GuidanceSpec(1.0, cond_a), 20, sched, cond_original=cond_a)
        b = df.edit(model, z0, df.GuidanceSpec(1.0, cond_b), 20, sched, cond_original=cond_a)
        assert not np.allclose(a, b)


def small_corpus(**kwargs):
    spec = dict(n_genres=2, n_instruments=2, d_a=8, d_t=6, T=4, items_per_cell=6, seed=13)
    spec.update(kwargs)
    return gen_corpus(SynthSpec(**spec))


class TestTrain:
    def test_lr_schedule_shape(self):
        cfg = df.TrainConfig(steps=100, warmup_steps=10, lr_peak=1e-3)
        assert df.lr_at(5, cfg) == pytest.approx(5e-4)
        assert df.lr_at(10, cfg) == pytest.approx(1e-3)
        assert df.lr_at(100, cfg) == pytest.approx(0.0, abs=1e-12)
        assert df.lr_at(55, cfg) == pytest.approx(1e-3 * 0.5 * (1 + np.cos(np.pi * 0.5)))

    def test_config_guards(self):
        with pytest.raises(InvalidSpec):
            df.TrainConfig(cond_mask_prob=1.5)
        with pytest.raises(InvalidSpec):
            df.TrainConfig(warmup_steps=10, steps=5)
        with pytest.raises(InvalidSpec):
            df.TrainConfig(objective="flow")

    def test_deterministic_under_seed(self):
        corpus = small_corpus()
        sched = df.build_schedule(10)
        cfg = df.TrainConfig(steps=30, warmup_steps=5, batch=8, seed=4, eval_every=10)
        m0 = init_model("pooledmlp", ModelDims(8, 6, 16), seed=1)
        a, _ = df.train(m0, corpus, sched, cfg)
        b, _ = df.train(m0, corpus, sched, cfg)
        assert np.array_equal(a.params, b.params)

    def test_full_masking_makes_training_cond_blind(self):
        corpus = small_corpus()
        # same corpus with scrambled conditioning content
        scrambled_items = [
            CorpusItem(
                id=it.id,
                audio=it.audio,
                cond=CondSeq(it.cond.tokens[:, ::-1].copy()),
                labels=it.labels,
                split=it.split,
            )
            for it in corpus.items
        ]
        scrambled = Corpus(
            d_a=corpus.d_a, d_t=corpus.d_t, default_T=corpus.default_T,
            items=scrambled_items, provenance={"kind": "import"},
        )
        sched = df.build_schedule(10)
        cfg = df.TrainConfig(steps=25, warmup_steps=5, batch=8, seed=5, cond_mask_prob=1.0)
        m0 = init_model("seqattn", ModelDims(8, 6, 16), seed=2)
        a, _ = df.train(m0, corpus, sched, cfg)
        b, _ = df.train(m0, scrambled, sched, cfg)
        assert np.array_equal(a.params, b.params)

    def test_regression_models_sample_deterministically(self):
        corpus = small_corpus()
        sched = df.build_schedule(10)
        cfg = df.TrainConfig(objective="regression", steps=60, warmup_steps=10, batch=8, seed=6)
        model, _ = df.train(init_model("seqattn", ModelDims(8, 6, 16), seed=3), corpus, sched, cfg)
        assert model.objective == "regression"
        cond = corpus.items[0].cond
        qs = df.sample(model, df.GuidanceSpec(1.0, cond), 4, sched, seed=1, frames=4)
        for q in qs[1:]:
            assert np.array_equal(q, qs[0])
        # and different seeds change nothing (no noise path)
        qs2 = df.sample(model, df.GuidanceSpec(1.0, cond), 1, sched, seed=999, frames=4)
        assert np.array_equal(qs2[0], qs[0])

    def test_epsilon_objective_trains(self):
        corpus = small_corpus()
        sched = df.build_schedule(10)
        cfg = df.TrainConfig(objective="epsilon", steps=120, warmup_steps=20, batch=16, seed=7)
        model, report = df.train(
            init_model("pooledmlp", ModelDims(8, 6, 32), seed=4), corpus, sched, cfg
        )
        losses = report.train_losses()
        assert losses[-1] < losses[0]

    def test_early_stopping_on_flat_validation(self):
        corpus = small_corpus()
        sched = df.build_schedule(10)
        cfg = df.TrainConfig(
            steps=400, warmup_steps=0, lr_peak=0.0, batch=4, seed=8,
            eval_every=20, patience=3,
        )
        _, report = df.train(init_model("pooledmlp", ModelDims(8, 6, 16), seed=5), corpus, sched, cfg)
        # first eval sets the best; the next `patience` evals never improve
        assert report.early_stop_step == 20 * (3 + 1)
        assert report.final_val_loss is not None

    def test_requires_train_split(self):
        corpus = small_corpus()
        for it in corpus.items:
            object.__setattr__(it, "split", "test")
        sched = df.build_schedule(10)
        with pytest.raises(EmptyInput):
            df.train(
                init_model("pooledmlp", ModelDims(8, 6, 16), seed=5),
                corpus, sched, df.TrainConfig(steps=5, warmup_steps=0),
            )

    def test_desk_training_halves_loss(self, desk_model):
        _, report, _ = desk_model
        losses = report.train_losses()
        assert losses[-1] < 0.5 * losses[0]

    def test_train_log_entries_well_formed(self, desk_model):
        _, report, _ = desk_model
        steps = [e["step"] for e in report.curve]
        assert steps == sorted(steps)
        assert all(np.isfinite(e["loss"]) for e in report.curve)
        assert {"train", "val"} == {e["split"] for e in report.curve}
