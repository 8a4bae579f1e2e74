import itertools
import math

import numpy as np
import pytest

from circuitloss.compiler import compile_formula
from circuitloss.formula import CategoricalSpace, exactly_one, latin_square
from circuitloss.models import (FactorizedModel, MarkovARModel, ModelError,
                                TrainConfig, TrainExample, TrainingError,
                                cross_entropy_and_grad,
                                exact_constraint_probability, psl_and_grad,
                                read_model, semantic_loss_and_grad,
                                train_toy, write_model)
from circuitloss.pseudo import psl_loss_for_samples
from circuitloss.wmc import WeightMap, semantic_loss

from conftest import rand_factorized, rand_markov, space_constraint


class TestLogJoint:
    def test_uniform_factorized(self):
        space = CategoricalSpace(3, 2)
        m = FactorizedModel.uniform(space)
        for seq in itertools.product(range(2), repeat=3):
            assert m.log_joint(seq) == pytest.approx(math.log(1 / 8))

    def test_markov_window_zero_equals_factorized(self):
        rng = np.random.default_rng(0)
        space = CategoricalSpace(4, 3)
        logits = rng.normal(size=(4, 3))
        fact = FactorizedModel(space, logits)
        markov = MarkovARModel(space, 0, [logits[i][None, :] for i in range(4)])
        for seq in itertools.product(range(3), repeat=4):
            assert markov.log_joint(seq) == pytest.approx(fact.log_joint(seq),
                                                          abs=1e-12)

    def test_normalization_exhaustive(self):
        rng = np.random.default_rng(1)
        space = CategoricalSpace(3, 2)
        m = rand_markov(rng, space, window=2)
        total = sum(math.exp(m.log_joint(seq))
                    for seq in itertools.product(range(2), repeat=3))
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_invalid_sequence_rejected(self):
        m = FactorizedModel.uniform(CategoricalSpace(2, 2))
        with pytest.raises(ModelError):
            m.log_joint((0, 5))
        with pytest.raises(ModelError):
            m.log_joint((0,))


class TestSample:
    def test_degenerate_distribution(self):
        space = CategoricalSpace(3, 2)
        logits = np.zeros((3, 2))
        logits[:, 1] = -1e9
        m = FactorizedModel(space, logits)
        rng = np.random.default_rng(0)
        for _ in range(20):
            assert m.sample(rng).categories == (0, 0, 0)

    def test_same_seed_same_sequence(self):
        rng_pair = (np.random.default_rng(77), np.random.default_rng(77))
        m = rand_markov(np.random.default_rng(5), CategoricalSpace(4, 3), 2)
        a = [m.sample(rng_pair[0]).categories for _ in range(10)]
        b = [m.sample(rng_pair[1]).categories for _ in range(10)]
        assert a == b

    def test_frequencies_match_exact_probabilities(self):
        rng = np.random.default_rng(6)
        space = CategoricalSpace(2, 2)
        m = rand_markov(rng, space, window=1)
        n = 100_000
        counts = {}
        sample_rng = np.random.default_rng(123)
        for _ in range(n):
            seq = m.sample(sample_rng).categories
            counts[seq] = counts.get(seq, 0) + 1
        for seq in itertools.product(range(2), repeat=2):
            p = math.exp(m.log_joint(seq))
            se = math.sqrt(p * (1 - p) / n)
            assert abs(counts.get(seq, 0) / n - p) <= 4 * se

    def test_chain_rule_consistency(self):
        rng = np.random.default_rng(7)
        m = rand_markov(rng, CategoricalSpace(5, 3), 2)
        draw_rng = np.random.default_rng(9)
        for _ in range(20):
            a, lp = m.sample_with_logprob(draw_rng)
            assert lp == pytest.approx(m.log_joint(a), abs=1e-12)


class TestModelFiles:
    def test_factorized_roundtrip(self):
        m = rand_factorized(np.random.default_rng(2), CategoricalSpace(3, 4))
        m2 = read_model(write_model(m))
        assert isinstance(m2, FactorizedModel)
        assert np.array_equal(m.logits, m2.logits)

    def test_markov_roundtrip(self):
        m = rand_markov(np.random.default_rng(3), CategoricalSpace(4, 2), 2)
        m2 = read_model(write_model(m))
        assert isinstance(m2, MarkovARModel)
        assert m2.window == 2
        for a, b in zip(m.logits, m2.logits):
            assert np.array_equal(a, b)

    def test_errors(self):
        with pytest.raises(ModelError, match="header"):
            read_model("wrong fmt\n")
        with pytest.raises(ModelError, match="expected 2 logits"):
            read_model("model factorized n=1 k=2 m=0\n0.0 0.0 0.0\n")
        with pytest.raises(ModelError):
            read_model("model markov n=3 k=2 m=1\n0.0 0.0\n")


class TestGradients:
    def test_cross_entropy_matches_differences(self):
        rng = np.random.default_rng(4)
        space = CategoricalSpace(3, 2)
        m = rand_markov(rng, space, 1)
        data = [TrainExample((False, True, False), (0, 1, 1)),
                TrainExample((False, False, False), (1, 0, 1))]
        ce, grads = cross_entropy_and_grad(m, data)
        eps = 1e-6
        for slot in range(m.slot_count()):
            for c in range(2):
                row = m.slot_logits(slot)
                row[c] += eps
                up = cross_entropy_and_grad(m, data)[0]
                row[c] -= 2 * eps
                dn = cross_entropy_and_grad(m, data)[0]
                row[c] += eps
                assert grads[slot][c] == pytest.approx((up - dn) / (2 * eps),
                                                       rel=1e-5, abs=1e-9)

    def test_semantic_loss_grad_matches_differences(self):
        rng = np.random.default_rng(5)
        space = CategoricalSpace(3, 2)
        f = space_constraint(rng, space)
        circ = compile_formula(f)
        m = rand_factorized(rng, space)

        def loss_of(model):
            return semantic_loss(
                circ, WeightMap.from_probs(model.marginals().reshape(-1)))

        loss, grads = semantic_loss_and_grad(circ, m)
        assert loss == pytest.approx(loss_of(m), abs=1e-12)
        eps = 1e-6
        for i in range(3):
            for c in range(2):
                m.logits[i, c] += eps
                up = loss_of(m)
                m.logits[i, c] -= 2 * eps
                dn = loss_of(m)
                m.logits[i, c] += eps
                assert grads[i][c] == pytest.approx((up - dn) / (2 * eps),
                                                    rel=1e-5, abs=1e-9)

    def test_combined_objective_grad_matches_differences(self):
        lam, ce_w = 0.7, 1.0
        rng = np.random.default_rng(14)
        space = CategoricalSpace(3, 2)
        f = space_constraint(rng, space)
        circ = compile_formula(f)
        m = rand_markov(rng, space, 1)
        data = [TrainExample((False,) * 3, (0, 1, 0))]
        samples = [m.sample(np.random.default_rng(1)) for _ in range(2)]

        def objective():
            ce = cross_entropy_and_grad(m, data)[0]
            psl = psl_loss_for_samples(circ, m, samples, space).loss
            return ce_w * ce + lam * psl

        _, ce_g = cross_entropy_and_grad(m, data)
        res, psl_g = psl_and_grad(circ, m, samples)
        if res.infinite:
            pytest.skip("degenerate draw")
        eps = 1e-5
        for slot in range(m.slot_count()):
            for c in range(2):
                row = m.slot_logits(slot)
                row[c] += eps
                up = objective()
                row[c] -= 2 * eps
                dn = objective()
                row[c] += eps
                analytic = ce_w * ce_g[slot][c] + lam * psl_g[slot][c]
                fd = (up - dn) / (2 * eps)
                assert analytic == pytest.approx(fd, rel=1e-4, abs=1e-7)

    def test_psl_grad_matches_differences_markov(self):
        rng = np.random.default_rng(6)
        space = CategoricalSpace(3, 2)
        f = space_constraint(rng, space)
        circ = compile_formula(f)
        m = rand_markov(rng, space, 1)
        samples = [m.sample(np.random.default_rng(3)) for _ in range(2)]
        res, grads = psl_and_grad(circ, m, samples)
        if res.infinite:
            pytest.skip("degenerate draw")
        eps = 1e-6
        for slot in range(m.slot_count()):
            for c in range(2):
                row = m.slot_logits(slot)
                row[c] += eps
                up = psl_loss_for_samples(circ, m, samples, space).loss
                row[c] -= 2 * eps
                dn = psl_loss_for_samples(circ, m, samples, space).loss
                row[c] += eps
                assert grads[slot][c] == pytest.approx((up - dn) / (2 * eps),
                                                       rel=1e-4, abs=1e-8)


class TestTrainToy:
    def test_point_mass_maximum_likelihood(self):
        space = CategoricalSpace(3, 2)
        m = MarkovARModel.uniform(space, 1)
        data = [TrainExample((False,) * 3, (1, 0, 1))]
        cfg = TrainConfig(step_size=0.5, steps=2000, psl_weight=0.0,
                          ce_weight=1.0, seed=0, log_every=1000)
        res = train_toy(m, None, data, cfg)
        assert math.exp(res.model.log_joint((1, 0, 1))) >= 0.99

    def test_constraint_only_training_reaches_high_probability(self):
        space = CategoricalSpace(1, 2)
        circ = compile_formula(exactly_one([0, 1]))
        m = FactorizedModel.uniform(space)
        cfg = TrainConfig(step_size=0.5, steps=500, psl_weight=1.0,
                          ce_weight=0.0, seed=3, log_every=100)
        res = train_toy(m, circ, [], cfg)
        assert res.metrics[-1]["constraint_probability"] >= 0.99

    def test_context_mask_freezes_given_positions(self):
        space = CategoricalSpace(2, 2)
        m = FactorizedModel.uniform(space)
        data = [TrainExample((True, False), (1, 1))]
        res = train_toy(m, None, data,
                        TrainConfig(step_size=0.5, steps=50, seed=0))
        assert np.array_equal(res.model.logits[0], np.zeros(2))
        assert not np.array_equal(res.model.logits[1], np.zeros(2))

    def test_constraint_weight_improves_consistency(self):
        tpl = latin_square(2)
        circ = compile_formula(tpl.formula)
        data = [TrainExample((False,) * 4, t)
                for t in ((0, 1, 1, 0), (1, 0, 0, 1), (0, 1, 1, 1),
                          (1, 0, 0, 0))]
        rates = {}
        for lam in (0.0, 0.5):
            m = MarkovARModel.uniform(tpl.space, 1)
            cfg = TrainConfig(step_size=0.3, steps=400, psl_weight=lam,
                              ce_weight=1.0, seed=11, log_every=400,
                              consistency_samples=400)
            rates[lam] = train_toy(m, circ, data, cfg).metrics[-1][
                "consistency_rate"]
        assert rates[0.5] > rates[0.0]

    def test_metrics_record_probability_and_consistency(self):
        space = CategoricalSpace(1, 2)
        circ = compile_formula(exactly_one([0, 1]))
        m = FactorizedModel.uniform(space)
        res = train_toy(m, circ, [],
                        TrainConfig(step_size=0.1, steps=3, psl_weight=1.0,
                                    ce_weight=0.0, seed=0, log_every=1))
        for row in res.metrics:
            assert 0.0 <= row["constraint_probability"] <= 1.0
            assert 0.0 <= row["consistency_rate"] <= 1.0

    def test_non_finite_gradient_aborts(self):
        space = CategoricalSpace(2, 2)
        m = FactorizedModel(space, np.array([[0.0, math.inf], [0.0, 0.0]]))
        data = [TrainExample((False, False), (0, 0))]
        with pytest.raises(TrainingError, match="non-finite"):
            train_toy(m, None, data, TrainConfig(step_size=0.1, steps=2,
                                                 seed=0))

    def test_training_is_deterministic(self):
        space = CategoricalSpace(2, 2)
        rng = np.random.default_rng(8)
        f = space_constraint(rng, space, n_clauses=2)
        circ = compile_formula(f)
        runs = []
        for _ in range(2):
            m = MarkovARModel.uniform(space, 1)
            res = train_toy(m, circ, [],
                            TrainConfig(step_size=0.2, steps=40,
                                        psl_weight=1.0, ce_weight=0.0,
                                        seed=21, log_every=10))
            runs.append(write_model(res.model))
        assert runs[0] == runs[1]


class TestExactProbability:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(9)
        space = CategoricalSpace(3, 2)
        f = space_constraint(rng, space)
        circ = compile_formula(f)
        m = rand_markov(rng, space, 1)
        from circuitloss.formula import evaluate
        expected = sum(
            math.exp(m.log_joint(seq))
            for seq in itertools.product(range(2), repeat=3)
            if evaluate(f, space.assignment(seq)))
        assert exact_constraint_probability(circ, m) == pytest.approx(
            expected, abs=1e-12)
        assert exact_constraint_probability(f, m) == pytest.approx(
            expected, abs=1e-12)
