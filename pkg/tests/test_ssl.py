import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relimp.autodiff import Tape, Tensor
from relimp.layers import bind
from relimp.model import ModelConfig, collate, forward, init_params, scene_arrays
from relimp.ssl import (GammaSchedule, LossWeights, aux_loss, case_weight, entropy, gamma_at,
                        generate_pseudo_labels, importance_bce, object_weights, pseudo_label_scene,
                        pseudo_term, supervised_loss, unlabeled_loss)
from relimp.synth import GenConfig, generate_dataset


def brute_force_pseudo(scores, a1, a2):
    """Object-by-object restatement of the two-stage rule, written without numpy masks."""
    out = []
    pending = []
    for j, s in enumerate(scores):
        if s > a1:
            out.append(1)
        elif s < 1 - a1:
            out.append(0)
        else:
            out.append(None)
            pending.append(j)
    if pending:
        top = max(scores[j] for j in pending)
        for j in pending:
            out[j] = 1 if top > 0 and scores[j] / top > a2 else 0
    return out


class TestPseudoLabels:
    def test_stage_one_only(self):
        assert generate_pseudo_labels([0.9, 0.1], 0.8, 0.8).tolist() == [1, 0]

    def test_two_stage_trace(self):
        assert generate_pseudo_labels([0.9, 0.1, 0.5, 0.6], 0.8, 0.8).tolist() == [1, 0, 1, 1]

    def test_stage_two_promotes_max(self):
        assert generate_pseudo_labels([0.5, 0.25], 0.8, 0.8).tolist() == [1, 0]

    def test_zero_max_unresolved(self):
        # alpha1 = 0.5 leaves exact 0.5 ... only values in [0.5, 0.5] unresolved; use a wider band
        assert generate_pseudo_labels([0.0, 0.0], 0.99, 0.8).tolist() == [0, 0]

    def test_boundaries_are_strict(self):
        assert generate_pseudo_labels([0.8, 0.2], 0.8, 0.8).tolist() == [1, 0]  # both unresolved
        assert generate_pseudo_labels([0.8, 0.64], 0.8, 0.8).tolist() == [1, 0]  # ratio exactly 0.8

    def test_errors(self):
        with pytest.raises(ValueError):
            generate_pseudo_labels([])
        with pytest.raises(ValueError):
            generate_pseudo_labels([1.2, 0.3])

    def test_randomized_against_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 13))
            kind = rng.integers(3)
            if kind == 0:
                s = rng.uniform(0, 1, n)
            elif kind == 1:
                s = rng.choice([0.0, 0.1, 0.2, 0.5, 0.64, 0.8, 0.9, 1.0], n)
            else:
                s = rng.beta(0.5, 0.5, n)
            a1 = float(rng.choice([0.5, 0.6, 0.7, 0.8, 0.9, rng.uniform(0.5, 1)]))
            a2 = float(rng.choice([0.5, 0.8, 1.0, rng.uniform(0.01, 1)]))
            assert generate_pseudo_labels(s, a1, a2).tolist() == brute_force_pseudo(list(s), a1, a2)

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.floats(0.5, 0.99), st.floats(0.01, 0.99))
    def test_unresolved_scene_gets_a_positive(self, s, a1, a2):
        y = generate_pseudo_labels(s, a1, a2)
        unresolved = [v for v in s if 1 - a1 <= v <= a1]
        if unresolved and max(unresolved) > 0:
            assert y.sum() >= 1

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.3, 0.7), min_size=2, max_size=8), st.floats(0.5, 1.0))
    def test_stage_two_depends_on_ratio_only(self, s, c):
        s = np.array(s)
        a = generate_pseudo_labels(s, 0.8, 0.8)
        b = generate_pseudo_labels(s * c, 0.8, 0.8) if np.all(s * c >= 0.2) else a
        np.testing.assert_array_equal(a, b)


class TestWeights:
    def test_uniform_scores(self):
        np.testing.assert_allclose(object_weights([0.3] * 4), 0.25, rtol=0, atol=1e-15)

    def test_two_scores(self):
        e = math.e
        np.testing.assert_allclose(object_weights([1.0, 0.0]), [e / (e + 1), 1 / (e + 1)], rtol=1e-15)

    def test_sums_to_one(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            w = object_weights(rng.uniform(size=rng.integers(1, 20)))
            assert abs(w.sum() - 1) < 1e-12 and np.all(w > 0)

    @pytest.mark.parametrize("n", range(2, 21))
    def test_uniform_case_weight_zero(self, n):
        assert abs(case_weight(np.full(n, 1.0 / n))) < 1e-12

    def test_degenerate_case_weight_one(self):
        assert case_weight([1 - 1e-9, 1e-9]) > 1 - 1e-7
        assert case_weight([1.0, 0.0, 0.0]) == 1.0

    def test_single_object(self):
        assert case_weight([1.0]) == 1.0

    def test_against_high_precision(self):
        w = object_weights([1.0, 0.0])
        mpmath.mp.dps = 50
        e = mpmath.e
        p = [e / (e + 1), 1 / (e + 1)]
        h = -sum(x * mpmath.log(x) for x in p)
        expected = 1 - h / mpmath.log(2)
        assert abs(case_weight(w) - float(expected)) < 1e-14
        assert abs(entropy(w) - float(h)) < 1e-15

    def test_random_vectors_in_unit_interval(self):
        rng = np.random.default_rng(2)
        for _ in range(10_000):
            n = int(rng.integers(1, 16))
            p = rng.dirichlet(np.full(n, rng.choice([0.05, 1.0, 20.0])))
            eps = case_weight(p)
            assert 0.0 <= eps <= 1.0

    def test_monotone_towards_one_hot(self):
        vals = [case_weight([1 - d, d / 2, d / 2]) for d in (0.6, 0.3, 0.1, 1e-3, 1e-8)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_pseudo_scene_switches(self):
        p = pseudo_label_scene(3, [0.9, 0.55, 0.3], ranking=False, weighting=False)
        assert p.pseudo_labels.tolist() == [1, 1, 0] and p.case_weight == 1.0
        np.testing.assert_allclose(p.weights, 1 / 3)
        q = pseudo_label_scene(3, [0.9, 0.55, 0.3])
        assert q.pseudo_labels.tolist() == [1, 1, 0] and 0 < q.case_weight < 1


class TestLosses:
    def test_bce_at_half(self):
        loss = importance_bce(np.array([[0.5]]), np.array([[1.0]]), np.array([[True]]))
        assert abs(loss.item() - math.log(2)) < 1e-15

    def test_perfect_predictions(self):
        mask = np.array([[True, True, False]])
        bce = importance_bce(np.array([[1.0, 0.0, 0.3]]), np.array([[1.0, 0.0, 0.0]]), mask)
        big = 50.0
        aux = aux_loss(np.array([[big, -big, -big, -big]]), np.array([0]), np.ones((1, 4, 2)), np.ones((1, 4, 2)), 1.0)
        assert bce.item() < 1e-5 and aux.item() < 1e-5

    def test_bce_masks_padding(self):
        s = np.array([[0.5, 0.9], [0.5, 0.5]])
        y = np.array([[1.0, 0.0], [0.0, 1.0]])
        mask = np.array([[True, False], [True, True]])
        assert abs(importance_bce(s, y, mask).item() - math.log(2)) < 1e-15

    def test_aux_uniform_logits(self):
        loss = aux_loss(np.zeros((2, 4)), np.array([1, 3]), np.zeros((2, 4, 2)), np.zeros((2, 4, 2)), 1.0)
        assert abs(loss.item() - math.log(4)) < 1e-15

    def test_aux_trajectory_scaling(self):
        loss = aux_loss(np.zeros((1, 4)), np.array([0]), np.zeros((1, 2, 2)), np.full((1, 2, 2), 10.0), 2.0, 10.0)
        assert abs(loss.item() - (math.log(4) + 2.0 * 4)) < 1e-12

    def test_pseudo_term_zero_at_target(self):
        s = np.array([[0.9, 0.2]])
        assert pseudo_term(s, s, np.array([[0.5, 0.5]]), np.array([0.7]), np.ones((1, 2), bool)).item() == 0.0

    def test_pseudo_term_uniform_scores(self):
        s = np.array([0.4, 0.4, 0.4])
        p = pseudo_label_scene(0, s)
        term = pseudo_term(s[None], np.array([[1, 0, 1]]), p.weights[None], np.array([p.case_weight]),
                           np.ones((1, 3), bool))
        assert abs(term.item()) < 1e-15

    def test_pseudo_term_plug_in(self):
        s = np.array([0.9, 0.1])
        w = object_weights(s)
        eps = case_weight(w)
        w1, w2 = math.exp(0.9) / (math.exp(0.9) + math.exp(0.1)), math.exp(0.1) / (math.exp(0.9) + math.exp(0.1))
        h = -(w1 * math.log(w1) + w2 * math.log(w2))
        expected = (1 - h / math.log(2)) * (w1 * 0.01 + w2 * 0.01)
        got = pseudo_term(s[None], np.array([[1, 0]]), w[None], np.array([eps]), np.ones((1, 2), bool)).item()
        assert abs(got - expected) < 1e-15

    def test_pseudo_term_has_no_gradient_into_targets(self):
        tape = Tape()
        with tape:
            s = tape.leaf(np.array([[0.7, 0.2]]))
            loss = pseudo_term(s, np.array([[1, 0]]), np.array([[0.6, 0.4]]), np.array([0.5]), np.ones((1, 2), bool))
        g = tape.backward(loss)[s]
        np.testing.assert_allclose(g, 0.5 * 2 * np.array([[0.6 * -0.3, 0.4 * 0.2]]), rtol=1e-14)

    def test_missing_labels(self):
        with pytest.raises(ValueError):
            unlabeled_loss(None, None, None, None, None, LossWeights())

    def test_loss_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(lam=-1)


@pytest.fixture(scope="module")
def small_batch():
    ds = generate_dataset(GenConfig(scene_count=4, seed=2))
    return collate([scene_arrays(s) for s in ds.labeled])


def test_lambda_zero_gives_importance_only_gradient(small_batch):
    cfg = ModelConfig.desk()
    params = init_params(cfg, 0)
    grads = []
    for full in (True, False):
        tape = Tape()
        with tape:
            P = bind(params, tape)
            fw = forward(P, small_batch, cfg, rng=np.random.default_rng(0))
            if full:
                loss = supervised_loss(fw, small_batch, LossWeights(lam=0.0))
            else:
                loss = importance_bce(fw.scores, small_batch.importance, small_batch.mask)
        g = tape.backward(loss)
        grads.append({k: g[P[k]] for k in params if k.startswith("enc.")})
    for k in grads[0]:
        np.testing.assert_array_equal(grads[0][k], grads[1][k])


def test_loss_terms_non_negative_and_finite(small_batch):
    cfg = ModelConfig.desk()
    P = bind(init_params(cfg, 1))
    fw = forward(P, small_batch, cfg, rng=np.random.default_rng(1))
    assert 0 <= supervised_loss(fw, small_batch, LossWeights(), cfg.traj_scale).item() < np.inf
    B, N = small_batch.mask.shape
    y = np.zeros((B, N))
    w = small_batch.mask / small_batch.mask.sum(1, keepdims=True)
    assert 0 <= unlabeled_loss(fw, small_batch, y, w, np.ones(B), LossWeights(), cfg.traj_scale).item() < np.inf


class TestGamma:
    def test_start_and_end(self):
        sch = GammaSchedule(ramp=500)
        assert gamma_at(0, sch) == 0.001
        assert gamma_at(500, sch) == 1.0 and gamma_at(10_000, sch) == 1.0

    def test_midpoint_geometric(self):
        assert abs(gamma_at(250, GammaSchedule(ramp=500)) - math.sqrt(0.001)) < 1e-15

    @pytest.mark.parametrize("shape", ["exponential", "linear"])
    def test_monotone_and_bounded(self, shape):
        sch = GammaSchedule(init=0.001, max=1.0, ramp=333, shape=shape)
        g = [gamma_at(t, sch) for t in range(400)]
        assert all(b >= a for a, b in zip(g, g[1:]))
        assert max(g) <= 1.0

    def test_linear_from_zero(self):
        sch = GammaSchedule(init=0.0, max=1.0, ramp=10, shape="linear")
        assert gamma_at(0, sch) == 0.0 and gamma_at(5, sch) == 0.5

    def test_errors(self):
        with pytest.raises(ValueError):
            gamma_at(-1)
        with pytest.raises(ValueError):
            GammaSchedule(shape="cosine")
        with pytest.raises(ValueError):
            GammaSchedule(init=0.0)
