import math
import os
import sys
import unittest

# Add the project root to the path
project_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.insert(0, project_root)

from core.exceptions import ScoringError, ValidationError
from core.scoring import (PosteriorSample, ScoringItem, WeightedSampleSet, argmax_lowest, exploration_reward,
                          exploration_rewards, first_layer_items, kl_divergence, pick_best, prompt_score_first_layer,
                          prompt_score_second_layer, second_layer_items, sharpen, weighted_prompt_score,
                          weighted_prompt_scores)
from core.templates import load, load_named
from tests.fakes import ScriptedModel, keyword_score

FORWARD = load("template: '{{ prompt }} | {{ input }}'", name="forward")


class TestSharpen(unittest.TestCase):

    def test_weights_form_a_distribution(self):
        weights = sharpen([(-1.0, -2.0), (-0.5, -0.5), (-3.0, 0.0)], 1.0)
        self.assertAlmostEqual(sum(weights), 1.0, places=12)
        self.assertEqual(argmax_lowest(weights), 1)

    def test_matches_softmax_of_joint(self):
        weights = sharpen([(0.0, math.log(1.0)), (0.0, math.log(3.0))], 1.0)
        self.assertAlmostEqual(weights[0], 0.25)
        self.assertAlmostEqual(weights[1], 0.75)

    def test_zero_alpha_is_uniform(self):
        for weight in sharpen([(-1.0, -9.0), (-4.0, 0.0), (0.0, 0.0)], 0.0):
            self.assertAlmostEqual(weight, 1 / 3)

    def test_large_alpha_is_one_hot_without_overflow(self):
        weights = sharpen([(-1.0, -1.0), (-1.5, -1.0), (-900.0, -900.0)], 1e6)
        self.assertEqual(weights, [1.0, 0.0, 0.0])

    def test_rejects_bad_input(self):
        with self.assertRaises(ScoringError):
            sharpen([], 1.0)
        with self.assertRaises(ScoringError):
            sharpen([(float("nan"), 0.0)], 1.0)
        with self.assertRaises(ScoringError):
            sharpen([(0.0, float("-inf"))], 1.0)
        with self.assertRaises(ScoringError):
            sharpen([(0.0, 0.0)], -1.0)


class TestWeightedSampleSet(unittest.TestCase):

    def test_build_and_best(self):
        samples = [PosteriorSample("a", -2.0, -2.0), PosteriorSample("b", -1.0, -1.0, "q_pri_plus")]
        sample_set = WeightedSampleSet.build(samples, 1.0)
        self.assertEqual(len(sample_set), 2)
        self.assertEqual(sample_set.best_hidden(), "b")
        self.assertAlmostEqual(sum(w for _, w in sample_set.weighted_hiddens()), 1.0)
        self.assertEqual(sample_set.to_dict()["samples"][1]["component"], "q_pri_plus")

    def test_invalid_weights(self):
        samples = (PosteriorSample("a", 0.0, 0.0),)
        with self.assertRaises(ScoringError):
            WeightedSampleSet(samples=samples, alpha_sharp=1.0, weights=(0.5,))
        with self.assertRaises(ScoringError):
            WeightedSampleSet(samples=samples, alpha_sharp=1.0, weights=(0.5, 0.5))

    def test_empty_hidden_rejected(self):
        with self.assertRaises(ValidationError):
            PosteriorSample("   ", 0.0, 0.0)


class TestPickBest(unittest.TestCase):

    def test_lowest_index_wins_ties(self):
        self.assertEqual(pick_best([1.0, 3.0, 3.0], ["a", "b", "c"]), 1)
        self.assertEqual(argmax_lowest([2.0, 2.0]), 0)

    def test_incumbent_wins_ties(self):
        self.assertEqual(pick_best([1.0, 3.0, 3.0], ["a", "b", "c"], incumbent_text="c"), 2)
        self.assertEqual(pick_best([1.0, 3.0, 2.0], ["a", "b", "c"], incumbent_text="c"), 1)

    def test_nan_and_misaligned(self):
        with self.assertRaises(ScoringError):
            pick_best([0.0, float("nan")], ["a", "b"])
        with self.assertRaises(ScoringError):
            pick_best([0.0], ["a", "b"])
        with self.assertRaises(ScoringError):
            argmax_lowest([])


class TestPromptScores(unittest.TestCase):

    def setUp(self):
        self.lm = ScriptedModel(score_fn=keyword_score({"good": -1.0, "fair": -2.0}, default=-4.0))

    def test_weighted_sum_over_bindings_and_targets(self):
        item = ScoringItem(bindings=(({"input": "x1"}, 0.25), ({"input": "x2"}, 0.75)),
                           targets=(("pos", 1.0),))
        other = ScoringItem(bindings=(({"input": "x3"}, 1.0),), targets=(("pos one", 0.5), ("neg", 0.5)))
        scores = weighted_prompt_scores(["good", "fair", "bad"], FORWARD, [item, other], self.lm)
        self.assertEqual(scores, [-2.0, -4.0, -8.0])

    def test_zero_weight_pairs_are_not_scored(self):
        item = ScoringItem(bindings=(({"input": "x"}, 1.0),), targets=(("a", 0.0), ("b", 1.0)))
        weighted_prompt_score("good", FORWARD, [item], self.lm)
        self.assertEqual(self.lm.scored, [("good | x", "b")])

    def test_first_and_second_layer_scores(self):
        samples = [WeightedSampleSet(samples=(PosteriorSample("h one", 0.0, 0.0), PosteriorSample("h", 0.0, 0.0)),
                                     alpha_sharp=1.0, weights=(0.5, 0.5))]
        self.assertEqual(len(first_layer_items(["x"], samples)[0].targets), 2)
        self.assertAlmostEqual(prompt_score_first_layer("fair", ["x"], samples, self.lm, FORWARD), -2.0)

        residual = load_named("classify_residual")
        triples = [("x", samples[0], "pos")]
        self.assertEqual(len(second_layer_items(triples)[0].bindings), 2)
        self.assertAlmostEqual(prompt_score_second_layer("good", triples, self.lm, residual), -1.0)
        with self.assertRaises(ScoringError):
            first_layer_items(["x", "y"], samples)

    def test_exploration_reward(self):
        wrong = [("x", "h wrong"), ("y", "  ")]
        self.assertEqual(exploration_rewards(["good", "bad"], wrong, self.lm, FORWARD, 0.0), [0.0, 0.0])
        self.assertEqual(exploration_rewards(["good", "bad"], [], self.lm, FORWARD, 1.0), [0.0, 0.0])
        self.assertAlmostEqual(exploration_reward("good", wrong, self.lm, FORWARD, 2.0), 2.0)
        self.assertAlmostEqual(exploration_reward("bad", wrong, self.lm, FORWARD, 0.5), 2.0)
        with self.assertRaises(ScoringError):
            exploration_rewards(["good"], wrong, self.lm, FORWARD, -1.0)


class TestKLDivergence(unittest.TestCase):

    def test_kl(self):
        self.assertEqual(kl_divergence([0.5, 0.5], [0.5, 0.5]), 0.0)
        self.assertAlmostEqual(kl_divergence([1.0, 0.0], [0.5, 0.5]), math.log(2.0))
        self.assertEqual(kl_divergence([0.5, 0.5], [1.0, 0.0]), math.inf)
        with self.assertRaises(ScoringError):
            kl_divergence([1.0], [0.5, 0.5])


if __name__ == '__main__':
    unittest.main()
