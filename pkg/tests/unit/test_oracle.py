import math
import os
import sys
import unittest

import numpy as np

# Add the project root to the path
project_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.insert(0, project_root)

from core import oracle
from core.exceptions import OracleError, SpaceTooLargeError
from core.oracle import EnumerableSpace
from core.scoring import elbo_lower_bounds_marginal_check, kl_divergence
from tests.fakes import ScriptedModel
from tests.toy_worlds import keyword_layer, keyword_stack, two_layer_lm


class TestEnumerableSpace(unittest.TestCase):

    def test_all_sequences(self):
        space = EnumerableSpace.all_sequences(["a", "b"], 2)
        self.assertEqual(space.strings, ("a a", "a b", "b a", "b b"))
        self.assertFalse(space.terminated)

    def test_up_to_length_includes_empty_string(self):
        space = EnumerableSpace.up_to_length(["a", "b"], 2)
        self.assertEqual(len(space), 1 + 2 + 4)
        self.assertIn("", space.strings)
        self.assertTrue(space.terminated)

    def test_guards(self):
        with self.assertRaises(SpaceTooLargeError):
            EnumerableSpace.all_sequences([str(i) for i in range(10)], 6)
        with self.assertRaises(OracleError):
            EnumerableSpace(())
        with self.assertRaises(OracleError):
            EnumerableSpace(("a", "a"))
        with self.assertRaises(OracleError):
            EnumerableSpace(("", "a"))


class TestExactQuantities(unittest.TestCase):
    """Exact marginals and posteriors of the two-layer keyword world."""

    def setUp(self):
        self.lm = two_layer_lm()
        self.stack = keyword_stack(hidden_prompt="reflect")
        self.space = EnumerableSpace.all_sequences(["upbeat", "gloomy", "u", "maybe"], 1)

    def test_posterior_is_normalized_and_favors_the_matching_hint(self):
        posterior = oracle.exact_posterior("great", "pos", self.stack, self.lm, self.space)
        self.assertAlmostEqual(sum(posterior.values()), 1.0, places=12)
        self.assertEqual(max(posterior, key=posterior.get), "upbeat")

    def test_marginal_is_log_sum_of_joint(self):
        log_prior, log_likelihood = oracle.joint_logprobs("great", "pos", self.stack, self.lm, self.space)
        expected = math.log(sum(math.exp(a + b) for a, b in zip(log_prior, log_likelihood)))
        self.assertAlmostEqual(oracle.exact_marginal("great", "pos", self.stack, self.lm, self.space), expected,
                               places=10)

    def test_elbo_gap_is_kl_to_posterior(self):
        log_prior, log_likelihood = oracle.joint_logprobs("dismal", "neg", self.stack, self.lm, self.space)
        log_joint = log_prior + log_likelihood
        marginal = oracle.log_sum_exp(log_joint)
        posterior = np.exp(log_joint - marginal)
        for q in ([0.25] * 4, [0.7, 0.1, 0.1, 0.1], [1.0, 0.0, 0.0, 0.0], posterior.tolist()):
            bound = oracle.elbo(q, log_joint)
            self.assertLessEqual(bound, marginal + 1e-9)
            self.assertAlmostEqual(marginal - bound, kl_divergence(q, posterior.tolist()), places=8)

    def test_prior_check_helper(self):
        bound, marginal = elbo_lower_bounds_marginal_check("great", "pos", self.stack, self.lm, self.space)
        self.assertLessEqual(bound, marginal + 1e-9)

    def test_restricted_posterior_renormalizes_over_distinct_strings(self):
        restricted = oracle.restricted_posterior("great", "pos", self.stack, self.lm, ["upbeat", "u", "upbeat"])
        full = oracle.exact_posterior("great", "pos", self.stack, self.lm, self.space)
        self.assertEqual(set(restricted), {"upbeat", "u"})
        self.assertAlmostEqual(restricted["upbeat"] / restricted["u"], full["upbeat"] / full["u"], places=8)

    def test_terminated_space(self):
        space = EnumerableSpace.up_to_length(["upbeat", "u"], 2)
        posterior = oracle.exact_posterior("great", "pos", self.stack, self.lm, space)
        self.assertAlmostEqual(sum(posterior.values()), 1.0, places=12)

    def test_invalid_q(self):
        with self.assertRaises(OracleError):
            oracle.elbo([0.5, 0.6], [0.0, 0.0])
        with self.assertRaises(OracleError):
            oracle.elbo([1.0], [0.0, 0.0])

    def test_requires_toy_backend_and_two_layers(self):
        with self.assertRaises(OracleError):
            oracle.exact_marginal("great", "pos", self.stack, ScriptedModel(), self.space)
        one_layer = keyword_layer()
        with self.assertRaises(OracleError):
            oracle.exact_marginal("great", "pos", one_layer, self.lm, self.space)


if __name__ == '__main__':
    unittest.main()
