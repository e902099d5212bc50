#!/usr/bin/env python3
"""
Smoke tests against a real completions endpoint.

Skipped unless DLN_LIVE_TESTS=1 and the credential variable named by the
backend settings is set. These calls cost money.
"""

import math
import os
import sys
import unittest

# Add the project root to the path
project_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.insert(0, project_root)

from core.api_config import api_config
from core.completion_client import CompletionAPIClient
from core.lm_backend import GenerationRequest

LIVE = os.getenv("DLN_LIVE_TESTS") == "1" and bool(api_config.api_key)


@unittest.skipUnless(LIVE, "set DLN_LIVE_TESTS=1 and the endpoint credential to run live tests")
class TestLiveEndpoint(unittest.TestCase):

    def setUp(self):
        self.client = CompletionAPIClient(api_config)

    def test_generation_at_temperature_zero(self):
        request = GenerationRequest(context="Q: What is 2 + 2?\nA:", temperature=0.0, max_new_units=5,
                                    stop_sequences=("\n",))
        (text,) = self.client.generate(request)
        self.assertIn("4", text)
        self.assertEqual(self.client.ledger.call_count, 1)

    def test_scoring_prefers_the_plausible_continuation(self):
        plausible, odd = self.client.batch_logprob([
            ("The capital of France is", " Paris"),
            ("The capital of France is", " spaghetti"),
        ])
        self.assertTrue(math.isfinite(plausible.total_logprob))
        self.assertGreater(plausible.normalized_logprob, odd.normalized_logprob)
        self.assertGreater(self.client.ledger.prompt_units, 0)


if __name__ == '__main__':
    unittest.main()
