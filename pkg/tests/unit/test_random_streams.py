import os
import sys
import unittest

# Add the project root to the path
project_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.insert(0, project_root)

from core.random_streams import SEED_BITS, derive_seed, draw_seed, stream


class TestRandomStreams(unittest.TestCase):

    def test_derived_seeds_are_stable_and_distinct(self):
        self.assertEqual(derive_seed(1, 3, "propose", 0), derive_seed(1, 3, "propose", 0))
        self.assertNotEqual(derive_seed(1, 3, "propose", 0), derive_seed(1, 3, "propose", 1))
        self.assertNotEqual(derive_seed(1, "a"), derive_seed(2, "a"))
        self.assertTrue(0 <= derive_seed(99, "x") < 2 ** SEED_BITS)

    def test_streams_do_not_depend_on_draw_order(self):
        first = stream(5, "epoch", 1).integers(1000, size=5).tolist()
        stream(5, "epoch", 0).random(100)
        self.assertEqual(first, stream(5, "epoch", 1).integers(1000, size=5).tolist())
        self.assertNotEqual(first, stream(5, "epoch", 2).integers(1000, size=5).tolist())

    def test_draw_seed(self):
        rng = stream(0, "x")
        seeds = [draw_seed(rng) for _ in range(10)]
        self.assertTrue(all(0 <= s < 2 ** 31 - 1 for s in seeds))
        self.assertEqual(seeds[0], draw_seed(stream(0, "x")))


if __name__ == '__main__':
    unittest.main()
