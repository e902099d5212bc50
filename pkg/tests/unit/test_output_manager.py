#!/usr/bin/env python3
"""
Unit tests for OutputManager class.
Tests the run directory layout, atomic document writes and checkpoints.
"""

import json
import os
import shutil
import sys
import tempfile
import unittest

# Add the project root to the path
project_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.insert(0, project_root)

from core.dln1 import Prompt, PromptMemory, TrainState
from core.exceptions import CheckpointError
from core.lm_backend import TokenLedger
from core.output_manager import OutputManager


def make_state(iteration=2, completed=False):
    memory = PromptMemory(capacity=3)
    memory.add([Prompt("best prompt")], 0.75, iteration)
    return TrainState(algorithm="dln1", seed=4, prompts=(Prompt("best prompt"),), memory=memory,
                      ledger=TokenLedger(100, 20, 3), iteration=iteration, completed=completed,
                      validation_history=[{"iteration": iteration, "accuracy": 0.75, "reloaded": False}])


class TestOutputManager(unittest.TestCase):
    """Test cases for OutputManager class."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()
        self.manager = OutputManager(self.temp_dir)

    def tearDown(self):
        """Clean up test fixtures."""
        shutil.rmtree(self.temp_dir)

    def test_initialization(self):
        self.assertEqual(self.manager.base_output_dir, self.temp_dir)
        nested = os.path.join(self.temp_dir, "a", "b")
        OutputManager(nested)
        self.assertTrue(os.path.isdir(nested))

    def test_run_directories_never_collide(self):
        first = self.manager.create_run_directory("toy smoke/1")
        second = self.manager.create_run_directory("toy smoke/1")
        self.assertNotEqual(first, second)
        self.assertTrue(os.path.basename(first).startswith("toy_smoke_1_"))
        self.assertEqual(os.path.dirname(first), self.temp_dir)

    def test_run_directory_under_parent(self):
        setting = OutputManager.setting_directory(self.temp_dir, 7)
        self.assertTrue(setting.endswith("setting_007"))
        run_dir = self.manager.create_run_directory("toy", parent=setting)
        self.assertEqual(os.path.dirname(run_dir), setting)

    def test_seed_directory(self):
        run_dir = self.manager.create_run_directory("toy")
        seed_dir = OutputManager.seed_directory(run_dir, 3)
        self.assertTrue(seed_dir.endswith("seed_3"))
        self.assertTrue(os.path.isdir(os.path.join(seed_dir, "checkpoints")))

    def test_write_json_leaves_no_temporary_file(self):
        path = os.path.join(self.temp_dir, "doc.json")
        OutputManager.write_json(path, {"a": "é"})
        self.assertEqual(OutputManager.read_json(path), {"a": "é"})
        self.assertFalse(os.path.exists(f"{path}.tmp"))

    def test_write_and_read_errors(self):
        with self.assertRaises(CheckpointError):
            OutputManager.write_json(os.path.join(self.temp_dir, "x.json"), {"bad": object()})
        with self.assertRaises(CheckpointError):
            OutputManager.read_json(os.path.join(self.temp_dir, "absent.json"))
        broken = os.path.join(self.temp_dir, "broken.json")
        with open(broken, "w") as f:
            f.write("{")
        with self.assertRaises(CheckpointError):
            OutputManager.read_json(broken)

    def test_checkpoints(self):
        seed_dir = OutputManager.seed_directory(self.manager.create_run_directory("toy"), 4)
        self.manager.save_checkpoint(seed_dir, make_state(2))
        path = self.manager.save_checkpoint(seed_dir, make_state(10))
        self.assertTrue(path.endswith(os.path.join("checkpoints", "iter_0010.json")))
        self.assertEqual(len(self.manager.list_checkpoints(seed_dir)), 2)
        self.assertEqual(self.manager.latest_checkpoint(seed_dir), path)
        self.assertFalse(os.path.exists(os.path.join(seed_dir, "final_state.json")))

        state = self.manager.load_checkpoint(path)
        self.assertEqual(state.iteration, 10)
        self.assertEqual(state.prompts[0].text, "best prompt")
        self.assertEqual(state.ledger.snapshot(), {"prompt_units": 100, "completion_units": 20, "call_count": 3})
        with open(path) as f:
            self.assertIn("saved_at", json.load(f))

    def test_completed_state_writes_final_state(self):
        seed_dir = OutputManager.seed_directory(self.manager.create_run_directory("toy"), 4)
        writer = self.manager.checkpoint_writer(seed_dir)
        writer(make_state(4, completed=True))
        final = OutputManager.read_json(os.path.join(seed_dir, "final_state.json"))
        self.assertTrue(final["completed"])
        self.assertEqual(final["best_val_accuracy"], 0.75)

    def test_malformed_checkpoint(self):
        path = os.path.join(self.temp_dir, "iter_0001.json")
        OutputManager.write_json(path, {"seed": 1})
        with self.assertRaises(CheckpointError):
            self.manager.load_checkpoint(path)

    def test_load_run(self):
        run_dir = self.manager.create_run_directory("toy")
        self.manager.save_config(run_dir, {"name": "toy"})
        self.manager.save_summary(run_dir, {"valid": {"mean": 1.0}})
        done = OutputManager.seed_directory(run_dir, 1)
        self.manager.save_checkpoint(done, make_state(4, completed=True))
        self.manager.save_ledger(done, TokenLedger(1000, 0, 1), 0.02)
        self.manager.save_evaluation(done, {"valid": {"accuracy": 1.0}})
        aborted = OutputManager.seed_directory(run_dir, 2)
        self.manager.save_checkpoint(aborted, make_state(2))

        run = self.manager.load_run(run_dir)
        self.assertEqual(run["config"], {"name": "toy"})
        self.assertEqual(set(run["seeds"]), {"1", "2"})
        self.assertAlmostEqual(run["seeds"]["1"]["ledger"]["estimated_cost"], 0.02)
        self.assertIsNone(run["seeds"]["2"]["final_state"])
        self.assertEqual(run["seeds"]["2"]["latest_checkpoint"]["iteration"], 2)

        single = self.manager.load_run(done)
        self.assertEqual(list(single["seeds"]), ["1"])
        with self.assertRaises(CheckpointError):
            self.manager.load_run(os.path.join(self.temp_dir, "missing"))

    def test_list_runs(self):
        first = self.manager.create_run_directory("a")
        self.manager.save_sweep_summary(first, {"selected": 0})
        self.assertEqual(self.manager.list_runs(), [os.path.basename(first)])
        self.assertTrue(os.path.exists(os.path.join(first, "sweep_summary.json")))


if __name__ == '__main__':
    unittest.main()
