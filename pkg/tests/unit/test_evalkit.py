import json
import os
import shutil
import sys
import tempfile
import unittest

# Add the project root to the path
project_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
sys.path.insert(0, project_root)

from core import evalkit
from core.evalkit import Example, SplitDataset, SplitSpec, accuracy, normalize
from core.exceptions import DataError, ValidationError
from tests.fakes import ScriptedModel
from tests.toy_worlds import keyword_layer, write_keyword_dataset


class TestNormalization(unittest.TestCase):

    def test_normalize(self):
        self.assertEqual(normalize("  Positive. "), "positive")
        self.assertEqual(normalize("Very\n  GOOD!?"), "very good")
        self.assertEqual(normalize("a.b"), "a.b")

    def test_accuracy(self):
        self.assertEqual(accuracy(["Yes.", "no", "maybe"], ["yes", "No", "no"]), 2 / 3)
        with self.assertRaises(ValidationError):
            accuracy(["a"], ["a", "b"])
        with self.assertRaises(ValidationError):
            accuracy([], [])


class TestLoad(unittest.TestCase):
    """Test cases for dataset loading and splitting."""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def write(self, name, records):
        path = os.path.join(self.temp_dir, name)
        with open(path, "w", encoding="utf-8") as f:
            for record in records:
                f.write((record if isinstance(record, str) else json.dumps(record)) + "\n")
        return path

    def test_splits_are_deterministic_and_disjoint(self):
        path = write_keyword_dataset(os.path.join(self.temp_dir, "kw.jsonl"))
        spec = SplitSpec(10, 6, 4)
        first = evalkit.load(path, spec, seed=3)
        second = evalkit.load(path, spec, seed=3)
        self.assertEqual(first, second)
        self.assertEqual((len(first.train), len(first.valid), len(first.test)), (10, 6, 4))
        ids = [ex.id for name in ("train", "valid", "test") for ex in first.split(name)]
        self.assertEqual(len(set(ids)), 20)
        self.assertEqual(set(first.class_labels), {"pos", "neg"})
        self.assertEqual(first.task_name, "kw")
        self.assertNotEqual(evalkit.load(path, spec, seed=4).train, first.train)

    def test_none_takes_the_rest(self):
        path = write_keyword_dataset(os.path.join(self.temp_dir, "kw.jsonl"))
        dataset = evalkit.load(path, SplitSpec(5, 5, None))
        self.assertEqual(len(dataset.test), 10)

    def test_predefined_splits(self):
        records = [{"input": f"x{i}", "target": "a", "split": split}
                   for i, split in enumerate(["train"] * 3 + ["valid"] * 2 + ["test"])]
        dataset = evalkit.load(self.write("pre.jsonl", records), SplitSpec(2, None, 1), task_name="pre")
        self.assertEqual((len(dataset.train), len(dataset.valid), len(dataset.test)), (2, 2, 1))
        self.assertTrue(all(ex.input in ("x0", "x1", "x2") for ex in dataset.train))
        self.assertEqual(dataset.task_name, "pre")

    def test_too_few_examples(self):
        path = write_keyword_dataset(os.path.join(self.temp_dir, "kw.jsonl"))
        with self.assertRaises(DataError):
            evalkit.load(path, SplitSpec(10, 10, 10))

    def test_malformed_records_name_the_line(self):
        path = self.write("bad.jsonl", [{"input": "a", "target": "b"}, "{not json"])
        with self.assertRaises(DataError) as ctx:
            evalkit.load(path, SplitSpec(None, None, None))
        self.assertEqual(ctx.exception.details["line_number"], 2)

        for bad in ({"input": "", "target": "b"}, {"input": "a"}, {"input": "a", "target": "b", "split": "dev"}):
            with self.assertRaises(DataError):
                evalkit.load(self.write("bad2.jsonl", [bad]), SplitSpec(None, None, None))

    def test_missing_and_empty_files(self):
        with self.assertRaises(DataError):
            evalkit.load(os.path.join(self.temp_dir, "absent.jsonl"))
        with self.assertRaises(DataError):
            evalkit.load(self.write("empty.jsonl", ["", "  "]))

    def test_ids(self):
        duplicate = [{"id": 1, "input": "a", "target": "b"}, {"id": 1, "input": "c", "target": "d"}]
        with self.assertRaises(DataError):
            evalkit.load(self.write("dup.jsonl", duplicate), SplitSpec(None, None, None))

        same_content = [{"input": "a", "target": "b"}, {"input": "a", "target": "b"}]
        dataset = evalkit.load(self.write("same.jsonl", same_content), SplitSpec(None, 0, 0))
        self.assertEqual(len({ex.id for ex in dataset.train}), 2)

    def test_split_dataset_rejects_shared_ids(self):
        example = Example(input="a", target="b", id="1")
        with self.assertRaises(DataError):
            SplitDataset(train=(example,), valid=(example,), test=(), task_name="t", class_labels=("b",))


class TestTasks(unittest.TestCase):

    def test_task_table(self):
        self.assertEqual(evalkit.get_task("subj").split_spec, SplitSpec(400, 256, 250))
        self.assertEqual(evalkit.get_task("trec").n_classes, 6)
        self.assertIsNone(evalkit.get_task("mpqa").hidden_init)
        with self.assertRaises(ValidationError):
            evalkit.get_task("imdb")


class TestEvaluate(unittest.TestCase):

    def test_evaluate_and_report(self):
        lm = ScriptedModel(replies=[("great", "Pos."), ("awful", "pos")])
        examples = [Example("great", "pos", "1"), Example("awful", "neg", "2")]
        layer = keyword_layer()
        self.assertEqual(evalkit.evaluate(layer, examples, lm), 0.5)

        report = evalkit.evaluation_report(layer, examples, lm, "toy", "valid", 3, 0.02)
        self.assertEqual(report["accuracy"], 0.5)
        self.assertEqual(report["n"], 2)
        self.assertEqual(report["seed"], 3)
        self.assertGreater(report["inference_units"], 0)
        self.assertEqual(report["token_ledger"]["call_count"], 4)

    def test_empty_split(self):
        with self.assertRaises(ValidationError):
            evalkit.evaluate(keyword_layer(), [], ScriptedModel())


if __name__ == '__main__':
    unittest.main()
