"""
Dataset ingestion, seeded splits, the exact-match metric and evaluation.

Dataset files hold one JSON record per line: ``{"id"?, "input", "target",
"split"?}``. Records without an id get one from a hash of their content.
"""

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .exceptions import DataError, ValidationError
from .lm_backend import LanguageModel

SPLIT_NAMES = ("train", "valid", "test")
_TRAILING_PUNCTUATION = re.compile(r"[\s.!?,;:]+$")


@dataclass(frozen=True)
class Example:
    input: str
    target: str
    id: str

    def __post_init__(self):
        if not self.input or not self.target:
            raise ValidationError("examples need a nonempty input and target", field="example", value=self.id)


@dataclass(frozen=True)
class SplitSpec:
    """Requested split sizes; ``None`` takes everything available (the rest, for unsplit sources)."""

    train: Optional[int] = 400
    valid: Optional[int] = 250
    test: Optional[int] = 250

    def size(self, split: str) -> Optional[int]:
        return getattr(self, split)

    def to_dict(self) -> Dict[str, Optional[int]]:
        return {name: self.size(name) for name in SPLIT_NAMES}


@dataclass(frozen=True)
class SplitDataset:
    train: Tuple[Example, ...]
    valid: Tuple[Example, ...]
    test: Tuple[Example, ...]
    task_name: str
    class_labels: Tuple[str, ...]

    def __post_init__(self):
        seen = set()
        for name in SPLIT_NAMES:
            for example in self.split(name):
                if example.id in seen:
                    raise DataError(f"example id '{example.id}' appears twice across splits")
                seen.add(example.id)

    def split(self, name: str) -> Tuple[Example, ...]:
        if name not in SPLIT_NAMES:
            raise ValidationError("unknown split", field="split", value=name)
        return getattr(self, name)


@dataclass(frozen=True)
class TaskInfo:
    """Split sizes, class count and prompt initializations of a benchmark task."""

    name: str
    train: int
    valid: int
    test: int
    n_classes: int
    init_prompt: str
    hidden_init: Optional[str] = None

    @property
    def split_spec(self) -> SplitSpec:
        return SplitSpec(self.train, self.valid, self.test)


TASKS: Dict[str, TaskInfo] = {
    "mpqa": TaskInfo("mpqa", 400, 256, 250, 2,
                     "Read the following review, then choose whether it is negative or positive."),
    "trec": TaskInfo("trec", 400, 256, 250, 6,
                     "Read the following question, then choose whether it is about a description, entity, "
                     "expression, human, location or number."),
    "subj": TaskInfo("subj", 400, 256, 250, 2,
                     "Read the following sentence, then choose whether it is subjective or objective",
                     "Decompose the problem to make it simpler:"),
    "disaster": TaskInfo("disaster", 400, 250, 250, 2,
                         "Read the following sentence, then choose whether it is relevant to a disaster."),
    "airline": TaskInfo("airline", 400, 250, 250, 3,
                        "Read the following sentence, then choose whether it is positive, negative, or neutral."),
    "hyperbaton": TaskInfo("hyperbaton", 400, 1000, 250, 2, "Which sentence has the correct adjective order."),
    "navigate": TaskInfo("navigate", 375, 375, 250, 2,
                         "Read the following sentence, then determine whether you return to the starting point.",
                         "Decompose the problem to make it simpler:"),
    "date_understanding": TaskInfo("date_understanding", 59, 60, 250, 6, "Infer the date from context.", ""),
    "logical_deduction_seven_objects": TaskInfo(
        "logical_deduction_seven_objects", 225, 225, 250, 7,
        "The following paragraphs each describe a set of seven objects arranged in a fixed order. "
        "The statements are logically consistent within each paragraph.", ""),
}


def get_task(name: str) -> TaskInfo:
    try:
        return TASKS[name]
    except KeyError:
        raise ValidationError(f"unknown task; known tasks: {', '.join(sorted(TASKS))}",
                              field="task.task_name", value=name) from None


def normalize(s: str) -> str:
    """Lowercase, collapse whitespace, strip surrounding whitespace and trailing sentence punctuation."""
    collapsed = " ".join(s.lower().split())
    return _TRAILING_PUNCTUATION.sub("", collapsed)


def accuracy(preds: Sequence[str], golds: Sequence[str]) -> float:
    """Mean exact match after normalizing both sides."""
    if len(preds) != len(golds):
        raise ValidationError(f"{len(preds)} predictions for {len(golds)} targets", field="preds")
    if not golds:
        raise ValidationError("cannot score an empty split", field="golds")
    hits = sum(1 for pred, gold in zip(preds, golds) if normalize(pred) == normalize(gold))
    return hits / len(golds)


def _content_id(record_input: str, target: str) -> str:
    return hashlib.sha1(f"{record_input}\x1f{target}".encode("utf-8")).hexdigest()[:16]


def _read_records(path: Path) -> List[Dict[str, Any]]:
    if not path.exists():
        raise DataError("dataset file not found", file_path=str(path))
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"malformed record: {e.msg}", file_path=str(path), line_number=line_number) from e
            if not isinstance(record, dict):
                raise DataError("record is not an object", file_path=str(path), line_number=line_number)
            for key in ("input", "target"):
                if not isinstance(record.get(key), str) or not record[key].strip():
                    raise DataError(f"record needs a nonempty string '{key}'", file_path=str(path),
                                    line_number=line_number)
            split = record.get("split")
            if split is not None and split not in SPLIT_NAMES:
                raise DataError(f"unknown split '{split}'", file_path=str(path), line_number=line_number)
            record["_line"] = line_number
            records.append(record)
    if not records:
        raise DataError("dataset file holds no records", file_path=str(path))
    return records


def _to_examples(records: List[Dict[str, Any]], path: Path) -> List[Example]:
    examples = []
    seen: Dict[str, int] = {}
    for record in records:
        if record.get("id") is not None:
            example_id = str(record["id"])
            if example_id in seen:
                raise DataError(f"duplicate id '{example_id}'", file_path=str(path), line_number=record["_line"])
        else:
            example_id = _content_id(record["input"], record["target"])
            if example_id in seen:
                # identical content twice: keep both, disambiguated by occurrence
                example_id = f"{example_id}-{seen[example_id] + 1}"
        seen[example_id] = seen.get(example_id, 0) + 1
        examples.append(Example(input=record["input"], target=record["target"], id=example_id))
    return examples


def _take(pool: List[Example], size: Optional[int], split: str, path: Path) -> List[Example]:
    if size is None:
        return pool
    if size < 0 or size > len(pool):
        raise DataError(f"split '{split}' asks for {size} examples but only {len(pool)} are available",
                        file_path=str(path))
    return pool[:size]


def load(path: Union[str, Path], split_spec: SplitSpec = SplitSpec(), seed: int = 0,
         task_name: Optional[str] = None) -> SplitDataset:
    """Read a JSONL dataset and carve deterministic splits under ``seed``."""
    path = Path(path)
    records = _read_records(path)
    examples = _to_examples(records, path)
    rng = np.random.default_rng(seed)

    splits: Dict[str, List[Example]] = {}
    if any(record.get("split") for record in records):
        for name in SPLIT_NAMES:
            pool = [ex for ex, record in zip(examples, records) if record.get("split") == name]
            pool = [pool[i] for i in rng.permutation(len(pool))]
            splits[name] = _take(pool, split_spec.size(name), name, path)
    else:
        shuffled = [examples[i] for i in rng.permutation(len(examples))]
        requested = sum(split_spec.size(name) or 0 for name in SPLIT_NAMES)
        if requested > len(shuffled):
            raise DataError(f"splits ask for {requested} examples but the source holds {len(shuffled)}",
                            file_path=str(path))
        start = 0
        for name in SPLIT_NAMES:
            size = split_spec.size(name)
            end = len(shuffled) if size is None else start + size
            splits[name] = shuffled[start:end]
            start = end

    labels = tuple(dict.fromkeys(ex.target for ex in examples))
    return SplitDataset(train=tuple(splits["train"]), valid=tuple(splits["valid"]), test=tuple(splits["test"]),
                        task_name=task_name or path.stem, class_labels=labels)


class Predictor(Protocol):
    def predict_many(self, inputs: Sequence[str], lm: LanguageModel) -> List[str]:
        ...


def predictions(model: Predictor, examples: Sequence[Example], lm: LanguageModel) -> List[str]:
    if not examples:
        raise ValidationError("split is empty", field="split")
    return model.predict_many([example.input for example in examples], lm)


def evaluate(model: Predictor, examples: Sequence[Example], lm: LanguageModel) -> float:
    """Temperature-0 inference over every example; exact-match accuracy."""
    preds = predictions(model, examples, lm)
    return accuracy(preds, [example.target for example in examples])


def evaluation_report(model: Predictor, examples: Sequence[Example], lm: LanguageModel, task: str,
                      split: str, seed: Optional[int], price_per_1k: float) -> Dict[str, Any]:
    """Evaluate and report accuracy together with the units the evaluation itself consumed."""
    before = lm.ledger.snapshot()
    score = evaluate(model, examples, lm)
    after = lm.ledger.snapshot()
    spent = {key: after[key] - before[key] for key in after}
    return {
        "task": task,
        "split": split,
        "accuracy": score,
        "n": len(examples),
        "seed": seed,
        "token_ledger": lm.ledger.to_report(price_per_1k),
        "inference_units": spent["prompt_units"] + spent["completion_units"],
    }
