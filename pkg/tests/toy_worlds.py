"""
Constructed toy tasks shared by the learning tests.

Both worlds classify single keywords as ``pos`` or ``neg``. The toy LM
publishes rules that make one instruction word (``sentiment`` for the
one-layer world, ``reflect`` for the hidden layer of the two-layer world)
the only prompt under which the keywords are classified correctly, and the
prompt proposal template suggests that word half of the time.
"""

import json
import os
from typing import Any, Dict, List, Optional

from core.dln1 import LanguageLayer, Prompt
from core.dln2 import LayerStack
from core.evalkit import Example, SplitDataset
from core.templates import load_named
from core.toy_lm import ToyLanguageModel

POSITIVE = ("great", "superb", "lovely", "brilliant", "charming", "delightful", "wonderful", "splendid",
            "excellent", "pleasant")
NEGATIVE = ("awful", "terrible", "dreadful", "horrid", "dismal", "boring", "clumsy", "tedious", "bland", "painful")
PROPOSAL_CUE = "## Instruction >"

ONE_LAYER_WORD = "sentiment"
ONE_LAYER_VOCABULARY = ["pos", "neg", ONE_LAYER_WORD, "review", "the", "words", "maybe"]

TWO_LAYER_WORD = "reflect"
TWO_LAYER_VOCABULARY = ["pos", "neg", "upbeat", "gloomy", "u", "maybe", TWO_LAYER_WORD, "the"]
HINTS = {"pos": "upbeat", "neg": "gloomy"}


def labelled_words() -> List[tuple]:
    return [(w, "pos") for w in POSITIVE] + [(w, "neg") for w in NEGATIVE]


def keyword_examples() -> List[Example]:
    return [Example(input=word, target=label, id=f"kw-{i + 1}") for i, (word, label) in enumerate(labelled_words())]


def keyword_dataset(n_train: int = 10, n_valid: int = 6, n_test: int = 4) -> SplitDataset:
    """Interleaved so every split holds both labels."""
    examples = keyword_examples()
    interleaved = [ex for pair in zip(examples[:10], examples[10:]) for ex in pair]
    train = interleaved[:n_train]
    valid = interleaved[n_train:n_train + n_valid]
    test = interleaved[n_train + n_valid:n_train + n_valid + n_test]
    return SplitDataset(train=tuple(train), valid=tuple(valid), test=tuple(test), task_name="toy_keyword",
                        class_labels=("pos", "neg"))


def write_keyword_dataset(path: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        for example in keyword_examples():
            f.write(json.dumps({"id": example.id, "input": example.input, "target": example.target}) + "\n")
    return path


def one_layer_rules() -> Dict[str, Dict[str, float]]:
    rules = {PROPOSAL_CUE: {ONE_LAYER_WORD: 0.5}, ONE_LAYER_WORD: {"</s>": 1.0}}
    for word, label in labelled_words():
        wrong = "neg" if label == "pos" else "pos"
        rules[f"{ONE_LAYER_WORD} {word} Answer:"] = {label: 0.9}
        rules[f"{word} Answer:"] = {wrong: 0.6, label: 0.3}
    return rules


def two_layer_rules() -> Dict[str, Dict[str, float]]:
    rules = {
        PROPOSAL_CUE: {TWO_LAYER_WORD: 0.5},
        TWO_LAYER_WORD: {"</s>": 1.0},
        "were: upbeat Answer:": {"pos": 0.95},
        "were: gloomy Answer:": {"neg": 0.95},
        "were: u Answer:": {"maybe": 0.9},
    }
    for word, label in labelled_words():
        hint = HINTS[label]
        rules[f"{TWO_LAYER_WORD} {word} Brief Analysis:"] = {hint: 0.9, "u": 0.09}
        rules[f"{word} Brief Analysis:"] = {"u": 0.5, hint: 0.45}
    return rules


def one_layer_toy_config() -> Dict[str, Any]:
    return {"vocabulary": list(ONE_LAYER_VOCABULARY), "order": 3, "seed": 7, "rules": one_layer_rules()}


def two_layer_toy_config() -> Dict[str, Any]:
    return {"vocabulary": list(TWO_LAYER_VOCABULARY), "order": 4, "seed": 11, "rules": two_layer_rules()}


def one_layer_lm(**kwargs: Any) -> ToyLanguageModel:
    return ToyLanguageModel(**{**one_layer_toy_config(), **kwargs})


def two_layer_lm(**kwargs: Any) -> ToyLanguageModel:
    return ToyLanguageModel(**{**two_layer_toy_config(), **kwargs})


def keyword_layer(prompt: str = "Guess the label.") -> LanguageLayer:
    return LanguageLayer(prompt=Prompt(text=prompt), template=load_named("classify_forward"), max_new_units=1)


def keyword_stack(hidden_prompt: str = "Think about it.", output_prompt: str = "Choose pos or neg.") -> LayerStack:
    return LayerStack((
        LanguageLayer(prompt=Prompt(text=hidden_prompt), template=load_named("hidden_brief_analysis"),
                      max_new_units=1),
        LanguageLayer(prompt=Prompt(text=output_prompt), template=load_named("classify_residual"), residual=True,
                      max_new_units=1),
    ))


def run_config(name: str, data_path: str, output_dir: str, two_layer: bool = False,
               seeds: Optional[List[int]] = None, iterations: int = 4) -> Dict[str, Any]:
    """A toy run configuration document pointing at ``data_path``."""
    if two_layer:
        layers = [
            {"template": "hidden_brief_analysis", "init_prompt": "Think about it.", "max_new_units": 1},
            {"template": "classify_residual", "init_prompt": "Choose pos or neg.", "residual": True,
             "max_new_units": 1},
        ]
        toy = two_layer_toy_config()
        extra = {"num_h_samples": 5, "posterior_mixture": {"q_pri": 1.0, "q_pri_plus": 0.0, "q_edit": 0.0}}
    else:
        layers = [{"template": "classify_forward", "init_prompt": "Guess the label.", "max_new_units": 1}]
        toy = one_layer_toy_config()
        extra = {}
    return {
        "name": name,
        "task": {"path": data_path, "split": {"train": 10, "valid": 6, "test": 4}, "split_seed": 0,
                 "task_name": "toy_keyword"},
        "backend": {"type": "toy", "toy": toy},
        "architecture": {"layers": layers},
        "hyperparameters": {"batch_size": 5, "iterations": iterations, "eval_every": 2, "num_prompts": 4, **extra},
        "seeds": seeds or [1, 2],
        "output_dir": output_dir,
    }


def write_run_config(directory: str, name: str, data_path: str, output_dir: str, **kwargs: Any) -> str:
    path = os.path.join(directory, f"{name}.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(run_config(name, data_path, output_dir, **kwargs), f, indent=2)
    return path
