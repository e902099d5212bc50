"""
Untrained reference networks: zero-shot, k-shot in-context and zero-shot
chain-of-thought.
"""

from typing import Any, Dict, Optional, Sequence

import numpy as np

from .dln1 import LanguageLayer, Prompt
from .dln2 import LayerStack
from .evalkit import Example, Predictor, evaluate
from .exceptions import ValidationError
from .lm_backend import LanguageModel
from .templates import Template, load_named

BASELINE_KINDS = ("zero-shot", "few-shot", "cot")
FEW_SHOT_SIZES = (5, 10, 16, 32)
COT_HIDDEN_TEMPLATE = "hidden_step_by_step"
COT_OUTPUT_TEMPLATE = "classify_residual"


def zero_shot(model: Predictor, examples: Sequence[Example], lm: LanguageModel) -> float:
    """Accuracy of ``model`` as initialized, without any training."""
    return evaluate(model, examples, lm)


def few_shot_prompt(instruction: str, demonstrations: Sequence[Example]) -> str:
    blocks = [f"Input: {ex.input}\nOutput: {ex.target}" for ex in demonstrations]
    return "\n\n".join(([instruction] if instruction else []) + blocks)


def few_shot(examples: Sequence[Example], k: int, rng: np.random.Generator, instruction: str = "",
             template: Optional[Template] = None, max_new_units: int = 64) -> LanguageLayer:
    """A classification layer whose prompt holds ``k`` random training demonstrations."""
    if k < 1 or k > len(examples):
        raise ValidationError(f"cannot draw {k} demonstrations from {len(examples)} examples", field="shots",
                              value=k)
    chosen = sorted(rng.choice(len(examples), size=k, replace=False).tolist())
    return LanguageLayer(prompt=Prompt(text=few_shot_prompt(instruction, [examples[i] for i in chosen])),
                         template=template or load_named("classify_forward"), max_new_units=max_new_units)


def chain_of_thought(classification_prompt: str, hidden_max_units: int = 256,
                     output_max_units: int = 64) -> LayerStack:
    """Two layers: an empty hidden prompt followed by "Let's think step by step.", then the task question."""
    hidden = LanguageLayer(prompt=Prompt(text=""), template=load_named(COT_HIDDEN_TEMPLATE),
                           max_new_units=hidden_max_units)
    output = LanguageLayer(prompt=Prompt(text=classification_prompt), template=load_named(COT_OUTPUT_TEMPLATE),
                           residual=True, max_new_units=output_max_units)
    return LayerStack((hidden, output))


def build_baseline(kind: str, classification_prompt: str, train_examples: Sequence[Example], shots: int = 5,
                   seed: int = 0, template: Optional[Template] = None) -> Any:
    if kind == "zero-shot":
        return LanguageLayer(prompt=Prompt(text=classification_prompt),
                             template=template or load_named("classify_forward"))
    if kind == "few-shot":
        return few_shot(train_examples, shots, np.random.default_rng(seed), classification_prompt, template)
    if kind == "cot":
        return chain_of_thought(classification_prompt)
    raise ValidationError(f"unknown baseline; choose from {', '.join(BASELINE_KINDS)}", field="kind", value=kind)


def baseline_report(kind: str, model: Any, examples: Sequence[Example], lm: LanguageModel,
                    shots: Optional[int] = None) -> Dict[str, Any]:
    return {"kind": kind, "shots": shots if kind == "few-shot" else None,
            "accuracy": zero_shot(model, examples, lm), "n": len(examples),
            "prompts": [p.text for p in model.prompts()]}
