"""
Stacked language networks: two-layer variational training and its
generalization to L layers.

Hidden strings between layers are latent. Each training step samples K
posterior candidates for every hidden string from a mixture of proposal
distributions, weights them by sharpened prior times likelihood, and
scores prompt candidates by the weighted log-likelihood they assign to the
samples of the layer above (the targets for the last layer).
"""

import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .dln1 import (MIXTURE_COMPONENTS, Checkpointer, Hyperparameters, LanguageLayer, Prompt, TrainingLoop,
                   TrainState, one_layer_step, proposal_template_name, propose, rank_items, split_for_ranking)
from .evalkit import Example, SplitDataset, normalize
from .exceptions import ValidationError
from .lm_backend import GenerationRequest, LanguageModel
from .random_streams import draw_seed, stream
from .scoring import PosteriorSample, ScoringItem, WeightedSampleSet
from .templates import BackwardInfo, Template, load_named, render


@dataclass(frozen=True)
class LayerStack:
    """Layers applied in order; the last one is the classification layer."""

    layers: Tuple[LanguageLayer, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValidationError("a stack needs at least one layer", field="architecture.layers")

    def __len__(self) -> int:
        return len(self.layers)

    def layer_context(self, index: int, layer_input: str, x: str, prompt_text: Optional[str] = None) -> str:
        return self.layers[index].context(layer_input, x, prompt_text)

    def forward_many(self, xs: Sequence[str], lm: LanguageModel) -> List[Tuple[List[str], str]]:
        """(hiddens, output) per input; each layer fans out over the whole batch."""
        hiddens: List[List[str]] = [[] for _ in xs]
        current = list(xs)
        for index, layer in enumerate(self.layers):
            current = layer.forward_many(current, xs, lm)
            if index < len(self.layers) - 1:
                for trail, h in zip(hiddens, current):
                    trail.append(h)
        return list(zip(hiddens, current))

    def forward(self, x: str, lm: LanguageModel) -> Tuple[List[str], str]:
        return self.forward_many([x], lm)[0]

    def predict(self, x: str, lm: LanguageModel) -> str:
        return self.forward(x, lm)[1]

    def predict_many(self, inputs: Sequence[str], lm: LanguageModel) -> List[str]:
        return [output for _, output in self.forward_many(inputs, lm)]

    def trace(self, x: str, lm: LanguageModel) -> Dict[str, Any]:
        """Every rendered context and output along the forward pass of ``x``."""
        hiddens, output = self.forward(x, lm)
        inputs = [x] + hiddens
        outputs = hiddens + [output]
        return {
            "input": x,
            "layers": [{"prompt": layer.prompt.text, "context": layer.context(inputs[i], x), "output": outputs[i]}
                       for i, layer in enumerate(self.layers)],
            "output": output,
        }

    def prompts(self) -> Tuple[Prompt, ...]:
        return tuple(layer.prompt for layer in self.layers)

    def with_prompts(self, prompts: Sequence[Union[Prompt, str]]) -> "LayerStack":
        if len(prompts) != len(self.layers):
            raise ValidationError(f"{len(prompts)} prompts for {len(self.layers)} layers", field="prompts")
        return LayerStack(tuple(layer.with_prompt(p if isinstance(p, Prompt) else Prompt(text=p))
                                for layer, p in zip(self.layers, prompts)))


def forward(x: str, stack: LayerStack, lm: LanguageModel) -> Tuple[List[str], str]:
    """Temperature-0 pass through every layer: (hidden strings, output)."""
    return stack.forward(x, lm)


@dataclass(frozen=True)
class PosteriorConfig:
    K: int = 5
    mixture: Dict[str, float] = field(default_factory=lambda: {"q_pri": 0.5, "q_pri_plus": 0.5, "q_edit": 0.0})
    alpha_sharp: float = 1.0
    temperature: float = 0.7

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError("K must be at least 1", field="num_h_samples", value=self.K)
        if set(self.mixture) - set(MIXTURE_COMPONENTS):
            raise ValidationError("unknown mixture component", field="posterior_mixture", value=dict(self.mixture))
        weights = self.weights()
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise ValidationError("mixture weights must be non-negative and sum to 1", field="posterior_mixture",
                                  value=dict(self.mixture))
        if not self.alpha_sharp > 0:
            raise ValidationError("alpha_sharp must be positive", field="alpha_sharp", value=self.alpha_sharp)

    def weights(self) -> List[float]:
        return [float(self.mixture.get(name, 0.0)) for name in MIXTURE_COMPONENTS]

    @classmethod
    def from_hyperparameters(cls, hparams: Hyperparameters) -> "PosteriorConfig":
        return cls(K=hparams.num_h_samples, mixture=dict(hparams.posterior_mixture), alpha_sharp=hparams.alpha_sharp,
                   temperature=hparams.posterior_temperature)


@dataclass(frozen=True)
class HiddenProposalTemplates:
    """Templates of the answer-aware proposal components."""

    given_answer: Template
    backward: Template

    @classmethod
    def default(cls) -> "HiddenProposalTemplates":
        return cls(given_answer=load_named("hidden_given_answer"), backward=load_named("hidden_backward"))


def exploration_schedule(lambda0: float, i: int, iterations: int) -> float:
    """Linear decay from ``lambda0`` at i = 0 towards 0 at i = ``iterations``."""
    if iterations < 1 or not 0 <= i <= iterations:
        raise ValidationError("schedule needs 0 <= i <= iterations", field="iteration", value=i)
    return lambda0 * (1.0 - i / iterations)


def sample_hidden_layer(index: int, xs: Sequence[str], prev_inputs: Sequence[str], h_hats: Sequence[str],
                        targets: Sequence[Optional[str]], stack: LayerStack, cfg: PosteriorConfig,
                        lm: LanguageModel, rng: np.random.Generator,
                        templates: Optional[HiddenProposalTemplates] = None) -> List[Optional[WeightedSampleSet]]:
    """Weighted posterior samples of the string between layer ``index - 1`` and layer ``index``.

    Every random choice is drawn from ``rng`` before the fan-out. Empty or
    unscoreable samples are dropped; the forward hidden stands in when none
    is left. Examples with no target, or nothing scoreable, map to None.
    """
    templates = templates or HiddenProposalTemplates.default()
    producer, consumer = stack.layers[index - 1], stack.layers[index]
    weights = cfg.weights()

    requests: List[GenerationRequest] = []
    plan: List[Tuple[int, str]] = []
    for i, (x, prev, h_hat, target) in enumerate(zip(xs, prev_inputs, h_hats, targets)):
        if target is None:
            continue
        for component in rng.choice(len(MIXTURE_COMPONENTS), size=cfg.K, p=weights).tolist():
            name = MIXTURE_COMPONENTS[component]
            if name == "q_pri":
                context = producer.context(prev, x)
            elif name == "q_pri_plus":
                context = render(templates.given_answer, {"input": prev, "y": target, "prompt": producer.prompt.text})
            else:
                context = render(templates.backward, {"next_prompt": consumer.prompt.text, "input": prev,
                                                      "h": h_hat, "y": target}, rng)
            requests.append(GenerationRequest(context=context, temperature=cfg.temperature, n_samples=1,
                                              max_new_units=producer.max_new_units, stop_sequences=producer.stop,
                                              seed=draw_seed(rng)))
            plan.append((i, name))

    drawn: List[List[Tuple[str, str]]] = [[] for _ in xs]
    for (i, name), samples in zip(plan, lm.generate_many(requests) if requests else []):
        hidden = samples[0].strip()
        if hidden:
            drawn[i].append((hidden, name))
    for i, h_hat in enumerate(h_hats):
        if targets[i] is not None and not drawn[i] and h_hat.strip():
            drawn[i] = [(h_hat, "forward")]

    owners = [(i, hidden, name) for i, pool in enumerate(drawn) for hidden, name in pool]
    if not owners:
        return [None] * len(xs)
    alphas = lm.batch_logprob([(producer.context(prev_inputs[i], xs[i]), hidden) for i, hidden, _ in owners])
    betas = lm.batch_logprob([(consumer.context(hidden, xs[i]), targets[i]) for i, hidden, _ in owners])

    pools: List[List[PosteriorSample]] = [[] for _ in xs]
    for (i, hidden, name), alpha, beta in zip(owners, alphas, betas):
        if math.isfinite(alpha.normalized_logprob) and math.isfinite(beta.normalized_logprob):
            pools[i].append(PosteriorSample(hidden, alpha.normalized_logprob, beta.normalized_logprob, name))
    return [WeightedSampleSet.build(pool, cfg.alpha_sharp) if pool else None for pool in pools]


def sample_posterior(x: str, y: str, h_hat: str, stack: LayerStack, cfg: PosteriorConfig, lm: LanguageModel,
                     rng: np.random.Generator,
                     templates: Optional[HiddenProposalTemplates] = None) -> Optional[WeightedSampleSet]:
    """K weighted samples of the first hidden string of ``x`` given its target ``y``."""
    return sample_hidden_layer(1, [x], [x], [h_hat], [y], stack, cfg, lm, rng, templates)[0]


def _split(size: int, hparams: Hyperparameters, base: int) -> Tuple[List[int], List[int]]:
    indices = list(range(size))
    if hparams.held_out_prompt_ranking:
        return split_for_ranking(indices, stream(base, "split"))
    return indices, indices


def _candidates(layer: LanguageLayer, infos: List[BackwardInfo], hparams: Hyperparameters, lm: LanguageModel,
                proposal_template: Template, rng: np.random.Generator, extra: Sequence[Prompt],
                iteration: int) -> List[Prompt]:
    if infos:
        pool = propose(layer.prompt, infos, lm, proposal_template, hparams.num_prompts, rng,
                       temperature=hparams.proposal_temperature, max_new_units=hparams.proposal_max_units,
                       subset_size=hparams.proposal_subset_size, iteration=iteration)
    else:
        pool = [layer.prompt]
    return pool + list(extra)


def _report(iteration: int, selections: Sequence[Any], candidates: Sequence[Sequence[Prompt]],
            y_hats: Sequence[str], ys: Sequence[str], lam: float, posterior_sets: int) -> Dict[str, Any]:
    return {
        "iteration": iteration,
        "selected": [s.prompt.text for s in selections],
        "origins": [s.prompt.origin.value for s in selections],
        "batch_scores": [s.best_score for s in selections],
        "incumbent_scores": [s.incumbent_score for s in selections],
        "candidates": [len(pool) for pool in candidates],
        "batch_accuracy": sum(normalize(a) == normalize(b) for a, b in zip(y_hats, ys)) / len(ys),
        "lambda": lam,
        "posterior_sets": posterior_sets,
    }


def _two_layer_step(batch: Sequence[Example], stack: LayerStack, hparams: Hyperparameters, lm: LanguageModel,
                    rng: np.random.Generator, lam: float, proposal_template: Template,
                    templates: Optional[HiddenProposalTemplates], extra: Sequence[Sequence[Prompt]],
                    iteration: int) -> Tuple[LayerStack, Dict[str, Any]]:
    if len(stack) != 2:
        raise ValidationError("train_step needs a two-layer stack", field="architecture.layers", value=len(stack))
    if not batch:
        raise ValidationError("batch is empty", field="batch")
    hidden_layer, output_layer = stack.layers
    cfg = PosteriorConfig.from_hyperparameters(hparams)
    base = draw_seed(rng)
    proposal_idx, scoring_idx = _split(len(batch), hparams, base)

    xs = [ex.input for ex in batch]
    ys = [ex.target for ex in batch]
    passes = stack.forward_many(xs, lm)
    h_hats = [hiddens[0] for hiddens, _ in passes]
    y_hats = [output for _, output in passes]

    sets = sample_hidden_layer(1, xs, xs, h_hats, ys, stack, cfg, lm, stream(base, "posterior", 1), templates)
    h_stars = [s.best_hidden() if s is not None else None for s in sets]

    infos0 = [BackwardInfo(input=xs[i], target=h_stars[i], output=h_hats[i])
              for i in proposal_idx if h_stars[i] is not None]
    infos1 = [BackwardInfo(input=h_hats[i], target=ys[i], output=y_hats[i])
              for i in proposal_idx if h_hats[i].strip()]
    pool0 = _candidates(hidden_layer, infos0, hparams, lm, proposal_template, stream(base, "propose", 0),
                        extra[0], iteration)
    pool1 = _candidates(output_layer, infos1, hparams, lm, proposal_template, stream(base, "propose", 1),
                        extra[1], iteration)

    scored = [i for i in scoring_idx if sets[i] is not None]
    items0 = [ScoringItem(bindings=((hidden_layer.binding(xs[i], xs[i]), 1.0),),
                          targets=tuple(sets[i].weighted_hiddens())) for i in scored]
    items1 = [ScoringItem(bindings=tuple((output_layer.binding(h, xs[i]), w) for h, w in sets[i].weighted_hiddens()),
                          targets=((ys[i], 1.0),)) for i in scored]
    wrong = [(hidden_layer.binding(xs[i], xs[i]), h_hats[i]) for i in scoring_idx
             if normalize(y_hats[i]) != normalize(ys[i])]

    selection0 = rank_items(pool0, hidden_layer.template, items0, lm, hidden_layer.prompt, wrong, lam)
    selection1 = rank_items(pool1, output_layer.template, items1, lm, output_layer.prompt)
    updated = stack.with_prompts([selection0.prompt, selection1.prompt])
    return updated, _report(iteration, [selection0, selection1], [pool0, pool1], y_hats, ys, lam, len(scored))


def train_step(batch: Sequence[Example], stack: LayerStack, hparams: Hyperparameters, lm: LanguageModel,
               rng: np.random.Generator, lam: float, proposal_template: Optional[Template] = None,
               templates: Optional[HiddenProposalTemplates] = None,
               extra_candidates: Optional[Sequence[Sequence[Prompt]]] = None, iteration: int = 0) -> LayerStack:
    """One variational update of both prompts of a two-layer stack."""
    proposal_template = proposal_template or load_named(proposal_template_name(hparams.bh_tpl))
    return _two_layer_step(batch, stack, hparams, lm, rng, lam, proposal_template, templates,
                           extra_candidates or ((), ()), iteration)[0]


def _multi_layer_step(batch: Sequence[Example], stack: LayerStack, hparams: Hyperparameters, lm: LanguageModel,
                      rng: np.random.Generator, lam: float, proposal_template: Template,
                      templates: Optional[HiddenProposalTemplates], extra: Sequence[Sequence[Prompt]],
                      iteration: int) -> Tuple[LayerStack, Dict[str, Any]]:
    depth = len(stack)
    if depth == 1:
        layer, report = one_layer_step(batch, stack.layers[0], hparams, lm, rng, proposal_template, extra[0],
                                       iteration)
        return LayerStack((layer,)), report
    if not batch:
        raise ValidationError("batch is empty", field="batch")

    cfg = PosteriorConfig.from_hyperparameters(hparams)
    base = draw_seed(rng)
    proposal_idx, scoring_idx = _split(len(batch), hparams, base)
    xs = [ex.input for ex in batch]
    ys = [ex.target for ex in batch]
    # outputs[i][l] is the forward output of layer l on example i
    outputs = [hiddens + [output] for hiddens, output in stack.forward_many(xs, lm)]

    def layer_input(layer_index: int, i: int) -> str:
        return xs[i] if layer_index == 0 else outputs[i][layer_index - 1]

    # backward sweep over hidden strings, top to bottom
    sets: Dict[int, List[Optional[WeightedSampleSet]]] = {}
    stars: Dict[int, List[Optional[str]]] = {depth: list(ys)}
    for l in range(depth - 1, 0, -1):
        sets[l] = sample_hidden_layer(l, xs, [layer_input(l - 1, i) for i in range(len(xs))],
                                      [outputs[i][l - 1] for i in range(len(xs))], stars[l + 1], stack, cfg, lm,
                                      stream(base, "posterior", l), templates)
        stars[l] = [s.best_hidden() if s is not None else None for s in sets[l]]

    wrong_examples = [i for i in scoring_idx if normalize(outputs[i][-1]) != normalize(ys[i])]
    selections: Dict[int, Any] = {}
    pools: Dict[int, List[Prompt]] = {}
    posterior_sets = 0
    for l in range(depth - 1, -1, -1):
        layer = stack.layers[l]
        infos = [BackwardInfo(input=layer_input(l, i), target=stars[l + 1][i], output=outputs[i][l])
                 for i in proposal_idx if stars[l + 1][i] is not None and layer_input(l, i).strip()]
        pools[l] = _candidates(layer, infos, hparams, lm, proposal_template, stream(base, "propose", l), extra[l],
                               iteration)

        items = []
        for i in scoring_idx:
            if l == 0:
                bindings = ((layer.binding(xs[i], xs[i]), 1.0),)
            elif sets[l][i] is not None:
                bindings = tuple((layer.binding(h, xs[i]), w) for h, w in sets[l][i].weighted_hiddens())
            else:
                continue
            if l == depth - 1:
                targets = ((ys[i], 1.0),)
            elif sets[l + 1][i] is not None:
                targets = tuple(sets[l + 1][i].weighted_hiddens())
            else:
                continue
            items.append(ScoringItem(bindings=bindings, targets=targets))
        if l == 0:
            posterior_sets = len(items)

        wrong = []
        if l < depth - 1:
            wrong = [(layer.binding(layer_input(l, i), xs[i]), outputs[i][l]) for i in wrong_examples]
        selections[l] = rank_items(pools[l], layer.template, items, lm, layer.prompt, wrong, lam)

    ordered = [selections[l] for l in range(depth)]
    updated = stack.with_prompts([s.prompt for s in ordered])
    return updated, _report(iteration, ordered, [pools[l] for l in range(depth)], [o[-1] for o in outputs], ys,
                            lam, posterior_sets)


def train_multi_step(batch: Sequence[Example], stack: LayerStack, hparams: Hyperparameters, lm: LanguageModel,
                     rng: np.random.Generator, lam: float, proposal_template: Optional[Template] = None,
                     templates: Optional[HiddenProposalTemplates] = None,
                     extra_candidates: Optional[Sequence[Sequence[Prompt]]] = None,
                     iteration: int = 0) -> LayerStack:
    """One update of every prompt of an L-layer stack (backward sweep, then prompt sweep)."""
    proposal_template = proposal_template or load_named(proposal_template_name(hparams.bh_tpl))
    extra = extra_candidates or tuple(() for _ in stack.layers)
    return _multi_layer_step(batch, stack, hparams, lm, rng, lam, proposal_template, templates, extra, iteration)[0]


class TwoLayerTrainer(TrainingLoop):
    algorithm = "dln2"

    def __init__(self, dataset: SplitDataset, hparams: Hyperparameters, lm: LanguageModel, model: LayerStack,
                 seed: int, proposal_template: Optional[Template] = None, run_id: Optional[str] = None,
                 checkpoint: Optional[Checkpointer] = None, templates: Optional[HiddenProposalTemplates] = None):
        self._check_depth(model)
        super().__init__(dataset, hparams, lm, model, seed, proposal_template, run_id, checkpoint)
        self.templates = templates or HiddenProposalTemplates.default()
        self.state.posterior_mixture = dict(hparams.posterior_mixture)

    def _check_depth(self, model: LayerStack) -> None:
        if len(model) != 2:
            raise ValidationError("two-layer training needs exactly two layers", field="architecture.layers",
                                  value=len(model))

    def _extra(self) -> List[List[Prompt]]:
        return [self.memory_candidates(l) for l in range(len(self.model))]

    def step(self, iteration: int, batch: List[Example], rng: np.random.Generator) -> Dict[str, Any]:
        lam = exploration_schedule(self.hparams.logp_penalty, iteration - 1, self.hparams.iterations)
        self.state.lambda_value = lam
        self.model, report = _two_layer_step(batch, self.model, self.hparams, self.lm, rng, lam,
                                             self.proposal_template, self.templates, self._extra(), iteration)
        return report


class MultiLayerTrainer(TwoLayerTrainer):
    algorithm = "dln_multi"

    def _check_depth(self, model: LayerStack) -> None:
        if len(model) < 1:
            raise ValidationError("a stack needs at least one layer", field="architecture.layers")

    def step(self, iteration: int, batch: List[Example], rng: np.random.Generator) -> Dict[str, Any]:
        lam = exploration_schedule(self.hparams.logp_penalty, iteration - 1, self.hparams.iterations)
        self.state.lambda_value = lam
        self.model, report = _multi_layer_step(batch, self.model, self.hparams, self.lm, rng, lam,
                                               self.proposal_template, self.templates, self._extra(), iteration)
        return report


def train(dataset: SplitDataset, hparams: Hyperparameters, lm: LanguageModel, stack: LayerStack, seed: int,
          proposal_template: Optional[Template] = None, run_id: Optional[str] = None,
          checkpoint: Optional[Checkpointer] = None,
          templates: Optional[HiddenProposalTemplates] = None) -> TrainState:
    """Train a two-layer stack with λ annealed linearly from ``logp_penalty`` to 0."""
    return TwoLayerTrainer(dataset, hparams, lm, stack, seed, proposal_template, run_id, checkpoint,
                           templates).run()


def train_multi(dataset: SplitDataset, hparams: Hyperparameters, lm: LanguageModel, stack: LayerStack, seed: int,
                proposal_template: Optional[Template] = None, run_id: Optional[str] = None,
                checkpoint: Optional[Checkpointer] = None,
                templates: Optional[HiddenProposalTemplates] = None) -> TrainState:
    """Train a stack of any depth; one layer behaves like ``dln1.train``."""
    return MultiLayerTrainer(dataset, hparams, lm, stack, seed, proposal_template, run_id, checkpoint,
                             templates).run()
