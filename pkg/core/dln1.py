"""
One-layer language network.

A layer is a prompt plus a forward template; inference renders the template
with the prompt and the input and decodes at temperature 0. Training follows
the propose-and-rank loop: infer on a minibatch, sample candidate prompts from
the proposal template, keep the candidate with the best summed log-likelihood
of the targets, validate periodically and backtrack to the best remembered
prompt when validation keeps regressing.

The loop itself (``TrainingLoop``) is shared with the deeper networks in
``dln2``; only the per-iteration step differs.
"""

import math
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .centralized_logger import logger
from .evalkit import Example, SplitDataset, evaluate, normalize
from .exceptions import BackendError, ConfigurationError, TrainingAbortedError, ValidationError
from .lm_backend import GenerationRequest, LanguageModel, TokenLedger
from .random_streams import derive_seed, draw_seed, stream
from .scoring import ScoringItem, exploration_rewards, pick_best, weighted_prompt_scores
from .templates import BackwardInfo, Template, load_named, render, select_message

DEFAULT_FORWARD_TEMPLATE = "classify_forward"
PROPOSAL_STOPS = ("[END]",)
PROPOSAL_TEMPLATE_VARIANTS = ("v3.0", "v3.5")
MIXTURE_COMPONENTS = ("q_pri", "q_pri_plus", "q_edit")


def proposal_template_name(bh_tpl: str) -> str:
    return f"prompt_proposal_{bh_tpl}"


class PromptOrigin(str, Enum):
    INITIALIZATION = "initialization"
    PROPOSED = "proposed"
    MEMORY = "memory"


@dataclass(frozen=True)
class Prompt:
    text: str
    origin: PromptOrigin = PromptOrigin.INITIALIZATION
    created_at_iteration: int = 0
    val_score: Optional[float] = None
    message_index: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["origin"] = self.origin.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Prompt":
        return cls(text=data["text"], origin=PromptOrigin(data.get("origin", "initialization")),
                   created_at_iteration=int(data.get("created_at_iteration", 0)),
                   val_score=data.get("val_score"), message_index=data.get("message_index"))


@dataclass(frozen=True)
class LanguageLayer:
    """A prompt, its forward template and decoding limits.

    A residual layer sees the previous layer's output as ``h`` and the
    network input as ``input``; a plain layer sees the previous output as
    ``input``.
    """

    prompt: Prompt
    template: Template
    residual: bool = False
    max_new_units: int = 64
    stop: Tuple[str, ...] = ()

    def binding(self, layer_input: str, x: str) -> Dict[str, str]:
        if self.residual:
            return {"input": x, "h": layer_input}
        return {"input": layer_input}

    def context(self, layer_input: str, x: str, prompt_text: Optional[str] = None) -> str:
        text = self.prompt.text if prompt_text is None else prompt_text
        return render(self.template, {**self.binding(layer_input, x), "prompt": text})

    def request(self, layer_input: str, x: str) -> GenerationRequest:
        return GenerationRequest(context=self.context(layer_input, x), temperature=0.0, n_samples=1,
                                 max_new_units=self.max_new_units, stop_sequences=self.stop)

    def forward_many(self, layer_inputs: Sequence[str], xs: Sequence[str], lm: LanguageModel) -> List[str]:
        outputs = lm.generate_many([self.request(h, x) for h, x in zip(layer_inputs, xs)])
        return [samples[0].strip() for samples in outputs]

    def with_prompt(self, prompt: Prompt) -> "LanguageLayer":
        return replace(self, prompt=prompt)

    # A single layer is also a complete network.

    @property
    def layers(self) -> Tuple["LanguageLayer", ...]:
        return (self,)

    def prompts(self) -> Tuple[Prompt, ...]:
        return (self.prompt,)

    def with_prompts(self, prompts: Sequence[Prompt]) -> "LanguageLayer":
        if len(prompts) != 1:
            raise ValidationError("a single layer takes exactly one prompt", field="prompts", value=len(prompts))
        return self.with_prompt(prompts[0])

    def predict_many(self, inputs: Sequence[str], lm: LanguageModel) -> List[str]:
        return self.forward_many(inputs, inputs, lm)


def infer(x: str, prompt: Prompt, lm: LanguageModel, forward_template: Optional[Template] = None,
          max_new_units: int = 64, stop: Sequence[str] = ()) -> str:
    """Temperature-0 output of ``render(forward_template, {prompt, input=x})``."""
    layer = LanguageLayer(prompt=prompt, template=forward_template or load_named(DEFAULT_FORWARD_TEMPLATE),
                          max_new_units=max_new_units, stop=tuple(stop))
    return layer.predict_many([x], lm)[0]


def propose(current: Prompt, batch: Sequence[BackwardInfo], lm: LanguageModel, proposal_template: Template,
            n: int, rng: np.random.Generator, temperature: float = 0.7, max_new_units: int = 128,
            subset_size: Optional[int] = None, iteration: int = 0) -> List[Prompt]:
    """Sample ``n`` candidate prompts and return them followed by ``current``.

    Each render draws its own message alternative and its own random subset
    of ``batch`` from ``rng``. Empty samples are discarded.
    """
    if not batch:
        raise ValidationError("proposals need at least one example", field="batch")
    if n < 1:
        raise ValidationError("n must be at least 1", field="num_prompts", value=n)
    size = min(len(batch), subset_size or math.ceil(len(batch) / 2))
    uses_message = "message" in proposal_template.required_vars

    requests, messages = [], []
    for _ in range(n):
        message_index = select_message(proposal_template, rng)[0] if uses_message else None
        chosen = sorted(rng.choice(len(batch), size=size, replace=False).tolist())
        context = render(proposal_template, {"prompt": current.text, "backward_infos": [batch[i] for i in chosen]},
                         message_index)
        requests.append(GenerationRequest(context=context, temperature=temperature, n_samples=1,
                                          max_new_units=max_new_units, stop_sequences=PROPOSAL_STOPS,
                                          seed=draw_seed(rng)))
        messages.append(message_index)

    candidates = []
    for samples, message_index in zip(lm.generate_many(requests), messages):
        text = samples[0].strip()
        if text:
            candidates.append(Prompt(text=text, origin=PromptOrigin.PROPOSED, created_at_iteration=iteration,
                                     message_index=message_index))
    if len(candidates) < n:
        logger.debug(f"{n - len(candidates)} of {n} prompt proposals were empty")
    return candidates + [current]


@dataclass(frozen=True)
class Selection:
    prompt: Prompt
    scores: Tuple[float, ...]
    best_index: int
    incumbent_score: Optional[float]

    @property
    def best_score(self) -> float:
        return self.scores[self.best_index]


def rank_items(candidates: Sequence[Prompt], template: Template, items: Sequence[ScoringItem], lm: LanguageModel,
               incumbent: Optional[Prompt] = None, wrong_cases: Sequence[Tuple[Any, str]] = (),
               lam: float = 0.0) -> Selection:
    """Score candidates over weighted items, add the exploration reward, keep the best.

    Identical texts are scored once. Ties go to ``incumbent``, then to the
    lowest index.
    """
    if not candidates:
        raise ValidationError("no candidates to select from", field="candidates")
    texts = [candidate.text for candidate in candidates]
    unique = list(dict.fromkeys(texts))
    unique_scores = weighted_prompt_scores(unique, template, items, lm)
    if lam > 0 and wrong_cases:
        rewards = exploration_rewards(unique, wrong_cases, lm, template, lam)
        unique_scores = [score + reward for score, reward in zip(unique_scores, rewards)]
    by_text = dict(zip(unique, unique_scores))
    scores = tuple(by_text[text] for text in texts)

    best = pick_best(list(scores), texts, incumbent.text if incumbent is not None else None)
    chosen = candidates[best]
    if incumbent is not None and texts[best] == incumbent.text:
        chosen = incumbent
    return Selection(prompt=chosen, scores=scores, best_index=best,
                     incumbent_score=by_text.get(incumbent.text) if incumbent is not None else None)


def rank(candidates: Sequence[Prompt], batch: Sequence[Example], lm: LanguageModel, forward_template: Template,
         incumbent: Optional[Prompt] = None, scoring_subset: Optional[Sequence[int]] = None) -> Selection:
    """Rank by Σ normalized log p(y | render(x, candidate)); ``scoring_subset`` restricts the batch indices."""
    examples = list(batch) if scoring_subset is None else [batch[i] for i in scoring_subset]
    items = [ScoringItem(bindings=(({"input": ex.input}, 1.0),), targets=((ex.target, 1.0),)) for ex in examples]
    return rank_items(candidates, forward_template, items, lm, incumbent)


def select(candidates: Sequence[Prompt], batch: Sequence[Example], lm: LanguageModel, forward_template: Template,
           incumbent: Optional[Prompt] = None, scoring_subset: Optional[Sequence[int]] = None) -> Prompt:
    return rank(candidates, batch, lm, forward_template, incumbent, scoring_subset).prompt


def split_for_ranking(batch: Sequence[Any], rng: np.random.Generator) -> Tuple[List[Any], List[Any]]:
    """Seeded halves (proposal, scoring); an odd extra example goes to the scoring half."""
    order = rng.permutation(len(batch)).tolist()
    half = len(batch) // 2
    proposal, scoring = sorted(order[:half]), sorted(order[half:])
    return [batch[i] for i in proposal], [batch[i] for i in scoring]


class MinibatchSampler:
    """Index minibatches drawn without replacement within an epoch, reshuffled every epoch.

    A batch never straddles two epochs: the tail of an epoch shorter than the
    batch size is skipped. Datasets smaller than a batch yield the whole
    (shuffled) dataset each time.
    """

    def __init__(self, n: int, batch_size: int, seed: int, epoch: int = 0, position: int = 0):
        if n < 1 or batch_size < 1:
            raise ValidationError("sampler needs a nonempty dataset and a positive batch size")
        self.n = n
        self.batch_size = min(batch_size, n)
        self.seed = seed
        self.epoch = epoch
        self.position = position
        self._order = self._permutation(epoch)

    def _permutation(self, epoch: int) -> List[int]:
        return stream(self.seed, "epoch", epoch).permutation(self.n).tolist()

    def next_batch(self) -> List[int]:
        if self.position + self.batch_size > self.n:
            self.epoch += 1
            self.position = 0
            self._order = self._permutation(self.epoch)
        batch = self._order[self.position:self.position + self.batch_size]
        self.position += self.batch_size
        return batch

    def state(self) -> Dict[str, int]:
        return {"epoch": self.epoch, "position": self.position}


@dataclass(frozen=True)
class MemoryEntry:
    prompts: Tuple[Prompt, ...]
    val_accuracy: float
    iteration: int

    @property
    def key(self) -> Tuple[str, ...]:
        return tuple(prompt.text for prompt in self.prompts)

    def to_dict(self) -> Dict[str, Any]:
        return {"prompts": [p.to_dict() for p in self.prompts], "val_accuracy": self.val_accuracy,
                "iteration": self.iteration}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MemoryEntry":
        return cls(prompts=tuple(Prompt.from_dict(p) for p in data["prompts"]),
                   val_accuracy=float(data["val_accuracy"]), iteration=int(data["iteration"]))


class PromptMemory:
    """The M best prompt tuples by validation accuracy, best first, no repeated texts."""

    def __init__(self, capacity: int = 5, entries: Sequence[MemoryEntry] = ()):
        if capacity < 1:
            raise ValidationError("memory capacity must be positive", field="memory_size", value=capacity)
        self.capacity = capacity
        self.entries: List[MemoryEntry] = []
        for entry in entries:
            self._insert(entry)

    def _insert(self, entry: MemoryEntry) -> None:
        for i, existing in enumerate(self.entries):
            if existing.key == entry.key:
                if entry.val_accuracy <= existing.val_accuracy:
                    return
                del self.entries[i]
                break
        self.entries.append(entry)
        # stable: equal accuracies keep the earlier entry first
        self.entries.sort(key=lambda e: (-e.val_accuracy, e.iteration))
        del self.entries[self.capacity:]

    def add(self, prompts: Sequence[Prompt], val_accuracy: float, iteration: int) -> None:
        scored = tuple(replace(p, val_score=val_accuracy) for p in prompts)
        self._insert(MemoryEntry(prompts=scored, val_accuracy=val_accuracy, iteration=iteration))

    def best(self) -> MemoryEntry:
        if not self.entries:
            raise ValidationError("memory is empty", field="memory")
        return self.entries[0]

    def top(self, n: int) -> List[MemoryEntry]:
        return self.entries[:max(0, n)]

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> Dict[str, Any]:
        return {"capacity": self.capacity, "entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PromptMemory":
        return cls(capacity=int(data["capacity"]), entries=[MemoryEntry.from_dict(e) for e in data["entries"]])


@dataclass(frozen=True)
class Hyperparameters:
    batch_size: int = 20
    iterations: int = 20
    eval_every: int = 2
    num_prompts: int = 20
    num_h_samples: int = 5
    alpha_sharp: float = 1.0
    logp_penalty: float = 0.0
    tolerance: int = -1
    memory_size: int = 5
    use_memory: int = 0
    held_out_prompt_ranking: bool = False
    posterior_mixture: Dict[str, float] = field(
        default_factory=lambda: {"q_pri": 0.5, "q_pri_plus": 0.5, "q_edit": 0.0})
    bh_tpl: str = "v3.5"
    proposal_temperature: float = 0.7
    posterior_temperature: float = 0.7
    proposal_subset_size: Optional[int] = None
    proposal_max_units: int = 128

    def validate(self) -> None:
        """Raise ConfigurationError naming the first offending field."""
        def fail(name: str, message: str):
            raise ConfigurationError(message, field=f"hyperparameters.{name}")

        for name in ("batch_size", "iterations", "eval_every", "num_prompts", "num_h_samples", "memory_size",
                     "proposal_max_units"):
            if not isinstance(getattr(self, name), int) or getattr(self, name) < 1:
                fail(name, f"{name} must be a positive integer")
        if self.held_out_prompt_ranking and self.batch_size < 2:
            fail("held_out_prompt_ranking", "held-out ranking needs a batch of at least 2")
        if not isinstance(self.tolerance, int) or self.tolerance < -1:
            fail("tolerance", "tolerance must be -1 (disabled) or a non-negative integer")
        if not isinstance(self.use_memory, int) or not 0 <= self.use_memory <= self.memory_size:
            fail("use_memory", "use_memory must lie between 0 and memory_size")
        if not self.alpha_sharp > 0 or not math.isfinite(self.alpha_sharp):
            fail("alpha_sharp", "alpha_sharp must be a positive number")
        if self.logp_penalty < 0:
            fail("logp_penalty", "logp_penalty must be non-negative")
        if self.proposal_temperature < 0 or self.posterior_temperature < 0:
            fail("proposal_temperature", "temperatures must be non-negative")
        if self.bh_tpl not in PROPOSAL_TEMPLATE_VARIANTS:
            fail("bh_tpl", f"bh_tpl must be one of {', '.join(PROPOSAL_TEMPLATE_VARIANTS)}")
        if self.proposal_subset_size is not None and (
                not isinstance(self.proposal_subset_size, int) or self.proposal_subset_size < 1):
            fail("proposal_subset_size", "proposal_subset_size must be a positive integer")
        unknown = set(self.posterior_mixture) - set(MIXTURE_COMPONENTS)
        if unknown:
            fail("posterior_mixture", f"unknown mixture components: {', '.join(sorted(unknown))}")
        weights = list(self.posterior_mixture.values())
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            fail("posterior_mixture", "mixture weights must be non-negative and sum to 1")

    def mixture_weights(self) -> List[float]:
        return [float(self.posterior_mixture.get(name, 0.0)) for name in MIXTURE_COMPONENTS]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainState:
    algorithm: str
    seed: int
    prompts: Tuple[Prompt, ...]
    memory: PromptMemory
    ledger: TokenLedger
    iteration: int = 0
    validation_history: List[Dict[str, Any]] = field(default_factory=list)
    step_history: List[Dict[str, Any]] = field(default_factory=list)
    initial_val_accuracy: Optional[float] = None
    regressions: int = 0
    lambda_value: Optional[float] = None
    posterior_mixture: Optional[Dict[str, float]] = None
    sampler_state: Dict[str, int] = field(default_factory=dict)
    completed: bool = False

    @property
    def best_val_accuracy(self) -> Optional[float]:
        return self.memory.best().val_accuracy if len(self.memory) else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "iteration": self.iteration,
            "prompts": [p.to_dict() for p in self.prompts],
            "memory": self.memory.to_dict(),
            "validation_history": list(self.validation_history),
            "step_history": list(self.step_history),
            "initial_val_accuracy": self.initial_val_accuracy,
            "best_val_accuracy": self.best_val_accuracy,
            "regressions": self.regressions,
            "lambda_value": self.lambda_value,
            "posterior_mixture": self.posterior_mixture,
            "rng": {"seed": self.seed, "sampler": dict(self.sampler_state)},
            "token_ledger": self.ledger.snapshot(),
            "completed": self.completed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainState":
        return cls(
            algorithm=data["algorithm"],
            seed=int(data["seed"]),
            prompts=tuple(Prompt.from_dict(p) for p in data["prompts"]),
            memory=PromptMemory.from_dict(data["memory"]),
            ledger=TokenLedger.from_dict(data.get("token_ledger", {})),
            iteration=int(data.get("iteration", 0)),
            validation_history=list(data.get("validation_history", [])),
            step_history=list(data.get("step_history", [])),
            initial_val_accuracy=data.get("initial_val_accuracy"),
            regressions=int(data.get("regressions", 0)),
            lambda_value=data.get("lambda_value"),
            posterior_mixture=data.get("posterior_mixture"),
            sampler_state=dict(data.get("rng", {}).get("sampler", {})),
            completed=bool(data.get("completed", False)),
        )


Checkpointer = Callable[[TrainState], Optional[str]]


def one_layer_step(batch: Sequence[Example], layer: LanguageLayer, hparams: Hyperparameters, lm: LanguageModel,
                   rng: np.random.Generator, proposal_template: Template, extra_candidates: Sequence[Prompt] = (),
                   iteration: int = 0) -> Tuple[LanguageLayer, Dict[str, Any]]:
    """Infer, propose, rank. Returns the updated layer and a step report."""
    base = draw_seed(rng)
    indices = list(range(len(batch)))
    if hparams.held_out_prompt_ranking:
        proposal_idx, scoring_idx = split_for_ranking(indices, stream(base, "split"))
    else:
        proposal_idx, scoring_idx = indices, indices

    xs = [batch[i].input for i in proposal_idx]
    outputs = layer.forward_many(xs, xs, lm)
    infos = [BackwardInfo(input=x, target=batch[i].target, output=out)
             for i, x, out in zip(proposal_idx, xs, outputs)]

    candidates = propose(layer.prompt, infos, lm, proposal_template, hparams.num_prompts,
                         stream(base, "propose", 0), temperature=hparams.proposal_temperature,
                         max_new_units=hparams.proposal_max_units, subset_size=hparams.proposal_subset_size,
                         iteration=iteration)
    candidates.extend(extra_candidates)
    selection = rank(candidates, batch, lm, layer.template, incumbent=layer.prompt, scoring_subset=scoring_idx)

    report = {
        "iteration": iteration,
        "selected": [selection.prompt.text],
        "origins": [selection.prompt.origin.value],
        "batch_scores": [selection.best_score],
        "incumbent_scores": [selection.incumbent_score],
        "candidates": [len(candidates)],
        "batch_accuracy": sum(normalize(o) == normalize(batch[i].target)
                              for i, o in zip(proposal_idx, outputs)) / len(outputs),
    }
    return layer.with_prompt(selection.prompt), report


class TrainingLoop:
    """Minibatch loop with periodic validation, best-prompt memory and backtracking.

    Subclasses implement ``step``; ``self.model`` is any network exposing
    ``prompts()``, ``with_prompts()`` and ``predict_many()``.
    """

    algorithm = "dln1"

    def __init__(self, dataset: SplitDataset, hparams: Hyperparameters, lm: LanguageModel, model: Any, seed: int,
                 proposal_template: Optional[Template] = None, run_id: Optional[str] = None,
                 checkpoint: Optional[Checkpointer] = None):
        hparams.validate()
        if not dataset.train:
            raise ValidationError("training needs a nonempty train split", field="train")
        self.dataset = dataset
        self.validation = dataset.valid or dataset.train
        self.hparams = hparams
        self.lm = lm
        self.model = model
        self.seed = int(seed)
        self.proposal_template = proposal_template or load_named(proposal_template_name(hparams.bh_tpl))
        self.run_id = run_id or f"{self.algorithm}_seed_{self.seed}"
        self.checkpoint = checkpoint
        self.sampler = MinibatchSampler(len(dataset.train), hparams.batch_size, derive_seed(self.seed, "minibatch"))
        self.state = TrainState(algorithm=self.algorithm, seed=self.seed, prompts=tuple(model.prompts()),
                                memory=PromptMemory(hparams.memory_size), ledger=lm.ledger)

    def step(self, iteration: int, batch: List[Example], rng: np.random.Generator) -> Dict[str, Any]:
        raise NotImplementedError

    def memory_candidates(self, layer_index: int) -> List[Prompt]:
        return [replace(entry.prompts[layer_index], origin=PromptOrigin.MEMORY)
                for entry in self.state.memory.top(self.hparams.use_memory)]

    def _save_checkpoint(self) -> Optional[str]:
        if self.checkpoint is None:
            return None
        self.state.sampler_state = self.sampler.state()
        path = self.checkpoint(self.state)
        logger.log_training_event(self.run_id, "checkpoint_written", {"iteration": self.state.iteration,
                                                                      "path": path})
        return path

    def _validate(self, iteration: int) -> None:
        state = self.state
        score = evaluate(self.model, self.validation, self.lm)
        state.memory.add(self.model.prompts(), score, iteration)
        record = {"iteration": iteration, "accuracy": score, "reloaded": False}

        if score < state.memory.best().val_accuracy:
            state.regressions += 1
        else:
            state.regressions = 0
        # tolerance t reloads on the t-th consecutive regression; 0 behaves like 1
        tolerance = self.hparams.tolerance
        if tolerance >= 0 and state.regressions >= max(tolerance, 1):
            best = state.memory.best()
            self.model = self.model.with_prompts([replace(p, origin=PromptOrigin.MEMORY) for p in best.prompts])
            state.prompts = tuple(self.model.prompts())
            state.regressions = 0
            record["reloaded"] = True
            record["reloaded_from_iteration"] = best.iteration

        state.validation_history.append(record)
        logger.log_training_event(self.run_id, "validation", {**record, "best": state.best_val_accuracy,
                                                              "prompts": [p.text for p in state.prompts]})

    def run(self) -> TrainState:
        state, hp = self.state, self.hparams
        logger.log_training_event(self.run_id, "training_started", {
            "algorithm": self.algorithm, "seed": self.seed, "layers": len(state.prompts),
            "hyperparameters": hp.to_dict()})
        iteration = state.iteration
        try:
            if state.initial_val_accuracy is None:
                score = evaluate(self.model, self.validation, self.lm)
                state.initial_val_accuracy = score
                state.memory.add(self.model.prompts(), score, 0)
                logger.log_training_event(self.run_id, "initial_validation", {"accuracy": score})

            for iteration in range(state.iteration + 1, hp.iterations + 1):
                start_time = time.time()
                batch = [self.dataset.train[i] for i in self.sampler.next_batch()]
                report = self.step(iteration, batch, stream(self.seed, iteration, "step"))
                state.iteration = iteration
                state.prompts = tuple(self.model.prompts())
                state.step_history.append(report)
                logger.log_training_event(self.run_id, "iteration", report)
                logger.log_performance("training_step", time.time() - start_time,
                                       {"run_id": self.run_id, "iteration": iteration})
                if iteration % hp.eval_every == 0:
                    self._validate(iteration)
                    self._save_checkpoint()
        except BackendError as e:
            path = self._save_checkpoint()
            logger.log_training_event(self.run_id, "training_aborted", {"iteration": iteration, "error": str(e),
                                                                        "checkpoint": path})
            raise TrainingAbortedError(f"backend failure at iteration {iteration}", checkpoint_path=path,
                                       cause=e) from e

        best = state.memory.best()
        self.model = self.model.with_prompts(list(best.prompts))
        state.prompts = tuple(self.model.prompts())
        state.completed = True
        self._save_checkpoint()
        logger.log_training_event(self.run_id, "training_completed", {
            "best_val_accuracy": best.val_accuracy, "best_iteration": best.iteration,
            "prompts": [p.text for p in best.prompts], "token_ledger": self.lm.ledger.snapshot()})
        return state


class OneLayerTrainer(TrainingLoop):
    algorithm = "dln1"

    def step(self, iteration: int, batch: List[Example], rng: np.random.Generator) -> Dict[str, Any]:
        self.model, report = one_layer_step(batch, self.model, self.hparams, self.lm, rng, self.proposal_template,
                                            self.memory_candidates(0), iteration)
        return report


def train(dataset: SplitDataset, hparams: Hyperparameters, lm: LanguageModel, layer: LanguageLayer, seed: int,
          proposal_template: Optional[Template] = None, run_id: Optional[str] = None,
          checkpoint: Optional[Checkpointer] = None) -> TrainState:
    """Train a one-layer network; the returned state holds the best prompt by validation accuracy."""
    trainer = OneLayerTrainer(dataset, hparams, lm, layer, seed, proposal_template, run_id, checkpoint)
    return trainer.run()
