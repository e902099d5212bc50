"""
Numeric machinery of training: posterior sharpening, ELBO-weighted prompt
scores and the exploration reward.

All candidate scores use length-normalized log-probs; the exact quantities of
the oracle use total log-probs. Example scores are summed over a minibatch.
"""

import math
from dataclasses import dataclass
from typing import Any, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax

from . import oracle
from .exceptions import ScoringError, ValidationError
from .lm_backend import LanguageModel
from .templates import Template, render

Binding = Mapping[str, Any]
WEIGHT_TOLERANCE = 1e-9


def _text(candidate: Any) -> str:
    return candidate if isinstance(candidate, str) else candidate.text


def sharpen(raw: Sequence[Tuple[float, float]], alpha_sharp: float = 1.0) -> List[float]:
    """Softmax over ``alpha_sharp * (alpha_i + beta_i)``, computed with max-subtraction."""
    if len(raw) == 0:
        raise ScoringError("cannot sharpen an empty sample list")
    if not math.isfinite(alpha_sharp) or alpha_sharp < 0:
        raise ScoringError("alpha_sharp must be finite and non-negative", value=alpha_sharp)
    joint = np.empty(len(raw))
    for i, (alpha, beta) in enumerate(raw):
        if not (math.isfinite(alpha) and math.isfinite(beta)):
            raise ScoringError("non-finite entry", index=i, value=(alpha, beta))
        joint[i] = alpha + beta
        if not math.isfinite(joint[i]):
            raise ScoringError("alpha + beta overflows", index=i, value=(alpha, beta))
    shifted = joint - joint.max()
    with np.errstate(over="ignore"):
        logits = alpha_sharp * shifted
    return softmax(logits).tolist()


def argmax_lowest(values: Sequence[float]) -> int:
    """Index of the maximum; the lowest index wins ties."""
    if len(values) == 0:
        raise ScoringError("cannot take the argmax of an empty list")
    return int(np.argmax(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class PosteriorSample:
    hidden: str
    alpha: float
    beta: float
    component: str = "q_pri"

    def __post_init__(self):
        if not self.hidden.strip():
            raise ValidationError("posterior samples must be nonempty", field="hidden")


@dataclass(frozen=True)
class WeightedSampleSet:
    samples: Tuple[PosteriorSample, ...]
    alpha_sharp: float
    weights: Tuple[float, ...]

    def __post_init__(self):
        if len(self.samples) != len(self.weights) or not self.samples:
            raise ScoringError("weights and samples must be nonempty and of equal length")
        if any(not 0.0 <= w <= 1.0 for w in self.weights):
            raise ScoringError("weights must lie in [0, 1]")
        if abs(sum(self.weights) - 1.0) > WEIGHT_TOLERANCE:
            raise ScoringError("weights must sum to 1", value=sum(self.weights))

    @classmethod
    def build(cls, samples: Sequence[PosteriorSample], alpha_sharp: float) -> "WeightedSampleSet":
        weights = sharpen([(s.alpha, s.beta) for s in samples], alpha_sharp)
        return cls(samples=tuple(samples), alpha_sharp=alpha_sharp, weights=tuple(weights))

    def __len__(self) -> int:
        return len(self.samples)

    def best_index(self) -> int:
        return argmax_lowest(self.weights)

    def best_hidden(self) -> str:
        return self.samples[self.best_index()].hidden

    def weighted_hiddens(self) -> List[Tuple[str, float]]:
        return [(sample.hidden, weight) for sample, weight in zip(self.samples, self.weights)]

    def to_dict(self) -> dict:
        return {
            "alpha_sharp": self.alpha_sharp,
            "samples": [
                {"hidden": s.hidden, "alpha": s.alpha, "beta": s.beta, "component": s.component, "weight": w}
                for s, w in zip(self.samples, self.weights)
            ],
        }


@dataclass(frozen=True)
class ScoringItem:
    """One example: weighted conditioning bindings (prompt excluded) and weighted continuations."""

    bindings: Tuple[Tuple[Binding, float], ...]
    targets: Tuple[Tuple[str, float], ...]


def weighted_prompt_scores(candidates: Sequence[Any], template: Template, items: Sequence[ScoringItem],
                           lm: LanguageModel) -> List[float]:
    """For each candidate prompt, Σ_items Σ_bindings Σ_targets w·w'·normalized log p(target | context).

    Pairs with zero weight are not scored. All pairs of all candidates go out
    in one bounded fan-out.
    """
    texts = [_text(c) for c in candidates]
    pairs: List[Tuple[str, str]] = []
    owners: List[Tuple[int, float]] = []
    for n, text in enumerate(texts):
        for item in items:
            for binding, w_in in item.bindings:
                context = None
                for target, w_out in item.targets:
                    weight = w_in * w_out
                    if weight == 0.0:
                        continue
                    if context is None:
                        context = render(template, {**binding, "prompt": text})
                    pairs.append((context, target))
                    owners.append((n, weight))
    scores = [0.0] * len(texts)
    if not pairs:
        return scores
    for (n, weight), scored in zip(owners, lm.batch_logprob(pairs)):
        scores[n] += weight * scored.normalized_logprob
    return scores


def weighted_prompt_score(candidate: Any, template: Template, items: Sequence[ScoringItem],
                          lm: LanguageModel) -> float:
    return weighted_prompt_scores([candidate], template, items, lm)[0]


def first_layer_items(inputs: Sequence[Union[str, Binding]],
                      samples: Sequence[WeightedSampleSet]) -> List[ScoringItem]:
    if len(inputs) != len(samples):
        raise ScoringError("every input needs a sample set")
    return [ScoringItem(bindings=((_as_binding(x), 1.0),), targets=tuple(sample_set.weighted_hiddens()))
            for x, sample_set in zip(inputs, samples)]


def second_layer_items(triples: Sequence[Tuple[str, WeightedSampleSet, str]]) -> List[ScoringItem]:
    return [ScoringItem(bindings=tuple(({"input": x, "h": h}, w) for h, w in sample_set.weighted_hiddens()),
                        targets=((y, 1.0),))
            for x, sample_set, y in triples]


def prompt_score_first_layer(candidate: Any, inputs: Sequence[str], samples: Sequence[WeightedSampleSet],
                             lm: LanguageModel, forward_template: Template) -> float:
    """Σ_x Σ_k q^k · normalized log p(h^k | render(x, candidate))."""
    return weighted_prompt_score(candidate, forward_template, first_layer_items(inputs, samples), lm)


def prompt_score_second_layer(candidate: Any, triples: Sequence[Tuple[str, WeightedSampleSet, str]],
                              lm: LanguageModel, residual_template: Template) -> float:
    """Σ_x Σ_k q^k · normalized log p(y | render(h^k, x, candidate))."""
    return weighted_prompt_score(candidate, residual_template, second_layer_items(triples), lm)


def _as_binding(x: Union[str, Binding]) -> Binding:
    return {"input": x} if isinstance(x, str) else x


def exploration_rewards(candidates: Sequence[Any], wrong_cases: Sequence[Tuple[Union[str, Binding], str]],
                        lm: LanguageModel, forward_template: Template, lam: float) -> List[float]:
    """``-lam * Σ_wrong normalized log p(h_hat | render(x, candidate))`` for each candidate."""
    if lam < 0:
        raise ScoringError("lambda must be non-negative", value=lam)
    if lam == 0 or not wrong_cases:
        return [0.0] * len(candidates)
    items = [ScoringItem(bindings=((_as_binding(x), 1.0),), targets=((h_hat, 1.0),))
             for x, h_hat in wrong_cases if h_hat.strip()]
    return [-lam * total + 0.0 for total in weighted_prompt_scores(candidates, forward_template, items, lm)]


def exploration_reward(candidate: Any, wrong_cases: Sequence[Tuple[Union[str, Binding], str]],
                       lm: LanguageModel, forward_template: Template, lam: float) -> float:
    return exploration_rewards([candidate], wrong_cases, lm, forward_template, lam)[0]


def pick_best(scores: Sequence[float], candidate_texts: Sequence[str], incumbent_text: Optional[str] = None) -> int:
    """Argmax over ``scores``; ties go to the incumbent, then to the lowest index."""
    if not scores or len(scores) != len(candidate_texts):
        raise ScoringError("scores and candidates must be nonempty and aligned")
    if any(math.isnan(s) for s in scores):
        raise ScoringError("NaN score", index=next(i for i, s in enumerate(scores) if math.isnan(s)))
    best = max(scores)
    if incumbent_text is not None:
        for i, (score, text) in enumerate(zip(scores, candidate_texts)):
            if text == incumbent_text and score == best:
                return i
    return scores.index(best) if isinstance(scores, list) else list(scores).index(best)


def elbo_lower_bounds_marginal_check(x: str, y: str, stack: Any, lm_toy: LanguageModel,
                                     hidden_space: "oracle.EnumerableSpace",
                                     q: Optional[Sequence[float]] = None) -> Tuple[float, float]:
    """(ELBO under ``q``, exact log-marginal) over an enumerable hidden space.

    ``q`` defaults to the prior renormalized over the space. The ELBO here
    includes the entropy of ``q`` and uses total log-probs.
    """
    log_prior, log_likelihood = oracle.joint_logprobs(x, y, stack, lm_toy, hidden_space)
    log_joint = log_prior + log_likelihood
    if q is None:
        q = softmax(log_prior)
    return oracle.elbo(q, log_joint), oracle.log_sum_exp(log_joint)


def kl_divergence(q: Sequence[float], p: Sequence[float]) -> float:
    """KL(q || p) over aligned distributions; terms with q = 0 contribute nothing."""
    if len(q) != len(p):
        raise ScoringError("distributions must be aligned", value=(len(q), len(p)))
    total = 0.0
    for qi, pi in zip(q, p):
        if qi <= 0.0:
            continue
        if pi <= 0.0:
            return math.inf
        total += qi * (math.log(qi) - math.log(pi))
    return total
