"""
Brute-force reference computations over enumerable spaces of the toy LM.

Everything here uses total (not length-normalized) log-probabilities and is
only defined for the toy backend, whose conditionals are exact.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .exceptions import OracleError, SpaceTooLargeError
from .lm_backend import LanguageModel, count_units

SPACE_GUARD = 100_000


@dataclass(frozen=True)
class EnumerableSpace:
    """A finite set of hidden strings.

    With ``terminated`` set, every string is scored together with the
    end-of-sequence symbol, so the space of all strings up to a length bound
    carries total mass approaching 1 as the bound grows.
    """

    strings: Tuple[str, ...]
    terminated: bool = False

    def __post_init__(self):
        if not self.strings:
            raise OracleError("hidden space is empty")
        if len(set(self.strings)) != len(self.strings):
            raise OracleError("hidden space lists a string twice")
        if len(self.strings) > SPACE_GUARD:
            raise SpaceTooLargeError(len(self.strings), SPACE_GUARD)
        if any(count_units(s) == 0 for s in self.strings) and not self.terminated:
            raise OracleError("unterminated spaces cannot hold the empty string")

    def __len__(self) -> int:
        return len(self.strings)

    @classmethod
    def all_sequences(cls, symbols: Sequence[str], length: int) -> "EnumerableSpace":
        """Every string of exactly ``length`` units over ``symbols``."""
        size = len(symbols) ** length
        if size > SPACE_GUARD:
            raise SpaceTooLargeError(size, SPACE_GUARD)
        return cls(tuple(" ".join(units) for units in itertools.product(symbols, repeat=length)))

    @classmethod
    def up_to_length(cls, symbols: Sequence[str], max_length: int) -> "EnumerableSpace":
        """Every string of 0..``max_length`` units, each followed by end-of-sequence."""
        size = sum(len(symbols) ** n for n in range(max_length + 1))
        if size > SPACE_GUARD:
            raise SpaceTooLargeError(size, SPACE_GUARD)
        strings = [" ".join(units) for n in range(max_length + 1)
                   for units in itertools.product(symbols, repeat=n)]
        return cls(tuple(strings), terminated=True)


def _require_toy(lm: LanguageModel) -> None:
    if getattr(lm, "name", None) != "toy" or not hasattr(lm, "sequence_logprob"):
        raise OracleError("exact computations need the toy backend", details={"backend": getattr(lm, "name", None)})


def _require_two_layers(stack: Any) -> None:
    if len(stack.layers) != 2:
        raise OracleError("exact marginals are defined for two-layer stacks", details={"layers": len(stack.layers)})


def _score(lm: Any, context: str, text: str, terminated: bool) -> float:
    if terminated:
        return lm.sequence_logprob(context, text, terminated=True)
    return lm.logprob(context, text).total_logprob


def joint_logprobs(x: str, y: str, stack: Any, lm_toy: LanguageModel,
                   space: EnumerableSpace) -> Tuple[np.ndarray, np.ndarray]:
    """(log p(h | x, π0), log p(y | h, x, π1)) for every h of ``space``."""
    _require_toy(lm_toy)
    _require_two_layers(stack)
    hidden_context = stack.layer_context(0, x, x)
    log_prior = np.array([_score(lm_toy, hidden_context, h, space.terminated) for h in space.strings])
    log_likelihood = np.array([lm_toy.logprob(stack.layer_context(1, h, x), y).total_logprob
                               for h in space.strings])
    return log_prior, log_likelihood


def log_sum_exp(values: Sequence[float]) -> float:
    return float(logsumexp(np.asarray(values, dtype=float)))


def exact_marginal(x: str, y: str, stack: Any, lm_toy: LanguageModel, space: EnumerableSpace) -> float:
    """log Σ_h p(y | h, x, π1) p(h | x, π0)."""
    log_prior, log_likelihood = joint_logprobs(x, y, stack, lm_toy, space)
    return log_sum_exp(log_prior + log_likelihood)


def exact_posterior(x: str, y: str, stack: Any, lm_toy: LanguageModel, space: EnumerableSpace) -> Dict[str, float]:
    """p(h | x, y) ∝ p(y | h) p(h | x), normalized over ``space``."""
    log_prior, log_likelihood = joint_logprobs(x, y, stack, lm_toy, space)
    log_joint = log_prior + log_likelihood
    if not np.isfinite(log_joint).any():
        raise OracleError("every element of the space has zero joint probability")
    posterior = np.exp(log_joint - logsumexp(log_joint))
    return dict(zip(space.strings, posterior.tolist()))


def restricted_posterior(x: str, y: str, stack: Any, lm_toy: LanguageModel,
                         hiddens: Sequence[str]) -> Dict[str, float]:
    """The exact posterior restricted to (and renormalized over) the distinct strings ``hiddens``."""
    return exact_posterior(x, y, stack, lm_toy, EnumerableSpace(tuple(dict.fromkeys(hiddens))))


def elbo(q: Sequence[float], log_joint: Sequence[float]) -> float:
    """Σ_h q(h) [log p(y, h | x) - log q(h)]; ≤ the log-marginal for every normalized q."""
    q = np.asarray(q, dtype=float)
    log_joint = np.asarray(log_joint, dtype=float)
    if q.shape != log_joint.shape:
        raise OracleError("q and the joint must be aligned", details={"q": q.shape, "joint": log_joint.shape})
    if (q < 0).any() or not math.isclose(float(q.sum()), 1.0, abs_tol=1e-6):
        raise OracleError("q must be a normalized distribution", details={"sum": float(q.sum())})
    total = 0.0
    for qi, lj in zip(q, log_joint):
        if qi == 0.0:
            continue
        total += qi * (lj - math.log(qi))
    return float(total)
