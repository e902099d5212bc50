"""
Deterministic toy language model.

A seeded finite-order Markov model over a small symbol vocabulary. Units are
whitespace-delimited words. The next-unit distribution depends only on the
last ``order`` units of the text so far:

* if a published rule matches a suffix of that history (longest suffix
  first, then the ``"*"`` rule), the rule's table is used; symbols the rule
  does not list share the remaining mass uniformly;
* otherwise the table is ``softmax(sharpness * z)`` with ``z`` drawn from a
  normal generator seeded by a hash of ``(seed, history)``.

Every conditional is a proper distribution over the vocabulary (end-of-
sequence symbol included), so log-probabilities are exact and bounded output
spaces are enumerable.
"""

from functools import lru_cache
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from .exceptions import ValidationError
from .lm_backend import GenerationRequest, LanguageModel, TokenLedger
from .random_streams import derive_seed

EOS = "</s>"
MAX_VOCABULARY = 32
DEFAULT_RULE = "*"


class ToyLanguageModel(LanguageModel):
    """Seeded Markov LM with exact log-probs and per-call sampling seeds."""

    name = "toy"

    def __init__(self, vocabulary: Sequence[str], order: int = 2, seed: int = 0, sharpness: float = 2.0,
                 rules: Optional[Mapping[str, Mapping[str, float]]] = None, eos: str = EOS,
                 max_in_flight: int = 1, ledger: Optional[TokenLedger] = None):
        super().__init__(max_in_flight=max_in_flight, ledger=ledger)
        symbols = list(dict.fromkeys(vocabulary))
        if eos not in symbols:
            symbols.append(eos)
        if len(symbols) < 2:
            raise ValidationError("vocabulary needs at least one symbol besides end-of-sequence",
                                  field="vocabulary")
        if len(symbols) > MAX_VOCABULARY:
            raise ValidationError(f"vocabulary holds at most {MAX_VOCABULARY} symbols",
                                  field="vocabulary", value=len(symbols))
        for symbol in symbols:
            if not symbol or len(symbol.split()) != 1 or symbol != symbol.strip():
                raise ValidationError("symbols must be single non-whitespace units", field="vocabulary",
                                      value=symbol)
        if order < 1:
            raise ValidationError("order must be at least 1", field="order", value=order)

        self.symbols: Tuple[str, ...] = tuple(symbols)
        self.index: Dict[str, int] = {symbol: i for i, symbol in enumerate(self.symbols)}
        self.eos = eos
        self.order = int(order)
        self.seed = int(seed)
        self.sharpness = float(sharpness)
        self.rules: Dict[str, Dict[str, float]] = {key: dict(table) for key, table in (rules or {}).items()}
        self._rule_tables: Dict[str, np.ndarray] = {
            key: self._table_from_rule(key, table) for key, table in self.rules.items()
        }
        self._hashed = lru_cache(maxsize=65536)(self._hashed_table)

    def _table_from_rule(self, key: str, table: Mapping[str, float]) -> np.ndarray:
        probs = np.zeros(len(self.symbols))
        listed = set()
        for symbol, p in table.items():
            if symbol not in self.index:
                raise ValidationError(f"rule '{key}' names unknown symbol", field="rules", value=symbol)
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"rule '{key}' has probability outside [0, 1]", field="rules", value=p)
            probs[self.index[symbol]] = p
            listed.add(symbol)
        mass = probs.sum()
        if mass > 1.0 + 1e-12:
            raise ValidationError(f"rule '{key}' assigns more than total mass 1", field="rules", value=mass)
        unlisted = [self.index[s] for s in self.symbols if s not in listed]
        if unlisted:
            probs[unlisted] = max(0.0, 1.0 - mass) / len(unlisted)
        elif mass > 0:
            probs = probs / mass
        else:
            raise ValidationError(f"rule '{key}' assigns no mass", field="rules")
        with np.errstate(divide="ignore"):
            logp = np.log(probs)
        logp.setflags(write=False)
        return logp

    def _hashed_table(self, history: Tuple[str, ...]) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(self.seed, "conditional", *history))
        logp = log_softmax(self.sharpness * rng.standard_normal(len(self.symbols)))
        logp.setflags(write=False)
        return logp

    def conditional_logprobs(self, history: Sequence[str]) -> np.ndarray:
        """Log-probabilities of the next unit given the units so far."""
        window = tuple(history[-self.order:]) if history else ()
        for length in range(len(window), 0, -1):
            key = " ".join(window[-length:])
            if key in self._rule_tables:
                return self._rule_tables[key]
        if DEFAULT_RULE in self._rule_tables:
            return self._rule_tables[DEFAULT_RULE]
        return self._hashed(window)

    def next_unit_distribution(self, text: str) -> Dict[str, float]:
        """The published conditional table for the history ending ``text``."""
        logp = self.conditional_logprobs(text.split())
        return {symbol: float(np.exp(lp)) for symbol, lp in zip(self.symbols, logp)}

    def _unit_index(self, unit: str) -> int:
        try:
            return self.index[unit]
        except KeyError:
            raise ValidationError("unit is outside the toy vocabulary", field="continuation", value=unit) from None

    def _score_units(self, history: List[str], units: Sequence[str]) -> float:
        total = 0.0
        for unit in units:
            total += float(self.conditional_logprobs(history)[self._unit_index(unit)])
            history.append(unit)
        return total

    def _logprob(self, context: str, continuation: str) -> Tuple[float, int, int]:
        history = context.split()
        units = continuation.split()
        sent = len(history) + len(units)
        return self._score_units(history, units), len(units), sent

    def sequence_logprob(self, context: str, text: str, terminated: bool = True) -> float:
        """Total log-prob of ``text`` (possibly empty), followed by end-of-sequence if ``terminated``."""
        history = context.split()
        total = self._score_units(history, text.split())
        if terminated:
            total += float(self.conditional_logprobs(history)[self.index[self.eos]])
        return total

    def _sample_once(self, history: List[str], request: GenerationRequest,
                     rng: Optional[np.random.Generator]) -> List[str]:
        units: List[str] = []
        for _ in range(request.max_new_units):
            logp = self.conditional_logprobs(history)
            if rng is None:
                choice = int(np.argmax(logp))
            else:
                choice = int(rng.choice(len(self.symbols), p=softmax(logp / request.temperature)))
            symbol = self.symbols[choice]
            if symbol == self.eos:
                break
            units.append(symbol)
            history.append(symbol)
        return units

    def _generate(self, request: GenerationRequest) -> Tuple[List[str], int, int]:
        context_units = request.context.split()
        samples: List[str] = []
        received = 0
        if request.temperature == 0:
            units = self._sample_once(list(context_units), request, None)
            samples = [" ".join(units)] * request.n_samples
            received = len(units) * request.n_samples
        else:
            for i in range(request.n_samples):
                rng = np.random.default_rng(derive_seed(self.seed, "sample", request.seed, request.context, i))
                units = self._sample_once(list(context_units), request, rng)
                samples.append(" ".join(units))
                received += len(units)
        return samples, len(context_units), received

    def to_config(self) -> Dict[str, Any]:
        return {
            "vocabulary": [s for s in self.symbols if s != self.eos],
            "order": self.order,
            "seed": self.seed,
            "sharpness": self.sharpness,
            "eos": self.eos,
            "rules": self.rules,
        }

    def describe(self) -> Dict[str, Any]:
        info = super().describe()
        info.update({"vocabulary_size": len(self.symbols), "order": self.order, "seed": self.seed})
        return info
