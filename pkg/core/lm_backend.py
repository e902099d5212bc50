"""
Uniform interface to language models that can sample continuations and
score the log-probability of a given continuation.

Concrete backends implement ``_generate`` and ``_logprob``; the base class
owns validation, stop-sequence truncation, token accounting and the bounded
concurrent fan-out used by the trainers.
"""

import copy
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

from .exceptions import BackendError, BatchRequestError, ContextTooLongError, ValidationError

T = TypeVar("T")
R = TypeVar("R")


def count_units(text: str) -> int:
    """Whitespace-delimited word count."""
    return len(text.split())


def truncate_at_stop(text: str, stop_sequences: Sequence[str]) -> str:
    """Cut ``text`` at the earliest occurrence of any stop sequence."""
    cut = len(text)
    for stop in stop_sequences:
        if not stop:
            continue
        position = text.find(stop)
        if position != -1:
            cut = min(cut, position)
    return text[:cut]


@dataclass(frozen=True)
class GenerationRequest:
    """One sampling call. ``seed`` pins the sampler of backends that honour it."""

    context: str
    temperature: float = 0.0
    n_samples: int = 1
    max_new_units: int = 64
    stop_sequences: Tuple[str, ...] = ()
    seed: Optional[int] = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError("temperature must be non-negative", field="temperature", value=self.temperature)
        if self.n_samples < 1:
            raise ValidationError("n_samples must be positive", field="n_samples", value=self.n_samples)
        if self.max_new_units < 1:
            raise ValidationError("max_new_units must be positive", field="max_new_units", value=self.max_new_units)
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))


@dataclass(frozen=True)
class ScoredContinuation:
    """Log-probability of ``text`` in nats, with its length normalization."""

    text: str
    total_logprob: float
    unit_count: int
    normalized_logprob: float = field(init=False)

    def __post_init__(self):
        if self.unit_count < 1:
            raise ValidationError("unit_count must be positive", field="unit_count", value=self.unit_count)
        object.__setattr__(self, "normalized_logprob", self.total_logprob / self.unit_count)


class TokenLedger:
    """Thread-safe, monotone counters of units sent, units received and calls made."""

    def __init__(self, prompt_units: int = 0, completion_units: int = 0, call_count: int = 0):
        self._lock = threading.Lock()
        self._prompt_units = int(prompt_units)
        self._completion_units = int(completion_units)
        self._call_count = int(call_count)

    def record(self, prompt_units: int, completion_units: int, calls: int = 1) -> None:
        if prompt_units < 0 or completion_units < 0 or calls < 0:
            raise ValidationError("ledger counters only increase")
        with self._lock:
            self._prompt_units += int(prompt_units)
            self._completion_units += int(completion_units)
            self._call_count += int(calls)

    def merge(self, other: "TokenLedger") -> None:
        snapshot = other.snapshot()
        self.record(snapshot["prompt_units"], snapshot["completion_units"], snapshot["call_count"])

    @property
    def prompt_units(self) -> int:
        with self._lock:
            return self._prompt_units

    @property
    def completion_units(self) -> int:
        with self._lock:
            return self._completion_units

    @property
    def call_count(self) -> int:
        with self._lock:
            return self._call_count

    @property
    def total_units(self) -> int:
        with self._lock:
            return self._prompt_units + self._completion_units

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            return {
                "prompt_units": self._prompt_units,
                "completion_units": self._completion_units,
                "call_count": self._call_count,
            }

    def estimated_cost(self, price_per_1k: float) -> float:
        return estimated_cost(self.total_units, price_per_1k)

    def to_report(self, price_per_1k: float) -> Dict[str, Any]:
        report: Dict[str, Any] = dict(self.snapshot())
        report["total_units"] = report["prompt_units"] + report["completion_units"]
        report["estimated_cost"] = estimated_cost(report["total_units"], price_per_1k)
        return report

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TokenLedger":
        return cls(data.get("prompt_units", 0), data.get("completion_units", 0), data.get("call_count", 0))


def estimated_cost(units: int, price_per_1k: float) -> float:
    """Cost of ``units`` at ``price_per_1k`` per thousand units."""
    return units / 1000.0 * price_per_1k


class LanguageModel(ABC):
    """Base class of every backend.

    Instances are safe for concurrent use. ``max_in_flight`` bounds the number
    of simultaneous backend calls across this instance and all its forks.
    """

    name = "lm"

    def __init__(self, max_in_flight: int = 1, ledger: Optional[TokenLedger] = None):
        if max_in_flight < 1:
            raise ValidationError("max_in_flight must be at least 1", field="max_in_flight", value=max_in_flight)
        self.max_in_flight = int(max_in_flight)
        self.ledger = ledger if ledger is not None else TokenLedger()
        self._in_flight = threading.BoundedSemaphore(self.max_in_flight)

    @abstractmethod
    def _generate(self, request: GenerationRequest) -> Tuple[List[str], int, int]:
        """Return (raw samples, units sent, units received)."""

    @abstractmethod
    def _logprob(self, context: str, continuation: str) -> Tuple[float, int, int]:
        """Return (total log-prob, scored unit count, units sent)."""

    def generate(self, request: GenerationRequest) -> List[str]:
        """Sample ``request.n_samples`` continuations, truncated at stop sequences."""
        if not request.context:
            raise ValidationError("context must be nonempty", field="context")
        with self._in_flight:
            samples, sent, received = self._generate(request)
        self.ledger.record(sent, received)
        if len(samples) != request.n_samples:
            raise BackendError(f"expected {request.n_samples} samples, got {len(samples)}")
        return [truncate_at_stop(sample, request.stop_sequences) for sample in samples]

    def logprob(self, context: str, continuation: str) -> ScoredContinuation:
        """Score ``continuation`` following ``context``."""
        if not continuation or not continuation.strip():
            raise ValidationError("continuation must be nonempty", field="continuation")
        with self._in_flight:
            total, units, sent = self._logprob(context, continuation)
        self.ledger.record(sent, 0)
        return ScoredContinuation(text=continuation, total_logprob=total, unit_count=units)

    def generate_many(self, requests: Sequence[GenerationRequest]) -> List[List[str]]:
        """Order-preserving concurrent ``generate`` over ``requests``."""
        return self._fan_out(self.generate, list(requests))

    def batch_logprob(self, pairs: Sequence[Tuple[str, str]]) -> List[ScoredContinuation]:
        """Order-preserving concurrent ``logprob`` over (context, continuation) pairs."""
        pairs = list(pairs)
        if not pairs:
            raise ValidationError("batch must be nonempty", field="pairs")
        return self._fan_out(lambda pair: self.logprob(pair[0], pair[1]), pairs)

    def _fan_out(self, call: Callable[[T], R], items: List[T]) -> List[R]:
        if not items:
            return []
        results: List[Any] = [None] * len(items)
        failures: Dict[int, Exception] = {}

        def run(index: int) -> None:
            try:
                results[index] = call(items[index])
            except ValidationError:
                raise
            except Exception as e:
                failures[index] = e

        if self.max_in_flight == 1 or len(items) == 1:
            for index in range(len(items)):
                run(index)
        else:
            with ThreadPoolExecutor(max_workers=min(self.max_in_flight, len(items))) as executor:
                for future in [executor.submit(run, index) for index in range(len(items))]:
                    future.result()

        if failures:
            failed = sorted(failures)
            first = failures[failed[0]]
            for index in failed:
                if isinstance(failures[index], ContextTooLongError):
                    raise ContextTooLongError(
                        f"request {index} of the batch exceeds the context window",
                        endpoint=failures[index].details.get("endpoint"),
                        request_index=index,
                        context_length=failures[index].details.get("context_length"),
                    ) from failures[index]
            raise BatchRequestError(f"{len(failed)} of {len(items)} requests failed",
                                    failed_indices=failed, cause=first) from first
        return results

    def fork(self, ledger: Optional[TokenLedger] = None) -> "LanguageModel":
        """A view sharing transport and in-flight budget but accounting into ``ledger``."""
        view = copy.copy(self)
        view.ledger = ledger if ledger is not None else TokenLedger()
        return view

    def describe(self) -> Dict[str, Any]:
        return {"backend": self.name, "max_in_flight": self.max_in_flight}
