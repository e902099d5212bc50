import time
from typing import Any, Dict, List, Optional, Tuple

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from .api_config import APIConfig, api_config
from .centralized_logger import logger
from .exceptions import (BackendError, BackendUnreachableError, ContextTooLongError,
                         ContinuationUnscoreableError)
from .lm_backend import GenerationRequest, LanguageModel, TokenLedger, count_units

COMPLETIONS_ENDPOINT = "/completions"
RETRY_STATUSES = (429, 500, 502, 503, 504)
CONTEXT_LENGTH_MARKERS = ("maximum context length", "context_length_exceeded", "too many tokens")


class CompletionAPIClient(LanguageModel):
    """Client for an OpenAI-compatible text completions endpoint with echoed log-probs."""

    name = "http"

    def __init__(self, settings: Optional[APIConfig] = None, ledger: Optional[TokenLedger] = None):
        self.settings = settings or api_config
        super().__init__(max_in_flight=int(self.settings.max_in_flight), ledger=ledger)
        self.base_url = self.settings.base_url.rstrip('/')
        self.model = self.settings.model
        self.timeout = self.settings.timeout
        self.session = requests.Session()

        self._setup_retries()
        self._setup_authentication()

        logger.log_app_event("completion_client_initialized", {
            "base_url": self.base_url,
            "model": self.model,
            "timeout": self.timeout,
            "max_in_flight": self.max_in_flight,
        })

    def _setup_retries(self):
        """Exponential backoff on transient transport errors only."""
        retry = Retry(
            total=int(self.settings.retry_attempts),
            connect=int(self.settings.retry_attempts),
            read=int(self.settings.retry_attempts),
            status=int(self.settings.retry_attempts),
            backoff_factor=float(self.settings.backoff_factor),
            status_forcelist=RETRY_STATUSES,
            allowed_methods=frozenset(["POST"]),
            raise_on_status=False,
        )
        adapter = HTTPAdapter(max_retries=retry, pool_maxsize=max(10, self.max_in_flight))
        self.session.mount("http://", adapter)
        self.session.mount("https://", adapter)

    def _setup_authentication(self):
        """Bearer credential resolved through the configured environment variable."""
        api_key = self.settings.api_key
        if api_key:
            self.session.headers["Authorization"] = f"Bearer {api_key}"
        else:
            self.session.headers.pop("Authorization", None)
            logger.warning(f"No credential found in ${self.settings.api_key_env}; sending unauthenticated requests")

    def _post(self, payload: Dict[str, Any]) -> Dict[str, Any]:
        url = f"{self.base_url}{COMPLETIONS_ENDPOINT}"
        start_time = time.time()
        try:
            response = self.session.post(url, json=payload, timeout=self.timeout)
        except (requests.exceptions.ConnectionError, requests.exceptions.Timeout,
                requests.exceptions.RetryError) as e:
            response_time = time.time() - start_time
            logger.log_api_error(COMPLETIONS_ENDPOINT, "POST", str(e), response_time)
            raise BackendUnreachableError(f"Unable to reach {self.base_url}: {e}", endpoint=url) from e
        except requests.exceptions.RequestException as e:
            response_time = time.time() - start_time
            logger.log_api_error(COMPLETIONS_ENDPOINT, "POST", str(e), response_time)
            raise BackendError(f"Request failed: {e}", endpoint=url) from e

        response_time = time.time() - start_time
        if response.status_code == 200:
            logger.log_api_call(COMPLETIONS_ENDPOINT, "POST", response.status_code, response_time,
                                {"model": self.model})
            try:
                return response.json()
            except ValueError as e:
                raise BackendError("Response is not valid JSON", endpoint=url, status_code=200) from e

        body = response.text or ""
        logger.log_api_error(COMPLETIONS_ENDPOINT, "POST", f"Status {response.status_code}: {body[:200]}",
                             response_time)
        if response.status_code == 400 and any(marker in body.lower() for marker in CONTEXT_LENGTH_MARKERS):
            raise ContextTooLongError(body[:200], endpoint=url, context_length=len(str(payload.get("prompt", ""))))
        if response.status_code in RETRY_STATUSES:
            raise BackendUnreachableError(f"HTTP {response.status_code} after retries", endpoint=url,
                                          status_code=response.status_code)
        raise BackendError(f"HTTP {response.status_code}: {body[:200]}", endpoint=url,
                           status_code=response.status_code)

    @staticmethod
    def _usage(data: Dict[str, Any], fallback_prompt: int, fallback_completion: int) -> Tuple[int, int]:
        usage = data.get("usage") or {}
        return (int(usage.get("prompt_tokens", fallback_prompt)),
                int(usage.get("completion_tokens", fallback_completion)))

    def _generate(self, request: GenerationRequest) -> Tuple[List[str], int, int]:
        payload: Dict[str, Any] = {
            "model": self.model,
            "prompt": request.context,
            "temperature": request.temperature,
            "n": request.n_samples,
            "max_tokens": request.max_new_units,
        }
        if request.stop_sequences:
            # the API accepts at most four stop sequences; the rest are applied locally
            payload["stop"] = list(request.stop_sequences[:4])
        if request.seed is not None:
            payload["seed"] = request.seed

        data = self._post(payload)
        choices = sorted(data.get("choices") or [], key=lambda choice: choice.get("index", 0))
        texts = [choice.get("text", "") for choice in choices]
        sent, received = self._usage(data, count_units(request.context), sum(count_units(t) for t in texts))
        return texts, sent, received

    def _logprob(self, context: str, continuation: str) -> Tuple[float, int, int]:
        payload = {
            "model": self.model,
            "prompt": context + continuation,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": 0,
        }
        data = self._post(payload)
        choices = data.get("choices") or []
        logprobs = choices[0].get("logprobs") if choices else None
        if not logprobs or logprobs.get("token_logprobs") is None or logprobs.get("text_offset") is None:
            raise ContinuationUnscoreableError("endpoint did not echo token log-probs",
                                               endpoint=f"{self.base_url}{COMPLETIONS_ENDPOINT}")

        boundary = len(context)
        scored = [lp for offset, lp in zip(logprobs["text_offset"], logprobs["token_logprobs"])
                  if offset >= boundary and lp is not None]
        if not scored:
            raise ContinuationUnscoreableError("no continuation tokens were scored",
                                               endpoint=f"{self.base_url}{COMPLETIONS_ENDPOINT}")
        sent, _ = self._usage(data, count_units(context) + count_units(continuation), 0)
        return float(sum(scored)), len(scored), sent

    def describe(self) -> Dict[str, Any]:
        info = super().describe()
        info.update({"base_url": self.base_url, "model": self.model})
        return info
