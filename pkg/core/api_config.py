#!/usr/bin/env python3
"""
Central backend configuration for the Deep Language Network trainer
"""

import os
from typing import Dict, Any, Optional

from .exceptions import ConfigurationError

MAX_RETRY_ATTEMPTS = 5


class APIConfig:
    """Settings of the OpenAI-compatible completions endpoint.

    The credential itself is never stored: only the name of the environment
    variable that holds it.
    """

    def __init__(self):
        self.base_url = "https://api.openai.com/v1"
        self.model = "gpt-3.5-turbo-instruct"
        self.api_key_env = "OPENAI_API_KEY"
        self.timeout = 60
        self.retry_attempts = MAX_RETRY_ATTEMPTS
        self.backoff_factor = 1.0
        self.max_in_flight = 8
        self.unit_price_per_1k = 0.02

        self._load_from_env()

    def _load_from_env(self):
        """Load configuration from environment variables."""
        if os.getenv('DLN_API_BASE'):
            self.base_url = os.getenv('DLN_API_BASE')
        if os.getenv('DLN_MODEL'):
            self.model = os.getenv('DLN_MODEL')
        if os.getenv('DLN_API_KEY_ENV'):
            self.api_key_env = os.getenv('DLN_API_KEY_ENV')
        if os.getenv('DLN_API_TIMEOUT'):
            self.timeout = float(os.getenv('DLN_API_TIMEOUT'))
        if os.getenv('DLN_API_RETRY_ATTEMPTS'):
            self.retry_attempts = int(os.getenv('DLN_API_RETRY_ATTEMPTS'))
        if os.getenv('DLN_MAX_IN_FLIGHT'):
            self.max_in_flight = int(os.getenv('DLN_MAX_IN_FLIGHT'))
        if os.getenv('DLN_UNIT_PRICE_PER_1K'):
            self.unit_price_per_1k = float(os.getenv('DLN_UNIT_PRICE_PER_1K'))

    @property
    def api_key(self) -> Optional[str]:
        """Resolve the credential through its environment variable."""
        return os.getenv(self.api_key_env)

    def get_api_settings(self) -> Dict[str, Any]:
        """Get API settings as a dictionary."""
        return {
            "base_url": self.base_url,
            "model": self.model,
            "api_key_env": self.api_key_env,
            "timeout": self.timeout,
            "retry_attempts": self.retry_attempts,
            "backoff_factor": self.backoff_factor,
            "max_in_flight": self.max_in_flight,
            "unit_price_per_1k": self.unit_price_per_1k,
        }

    def update_settings(self, settings: Dict[str, Any]) -> "APIConfig":
        """Return a copy with run-config overrides applied."""
        updated = APIConfig.__new__(APIConfig)
        updated.__dict__.update(self.__dict__)
        for key, value in settings.items():
            if key == 'api_key':
                raise ConfigurationError("credentials must come from the environment; set api_key_env instead",
                                         field='backend.http.api_key')
            if key not in self.get_api_settings():
                raise ConfigurationError(f"unknown backend setting '{key}'", field=f'backend.http.{key}')
            setattr(updated, key, value)
        if not 1 <= int(updated.retry_attempts) <= MAX_RETRY_ATTEMPTS:
            raise ConfigurationError(f"retry_attempts must be between 1 and {MAX_RETRY_ATTEMPTS}",
                                     field='backend.http.retry_attempts')
        if int(updated.max_in_flight) < 1:
            raise ConfigurationError("max_in_flight must be at least 1", field='backend.http.max_in_flight')
        return updated


# Global API configuration instance
api_config = APIConfig()
