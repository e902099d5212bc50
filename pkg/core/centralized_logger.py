#!/usr/bin/env python3
"""
Logging for the Deep Language Network trainer.

Two outputs per call: a formatted line on the ``dln`` standard logger and a
JSON-lines record appended to a dated file in one of four channels
(application, errors, performance, training) under ``DLN_LOG_DIR``.
"""

import json
import logging
import os
import threading
import traceback
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

LINE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
CHANNELS = ("application", "errors", "performance", "training")


class PrefixFilter(logging.Filter):
    """Passes records whose message starts with one of the given tags."""

    def __init__(self, *prefixes: str):
        super().__init__()
        self.prefixes = prefixes

    def filter(self, record: logging.LogRecord) -> bool:
        return record.getMessage().startswith(self.prefixes)


def _ms(seconds: float) -> float:
    return round(seconds * 1000, 2)


def _compact(data: Optional[Dict[str, Any]]) -> str:
    return json.dumps(data or {}, ensure_ascii=False, default=str)


class CentralizedLogger:
    """
    Process-wide logger.

    Backend workers share one instance, so event-file appends go through a lock.
    Constructing a new instance detaches the handlers of the previous one.
    """

    def __init__(self, log_dir: Optional[str] = None, level: Optional[str] = None, name: str = 'dln'):
        self.log_dir = Path(log_dir or os.getenv('DLN_LOG_DIR', 'outputs/logs'))
        self.channels: Dict[str, Path] = {channel: self.log_dir / channel for channel in CHANNELS}
        for path in self.channels.values():
            path.mkdir(parents=True, exist_ok=True)

        self._lock = threading.Lock()
        level_name = (level or os.getenv('DLN_LOG_LEVEL', 'INFO')).upper()

        self.logger = logging.getLogger(name)
        self.logger.setLevel(getattr(logging, level_name, logging.INFO))
        self.logger.propagate = False
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)
            handler.close()
        self._attach_handlers()

        self.log_app_event("logger_ready", {
            "log_dir": str(self.log_dir),
            "channels": {channel: str(path) for channel, path in self.channels.items()},
        })

    def _attach_handlers(self):
        formatter = logging.Formatter(LINE_FORMAT)
        # (target, threshold, message tags)
        layout = [
            (self.log_dir / "app.log", logging.INFO, ()),
            (self.channels["errors"] / "errors.log", logging.ERROR, ()),
            (self.log_dir / "api.log", logging.INFO, ("API_",)),
            (self.log_dir / "training.log", logging.INFO, ("TRAINING_",)),
        ]
        for target, threshold, tags in layout:
            handler = logging.FileHandler(target, encoding='utf-8')
            handler.setLevel(threshold)
            handler.setFormatter(formatter)
            if tags:
                handler.addFilter(PrefixFilter(*tags))
            self.logger.addHandler(handler)

        console = logging.StreamHandler()
        console.setLevel(logging.WARNING)
        console.setFormatter(formatter)
        self.logger.addHandler(console)

    def _record(self, channel: str, stem: str, payload: Dict[str, Any]):
        payload.setdefault("timestamp", datetime.now().isoformat())
        path = self.channels[channel] / f"{stem}_{datetime.now():%Y%m%d}.json"
        line = json.dumps(payload, ensure_ascii=False, default=str)
        try:
            with self._lock, open(path, 'a', encoding='utf-8') as stream:
                stream.write(line + '\n')
        except OSError as e:
            self.logger.error(f"Could not append to {path.name}: {e}")

    def log_app_event(self, event_type: str, data: Dict[str, Any] = None):
        self._record("application", event_type, {"event_type": event_type, "data": data or {}})
        self.logger.info(f"APP_EVENT: {event_type} - {_compact(data)}")

    def log_error(self, message: str, error: Exception = None, context: Dict[str, Any] = None):
        """Record a failure; the traceback is taken from the exception being handled."""
        self._record("errors", "errors", {
            "message": message,
            "error_type": type(error).__name__ if error else None,
            "error_message": str(error) if error else None,
            "traceback": traceback.format_exc() if error else None,
            "context": context or {},
        })
        self.logger.error(f"ERROR: {message} - {error if error else 'No exception'}")

    def log_api_call(self, endpoint: str, method: str, status_code: int, response_time: float,
                     data: Dict[str, Any] = None):
        elapsed = _ms(response_time)
        self._record("performance", "api_performance", {
            "endpoint": endpoint, "method": method, "status_code": status_code,
            "response_time_ms": elapsed, "data": data or {},
        })
        self.logger.info(f"API_CALL: {method} {endpoint} - {status_code} ({elapsed}ms)")

    def log_api_error(self, endpoint: str, method: str, error: str, response_time: float):
        elapsed = _ms(response_time)
        self._record("errors", "api_errors", {
            "endpoint": endpoint, "method": method, "error": error, "response_time_ms": elapsed,
        })
        self.logger.error(f"API_ERROR: {method} {endpoint} - {error} ({elapsed}ms)")

    def log_performance(self, operation: str, duration: float, details: Dict[str, Any] = None):
        elapsed = _ms(duration)
        self._record("performance", "performance",
                     {"operation": operation, "duration_ms": elapsed, "details": details or {}})
        self.logger.info(f"PERFORMANCE: {operation} - {elapsed}ms")

    def log_training_event(self, run_id: str, event_type: str, data: Dict[str, Any] = None):
        """Selections, evaluations, reloads and checkpoints of one run."""
        self._record("training", "training", {"run_id": run_id, "event_type": event_type, "data": data or {}})
        self.logger.info(f"TRAINING_EVENT: {run_id} - {event_type} - {_compact(data)}")

    def log_config_operation(self, operation: str, config_name: str, success: bool,
                             details: Dict[str, Any] = None):
        self._record("application", "config_operations", {
            "operation": operation, "config_name": config_name, "success": success, "details": details or {},
        })
        self.logger.log(logging.INFO if success else logging.WARNING,
                        f"CONFIG: {operation} {config_name} - {'ok' if success else 'failed'}")

    def debug(self, message: str):
        self.logger.debug(message)

    def info(self, message: str):
        self.logger.info(message)

    def warning(self, message: str):
        self.logger.warning(message)

    def error(self, message: str):
        self.logger.error(message)


logger = CentralizedLogger()
