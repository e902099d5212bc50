"""Run directories, atomic JSON documents and checkpoints."""

import json
import os
import re
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional

from .centralized_logger import logger
from .dln1 import TrainState
from .exceptions import CheckpointError
from .lm_backend import TokenLedger


class OutputManager:
    """Manages run directories and the documents written into them.

    Layout::

        <base>/<name>_<YYYYMMDD_HHMMSS>/config.json
                                       summary.json
                                       seed_<s>/checkpoints/iter_<NNNN>.json
                                       seed_<s>/final_state.json
                                       seed_<s>/ledger.json
                                       seed_<s>/evaluation.json

    Sweeps hold one such run directory per setting under ``setting_<NNN>``
    next to ``sweep_summary.json``.
    """

    def __init__(self, base_output_dir: str = "runs"):
        self.base_output_dir = base_output_dir
        os.makedirs(base_output_dir, exist_ok=True)

    @staticmethod
    def _safe_name(name: str) -> str:
        return re.sub(r'[^A-Za-z0-9._-]+', '_', name).strip('_') or 'run'

    def create_run_directory(self, name: str, parent: Optional[str] = None) -> str:
        """Create ``<name>_<timestamp>``; a numeric suffix keeps concurrent runs apart."""
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        base = os.path.join(parent or self.base_output_dir, f"{self._safe_name(name)}_{timestamp}")
        run_dir, suffix = base, 1
        while True:
            try:
                os.makedirs(run_dir)
                break
            except FileExistsError:
                suffix += 1
                run_dir = f"{base}_{suffix}"
        logger.log_app_event("run_directory_created", {"run_dir": run_dir})
        return run_dir

    @staticmethod
    def setting_directory(sweep_dir: str, index: int) -> str:
        path = os.path.join(sweep_dir, f"setting_{index:03d}")
        os.makedirs(path, exist_ok=True)
        return path

    @staticmethod
    def seed_directory(run_dir: str, seed: int) -> str:
        path = os.path.join(run_dir, f"seed_{seed}")
        os.makedirs(os.path.join(path, "checkpoints"), exist_ok=True)
        return path

    @staticmethod
    def write_json(path: str, data: Any, operation: str = "write") -> str:
        """Write through a temporary file so readers never see a partial document."""
        tmp_path = f"{path}.tmp"
        try:
            with open(tmp_path, 'w', encoding='utf-8') as f:
                json.dump(data, f, indent=2, ensure_ascii=False)
            os.replace(tmp_path, path)
        except (OSError, TypeError, ValueError) as e:
            raise CheckpointError(f"cannot write document: {e}", file_path=path, operation=operation) from e
        return path

    @staticmethod
    def read_json(path: str, operation: str = "read") -> Any:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except FileNotFoundError as e:
            raise CheckpointError("document not found", file_path=path, operation=operation) from e
        except (OSError, json.JSONDecodeError) as e:
            raise CheckpointError(f"cannot read document: {e}", file_path=path, operation=operation) from e

    def save_config(self, run_dir: str, config: Dict[str, Any]) -> str:
        return self.write_json(os.path.join(run_dir, "config.json"), config, "save_config")

    def save_checkpoint(self, seed_dir: str, state: TrainState) -> str:
        """Write ``iter_<NNNN>.json``; a completed state is also written as ``final_state.json``."""
        data = state.to_dict()
        data["saved_at"] = datetime.now().isoformat()
        path = self.write_json(os.path.join(seed_dir, "checkpoints", f"iter_{state.iteration:04d}.json"), data,
                               "save_checkpoint")
        if state.completed:
            self.write_json(os.path.join(seed_dir, "final_state.json"), data, "save_final_state")
        return path

    def checkpoint_writer(self, seed_dir: str) -> Callable[[TrainState], str]:
        return lambda state: self.save_checkpoint(seed_dir, state)

    def load_checkpoint(self, path: str) -> TrainState:
        data = self.read_json(path, "load_checkpoint")
        try:
            return TrainState.from_dict(data)
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"malformed checkpoint: {e}", file_path=path, operation="load_checkpoint") from e

    @staticmethod
    def list_checkpoints(seed_dir: str) -> List[str]:
        directory = os.path.join(seed_dir, "checkpoints")
        if not os.path.isdir(directory):
            return []
        return sorted(os.path.join(directory, f) for f in os.listdir(directory)
                      if f.startswith("iter_") and f.endswith(".json"))

    def latest_checkpoint(self, seed_dir: str) -> Optional[str]:
        checkpoints = self.list_checkpoints(seed_dir)
        return checkpoints[-1] if checkpoints else None

    def save_ledger(self, seed_dir: str, ledger: TokenLedger, price_per_1k: float) -> str:
        return self.write_json(os.path.join(seed_dir, "ledger.json"), ledger.to_report(price_per_1k), "save_ledger")

    def save_evaluation(self, seed_dir: str, evaluation: Dict[str, Any]) -> str:
        return self.write_json(os.path.join(seed_dir, "evaluation.json"), evaluation, "save_evaluation")

    def save_summary(self, run_dir: str, summary: Dict[str, Any]) -> str:
        return self.write_json(os.path.join(run_dir, "summary.json"), summary, "save_summary")

    def save_sweep_summary(self, sweep_dir: str, summary: Dict[str, Any]) -> str:
        return self.write_json(os.path.join(sweep_dir, "sweep_summary.json"), summary, "save_sweep_summary")

    def load_run(self, run_dir: str) -> Dict[str, Any]:
        """Every document of a run directory, or of a single seed directory."""
        if not os.path.isdir(run_dir):
            raise CheckpointError("run directory not found", file_path=run_dir, operation="load_run")
        if os.path.basename(os.path.normpath(run_dir)).startswith("seed_"):
            return {"config": None, "summary": None, "seeds": {self._seed_of(run_dir): self._load_seed(run_dir)}}

        run: Dict[str, Any] = {"config": None, "summary": None, "seeds": {}}
        for key, name in (("config", "config.json"), ("summary", "summary.json")):
            path = os.path.join(run_dir, name)
            if os.path.exists(path):
                run[key] = self.read_json(path, "load_run")
        for entry in sorted(os.listdir(run_dir)):
            path = os.path.join(run_dir, entry)
            if entry.startswith("seed_") and os.path.isdir(path):
                run["seeds"][self._seed_of(path)] = self._load_seed(path)
        return run

    @staticmethod
    def _seed_of(seed_dir: str) -> str:
        return os.path.basename(os.path.normpath(seed_dir))[len("seed_"):]

    def _load_seed(self, seed_dir: str) -> Dict[str, Any]:
        documents: Dict[str, Any] = {}
        for key in ("final_state", "ledger", "evaluation"):
            path = os.path.join(seed_dir, f"{key}.json")
            documents[key] = self.read_json(path, "load_run") if os.path.exists(path) else None
        if documents["final_state"] is None:
            latest = self.latest_checkpoint(seed_dir)
            documents["latest_checkpoint"] = self.read_json(latest, "load_run") if latest else None
        return documents

    def list_runs(self) -> List[str]:
        if not os.path.isdir(self.base_output_dir):
            return []
        return sorted(entry for entry in os.listdir(self.base_output_dir)
                      if os.path.isdir(os.path.join(self.base_output_dir, entry)))
