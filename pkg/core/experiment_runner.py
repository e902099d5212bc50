"""
Runs a configuration once per seed, aggregates accuracies into mean and
t-interval summaries, and drives hyperparameter sweeps.
"""

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from . import dln1, dln2
from .api_config import APIConfig, api_config
from .centralized_logger import logger
from .completion_client import CompletionAPIClient
from .config_handler import ConfigHandler, RunConfig, config_handler
from .dln1 import LanguageLayer, Prompt, TrainState
from .dln2 import LayerStack
from .evalkit import SplitDataset, evaluation_report, load
from .exceptions import ConfigurationError
from .lm_backend import LanguageModel, TokenLedger
from .output_manager import OutputManager
from .templates import load_named
from .toy_lm import ToyLanguageModel

ProgressCallback = Callable[[Dict[str, Any]], None]


def confidence_interval(values: Sequence[float], confidence: float = 0.95) -> Optional[float]:
    """Half-width of the t-interval around the mean; None below two samples."""
    if len(values) < 2:
        return None
    sem = stats.sem(np.asarray(values, dtype=float))
    if sem == 0:
        return 0.0
    return float(stats.t.ppf((1 + confidence) / 2, len(values) - 1) * sem)


def aggregate(values: Sequence[float]) -> Dict[str, Any]:
    values = [float(v) for v in values]
    return {
        "mean": float(np.mean(values)) if values else None,
        "ci95": confidence_interval(values),
        "n": len(values),
        "values": values,
    }


def build_lm(config: RunConfig) -> Tuple[LanguageModel, APIConfig]:
    """The backend named by the config, plus the settings whose unit price costs its ledger."""
    settings = api_config.update_settings(config.backend.http)
    if config.backend.type == "toy":
        toy = dict(config.backend.toy)
        if "vocabulary" not in toy:
            raise ConfigurationError("toy backend needs a vocabulary", config_name=config.name,
                                     field="backend.toy.vocabulary")
        return ToyLanguageModel(**toy), settings
    return CompletionAPIClient(settings), settings


def build_model(config: RunConfig) -> Union[LanguageLayer, LayerStack]:
    """One layer for depth 1, a LayerStack otherwise."""
    layers = tuple(
        LanguageLayer(prompt=Prompt(text=layer.init_prompt), template=load_named(layer.template),
                      residual=layer.residual, max_new_units=layer.max_new_units, stop=layer.stop)
        for layer in config.layers)
    return layers[0] if len(layers) == 1 else LayerStack(layers)


def train_model(dataset: SplitDataset, config: RunConfig, lm: LanguageModel, model: Union[LanguageLayer, LayerStack],
                seed: int, run_id: str, checkpoint: dln1.Checkpointer) -> Tuple[TrainState, Any]:
    """Dispatch on depth and return the final state with the trained network."""
    hp = config.hyperparameters
    if isinstance(model, LanguageLayer):
        trainer = dln1.OneLayerTrainer(dataset, hp, lm, model, seed, run_id=run_id, checkpoint=checkpoint)
    elif len(model) == 2:
        trainer = dln2.TwoLayerTrainer(dataset, hp, lm, model, seed, run_id=run_id, checkpoint=checkpoint)
    else:
        trainer = dln2.MultiLayerTrainer(dataset, hp, lm, model, seed, run_id=run_id, checkpoint=checkpoint)
    state = trainer.run()
    return state, trainer.model


class ExperimentRunner:
    """Runs a configuration once per seed, and sweeps over configurations."""

    def __init__(self, handler: Optional[ConfigHandler] = None, output_dir: Optional[str] = None):
        self.config_handler = handler or config_handler
        self.output_dir = output_dir
        self.progress_callback: Optional[ProgressCallback] = None

    def set_progress_callback(self, callback: ProgressCallback) -> None:
        """Set the progress callback function."""
        self.progress_callback = callback

    def _notify(self, event: str, **data: Any) -> None:
        if self.progress_callback:
            self.progress_callback({"event": event, **data})

    def _output_manager(self, config: RunConfig) -> OutputManager:
        base = self.output_dir or config.output_dir
        if not os.path.isabs(base):
            base = os.path.join(self.config_handler.project_root, base)
        return OutputManager(base)

    def load_dataset(self, config: RunConfig) -> SplitDataset:
        return load(self.config_handler.resolve_data_path(config), config.task.split, config.task.split_seed,
                    config.task.task_name)

    def run_seed(self, config: RunConfig, dataset: SplitDataset, lm: LanguageModel, seed: int, run_dir: str,
                 outputs: OutputManager, price_per_1k: float) -> Dict[str, Any]:
        """Train one seed, evaluate its best network and write the seed directory."""
        seed_dir = outputs.seed_directory(run_dir, seed)
        seed_lm = lm.fork(TokenLedger())
        run_id = f"{os.path.basename(run_dir)}/seed_{seed}"
        self._notify("seed_started", seed=seed)

        start_time = time.time()
        state, model = train_model(dataset, config, seed_lm, build_model(config), seed, run_id,
                                   outputs.checkpoint_writer(seed_dir))
        task = dataset.task_name
        evaluation = {"valid": evaluation_report(model, dataset.valid or dataset.train, seed_lm, task, "valid",
                                                 seed, price_per_1k)}
        if dataset.test:
            evaluation["test"] = evaluation_report(model, dataset.test, seed_lm, task, "test", seed, price_per_1k)
        evaluation["prompts"] = [p.text for p in model.prompts()]
        outputs.save_evaluation(seed_dir, evaluation)
        outputs.save_ledger(seed_dir, seed_lm.ledger, price_per_1k)
        logger.log_performance("seed_run", time.time() - start_time, {"run_id": run_id})

        result = {
            "seed": seed,
            "valid_accuracy": evaluation["valid"]["accuracy"],
            "test_accuracy": evaluation["test"]["accuracy"] if "test" in evaluation else None,
            "initial_val_accuracy": state.initial_val_accuracy,
            "best_val_accuracy": state.best_val_accuracy,
            "prompts": evaluation["prompts"],
            "token_ledger": seed_lm.ledger.snapshot(),
        }
        self._notify("seed_completed", **result)
        return result

    def run(self, config: RunConfig, parent_dir: Optional[str] = None) -> Tuple[str, Dict[str, Any]]:
        """Train every seed of ``config``; returns the run directory and its summary."""
        outputs = self._output_manager(config)
        dataset = self.load_dataset(config)
        lm, settings = build_lm(config)
        price = float(settings.unit_price_per_1k)
        run_dir = outputs.create_run_directory(config.name, parent=parent_dir)
        outputs.save_config(run_dir, self.config_handler.to_dict(config))
        logger.log_app_event("run_started", {"run_dir": run_dir, "seeds": list(config.seeds),
                                             "backend": lm.describe(), "layers": config.depth})
        self._notify("run_started", run_dir=run_dir, seeds=list(config.seeds))

        workers = max(1, min(config.max_parallel_runs, len(config.seeds)))
        with ThreadPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(self.run_seed, config, dataset, lm, seed, run_dir, outputs, price)
                       for seed in config.seeds]
            errors = []
            results = []
            for future in futures:
                try:
                    results.append(future.result())
                except Exception as e:
                    errors.append(e)
        if errors:
            logger.log_error("Run failed", errors[0], {"run_dir": run_dir})
            raise errors[0]

        summary = self.summarize(config, run_dir, results, price)
        outputs.save_summary(run_dir, summary)
        logger.log_app_event("run_completed", {"run_dir": run_dir, "test": summary["test"],
                                               "valid": summary["valid"]})
        self._notify("run_completed", run_dir=run_dir, summary=summary)
        return run_dir, summary

    @staticmethod
    def summarize(config: RunConfig, run_dir: str, results: List[Dict[str, Any]], price_per_1k: float
                  ) -> Dict[str, Any]:
        ledger = TokenLedger()
        for result in results:
            ledger.merge(TokenLedger.from_dict(result["token_ledger"]))
        tests = [r["test_accuracy"] for r in results if r["test_accuracy"] is not None]
        return {
            "name": config.name,
            "run_dir": run_dir,
            "layers": config.depth,
            "seeds": results,
            "valid": aggregate([r["valid_accuracy"] for r in results]),
            "test": aggregate(tests) if tests else None,
            "token_ledger": ledger.to_report(price_per_1k),
        }

    def sweep(self, sweep: Union[str, Dict[str, Any]]) -> Tuple[str, Dict[str, Any]]:
        """Run every setting, select the best mean validation accuracy and report its test accuracy."""
        settings = self.config_handler.load_sweep(sweep)
        if isinstance(sweep, str):
            name = os.path.splitext(os.path.basename(sweep))[0]
        else:
            name = sweep.get("name", "sweep")
        outputs = self._output_manager(settings[0][1])
        sweep_dir = outputs.create_run_directory(f"sweep_{name}")
        logger.log_app_event("sweep_started", {"sweep_dir": sweep_dir, "settings": len(settings)})

        rows = []
        for index, (overrides, config) in enumerate(settings):
            self._notify("setting_started", index=index, overrides=overrides)
            run_dir, summary = self.run(config, parent_dir=outputs.setting_directory(sweep_dir, index))
            rows.append({"index": index, "overrides": overrides, "run_dir": run_dir,
                         "valid": summary["valid"], "test": summary["test"],
                         "estimated_cost": summary["token_ledger"]["estimated_cost"]})

        best = min(rows, key=lambda row: (-row["valid"]["mean"], row["index"]))
        total_cost = math.fsum(row["estimated_cost"] for row in rows)
        result = {
            "name": name,
            "sweep_dir": sweep_dir,
            "settings": rows,
            "selected": best["index"],
            "selected_overrides": best["overrides"],
            "selected_valid": best["valid"],
            "selected_test": best["test"],
            "estimated_cost": total_cost,
        }
        outputs.save_sweep_summary(sweep_dir, result)
        logger.log_app_event("sweep_completed", {"sweep_dir": sweep_dir, "selected": best["index"]})
        return sweep_dir, result
