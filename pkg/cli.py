#!/usr/bin/env python3
"""
Deep Language Networks - Command Line Interface

Train, sweep, evaluate and inspect stacked prompt networks from JSON run
configurations.
"""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

# Add the project root to the path
project_root = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, project_root)

from core.api_config import api_config
from core.baselines import BASELINE_KINDS, baseline_report, build_baseline
from core.centralized_logger import logger
from core.config_handler import RunConfig, config_handler, set_dotted
from core.dln1 import Prompt, TrainState
from core.exceptions import (BackendError, CheckpointError, ConfigurationError, DataError, TrainingAbortedError,
                             ValidationError)
from core.experiment_runner import ExperimentRunner, build_lm, build_model
from core.lm_backend import TokenLedger, estimated_cost
from core.output_manager import OutputManager

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_DATA = 4
EXIT_CHECKPOINT = 5

PROMPT_SEPARATOR = "\n---\n"


def exit_code_for(error: BaseException) -> int:
    """Map an error onto the documented process exit code."""
    if isinstance(error, ConfigurationError):
        return EXIT_CONFIG
    if isinstance(error, (BackendError, TrainingAbortedError)):
        return EXIT_BACKEND
    if isinstance(error, DataError):
        return EXIT_DATA
    if isinstance(error, CheckpointError):
        return EXIT_CHECKPOINT
    return EXIT_OTHER


def parse_override(assignment: str) -> Any:
    """``field.path=value``; values are read as JSON and fall back to plain strings."""
    if "=" not in assignment:
        raise ConfigurationError(f"override '{assignment}' is not of the form field=value")
    dotted, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return dotted.strip(), value


class DLNCLI:
    """Command Line Interface for Deep Language Networks."""

    def __init__(self, output_dir: Optional[str] = None):
        self.output_dir = output_dir
        self.runner = ExperimentRunner(config_handler, output_dir)
        self.runner.set_progress_callback(self._print_progress)

    @staticmethod
    def _print_progress(event: Dict[str, Any]) -> None:
        kind = event["event"]
        if kind == "run_started":
            print(f"🚀 Run directory: {event['run_dir']} (seeds {event['seeds']})")
        elif kind == "seed_completed":
            test = event["test_accuracy"]
            test_text = f", test {test:.3f}" if test is not None else ""
            print(f"✅ Seed {event['seed']}: valid {event['valid_accuracy']:.3f}{test_text}")
        elif kind == "setting_started":
            print(f"🔧 Setting {event['index']}: {event['overrides']}")

    def load_config(self, config_name: str, overrides: Sequence[str] = (),
                    seeds: Optional[List[int]] = None) -> RunConfig:
        """Load a run configuration and apply ``--set`` overrides."""
        document = config_handler.load_config(config_name)
        for assignment in overrides:
            dotted, value = parse_override(assignment)
            set_dotted(document, dotted, value)
        if seeds:
            document["seeds"] = seeds
        return config_handler.parse(document, config_name)

    def list_configs(self) -> List[str]:
        """List all available configurations."""
        configs = config_handler.list_configs()
        if not configs:
            print("📋 No configurations found")
            return []

        print(f"📋 Found {len(configs)} configurations:")
        print("-" * 50)
        for config_name in configs:
            try:
                summary = config_handler.get_config_summary(config_handler.load_run_config(config_name))
                print(f"📄 {config_name}")
                print(f"   Layers: {summary['layers']}  Backend: {summary['backend']}  Seeds: {summary['seeds']}")
                print(f"   Description: {summary['description'] or 'No description'}")
            except Exception as e:
                # Sweep documents and broken files are listed too.
                print(f"📄 {config_name} (not a run config: {e})")
            print()
        return configs

    def show_config(self, config_name: str) -> Dict[str, Any]:
        """Show the configuration with every default filled in."""
        config = config_handler.load_config(config_name)
        print(f"📄 Configuration: {config_name}")
        print("=" * 60)
        print(json.dumps(config, indent=2, ensure_ascii=False))
        return config

    def train(self, config_name: str, overrides: Sequence[str] = (), seeds: Optional[List[int]] = None
              ) -> Dict[str, Any]:
        config = self.load_config(config_name, overrides, seeds)
        print(f"🧠 Training '{config.name}': {config.depth} layer(s), {config.hyperparameters.iterations} iterations")
        run_dir, summary = self.runner.run(config)
        self._print_summary(summary)
        print(f"📁 Results written to {run_dir}")
        return summary

    def sweep(self, sweep_name: str) -> Dict[str, Any]:
        sweep_dir, result = self.runner.sweep(sweep_name)
        print("=" * 60)
        for row in result["settings"]:
            marker = "⭐" if row["index"] == result["selected"] else "  "
            print(f"{marker} [{row['index']}] valid {row['valid']['mean']:.3f}  {row['overrides']}")
        test = result["selected_test"]
        if test:
            print(f"🏁 Selected setting {result['selected']}: test {self._format_interval(test)}")
        print(f"💰 Estimated cost: {result['estimated_cost']:.4f}")
        print(f"📁 Sweep written to {sweep_dir}")
        return result

    @staticmethod
    def _run_dir_of(state_file: str) -> str:
        """Nearest ancestor holding config.json (a checkpoint or a final_state.json)."""
        path = Path(state_file).resolve()
        for parent in path.parents:
            if (parent / "config.json").is_file():
                return str(parent)
        raise CheckpointError("no config.json above the state file", file_path=state_file, operation="infer")

    def _load_trained(self, source: str, seed: Optional[int] = None,
                      config_name: Optional[str] = None) -> Any:
        """Rebuild (config, network) from a run directory, seed directory, checkpoint or prompt file."""
        outputs = OutputManager(self.output_dir or "runs")
        if os.path.isdir(source) or source.endswith(".json"):
            if source.endswith(".json"):
                state = outputs.load_checkpoint(source)
                run_dir = self._run_dir_of(source)
            else:
                run = outputs.load_run(source)
                if not run["seeds"]:
                    raise CheckpointError("no seed directories in run", file_path=source, operation="infer")
                key = str(seed) if seed is not None else sorted(run["seeds"])[0]
                if key not in run["seeds"]:
                    raise CheckpointError(f"seed {key} not found in run", file_path=source, operation="infer")
                documents = run["seeds"][key]
                state_dict = documents["final_state"] or documents.get("latest_checkpoint")
                if state_dict is None:
                    raise CheckpointError("seed has no checkpoint", file_path=source, operation="infer")
                state = TrainState.from_dict(state_dict)
                run_dir = source if run["config"] else os.path.dirname(os.path.abspath(source))
            config_document = outputs.read_json(os.path.join(run_dir, "config.json"), "infer")
            config = config_handler.parse(config_document, run_dir)
            return config, build_model(config).with_prompts(list(state.prompts))

        try:
            with open(source, "r", encoding="utf-8") as f:
                prompts = f.read().split(PROMPT_SEPARATOR)
        except OSError as e:
            raise CheckpointError(f"cannot read prompt file: {e}", file_path=source, operation="infer") from e
        config = config_handler.load_run_config(config_name or "default")
        model = build_model(config)
        return config, model.with_prompts([Prompt(text=p.strip("\n")) for p in prompts])

    def infer(self, source: str, text: str, seed: Optional[int] = None, config_name: Optional[str] = None
              ) -> Dict[str, Any]:
        """Temperature-0 forward pass with trained prompts; stacks also show their hidden strings."""
        config, model = self._load_trained(source, seed, config_name)
        lm, _ = build_lm(config)
        if len(model.layers) > 1:
            trace = model.trace(text, lm)
            for index, layer in enumerate(trace["layers"][:-1]):
                print(f"🔎 Hidden {index + 1}: {layer['output']}")
        else:
            trace = {"input": text, "output": model.predict_many([text], lm)[0]}
        print(f"💬 Output: {trace['output']}")
        logger.log_app_event("infer", {"source": source, "layers": len(model.layers)})
        return trace

    def report(self, run_dir: str, price_per_1k: Optional[float] = None) -> Dict[str, Any]:
        """Token totals, estimated cost and validation trajectory of a run or seed directory."""
        run = OutputManager(self.output_dir or "runs").load_run(run_dir)
        if price_per_1k is None:
            http = (run["config"] or {}).get("backend", {}).get("http", {})
            price_per_1k = float(http.get("unit_price_per_1k", api_config.unit_price_per_1k))

        total = TokenLedger()
        seeds = {}
        for seed, documents in sorted(run["seeds"].items()):
            ledger = TokenLedger.from_dict(documents["ledger"] or {})
            total.merge(ledger)
            state = documents["final_state"] or documents.get("latest_checkpoint") or {}
            trajectory = [(0, state["initial_val_accuracy"])] if state.get("initial_val_accuracy") is not None else []
            trajectory += [(r["iteration"], r["accuracy"]) for r in state.get("validation_history", [])]
            seeds[seed] = {"ledger": ledger.to_report(price_per_1k), "trajectory": trajectory,
                           "completed": bool(state.get("completed")),
                           "test_accuracy": ((documents["evaluation"] or {}).get("test") or {}).get("accuracy")}

        report = {"run_dir": run_dir, "price_per_1k": price_per_1k, "total": total.to_report(price_per_1k),
                  "seeds": seeds}
        print(f"📊 Report for {run_dir}")
        print("=" * 60)
        for seed, entry in seeds.items():
            curve = "  ".join(f"{it}:{acc:.3f}" for it, acc in entry["trajectory"])
            status = "completed" if entry["completed"] else "incomplete"
            print(f"🌱 Seed {seed} ({status}): {entry['ledger']['total_units']} units, "
                  f"{entry['ledger']['call_count']} calls")
            print(f"   Validation: {curve or 'none'}")
            if entry["test_accuracy"] is not None:
                print(f"   Test accuracy: {entry['test_accuracy']:.3f}")
        print(f"🔢 Prompt units: {total.prompt_units}  Completion units: {total.completion_units}  "
              f"Calls: {total.call_count}")
        print(f"💰 Estimated cost: {estimated_cost(total.total_units, price_per_1k):.4f} "
              f"(at {price_per_1k} per 1k units)")
        return report

    def baseline(self, config_name: str, kind: str, shots: int = 5, split: str = "test", seed: int = 0,
                 overrides: Sequence[str] = ()) -> Dict[str, Any]:
        """Evaluate an untrained reference network on one split."""
        config = self.load_config(config_name, overrides)
        if kind not in BASELINE_KINDS:
            raise ValidationError(f"unknown baseline; choose from {', '.join(BASELINE_KINDS)}", field="kind",
                                  value=kind)
        dataset = self.runner.load_dataset(config)
        lm, _ = build_lm(config)
        last = config.layers[-1]
        model = build_baseline(kind, last.init_prompt, dataset.train, shots, seed)
        report = baseline_report(kind, model, dataset.split(split), lm, shots)
        label = f"{kind} ({shots}-shot)" if kind == "few-shot" else kind
        print(f"📏 {label} on {split}: {report['accuracy']:.3f} over {report['n']} examples")
        return report

    @staticmethod
    def _format_interval(stats_: Dict[str, Any]) -> str:
        ci = stats_["ci95"]
        return f"{stats_['mean']:.3f}" + (f" ± {ci:.3f}" if ci is not None else "") + f" (n={stats_['n']})"

    def _print_summary(self, summary: Dict[str, Any]) -> None:
        print("=" * 60)
        print(f"📈 Valid: {self._format_interval(summary['valid'])}")
        if summary["test"]:
            print(f"🏁 Test: {self._format_interval(summary['test'])}")
        ledger = summary["token_ledger"]
        print(f"💰 {ledger['total_units']} units, {ledger['call_count']} calls, "
              f"estimated cost {ledger['estimated_cost']:.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Deep Language Networks - Command Line Interface',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  dln configs list                              # List all configurations
  dln configs show toy_smoke                    # Show a configuration with defaults
  dln train toy_smoke                           # Train every seed of a configuration
  dln train default --seeds 1 2 --set hyperparameters.iterations=4
  dln sweep sweep_dln1                          # Run a hyperparameter sweep
  dln infer runs/toy_smoke_20240101_120000 "the input text"
  dln report runs/toy_smoke_20240101_120000     # Token totals, cost and learning curve
  dln baseline default --kind few-shot --shots 16
        """
    )
    parser.add_argument('--output-dir', help='Root directory for run outputs (default: from config)')
    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    configs_parser = subparsers.add_parser('configs', help='Configuration management')
    configs_subparsers = configs_parser.add_subparsers(dest='configs_command')
    configs_subparsers.add_parser('list', help='List all configurations')
    show_parser = configs_subparsers.add_parser('show', help='Show configuration details')
    show_parser.add_argument('config_name', help='Configuration name or path')

    train_parser = subparsers.add_parser('train', help='Train a network once per seed')
    train_parser.add_argument('config_name', help='Configuration name or path')
    train_parser.add_argument('--seeds', type=int, nargs='+', help='Override the configured seeds')
    train_parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='FIELD=VALUE',
                              help='Override a dotted config field (repeatable)')

    sweep_parser = subparsers.add_parser('sweep', help='Run a hyperparameter sweep')
    sweep_parser.add_argument('sweep_name', help='Sweep document name or path')

    infer_parser = subparsers.add_parser('infer', help='Run trained prompts on one input')
    infer_parser.add_argument('source', help='Run directory, seed directory, checkpoint or prompt file')
    infer_parser.add_argument('text', help='Input text')
    infer_parser.add_argument('--seed', type=int, help='Seed directory to use (default: first)')
    infer_parser.add_argument('--config', dest='config_name', help='Architecture for a prompt file')

    report_parser = subparsers.add_parser('report', help='Cost and learning-curve report')
    report_parser.add_argument('run_dir', help='Run or seed directory')
    report_parser.add_argument('--price', type=float, help='Price per 1000 units')

    baseline_parser = subparsers.add_parser('baseline', help='Evaluate an untrained baseline')
    baseline_parser.add_argument('config_name', help='Configuration name or path')
    baseline_parser.add_argument('--kind', choices=BASELINE_KINDS, default='zero-shot')
    baseline_parser.add_argument('--shots', type=int, default=5, help='Demonstrations for few-shot')
    baseline_parser.add_argument('--split', choices=('train', 'valid', 'test'), default='test')
    baseline_parser.add_argument('--seed', type=int, default=0, help='Seed for demonstration sampling')
    baseline_parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='FIELD=VALUE')
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_OK

    cli = DLNCLI(args.output_dir)

    try:
        if args.command == 'configs':
            if args.configs_command == 'show':
                cli.show_config(args.config_name)
            else:
                cli.list_configs()
        elif args.command == 'train':
            cli.train(args.config_name, args.overrides, args.seeds)
        elif args.command == 'sweep':
            cli.sweep(args.sweep_name)
        elif args.command == 'infer':
            cli.infer(args.source, args.text, args.seed, args.config_name)
        elif args.command == 'report':
            cli.report(args.run_dir, args.price)
        elif args.command == 'baseline':
            cli.baseline(args.config_name, args.kind, args.shots, args.split, args.seed, args.overrides)

    except KeyboardInterrupt:
        print("\n⚠️  Operation interrupted by user")
        return EXIT_OTHER
    except TrainingAbortedError as e:
        print(f"❌ {e}")
        print(f"💾 Last checkpoint: {e.checkpoint_path}")
        return EXIT_BACKEND
    except Exception as e:
        print(f"❌ {e}")
        logger.log_error("CLI command failed", e, {"command": args.command})
        return exit_code_for(e)
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
