import copy
import itertools
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple, Union

from .api_config import api_config
from .centralized_logger import logger
from .dln1 import Hyperparameters
from .evalkit import TASKS, SplitSpec
from .exceptions import ConfigurationError, DLNError, TemplateError
from .templates import load_named

BACKEND_TYPES = ("http", "toy")
TOY_KEYS = {"vocabulary", "order", "seed", "sharpness", "eos", "rules"}
LAYER_KEYS = {"template", "init_prompt", "residual", "max_new_units", "stop"}
TOP_LEVEL_KEYS = {"name", "description", "task", "backend", "architecture", "hyperparameters", "seeds",
                  "max_parallel_runs", "output_dir"}
FLOAT_HYPERPARAMETERS = {"alpha_sharp", "logp_penalty", "proposal_temperature", "posterior_temperature"}


@dataclass(frozen=True)
class TaskConfig:
    path: str
    split: SplitSpec = SplitSpec()
    split_seed: int = 0
    task_name: Optional[str] = None


@dataclass(frozen=True)
class BackendConfig:
    type: str = "http"
    http: Dict[str, Any] = field(default_factory=dict)
    toy: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class LayerConfig:
    template: str
    init_prompt: str
    residual: bool = False
    max_new_units: int = 64
    stop: Tuple[str, ...] = ()


@dataclass(frozen=True)
class RunConfig:
    """A validated run configuration."""

    name: str
    task: TaskConfig
    backend: BackendConfig
    layers: Tuple[LayerConfig, ...]
    hyperparameters: Hyperparameters = Hyperparameters()
    seeds: Tuple[int, ...] = (1, 2, 3)
    description: str = ""
    max_parallel_runs: int = 1
    output_dir: str = "runs"

    @property
    def depth(self) -> int:
        return len(self.layers)


def set_dotted(config: Dict[str, Any], dotted: str, value: Any) -> None:
    """Assign ``value`` at a dotted path such as ``hyperparameters.tolerance``."""
    keys = dotted.split(".")
    node = config
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            node[key] = {}
        node = node[key]
    node[keys[-1]] = value


class ConfigHandler:
    """Handles loading, validation, and management of JSON run configurations."""

    def __init__(self, config_dir: str = "configs"):
        if not os.path.isabs(config_dir):
            current_dir = os.path.dirname(os.path.abspath(__file__))
            project_root = os.path.dirname(current_dir)
            self.config_dir = os.path.join(project_root, config_dir)
        else:
            self.config_dir = config_dir
        self.project_root = os.path.dirname(self.config_dir)
        os.makedirs(self.config_dir, exist_ok=True)

    def _resolve(self, name_or_path: str) -> str:
        if name_or_path.endswith(".json") or os.sep in name_or_path or "/" in name_or_path:
            return name_or_path
        return os.path.join(self.config_dir, f"{name_or_path}.json")

    def _read(self, name_or_path: str) -> Dict[str, Any]:
        config_path = self._resolve(name_or_path)
        if not os.path.exists(config_path):
            raise ConfigurationError(f"Config file not found: {config_path}", config_name=name_or_path)
        try:
            with open(config_path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config is not valid JSON: {e}", config_name=name_or_path) from e

    def load_config(self, name_or_path: str) -> Dict[str, Any]:
        """Load a configuration by name (``configs/<name>.json``) or path, with defaults applied and validated."""
        config = self._set_defaults(self._read(name_or_path))
        try:
            self._validate_config(config, name_or_path)
        except ConfigurationError:
            logger.log_config_operation("load", name_or_path, False)
            raise
        logger.log_config_operation("load", name_or_path, True)
        return config

    def load_run_config(self, name_or_path: str) -> RunConfig:
        return self.parse(self._read(name_or_path), name_or_path)

    def save_config(self, config_name: str, config: Union[Dict[str, Any], RunConfig]):
        """Validate and write a configuration to ``configs/<config_name>.json``."""
        data = self.to_dict(config) if isinstance(config, RunConfig) else self._set_defaults(config)
        self._validate_config(data, config_name)
        os.makedirs(self.config_dir, exist_ok=True)
        config_path = os.path.join(self.config_dir, f"{config_name}.json")
        with open(config_path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2)
        logger.log_config_operation("save", config_name, True, {"path": config_path})

    def list_configs(self) -> List[str]:
        """List all available configuration names."""
        return sorted(f[:-5] for f in os.listdir(self.config_dir) if f.endswith('.json'))

    def config_exists(self, config_name: str) -> bool:
        return os.path.exists(self._resolve(config_name))

    def delete_config(self, config_name: str) -> bool:
        config_path = self._resolve(config_name)
        if os.path.exists(config_path):
            os.remove(config_path)
            logger.log_config_operation("delete", config_name, True)
            return True
        logger.warning(f"Config file not found for deletion: {config_path}")
        return False

    def _set_defaults(self, config: Dict[str, Any]) -> Dict[str, Any]:
        """Fill missing sections; a known task name supplies the classification prompt."""
        config = copy.deepcopy(config)
        config.setdefault('description', '')
        config.setdefault('seeds', [1, 2, 3])
        config.setdefault('max_parallel_runs', 1)
        config.setdefault('output_dir', 'runs')

        task = config.setdefault('task', {})
        if isinstance(task, dict):
            task_info = TASKS.get(task.get('task_name') or '')
            task.setdefault('split', task_info.split_spec.to_dict() if task_info else SplitSpec().to_dict())
            task.setdefault('split_seed', 0)
        else:
            task_info = None

        backend = config.setdefault('backend', {})
        if isinstance(backend, dict):
            backend.setdefault('type', 'http')
            backend.setdefault('http', {})
            backend.setdefault('toy', {})

        architecture = config.setdefault('architecture', {})
        if isinstance(architecture, dict):
            if 'layers' not in architecture and task_info is not None:
                architecture['layers'] = [{'init_prompt': task_info.init_prompt}]
            layers = architecture.get('layers')
            if isinstance(layers, list):
                for index, layer in enumerate(layers):
                    if isinstance(layer, dict):
                        self._layer_defaults(layer, index, len(layers))

        hyperparameters = config.setdefault('hyperparameters', {})
        if isinstance(hyperparameters, dict):
            # shallow: a given posterior_mixture replaces the default one entirely
            config['hyperparameters'] = {**Hyperparameters().to_dict(), **hyperparameters}
        return config

    @staticmethod
    def _layer_defaults(layer: Dict[str, Any], index: int, depth: int):
        last = index == depth - 1
        layer.setdefault('residual', last and depth > 1)
        if last:
            layer.setdefault('template', 'classify_residual' if layer['residual'] else 'classify_forward')
        else:
            layer.setdefault('template', 'hidden_step_by_step')
        layer.setdefault('init_prompt', '')
        layer.setdefault('max_new_units', 64 if last else 256)
        layer.setdefault('stop', [])

    def _validate_config(self, config: Dict[str, Any], config_name: str = "<unknown>"):
        """Validate structure and values; errors name the dotted field."""
        def fail(field_path: str, message: str):
            raise ConfigurationError(f"Config '{config_name}': {message}", config_name=config_name, field=field_path)

        unknown = set(config) - TOP_LEVEL_KEYS
        if unknown:
            fail(sorted(unknown)[0], f"unknown section '{sorted(unknown)[0]}'")
        if not isinstance(config.get('name'), str) or not config['name'].strip():
            fail('name', "Missing required field: name")

        task = config.get('task')
        if not isinstance(task, dict) or not isinstance(task.get('path'), str) or not task['path']:
            fail('task.path', "task.path must name a dataset file")
        split = task.get('split')
        if not isinstance(split, dict) or set(split) - {'train', 'valid', 'test'}:
            fail('task.split', "task.split must map train/valid/test to sizes")
        for name, size in split.items():
            if size is not None and (not isinstance(size, int) or isinstance(size, bool) or size < 0):
                fail(f'task.split.{name}', "split sizes must be non-negative integers or null")
        if not isinstance(task.get('split_seed'), int):
            fail('task.split_seed', "split_seed must be an integer")
        if task.get('task_name') is not None and not isinstance(task['task_name'], str):
            fail('task.task_name', "task_name must be a string")

        self._validate_backend(config.get('backend'), fail)
        self._validate_layers(config.get('architecture'), fail)
        self._validate_hyperparameters(config.get('hyperparameters'), config_name)

        seeds = config.get('seeds')
        if (not isinstance(seeds, list) or not seeds
                or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds)):
            fail('seeds', "seeds must be a nonempty list of integers")
        if len(set(seeds)) != len(seeds):
            fail('seeds', "seeds must be distinct")
        if not isinstance(config.get('max_parallel_runs'), int) or config['max_parallel_runs'] < 1:
            fail('max_parallel_runs', "max_parallel_runs must be a positive integer")
        if not isinstance(config.get('output_dir'), str) or not config['output_dir']:
            fail('output_dir', "output_dir must be a path")

    @staticmethod
    def _validate_backend(backend: Any, fail):
        if not isinstance(backend, dict):
            fail('backend', "backend must be an object")
        if backend.get('type') not in BACKEND_TYPES:
            fail('backend.type', f"backend.type must be one of {', '.join(BACKEND_TYPES)}")
        if not isinstance(backend.get('http'), dict):
            fail('backend.http', "backend.http must be an object")
        api_config.update_settings(backend['http'])

        toy = backend.get('toy')
        if not isinstance(toy, dict):
            fail('backend.toy', "backend.toy must be an object")
        unknown = set(toy) - TOY_KEYS
        if unknown:
            fail(f'backend.toy.{sorted(unknown)[0]}', "unknown toy backend setting")
        if backend['type'] == 'toy':
            vocabulary = toy.get('vocabulary')
            if not isinstance(vocabulary, list) or not vocabulary or not all(isinstance(s, str) for s in vocabulary):
                fail('backend.toy.vocabulary', "the toy backend needs a vocabulary list")
            if not isinstance(toy.get('order', 2), int) or toy.get('order', 2) < 1:
                fail('backend.toy.order', "order must be a positive integer")
            if not isinstance(toy.get('seed', 0), int):
                fail('backend.toy.seed', "seed must be an integer")
            if not isinstance(toy.get('sharpness', 2.0), (int, float)):
                fail('backend.toy.sharpness', "sharpness must be a number")
            if not isinstance(toy.get('rules', {}), dict):
                fail('backend.toy.rules', "rules must map histories to probability tables")

    @staticmethod
    def _validate_layers(architecture: Any, fail):
        if not isinstance(architecture, dict):
            fail('architecture', "architecture must be an object")
        layers = architecture.get('layers')
        if not isinstance(layers, list) or not layers:
            fail('architecture.layers', "architecture.layers must list at least one layer")
        for index, layer in enumerate(layers):
            prefix = f'architecture.layers[{index}]'
            if not isinstance(layer, dict):
                fail(prefix, "layers must be objects")
            unknown = set(layer) - LAYER_KEYS
            if unknown:
                fail(f'{prefix}.{sorted(unknown)[0]}', "unknown layer setting")
            if not isinstance(layer.get('init_prompt'), str):
                fail(f'{prefix}.init_prompt', "init_prompt must be a string")
            if index == len(layers) - 1 and not layer['init_prompt'].strip():
                fail(f'{prefix}.init_prompt', "the classification layer needs a nonempty prompt")
            if not isinstance(layer.get('residual'), bool):
                fail(f'{prefix}.residual', "residual must be true or false")
            if not isinstance(layer.get('max_new_units'), int) or layer['max_new_units'] < 1:
                fail(f'{prefix}.max_new_units', "max_new_units must be a positive integer")
            if not isinstance(layer.get('stop'), list) or not all(isinstance(s, str) for s in layer['stop']):
                fail(f'{prefix}.stop', "stop must be a list of strings")
            try:
                load_named(layer.get('template') or '')
            except TemplateError as e:
                fail(f'{prefix}.template', f"template does not load: {e}")

    @staticmethod
    def _validate_hyperparameters(hyperparameters: Any, config_name: str):
        if not isinstance(hyperparameters, dict):
            raise ConfigurationError("hyperparameters must be an object", config_name=config_name,
                                     field='hyperparameters')
        known = {f.name for f in fields(Hyperparameters)}
        for key, value in hyperparameters.items():
            if key not in known:
                raise ConfigurationError(f"unknown hyperparameter '{key}'", config_name=config_name,
                                         field=f'hyperparameters.{key}')
            if key in FLOAT_HYPERPARAMETERS and (not isinstance(value, (int, float)) or isinstance(value, bool)):
                raise ConfigurationError(f"{key} must be a number", config_name=config_name,
                                         field=f'hyperparameters.{key}')
        if not isinstance(hyperparameters.get('posterior_mixture'), dict):
            raise ConfigurationError("posterior_mixture must map components to weights", config_name=config_name,
                                     field='hyperparameters.posterior_mixture')
        try:
            Hyperparameters(**hyperparameters).validate()
        except ConfigurationError as e:
            e.details["config_name"] = config_name
            raise
        except TypeError as e:
            raise ConfigurationError(f"invalid hyperparameter value: {e}", config_name=config_name,
                                     field='hyperparameters') from e

    def parse(self, config: Dict[str, Any], config_name: str = "<unknown>") -> RunConfig:
        """Defaults, validation, then typed sections."""
        config = self._set_defaults(config)
        self._validate_config(config, config_name)
        task = config['task']
        split = task['split']
        return RunConfig(
            name=config['name'],
            description=config['description'],
            task=TaskConfig(path=task['path'], split=SplitSpec(split.get('train'), split.get('valid'),
                                                                  split.get('test')),
                            split_seed=task['split_seed'], task_name=task.get('task_name')),
            backend=BackendConfig(type=config['backend']['type'], http=dict(config['backend']['http']),
                                  toy=copy.deepcopy(config['backend']['toy'])),
            layers=tuple(LayerConfig(template=layer['template'], init_prompt=layer['init_prompt'],
                                     residual=layer['residual'], max_new_units=layer['max_new_units'],
                                     stop=tuple(layer['stop']))
                         for layer in config['architecture']['layers']),
            hyperparameters=Hyperparameters(**config['hyperparameters']),
            seeds=tuple(config['seeds']),
            max_parallel_runs=config['max_parallel_runs'],
            output_dir=config['output_dir'],
        )

    @staticmethod
    def to_dict(config: RunConfig) -> Dict[str, Any]:
        return {
            "name": config.name,
            "description": config.description,
            "task": {"path": config.task.path, "split": config.task.split.to_dict(),
                     "split_seed": config.task.split_seed, "task_name": config.task.task_name},
            "backend": {"type": config.backend.type, "http": dict(config.backend.http),
                        "toy": copy.deepcopy(config.backend.toy)},
            "architecture": {"layers": [dict(asdict(layer), stop=list(layer.stop)) for layer in config.layers]},
            "hyperparameters": config.hyperparameters.to_dict(),
            "seeds": list(config.seeds),
            "max_parallel_runs": config.max_parallel_runs,
            "output_dir": config.output_dir,
        }

    def resolve_data_path(self, config: RunConfig) -> str:
        """Dataset paths are taken relative to the project root when not absolute."""
        if os.path.isabs(config.task.path) or os.path.exists(config.task.path):
            return config.task.path
        return os.path.join(self.project_root, config.task.path)

    def load_sweep(self, name_or_path: Union[str, Dict[str, Any]]) -> List[Tuple[Dict[str, Any], RunConfig]]:
        """Expand a sweep document into (overrides, RunConfig) pairs, in order."""
        document = self._read(name_or_path) if isinstance(name_or_path, str) else name_or_path
        sweep_name = document.get('name') or (name_or_path if isinstance(name_or_path, str) else 'sweep')
        base = document.get('base')
        if isinstance(base, str):
            base = self._read(base)
        if not isinstance(base, dict):
            raise ConfigurationError("sweep needs a 'base' run config", config_name=sweep_name, field='base')

        if 'grid' in document:
            grid = document['grid']
            if not isinstance(grid, dict) or not grid or not all(isinstance(v, list) and v for v in grid.values()):
                raise ConfigurationError("grid must map dotted fields to nonempty value lists",
                                         config_name=sweep_name, field='grid')
            keys = list(grid)
            settings = [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]
        elif 'settings' in document:
            settings = document['settings']
            if not isinstance(settings, list) or not settings or not all(isinstance(s, dict) for s in settings):
                raise ConfigurationError("settings must be a nonempty list of objects", config_name=sweep_name,
                                         field='settings')
        else:
            raise ConfigurationError("sweep needs 'grid' or 'settings'", config_name=sweep_name)

        expanded = []
        for index, overrides in enumerate(settings):
            config = copy.deepcopy(base)
            for dotted, value in overrides.items():
                set_dotted(config, dotted, value)
            try:
                expanded.append((overrides, self.parse(config, f"{sweep_name}[{index}]")))
            except DLNError:
                logger.log_config_operation("sweep_expand", sweep_name, False, {"setting": index})
                raise
        logger.log_config_operation("sweep_expand", sweep_name, True, {"settings": len(expanded)})
        return expanded

    def get_config_summary(self, config: RunConfig) -> Dict[str, Any]:
        """Get a summary of configuration for display."""
        hp = config.hyperparameters
        return {
            'name': config.name,
            'description': config.description,
            'task': config.task.task_name or os.path.basename(config.task.path),
            'backend': config.backend.type,
            'layers': config.depth,
            'iterations': hp.iterations,
            'batch_size': hp.batch_size,
            'seeds': list(config.seeds),
            'prompts': [layer.init_prompt for layer in config.layers],
        }


# Create a global instance for easy importing
config_handler = ConfigHandler()
