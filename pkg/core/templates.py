"""
Template documents: loading, validation, rendering and serialization.

A template document is YAML with a ``template`` key (the body, Jinja2
placeholders ``{{ var }}``) and an optional ``message_alternatives`` list.
The only control flow allowed in a body is the example loop of the prompt
proposal template::

    {% for backward_info in backward_infos if backward_info is success %}
    ...
    {% endfor %}

where ``success`` holds when the normalized model output equals the
normalized target (``is not success`` selects the errors).
"""

import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, FrozenSet, Mapping, Optional, Tuple, Union

import numpy as np
import yaml
from jinja2 import Environment, StrictUndefined, TemplateSyntaxError, UndefinedError, meta, nodes

from .evalkit import normalize
from .exceptions import MissingBindingError, TemplateError, ValidationError

TEMPLATE_DIR = Path(os.path.dirname(os.path.dirname(os.path.abspath(__file__)))) / "templates"
DOCUMENT_KEYS = {"template", "message_alternatives"}
LOOP_TARGET = "backward_info"
LOOP_SOURCE = "backward_infos"

MessageSelector = Union[None, int, np.random.Generator, random.Random]


@dataclass(frozen=True)
class BackwardInfo:
    """One example shown to a proposal template."""

    input: str
    target: str
    output: str = ""

    def __post_init__(self):
        if not self.input or not self.target:
            raise ValidationError("backward info needs a nonempty input and target", field="backward_info")

    @property
    def is_success(self) -> bool:
        return normalize(self.output) == normalize(self.target)


def _is_success(value: Any) -> bool:
    return normalize(value.output) == normalize(value.target)


_ENV = Environment(undefined=StrictUndefined, keep_trailing_newline=True, trim_blocks=True,
                   lstrip_blocks=True, autoescape=False)
_ENV.tests["success"] = _is_success

_ALLOWED_NODES = (nodes.Template, nodes.Output, nodes.TemplateData, nodes.Name, nodes.Getattr, nodes.For,
                  nodes.Test, nodes.Not, nodes.Const)


@dataclass(frozen=True)
class Template:
    name: str
    body: str
    message_alternatives: Tuple[str, ...] = ()
    required_vars: FrozenSet[str] = frozenset()
    _compiled: Any = field(default=None, compare=False, repr=False)


class _UniqueKeyLoader(yaml.SafeLoader):
    """Safe loader that rejects repeated keys instead of keeping the last one."""


def _construct_unique_mapping(loader: yaml.SafeLoader, node: yaml.MappingNode, deep: bool = False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise TemplateError(f"key '{key}' appears more than once")
        seen.add(key)
    return loader.construct_mapping(node, deep=deep)


_UniqueKeyLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_unique_mapping)


def _check_constructs(tree: nodes.Node, name: str):
    for node in tree.find_all(nodes.Node):
        if not isinstance(node, _ALLOWED_NODES):
            raise TemplateError(f"unknown placeholder syntax: {type(node).__name__} is not supported",
                                template_name=name)
        if isinstance(node, nodes.For):
            if not (isinstance(node.target, nodes.Name) and node.target.name == LOOP_TARGET
                    and isinstance(node.iter, nodes.Name) and node.iter.name == LOOP_SOURCE and not node.else_):
                raise TemplateError(f"only '{{% for {LOOP_TARGET} in {LOOP_SOURCE} %}}' loops are supported",
                                    template_name=name)
        if isinstance(node, nodes.Test) and node.name != "success":
            raise TemplateError(f"unknown test '{node.name}'", template_name=name)


def load(source: Union[str, Mapping[str, Any]], name: str = "template") -> Template:
    """Parse and validate a template document (YAML text or an already-parsed mapping)."""
    if isinstance(source, str):
        try:
            document = yaml.load(source, Loader=_UniqueKeyLoader)
        except yaml.YAMLError as e:
            raise TemplateError(f"document does not parse: {e}", template_name=name) from e
    else:
        document = dict(source)

    if not isinstance(document, dict) or "template" not in document:
        raise TemplateError("document needs exactly one 'template' body", template_name=name)
    unknown = set(document) - DOCUMENT_KEYS
    if unknown:
        raise TemplateError(f"unknown keys: {', '.join(sorted(map(str, unknown)))}", template_name=name)

    body = document["template"]
    if not isinstance(body, str) or not body.strip():
        raise TemplateError("empty body", template_name=name)

    alternatives = document.get("message_alternatives") or []
    if not isinstance(alternatives, list) or not all(isinstance(a, str) and a for a in alternatives):
        raise TemplateError("message_alternatives must be a list of nonempty strings", template_name=name)

    try:
        tree = _ENV.parse(body)
    except TemplateSyntaxError as e:
        raise TemplateError(f"unknown placeholder syntax: {e.message}", template_name=name) from e
    _check_constructs(tree, name)

    required = frozenset(meta.find_undeclared_variables(tree))
    if "message" in required and not alternatives:
        raise TemplateError("body references {{ message }} but has no message_alternatives", template_name=name)

    return Template(name=name, body=body, message_alternatives=tuple(alternatives), required_vars=required,
                    _compiled=_ENV.from_string(body))


def load_file(path: Union[str, Path]) -> Template:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise TemplateError(f"cannot read template file: {e}", file_path=str(path)) from e
    return load(text, name=path.stem)


def load_named(name: str, template_dir: Optional[Union[str, Path]] = None) -> Template:
    """Load a shipped template by name (``classify_forward``) or any path to a document."""
    if name.endswith((".yaml", ".yml")) or os.sep in name or "/" in name:
        return load_file(name)
    return load_file(Path(template_dir or TEMPLATE_DIR) / f"{name}.yaml")


def select_message(template: Template, selector: MessageSelector) -> Tuple[int, str]:
    """Pick a message alternative by fixed index, seeded generator, or index 0 when ``selector`` is None."""
    pool = template.message_alternatives
    if not pool:
        raise ValidationError(f"template '{template.name}' has no message alternatives", field="message")
    if selector is None:
        index = 0
    elif isinstance(selector, np.random.Generator):
        index = int(selector.integers(len(pool)))
    elif isinstance(selector, random.Random):
        index = selector.randrange(len(pool))
    else:
        index = int(selector)
        if not 0 <= index < len(pool):
            raise ValidationError(f"message index out of range for {len(pool)} alternatives", field="message",
                                  value=index)
    return index, pool[index]


def render(template: Template, binding: Mapping[str, Any], message_selector: MessageSelector = None) -> str:
    """Substitute every placeholder of ``template`` from ``binding``."""
    values: Dict[str, Any] = dict(binding)
    if "message" in template.required_vars and "message" not in values:
        _, values["message"] = select_message(template, message_selector)
    missing = sorted(var for var in template.required_vars if var not in values)
    if missing:
        raise MissingBindingError(missing[0], template_name=template.name)
    compiled = template._compiled or _ENV.from_string(template.body)
    try:
        return compiled.render(**values)
    except UndefinedError as e:
        raise MissingBindingError(e.message or "unknown", template_name=template.name) from e


class _LiteralDumper(yaml.SafeDumper):
    pass


def _represent_str(dumper: yaml.SafeDumper, value: str):
    style = "|" if "\n" in value else None
    return dumper.represent_scalar("tag:yaml.org,2002:str", value, style=style)


_LiteralDumper.add_representer(str, _represent_str)


def serialize(template: Template) -> str:
    """YAML document that loads back to an equivalent template."""
    document: Dict[str, Any] = {"template": template.body}
    if template.message_alternatives:
        document["message_alternatives"] = list(template.message_alternatives)
    return yaml.dump(document, Dumper=_LiteralDumper, sort_keys=False, allow_unicode=True, width=1 << 16)
