"""
Run configuration files
UTF-8 ``key = value`` lines with ``#`` comments; keys are MamAppConfig fields plus run options
"""
import os
from dataclasses import dataclass, field, fields
from typing import Any, Callable, Dict, List, Optional, Union, get_args, get_origin, get_type_hints

from models.config import MamAppConfig
from utils.errors import ConfigError

_TRUE = ('true', '1', 't', 'yes', 'on')
_FALSE = ('false', '0', 'f', 'no', 'off')


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ValueError(f"'{text}' is not a boolean")


def _converter(hint) -> Callable[[str], Any]:
    origin = get_origin(hint)
    if origin is Union:
        inner = _converter(next(arg for arg in get_args(hint) if arg is not type(None)))
        return lambda text: None if text.lower() in ('none', '') else inner(text)
    if origin is tuple:
        element = get_args(hint)[0]
        return lambda text: tuple(element(part.strip()) for part in text.split(','))
    if origin is list:
        return lambda text: [part.strip() for part in text.split(',') if part.strip()]
    if hint is bool:
        return _parse_bool
    return hint


# Run options that are not model hyperparameters
RUN_OPTIONS: Dict[str, Callable[[str], Any]] = {
    'data': str,
    'out': str,
    'workers': int,
    'image_size': int,
    'manifest': str,
    'augment': _parse_bool,
}


def _config_converters() -> Dict[str, Callable[[str], Any]]:
    hints = get_type_hints(MamAppConfig)
    return {f.name: _converter(hints[f.name]) for f in fields(MamAppConfig)}


@dataclass
class RunConfigFile:
    """Parsed run configuration: model overrides plus run options"""
    path: Optional[str] = None
    config_values: Dict[str, Any] = field(default_factory=dict)
    options: Dict[str, Any] = field(default_factory=dict)

    def get(self, key: str, default: Any = None) -> Any:
        if key in self.options:
            return self.options[key]
        return self.config_values.get(key, default)

    def model_config(self, **overrides: Any) -> MamAppConfig:
        """
        Defaults, then file values, then non-None overrides (command-line flags).
        ``image_size`` expands to a square RGB input_size.
        """
        values = dict(self.config_values)
        image_size = overrides.pop('image_size', None) or self.options.get('image_size')
        if image_size:
            values['input_size'] = (int(image_size), int(image_size), 3)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return MamAppConfig(**values)


def parse_run_config(text: str, path: Optional[str] = None) -> RunConfigFile:
    """
    :raises ConfigError: listing every unknown key, duplicate and unparsable value with its line number
    """
    converters = _config_converters()
    result = RunConfigFile(path=path)
    violations: List[str] = []
    seen: Dict[str, int] = {}

    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            violations.append(f"line {number}: expected 'key = value', got '{line}'")
            continue
        key, value = (part.strip() for part in line.split('=', 1))
        if key in seen:
            violations.append(f"line {number}: duplicate key '{key}' (first on line {seen[key]})")
            continue
        seen[key] = number

        if key in converters:
            target, convert = result.config_values, converters[key]
        elif key in RUN_OPTIONS:
            target, convert = result.options, RUN_OPTIONS[key]
        else:
            violations.append(f"line {number}: unknown key '{key}'")
            continue
        try:
            target[key] = convert(value)
        except (TypeError, ValueError) as e:
            violations.append(f"line {number}: cannot parse {key} = '{value}': {e}")

    if violations:
        raise ConfigError(f"Invalid run config {path or '<text>'}", violations)
    return result


def load_run_config(path: str) -> RunConfigFile:
    if not os.path.isfile(path):
        raise ConfigError(f"Run config {path} does not exist")
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f"Cannot read run config {path}: {e}")
    return parse_run_config(text, path)


def format_run_config(config: MamAppConfig, options: Optional[Dict[str, Any]] = None) -> str:
    """Render a config (and run options) in the file format parse_run_config reads."""
    lines: List[str] = []
    for key, value in list((options or {}).items()) + [(f.name, getattr(config, f.name)) for f in fields(config)]:
        if isinstance(value, (tuple, list)):
            text = ', '.join(str(v) for v in value)
        elif value is None:
            text = 'none'
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return '\n'.join(lines) + '\n'
