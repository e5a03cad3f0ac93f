"""
YAML run configuration.

A config file holds one section per subcommand, keyed by flag names, plus
an optional `logging: !Logger {...}` entry. Tagged values build objects
lazily:

    simulate:
      truth: !TruthSpec
        causes:
          - !Exponential {rate: 0.1, effects: {trt: -0.693}}
        covariates:
          trt: !Bernoulli {p: 0.5}
        tau: 10
        n: 2000
      output: data.csv
"""

from dataclasses import dataclass
from typing import Any, Dict

import yaml

from cbsurv.errors import UsageError
from cbsurv.simulate import Bernoulli, Exponential, Gompertz, Normal, TruthSpec, Weibull
from cbsurv.slogging import Logger

SUBCOMMANDS = ("simulate", "sample", "fit", "risk", "poptime", "compare", "hr")


def _build(value):
    if isinstance(value, LazyConstructor):
        return value()
    if isinstance(value, list):
        return [_build(v) for v in value]
    if isinstance(value, dict):
        return {k: _build(v) for k, v in value.items()}
    return value


@dataclass(frozen=True)
class LazyConstructor:
    """
    A constructor together with its keyword arguments, usable like a dict.

    Keyword arguments can be read and overwritten before the object is
    built. Calling it builds the object, building any LazyConstructor found
    in the arguments first, also inside lists and dicts.

    >>> c = LazyConstructor(Exponential, {"rate": 0.1})
    >>> c["rate"] = 0.2
    >>> c()
    Exponential(rate=0.2, effects={})
    """

    _fn: Any
    _kwargs: Dict

    def __getitem__(self, key):
        if key == "class":
            return self._fn
        return self._kwargs[key]

    def __setitem__(self, key, value):
        if key == "class":
            object.__setattr__(self, "_fn", value)
        else:
            self._kwargs[key] = value

    def __call__(self, *args):
        return self._fn(*args, **_build(self._kwargs))

    def __repr__(self):
        d = {"class": self._fn}
        d.update(self._kwargs)
        return str(d)

    def keys(self):
        """Fake keys to act like a dictionary"""
        return ["class"] + list(self._kwargs.keys())


def _mapping(loader, node):
    if isinstance(node, yaml.ScalarNode):
        return {}
    return loader.construct_mapping(node, deep=True)


def make_lazy_constructor(type_, name, default_kwargs=None):
    """Exposes `!name` to YAML as a lazy constructor of type_"""

    def _constructor(loader, node):
        kwargs = dict(default_kwargs or {})
        kwargs.update(_mapping(loader, node))
        return LazyConstructor(type_, kwargs)

    yaml.add_constructor("!" + name, _constructor, Loader=yaml.UnsafeLoader)


def logging_constructor(loader, node):
    """
    YAML constructor for the Logger.

    Initializes the global logger instead of building anything.
    """
    Logger.init(**_mapping(loader, node))
    return Logger


def load_config(path) -> dict:
    try:
        with open(path, "r") as f:
            config = yaml.load(f, yaml.UnsafeLoader)
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise UsageError(f"cannot parse config {path}: {e}") from e

    config = config or {}
    if not isinstance(config, dict):
        raise UsageError(f"config {path} must be a mapping of subcommand sections")

    unknown = set(config) - set(SUBCOMMANDS) - {"logging"}
    if unknown:
        raise UsageError(f"unknown config section(s) {sorted(unknown)}")
    return config


def dot_set(nested_dict, dot_key, value):
    keys = dot_key.split(".")
    d = nested_dict
    for k in keys[:-1]:
        d = d[k]
    d[keys[-1]] = value
    return d


def section_defaults(config, subcommand, known) -> dict:
    """
    The subcommand's section as argparse defaults. Keys are flag names with
    dashes or underscores, anything not in `known` is a usage error.
    """
    section = config.get(subcommand) or {}
    if not isinstance(section, dict):
        raise UsageError(f"config section {subcommand} must be a mapping")

    defaults = {}
    for key, value in section.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"unknown key {key!r} in config section {subcommand}")
        defaults[dest] = value
    return defaults


def apply_overrides(values: dict, overrides) -> dict:
    """
    Applies `key.sub=value` overrides, e.g. `truth.n=500`. Values are parsed
    as YAML scalars.
    """
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"override {item!r} must look like key=value")
        try:
            dot_set(values, key.replace("-", "_"), yaml.safe_load(raw))
        except (KeyError, TypeError) as e:
            raise UsageError(f"cannot override {key}: no such key") from e
    return values


def build(value):
    """Builds a config value, lazy constructors included"""
    return _build(value)


# Lazy Objects
make_lazy_constructor(TruthSpec, "TruthSpec")
make_lazy_constructor(Exponential, "Exponential")
make_lazy_constructor(Gompertz, "Gompertz")
make_lazy_constructor(Weibull, "Weibull")
make_lazy_constructor(Bernoulli, "Bernoulli")
make_lazy_constructor(Normal, "Normal")

# Logger YAML configuration
yaml.add_constructor("!Logger", logging_constructor, Loader=yaml.UnsafeLoader)
