"""Run configuration files.

Grammar: one ``key = value`` per line, keys are dotted (``bo.k0``), ``#``
starts a comment outside quotes, blank lines are ignored.  Values are
Python/TOML-style literals: integers, floats, ``true``/``false``, quoted
strings and ``[...]`` lists of those.  Unknown keys are rejected.
"""

import ast
import re
from dataclasses import dataclass, field

from .errors import ConfigError
from .nn.spec import Conv, Dense, Dropout, Flatten, MaxPool, NetworkSpec, Output
from .space import SearchSpace

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)*$")


def _strip_comment(line):
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def _literal(text, where):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        pass
    # bare true/false, possibly inside a list
    swapped = re.sub(r"\btrue\b", "True", re.sub(r"\bfalse\b", "False", text))
    try:
        return ast.literal_eval(swapped)
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(f"{where}: cannot parse value {text!r}") from exc


def parse_text(text, source="<config>"):
    """Dotted key -> value mapping."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = _literal(value, f"{source}:{lineno}")
    return values


def _num(kind, lo=None, hi=None, lo_open=False, hi_open=False):
    def check(v):
        if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
            raise ValueError("expected an integer")
        if kind is float and (isinstance(v, bool) or not isinstance(v, (int, float))):
            raise ValueError("expected a number")
        v = kind(v)
        if lo is not None and (v < lo or (lo_open and v == lo)):
            raise ValueError(f"must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and (v > hi or (hi_open and v == hi)):
            raise ValueError(f"must be {'<' if hi_open else '<='} {hi}")
        return v
    return check


def _bool(v):
    if not isinstance(v, bool):
        raise ValueError("expected true or false")
    return v


def _str(v):
    if not isinstance(v, str):
        raise ValueError("expected a string")
    return v


def _opt_str(v):
    return None if v in (None, "") else _str(v)


def _list(v):
    if not isinstance(v, (list, tuple)):
        raise ValueError("expected a list")
    return list(v)


def _choice(*options):
    def check(v):
        if v not in options:
            raise ValueError(f"must be one of {options}")
        return v
    return check


DEFAULT_BACKBONE = ["conv:3:32:ReLU", "pool:2:2", "conv:3:32:ReLU", "flatten", "dense:64:ReLU"]

# key -> (validator, default)
SCHEMA = {
    "seed": (_num(int, 0), 0),
    "out": (_opt_str, None),
    "data.kind": (_choice("synthetic", "idx"), "synthetic"),
    "data.height": (_num(int, 1), 16),
    "data.width": (_num(int, 1), 16),
    "data.channels": (_num(int, 1), 1),
    "data.source_classes": (_num(int, 2), 6),
    "data.source_samples_per_class": (_num(int, 2), 60),
    "data.target_classes": (_num(int, 2), 8),
    "data.target_samples_per_class": (_num(int, 2), 40),
    "data.val_fraction": (_num(float, 0.0, 1.0, True, True), 0.25),
    "data.source_images": (_opt_str, None),
    "data.source_labels": (_opt_str, None),
    "data.target_images": (_opt_str, None),
    "data.target_labels": (_opt_str, None),
    "backbone.layers": (_list, DEFAULT_BACKBONE),
    "backbone.residual_groups": (_list, []),
    "backbone.replace_top_k_blocks": (_num(int, 0), 2),
    "pretrain.epochs": (_num(int, 1), 8),
    "train.batch_size": (_num(int, 1), 32),
    "search.conv_counts": (_list, [0, 1, 2, 3]),
    "search.conv_sizes": (_list, [1, 2, 3, 5]),
    "search.conv_filters": (_list, [32, 64, 128, 256, 512]),
    "search.conv_activations": (_list, ["Sigmoid", "TanH", "ReLU", "ELU", "SELU"]),
    "search.pool_counts": (_list, [0, 1]),
    "search.pool_sizes": (_list, [2, 3]),
    "search.fc_counts": (_list, [1, 2, 3]),
    "search.fc_neurons": (_list, [64, 128, 256, 512, 1024]),
    "search.fc_activations": (_list, ["Sigmoid", "TanH", "ReLU", "ELU", "SELU"]),
    "search.fc_dropouts": (_list, [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]),
    "bo.k0": (_num(int, 2), 5),
    "bo.budget": (_num(int, 2), 20),
    "bo.candidates_per_step": (_num(int, 1), 512),
    "bo.proxy_epochs": (_num(int, 1), 10),
    "bo.finetune_backbone": (_bool, False),
    "bo.n_jobs": (_num(int, 1), 1),
    "prune.rate": (_num(float, 0.0, 1.0, True, True), 0.05),
    "prune.min_diff": (_num(float), 0.02),
    "prune.epochs_each": (_num(int, 1), 50),
    "prune.eligibility_threshold": (_num(int, 2), 16),
    "prune.max_iterations": (_num(int, 0), 3),
    "oracle.cap": (_num(int, 1), 1000),
}


def parse_layer(text):
    """``conv:K:FILTERS:ACT[:bn]``, ``pool:K[:STRIDE]``, ``dense:N:ACT[:bn]``,
    ``dropout:P`` or ``flatten``."""
    parts = [p.strip() for p in str(text).split(":")]
    kind, args = parts[0].lower(), parts[1:]
    try:
        if kind == "conv" and len(args) in (3, 4):
            return Conv(int(args[0]), int(args[1]), args[2], batchnorm=args[3:] == ["bn"])
        if kind == "pool" and len(args) in (1, 2):
            return MaxPool(int(args[0]), int(args[1]) if len(args) == 2 else 1)
        if kind == "dense" and len(args) in (2, 3):
            return Dense(int(args[0]), args[1], batchnorm=args[2:] == ["bn"])
        if kind == "dropout" and len(args) == 1:
            return Dropout(float(args[0]))
        if kind == "flatten" and not args:
            return Flatten()
    except ValueError as exc:
        raise ConfigError(f"bad layer {text!r}: {exc}") from exc
    raise ConfigError(f"bad layer {text!r}")


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, **kw):
        v = dict(self.values)
        v.update({k.replace("__", "."): x for k, x in kw.items()})
        return RunConfig(validate(v, fill=False))

    def search_space(self):
        try:
            return SearchSpace(
                conv_counts=self["search.conv_counts"],
                conv_sizes=self["search.conv_sizes"],
                conv_filters=self["search.conv_filters"],
                conv_activations=self["search.conv_activations"],
                pool_counts=self["search.pool_counts"],
                pool_sizes=self["search.pool_sizes"],
                fc_counts=self["search.fc_counts"],
                fc_neurons=self["search.fc_neurons"],
                fc_activations=self["search.fc_activations"],
                fc_dropouts=self["search.fc_dropouts"],
            )
        except ValueError as exc:
            raise ConfigError(f"search space: {exc}") from exc

    def backbone_spec(self, input_shape, source_classes):
        layers = [parse_layer(x) for x in self["backbone.layers"]]
        groups = [tuple(int(i) for i in g) for g in self["backbone.residual_groups"]]
        return NetworkSpec(tuple(layers) + (Output(source_classes),), input_shape, tuple(groups))


def validate(values, fill=True):
    unknown = sorted(set(values) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = {k: default for k, (_, default) in SCHEMA.items()} if fill else {}
    for key, value in values.items():
        check = SCHEMA[key][0]
        try:
            out[key] = check(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    if out.get("bo.budget", 0) < out.get("bo.k0", 0):
        raise ConfigError("bo.budget must be >= bo.k0")
    if out.get("data.kind") == "idx":
        for k in ("data.source_images", "data.source_labels",
                  "data.target_images", "data.target_labels"):
            if not out.get(k):
                raise ConfigError(f"{k} is required when data.kind = 'idx'")
    for layer in out.get("backbone.layers", []):
        parse_layer(layer)
    return out


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig(validate(parse_text(text, str(path))))


def from_dict(values):
    return RunConfig(validate(dict(values)))
