"""Discrete hyperparameter space for the replaceable head of a CNN.

A head is an ordered stack of convolution slots, an optional max-pooling
slot, and fully connected slots; the output layer is never part of the
configuration.  Configurations map to fixed-length vectors in [0, 1]^d so a
Gaussian process can model them.
"""

from dataclasses import dataclass, field
from itertools import product
from typing import Iterator, Optional

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, SpaceTooLarge

ACTIVATIONS = ("Sigmoid", "TanH", "ReLU", "ELU", "SELU")

FULL_CONV_SIZES = (1, 2, 3, 5)
FULL_CONV_FILTERS = (32, 64, 128, 256, 512)
FULL_POOL_SIZES = (2, 3)
FULL_FC_COUNTS = (1, 2, 3)
FULL_FC_NEURONS = (64, 128, 256, 512, 1024)
FULL_DROPOUTS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
FIXED_STRIDE = 1


@dataclass(frozen=True)
class ConvChoice:
    size: int
    filters: int
    activation: str


@dataclass(frozen=True)
class FCChoice:
    neurons: int
    activation: str
    dropout: float


@dataclass(frozen=True)
class HeadConfig:
    convs: tuple = ()
    pool: Optional[int] = None
    fcs: tuple = ()

    def to_dict(self):
        return {
            "convs": [[c.size, c.filters, c.activation] for c in self.convs],
            "pool": self.pool,
            "fcs": [[f.neurons, f.activation, f.dropout] for f in self.fcs],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            convs=tuple(ConvChoice(int(s), int(n), str(a)) for s, n, a in d["convs"]),
            pool=None if d["pool"] is None else int(d["pool"]),
            fcs=tuple(FCChoice(int(n), str(a), float(p)) for n, a, p in d["fcs"]),
        )

    def describe(self):
        parts = [f"conv{c.size}x{c.filters}-{c.activation}" for c in self.convs]
        if self.pool is not None:
            parts.append(f"pool{self.pool}")
        parts += [f"fc{f.neurons}-{f.activation}-d{f.dropout:g}" for f in self.fcs]
        return " | ".join(parts) if parts else "(output only)"


def _tuple(values):
    return tuple(values)


@dataclass(frozen=True)
class SearchSpace:
    """Choice lists for every head hyperparameter.

    The defaults reproduce the full published space.  Custom spaces may
    only narrow the choice lists (every value must still be a published one),
    which keeps toy spaces honest.
    """

    conv_counts: tuple = (0, 1, 2, 3)
    conv_sizes: tuple = FULL_CONV_SIZES
    conv_filters: tuple = FULL_CONV_FILTERS
    conv_activations: tuple = ACTIVATIONS
    pool_counts: tuple = (0, 1)
    pool_sizes: tuple = FULL_POOL_SIZES
    fc_counts: tuple = FULL_FC_COUNTS
    fc_neurons: tuple = FULL_FC_NEURONS
    fc_activations: tuple = ACTIVATIONS
    fc_dropouts: tuple = FULL_DROPOUTS
    conv_stride: int = field(default=FIXED_STRIDE, init=False)
    pool_stride: int = field(default=FIXED_STRIDE, init=False)

    def __post_init__(self):
        for name in (
            "conv_counts", "conv_sizes", "conv_filters", "conv_activations",
            "pool_counts", "pool_sizes", "fc_counts", "fc_neurons",
            "fc_activations", "fc_dropouts",
        ):
            values = getattr(self, name)
            if name == "fc_dropouts":
                values = tuple(round(float(v), 1) for v in values)
            else:
                values = _tuple(values)
            object.__setattr__(self, name, values)
            if len(values) == 0:
                raise ValueError(f"choice list {name} is empty")
            if len(set(values)) != len(values):
                raise ValueError(f"choice list {name} has duplicates")
        allowed = {
            "conv_sizes": FULL_CONV_SIZES,
            "conv_filters": FULL_CONV_FILTERS,
            "conv_activations": ACTIVATIONS,
            "pool_sizes": FULL_POOL_SIZES,
            "fc_counts": (0,) + FULL_FC_COUNTS,
            "fc_neurons": FULL_FC_NEURONS,
            "fc_activations": ACTIVATIONS,
            "fc_dropouts": FULL_DROPOUTS,
            "conv_counts": (0, 1, 2, 3),
            "pool_counts": (0, 1),
        }
        for name, ok in allowed.items():
            bad = [v for v in getattr(self, name) if v not in ok]
            if bad:
                raise ValueError(f"{name} contains values outside the space: {bad}")
        if self.max_convs < 0 or self.max_fcs < 0:
            raise ValueError("slot maxima must be non-negative")

    @property
    def max_convs(self):
        return max(self.conv_counts)

    @property
    def max_fcs(self):
        return max(self.fc_counts)

    @property
    def has_pool_slot(self):
        return max(self.pool_counts) > 0

    # -- layout of the encoded vector -----------------------------------
    @property
    def conv_block(self):
        return 3 + len(self.conv_activations)

    @property
    def fc_block(self):
        return 3 + len(self.fc_activations)

    @property
    def dim(self):
        d = 1 + self.max_convs * self.conv_block
        if self.has_pool_slot:
            d += 2
        return d + 1 + self.max_fcs * self.fc_block

    def size(self):
        """Total number of distinct configurations."""
        per_conv = len(self.conv_sizes) * len(self.conv_filters) * len(self.conv_activations)
        per_fc = len(self.fc_neurons) * len(self.fc_activations) * len(self.fc_dropouts)
        n_conv = sum(per_conv ** c for c in self.conv_counts)
        n_pool = sum(len(self.pool_sizes) if c else 1 for c in self.pool_counts)
        n_fc = sum(per_fc ** c for c in self.fc_counts)
        return n_conv * n_pool * n_fc

    def validate(self, config):
        if len(config.convs) not in self.conv_counts:
            raise InvalidConfig(f"{len(config.convs)} conv layers not allowed")
        for c in config.convs:
            if (c.size not in self.conv_sizes or c.filters not in self.conv_filters
                    or c.activation not in self.conv_activations):
                raise InvalidConfig(f"conv slot {c} outside the space")
        if config.pool is None:
            if 0 not in self.pool_counts:
                raise InvalidConfig("pool layer is mandatory in this space")
        elif 1 not in self.pool_counts or config.pool not in self.pool_sizes:
            raise InvalidConfig(f"pool size {config.pool} outside the space")
        if len(config.fcs) not in self.fc_counts:
            raise InvalidConfig(f"{len(config.fcs)} dense layers not allowed")
        for f in config.fcs:
            if (f.neurons not in self.fc_neurons or f.activation not in self.fc_activations
                    or round(f.dropout, 1) not in self.fc_dropouts):
                raise InvalidConfig(f"dense slot {f} outside the space")


def full_space():
    return SearchSpace()


def sample_uniform(space, rng):
    """Draw one configuration; every slot count and field is uniform."""
    n_conv = space.conv_counts[rng.integers(len(space.conv_counts))]
    convs = []
    for _ in range(n_conv):
        convs.append(ConvChoice(
            space.conv_sizes[rng.integers(len(space.conv_sizes))],
            space.conv_filters[rng.integers(len(space.conv_filters))],
            space.conv_activations[rng.integers(len(space.conv_activations))],
        ))
    pool = None
    if space.pool_counts[rng.integers(len(space.pool_counts))]:
        pool = space.pool_sizes[rng.integers(len(space.pool_sizes))]
    n_fc = space.fc_counts[rng.integers(len(space.fc_counts))]
    fcs = []
    for _ in range(n_fc):
        fcs.append(FCChoice(
            space.fc_neurons[rng.integers(len(space.fc_neurons))],
            space.fc_activations[rng.integers(len(space.fc_activations))],
            space.fc_dropouts[rng.integers(len(space.fc_dropouts))],
        ))
    return HeadConfig(tuple(convs), pool, tuple(fcs))


def _ordinal(choices, value):
    if len(choices) == 1:
        return 0.0
    return choices.index(value) / (len(choices) - 1)


def _snap(choices, x):
    if len(choices) == 1:
        return choices[0]
    i = int(np.clip(np.rint(x * (len(choices) - 1)), 0, len(choices) - 1))
    return choices[i]


def _argmax_first(block):
    return int(np.argmax(block))  # numpy returns the lowest index on ties


def encode(space, config):
    """Map a configuration to a vector in [0, 1]^space.dim.

    Layout: conv-count ordinal, then per conv slot [active, size, filters,
    one-hot activation], then (if the space has a pool slot) [active, size],
    then fc-count ordinal and per fc slot [active, neurons, dropout, one-hot
    activation].  Inactive slots are all zeros.
    """
    space.validate(config)
    v = np.zeros(space.dim)
    pos = 0
    v[pos] = _ordinal(space.conv_counts, len(config.convs))
    pos += 1
    for slot in range(space.max_convs):
        if slot < len(config.convs):
            c = config.convs[slot]
            v[pos] = 1.0
            v[pos + 1] = _ordinal(space.conv_sizes, c.size)
            v[pos + 2] = _ordinal(space.conv_filters, c.filters)
            v[pos + 3 + space.conv_activations.index(c.activation)] = 1.0
        pos += space.conv_block
    if space.has_pool_slot:
        if config.pool is not None:
            v[pos] = 1.0
            v[pos + 1] = _ordinal(space.pool_sizes, config.pool)
        pos += 2
    v[pos] = _ordinal(space.fc_counts, len(config.fcs))
    pos += 1
    for slot in range(space.max_fcs):
        if slot < len(config.fcs):
            f = config.fcs[slot]
            v[pos] = 1.0
            v[pos + 1] = _ordinal(space.fc_neurons, f.neurons)
            v[pos + 2] = _ordinal(space.fc_dropouts, round(f.dropout, 1))
            v[pos + 3 + space.fc_activations.index(f.activation)] = 1.0
        pos += space.fc_block
    return v


def _active_slots(flags, counts, count_dim):
    active = [i for i, a in enumerate(flags) if a >= 0.5]
    if len(active) in counts:
        return active
    # fall back on the count ordinal when the activity dims disagree with it
    n = _snap(counts, count_dim)
    return list(range(n))


def decode(space, point):
    """Inverse of :func:`encode`; arbitrary vectors snap to the nearest config."""
    v = np.asarray(point, dtype=np.float64).ravel()
    if v.size != space.dim:
        raise DimensionMismatch(f"expected {space.dim} dims, got {v.size}")
    pos = 0
    conv_count_dim = v[pos]
    pos += 1
    conv_start = pos
    flags = [v[conv_start + s * space.conv_block] for s in range(space.max_convs)]
    conv_slots = _active_slots(flags, space.conv_counts, conv_count_dim)
    convs = []
    for s in conv_slots:
        b = conv_start + s * space.conv_block
        convs.append(ConvChoice(
            _snap(space.conv_sizes, v[b + 1]),
            _snap(space.conv_filters, v[b + 2]),
            space.conv_activations[_argmax_first(v[b + 3:b + space.conv_block])],
        ))
    pos = conv_start + space.max_convs * space.conv_block
    pool = None
    if space.has_pool_slot:
        on = v[pos] >= 0.5
        if on and 1 in space.pool_counts or 0 not in space.pool_counts:
            pool = _snap(space.pool_sizes, v[pos + 1])
        pos += 2
    fc_count_dim = v[pos]
    pos += 1
    flags = [v[pos + s * space.fc_block] for s in range(space.max_fcs)]
    fc_slots = _active_slots(flags, space.fc_counts, fc_count_dim)
    fcs = []
    for s in fc_slots:
        b = pos + s * space.fc_block
        fcs.append(FCChoice(
            _snap(space.fc_neurons, v[b + 1]),
            space.fc_activations[_argmax_first(v[b + 3:b + space.fc_block])],
            _snap(space.fc_dropouts, v[b + 2]),
        ))
    return HeadConfig(tuple(convs), pool, tuple(fcs))


def enumerate_space(space, cap):
    """Every configuration exactly once, in a fixed order.

    Raises SpaceTooLarge eagerly (before iteration starts) when the space
    holds more than ``cap`` configurations.
    """
    total = space.size()
    if total > cap:
        raise SpaceTooLarge(f"space has {total} configurations, cap is {cap}")
    return _iter_space(space)


def _iter_space(space) -> Iterator[HeadConfig]:
    conv_layers = [
        ConvChoice(s, n, a)
        for s, n, a in product(space.conv_sizes, space.conv_filters, space.conv_activations)
    ]
    fc_layers = [
        FCChoice(n, a, p)
        for n, a, p in product(space.fc_neurons, space.fc_activations, space.fc_dropouts)
    ]
    pools = []
    for c in space.pool_counts:
        pools.extend(space.pool_sizes if c else [None])
    for nc in space.conv_counts:
        for convs in product(conv_layers, repeat=nc):
            for pool in pools:
                for nf in space.fc_counts:
                    for fcs in product(fc_layers, repeat=nf):
                        yield HeadConfig(tuple(convs), pool, tuple(fcs))
