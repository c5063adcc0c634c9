"""Bayesian optimization of the head configuration.

The loop evaluates ``k0`` random configurations, then repeatedly refits the
GP surrogate (re-optimizing its kernel hyperparameters), proposes the
candidate with the highest Expected Improvement and evaluates it.
"""

import json
import logging
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import gp
from .data import Dataset
from .errors import ArchitectureInfeasible, EmptyCandidatePool, SpaceTooLarge, TascError
from .nn.model import ModelState, forward, init_model
from .nn.spec import Conv, Dense, Dropout, Flatten, MaxPool, NetworkSpec, Output, layer_shapes
from .nn.train import train
from .space import FIXED_STRIDE, HeadConfig, encode, enumerate_space, sample_uniform

log = logging.getLogger(__name__)

FALLBACK_ENUMERATION_CAP = 100_000


@dataclass
class Observation:
    config: HeadConfig
    point: np.ndarray
    accuracy: float
    epoch_budget: int
    wall_seconds: float = 0.0
    error: Optional[str] = None

    def record(self, index):
        """Log record; timing is left out so reruns produce identical logs."""
        return {
            "index": index,
            "config": self.config.to_dict(),
            "point": [float(x) for x in self.point],
            "accuracy": self.accuracy,
            "epoch_budget": self.epoch_budget,
            "error": self.error,
        }


@dataclass
class TuneResult:
    best: Observation
    history: list
    k0: int
    total_budget: int
    best_model: Optional[ModelState] = None
    best_spec: Optional[NetworkSpec] = None
    kernels: list = field(default_factory=list)

    def running_best(self):
        return list(np.maximum.accumulate([o.accuracy for o in self.history]))


# -- proposal -----------------------------------------------------------

def _unique(configs, exclude):
    seen, out = set(exclude), []
    for c in configs:
        if c not in seen:
            seen.add(c)
            out.append(c)
    return out


def score_candidates(model, space, candidates, f_best):
    points = np.array([encode(space, c) for c in candidates])
    mu, var = gp.posterior_batch(model, points)
    return gp.expected_improvement(mu, var, f_best)


def propose_next(model, f_best, space, candidates_per_step, rng, evaluated=()):
    """EI-argmax over ``candidates_per_step`` uniform draws not yet evaluated.

    Ties go to the earliest draw.  Raises EmptyCandidatePool when every draw
    has already been evaluated.
    """
    draws = [sample_uniform(space, rng) for _ in range(candidates_per_step)]
    pool = _unique(draws, evaluated)
    if not pool:
        raise EmptyCandidatePool("every sampled candidate was already evaluated")
    ei = np.atleast_1d(score_candidates(model, space, pool, f_best))
    return pool[int(np.argmax(ei))]


def sample_unexplored(space, rng, evaluated, attempts=10_000):
    """A uniform unexplored configuration, or None when the space is exhausted."""
    for _ in range(attempts):
        c = sample_uniform(space, rng)
        if c not in evaluated:
            return c
    try:
        rest = [c for c in enumerate_space(space, FALLBACK_ENUMERATION_CAP) if c not in evaluated]
    except SpaceTooLarge:
        return None
    if not rest:
        return None
    return rest[int(rng.integers(len(rest)))]


def initial_design(space, k0, rng):
    """``k0`` distinct uniform configurations (fewer if the space is smaller)."""
    chosen = []
    seen = set()
    limit = min(k0, space.size())
    while len(chosen) < limit:
        c = sample_uniform(space, rng)
        if c not in seen:
            seen.add(c)
            chosen.append(c)
    return chosen


# -- search loops -------------------------------------------------------------

def bayes_search(space, objective: Callable, k0, m_total, candidates_per_step=512,
                 rng=None, epoch_budget=0, n_jobs=1):
    """Maximize ``objective(config, index)`` over ``space``.

    ``objective`` returns an accuracy in [0, 1]; any TascError or
    FloatingPointError it raises scores the configuration 0.
    """
    if k0 < 2 or m_total < k0:
        raise ValueError("need k0 >= 2 and m_total >= k0")
    rng = np.random.default_rng(0) if rng is None else rng
    history, kernels = [], []

    def run(config, index):
        t0 = time.perf_counter()
        error = None
        try:
            acc = float(objective(config, index))
        except (TascError, FloatingPointError) as exc:
            log.warning("config %s failed: %s", config.describe(), exc)
            acc, error = 0.0, f"{type(exc).__name__}: {exc}"
        return Observation(config, encode(space, config), acc, epoch_budget,
                           time.perf_counter() - t0, error)

    design = initial_design(space, k0, rng)
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            history.extend(pool.map(run, design, range(len(design))))
    else:
        history.extend(run(c, i) for i, c in enumerate(design))
    evaluated = {o.config for o in history}

    while len(history) < m_total:
        x = np.array([o.point for o in history])
        y = np.array([o.accuracy for o in history])
        params = gp.optimize_hyperparams(x, y)
        model = gp.fit(x, y, params)
        kernels.append(params)
        try:
            config = propose_next(model, float(y.max()), space, candidates_per_step, rng, evaluated)
        except EmptyCandidatePool:
            config = sample_unexplored(space, rng, evaluated)
            if config is None:
                log.info("search space exhausted after %d evaluations", len(history))
                break
        history.append(run(config, len(history)))
        evaluated.add(config)
        log.info("bo step %d: %s -> %.4f", len(history), config.describe(), history[-1].accuracy)

    best = max(history, key=lambda o: o.accuracy)  # first maximum wins
    return TuneResult(best, history, k0, m_total, kernels=kernels)


def random_search(space, objective, budget, rng=None):
    """Baseline: ``budget`` distinct uniform configurations."""
    rng = np.random.default_rng(0) if rng is None else rng
    history = []
    for i, c in enumerate(initial_design(space, budget, rng)):
        history.append(Observation(c, encode(space, c), float(objective(c, i)), 0))
    return TuneResult(max(history, key=lambda o: o.accuracy), history, budget, budget)


# -- proxy networks on a frozen backbone ----------------------------------------

def head_layers(config, classes, input_rank):
    """Layers for ``config`` plus the softmax output layer."""
    layers = [Conv(c.size, c.filters, c.activation) for c in config.convs]
    if config.pool is not None:
        layers.append(MaxPool(config.pool, FIXED_STRIDE))
    if input_rank == 3 or layers:
        layers.append(Flatten())
    for f in config.fcs:
        layers += [Dense(f.neurons, f.activation, batchnorm=True), Dropout(f.dropout)]
    layers.append(Output(classes))
    return layers


def truncate(spec, n):
    """First ``n`` layers of ``spec`` (no output layer, so not validated)."""
    groups = tuple(g for g in spec.residual_groups if max(g) < n)
    if any(min(g) < n <= max(g) for g in spec.residual_groups):
        raise ArchitectureInfeasible("cut point splits a residual group")
    return NetworkSpec(spec.layers[:n], spec.input_shape, groups)


@dataclass
class Backbone:
    """A pretrained network whose first ``cut`` layers are reused and frozen."""

    model: ModelState
    spec: NetworkSpec
    cut: int

    @classmethod
    def from_pretrained(cls, model, spec, replace_top_k=0):
        cut = len(spec.layers) - 1 - replace_top_k
        if cut < 0:
            raise ArchitectureInfeasible("replace_top_k exceeds the backbone depth")
        return cls(model, spec, cut)

    @property
    def feature_spec(self):
        return truncate(self.spec, self.cut)

    @property
    def feature_shape(self):
        if self.cut == 0:
            return self.spec.input_shape
        shapes = layer_shapes(self.spec)
        return shapes[self.cut - 1][1]

    def features(self, images, batch_size=256):
        if self.cut == 0:
            return np.asarray(images, dtype=np.float64)
        sub = ModelState(self.model.params[:self.cut])
        spec = self.feature_spec
        return np.concatenate([forward(sub, spec, images[i:i + batch_size])
                               for i in range(0, len(images), batch_size)])


def config_rng(seed, config):
    """Generator seeded by the run seed and the configuration itself.

    Seeding by configuration (not by evaluation order) makes the proxy
    accuracy a function of the configuration, so a configuration scores the
    same in the search, in a rerun of the best head, and in the oracle.
    """
    key = zlib.crc32(json.dumps(config.to_dict(), sort_keys=True).encode())
    return np.random.default_rng([seed, key])


class ProxyEvaluator:
    """Trains heads on cached backbone features.

    The backbone is frozen, so its features are computed once per dataset.
    """

    def __init__(self, backbone, train_data, val_data, epochs, seed=0, batch_size=32):
        self.backbone = backbone
        self.epochs = epochs
        self.seed = seed
        self.batch_size = batch_size
        self.classes = train_data.class_count
        self.train_feats = Dataset(backbone.features(train_data.images), train_data.labels,
                                   train_data.class_count, "train")
        self.val_feats = Dataset(backbone.features(val_data.images), val_data.labels,
                                 val_data.class_count, "val")

    def head_spec(self, config):
        shape = self.backbone.feature_shape
        spec = NetworkSpec(tuple(head_layers(config, self.classes, len(shape))), shape)
        layer_shapes(spec)
        return spec

    def train_head(self, config, index=0):
        """Train a head for ``config``; ``index`` is the evaluation's position
        in the search and does not influence the result."""
        spec = self.head_spec(config)
        rng = config_rng(self.seed, config)
        model = init_model(spec, rng)
        weights = np.ones(self.classes)
        model, acc, _ = train(model, spec, self.train_feats, self.val_feats, self.epochs,
                              weights, rng=rng, batch_size=self.batch_size)
        return model, spec, acc

    def __call__(self, config, index=0):
        return self.train_head(config, index)[2]


def evaluate_config(backbone, config, train_data, val_data, epochs, seed=0):
    """Best validation accuracy of a proxy network built from ``config``."""
    return ProxyEvaluator(backbone, train_data, val_data, epochs, seed)(config)


def assemble(backbone, head_model, head_spec, freeze_backbone=True):
    """Backbone prefix followed by a trained head, as one network."""
    from dataclasses import replace

    prefix = truncate(backbone.spec, backbone.cut)
    layers = [replace(x, trainable=not freeze_backbone) if hasattr(x, "trainable") else x
              for x in prefix.layers]
    spec = NetworkSpec(tuple(layers) + head_spec.layers, backbone.spec.input_shape,
                       prefix.residual_groups)
    layer_shapes(spec)
    params = [{k: v.copy() for k, v in p.items()}
              for p in backbone.model.params[:backbone.cut] + head_model.params]
    accum = [{k: v.copy() for k, v in a.items()}
             for a in backbone.model.accum[:backbone.cut] + head_model.accum]
    return ModelState(params, accum), spec


def tune(backbone, space, train_data, val_data, epochs=10, k0=5, m_total=20,
         candidates_per_step=512, rng=None, seed=0, n_jobs=1, batch_size=32):
    """Search head configurations on top of a frozen backbone.

    The returned result carries the trained best head assembled with the
    backbone (``best_model``/``best_spec``).
    """
    evaluator = ProxyEvaluator(backbone, train_data, val_data, epochs, seed, batch_size)
    rng = np.random.default_rng(seed) if rng is None else rng
    result = bayes_search(space, evaluator, k0, m_total, candidates_per_step, rng,
                          epoch_budget=epochs, n_jobs=n_jobs)
    index = result.history.index(result.best)
    head_model, head_spec, _ = evaluator.train_head(result.best.config, index)
    result.best_model, result.best_spec = assemble(backbone, head_model, head_spec)
    return result
