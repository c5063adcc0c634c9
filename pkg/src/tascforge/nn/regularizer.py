"""Similarity-promoting penalty over selected filter pairs.

``R = exp(-sum_{(i, j) in S} cos(F_i, F_j))``, differentiated with respect to
the current filter weights.
"""

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FilterPair:
    """Two filters ``i < j`` of one conv layer (or one residual group).

    ``layers`` lists the conv layer indices whose filters are concatenated
    to form the compared vectors; it has one entry for ungrouped layers.
    """

    layers: tuple
    i: int
    j: int
    similarity: float = 0.0

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("a filter cannot pair with itself")
        if self.i > self.j:
            i, j = self.j, self.i
            object.__setattr__(self, "i", i)
            object.__setattr__(self, "j", j)
        object.__setattr__(self, "layers", tuple(self.layers))

    def to_dict(self):
        return {"layers": list(self.layers), "i": self.i, "j": self.j,
                "similarity": self.similarity}


def filter_matrix(model, layers):
    """Rows are the flattened (H, W, C row-major) filters, concatenated over ``layers``."""
    blocks = []
    for idx in layers:
        w = model.params[idx]["W"]
        blocks.append(w.reshape(-1, w.shape[-1]).T)
    return np.hstack(blocks)


def scatter_filter_grad(grad_matrix, model, layers):
    """Split a gradient on :func:`filter_matrix` rows back into conv weight shapes."""
    out = {}
    col = 0
    for idx in layers:
        w = model.params[idx]["W"]
        d = w.size // w.shape[-1]
        out[idx] = grad_matrix[:, col:col + d].T.reshape(w.shape)
        col += d
    return out


def similarity_regularizer(filters, pairs):
    """Penalty value and its gradient.

    Parameters
    ----------
    filters : dict
        Maps each ``pair.layers`` key to an (n, D) array of current filter
        vectors.
    pairs : list of FilterPair

    Returns
    -------
    (R, grads) with ``grads`` shaped like ``filters``.  A pair containing a
    zero-norm filter contributes cosine 0 and no gradient.
    """
    grads = {key: np.zeros_like(v) for key, v in filters.items()}
    total = 0.0
    contrib = []
    for pair in pairs:
        f = filters[pair.layers]
        u, v = f[pair.i], f[pair.j]
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0.0 or nv == 0.0:
            log.warning("zero-norm filter in pair %s; treated as cos = 0", pair)
            continue
        c = float(u @ v) / (nu * nv)
        total += c
        # d cos / du = v / (|u||v|) - cos * u / |u|^2
        contrib.append((pair, v / (nu * nv) - c * u / nu**2, u / (nu * nv) - c * v / nv**2))
    r = float(np.exp(-total))
    for pair, du, dv in contrib:
        grads[pair.layers][pair.i] -= r * du
        grads[pair.layers][pair.j] -= r * dv
    return r, grads
