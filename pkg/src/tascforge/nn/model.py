"""Model state, forward pass and backpropagation for :class:`NetworkSpec`."""

import copy
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch
from .spec import Conv, Dense, Dropout, Flatten, MaxPool, Output, layer_shapes

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946
TRAINABLE_KEYS = ("W", "b", "gamma", "beta")


@dataclass
class ModelState:
    """Per-layer parameter dicts plus matching Adagrad accumulators.

    ``params[i]`` holds ``W``/``b`` for weighted layers and, with batch
    normalization, ``gamma``/``beta`` (trainable) and ``mean``/``var``
    (running statistics).  ``accum[i]`` mirrors the trainable entries.
    """

    params: list
    accum: list = field(default_factory=list)

    def copy(self):
        return copy.deepcopy(self)


def init_model(spec, rng):
    """He-scaled normal weights, zero biases, identity batch normalization."""
    params = []
    for layer, (in_shape, out_shape) in zip(spec.layers, layer_shapes(spec)):
        p = {}
        if isinstance(layer, Conv):
            fan_in = layer.k * layer.k * in_shape[2]
            p["W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                (layer.k, layer.k, in_shape[2], layer.filters))
            p["b"] = np.zeros(layer.filters)
        elif isinstance(layer, (Dense, Output)):
            p["W"] = rng.normal(0.0, np.sqrt(2.0 / in_shape[0]), (in_shape[0], out_shape[0]))
            p["b"] = np.zeros(out_shape[0])
        if getattr(layer, "batchnorm", False):
            n = out_shape[-1]
            p.update(gamma=np.ones(n), beta=np.zeros(n), mean=np.zeros(n), var=np.ones(n))
        params.append(p)
    model = ModelState(params)
    reset_accumulators(model)
    return model


def reset_accumulators(model):
    model.accum = [
        {k: np.zeros_like(v) for k, v in p.items() if k in TRAINABLE_KEYS}
        for p in model.params
    ]


# -- activations ----------------------------------------------------------

def activate(name, z):
    if name == "ReLU":
        return np.maximum(z, 0.0)
    if name == "Sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    if name == "TanH":
        return np.tanh(z)
    if name == "ELU":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "SELU":
        return SELU_SCALE * np.where(z > 0, z, SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))
    if name == "Linear":
        return z
    raise ValueError(f"unknown activation {name}")


def activation_grad(name, z, a):
    """d a / d z, given the pre-activation ``z`` and output ``a``."""
    if name == "ReLU":
        return (z > 0).astype(np.float64)
    if name == "Sigmoid":
        return a * (1.0 - a)
    if name == "TanH":
        return 1.0 - a * a
    if name == "ELU":
        return np.where(z > 0, 1.0, a + 1.0)
    if name == "SELU":
        return np.where(z > 0, SELU_SCALE, a + SELU_SCALE * SELU_ALPHA)
    if name == "Linear":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name}")


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# -- primitive kernels ----------------------------------------------------

def conv_forward(x, w, b):
    k = w.shape[0]
    n, h, wd, c = x.shape
    ho, wo = h - k + 1, wd - k + 1
    win = sliding_window_view(x, (k, k), axis=(1, 2))  # (n, ho, wo, c, k, k)
    patches = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
    out = patches @ w.reshape(k * k * c, -1) + b
    return out.reshape(n, ho, wo, -1), patches


def conv_backward(dout, x_shape, w, patches):
    k = w.shape[0]
    n, ho, wo, f = dout.shape
    c = x_shape[3]
    d2 = dout.reshape(-1, f)
    dw = (patches.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dpatch = (d2 @ w.reshape(-1, f).T).reshape(n, ho, wo, k, k, c)
    dx = np.zeros(x_shape)
    for i in range(k):
        for j in range(k):
            dx[:, i:i + ho, j:j + wo, :] += dpatch[:, :, :, i, j, :]
    return dx, dw, db


def pool_forward(x, k, s):
    win = sliding_window_view(x, (k, k), axis=(1, 2))[:, ::s, ::s]
    n, ho, wo, c = win.shape[:4]
    flat = win.reshape(n, ho, wo, c, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return out, arg


def pool_backward(dout, x_shape, k, s, arg):
    n, ho, wo, c = dout.shape
    di, dj = np.divmod(arg, k)
    nn_, hh, ww, cc = np.indices((n, ho, wo, c))
    dx = np.zeros(x_shape)
    np.add.at(dx, (nn_, hh * s + di, ww * s + dj, cc), dout)
    return dx


def bn_forward(z, p, train_mode):
    axes = tuple(range(z.ndim - 1))
    if train_mode:
        mu = z.mean(axis=axes)
        var = z.var(axis=axes)
        p["mean"] = BN_MOMENTUM * p["mean"] + (1.0 - BN_MOMENTUM) * mu
        p["var"] = BN_MOMENTUM * p["var"] + (1.0 - BN_MOMENTUM) * var
    else:
        mu, var = p["mean"], p["var"]
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (z - mu) * inv
    return p["gamma"] * xhat + p["beta"], (xhat, inv)


def bn_backward(dy, gamma, cache):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    m = dy.size // dy.shape[-1]
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    dxhat = dy * gamma
    dz = inv / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dz, dgamma, dbeta


# -- network passes -------------------------------------------------------

def forward(model, spec, x, train_mode=False, rng=None, return_cache=False):
    """Class probabilities for a batch ``x`` of shape (N, *spec.input_shape).

    In train mode dropout is active (inverted scaling) and batch normalization
    uses batch statistics while updating its running averages; otherwise the
    pass is read-only and deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != spec.input_shape:
        raise ShapeMismatch(f"batch shape {x.shape[1:]} != {spec.input_shape}")
    if train_mode and rng is None:
        rng = np.random.default_rng(0)
    last_of = {g[-1]: g for g in spec.residual_groups}
    own = {}
    caches = []
    h = x
    for i, (layer, p) in enumerate(zip(spec.layers, model.params)):
        cache = {"x_shape": h.shape}
        if isinstance(layer, Conv):
            z, cache["patches"] = conv_forward(h, p["W"], p["b"])
        elif isinstance(layer, (Dense, Output)):
            cache["x"] = h
            z = h @ p["W"] + p["b"]
        if isinstance(layer, (Conv, Dense)):
            if layer.batchnorm:
                z, cache["bn"] = bn_forward(z, p, train_mode)
            cache["z"] = z
            h = activate(layer.activation, z)
            cache["a"] = h
        elif isinstance(layer, Output):
            h = softmax(z)
        elif isinstance(layer, MaxPool):
            h, cache["arg"] = pool_forward(h, layer.k, layer.stride)
        elif isinstance(layer, Flatten):
            h = h.reshape(h.shape[0], -1)
        elif isinstance(layer, Dropout):
            if train_mode and layer.p > 0:
                mask = (rng.random(h.shape) >= layer.p) / (1.0 - layer.p)
                cache["mask"] = mask
                h = h * mask
        if i in last_of:
            h = h + sum(own[j] for j in last_of[i][:-1])
        own[i] = h
        caches.append(cache)
    if return_cache:
        return h, caches
    return h


def backward(model, spec, caches, dlogits):
    """Gradients of the loss for every layer given d loss / d logits.

    Returns ``(grads, dx)`` where ``grads[i]`` maps trainable keys to arrays.
    """
    grads = [dict() for _ in spec.layers]
    extra = {}
    group_last = {}
    for g in spec.residual_groups:
        for j in g[:-1]:
            group_last[j] = g[-1]
    last_of = {g[-1]: g for g in spec.residual_groups}
    d = dlogits
    for i in range(len(spec.layers) - 1, -1, -1):
        layer, p, cache = spec.layers[i], model.params[i], caches[i]
        if i in extra:
            d = d + extra.pop(i)
        if i in last_of:
            for j in last_of[i][:-1]:
                extra[j] = extra.get(j, 0.0) + d
        if isinstance(layer, Output):
            grads[i]["W"] = cache["x"].T @ d
            grads[i]["b"] = d.sum(axis=0)
            d = d @ p["W"].T
            continue
        if isinstance(layer, (Conv, Dense)):
            d = d * activation_grad(layer.activation, cache["z"], cache["a"])
            if layer.batchnorm:
                d, grads[i]["gamma"], grads[i]["beta"] = bn_backward(d, p["gamma"], cache["bn"])
            if isinstance(layer, Conv):
                d, grads[i]["W"], grads[i]["b"] = conv_backward(
                    d, cache["x_shape"], p["W"], cache["patches"])
            else:
                grads[i]["W"] = cache["x"].T @ d
                grads[i]["b"] = d.sum(axis=0)
                d = d @ p["W"].T
        elif isinstance(layer, MaxPool):
            d = pool_backward(d, cache["x_shape"], layer.k, layer.stride, cache["arg"])
        elif isinstance(layer, Flatten):
            d = d.reshape(cache["x_shape"])
        elif isinstance(layer, Dropout):
            if "mask" in cache:
                d = d * cache["mask"]
    return grads, d


def predict(model, spec, x, batch_size=256):
    """Eval-mode probabilities, computed in chunks."""
    outs = [forward(model, spec, x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0)
