"""Exact parameter and FLOP accounting.

One multiply-accumulate counts as 2 FLOPs.  Only convolutions and dense
layers (including the output layer) are counted; pooling, activations and
batch normalization are free.
"""

from .spec import Conv, Dense, NetworkSpec, Output, layer_shapes


def layer_params(spec):
    """List of ``(total, trainable)`` parameter counts per layer."""
    counts = []
    for layer, (in_shape, out_shape) in zip(spec.layers, layer_shapes(spec)):
        total = trainable = 0
        if isinstance(layer, Conv):
            total = layer.k * layer.k * in_shape[2] * layer.filters + layer.filters
            trainable = total
        elif isinstance(layer, (Dense, Output)):
            total = in_shape[0] * out_shape[0] + out_shape[0]
            trainable = total
        if getattr(layer, "batchnorm", False):
            total += 4 * out_shape[-1]
            trainable += 2 * out_shape[-1]
        if not getattr(layer, "trainable", True):
            trainable = 0
        counts.append((total, trainable))
    return counts


def count_params(spec):
    """(total, trainable); frozen layers contribute to the total only."""
    counts = layer_params(spec)
    return sum(c[0] for c in counts), sum(c[1] for c in counts)


def layer_flops(spec):
    flops = []
    for layer, (in_shape, out_shape) in zip(spec.layers, layer_shapes(spec)):
        if isinstance(layer, Conv):
            ho, wo, f = out_shape
            flops.append(2 * layer.k * layer.k * in_shape[2] * f * ho * wo)
        elif isinstance(layer, (Dense, Output)):
            flops.append(2 * in_shape[0] * out_shape[0])
        else:
            flops.append(0)
    return flops


def count_flops(spec, input_shape=None, layers=None):
    """FLOPs of one forward pass for a single sample.

    ``input_shape`` overrides the spec's input; ``layers`` restricts the sum
    to the given layer indices (e.g. the pruning-eligible convolutions).
    """
    if input_shape is not None and tuple(input_shape) != spec.input_shape:
        spec = NetworkSpec(spec.layers, tuple(input_shape), spec.residual_groups)
    per_layer = layer_flops(spec)
    if layers is None:
        return sum(per_layer)
    return sum(per_layer[i] for i in layers)
