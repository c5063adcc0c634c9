"""Layer-graph description of a small CNN.

Tensors are laid out NHWC; a conv weight has shape (k, k, C_in, filters),
so ``W[..., i]`` is filter ``i`` as an H x W x C block.
"""

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from ..errors import ArchitectureInfeasible, ShapeMismatch

ACTIVATIONS = ("Sigmoid", "TanH", "ReLU", "ELU", "SELU", "Linear")


@dataclass(frozen=True)
class Conv:
    k: int
    filters: int
    activation: str = "ReLU"
    batchnorm: bool = False
    trainable: bool = True
    stride: int = field(default=1, init=False)
    kind = "conv"


@dataclass(frozen=True)
class MaxPool:
    k: int
    stride: int = 1
    kind = "pool"


@dataclass(frozen=True)
class Dense:
    neurons: int
    activation: str = "ReLU"
    batchnorm: bool = False
    trainable: bool = True
    kind = "dense"


@dataclass(frozen=True)
class Dropout:
    p: float
    kind = "dropout"


@dataclass(frozen=True)
class Flatten:
    kind = "flatten"


@dataclass(frozen=True)
class Output:
    classes: int
    trainable: bool = True
    kind = "output"


LAYER_TYPES = {cls.kind: cls for cls in (Conv, MaxPool, Dense, Dropout, Flatten, Output)}
WEIGHTED = (Conv, Dense, Output)


def layer_to_dict(layer):
    d = {k: v for k, v in asdict(layer).items() if k != "stride" or layer.kind == "pool"}
    d["kind"] = layer.kind
    return d


def layer_from_dict(d):
    d = dict(d)
    cls = LAYER_TYPES[d.pop("kind")]
    return cls(**d)


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layers, input shape (H, W, C) and optional residual groups.

    A residual group is a set of layer indices with identical output shapes.
    The output of the group's last member is replaced by the element-wise sum
    of every member's own output, so later layers see the merged map.
    """

    layers: tuple
    input_shape: tuple
    residual_groups: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        groups = tuple(tuple(sorted(int(i) for i in g)) for g in self.residual_groups)
        object.__setattr__(self, "residual_groups", groups)

    def to_dict(self):
        return {
            "layers": [layer_to_dict(layer) for layer in self.layers],
            "input_shape": list(self.input_shape),
            "residual_groups": [list(g) for g in self.residual_groups],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tuple(layer_from_dict(x) for x in d["layers"]),
            tuple(d["input_shape"]),
            tuple(tuple(g) for g in d.get("residual_groups", ())),
        )

    def with_layers(self, layers):
        return replace(self, layers=tuple(layers))

    def group_of(self, index) -> Optional[tuple]:
        for g in self.residual_groups:
            if index in g:
                return g
        return None

    @property
    def classes(self):
        return self.layers[-1].classes

    def conv_indices(self):
        return [i for i, layer in enumerate(self.layers) if isinstance(layer, Conv)]


def output_shape(layer, shape):
    """Shape produced by ``layer`` from an input of ``shape`` (batch excluded)."""
    if isinstance(layer, (Conv, MaxPool)):
        if len(shape) != 3:
            raise ArchitectureInfeasible(f"{layer.kind} layer needs a feature map, got {shape}")
        h, w, c = shape
        s = layer.stride
        ho, wo = (h - layer.k) // s + 1, (w - layer.k) // s + 1
        if h < layer.k or w < layer.k or ho < 1 or wo < 1:
            raise ArchitectureInfeasible(
                f"{layer.kind} k={layer.k} cannot fit a {h}x{w} map"
            )
        return (ho, wo, layer.filters if isinstance(layer, Conv) else c)
    if isinstance(layer, Flatten):
        if len(shape) != 3:
            raise ArchitectureInfeasible(f"flatten needs a feature map, got {shape}")
        return (shape[0] * shape[1] * shape[2],)
    if isinstance(layer, (Dense, Output)):
        if len(shape) != 1:
            raise ArchitectureInfeasible(f"{layer.kind} needs a flat input, got {shape}")
        return (layer.neurons if isinstance(layer, Dense) else layer.classes,)
    if isinstance(layer, Dropout):
        return shape
    raise TypeError(f"unknown layer {layer!r}")


def layer_shapes(spec):
    """Input and output shape of every layer; validates the whole graph."""
    shapes = []
    shape = spec.input_shape
    if len(shape) not in (1, 3) or any(s < 1 for s in shape):
        raise ShapeMismatch(f"bad input shape {shape}")
    for layer in spec.layers:
        if isinstance(layer, Dropout) and not 0.0 <= layer.p < 1.0:
            raise ValueError(f"dropout rate {layer.p} outside [0, 1)")
        if getattr(layer, "activation", None) not in (None,) + ACTIVATIONS:
            raise ValueError(f"unknown activation {layer.activation}")
        out = output_shape(layer, shape)
        shapes.append((shape, out))
        shape = out
    if not spec.layers or not isinstance(spec.layers[-1], Output):
        raise ShapeMismatch("the last layer must be an Output layer")
    if any(isinstance(x, Output) for x in spec.layers[:-1]):
        raise ShapeMismatch("Output may only appear last")
    seen = set()
    for g in spec.residual_groups:
        if len(g) < 2 or seen & set(g):
            raise ShapeMismatch(f"bad residual group {g}")
        seen |= set(g)
        outs = {shapes[i][1] for i in g}
        if len(outs) != 1:
            raise ShapeMismatch(f"residual group {g} has mismatched shapes {outs}")
    return shapes
