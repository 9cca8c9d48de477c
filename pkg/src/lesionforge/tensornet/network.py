"""Sequential network container with a statically checked shape chain."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError, UsageError
from .layers import Layer, Module, Shape


class Sequential(Module):
    """Ordered layers applied one after another.

    ``input_shape`` excludes the batch axis. The shape of every intermediate
    activation is computed once at construction, so a mis-wired network fails
    before any data flows through it.
    """

    def __init__(self, layers: list[Layer], input_shape: Shape):
        super().__init__()
        self.layers = layers
        self.input_shape = tuple(input_shape)
        for i, layer in enumerate(layers):
            self.add(str(i), layer)
        self.shapes = [self.input_shape]
        for layer in layers:
            self.shapes.append(tuple(layer.output_shape(self.shapes[-1])))
        self._ran = False
        self._emb_grad = None

    @property
    def output_shape(self) -> Shape:
        return self.shapes[-1]

    def forward(self, x: np.ndarray, emb: np.ndarray | None = None,
                start: int = 0, stop: int | None = None) -> np.ndarray:
        stop = len(self.layers) if stop is None else stop
        if tuple(x.shape[1:]) != self.shapes[start]:
            raise ShapeError(f"expected input (*, {self.shapes[start]}), got {x.shape}")
        for layer in self.layers[start:stop]:
            if layer.uses_embedding:
                if emb is None:
                    raise UsageError("network needs a conditioning embedding")
                x = layer.forward(x, emb)
            else:
                x = layer.forward(x)
        self._ran = True
        return x

    def backward(self, dy: np.ndarray, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Backpropagates through layers ``[start, stop)``; returns d(input).

        Gradients w.r.t. the conditioning embedding, if any layer consumed it,
        are left in ``self.emb_grad``.
        """
        if not self._ran:
            raise UsageError("backward called before forward")
        stop = len(self.layers) if stop is None else stop
        demb = None
        for layer in reversed(self.layers[start:stop]):
            if layer.uses_embedding:
                dy, de = layer.backward(dy)
                demb = de if demb is None else demb + de
            else:
                dy = layer.backward(dy)
        self._emb_grad = demb
        return dy

    @property
    def emb_grad(self) -> np.ndarray | None:
        return self._emb_grad
