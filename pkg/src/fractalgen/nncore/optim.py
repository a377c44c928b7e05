from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .state import ModelState


def sgd_step(state: ModelState, grads: dict[str, np.ndarray], lr: float, momentum: float) -> None:
    """In-place momentum SGD: ``v = momentum * v + g; w = w - lr * v``.

    Parameters without a gradient entry are treated as having zero gradient.
    """
    for key, w in state.params.items():
        v = state.velocity[key]
        g = grads.get(key)
        if g is not None and g.shape != w.shape:
            raise ShapeError(f"gradient for {key} has shape {g.shape}, parameter has {w.shape}")
        v *= momentum
        if g is not None:
            v += g
        w -= lr * v
    state.step += 1
