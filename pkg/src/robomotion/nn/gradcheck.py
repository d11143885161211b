"""Central-difference gradient verification."""

from __future__ import annotations

import numpy as np

from .autograd import Tape, Tensor, backward, record
from .optim import zero_grads


def grad_check(fn, params: dict[str, Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` must evaluate a scalar Tensor from `params` (recording happens
    here). Error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    zero_grads(params)
    tape = Tape()
    with record(tape):
        loss = fn()
    backward(tape, loss)
    analytic = {name: (np.array(p.grad) if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
            if err > worst:
                worst = err
    return worst
