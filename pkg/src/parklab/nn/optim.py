"""First-order adaptive-moment (Adam) parameter updates."""
from __future__ import annotations

import numpy as np

from .tensor import F32
from .params import ParameterSet


class BadGradient(RuntimeError):
    pass


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One Adam update over every parameter; aborts on non-finite gradients."""
    missing = [n for n in params.names() if n not in grads]
    if missing:
        raise ValueError(f"gradients missing for parameters: {missing}")
    for name in params.names():
        if not np.isfinite(grads[name]).all():
            raise BadGradient(f"non-finite gradient for parameter {name!r}")

    params.adam_step_count += 1
    t = params.adam_step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name in params.names():
        g = grads[name].astype(F32, copy=False)
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= F32(beta1)
        m += F32(1.0 - beta1) * g
        v *= F32(beta2)
        v += F32(1.0 - beta2) * (g * g)
        m_hat = m / F32(bc1)
        v_hat = v / F32(bc2)
        params[name] = params[name] - F32(lr) * m_hat / (np.sqrt(v_hat) + F32(eps))
