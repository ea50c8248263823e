"""Shared test utilities: an independent central finite-difference oracle.

The oracle perturbs raw parameter arrays directly and re-runs the forward
function, so it never trusts the tape's backward pass.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import pytest

from semlink.tensor import Tape, Tensor, backward


def fd_gradcheck(
    forward: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-6,
    rtol: float = 1e-5,
    atol: float = 1e-8,
    probes_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare tape gradients of a scalar forward() against central differences.

    Perturbs every element (or a random subset of `probes_per_param` elements)
    of each parameter. Returns the worst relative error seen. Raises via
    pytest.fail on disagreement.
    """
    with Tape():
        loss = forward()
        backward(loss)
    analytic = []
    for p in params:
        # a param with no path to the loss has no grad; the oracle then
        # verifies the finite differences really are zero
        analytic.append(np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        p.grad = None

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if probes_per_param is not None and probes_per_param < n:
            idxs = (rng or np.random.default_rng(0)).choice(n, size=probes_per_param, replace=False)
        else:
            idxs = range(n)
        gflat = grad.reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + step
            lp = forward().data.item()
            flat[i] = orig - step
            lm = forward().data.item()
            flat[i] = orig
            fd = (lp - lm) / (2 * step)
            an = gflat[i]
            denom = max(abs(fd), abs(an), atol)
            rel = abs(fd - an) / denom
            worst = max(worst, rel)
            if abs(fd - an) > atol + rtol * denom:
                pytest.fail(
                    f"gradcheck mismatch at param shape {p.data.shape} index {i}: "
                    f"analytic {an!r} vs finite-difference {fd!r} (rel {rel:.3e})")
    return worst
