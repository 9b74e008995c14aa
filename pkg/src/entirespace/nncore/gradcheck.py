"""Central finite-difference oracle for recorded gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .tape import Tape, backward


@dataclass
class GradCheckResult:
    max_relative_error: float
    checked: int
    skipped_kinks: int
    worst: tuple = ()


def _eval(f, recorder=None):
    if recorder is not None:
        ops._kink_recorders.append(recorder)
    try:
        return float(f().value)
    finally:
        if recorder is not None:
            ops._kink_recorders.remove(recorder)


def _same_pattern(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(f, params, eps=1e-5, max_coords=None, rng=None, order=2, floor=1e-8,
               retry_above=None) -> GradCheckResult:
    """Compare recorded gradients of scalar ``f()`` with central differences.

    ``params`` are leaf nodes read by ``f``; their values are perturbed in
    place and restored. ``order=2`` is the two-point stencil; ``order=4``
    uses the five-point stencil, whose smaller truncation error lets ``eps``
    be larger and so cuts float cancellation. Coordinates where a relu flips
    sign between probes straddle a kink and are skipped (counted in
    ``skipped_kinks``). Relative error uses ``max(|a|, |b|, floor)``.

    ``eps`` may be a sequence of step sizes: a coordinate whose error exceeds
    ``retry_above`` is re-probed with the next step and keeps the smallest
    error. Large steps lose to curvature and small ones to cancellation, so a
    wrong gradient disagrees at every step while a right one agrees at some.
    Outputs of ``stop_gradient`` are held at their unperturbed values, since
    the recorded gradient treats them as constants.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    with ops.frozen_stops() as frozen:
        with Tape() as tape:
            loss = f()
        backward(tape, loss, params)
        analytic = [p.grad.copy() for p in params]
        steps = tuple(np.atleast_1d(eps).tolist())
        return _compare(f, params, analytic, steps, max_coords, rng, frozen, order, floor, retry_above)


_STENCILS = {
    2: ((1.0, 0.5), (-1.0, -0.5)),
    4: ((1.0, 8 / 12), (-1.0, -8 / 12), (2.0, -1 / 12), (-2.0, 1 / 12)),
}


def _probe(f, flat, c, eps, stencil, frozen):
    """Stencil estimate at coordinate ``c``, or None when a relu flips between probes."""
    orig = flat[c]
    patterns, num = [], 0.0
    try:
        for step, weight in stencil:
            rec = []
            flat[c] = orig + step * eps
            frozen.rewind()
            num += weight * _eval(f, rec)
            patterns.append(rec)
    finally:
        flat[c] = orig
    if not all(_same_pattern(patterns[0], q) for q in patterns[1:]):
        return None
    return num / eps


def _compare(f, params, analytic, steps, max_coords, rng, frozen, order, floor, retry_above):
    stencil = _STENCILS[order]
    worst_err, worst_at, checked, skipped = 0.0, (), 0, 0
    for pi, p in enumerate(params):
        flat = p.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False))
        for c in coords:
            ana = analytic[pi].reshape(-1)[c]
            err = num = None
            for eps in steps:
                est = _probe(f, flat, c, eps, stencil, frozen)
                if est is None:
                    continue
                e = abs(est - ana) / max(abs(est), abs(ana), floor)
                if err is None or e < err:
                    err, num = e, est
                if retry_above is None or err <= retry_above:
                    break
            if err is None:
                skipped += 1
                continue
            checked += 1
            if err > worst_err:
                worst_err, worst_at = err, (p.name or pi, int(c), ana, num)
    return GradCheckResult(worst_err, checked, skipped, worst_at)
