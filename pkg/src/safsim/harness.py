"""Single-node SAF harness with scripted per-face capacities.

One router forwards a constant number of Interests per period for a single
prefix. Each physical face can satisfy at most ``capacity`` Interests per
period; the rest time out. In ``split`` mode traffic is divided exactly in
proportion to the column, which makes runs bit-reproducible and lets the
worked examples be replayed; ``sample`` mode draws every Interest with
:func:`~safsim.saf.select_face`.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from .saf import (
    _TOL,
    DROP_FACE,
    PeriodStats,
    SafParams,
    apply_period_update,
    select_face,
)

__all__ = ["SingleNodeHarness", "GoldenCheck", "example_one", "example_two", "golden_checks"]

# 30 Interests/s of 4 kB Data is roughly 1 Mbps; a one-second period at the
# examples' 3 Mbps demand therefore carries 90 Interests.
INTERESTS_PER_MBPS = 30


class SingleNodeHarness:
    def __init__(self, column, capacities, interests_per_period, params=None,
                 threshold=None, t_schedule=None, mode="split", seed=0):
        self.params = params or SafParams()
        self.column = {int(f): float(p) for f, p in column.items()}
        self.column.setdefault(DROP_FACE, 0.0)
        self.faces = sorted(f for f in self.column if f != DROP_FACE)
        self.capacities = capacities
        self.total = interests_per_period
        self.threshold = self.params.t_min if threshold is None else threshold
        self.t_schedule = list(t_schedule or [])
        if mode not in ("split", "sample"):
            raise ValueError("mode must be 'split' or 'sample'")
        self.mode = mode
        self.rng = random.Random(seed)
        self.stats = PeriodStats(self.faces, self.params.window_n)
        self.period = 0
        self.history = []

    def _capacity(self):
        caps = self.capacities(self.period) if callable(self.capacities) else self.capacities
        return {f: caps.get(f, 0.0) for f in self.faces}

    def traffic(self):
        """Interests sent per face (including the dropping face) this period."""
        if self.mode == "split":
            return {f: p * self.total for f, p in self.column.items()}
        counts = dict.fromkeys(self.column, 0)
        for _ in range(int(self.total)):
            counts[select_face(self.column, None, self.rng)] += 1
        return counts

    def step(self):
        if self.period < len(self.t_schedule):
            self.threshold = self.t_schedule[self.period]
        caps = self._capacity()
        sent = self.traffic()
        for f in self.faces:
            ok = min(sent[f], caps[f])
            self.stats.record(f, True, ok)
            self.stats.record(f, False, sent[f] - ok)
        self.stats.record_drop(sent[DROP_FACE])
        result = apply_period_update(self.column, self.stats, self.threshold, self.params)
        self.column = result.column
        self.threshold = result.threshold
        self.period += 1
        self.history.append(result)
        return result

    def run(self, periods):
        return [self.step() for _ in range(periods)]

    def unreliable_faces(self, column=None, threshold=None):
        """Faces that would be unreliable if ``column`` were used this period."""
        column = column or self.column
        threshold = self.threshold if threshold is None else threshold
        caps = self._capacity()
        out = []
        for f in self.faces:
            sent = column[f] * self.total
            if sent > 0 and min(sent, caps[f]) / sent < threshold - _TOL:
                out.append(f)
        return out


# --------------------------------------------------------------------------
# Worked examples on the three-face router
# --------------------------------------------------------------------------

def _params_alpha_one():
    return SafParams(alpha_override=1.0)


def example_one(periods: int = 20) -> SingleNodeHarness:
    """Face 0 leads nowhere, faces 1 and 2 reach the provider at 1 and 2 Mbps.

    Starting from a uniform column with t=0.5, the threshold is raised to
    0.75 after the second period.
    """
    h = SingleNodeHarness(
        column={DROP_FACE: 0.0, 0: 1 / 3, 1: 1 / 3, 2: 1 / 3},
        capacities={0: 0, 1: 1 * INTERESTS_PER_MBPS, 2: 2 * INTERESTS_PER_MBPS},
        interests_per_period=3 * INTERESTS_PER_MBPS,
        params=_params_alpha_one(),
        t_schedule=[0.5, 0.5, 0.75],
    )
    h.run(periods)
    return h


def example_two() -> SingleNodeHarness:
    """Face 2's path fails; face 0 leads to a replica and is found by probing."""
    h = SingleNodeHarness(
        column={DROP_FACE: 0.0, 0: 0.0, 1: 1 / 3, 2: 2 / 3},
        capacities={0: 3 * INTERESTS_PER_MBPS, 1: 1 * INTERESTS_PER_MBPS, 2: 0},
        interests_per_period=3 * INTERESTS_PER_MBPS,
        params=_params_alpha_one(),
        t_schedule=[0.99, 0.75, 0.75, 0.85],
    )
    h.run(4)
    return h


F = Fraction
EXAMPLE_TWO_EXPECTED = [
    {DROP_FACE: F(2, 9), 0: F(4, 9), 1: F(1, 3), 2: F(0)},
    {DROP_FACE: F(0), 0: F(4, 7), 1: F(3, 7), 2: F(0)},
    {DROP_FACE: F(0), 0: F(4, 7), 1: F(3, 7), 2: F(0)},
    {DROP_FACE: F(0), 0: F(2, 3), 1: F(1, 3), 2: F(0)},
]
EXAMPLE_TWO_SIGMA_SHARES = {0: 0.148, 1: 0.111}  # sigma / I in the second period
EXAMPLE_ONE_LIMIT = {DROP_FACE: F(0), 0: F(0), 1: F(1, 3), 2: F(2, 3)}


@dataclass
class GoldenCheck:
    name: str
    passed: bool
    detail: str = ""
    values: dict = field(default_factory=dict)


def _max_err(col, expected):
    return max(abs(col.get(f, 0.0) - float(v)) for f, v in expected.items())


def golden_checks(tol: float = 1e-6, sigma_tol: float = 1e-3, limit_tol: float = 1e-3):
    checks = []
    h2 = example_two()
    for i, (res, exp) in enumerate(zip(h2.history, EXAMPLE_TWO_EXPECTED), start=1):
        err = _max_err(res.column, exp)
        checks.append(GoldenCheck(
            f"example 2, iteration {i}", err <= tol, f"max |error| = {err:.2e}",
            dict(res.column),
        ))
    res2 = h2.history[1]
    shares = {f: s / res2.total for f, s in res2.sigmas.items()}
    err = max(abs(shares[f] - v) for f, v in EXAMPLE_TWO_SIGMA_SHARES.items())
    checks.append(GoldenCheck(
        "example 2, sigma/I in iteration 2", err <= sigma_tol,
        ", ".join(f"face {f}: {shares[f]:.4f}" for f in sorted(shares)), shares,
    ))

    h1 = example_one(20)
    first = h1.history[0].column
    err = _max_err(first, {DROP_FACE: 0, 0: 0, 1: F(1, 2), 2: F(1, 2)})
    checks.append(GoldenCheck("example 1, iteration 1", err <= tol, f"max |error| = {err:.2e}", first))
    reached = None
    for i, res in enumerate(h1.history, start=1):
        if _max_err(res.column, EXAMPLE_ONE_LIMIT) <= limit_tol:
            reached = i
            break
    checks.append(GoldenCheck(
        "example 1, limit point (1/3, 2/3)", reached is not None,
        f"reached after {reached} periods" if reached else "not reached in 20 periods",
        dict(h1.column),
    ))
    return checks
