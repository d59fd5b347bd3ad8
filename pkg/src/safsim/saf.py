"""Stochastic Adaptive Forwarding: probability tables and their periodic update.

Every node keeps, per content prefix, a probability column over its faces
plus a virtual dropping face (``DROP_FACE``).  Interests are forwarded by
inverse-transform sampling on that column (:func:`select_face`).  At the end
of every period the column is re-balanced from the satisfied / unsatisfied
counters collected by :class:`PeriodStats` (:func:`apply_period_update`):
unsatisfied traffic is moved away from unreliable faces, onto reliable faces
with spare headroom or onto the dropping face, part of the dropped share is
re-used to probe idle faces, and the reliability threshold is adapted.
"""
from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence

__all__ = [
    "DROP_FACE",
    "SafParams",
    "OutcomeRecord",
    "ThroughputMeasure",
    "HopCountMeasure",
    "UnknownFace",
    "DomainError",
    "PeriodStats",
    "Partition",
    "ForwardingTable",
    "UpdateResult",
    "select_face",
    "compute_alpha",
    "reliability_partition",
    "compute_sigma",
    "probe",
    "adjust_threshold",
    "apply_period_update",
    "convergence_bound",
    "initial_column",
]

#: Identifier of the virtual dropping face. Physical faces are neighbour ids (>= 0).
DROP_FACE = -1

_TOL = 1e-12


class UnknownFace(KeyError):
    pass


class DomainError(ValueError):
    """Logarithm argument out of domain in :func:`convergence_bound`."""


@dataclass
class SafParams:
    period_tau: float = 1.0
    t_min: float = 0.25
    t_max: float = 0.95
    lam: float = 0.25
    window_n: int = 5
    alpha_override: Optional[float] = None
    # Headroom (in Interests) below which a reliable face is offered no extra
    # traffic: a face cannot absorb a fraction of one Interest.
    min_headroom: float = 1.0
    initial_fwt: str = "uniform"

    def __post_init__(self):
        errors = self.violations()
        if errors:
            raise ValueError("; ".join(errors))

    def violations(self) -> list:
        errs = []
        if not self.period_tau > 0:
            errs.append("period_tau must be > 0")
        if not 0 < self.t_min < self.t_max < 1:
            errs.append("need 0 < t_min < t_max < 1")
        if not 0 < self.lam < 1:
            errs.append("lambda must lie in ]0,1[")
        if int(self.window_n) != self.window_n or self.window_n < 1:
            errs.append("window_n must be a positive integer")
        if self.alpha_override is not None and not 0 < self.alpha_override <= 1:
            errs.append("alpha_override must lie in ]0,1]")
        if self.min_headroom < 0:
            errs.append("min_headroom must be >= 0")
        if self.initial_fwt not in ("uniform", "cost"):
            errs.append("initial_fwt must be 'uniform' or 'cost'")
        return errs


# --------------------------------------------------------------------------
# Measures
# --------------------------------------------------------------------------

class OutcomeRecord(NamedTuple):
    face: int
    delay: Optional[float]
    hop_count: Optional[int]
    data_arrived: bool


class ThroughputMeasure:
    """Data before timeout is satisfied, a timeout is unsatisfied."""

    def classify(self, outcome: OutcomeRecord) -> bool:
        return bool(outcome.data_arrived)


class HopCountMeasure:
    """Satisfied only if the Data travelled fewer than ``max_hops`` links."""

    def __init__(self, max_hops: int):
        self.max_hops = max_hops

    def classify(self, outcome: OutcomeRecord) -> bool:
        return bool(outcome.data_arrived) and outcome.hop_count is not None \
            and outcome.hop_count < self.max_hops


# --------------------------------------------------------------------------
# Statistics
# --------------------------------------------------------------------------

class PeriodStats:
    """Per-face satisfied/unsatisfied counters for the running period.

    Counters are floats so that the deterministic single-node harness can feed
    expected (fractional) traffic volumes.
    """

    def __init__(self, faces: Sequence[int], window_n: int = 5):
        self.faces = sorted(int(f) for f in faces if f != DROP_FACE)
        self.satisfied = {f: 0.0 for f in self.faces}
        self.unsatisfied = {f: 0.0 for f in self.faces}
        self.satisfied[DROP_FACE] = 0.0
        self.unsatisfied[DROP_FACE] = 0.0
        self.history = {f: deque(maxlen=window_n) for f in self.faces}

    def _check(self, face):
        if face not in self.satisfied:
            raise UnknownFace(face)

    def record(self, face: int, satisfied: bool, amount: float = 1.0):
        self._check(face)
        if face == DROP_FACE or satisfied:
            self.satisfied[face] += amount
        else:
            self.unsatisfied[face] += amount

    def record_outcome(self, face: int, outcome: OutcomeRecord, measure=None):
        measure = measure or ThroughputMeasure()
        self.record(face, measure.classify(outcome))

    def record_drop(self, amount: float = 1.0):
        # the dropping face satisfies Interests by definition
        self.satisfied[DROP_FACE] += amount

    @property
    def total(self) -> float:
        return sum(self.satisfied.values()) + sum(self.unsatisfied.values())

    def st(self, face) -> float:
        total = self.total
        return self.satisfied[face] / total if total > 0 else 0.0

    def ut(self, face) -> float:
        total = self.total
        return self.unsatisfied[face] / total if total > 0 else 0.0

    def reliability(self, face) -> float:
        s, u = self.satisfied[face], self.unsatisfied[face]
        return s / (s + u) if s + u > 0 else 1.0

    def delta(self) -> float:
        """Total unsatisfied traffic fraction."""
        total = self.total
        if total <= 0:
            return 0.0
        return sum(self.unsatisfied.values()) / total

    def delta_unreliable(self, unreliable) -> float:
        """Unsatisfied traffic fraction carried by the ``unreliable`` faces."""
        if self.total <= 0:
            return 0.0
        return sum(self.ut(f) for f in unreliable)

    def push_history(self):
        for f in self.faces:
            self.history[f].append(self.satisfied[f])

    def reset(self):
        for f in self.satisfied:
            self.satisfied[f] = 0.0
            self.unsatisfied[f] = 0.0


# --------------------------------------------------------------------------
# Forwarding table
# --------------------------------------------------------------------------

def initial_column(faces_costs, mode: str = "uniform") -> dict:
    """Starting column over FIB next hops with nothing on the dropping face.

    ``faces_costs`` is an iterable of ``(face, cost)``. ``mode='cost'`` weights
    faces by reciprocal routing cost instead of uniformly.
    """
    faces_costs = sorted((int(f), c) for f, c in faces_costs)
    if mode == "uniform":
        weights = {f: 1.0 for f, _ in faces_costs}
    elif mode == "cost":
        weights = {f: 1.0 / c for f, c in faces_costs}
    else:
        raise ValueError(f"unknown initial FWT mode {mode!r}")
    total = sum(weights.values())
    column = {DROP_FACE: 0.0}
    column.update({f: w / total for f, w in weights.items()})
    return column


class ForwardingTable:
    """Per-prefix probability columns with their reliability thresholds."""

    def __init__(self, params: SafParams = None):
        self.params = params or SafParams()
        self.columns: dict = {}
        self.thresholds: dict = {}

    def __contains__(self, prefix):
        return prefix in self.columns

    def __iter__(self):
        return iter(self.columns)

    def add(self, prefix, faces_costs, threshold: float = None):
        self.columns[prefix] = initial_column(faces_costs, self.params.initial_fwt)
        self.thresholds[prefix] = self.params.t_min if threshold is None else threshold
        return self.columns[prefix]

    def column(self, prefix) -> dict:
        return self.columns[prefix]

    def probability(self, face, prefix) -> float:
        return self.columns[prefix].get(face, 0.0)


# --------------------------------------------------------------------------
# Face selection
# --------------------------------------------------------------------------

def select_face(column: Mapping[int, float], in_face=None, rng: random.Random = None,
                r: float = None) -> int:
    """Pick an outgoing face by inverse transform sampling.

    The draw is uniform on ``[0, 1 - p(in_face))`` so the incoming face is
    never chosen. Physical faces are walked in ascending identifier order;
    if the walk exhausts, the Interest goes to ``DROP_FACE``.
    """
    p_in = column.get(in_face, 0.0) if in_face is not None else 0.0
    if r is None:
        r = (rng or random).random() * (1.0 - p_in)
    limit = 0.0
    for face in sorted(column):
        if face == DROP_FACE or face == in_face:
            continue
        p = column[face]
        if p <= 0.0:
            continue
        limit += p
        if r <= limit:
            return face
    return DROP_FACE


# --------------------------------------------------------------------------
# Update building blocks
# --------------------------------------------------------------------------

def compute_alpha(history: Sequence[float], window_n: int = None,
                  override: float = None) -> float:
    """Traffic stability indicator ``1 / (1 + std)`` over the last ``window_n``
    satisfied counts (population variance)."""
    if override is not None:
        return override
    xs = list(history)
    if window_n is not None:
        xs = xs[-window_n:]
    if not xs:
        raise ValueError("history must not be empty")
    mean = sum(xs) / len(xs)
    var = sum((x - mean) ** 2 for x in xs) / len(xs)
    return 1.0 / (1.0 + math.sqrt(var))


class Partition(NamedTuple):
    reliable: list
    unreliable: list
    shifting: list  # reliable faces that carried traffic this period
    probing: list   # reliable only because idle


def reliability_partition(stats: PeriodStats, t: float) -> Partition:
    reliable, unreliable, shifting, probing = [], [], [], []
    for f in stats.faces:
        # shifting fills a face up to reliability t exactly; absorb the rounding
        if stats.reliability(f) >= t - _TOL:
            reliable.append(f)
            if stats.st(f) + stats.ut(f) > 0:
                shifting.append(f)
            else:
                probing.append(f)
        else:
            unreliable.append(f)
    return Partition(reliable, unreliable, shifting, probing)


def compute_sigma(satisfied: float, unsatisfied: float, t: float) -> float:
    """Extra Interests a face may take while keeping its reliability >= ``t``."""
    return max(0.0, satisfied / t - satisfied - unsatisfied)


def probe(column: Mapping[int, float], stats: PeriodStats, probing_faces) -> tuple:
    """Move a share of the dropping face's mass onto idle reliable faces.

    Returns ``(new_column, probe_amount, rho)``. Without probing faces the
    column is returned unchanged.
    """
    col = dict(column)
    rho = 1.0 - sum(stats.st(f) for f in stats.faces)
    p_drop = col.get(DROP_FACE, 0.0)
    if not probing_faces or p_drop <= 0:
        return col, 0.0, rho
    amount = p_drop * rho
    share = amount / len(probing_faces)
    for f in probing_faces:
        col[f] = col.get(f, 0.0) + share
    col[DROP_FACE] = p_drop - amount
    return col, amount, rho


def adjust_threshold(t: float, direction: str, params: SafParams) -> float:
    lam = params.lam
    if direction == "increase":
        t_new = (1 - lam) * t + lam * params.t_max
    elif direction == "decrease":
        t_new = (1 - lam) * t - lam * params.t_min
    else:
        raise ValueError(f"direction must be 'increase' or 'decrease', not {direction!r}")
    return min(params.t_max, max(params.t_min, t_new))


@dataclass
class UpdateResult:
    column: dict
    threshold: float
    total: float = 0.0           # I
    delta: float = 0.0           # total unsatisfied fraction
    delta_unreliable: float = 0.0
    relaxed: float = 0.0         # Delta, relaxed unsatisfied fraction
    gamma: float = 0.0
    gamma_shifted: float = 0.0   # Gamma'
    sigmas: dict = field(default_factory=dict)
    alphas: dict = field(default_factory=dict)
    rho: float = 0.0
    probe: float = 0.0
    partition: Partition = None
    removed: float = 0.0         # mass taken from unreliable faces and old drop share
    added: float = 0.0           # mass put on shifting/probing faces and new drop share
    threshold_move: str = "none"
    raw_column: dict = None      # column after shifting, before probing/normalizing


def _normalize(col: dict) -> dict:
    for f, p in col.items():
        if p < 0:
            col[f] = 0.0
    residual = 1.0 - sum(col.values())
    # float residue goes to the dropping face first
    p_drop = col.get(DROP_FACE, 0.0) + residual
    col[DROP_FACE] = p_drop if p_drop > _TOL else 0.0
    total = sum(col.values())
    if total <= 0:
        raise ValueError("column lost all probability mass")
    return {f: p / total for f, p in col.items()}


def apply_period_update(column: Mapping[int, float], stats: PeriodStats, t: float,
                        params: SafParams = None) -> UpdateResult:
    """Close the running period of one prefix and return the next column.

    ``stats`` is consumed: its satisfied counts are pushed into the stability
    window and its counters reset.
    """
    params = params or SafParams()
    col = {f: float(p) for f, p in column.items()}
    col.setdefault(DROP_FACE, 0.0)
    for f in stats.faces:
        col.setdefault(f, 0.0)

    stats.push_history()
    total = stats.total
    part = reliability_partition(stats, t)
    alphas = {
        f: compute_alpha(stats.history[f], params.window_n, params.alpha_override)
        for f in stats.faces
    }
    res = UpdateResult(column=col, threshold=t, total=total, partition=part, alphas=alphas)
    res.delta = stats.delta()
    res.delta_unreliable = stats.delta_unreliable(part.unreliable)

    removals = {}
    if total > 0:
        for f in part.unreliable:
            # sampled traffic can exceed p*I; never drive a probability negative
            removals[f] = min(col[f], stats.ut(f) * alphas[f])
    res.relaxed = sum(stats.ut(f) * alphas[f] for f in part.unreliable) if total > 0 else 0.0
    delta_eff = sum(removals.values())
    p_drop = col[DROP_FACE]
    gamma = delta_eff + p_drop
    res.gamma = gamma

    if gamma > _TOL:
        sigmas = {}
        for f in part.shifting:
            s = compute_sigma(stats.satisfied[f], stats.unsatisfied[f], t)
            sigmas[f] = s if s >= params.min_headroom else 0.0
        sigma_sum = sum(sigmas.values())
        gamma_shifted = min(sigma_sum / total, gamma) if total > 0 and sigma_sum > 0 else 0.0
        for f, amount in removals.items():
            col[f] -= amount
        if gamma_shifted > 0:
            for f, s in sigmas.items():
                col[f] += gamma_shifted * s / sigma_sum
        col[DROP_FACE] = gamma - gamma_shifted
        res.sigmas = sigmas
        res.gamma_shifted = gamma_shifted
        res.removed = gamma
        res.added = gamma_shifted + col[DROP_FACE]
        res.raw_column = dict(col)

        if col[DROP_FACE] > _TOL:
            col, amount, rho = probe(col, stats, part.probing)
            res.probe, res.rho = amount, rho
            if col[DROP_FACE] > 1 - t:
                t = adjust_threshold(t, "decrease", params)
                res.threshold_move = "decrease"
    elif total > 0:
        t = adjust_threshold(t, "increase", params)
        res.threshold_move = "increase"

    res.column = _normalize(col)
    res.threshold = t
    stats.reset()
    return res


# --------------------------------------------------------------------------
# Convergence bound
# --------------------------------------------------------------------------

def convergence_bound(p0: Mapping[int, float], total: float, capacities: Mapping[int, float],
                      t: float, alpha: float) -> int:
    """Upper bound on the periods needed until no face is unreliable.

    ``p0`` and ``capacities`` map each unreliable face to its initial
    probability and to the number of Interests it can satisfy per period;
    ``total`` is the constant number of Interests per period.
    """
    if not 0 < alpha <= 1:
        raise DomainError("alpha must lie in ]0,1]")
    bound = 0
    for f, d in capacities.items():
        target = d / t - d
        start = p0[f] * total - d
        if target <= 0 or start <= 0:
            raise DomainError(f"non-positive logarithm argument for face {f}")
        if alpha == 1:
            n = 1
        else:
            n = math.ceil((math.log(target) - math.log(start)) / math.log(1 - alpha))
        bound = max(bound, n)
    return bound
