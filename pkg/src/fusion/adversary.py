"""Malicious-server strategies and the mix-and-check cheating game.

A strategy only ever sees the batch size and copy count (plus, for
:class:`TargetedCorruption` with ``selection="oracle-grouped"``, a
provenance map handed over explicitly for negative testing). Incorrect
results are modelled as ``label + 1 mod classes``.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import FrozenSet, List, Optional, Tuple

import numpy as np

from .combinatorics import GameParams, prob_cheat_success
from .datamix import ProvenanceMap, prepare_mixed, unmix
from .rng import ChaChaRNG, as_rng
from .verify import AbortReason, VerifyConfig, check_consistency, verdict

ENUMERATION_BUDGET = 10**7


class Selection(str, enum.Enum):
    RANDOM = "random"
    ORACLE_GROUPED = "oracle-grouped"


@dataclass(frozen=True)
class Honest:
    def corrupt_positions(self, n, copies, rng, provenance=None) -> FrozenSet[int]:
        return frozenset()


@dataclass(frozen=True)
class LowQuality:
    """Serve a different (cheaper, worse) model everywhere."""

    model: object

    def corrupt_positions(self, n, copies, rng, provenance=None):
        raise TypeError("a low-quality model has no position-level game; run it through the protocol")


@dataclass(frozen=True)
class TargetedCorruption:
    """Return wrong results on exactly ``i * copies`` positions.

    ``oracle-grouped`` cheats with knowledge of the secret permutation and
    exists only to show that hiding it is what the guarantee rests on.
    """

    i: int
    selection: Selection = Selection.RANDOM

    def corrupt_positions(self, n, copies, rng, provenance: Optional[ProvenanceMap] = None):
        k = self.i * copies
        if k > n:
            raise ValueError(f"cannot corrupt {k} of {n} positions")
        if Selection(self.selection) is Selection.ORACLE_GROUPED:
            if provenance is None:
                raise ValueError("oracle-grouped selection needs the provenance map")
            groups = rng.sample(provenance.R, self.i)
            return frozenset(p for q in groups for p in provenance.group_positions(q))
        return frozenset(rng.sample(n, k))


@dataclass(frozen=True)
class IndependentNoise:
    """Flip each position's result independently with probability ``p``."""

    p: float

    def __post_init__(self):
        if not 0 <= self.p <= 1:
            raise ValueError("flip probability must lie in [0, 1]")

    def corrupt_positions(self, n, copies, rng, provenance=None):
        return frozenset(j for j in range(n) if rng.random() < self.p)


def parse_strategy(spec: str, load_model=None):
    """``honest``, ``lowq:PATH``, ``corrupt:I`` or ``noise:P``."""
    kind, _, arg = spec.partition(":")
    if kind == "honest" and not arg:
        return Honest()
    if kind == "lowq" and arg:
        if load_model is None:
            from .model import load_model
        return LowQuality(load_model(arg))
    if kind == "corrupt" and arg:
        return TargetedCorruption(int(arg))
    if kind == "noise" and arg:
        return IndependentNoise(float(arg))
    raise ValueError(f"unrecognised adversary {spec!r}; use honest, lowq:PATH, corrupt:I or noise:P")


class AdversarialServer:
    """Binds a strategy to the honest model for one protocol run.

    :meth:`assign` is the hook the backends call with the server's view of
    the batch; it returns the network to evaluate at each position.
    """

    def __init__(self, strategy, model, copies: int, rng=0, provenance: Optional[ProvenanceMap] = None):
        self.strategy = strategy
        self.model = model
        self.copies = copies
        self.rng = as_rng(rng)
        self.provenance = provenance
        self.corrupted: FrozenSet[int] = frozenset()

    def assign(self, samples):
        n = len(samples)
        if isinstance(self.strategy, LowQuality):
            self.corrupted = frozenset(range(n))
            return [self.strategy.model] * n
        self.corrupted = self.strategy.corrupt_positions(n, self.copies, self.rng, self.provenance)
        if not self.corrupted:
            return [self.model] * n
        wrong = self.model.shifted_labels()
        return [wrong if p in self.corrupted else self.model for p in range(n)]


class DetectedBy(str, enum.Enum):
    ACCURACY = "AccuracyCheck"
    CONSISTENCY = "ConsistencyCheck"


@dataclass(frozen=True)
class GameOutcome:
    server_wins: bool
    detected_by: Optional[DetectedBy]
    corrupted_positions: FrozenSet[int]


def _plan_params(plan) -> Tuple[int, int, int]:
    return plan.R, plan.B, plan.T


def run_game(strategy, plan, rng_seed=0) -> GameOutcome:
    """One round of the cheating game on a fresh mixed batch.

    Every honest result is label 0, every corrupted one label 1, and all
    public samples expect 0. The publics must be all correct (a corrupted
    public is always caught), so the verifier runs with ``delta = 1``.
    """
    R, B, T = _plan_params(plan)
    if isinstance(strategy, TargetedCorruption) and not 1 <= strategy.i <= R:
        raise ValueError(f"i={strategy.i} outside [1, R={R}]")
    root = as_rng(rng_seed)
    mixed = prepare_mixed(np.zeros((R, 1), dtype=np.int64), np.zeros((T, 1), dtype=np.int64), [0] * T, B, root.child("client"))
    prov = mixed.provenance
    hint = prov if getattr(strategy, "selection", None) == Selection.ORACLE_GROUPED else None
    bad = strategy.corrupt_positions(prov.N, B, root.child("server"), hint)

    results = [1 if p in bad else 0 for p in range(prov.N)]
    groups, publics = unmix(results, prov)
    if T:
        report = verdict(groups, publics, VerifyConfig(delta=1.0))
        reason = report.abort_reason
    else:
        ok, _ = check_consistency(groups)
        reason = None if ok else AbortReason.INCONSISTENT_COPIES
    detected = {
        None: None,
        AbortReason.ACCURACY_BELOW_THRESHOLD: DetectedBy.ACCURACY,
        AbortReason.INCONSISTENT_COPIES: DetectedBy.CONSISTENCY,
    }[reason]
    fooled = any(all(v == 1 for v in g) for g in groups)
    return GameOutcome(detected is None and fooled, detected, frozenset(bad))


def estimate_win_prob(strategy, plan, trials: int, seed=0) -> Tuple[float, float]:
    """Monte-Carlo win rate over independent games, with its binomial
    standard error."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    root = ChaChaRNG(seed).child("estimate")
    wins = sum(run_game(strategy, plan, root.child(t)).server_wins for t in range(trials))
    p = wins / trials
    return p, math.sqrt(p * (1 - p) / trials)


def estimate_detection(strategy, plan, trials: int, seed=0) -> Tuple[float, float, float]:
    """``(win rate, detection rate, std error of detection)``."""
    root = ChaChaRNG(seed).child("detect")
    wins = detected = 0
    for t in range(trials):
        out = run_game(strategy, plan, root.child(t))
        wins += out.server_wins
        detected += out.detected_by is not None
    d = detected / trials
    return wins / trials, d, math.sqrt(d * (1 - d) / trials)


def enumerate_win_prob(plan, i: int, budget: int = ENUMERATION_BUDGET) -> Fraction:
    """Exact winning probability of a uniformly random ``iB``-subset, by
    listing every subset. Groups occupy positions ``[qB, qB+B)``, publics the
    tail; a uniform subset makes the arrangement irrelevant."""
    R, B, T = _plan_params(plan)
    if not 1 <= i <= R:
        raise ValueError(f"i={i} outside [1, R={R}]")
    N, k = R * B + T, i * B
    total = math.comb(N, k)
    if total > budget:
        raise ValueError(f"C({N},{k}) = {total} subsets exceeds the budget; use estimate_win_prob")
    wins = 0
    for subset in itertools.combinations(range(N), k):
        if subset[-1] >= R * B:
            continue  # touches a public sample
        counts = {}
        for pos in subset:
            counts[pos // B] = counts.get(pos // B, 0) + 1
        if all(c == B for c in counts.values()):
            wins += 1
    return Fraction(wins, total)


def closed_form(plan, i: int) -> Fraction:
    R, B, T = _plan_params(plan)
    return prob_cheat_success(GameParams(R, B, T, i), exact=True).fraction()
