"""Choosing copies-per-query and public-sample counts.

For a batch of ``R`` queries the planner picks ``(B, T)`` minimising the
amortized cost ``(RB + T) / R`` subject to ``T >= max(beta_pub, B)`` and the
cheating bound ``R / C(RB+T, B) <= 2**-lambda``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Iterable, List, Optional

import numpy as np

from .combinatorics import Prob, cheat_bound
from .rng import as_rng

logger = logging.getLogger(__name__)

# T beyond this is treated as "no feasible plan"
MAX_T = 1 << 62


class InfeasiblePlanError(ValueError):
    def __init__(self, message: str, best_bound: Optional[Prob] = None):
        super().__init__(message)
        self.best_bound = best_bound


@dataclass(frozen=True)
class CostReport:
    amortized_cost: Fraction
    total_samples: int

    def as_dict(self) -> dict:
        return {
            "amortized_cost": float(self.amortized_cost),
            "amortized_cost_exact": str(self.amortized_cost),
            "total_samples": self.total_samples,
        }


def amortized_cost(R: int, B: int, T: int) -> CostReport:
    """Protected inferences paid per useful query, ``(RB + T) / R``."""
    if R < 1:
        raise ValueError("R must be >= 1")
    total = R * B + T
    return CostReport(Fraction(total, R), total)


@dataclass(frozen=True)
class SecurityPlan:
    R: int
    B: int
    T: int
    lam: int
    beta_pub: int = 0

    @property
    def N(self) -> int:
        return self.R * self.B + self.T

    @property
    def cost(self) -> CostReport:
        return amortized_cost(self.R, self.B, self.T)

    def bound(self, exact: bool = False) -> Prob:
        return cheat_bound(self.R, self.B, self.T, exact=exact)

    def violations(self) -> List[str]:
        out = []
        if self.T < max(self.beta_pub, self.B):
            out.append(f"T={self.T} below max(beta_pub={self.beta_pub}, B={self.B})")
        if not 2 <= self.B <= max(self.lam, 2):
            out.append(f"B={self.B} outside [2, lambda={self.lam}]")
        if self.T >= self.B and not self.bound().le_pow2(-self.lam):
            out.append(f"cheating bound exceeds 2^-{self.lam}")
        return out

    @property
    def is_secure(self) -> bool:
        return not self.violations()

    def as_dict(self, exact: bool = False) -> dict:
        bound = self.bound(exact=exact)
        d = {
            "R": self.R,
            "B": self.B,
            "T": self.T,
            "lambda": self.lam,
            "beta_pub": self.beta_pub,
            "bound": float(bound),
            "bound_log2": bound.log2_value,
            **self.cost.as_dict(),
        }
        if exact:
            d["bound_exact"] = str(bound.fraction())
        return d


def _feasible(R: int, B: int, T: int, lam: int) -> bool:
    return cheat_bound(R, B, T).le_pow2(-lam)


def smallest_T(R: int, B: int, lam: int, beta_pub: int = 0) -> int:
    """Least ``T >= max(beta_pub, B)`` meeting the bound, by galloping then
    binary search (the bound is strictly decreasing in ``T``)."""
    lo = max(beta_pub, B)
    if _feasible(R, B, lo, lam):
        return lo
    step = max(lo, 1)
    hi = lo + step
    while not _feasible(R, B, hi, lam):
        lo = hi
        step *= 2
        hi = lo + step
        if hi > MAX_T:
            raise InfeasiblePlanError(
                f"no T <= 2^62 satisfies the bound for R={R}, B={B}",
                cheat_bound(R, B, lo),
            )
    # invariant: lo infeasible, hi feasible
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _feasible(R, B, mid, lam):
            hi = mid
        else:
            lo = mid
    return hi


def search_params(R: int, lam: int, beta_pub: int = 0, exact: bool = False) -> SecurityPlan:
    """Cheapest secure ``(B, T)`` for ``R`` queries; ties go to smaller ``B``."""
    if R < 1 or lam < 1 or beta_pub < 0:
        raise ValueError("need R >= 1, lambda >= 1, beta_pub >= 0")
    best: Optional[SecurityPlan] = None
    best_key = None
    for B in range(2, max(lam, 2) + 1):
        T = smallest_T(R, B, lam, beta_pub)
        key = (Fraction(R * B + T, R), B)
        if best_key is None or key < best_key:
            best_key = key
            best = SecurityPlan(R, B, T, lam, beta_pub)
    if best is None:
        raise InfeasiblePlanError(f"no feasible plan for R={R}, lambda={lam}")
    if exact and not best.bound(exact=True).le_pow2(-lam):
        # unreachable unless the log-space error bound is wrong
        raise AssertionError("exact re-check rejected the chosen plan")
    logger.debug("plan for R=%d: B=%d T=%d", R, best.B, best.T)
    return best


def min_R_for_B(
    B: int,
    lam: int,
    beta_pub: int = 0,
    restrict_powers_of_two: bool = True,
    max_R: int = 1 << 40,
) -> int:
    """Smallest ``R`` for which the search picks this ``B`` at the floor
    ``T = max(beta_pub, B)``."""
    if not 2 <= B <= max(lam, 2):
        raise ValueError(f"B must lie in [2, lambda], got {B}")
    floor_T = max(beta_pub, B)

    def picks(R):
        plan = search_params(R, lam, beta_pub)
        return plan.B == B and plan.T == floor_T

    if restrict_powers_of_two:
        R = 1
        while R <= max_R:
            if picks(R):
                return R
            R *= 2
        raise InfeasiblePlanError(f"no power-of-two R <= {max_R} selects B={B}")

    # feasibility of B at the floor is monotone in R; only the optimality
    # part needs a linear scan from there
    lo, hi = 0, 1
    while not _feasible(hi, B, floor_T, lam):
        lo, hi = hi, hi * 2
        if hi > max_R:
            raise InfeasiblePlanError(f"B={B} infeasible for all R <= {max_R}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _feasible(mid, B, floor_T, lam):
            hi = mid
        else:
            lo = mid
    R = hi
    while R <= max_R:
        if picks(R):
            return R
        R += 1
    raise InfeasiblePlanError(f"no R <= {max_R} selects B={B}")


def parameter_table(
    lam: int, beta_pub: int, b_values: Iterable[int], max_R: int = 1 << 40
) -> List[dict]:
    """One row per ``B``: least power-of-two ``R`` selecting it at the floor.

    ``R`` is ``None`` when no power of two up to ``max_R`` does.
    """
    rows = []
    for B in b_values:
        try:
            R = min_R_for_B(B, lam, beta_pub, max_R=max_R)
        except InfeasiblePlanError:
            R = None
        rows.append({"B": B, "R": R, "T": max(beta_pub, B)})
    return rows


@dataclass(frozen=True)
class VarianceRow:
    T: int
    variance: Fraction
    group_accuracies: tuple
    standard_accuracy: Fraction

    def as_dict(self) -> dict:
        return {
            "T": self.T,
            "variance": float(self.variance),
            "variance_exact": str(self.variance),
            "standard_accuracy": float(self.standard_accuracy),
            "group_accuracies": [float(a) for a in self.group_accuracies],
        }


def estimate_T_variance(model, X, y, T_candidates, groups: int, seed=0) -> List[VarianceRow]:
    """Spread of public-sample accuracy around the full-pool accuracy.

    For each candidate ``T`` the pool is cut into ``groups`` disjoint subsets
    of ``T`` samples; the returned variance is the mean squared deviation of
    the subset accuracies from the accuracy on the whole pool.
    """
    y = np.asarray(y)
    T_candidates = list(T_candidates)
    if groups < 1 or not T_candidates or min(T_candidates) < 1:
        raise ValueError("need groups >= 1 and positive T candidates")
    need = max(T_candidates) * groups
    if len(y) < need:
        raise ValueError(f"pool has {len(y)} samples, need at least {need}")

    correct = np.asarray(model.predict(X)) == y
    standard = Fraction(int(correct.sum()), len(y))
    order = as_rng(seed).child("variance").permutation(len(y))
    rows = []
    for T in T_candidates:
        accs = []
        for g in range(groups):
            idx = order[g * T : (g + 1) * T]
            accs.append(Fraction(int(correct[idx].sum()), T))
        var = sum((a - standard) ** 2 for a in accs) / groups
        rows.append(VarianceRow(T, var, tuple(accs), standard))
    return rows


def variance_table(rows: List[VarianceRow]) -> Dict[int, float]:
    return {r.T: float(r.variance) for r in rows}
