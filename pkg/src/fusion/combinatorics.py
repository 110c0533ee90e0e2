"""Cheating-probability formulas for the mix-and-check game.

Probabilities are carried as base-2 logarithms so that values around
2**-40 and below never underflow. Each :class:`Prob` is either exact (backed
by a :class:`fractions.Fraction`) or a log-gamma approximation with an
explicit absolute error bound on ``log2_value``. Threshold comparisons whose
margin falls inside that bound are re-evaluated with exact integers.
"""
from __future__ import annotations

import enum
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, List, Optional

__all__ = [
    "Exactness",
    "Prob",
    "GameParams",
    "Counterexample",
    "binom_log2",
    "prob_publics_clean",
    "prob_groups_aligned",
    "prob_cheat_success",
    "cheat_bound",
    "verify_cheat_bound_grid",
]

_EPS = sys.float_info.epsilon
_LN2 = math.log(2.0)
# binomials with n at or below this are computed exactly up front
EXACT_CUTOFF = 64


class Exactness(enum.Enum):
    EXACT = "exact"
    LOG_APPROX = "log-approx"


def _log2_fraction(value: Fraction) -> float:
    if value == 0:
        return -math.inf
    # math.log2 accepts arbitrarily large ints without overflow
    return math.log2(value.numerator) - math.log2(value.denominator)


@dataclass(frozen=True)
class Prob:
    """A probability (or binomial magnitude) stored as ``log2``.

    ``err_bound`` is zero for exact values. ``resolver`` recomputes the value
    exactly on demand and is what :meth:`exact` escalates to.
    """

    log2_value: float
    err_bound: float = 0.0
    exact_value: Optional[Fraction] = None
    resolver: Optional[Callable[[], Fraction]] = field(
        default=None, repr=False, compare=False
    )

    @classmethod
    def from_fraction(cls, value) -> "Prob":
        value = Fraction(value)
        if value < 0:
            raise ValueError("probabilities are non-negative")
        return cls(log2_value=_log2_fraction(value), exact_value=value)

    @property
    def exactness(self) -> Exactness:
        return Exactness.EXACT if self.exact_value is not None else Exactness.LOG_APPROX

    def exact(self) -> "Prob":
        if self.exact_value is not None:
            return self
        if self.resolver is None:
            raise ValueError("no exact resolver attached to this value")
        return Prob.from_fraction(self.resolver())

    def fraction(self) -> Fraction:
        return self.exact().exact_value

    def __float__(self) -> float:
        if self.exact_value is not None:
            return float(self.exact_value)
        return 2.0**self.log2_value

    def le_pow2(self, exponent: int) -> bool:
        """Decide ``value <= 2**exponent``, falling back to exact arithmetic
        when the log-space margin is inside the error bound."""
        if self.exact_value is not None:
            return self.exact_value <= Fraction(2) ** exponent
        margin = exponent - self.log2_value
        if margin > self.err_bound:
            return True
        if margin < -self.err_bound:
            return False
        return self.exact().le_pow2(exponent)


@dataclass(frozen=True)
class GameParams:
    """Queries ``R``, copies ``B``, public samples ``T`` and corrupted
    queries ``i``."""

    R: int
    B: int
    T: int
    i: int = 1

    def __post_init__(self):
        if self.R < 1 or self.B < 1:
            raise ValueError(f"need R >= 1 and B >= 1, got R={self.R}, B={self.B}")
        if self.T < 0:
            raise ValueError(f"T must be >= 0, got {self.T}")
        if not 0 <= self.i <= self.R:
            raise ValueError(f"need 0 <= i <= R, got i={self.i}, R={self.R}")

    @property
    def N(self) -> int:
        return self.R * self.B + self.T


def _lgamma_err(*args: int) -> float:
    # glibc lgamma is accurate to a few ulp; 16 ulp per term plus the
    # summation rounding is a deliberately loose envelope.
    total = sum(abs(math.lgamma(a + 1)) for a in args) + 1.0
    return 16 * _EPS * total / _LN2


def _binom_log2_approx(n: int, k: int) -> tuple[float, float]:
    ln = math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
    return ln / _LN2, _lgamma_err(n, k, n - k)


def binom_log2(n: int, k: int, exact: bool = False) -> Prob:
    """``log2 C(n, k)``. Returned exactly for small ``n`` or when asked."""
    if n < 0 or k < 0:
        raise ValueError("n and k must be non-negative")
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    if exact or n <= EXACT_CUTOFF:
        return Prob.from_fraction(math.comb(n, k))
    value, err = _binom_log2_approx(n, k)
    return Prob(value, err, resolver=lambda: Fraction(math.comb(n, k)))


def _ratio(num_nk, den_nk, exact: bool, scale: int = 1) -> Prob:
    """``scale * C(*num_nk) / C(*den_nk)`` as a Prob."""

    def resolve():
        return Fraction(scale * math.comb(*num_nk), math.comb(*den_nk))

    if exact or den_nk[0] <= EXACT_CUTOFF:
        return Prob.from_fraction(resolve())
    a, ea = _binom_log2_approx(*num_nk)
    b, eb = _binom_log2_approx(*den_nk)
    return Prob(math.log2(scale) + a - b, ea + eb + 4 * _EPS, resolver=resolve)


def prob_publics_clean(p: GameParams, exact: bool = False) -> Prob:
    """Probability that ``iB`` corrupted positions avoid every public sample:
    ``C(RB+T-iB, T) / C(RB+T, T)``."""
    if p.i == 0 or p.T == 0:
        return Prob.from_fraction(1)
    return _ratio((p.N - p.i * p.B, p.T), (p.N, p.T), exact)


def prob_groups_aligned(p: GameParams, exact: bool = False) -> Prob:
    """Probability that ``iB`` corrupted query positions form exactly ``i``
    whole copy groups: ``C(R,i) (iB)! (RB-iB)! / (RB)!``."""
    if p.i < 1:
        raise ValueError("event undefined for i = 0")
    # C(R,i) (iB)!(RB-iB)!/(RB)! == C(R,i) / C(RB, iB)
    return _ratio((p.R, p.i), (p.R * p.B, p.i * p.B), exact)


def prob_cheat_success(p: GameParams, exact: bool = False) -> Prob:
    """Probability a server corrupting ``i`` queries goes undetected:
    ``C(R,i) / C(RB+T, iB)``."""
    if p.i < 1:
        raise ValueError("cheating success is defined only for i >= 1")
    return _ratio((p.R, p.i), (p.N, p.i * p.B), exact)


def cheat_bound(R: int, B: int, T: int, exact: bool = False) -> Prob:
    """Upper bound ``R / C(RB+T, B)`` over all ``i``; valid only when T >= B."""
    if T < B:
        raise ValueError(f"bound requires T >= B, got T={T}, B={B}")
    if R < 1 or B < 1:
        raise ValueError("R and B must be positive")
    return _ratio((1, 1), (R * B + T, B), exact, scale=R)


@dataclass(frozen=True)
class Counterexample:
    R: int
    B: int
    T: Optional[int]  # None for the T-free intermediate check
    i: int
    check: str  # "bound" or "intermediate"
    lhs: Fraction
    rhs: Fraction


def verify_cheat_bound_grid(
    max_R: int, max_B: int, max_T: int, min_B: int = 1
) -> List[Counterexample]:
    """Exhaustive exact check of the ``i``-uniform bound on a parameter grid.

    For every ``R <= max_R``, ``min_B <= B <= max_B``, ``B <= T <= max_T`` and
    ``1 <= i <= R`` this checks ``C(R,i)/C(RB+T,iB) <= R/C(RB+T,B)``. For
    ``i >= 2`` it also checks the T-free sufficient condition
    ``C(R,i) C(iB, iB-B) <= C(RB, iB-B)``. Cells with ``T < B`` are skipped.
    """
    if min(max_R, max_B, max_T) < 2:
        raise ValueError("all grid maxima must be >= 2")
    found: List[Counterexample] = []
    for R in range(1, max_R + 1):
        for B in range(max(1, min_B), max_B + 1):
            for T in range(B, max_T + 1):
                N = R * B + T
                rhs = Fraction(R, math.comb(N, B))
                for i in range(1, R + 1):
                    lhs = Fraction(math.comb(R, i), math.comb(N, i * B))
                    if lhs > rhs:
                        found.append(Counterexample(R, B, T, i, "bound", lhs, rhs))
        # the intermediate inequality does not involve T; check it once per (R, B)
        for B in range(max(1, min_B), max_B + 1):
            if B > max_T:
                continue
            for i in range(2, R + 1):
                left = math.comb(R, i) * math.comb(i * B, i * B - B)
                right = math.comb(R * B, i * B - B)
                if left > right:
                    found.append(
                        Counterexample(R, B, None, i, "intermediate", Fraction(left), Fraction(right))
                    )
    return found
