"""Client-side acceptance: audit accuracy on publics, then copy consistency."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

DEFAULT_DELTA = 0.95


class AbortReason(enum.Enum):
    ACCURACY_BELOW_THRESHOLD = "AccuracyBelowThreshold"
    INCONSISTENT_COPIES = "InconsistentCopies"


class ResultsWithheld(RuntimeError):
    """Raised when query labels are requested from an aborted run."""


@dataclass(frozen=True)
class VerifyConfig:
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not 0 <= self.delta <= 1:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")


def check_accuracy(public_results: Sequence[Tuple[int, int]], delta: float) -> Tuple[Fraction, bool]:
    """Fraction of publics labelled as expected, and whether it reaches ``delta``."""
    T = len(public_results)
    if T == 0:
        raise ValueError("accuracy check needs at least one public sample")
    hits = sum(1 for got, want in public_results if got == want)
    eta = Fraction(hits, T)
    # read delta as the decimal the user wrote, so 19/20 passes delta=0.95
    threshold = Fraction(str(delta)) if isinstance(delta, float) else Fraction(delta)
    return eta, eta >= threshold


def check_consistency(groups: Sequence[Sequence[int]]):
    """All copies of each query must agree. Returns ``(passed, violation)``
    where ``violation`` is ``(query_index, labels)`` for the first bad group."""
    if not groups:
        return True, None
    width = len(groups[0])
    for q, g in enumerate(groups):
        if len(g) != width:
            raise ValueError(f"group {q} has {len(g)} labels, expected {width}")
    for q, g in enumerate(groups):
        if any(v != g[0] for v in g):
            return False, (q, list(g))
    return True, None


@dataclass(frozen=True)
class VerificationReport:
    eta: Fraction
    accuracy_pass: bool
    consistency_pass: bool
    first_violation: Optional[Tuple[int, List[int]]]
    abort_reason: Optional[AbortReason]
    _labels: Optional[Tuple[int, ...]] = field(default=None, repr=False)

    @property
    def accepted(self) -> bool:
        return self.abort_reason is None

    @property
    def verdict(self) -> str:
        return "Accept" if self.accepted else f"Abort({self.abort_reason.value})"

    @property
    def query_labels(self) -> Tuple[int, ...]:
        if not self.accepted:
            raise ResultsWithheld(f"run aborted: {self.abort_reason.value}")
        return self._labels

    def as_dict(self) -> dict:
        d = {
            "verdict": "Accept" if self.accepted else "Abort",
            "reason": None if self.accepted else self.abort_reason.value,
            "eta": float(self.eta),
            "eta_exact": str(self.eta),
            "accuracy_pass": self.accuracy_pass,
            "consistency_pass": self.consistency_pass,
            "first_violation": None
            if self.first_violation is None
            else {"query_index": self.first_violation[0], "labels": self.first_violation[1]},
        }
        if self.accepted:
            d["query_labels"] = list(self._labels)
        return d


def verdict(groups, public_results, config: VerifyConfig = VerifyConfig(), consistency_first: bool = False) -> VerificationReport:
    """Run both checks and release one label per query only on Accept.

    ``consistency_first`` swaps the evaluation order; the outcome does not
    depend on it, only which reason is reported when both checks fail.
    """
    eta, acc_ok = check_accuracy(public_results, config.delta)
    cons_ok, violation = check_consistency(groups)
    order = [(cons_ok, AbortReason.INCONSISTENT_COPIES), (acc_ok, AbortReason.ACCURACY_BELOW_THRESHOLD)]
    if not consistency_first:
        order.reverse()
    reason = next((r for ok, r in order if not ok), None)
    labels = tuple(g[0] for g in groups) if reason is None else None
    return VerificationReport(eta, acc_ok, cons_ok, violation, reason, labels)
