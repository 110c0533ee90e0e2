import math
from fractions import Fraction

import numpy as np
import pytest

from fusion.adversary import (
    AdversarialServer,
    DetectedBy,
    Honest,
    IndependentNoise,
    LowQuality,
    Selection,
    TargetedCorruption,
    closed_form,
    enumerate_win_prob,
    estimate_detection,
    estimate_win_prob,
    parse_strategy,
    run_game,
)
from fusion.combinatorics import GameParams, cheat_bound
from fusion.rng import ChaChaRNG


def test_oracle_grouped_always_wins():
    plan = GameParams(5, 3, 6)
    for s in range(50):
        out = run_game(TargetedCorruption(1, Selection.ORACLE_GROUPED), plan, s)
        assert out.server_wins and out.detected_by is None
    assert estimate_win_prob(TargetedCorruption(1, "oracle-grouped"), plan, 200) == (1.0, 0.0)


def test_honest_never_wins_or_detected():
    assert estimate_detection(Honest(), GameParams(3, 2, 2), 200) == (0.0, 0.0, 0.0)


def test_corrupts_exactly_iB():
    for i in (1, 2, 3):
        out = run_game(TargetedCorruption(i), GameParams(4, 3, 5), i)
        assert len(out.corrupted_positions) == 3 * i


def test_outcome_invariant():
    plan = GameParams(3, 2, 3)
    for s in range(300):
        out = run_game(TargetedCorruption(1), plan, s)
        assert out.server_wins == (out.detected_by is None)


def test_detected_by_reason():
    plan = GameParams(2, 2, 2)
    reasons = {run_game(TargetedCorruption(1), plan, s).detected_by for s in range(200)}
    assert reasons == {None, DetectedBy.ACCURACY, DetectedBy.CONSISTENCY}


def test_i_out_of_range():
    with pytest.raises(ValueError):
        run_game(TargetedCorruption(3), GameParams(2, 2, 2), 0)
    with pytest.raises(ValueError):
        enumerate_win_prob(GameParams(2, 2, 2), 0)


@pytest.mark.parametrize(
    "params, i, want",
    [(GameParams(2, 2, 2), 1, Fraction(2, 15)), (GameParams(1, 1, 0), 1, Fraction(1)), (GameParams(3, 2, 2), 2, Fraction(3, 70))],
)
def test_enumeration_examples(params, i, want):
    assert enumerate_win_prob(params, i) == want == closed_form(params, i)


def test_enumeration_budget():
    with pytest.raises(ValueError, match="Monte-Carlo|estimate_win_prob"):
        enumerate_win_prob(GameParams(20, 5, 20), 3)


def test_monte_carlo_small():
    est, se = estimate_win_prob(TargetedCorruption(1), GameParams(2, 2, 2), 20_000, seed=3)
    assert abs(est - 2 / 15) <= 4 * se


def test_full_corruption_below_bound():
    plan = GameParams(3, 2, 2)
    est, se = estimate_win_prob(TargetedCorruption(3), plan, 6000, seed=1)
    assert est <= float(cheat_bound(3, 2, 2)) + 3 * se
    assert abs(est - float(closed_form(plan, 3))) <= 4 * max(se, 1e-3)


def test_monte_carlo_consistency_harness():
    """At least 99 of 100 independent estimates fall within 4 sigma."""
    p = 2 / 15
    hits = 0
    for h in range(100):
        est, _ = estimate_win_prob(TargetedCorruption(1), GameParams(2, 2, 2), 400, seed=("harness", h))
        hits += abs(est - p) <= 4 * math.sqrt(p * (1 - p) / 400)
    assert hits >= 99


def test_independent_noise_detection():
    R, B, T, p = 3, 2, 2, 0.3
    _, det, se = estimate_detection(IndependentNoise(p), GameParams(R, B, T), 3000, seed=2)
    assert det >= 1 - (p**B + (1 - p) ** B) ** R - 3 * se


def test_noise_validation():
    with pytest.raises(ValueError):
        IndependentNoise(1.5)


def test_parse_strategy(tmp_path, small_net):
    from fusion.model import save_model

    assert parse_strategy("honest") == Honest()
    assert parse_strategy("corrupt:2") == TargetedCorruption(2)
    assert parse_strategy("noise:0.25") == IndependentNoise(0.25)
    save_model(small_net, tmp_path / "m.json")
    assert isinstance(parse_strategy(f"lowq:{tmp_path / 'm.json'}"), LowQuality)
    for bad in ("", "corrupt", "flip:1", "honest:1"):
        with pytest.raises(ValueError):
            parse_strategy(bad)


def test_low_quality_has_no_position_game(small_net):
    with pytest.raises(TypeError):
        run_game(LowQuality(small_net), GameParams(2, 2, 2), 0)


def test_strategies_never_see_provenance(small_net):
    seen = {}

    class Spy:
        def corrupt_positions(self, n, copies, rng, provenance=None):
            seen["provenance"] = provenance
            return frozenset()

    server = AdversarialServer(Spy(), small_net, copies=2, rng=ChaChaRNG(0))
    server.assign(np.zeros((6, 6), dtype=np.int64))
    assert seen["provenance"] is None
    run_game(Spy(), GameParams(2, 2, 2), 0)
    assert seen["provenance"] is None


def test_oracle_grouped_needs_map():
    with pytest.raises(ValueError):
        TargetedCorruption(1, Selection.ORACLE_GROUPED).corrupt_positions(6, 2, ChaChaRNG(0))
