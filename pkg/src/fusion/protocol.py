"""End-to-end batched inference: plan, mix, infer, unmix, verify."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .adversary import AdversarialServer, Honest, parse_strategy
from .backend import ChannelStats, OracleBackend, TwoPartyBackend
from .datamix import MixedDataset, prepare_mixed, unmix
from .fixedpoint import encode
from .planner import SecurityPlan, search_params
from .rng import as_rng
from .verify import DEFAULT_DELTA, VerificationReport, VerifyConfig, verdict

logger = logging.getLogger(__name__)

BACKENDS = ("oracle", "two-party", "two-party:tcp")


def make_backend(spec: str = "oracle", seed=0, dealer_addr=None, server_addr=None, timeout: float = 60.0):
    if spec == "oracle":
        return OracleBackend()
    if spec == "two-party":
        return TwoPartyBackend("memory", seed=seed, timeout=timeout)
    if spec == "two-party:tcp":
        return TwoPartyBackend("tcp", seed=seed, dealer_addr=dealer_addr, server_addr=server_addr, timeout=timeout)
    raise ValueError(f"unknown backend {spec!r}; choose from {', '.join(BACKENDS)}")


@dataclass
class RunReport:
    plan: SecurityPlan
    verification: VerificationReport
    channel_stats: ChannelStats
    seed: object
    backend: str = "oracle"
    adversary: str = "honest"
    wall_time_ms: Optional[float] = None
    corrupted_positions: int = 0
    mixed: Optional[MixedDataset] = field(default=None, repr=False)

    @property
    def accepted(self) -> bool:
        return self.verification.accepted

    @property
    def amortized_bytes_per_query(self) -> float:
        return self.channel_stats.client_server_total / self.plan.R

    def as_dict(self) -> dict:
        return {
            "plan": self.plan.as_dict(),
            "verdict": self.verification.as_dict(),
            "eta": float(self.verification.eta),
            "channel_stats": self.channel_stats.as_dict(),
            "amortized_bytes_per_query": self.amortized_bytes_per_query,
            "backend": self.backend,
            "adversary": self.adversary,
            "corrupted_positions": self.corrupted_positions,
            "wall_time_ms": self.wall_time_ms,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


def select_publics(X, y, T: int, rng):
    """Draw ``T`` distinct labelled samples from the public pool."""
    y = np.asarray(y, dtype=np.int64)
    if T > len(y):
        raise ValueError(f"plan needs T={T} public samples, pool has {len(y)}")
    idx = sorted(as_rng(rng).sample(len(y), T))
    return np.asarray(X)[idx], y[idx]


def run_protocol(
    model,
    queries,
    public_X,
    public_y,
    lam: int = 40,
    beta_pub: int = 100,
    delta: float = DEFAULT_DELTA,
    backend="oracle",
    adversary=None,
    seed=0,
    plan: Optional[SecurityPlan] = None,
    timestamp: bool = True,
    adversary_label: Optional[str] = None,
) -> RunReport:
    """One batched run over fixed-point ``queries`` and a public pool.

    ``adversary`` is a strategy object or a string accepted by
    :func:`parse_strategy`; ``None`` serves ``model`` honestly.
    """
    start = time.perf_counter()
    queries = np.atleast_2d(np.asarray(queries, dtype=np.int64))
    if plan is None:
        plan = search_params(len(queries), lam, beta_pub)
    elif plan.R != len(queries):
        raise ValueError(f"plan is for R={plan.R} queries, got {len(queries)}")

    if isinstance(adversary, str):
        adversary_label = adversary_label or adversary
        adversary = parse_strategy(adversary)
    adversary = adversary or Honest()
    if isinstance(backend, str):
        label = backend
        backend = make_backend(backend, seed=as_rng(seed).child("backend"))
    else:
        label = getattr(backend, "kind", type(backend).__name__)

    root = as_rng(seed)
    Xp, yp = select_publics(public_X, public_y, plan.T, root.child("publics"))
    mixed = prepare_mixed(queries, Xp, yp, plan.B, root.child("client"))
    server = model
    if not isinstance(adversary, Honest):
        server = AdversarialServer(adversary, model, plan.B, root.child("server"))
    labels, stats = backend.run_batch(server, mixed.server_view())
    groups, publics = unmix(labels, mixed.provenance)
    report = verdict(groups, publics, VerifyConfig(delta))
    elapsed = (time.perf_counter() - start) * 1e3 if timestamp else None
    logger.info("run: %s, eta=%s", report.verdict, report.eta)
    return RunReport(
        plan=plan,
        verification=report,
        channel_stats=stats,
        seed=seed,
        backend=label,
        adversary=adversary_label or type(adversary).__name__.lower(),
        wall_time_ms=elapsed,
        corrupted_positions=len(getattr(server, "corrupted", ())),
        mixed=mixed,
    )


def marginal_sample_bytes(backend, model, n_features: int, seed=0) -> int:
    """Client<->server bytes added by one more sample in a batch."""
    rng = np.random.default_rng(seed)
    X = encode(rng.normal(size=(2, n_features)), model.scale_bits)
    one = backend.run_batch(model, X[:1])[1].client_server_total
    two = backend.run_batch(model, X)[1].client_server_total
    return two - one


class MixAndCheck(BaseEstimator):
    """Batched inference that refuses to return labels unless the audit passes.

    ``fit`` stores the public pool (real-valued features, known labels);
    ``predict`` runs the full protocol on the query rows and raises
    :class:`~fusion.verify.ResultsWithheld` when the client aborts. The last
    run is kept in ``report_``.
    """

    def __init__(self, model=None, lam=40, beta_pub=100, delta=DEFAULT_DELTA, backend="oracle", adversary="honest", seed=0):
        self.model = model
        self.lam = lam
        self.beta_pub = beta_pub
        self.delta = delta
        self.backend = backend
        self.adversary = adversary
        self.seed = seed

    def fit(self, X, y):
        if self.model is None:
            raise ValueError("a served model is required")
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if len(X) != len(y):
            raise ValueError("X and y differ in length")
        self.public_X_ = encode(X, self.model.scale_bits)
        self.public_y_ = y
        self.n_features_in_ = X.shape[1]
        self.n_runs_ = 0
        return self

    def predict(self, X):
        Xq = encode(np.asarray(X, dtype=np.float64), self.model.scale_bits)
        self.report_ = run_protocol(
            self.model,
            Xq,
            self.public_X_,
            self.public_y_,
            lam=self.lam,
            beta_pub=self.beta_pub,
            delta=self.delta,
            backend=self.backend,
            adversary=self.adversary,
            seed=(self.seed, self.n_runs_),
            timestamp=False,
        )
        self.n_runs_ += 1
        return np.asarray(self.report_.verification.query_labels, dtype=np.int64)
