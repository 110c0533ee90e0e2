import socket
import threading

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fusion.adversary import AdversarialServer, TargetedCorruption
from fusion.backend import (
    ChannelStats,
    DealerState,
    OracleBackend,
    ProtocolError,
    TwoPartyBackend,
    beaver_matvec,
    dealer_relu,
    reconstruct,
    serve_dealer,
    serve_server,
    share,
)
from fusion.backend.channel import queue_pair
from fusion.backend.endpoints import Architecture, _party_gate
from fusion.backend.sharing import MaskShare, NonceRegistry, ReuseError
from fusion.backend.wire import MsgType
from fusion.fixedpoint import encode, to_ring, truncate
from fusion.model import random_network
from fusion.rng import ChaChaRNG

F = 12


def inputs(n, d, seed=0):
    return encode(np.random.default_rng(seed).normal(size=(n, d)), F)


class TestSharing:
    def test_zero(self):
        r = ChaChaRNG(1)
        s0, s1 = share(np.array([0]), r)
        assert int(s1[0]) == (-int(s0[0])) % 2**64
        assert reconstruct(s0, s1).tolist() == [0]

    def test_round_trip_million(self):
        x = np.random.default_rng(0).integers(-(2**63), 2**63 - 1, size=10**6, dtype=np.int64)
        assert np.array_equal(reconstruct(*share(x, ChaChaRNG(2))), x)

    def test_deterministic(self):
        a = share(np.arange(5), ChaChaRNG(3))
        b = share(np.arange(5), ChaChaRNG(3))
        assert all(np.array_equal(u, v) for u, v in zip(a, b))

    @given(st.lists(st.integers(-(2**63), 2**63 - 1), min_size=1, max_size=20), st.integers())
    def test_round_trip_property(self, xs, seed):
        x = np.array(xs, dtype=np.int64)
        assert np.array_equal(reconstruct(*share(x, ChaChaRNG(seed))), x)


def matvec(W, x, seed=0):
    """Both parties in-process; returns the reconstructed product."""
    rng = ChaChaRNG(seed)
    dealer = DealerState(rng.child("dealer"), F)
    Wq, xq = encode(W, F), encode(x, F)
    Ws, xs = share(Wq, rng.child("w")), share(xq, rng.child("x"))
    triples = dealer.issue_triple(*Wq.shape)
    return reconstruct(*beaver_matvec(Ws, xs, triples, dealer)), Wq, xq


class TestBeaver:
    def test_identity(self):
        x = np.array([1.5, -2.25, 3.0])
        out, _, xq = matvec(np.eye(3), x)
        assert np.array_equal(out, xq)

    def test_scalar(self):
        out, _, _ = matvec(np.array([[2.0]]), np.array([3.0]))
        assert out.tolist() == [6 * 2**F]

    def test_random_matches_oracle(self):
        rng = np.random.default_rng(5)
        for seed in range(50):
            W, x = rng.normal(size=(4, 4)), rng.normal(size=4)
            out, Wq, xq = matvec(W, x, seed)
            assert np.array_equal(out, truncate(Wq @ xq, F))

    def test_triple_replay_rejected(self):
        dealer = DealerState(ChaChaRNG(0), F)
        t0, t1 = dealer.issue_triple(1, 1)
        zero = np.zeros(1, dtype=np.uint64)
        dealer.finish(t0.nonce, zero, zero)
        with pytest.raises(ReuseError):
            dealer.finish(t0.nonce, zero, zero)


class TestGates:
    def relu(self, z, seed=0):
        rng = ChaChaRNG(seed)
        dealer = DealerState(rng, F)
        zs = share(np.asarray(z, dtype=np.int64), rng.child("z"))
        return reconstruct(*dealer_relu(zs, dealer.issue_mask(len(z), "relu"), dealer))

    def test_examples(self):
        assert self.relu([-5, 7]).tolist() == [0, 7]

    def test_many(self):
        z = np.random.default_rng(1).integers(-(2**40), 2**40, size=10**4)
        assert np.array_equal(self.relu(z), np.maximum(z, 0))

    def test_square(self):
        rng = ChaChaRNG(0)
        dealer = DealerState(rng, F)
        z = encode([-1.5, 2.0], F)
        out = reconstruct(*dealer_relu(share(z, rng.child("z")), dealer.issue_mask(2, "square"), dealer))
        assert out.tolist() == [int(2.25 * 2**F), 4 * 2**F]

    def test_mask_replay(self):
        dealer = DealerState(ChaChaRNG(0), F)
        m = dealer.issue_mask(1, "relu")
        zs = (np.zeros(1, dtype=np.uint64),) * 2
        dealer_relu(zs, m, dealer)
        with pytest.raises(ReuseError):
            dealer_relu(zs, m, dealer)

    def test_registry(self):
        reg = NonceRegistry()
        reg.use(1)
        with pytest.raises(ReuseError):
            reg.use(1)


def test_endpoint_aborts_on_reused_nonce():
    to_party, at_dealer = queue_pair("party->dealer", "dealer->party")
    mask = MaskShare(3, np.zeros(2, dtype=np.uint64))
    at_dealer.send(MsgType.TRIPLE_ISSUE, mask.to_words())
    at_dealer.send(MsgType.SHARE_VECTOR, [0, 0])
    at_dealer.send(MsgType.TRIPLE_ISSUE, mask.to_words())
    seen = NonceRegistry()
    h = np.zeros(2, dtype=np.uint64)
    _party_gate(h, to_party, seen)
    with pytest.raises(ProtocolError, match="reused"):
        _party_gate(h, to_party, seen)
    at_dealer.recv(MsgType.MASKED_VALUE)
    assert [at_dealer._inbox.get_nowait()[3]] == [int(MsgType.ABORT)]


class TestTwoParty:
    def test_equivalence_memory(self, three_layer_net):
        X = inputs(150, 8)
        labels, stats = TwoPartyBackend(seed=1).run_batch(three_layer_net, X)
        assert np.array_equal(labels, three_layer_net.predict_fixed(X))
        assert stats.rounds == 150 * (2 + 1 + 1)

    def test_logits_bit_identical(self, three_layer_net):
        be = TwoPartyBackend(seed=2)
        X = inputs(40, 8, seed=1)
        be.run_batch(three_layer_net, X)
        assert np.array_equal(be.last_logits, three_layer_net.decision_function_fixed(X))

    def test_square_and_softmax_defense_head(self):
        net = random_network([5, 7, 6, 3], activation="square", seed=4, classifier="softmax", defense={"beta": 0.2, "gamma": 1.0})
        X = inputs(60, 5, seed=3)
        labels, stats = TwoPartyBackend(seed=3).run_batch(net, X)
        assert np.array_equal(labels, net.predict_fixed(X))
        assert stats.rounds == 60 * (3 + 2 + 1)

    def test_rounds_formula_deeper(self):
        net = random_network([4, 6, 6, 6, 2], seed=5)
        labels, stats = TwoPartyBackend().run_batch(net, inputs(7, 4))
        assert stats.rounds == 7 * (4 + 3 + 1)

    def test_oracle_stats_zero(self, small_net):
        _, stats = OracleBackend().run_batch(small_net, inputs(3, 6))
        assert stats == ChannelStats()

    def test_accounting_linear(self, small_net):
        be = TwoPartyBackend()
        b = [be.run_batch(small_net, inputs(n, 6))[1] for n in (1, 2, 3, 10)]
        per = b[1].client_server_total - b[0].client_server_total
        assert b[2].client_server_total - b[1].client_server_total == per
        assert b[3].client_server_total == b[0].client_server_total + 9 * per
        assert b[3].bytes_dealer_total - b[0].bytes_dealer_total == 9 * (b[1].bytes_dealer_total - b[0].bytes_dealer_total)

    def test_deterministic(self, small_net):
        X = inputs(5, 6)
        one = TwoPartyBackend(seed=9, record=True)
        two = TwoPartyBackend(seed=9, record=True)
        one.run_batch(small_net, X)
        two.run_batch(small_net, X)
        w1 = [w.tolist() for _, w in one.last_transcript["from_dealer"]]
        w2 = [w.tolist() for _, w in two.last_transcript["from_dealer"]]
        assert w1 == w2

    def test_client_view_uniform(self, three_layer_net):
        be = TwoPartyBackend(seed=4, record=True)
        be.run_batch(three_layer_net, inputs(200, 8))
        words = []
        server_msgs = be.last_transcript["from_server"][1:]  # skip the public architecture
        for t, w in server_msgs:
            words.append(w[1:] if t == MsgType.OPENING else w)
        for t, w in be.last_transcript["from_dealer"]:
            words.append(w[1:] if t == MsgType.TRIPLE_ISSUE else w)
        flat = np.concatenate(words).astype(np.uint64)
        assert flat.size >= 10**5
        bits = (flat[:, None] >> np.arange(64, dtype=np.uint64)) & np.uint64(1)
        assert np.abs(bits.mean(axis=0) - 0.5).max() < 0.01

    def test_dimension_mismatch_aborts(self, small_net):
        with pytest.raises(ProtocolError, match="features"):
            TwoPartyBackend(timeout=5).run_batch(small_net, inputs(2, 5))

    def test_adversary_through_backend(self, small_net):
        X = inputs(12, 6)
        adv = AdversarialServer(TargetedCorruption(2), small_net, copies=3, rng=1)
        labels, _ = TwoPartyBackend().run_batch(adv, X)
        honest = small_net.predict_fixed(X)
        wrong = sorted(p for p in range(12) if labels[p] != honest[p])
        assert wrong == sorted(adv.corrupted) and len(wrong) == 6

    def test_architecture_words(self, small_net):
        arch = Architecture.of(small_net)
        assert Architecture.from_words(arch.to_words()) == arch
        with pytest.raises(ProtocolError):
            Architecture.from_words(arch.to_words()[:3])

    def test_tcp_local(self, three_layer_net):
        X = inputs(50, 8, seed=6)
        labels, stats = TwoPartyBackend("tcp", seed=5, timeout=20).run_batch(three_layer_net, X)
        assert np.array_equal(labels, three_layer_net.predict_fixed(X))
        mem = TwoPartyBackend("memory", seed=5).run_batch(three_layer_net, X)[1]
        assert stats == mem


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_tcp_remote_endpoints(small_net):
    d_addr, s_addr = f"127.0.0.1:{free_port()}", f"127.0.0.1:{free_port()}"
    results = {}
    dealer = threading.Thread(target=lambda: results.setdefault("d", serve_dealer(d_addr, 1, timeout=20)))
    dealer.start()
    server = threading.Thread(target=lambda: results.setdefault("s", serve_server(s_addr, d_addr, small_net, 2, timeout=20)))
    server.start()
    X = inputs(9, 6)
    labels, stats = TwoPartyBackend("tcp", dealer_addr=d_addr, server_addr=s_addr, timeout=20).run_batch(None, X)
    dealer.join(20)
    server.join(20)
    assert np.array_equal(labels, small_net.predict_fixed(X))
    assert results == {"d": 9, "s": 9}
    assert stats.rounds == 9 * 4 and stats.bytes_client_to_server > 0


def test_serve_server_refuses_adversary(small_net):
    with pytest.raises(TypeError):
        serve_server("127.0.0.1:0", "127.0.0.1:1", AdversarialServer(TargetedCorruption(1), small_net, 2), timeout=1)
