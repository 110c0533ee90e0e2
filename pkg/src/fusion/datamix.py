"""Client-side batch preparation: duplicate queries, add publics, shuffle.

Only :attr:`MixedDataset.samples` may be handed to the server side. The
:class:`ProvenanceMap` stays with the client; it is what makes a corrupted
copy indistinguishable from a public sample or from another query.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .fixedpoint import DEFAULT_SCALE_BITS, encode
from .rng import as_rng

UNLABELED = -1


class QueryCopy(NamedTuple):
    query_index: int
    copy_index: int


class Public(NamedTuple):
    public_index: int
    expected_label: int


Entry = Union[QueryCopy, Public]


@dataclass(frozen=True)
class ProvenanceMap:
    """Where each pre-shuffle item landed.

    Pre-shuffle order is ``q0c0 .. q0c(B-1), q1c0, ..., p0 .. p(T-1)``;
    ``permutation[k]`` is the mixed position of pre-shuffle item ``k`` and
    ``entries[p]`` says what sits at mixed position ``p``.
    """

    R: int
    B: int
    T: int
    permutation: Tuple[int, ...]
    entries: Tuple[Entry, ...]

    @property
    def N(self) -> int:
        return self.R * self.B + self.T

    def group_positions(self, query_index: int) -> List[int]:
        base = query_index * self.B
        return [self.permutation[base + c] for c in range(self.B)]

    def public_positions(self) -> List[int]:
        base = self.R * self.B
        return [self.permutation[base + t] for t in range(self.T)]


@dataclass(frozen=True)
class MixedDataset:
    samples: np.ndarray  # (N, d) int64 fixed point, read-only
    provenance: ProvenanceMap
    seed: object = None

    @property
    def N(self) -> int:
        return len(self.samples)

    def server_view(self) -> np.ndarray:
        return self.samples


def _as_matrix(rows, name: str) -> np.ndarray:
    arr = np.asarray(rows)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, 0)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array of samples")
    if arr.dtype.kind not in "iu":
        raise TypeError(f"{name} must hold fixed-point integers; encode reals first")
    return arr.astype(np.int64)


def prepare_mixed(queries, publics, public_labels: Sequence[int], B: int, rng_seed=0) -> MixedDataset:
    """Duplicate each query ``B`` times and shuffle with the publics.

    ``queries`` is ``(R, d)`` and ``publics`` ``(T, d)``, both fixed point.
    """
    Q = _as_matrix(queries, "queries")
    R = Q.shape[0]
    if R < 1:
        raise ValueError("at least one query sample is required")
    if B < 1:
        raise ValueError("B must be >= 1")
    labels = [int(v) for v in public_labels]
    T = len(labels)
    P = _as_matrix(publics, "publics") if T else np.zeros((0, Q.shape[1]), dtype=np.int64)
    if P.shape[0] != T:
        raise ValueError(f"{P.shape[0]} public samples but {T} labels")
    if T and P.shape[1] != Q.shape[1]:
        raise ValueError(f"dimension mismatch: queries have {Q.shape[1]} features, publics {P.shape[1]}")

    N = R * B + T
    pre = np.concatenate([np.repeat(Q, B, axis=0), P], axis=0)
    rng = as_rng(rng_seed).child("mix")
    order = rng.permutation(N)  # order[p] = pre-shuffle item at mixed position p
    permutation = [0] * N
    for p, k in enumerate(order):
        permutation[k] = p

    entries: List[Entry] = []
    for k in order:
        if k < R * B:
            entries.append(QueryCopy(k // B, k % B))
        else:
            t = k - R * B
            entries.append(Public(t, labels[t]))

    samples = pre[order]
    samples.setflags(write=False)
    prov = ProvenanceMap(R, B, T, tuple(permutation), tuple(entries))
    return MixedDataset(samples, prov, seed=rng_seed)


def unmix(results: Sequence[int], prov: ProvenanceMap):
    """Regroup per-position labels into ``R`` copy groups and ``T`` public
    ``(label, expected)`` pairs."""
    if len(results) != prov.N:
        raise ValueError(f"expected {prov.N} results, got {len(results)}")
    groups = [[None] * prov.B for _ in range(prov.R)]
    publics: List[Optional[tuple]] = [None] * prov.T
    for label, entry in zip(results, prov.entries):
        if isinstance(entry, QueryCopy):
            groups[entry.query_index][entry.copy_index] = int(label)
        else:
            publics[entry.public_index] = (int(label), entry.expected_label)
    return groups, publics


@dataclass
class LabeledCSV:
    labels: np.ndarray
    features: np.ndarray  # fixed point
    scale_bits: int

    @property
    def query_mask(self) -> np.ndarray:
        return self.labels == UNLABELED

    def queries(self) -> np.ndarray:
        return self.features[self.query_mask]

    def labeled(self) -> Tuple[np.ndarray, np.ndarray]:
        m = ~self.query_mask
        return self.features[m], self.labels[m]


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, scale_bits: int = DEFAULT_SCALE_BITS) -> LabeledCSV:
    """Read ``label, x1, x2, ...`` rows; label ``-1`` marks a query sample.

    A header row is skipped when its first cell is not numeric.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows and not _is_number(rows[0][0].strip()):
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path}: no samples")
    width = len(rows[0])
    if width < 2:
        raise ValueError(f"{path}: need a label column and at least one feature")
    for n, r in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"{path}: row {n} has {len(r)} columns, expected {width}")
    labels = np.array([int(float(r[0])) for r in rows], dtype=np.int64)
    feats = np.array([[float(c) for c in r[1:]] for r in rows], dtype=np.float64)
    return LabeledCSV(labels, encode(feats, scale_bits), scale_bits)


def write_csv(path, labels, features_real, header: bool = True) -> None:
    features_real = np.asarray(features_real, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(["label"] + [f"x{j}" for j in range(features_real.shape[1])])
        for lab, row in zip(labels, features_real):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])
