"""Fixed-point feed-forward classifier and the reverse-sigmoid output defense.

:class:`FixedPointNetwork` follows the scikit-learn estimator protocol. Its
``fit`` does not train: it quantizes the real-valued layer parameters it was
constructed with, which is the only "learning" a served model needs here.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import fixedpoint as fp

ACTIVATIONS = ("relu", "square")
CLASSIFIERS = ("argmax", "softmax")


class ModelFormatError(ValueError):
    pass


class DefenseError(ValueError):
    pass


@dataclass(frozen=True)
class Dense:
    weights: np.ndarray  # (rows, cols) int64 at scale 2^f
    bias: np.ndarray  # (rows,) int64 at scale 2^f

    @property
    def shape(self):
        return self.weights.shape


@dataclass(frozen=True)
class Activation:
    kind: str


@dataclass(frozen=True)
class DefenseParams:
    beta: float
    gamma: float
    clamp_eps: float = 1e-6

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("defense beta must be >= 0")
        if self.gamma <= 0:
            raise ValueError("defense gamma must be > 0")
        if not 0 < self.clamp_eps < 0.5:
            raise ValueError("clamp_eps must lie in (0, 0.5)")


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def reverse_sigmoid_perturbation(y, params: DefenseParams) -> np.ndarray:
    """``beta * (sigmoid(gamma * logit(y)) - 1/2)`` after clamping ``y``."""
    y = np.clip(np.asarray(y, dtype=np.float64), params.clamp_eps, 1.0 - params.clamp_eps)
    return params.beta * (_sigmoid(params.gamma * np.log(y / (1.0 - y))) - 0.5)


def reverse_sigmoid_defense(y, params: DefenseParams) -> np.ndarray:
    """Perturb a probability vector and renormalise it to sum to one."""
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0) or np.any(y > 1) or abs(y.sum() - 1.0) > 1e-9:
        raise ValueError("input must be a probability vector")
    if params.beta == 0:
        return y.copy()
    shifted = y - reverse_sigmoid_perturbation(y, params)
    total = shifted.sum()
    if total <= 0 or np.any(shifted < 0):
        raise DefenseError(
            f"perturbed mass is negative (beta={params.beta}); use a smaller beta"
        )
    return shifted / total


class ReverseSigmoid(TransformerMixin, BaseEstimator):
    """Row-wise :func:`reverse_sigmoid_defense` over a probability matrix."""

    def __init__(self, beta=0.3, gamma=2.0, clamp_eps=1e-6):
        self.beta = beta
        self.gamma = gamma
        self.clamp_eps = clamp_eps

    def fit(self, X=None, y=None):
        self.params_ = DefenseParams(self.beta, self.gamma, self.clamp_eps)
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        return np.vstack([reverse_sigmoid_defense(row, self.params_) for row in X])


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def head_probabilities(logits_q, scale_bits: int, defense: Optional[DefenseParams] = None) -> np.ndarray:
    probs = softmax(fp.decode(np.atleast_2d(logits_q), scale_bits))
    if defense is not None:
        probs = np.vstack([reverse_sigmoid_defense(p, defense) for p in probs])
    return probs


def head_labels(logits_q, scale_bits: int, classifier: str = "argmax", defense: Optional[DefenseParams] = None) -> np.ndarray:
    """Class labels from fixed-point logits; ties go to the lowest index."""
    logits_q = np.atleast_2d(logits_q)
    if classifier == "softmax":
        return np.argmax(head_probabilities(logits_q, scale_bits, defense), axis=1)
    return np.argmax(logits_q, axis=1)


class FixedPointNetwork(ClassifierMixin, BaseEstimator):
    """Dense/activation stack evaluated exactly in 64-bit fixed point.

    ``layers`` is a list of dicts in the model-file format::

        {"type": "dense", "weights": [[...], ...], "bias": [...]}
        {"type": "activation", "kind": "relu" | "square"}

    Weights and biases are reals; :meth:`fit` encodes them at ``scale_bits``.
    """

    def __init__(self, layers=None, scale_bits=fp.DEFAULT_SCALE_BITS, classifier="argmax", defense=None):
        self.layers = layers
        self.scale_bits = scale_bits
        self.classifier = classifier
        self.defense = defense

    # scikit-learn protocol -------------------------------------------------

    def fit(self, X=None, y=None):
        if not self.layers:
            raise ModelFormatError("model has no layers")
        if self.classifier not in CLASSIFIERS:
            raise ModelFormatError(f"classifier must be one of {CLASSIFIERS}")
        f = int(self.scale_bits)
        if not 0 <= f < 62:
            raise ModelFormatError("scale_bits must be in [0, 62)")
        built: List[object] = []
        width = None
        for n, spec in enumerate(self.layers):
            kind = spec.get("type")
            if kind == "dense":
                W = np.asarray(spec["weights"], dtype=np.float64)
                if W.ndim == 1:
                    W = W.reshape(int(spec["rows"]), int(spec["cols"]))
                b = np.asarray(spec.get("bias", np.zeros(W.shape[0])), dtype=np.float64).reshape(-1)
                if b.shape[0] != W.shape[0]:
                    raise ModelFormatError(f"layer {n}: bias has {b.shape[0]} entries, expected {W.shape[0]}")
                if width is not None and W.shape[1] != width:
                    raise ModelFormatError(f"layer {n}: expects {W.shape[1]} inputs, previous layer gives {width}")
                try:
                    built.append(Dense(fp.encode(W, f), fp.encode(b, f)))
                except fp.FixedPointOverflow as exc:
                    raise ModelFormatError(f"layer {n}: {exc}") from None
                width = W.shape[0]
            elif kind == "activation":
                if spec.get("kind") not in ACTIVATIONS:
                    raise ModelFormatError(f"layer {n}: unknown activation {spec.get('kind')!r}")
                if not built:
                    raise ModelFormatError("first layer must be dense")
                built.append(Activation(spec["kind"]))
            else:
                raise ModelFormatError(f"layer {n}: unknown layer type {kind!r}")
        if width is None:
            raise ModelFormatError("model needs at least one dense layer")
        self.layers_ = tuple(built)
        self.n_features_in_ = built[0].weights.shape[1]
        self.classes_ = np.arange(width)
        self.defense_ = None if self.defense is None else (
            self.defense if isinstance(self.defense, DefenseParams) else DefenseParams(**self.defense)
        )
        return self

    def predict(self, X):
        return self.label_from_logits(self.decision_function_fixed(self._encode(X)))

    def predict_proba(self, X):
        return self.probabilities(self.decision_function_fixed(self._encode(X)))

    def decision_function(self, X):
        return fp.decode(self.decision_function_fixed(self._encode(X)), self.scale_bits)

    # fixed-point surface ---------------------------------------------------

    @property
    def n_classes(self) -> int:
        check_is_fitted(self, "layers_")
        return len(self.classes_)

    @property
    def dense_layers(self) -> List[Dense]:
        check_is_fitted(self, "layers_")
        return [l for l in self.layers_ if isinstance(l, Dense)]

    def _encode(self, X):
        check_is_fitted(self, "layers_")
        X = check_array(X, dtype=np.float64)
        return fp.encode(X, self.scale_bits)

    def decision_function_fixed(self, Xq) -> np.ndarray:
        """Logits at scale ``2**scale_bits`` for fixed-point rows ``Xq``."""
        check_is_fitted(self, "layers_")
        h = np.atleast_2d(np.asarray(Xq, dtype=np.int64))
        if h.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {h.shape[1]}")
        f = self.scale_bits
        for n, layer in enumerate(self.layers_):
            if isinstance(layer, Dense):
                fp.check_matmul_range(h, layer.weights.T, layer=n)
                h = fp.truncate(fp.from_ring(fp.ring_matmul(h, layer.weights.T)), f)
                if np.any(np.abs(h.astype(np.float64) + layer.bias) >= 2.0**63):
                    raise fp.FixedPointOverflow("bias addition overflows", n)
                h = h + layer.bias
            elif layer.kind == "relu":
                h = np.maximum(h, 0)
            else:
                if np.any(h.astype(np.float64) ** 2 >= 2.0**63 * (1 - 1e-9)):
                    raise fp.FixedPointOverflow("square activation overflows", n)
                h = fp.truncate(h * h, f)
        return h

    def probabilities(self, logits_q) -> np.ndarray:
        check_is_fitted(self, "layers_")
        return head_probabilities(logits_q, self.scale_bits, self.defense_)

    def label_from_logits(self, logits_q) -> np.ndarray:
        check_is_fitted(self, "layers_")
        return head_labels(logits_q, self.scale_bits, self.classifier, self.defense_)

    def predict_fixed(self, Xq) -> np.ndarray:
        return self.label_from_logits(self.decision_function_fixed(Xq))

    def architecture(self) -> List[tuple]:
        """Public shape of the network: ``("dense", rows, cols)`` or
        ``("relu"|"square",)`` per layer."""
        check_is_fitted(self, "layers_")
        return [
            ("dense",) + tuple(l.weights.shape) if isinstance(l, Dense) else (l.kind,)
            for l in self.layers_
        ]

    def shifted_labels(self) -> "FixedPointNetwork":
        """Copy whose final logits are rotated so the label becomes
        ``label + 1 mod classes`` (barring ties across the wrap)."""
        check_is_fitted(self, "layers_")
        clone = FixedPointNetwork(self.layers, self.scale_bits, self.classifier, self.defense)
        clone.fit()
        last = max(n for n, l in enumerate(clone.layers_) if isinstance(l, Dense))
        dense = clone.layers_[last]
        rolled = Dense(np.roll(dense.weights, 1, axis=0), np.roll(dense.bias, 1))
        clone.layers_ = clone.layers_[:last] + (rolled,) + clone.layers_[last + 1 :]
        return clone

    # serialisation ---------------------------------------------------------

    def to_dict(self) -> dict:
        layers = []
        for spec in self.layers:
            if spec["type"] == "dense":
                W = np.asarray(spec["weights"], dtype=float)
                if W.ndim == 1:
                    W = W.reshape(int(spec["rows"]), int(spec["cols"]))
                layers.append({
                    "type": "dense",
                    "rows": W.shape[0],
                    "cols": W.shape[1],
                    "weights": W.reshape(-1).tolist(),
                    "bias": np.asarray(spec.get("bias", np.zeros(W.shape[0])), dtype=float).tolist(),
                })
            else:
                layers.append({"type": "activation", "kind": spec["kind"]})
        defense = self.defense
        if isinstance(defense, DefenseParams):
            defense = {"beta": defense.beta, "gamma": defense.gamma, "clamp_eps": defense.clamp_eps}
        return {"scale_bits": int(self.scale_bits), "classifier": self.classifier, "defense": defense, "layers": layers}

    @classmethod
    def from_dict(cls, doc: dict) -> "FixedPointNetwork":
        try:
            layers = []
            for spec in doc["layers"]:
                if spec["type"] == "dense":
                    rows, cols = int(spec["rows"]), int(spec["cols"])
                    w = spec["weights"]
                    if len(w) != rows * cols:
                        raise ModelFormatError(f"dense layer declares {rows}x{cols} but has {len(w)} weights")
                    layers.append({"type": "dense", "rows": rows, "cols": cols, "weights": w, "bias": spec["bias"]})
                else:
                    layers.append(dict(spec))
            defense = doc.get("defense")
            if defense is not None:
                defense = {k: float(defense[k]) for k in ("beta", "gamma")} | (
                    {"clamp_eps": float(defense["clamp_eps"])} if "clamp_eps" in defense else {}
                )
            model = cls(layers, int(doc.get("scale_bits", fp.DEFAULT_SCALE_BITS)), doc.get("classifier", "argmax"), defense)
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"malformed model document: {exc}") from None
        return model.fit()


def load_model(path) -> FixedPointNetwork:
    with open(path) as fh:
        return FixedPointNetwork.from_dict(json.load(fh))


def save_model(model: FixedPointNetwork, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1)


def random_network(sizes: Sequence[int], activation="relu", scale=1.0, seed=0, **kwargs) -> FixedPointNetwork:
    """Dense layers of the given widths with Gaussian weights; handy for
    tests and demos."""
    rng = np.random.default_rng(seed)
    layers = []
    for n, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append({
            "type": "dense",
            "weights": (rng.normal(size=(b, a)) * scale / math.sqrt(a)).tolist(),
            "bias": (rng.normal(size=b) * 0.1).tolist(),
        })
        if n < len(sizes) - 2:
            layers.append({"type": "activation", "kind": activation})
    return FixedPointNetwork(layers, **kwargs).fit()
