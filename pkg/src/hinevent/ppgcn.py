"""Pairwise graph convolutional classifier over weighted path similarities.

A two-layer graph convolution runs on the adjacency built from a convex
combination of per-path similarity matrices; the combination weights are
learned jointly with the layer weights through an unconstrained logit
vector and a softmax. Pairs of anchors are classified same/different from
the ratio of their output vector norms through ``-log10(x - 1 + c)``; an
angle (cosine) scorer is kept as the ablation baseline. Gradients are
computed by explicit backpropagation, including through the degree
normalization and the softmax over path weights.
"""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .hin import Hin, NodeType, RelationType
from .ingest import instance_elements

LN10 = math.log(10.0)
MODULUS = "modulus"
COSINE = "cosine"
_SCORE_BOUNDARY = {MODULUS: 0.0, COSINE: 0.5}


def sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(t, dtype=np.float64)))


def softmax(v):
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max())
    return e / e.sum()


@dataclass
class TrainConfig:
    anchors_per_round: int = 1024  # R
    batch_size: int = 64           # B
    batches_per_epoch: int = 64    # E
    learning_rate: float = 0.2
    epochs: int = 100
    hidden_dim: int = 32
    output_dim: int = 32
    seed: int = 0
    score: str = MODULUS
    freeze_weights_uniform: bool = False  # equal-weight ablation

    def __post_init__(self):
        if min(self.anchors_per_round, self.batch_size, self.batches_per_epoch,
               self.hidden_dim, self.output_dim) < 1 or self.learning_rate <= 0:
            raise ValueError("config values must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.score not in _SCORE_BOUNDARY:
            raise ValueError(f"unknown score {self.score!r}")


@dataclass
class ModelParams:
    w0: np.ndarray
    w1: np.ndarray
    omega_logits: np.ndarray
    c: float = 0.01
    seed: int = 0

    @property
    def path_weights(self) -> np.ndarray:
        return softmax(self.omega_logits)

    @classmethod
    def init(cls, feature_dim: int, hidden_dim: int, output_dim: int, n_paths: int,
             rng: np.random.Generator, c: float = 0.01, seed: int = 0) -> "ModelParams":
        w0 = rng.normal(0.0, math.sqrt(2.0 / feature_dim), size=(feature_dim, hidden_dim))
        w1 = rng.normal(0.0, math.sqrt(1.0 / hidden_dim), size=(hidden_dim, output_dim))
        return cls(w0=w0, w1=w1, omega_logits=np.zeros(n_paths), c=c, seed=seed)

    def save(self, path) -> None:
        np.savez(
            path, w0=self.w0, w1=self.w1, omega_logits=self.omega_logits,
            c=np.float64(self.c), seed=np.int64(self.seed),
        )

    @classmethod
    def load(cls, path) -> "ModelParams":
        data = np.load(path)
        return cls(w0=data["w0"], w1=data["w1"], omega_logits=data["omega_logits"],
                   c=float(data["c"]), seed=int(data["seed"]))


@dataclass(frozen=True)
class PairSample:
    i: int
    j: int
    positive: bool


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric degree normalization of ``a + I``; rows of zeros are safe."""
    a = np.asarray(a, dtype=np.float64)
    d = a.sum(axis=1) + 1.0  # the added self-loop keeps every degree >= 1
    dinv = 1.0 / np.sqrt(d)
    a_tilde = a + np.eye(a.shape[0])
    return a_tilde * dinv[:, None] * dinv[None, :]


def _combine(s_matrices, weights):
    acc = np.zeros_like(s_matrices[0], dtype=np.float64)
    for w, s in zip(weights, s_matrices):
        acc += w * s
    return acc


def _effective_weights(params: ModelParams, frozen_uniform: bool) -> np.ndarray:
    if frozen_uniform:
        m = params.omega_logits.shape[0]
        return np.full(m, 1.0 / m)
    return softmax(params.omega_logits)


def _forward_cache(params: ModelParams, s_matrices, x, frozen_uniform=False) -> dict:
    omega = _effective_weights(params, frozen_uniform)
    n = x.shape[0]
    a_tilde = _combine(s_matrices, omega) + np.eye(n)
    d = a_tilde.sum(axis=1)
    dinv = 1.0 / np.sqrt(d)
    a_hat = a_tilde * dinv[:, None] * dinv[None, :]
    xw0 = x @ params.w0
    pre1 = a_hat @ xw0
    h1 = np.maximum(pre1, 0.0)
    h1w1 = h1 @ params.w1
    z = a_hat @ h1w1
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite activations in forward pass")
    return {"omega": omega, "d": d, "dinv": dinv, "a_hat": a_hat, "xw0": xw0,
            "pre1": pre1, "h1": h1, "h1w1": h1w1, "z": z}


def forward(params: ModelParams, s_matrices, x, frozen_uniform: bool = False) -> np.ndarray:
    """Graph-level output: rectified hidden layer, linear output layer."""
    return _forward_cache(params, s_matrices, np.asarray(x, dtype=np.float64),
                          frozen_uniform)["z"]


def modulus_ratio_score(v_i, v_j, c: float = 0.01) -> tuple[float, float]:
    """Norm ratio x >= 1 and score -log10(x - 1 + c); symmetric in its arguments.

    Same class is predicted when sigmoid(score) >= 0.5, i.e. x <= 2 - c.
    A zero-norm vector yields a different-class score with a warning.
    """
    ni = float(np.linalg.norm(v_i))
    nj = float(np.linalg.norm(v_j))
    if ni == 0.0 or nj == 0.0:
        warnings.warn("zero-norm representation in pair score", RuntimeWarning, stacklevel=2)
        return math.inf, -math.inf
    x = max(ni, nj) / min(ni, nj)
    return x, -math.log10(x - 1.0 + c)


def cosine_score(v_i, v_j) -> float:
    """Angle baseline: cosine similarity, same class iff score >= 0.5."""
    ni = float(np.linalg.norm(v_i))
    nj = float(np.linalg.norm(v_j))
    if ni == 0.0 or nj == 0.0:
        warnings.warn("zero-norm representation in pair score", RuntimeWarning, stacklevel=2)
        return -1.0
    return float(np.dot(v_i, v_j) / (ni * nj))


def pair_logit(z: np.ndarray, i: int, j: int, score: str, c: float):
    """Decision logit t (same-class iff t >= 0); None when a norm is zero."""
    if not np.any(z[i]) or not np.any(z[j]):
        warnings.warn("zero-norm representation in pair score", RuntimeWarning, stacklevel=2)
        return None
    if score == MODULUS:
        return modulus_ratio_score(z[i], z[j], c)[1]
    return cosine_score(z[i], z[j]) - 0.5


def sample_pairs(classes, config: TrainConfig, rng: np.random.Generator) -> list[PairSample]:
    """Draw R anchors and one positive plus one negative partner for each.

    Anchors whose class has a single member are skipped for positive
    sampling with a diagnostic. Raises when fewer than two classes exist.
    """
    if isinstance(classes, dict):
        anchors = np.array(sorted(classes), dtype=np.int64)
        labels = np.array([classes[a] for a in anchors])
    else:
        labels = np.asarray(classes)
        anchors = np.arange(labels.shape[0], dtype=np.int64)
    unique = np.unique(labels)
    if unique.shape[0] < 2:
        raise ValueError("pair sampling needs at least 2 classes")
    members = {cls: anchors[labels == cls] for cls in unique}
    r = config.anchors_per_round
    chosen = rng.choice(anchors, size=r, replace=r > anchors.shape[0])
    label_of = dict(zip(anchors.tolist(), labels.tolist()))
    pool: list[PairSample] = []
    skipped = 0
    for a in chosen.tolist():
        cls = label_of[a]
        same = members[cls]
        same = same[same != a]
        if same.shape[0] == 0:
            skipped += 1
        else:
            pool.append(PairSample(a, int(rng.choice(same)), True))
        other = int(rng.choice(anchors))
        while label_of[other] == cls:
            other = int(rng.choice(anchors))
        pool.append(PairSample(a, other, False))
    if skipped:
        warnings.warn(f"skipped positive sampling for {skipped} singleton-class anchors",
                      RuntimeWarning, stacklevel=2)
    return pool


def _bce(t: float, y: float) -> float:
    # stable binary cross entropy on the logit
    return max(t, 0.0) - t * y + math.log1p(math.exp(-abs(t)))


def loss_and_gradients(params: ModelParams, s_matrices, x, batch,
                       score: str = MODULUS, frozen_uniform: bool = False):
    """Mean pair cross-entropy and gradients for w0, w1 and the weight logits.

    Backpropagates through the score, the vector norms, both layers, the
    degree normalization and the softmax combination. Pairs hitting a
    zero-norm representation are excluded from the mean with a warning.
    """
    x = np.asarray(x, dtype=np.float64)
    cache = _forward_cache(params, s_matrices, x, frozen_uniform)
    z = cache["z"]
    n, _ = z.shape
    dz = np.zeros_like(z)
    total = 0.0
    used = 0
    skipped = 0
    per_pair = []
    for pair in batch:
        y = 1.0 if pair.positive else 0.0
        vi, vj = z[pair.i], z[pair.j]
        ni, nj = float(np.linalg.norm(vi)), float(np.linalg.norm(vj))
        if ni == 0.0 or nj == 0.0:
            skipped += 1
            continue
        if score == MODULUS:
            big, small = (pair.i, pair.j) if ni >= nj else (pair.j, pair.i)
            nb, ns = max(ni, nj), min(ni, nj)
            ratio = nb / ns
            u = ratio - 1.0 + params.c
            t = -math.log(u) / LN10
            per_pair.append((pair, t, y, big, small, nb, ns, u))
        else:
            s = float(np.dot(vi, vj) / (ni * nj))
            t = s - 0.5
            per_pair.append((pair, t, y, ni, nj, s, None, None))
        total += _bce(t, y)
        used += 1
    if skipped:
        warnings.warn(f"{skipped} pairs skipped for zero-norm representations",
                      RuntimeWarning, stacklevel=2)
    if used == 0:
        zero = {"w0": np.zeros_like(params.w0), "w1": np.zeros_like(params.w1),
                "omega_logits": np.zeros_like(params.omega_logits)}
        return 0.0, zero
    inv = 1.0 / used
    for entry in per_pair:
        if score == MODULUS:
            pair, t, y, big, small, nb, ns, u = entry
            g = (float(sigmoid(t)) - y) * inv       # dL/dt
            ds_dx = -1.0 / (u * LN10)
            dz[big] += g * ds_dx * (1.0 / ns) * (z[big] / nb)
            dz[small] += g * ds_dx * (-(nb / ns) / ns) * (z[small] / ns)
        else:
            pair, t, y, ni, nj, s, _, _ = entry
            g = (float(sigmoid(t)) - y) * inv
            vi, vj = z[pair.i], z[pair.j]
            dz[pair.i] += g * (vj / (ni * nj) - s * vi / (ni * ni))
            dz[pair.j] += g * (vi / (ni * nj) - s * vj / (nj * nj))
    a_hat = cache["a_hat"]
    h1 = cache["h1"]
    dw1 = (a_hat @ h1).T @ dz
    d_ahat = dz @ cache["h1w1"].T
    dh1 = a_hat @ (dz @ params.w1.T)
    dpre1 = dh1 * (cache["pre1"] > 0)
    dw0 = (a_hat @ x).T @ dpre1
    d_ahat += dpre1 @ cache["xw0"].T
    dlogits = np.zeros_like(params.omega_logits)
    if not frozen_uniform and params.omega_logits.shape[0] > 1:
        dinv = cache["dinv"]
        d = cache["d"]
        p = d_ahat * a_hat
        trow = p.sum(axis=1) / d
        tcol = p.sum(axis=0) / d
        d_atilde = d_ahat * np.outer(dinv, dinv) - 0.5 * (trow[:, None] + tcol[None, :])
        domega = np.array([(d_atilde * s).sum() for s in s_matrices])
        omega = cache["omega"]
        dlogits = omega * (domega - float(domega @ omega))
    loss = total * inv
    if not (np.isfinite(loss) and np.all(np.isfinite(dw0)) and np.all(np.isfinite(dw1))):
        raise FloatingPointError("non-finite loss or gradient")
    return loss, {"w0": dw0, "w1": dw1, "omega_logits": dlogits}


def pair_accuracy(params: ModelParams, s_matrices, x, pairs,
                  score: str = MODULUS, frozen_uniform: bool = False) -> float:
    z = forward(params, s_matrices, x, frozen_uniform)
    correct = 0
    for pair in pairs:
        t = pair_logit(z, pair.i, pair.j, score, params.c)
        predicted_same = t is not None and t >= 0.0
        correct += predicted_same == pair.positive
    return correct / len(pairs) if pairs else 0.0


def train(params: ModelParams, s_matrices, x, classes, config: TrainConfig):
    """SGD over re-sampled pair pools; returns params and per-epoch pool accuracy."""
    rng = np.random.default_rng(config.seed)
    history: list[float] = []
    for epoch in range(config.epochs):
        pool = sample_pairs(classes, config, rng)
        for batch_no in range(config.batches_per_epoch):
            picks = rng.integers(0, len(pool), size=config.batch_size)
            batch = [pool[int(k)] for k in picks]
            try:
                _, grads = loss_and_gradients(params, s_matrices, x, batch,
                                              score=config.score,
                                              frozen_uniform=config.freeze_weights_uniform)
            except FloatingPointError as exc:
                raise FloatingPointError(f"{exc} (epoch {epoch}, batch {batch_no})") from exc
            params.w0 -= config.learning_rate * grads["w0"]
            params.w1 -= config.learning_rate * grads["w1"]
            if not config.freeze_weights_uniform:
                params.omega_logits -= config.learning_rate * grads["omega_logits"]
        history.append(pair_accuracy(params, s_matrices, x, pool,
                                     score=config.score,
                                     frozen_uniform=config.freeze_weights_uniform))
    return params, history


def classify_test(params: ModelParams, s_matrices, x, train_classes: dict, t: int,
                  score: str = MODULUS, frozen_uniform: bool = False):
    """Assign a held-out anchor to the class with the highest same-class rate.

    For each class the probability is the fraction of training members
    whose pair with `t` is predicted same-class; ties and the all-zero
    case resolve to the lowest class id, the latter with a no-match flag.
    """
    if t in train_classes:
        raise ValueError("test anchor present in training classes")
    if not train_classes:
        raise ValueError("empty training class map")
    z = forward(params, s_matrices, np.asarray(x, dtype=np.float64), frozen_uniform)
    by_class: dict = {}
    for anchor, cls in train_classes.items():
        by_class.setdefault(cls, []).append(anchor)
    best_cls, best_prob = None, -1.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for cls in sorted(by_class):
            hits = 0
            for member in by_class[cls]:
                logit = pair_logit(z, t, member, score, params.c)
                hits += logit is not None and logit >= 0.0
            prob = hits / len(by_class[cls])
            if prob > best_prob:
                best_cls, best_prob = cls, prob
    return best_cls, best_prob == 0.0


_FEATURE_TYPES = (NodeType.KEYWORD, NodeType.ENTITY, NodeType.TOPIC, NodeType.USER)


def _bucket(kind: str, key: str, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(f"{kind}:{key}".encode("utf-8"), digest_size=8).digest()
    h = int.from_bytes(digest, "big")
    return h % dim, 1.0 if (h >> 63) & 1 == 0 else -1.0


def hashed_features(hin: Hin, anchor: NodeType = NodeType.EVENT_INSTANCE,
                    dim: int = 128) -> np.ndarray:
    """Deterministic hashed bag-of-elements embedding, one L2-normalized row
    per anchor node. Event rows pool the elements of their member instances;
    time slots are excluded so features stay time-free.
    """
    n = hin.node_count(anchor)
    out = np.zeros((n, dim))
    for i in range(n):
        if anchor is NodeType.EVENT_INSTANCE:
            member_ids = [i]
        else:
            from .hin import NodeRef
            member_ids = hin.neighbors(RelationType.CONSISTS_OF, NodeRef(anchor, i))
        for inst in member_ids:
            for kind, keys in instance_elements(hin, inst).items():
                if kind not in _FEATURE_TYPES:
                    continue
                for key in keys:
                    b, sign = _bucket(kind.value, key, dim)
                    out[i, b] += sign
        norm = np.linalg.norm(out[i])
        if norm > 0:
            out[i] /= norm
    return out
