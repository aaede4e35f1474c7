"""Two-layer detector head over frozen feature spaces.

The model z-scores its input, applies one hidden relu layer, and emits a
fake-probability through a clamped sigmoid. Training minimizes a blend of a
margin contrastive loss over hidden features (same-label pairs pulled
together, different-label pairs pushed past the margin) and binary
cross-entropy, with hand-derived analytic gradients and a decoupled-decay
AdamW loop. Everything is plain numpy and deterministic for a fixed seed.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FileFormatError, NumericalError, ValidationError
from .features import FeatureSet
from .imaging import AugmentPolicy, policy_to_dict

HIDDEN_DIM = 1024
LOGIT_CLAMP = 30.0

MODEL_MAGIC = b"PFDM"
MODEL_VERSION = 1


@dataclass(eq=False)
class ClassifierModel:
    """Weights plus the input normalization and decision threshold.

    w1 is (hidden, dim); w2 is a length-hidden vector feeding the single
    output unit. norm_mu / norm_sigma are per-dimension train statistics.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: float
    norm_mu: np.ndarray
    norm_sigma: np.ndarray
    threshold: float = 0.5
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = float(self.b2)
        self.norm_mu = np.asarray(self.norm_mu, dtype=np.float64)
        self.norm_sigma = np.asarray(self.norm_sigma, dtype=np.float64)
        if self.w1.ndim != 2:
            raise ValidationError("w1 must be 2-D (hidden, dim)")
        h, d = self.w1.shape
        if h < 1 or d < 1:
            raise ValidationError("model dimensions must be positive")
        if self.b1.shape != (h,) or self.w2.shape != (h,):
            raise ValidationError("hidden-layer shapes disagree")
        if self.norm_mu.shape != (d,) or self.norm_sigma.shape != (d,):
            raise ValidationError("normalization shapes disagree")
        for arr in (self.w1, self.b1, self.w2, self.norm_mu, self.norm_sigma):
            if not np.isfinite(arr).all():
                raise ValidationError("non-finite model parameters")
        if not np.isfinite(self.b2):
            raise ValidationError("non-finite model parameters")
        if not (self.norm_sigma > 0).all():
            raise ValidationError("norm_sigma must be strictly positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValidationError("threshold must lie in (0, 1)")

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 1.0
    contrastive_weight: float = 0.3
    learning_rate: float = 1e-4
    weight_decay: float = 4e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    augment: AugmentPolicy | None = None

    def __post_init__(self):
        if not 0.0 <= self.contrastive_weight <= 1.0:
            raise ValidationError("contrastive_weight must lie in [0, 1]")
        if self.margin <= 0.0:
            raise ValidationError("margin must be positive")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be at least 2 for pair terms")
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if self.learning_rate <= 0.0 or self.weight_decay < 0.0:
            raise ValidationError("bad optimizer settings")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValidationError("momentum decay rates must lie in [0, 1)")
        if self.eps <= 0.0:
            raise ValidationError("eps must be positive")

    def to_dict(self) -> dict:
        out = {
            "margin": self.margin,
            "contrastive_weight": self.contrastive_weight,
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }
        if self.augment is not None:
            out["augment"] = policy_to_dict(self.augment)
        return out

    def digest(self) -> str:
        raw = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(raw).hexdigest()


@dataclass(frozen=True)
class LossBatch:
    """Everything the losses and their gradients need from one forward pass."""

    norm_inputs: np.ndarray  # N x D, post z-score
    hidden: np.ndarray  # N x H, post relu
    logits: np.ndarray  # N raw (pre-clamp) output activations
    probs: np.ndarray  # N, sigmoid of the clamped logits
    labels: np.ndarray  # N in {0, 1}
    pair_same: np.ndarray  # N x N, 1 where labels agree
    distances: np.ndarray  # N x N Euclidean between hidden rows


def _forward_arrays(model: ClassifierModel, x: np.ndarray):
    z = (x - model.norm_mu) / model.norm_sigma
    hidden = np.maximum(z @ model.w1.T + model.b1, 0.0)
    logits = hidden @ model.w2 + model.b2
    probs = 1.0 / (1.0 + np.exp(-np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)))
    return z, hidden, logits, probs


def forward(model: ClassifierModel, x) -> tuple[np.ndarray, float]:
    """Hidden features and fake-probability for a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ValidationError(f"expected input of length {model.dim}, got {x.shape}")
    if not np.isfinite(x).all():
        raise ValidationError("non-finite input")
    _, hidden, _, probs = _forward_arrays(model, x[None, :])
    return hidden[0], float(probs[0])


def predict_proba(model: ClassifierModel, x) -> np.ndarray:
    """Fake-probabilities for a stack of input rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ValidationError(f"expected (n, {model.dim}) inputs, got {x.shape}")
    return _forward_arrays(model, x)[3]


def _pairwise_distances(hidden: np.ndarray) -> np.ndarray:
    n, h = hidden.shape
    if n * n * h <= 1 << 23:
        # Exact symmetry and a zero diagonal come free from the difference form.
        diff = hidden[:, None, :] - hidden[None, :, :]
        return np.sqrt((diff * diff).sum(axis=2))
    # Gram form avoids the n*n*h intermediate for large batches; symmetrize
    # and clip so rounding never produces a negative squared distance.
    gram = hidden @ hidden.T
    gram = 0.5 * (gram + gram.T)
    sq = np.diag(gram)
    d2 = np.clip(sq[:, None] + sq[None, :] - 2.0 * gram, 0.0, None)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def forward_batch(model: ClassifierModel, x, labels) -> LossBatch:
    """Forward a batch and package pair structure for the losses."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ValidationError(f"expected (n, {model.dim}) inputs, got {x.shape}")
    if labels.shape != (x.shape[0],):
        raise ValidationError("labels must match batch rows")
    z, hidden, logits, probs = _forward_arrays(model, x)
    pair_same = (labels[:, None] == labels[None, :]).astype(np.float64)
    return LossBatch(
        norm_inputs=z,
        hidden=hidden,
        logits=logits,
        probs=probs,
        labels=labels,
        pair_same=pair_same,
        distances=_pairwise_distances(hidden),
    )


def contrastive_loss(batch: LossBatch, margin: float) -> float:
    """Mean over all ordered hidden-feature pairs, diagonal included."""
    n = batch.labels.shape[0]
    d = batch.distances
    pull = batch.pair_same * d * d
    push = (1.0 - batch.pair_same) * np.maximum(0.0, margin - d) ** 2
    return float((pull + push).sum() / (n * n))


def bce_loss(batch: LossBatch) -> float:
    p = batch.probs
    y = batch.labels
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def total_loss(batch: LossBatch, cfg: TrainConfig) -> float:
    w = cfg.contrastive_weight
    return w * contrastive_loss(batch, cfg.margin) + (1.0 - w) * bce_loss(batch)


def backward(model: ClassifierModel, batch: LossBatch, cfg: TrainConfig) -> dict:
    """Analytic gradients of total_loss for w1, b1, w2, b2.

    Each hidden row enters the pair loss through both pair roles; the relu
    subgradient at exactly zero is taken as zero, as is the hinge term's at
    zero distance.
    """
    n = batch.labels.shape[0]
    w = cfg.contrastive_weight

    # output-layer path
    clamp_open = (np.abs(batch.logits) < LOGIT_CLAMP).astype(np.float64)
    g_out = (1.0 - w) * (batch.probs - batch.labels) / n * clamp_open
    grad_w2 = g_out @ batch.hidden
    grad_b2 = float(g_out.sum())
    g_hidden = np.outer(g_out, model.w2)

    # pair-loss path: d/dh_i = (4/n^2) sum_j c_ij (h_i - h_j)
    if w > 0.0:
        d = batch.distances
        hinge = np.maximum(0.0, cfg.margin - d)
        safe = np.where(d > 0.0, d, 1.0)
        ratio = np.where(d > 0.0, hinge / safe, 0.0)
        coef = (4.0 / (n * n)) * (batch.pair_same - (1.0 - batch.pair_same) * ratio)
        g_hidden = g_hidden + w * (
            coef.sum(axis=1, keepdims=True) * batch.hidden - coef @ batch.hidden
        )

    g_pre = g_hidden * (batch.hidden > 0.0)
    return {
        "w1": g_pre.T @ batch.norm_inputs,
        "b1": g_pre.sum(axis=0),
        "w2": grad_w2,
        "b2": grad_b2,
    }


def init_model(dim: int, hidden: int, seed: int, norm_mu=None, norm_sigma=None) -> ClassifierModel:
    """Seeded uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases."""
    if dim < 1 or hidden < 1:
        raise ValidationError("model dimensions must be positive")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / dim)
    lim2 = np.sqrt(6.0 / hidden)
    w1 = rng.uniform(-lim1, lim1, size=(hidden, dim))
    w2 = rng.uniform(-lim2, lim2, size=hidden)
    return ClassifierModel(
        w1=w1,
        b1=np.zeros(hidden),
        w2=w2,
        b2=0.0,
        norm_mu=np.zeros(dim) if norm_mu is None else norm_mu,
        norm_sigma=np.ones(dim) if norm_sigma is None else norm_sigma,
    )


def train(features: FeatureSet, cfg: TrainConfig | None = None) -> ClassifierModel:
    """Fit the head on the training split of a feature set.

    Normalization statistics come from the train split alone; weights start
    from the seeded initializer; batches are reshuffled each epoch and the
    final partial batch is kept (its pair loss normalized by its own size
    squared). Feature contents are never mutated. The run is fully
    deterministic for a fixed config.
    """
    cfg = TrainConfig() if cfg is None else cfg
    recs = features.split("train")
    if not recs:
        raise ValidationError("training needs records in the train split")
    x32, y = features.matrix("train")
    if len(set(y.tolist())) < 2:
        raise ValidationError("training data contains a single class")
    x = x32.astype(np.float64)
    labels = y.astype(np.float64)

    mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    sigma = np.where(sigma < 1e-12, 1.0, sigma)

    rng = np.random.default_rng(cfg.seed)
    lim1 = np.sqrt(6.0 / features.dim)
    lim2 = np.sqrt(6.0 / HIDDEN_DIM)
    w1 = rng.uniform(-lim1, lim1, size=(HIDDEN_DIM, features.dim))
    w2 = rng.uniform(-lim2, lim2, size=HIDDEN_DIM)
    params = {"w1": w1, "b1": np.zeros(HIDDEN_DIM), "w2": w2, "b2": 0.0}
    decayed = ("w1", "w2")
    m_state = {k: np.zeros_like(v) if isinstance(v, np.ndarray) else 0.0 for k, v in params.items()}
    v_state = {k: np.zeros_like(v) if isinstance(v, np.ndarray) else 0.0 for k, v in params.items()}

    model = ClassifierModel(
        w1=params["w1"], b1=params["b1"], w2=params["w2"], b2=params["b2"],
        norm_mu=mu, norm_sigma=sigma,
    )
    n = x.shape[0]
    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = forward_batch(model, x[idx], labels[idx])
            loss = total_loss(batch, cfg)
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            grads = backward(model, batch, cfg)
            step += 1
            bc1 = 1.0 - cfg.beta1**step
            bc2 = 1.0 - cfg.beta2**step
            for key in params:
                g = grads[key]
                m_state[key] = cfg.beta1 * m_state[key] + (1.0 - cfg.beta1) * g
                v_state[key] = cfg.beta2 * v_state[key] + (1.0 - cfg.beta2) * (g * g)
                update = cfg.learning_rate * (m_state[key] / bc1) / (
                    np.sqrt(v_state[key] / bc2) + cfg.eps
                )
                if key in decayed:
                    update = update + cfg.learning_rate * cfg.weight_decay * params[key]
                params[key] = params[key] - update
            model.w1, model.b1 = params["w1"], params["b1"]
            model.w2, model.b2 = params["w2"], float(params["b2"])
    return ClassifierModel(
        w1=params["w1"],
        b1=params["b1"],
        w2=params["w2"],
        b2=float(params["b2"]),
        norm_mu=mu,
        norm_sigma=sigma,
        threshold=0.5,
        meta={
            "backend_name": features.backend_name,
            "seed": cfg.seed,
            "config_digest": cfg.digest(),
        },
    )


def with_threshold(model: ClassifierModel, threshold: float) -> ClassifierModel:
    return ClassifierModel(
        w1=model.w1, b1=model.b1, w2=model.w2, b2=model.b2,
        norm_mu=model.norm_mu, norm_sigma=model.norm_sigma,
        threshold=threshold, meta=dict(model.meta),
    )


def _model_bytes(model: ClassifierModel) -> bytes:
    h, d = model.w1.shape
    parts = [MODEL_MAGIC, struct.pack("<HII", MODEL_VERSION, d, h)]
    for arr in (model.w1, model.b1, model.w2):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    parts.append(struct.pack("<d", model.b2))
    for arr in (model.norm_mu, model.norm_sigma):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    parts.append(struct.pack("<d", model.threshold))
    meta_raw = json.dumps(model.meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_raw)))
    parts.append(meta_raw)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def model_digest(model: ClassifierModel) -> str:
    return hashlib.sha256(_model_bytes(model)).hexdigest()


def save_model(model: ClassifierModel, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_model_bytes(model))
    os.replace(tmp, path)


def load_model(path: str | Path) -> ClassifierModel:
    path = Path(path)
    buf = path.read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FileFormatError(f"{path}: truncated model file")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if take(4) != MODEL_MAGIC:
        raise FileFormatError(f"{path}: not a model file")
    version, d, h = struct.unpack("<HII", take(10))
    if version != MODEL_VERSION:
        raise FileFormatError(f"{path}: unsupported model version {version}")
    if d == 0 or h == 0:
        raise FileFormatError(f"{path}: zero model dimension")

    def take_f64(count: int) -> np.ndarray:
        return np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)

    w1 = take_f64(h * d).reshape(h, d)
    b1 = take_f64(h)
    w2 = take_f64(h)
    (b2,) = struct.unpack("<d", take(8))
    norm_mu = take_f64(d)
    norm_sigma = take_f64(d)
    (threshold,) = struct.unpack("<d", take(8))
    (meta_len,) = struct.unpack("<I", take(4))
    meta_raw = take(meta_len)
    (stored_crc,) = struct.unpack("<I", take(4))
    if pos != len(buf):
        raise FileFormatError(f"{path}: trailing bytes after checksum")
    if stored_crc != zlib.crc32(buf[: len(buf) - 4]):
        raise FileFormatError(f"{path}: checksum mismatch")
    try:
        meta = json.loads(meta_raw.decode("utf-8"))
        return ClassifierModel(
            w1=w1, b1=b1, w2=w2, b2=b2,
            norm_mu=norm_mu, norm_sigma=norm_sigma,
            threshold=threshold, meta=meta,
        )
    except (ValidationError, ValueError) as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
