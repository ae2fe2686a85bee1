"""Edge-probing classifier over frozen embedding stores.

A single linear projection is shared by both concepts of a pair; the two
projected vectors are concatenated and fed through a one-hidden-layer ReLU
MLP whose sigmoid output h estimates P(y is a hypernym of x). Positives are
upweighted 5:1 in the cross-entropy so one positive balances the five
negatives each triplet expands into. Only probe parameters train; embedding
stores are read-only inputs. All arithmetic is float64 and every random
choice flows from an explicit seed, so training is bit-reproducible.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .embeddings import EmbeddingStore, matrix_for_keys
from .ioutil import atomic_write_bytes, sha256_bytes

CLAMP_EPS = 1e-7
PARAM_ORDER = ("w_proj", "b_proj", "w_hidden", "b_hidden", "w_out", "b_out")
MAGIC = b"PRB1"


class ProbeError(ValueError):
    """Probe problem; code is one of "shape-mismatch", "empty-split",
    "empty-examples", "divergence", "bad-magic", "truncated", "non-finite",
    "bad-header", "no-smooth-batch"."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass
class ProbeConfig:
    input_dim: int | None = None  # None: take the store's width at train time
    proj_dim: int = 64
    hidden_dim: int = 384
    dropout: float = 0.425
    l2_lambda: float = 1e-4
    positive_weight: float = 5.0
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10


@dataclass
class ProbeModel:
    input_dim: int
    proj_dim: int
    hidden_dim: int
    params: dict
    meta: dict = field(default_factory=dict)


@dataclass
class TrainHistory:
    initial_loss: float
    epoch_train_loss: list
    epoch_val_f1: list
    best_epoch: int
    n_epochs: int


@dataclass
class TrainResult:
    model: ProbeModel
    history: TrainHistory


@dataclass(frozen=True)
class EvalReport:
    f1: float
    f1_std: float
    precision: float
    recall: float
    accuracy: float
    n_examples: int
    n_positive: int

    def to_dict(self) -> dict:
        return {
            "f1": self.f1,
            "f1_std": self.f1_std,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "n_examples": self.n_examples,
            "n_positive": self.n_positive,
        }


@dataclass
class GradientCheckReport:
    max_rel_error: float
    per_param: dict


def init_model(cfg: ProbeConfig, seed: int) -> ProbeModel:
    """Seeded He-uniform weights, zero biases, in the declared tensor order."""
    if cfg.input_dim is None:
        raise ProbeError("shape-mismatch", "input_dim must be set before init")
    rng = np.random.default_rng(seed)

    def he(fan_in: int, shape) -> np.ndarray:
        limit = math.sqrt(6.0 / fan_in)
        return rng.uniform(-limit, limit, shape)

    params = {
        "w_proj": he(cfg.input_dim, (cfg.input_dim, cfg.proj_dim)),
        "b_proj": np.zeros(cfg.proj_dim),
        "w_hidden": he(2 * cfg.proj_dim, (2 * cfg.proj_dim, cfg.hidden_dim)),
        "b_hidden": np.zeros(cfg.hidden_dim),
        "w_out": he(cfg.hidden_dim, (cfg.hidden_dim, 1)),
        "b_out": np.zeros(1),
    }
    return ProbeModel(cfg.input_dim, cfg.proj_dim, cfg.hidden_dim, params)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _forward_cache(model: ProbeModel, x, y, dropout_mask=None):
    p = model.params
    px = x @ p["w_proj"] + p["b_proj"]
    py = y @ p["w_proj"] + p["b_proj"]
    z = np.hstack([px, py])
    pre = z @ p["w_hidden"] + p["b_hidden"]
    act = np.maximum(pre, 0.0)
    if dropout_mask is not None:
        act = act * dropout_mask
    logit = (act @ p["w_out"] + p["b_out"])[:, 0]
    h = np.clip(_sigmoid(logit), CLAMP_EPS, 1.0 - CLAMP_EPS)
    return h, (x, y, z, pre, act)


def forward(model: ProbeModel, x, y) -> np.ndarray:
    """h for one pair (1-d inputs) or a batch (2-d inputs), dropout off."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ProbeError("shape-mismatch", f"x {x.shape} vs y {y.shape}")
    single = x.ndim == 1
    if single:
        x, y = x[None, :], y[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ProbeError("shape-mismatch", f"expected (*, {model.input_dim}), got {x.shape}")
    h, _ = _forward_cache(model, x, y)
    return h[0] if single else h


def weighted_bce(h, labels, positive_weight: float = 5.0) -> np.ndarray:
    """Per-example loss: positives cost positive_weight * -log h, negatives -log(1-h)."""
    h = np.clip(np.asarray(h, dtype=np.float64), CLAMP_EPS, 1.0 - CLAMP_EPS)
    labels = np.asarray(labels, dtype=np.float64)
    w = np.where(labels == 1.0, positive_weight, 1.0)
    return -w * (labels * np.log(h) + (1.0 - labels) * np.log1p(-h))


def l2_penalty(model: ProbeModel, l2_lambda: float) -> float:
    return l2_lambda * sum(
        float((model.params[name] ** 2).sum()) for name in PARAM_ORDER if name.startswith("w_")
    )


def batch_objective(model: ProbeModel, x, y, labels, cfg: ProbeConfig, dropout_mask=None) -> float:
    h, _ = _forward_cache(model, x, y, dropout_mask)
    return float(weighted_bce(h, labels, cfg.positive_weight).mean()) + l2_penalty(
        model, cfg.l2_lambda
    )


def backward(model: ProbeModel, x, y, labels, cfg: ProbeConfig, dropout_mask=None):
    """h plus analytic gradients of batch_objective for every parameter."""
    p = model.params
    h, (x, y, z, pre, act) = _forward_cache(model, x, y, dropout_mask)
    n = x.shape[0]
    labels = np.asarray(labels, dtype=np.float64)
    w = np.where(labels == 1.0, cfg.positive_weight, 1.0)
    # d(mean weighted BCE)/dlogit collapses to w * (h - label) / n
    dlogit = (w * (h - labels) / n)[:, None]
    grads = {
        "w_out": act.T @ dlogit + 2.0 * cfg.l2_lambda * p["w_out"],
        "b_out": dlogit.sum(axis=0),
    }
    dact = dlogit @ p["w_out"].T
    if dropout_mask is not None:
        dact = dact * dropout_mask
    dpre = dact * (pre > 0.0)
    grads["w_hidden"] = z.T @ dpre + 2.0 * cfg.l2_lambda * p["w_hidden"]
    grads["b_hidden"] = dpre.sum(axis=0)
    dz = dpre @ p["w_hidden"].T
    k = model.proj_dim
    dpx, dpy = dz[:, :k], dz[:, k:]
    grads["w_proj"] = x.T @ dpx + y.T @ dpy + 2.0 * cfg.l2_lambda * p["w_proj"]
    grads["b_proj"] = dpx.sum(axis=0) + dpy.sum(axis=0)
    return h, grads


class Adam:
    def __init__(self, params, learning_rate: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


def _keys(examples, which: str):
    if which == "x":
        return [f"{e.x}#{e.x_sentence}" for e in examples]
    return [f"{e.y}#{e.y_sentence}" for e in examples]


def _prf(pred: np.ndarray, labels: np.ndarray):
    tp = float(np.sum(pred & (labels == 1)))
    fp = float(np.sum(pred & (labels == 0)))
    fn = float(np.sum(~pred & (labels == 1)))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def train_probe(
    cfg: ProbeConfig, store: EmbeddingStore, examples, seed: int, layer: int | None = None
) -> TrainResult:
    """Fit a probe on the train split, early-stopping on validation F1.

    Keeps the parameters of the epoch with the best validation F1 (earliest
    epoch on ties). The store is never written to."""
    input_dim = store.dim_per_layer if layer is not None else store.width
    if cfg.input_dim is not None and cfg.input_dim != input_dim:
        raise ProbeError(
            "shape-mismatch", f"config input_dim {cfg.input_dim} != embedding width {input_dim}"
        )
    train_ex = [e for e in examples if e.split == "train"]
    val_ex = [e for e in examples if e.split == "valid"]
    if not train_ex or not val_ex:
        raise ProbeError(
            "empty-split", f"need train and valid examples, got {len(train_ex)}/{len(val_ex)}"
        )
    xt = matrix_for_keys(store, _keys(train_ex, "x"), layer)
    yt = matrix_for_keys(store, _keys(train_ex, "y"), layer)
    lt = np.array([e.label for e in train_ex], dtype=np.float64)
    xv = matrix_for_keys(store, _keys(val_ex, "x"), layer)
    yv = matrix_for_keys(store, _keys(val_ex, "y"), layer)
    lv = np.array([e.label for e in val_ex], dtype=np.float64)

    run_cfg = replace(cfg, input_dim=input_dim)
    model = init_model(run_cfg, seed)
    rng = np.random.default_rng([seed, 1])
    optimizer = Adam(model.params, cfg.learning_rate)
    keep = 1.0 - cfg.dropout

    initial_loss = batch_objective(model, xt, yt, lt, run_cfg)
    epoch_train_loss: list[float] = []
    epoch_val_f1: list[float] = []
    best_f1 = -1.0
    best_epoch = 0
    best_params = None
    since_best = 0
    n = len(train_ex)

    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            mask = None
            if cfg.dropout > 0.0:
                mask = (rng.random((len(idx), cfg.hidden_dim)) < keep) / keep
            h, grads = backward(model, xt[idx], yt[idx], lt[idx], run_cfg, mask)
            loss = float(weighted_bce(h, lt[idx], cfg.positive_weight).mean()) + l2_penalty(
                model, cfg.l2_lambda
            )
            if not np.isfinite(loss):
                raise ProbeError(
                    "divergence",
                    f"non-finite loss {loss!r} at epoch {epoch} batch {start // cfg.batch_size}",
                )
            optimizer.step(model.params, grads)
        epoch_train_loss.append(batch_objective(model, xt, yt, lt, run_cfg))
        hv, _ = _forward_cache(model, xv, yv)
        _, _, f1 = _prf(hv >= 0.5, lv)
        epoch_val_f1.append(f1)
        if f1 > best_f1:
            best_f1 = f1
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    meta = {
        "layer": layer,
        "seed": seed,
        "best_epoch": best_epoch,
        "val_f1": float(best_f1),
        "dropout": cfg.dropout,
        "l2_lambda": cfg.l2_lambda,
        "positive_weight": cfg.positive_weight,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
    }
    best_model = ProbeModel(input_dim, cfg.proj_dim, cfg.hidden_dim, best_params, meta)
    history = TrainHistory(
        initial_loss=initial_loss,
        epoch_train_loss=epoch_train_loss,
        epoch_val_f1=epoch_val_f1,
        best_epoch=best_epoch,
        n_epochs=len(epoch_val_f1),
    )
    return TrainResult(best_model, history)


def binary_report(h, labels, resamples: int = 1000, seed: int = 0) -> EvalReport:
    """Threshold-0.5 metrics plus a bootstrap std of F1 over seeded resamples."""
    h = np.asarray(h, dtype=np.float64)
    labels = np.asarray(labels)
    if h.size == 0:
        raise ProbeError("empty-examples", "nothing to score")
    pred = h >= 0.5
    is_pos = labels == 1
    precision, recall, f1 = _prf(pred, labels)
    accuracy = float(np.mean(pred == is_pos))
    n = h.size
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(resamples, n))
    pm, lm = pred[idx], is_pos[idx]
    tp = (pm & lm).sum(axis=1).astype(np.float64)
    fp = (pm & ~lm).sum(axis=1).astype(np.float64)
    fn = (~pm & lm).sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        r = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1s = np.where(p + r > 0, 2.0 * p * r / (p + r), 0.0)
    return EvalReport(
        f1=f1,
        f1_std=float(np.std(f1s)),
        precision=precision,
        recall=recall,
        accuracy=accuracy,
        n_examples=int(n),
        n_positive=int(is_pos.sum()),
    )


def evaluate(
    model: ProbeModel,
    store: EmbeddingStore,
    examples,
    layer: int | None = None,
    resamples: int = 1000,
    seed: int = 0,
) -> EvalReport:
    examples = list(examples)
    if not examples:
        raise ProbeError("empty-examples", "no examples to evaluate")
    x = matrix_for_keys(store, _keys(examples, "x"), layer)
    y = matrix_for_keys(store, _keys(examples, "y"), layer)
    labels = np.array([e.label for e in examples])
    h = forward(model, x, y)
    return binary_report(h, labels, resamples=resamples, seed=seed)


def layer_sweep(
    cfg: ProbeConfig, store: EmbeddingStore, examples, seed: int, resamples: int = 1000
) -> list:
    """Train one probe per layer with the same seed; report test-split metrics."""
    test_ex = [e for e in examples if e.split == "test"]
    out = []
    for k in range(store.layer_count):
        result = train_probe(cfg, store, examples, seed, layer=k)
        out.append((k, evaluate(result.model, store, test_ex, layer=k, resamples=resamples)))
    return out


def gradient_check(cfg: ProbeConfig, seed: int, n_examples: int = 6, step: float = 1e-5):
    """Analytic vs central-difference gradients on a tiny seeded model.

    Resamples inputs until no ReLU pre-activation sits near its kink and no
    logit is near the clamp, so the objective is smooth at the check point."""
    if cfg.input_dim is None:
        raise ProbeError("shape-mismatch", "gradient_check needs an explicit input_dim")
    run_cfg = replace(cfg, dropout=0.0)
    model = init_model(run_cfg, seed)
    rng = np.random.default_rng([seed, 3])
    p = model.params
    for _ in range(64):
        x = rng.standard_normal((n_examples, run_cfg.input_dim))
        y = rng.standard_normal((n_examples, run_cfg.input_dim))
        labels = rng.integers(0, 2, n_examples).astype(np.float64)
        pre = (
            np.hstack([x @ p["w_proj"] + p["b_proj"], y @ p["w_proj"] + p["b_proj"]])
            @ p["w_hidden"]
            + p["b_hidden"]
        )
        logit = np.maximum(pre, 0.0) @ p["w_out"] + p["b_out"]
        if np.abs(pre).min() > 1e-2 and np.abs(logit).max() < 12.0:
            break
    else:
        raise ProbeError("no-smooth-batch", "could not find a batch away from ReLU kinks")
    _, analytic = backward(model, x, y, labels, run_cfg)
    per_param = {}
    for name in PARAM_ORDER:
        tensor = model.params[name]
        numeric = np.zeros_like(tensor)
        flat_t = tensor.ravel()
        flat_n = numeric.ravel()
        for i in range(flat_t.size):
            orig = flat_t[i]
            flat_t[i] = orig + step
            hi = batch_objective(model, x, y, labels, run_cfg)
            flat_t[i] = orig - step
            lo = batch_objective(model, x, y, labels, run_cfg)
            flat_t[i] = orig
            flat_n[i] = (hi - lo) / (2.0 * step)
        denom = np.maximum(np.maximum(np.abs(analytic[name]), np.abs(numeric)), 1e-3)
        per_param[name] = float(np.max(np.abs(analytic[name] - numeric) / denom))
    return GradientCheckReport(max(per_param.values()), per_param)


# ---------------------------------------------------------------------------
# binary format


def _shapes(input_dim: int, proj_dim: int, hidden_dim: int) -> dict:
    return {
        "w_proj": (input_dim, proj_dim),
        "b_proj": (proj_dim,),
        "w_hidden": (2 * proj_dim, hidden_dim),
        "b_hidden": (hidden_dim,),
        "w_out": (hidden_dim, 1),
        "b_out": (1,),
    }


def model_fingerprint(model: ProbeModel) -> str:
    """sha256 over the parameter tensors in declared order; survives save/load."""
    parts = [
        np.ascontiguousarray(model.params[name], dtype="<f8").tobytes() for name in PARAM_ORDER
    ]
    return sha256_bytes(b"".join(parts))


def save_model(model: ProbeModel, path: str) -> None:
    shapes = _shapes(model.input_dim, model.proj_dim, model.hidden_dim)
    header = {
        "input_dim": model.input_dim,
        "proj_dim": model.proj_dim,
        "hidden_dim": model.hidden_dim,
        "meta": model.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(blob)), blob]
    for name in PARAM_ORDER:
        tensor = np.asarray(model.params[name], dtype=np.float64)
        if tensor.shape != shapes[name]:
            raise ProbeError("shape-mismatch", f"{name} has shape {tensor.shape}, want {shapes[name]}")
        if not np.isfinite(tensor).all():
            raise ProbeError("non-finite", f"{name} contains nan or inf")
        parts.append(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_model(path: str) -> ProbeModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 8 or data[:4] != MAGIC:
        raise ProbeError("bad-magic", f"{path} is not a probe model file")
    (blob_len,) = struct.unpack_from("<I", data, 4)
    if len(data) < 8 + blob_len:
        raise ProbeError("truncated", f"{path}: header claims {blob_len} bytes")
    try:
        header = json.loads(data[8 : 8 + blob_len])
        input_dim = int(header["input_dim"])
        proj_dim = int(header["proj_dim"])
        hidden_dim = int(header["hidden_dim"])
        meta = header.get("meta", {})
    except (ValueError, KeyError, TypeError) as exc:
        raise ProbeError("bad-header", f"{path}: {exc}") from exc
    shapes = _shapes(input_dim, proj_dim, hidden_dim)
    params = {}
    offset = 8 + blob_len
    for name in PARAM_ORDER:
        shape = shapes[name]
        nbytes = 8 * int(np.prod(shape))
        if offset + nbytes > len(data):
            raise ProbeError("truncated", f"{path}: {name} tensor cut short")
        params[name] = (
            np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += nbytes
    if offset != len(data):
        raise ProbeError("truncated", f"{path}: {len(data) - offset} trailing bytes")
    for name, tensor in params.items():
        if not np.isfinite(tensor).all():
            raise ProbeError("non-finite", f"{path}: {name} contains nan or inf")
    return ProbeModel(input_dim, proj_dim, hidden_dim, params, meta)
