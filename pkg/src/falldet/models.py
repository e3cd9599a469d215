"""Baseline window classifiers implemented on numpy.

All models consume flattened ``w x 75`` windows (scaled float32) and return a
real score where higher means more fall-like.  Scoring is computed row by row
with element-wise operations and per-row reductions, so scoring a window alone
or inside a batch gives bit-identical results.  The live detector relies on it.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .domain import b64_decode_array, b64_encode_array
from .errors import MalformedModelFile, NonFiniteLoss, ShapeMismatch, SingleClassTraining
from .metrics import EpochMetrics, confusion_at, roc_auc, select_best_epoch, youden_threshold
from .preprocess import AX_COLS, AY_COLS, AZ_COLS, N_FEATURES, ScalerParams, WindowSet

MODEL_FORMAT = "falldet-model"


class ModelKind(str, Enum):
    Threshold = "Threshold"
    LinearRegression = "LinearRegression"
    KNN = "KNN"
    GaussianNB = "GaussianNB"
    BernoulliNB = "BernoulliNB"
    MLP = "MLP"


KIND_ALIASES = {
    "threshold": ModelKind.Threshold, "linreg": ModelKind.LinearRegression,
    "linear": ModelKind.LinearRegression, "linearregression": ModelKind.LinearRegression,
    "knn": ModelKind.KNN, "gnb": ModelKind.GaussianNB, "gaussiannb": ModelKind.GaussianNB,
    "bnb": ModelKind.BernoulliNB, "bernoullinb": ModelKind.BernoulliNB, "mlp": ModelKind.MLP,
}


def parse_kind(name: str) -> ModelKind:
    try:
        return KIND_ALIASES.get(name.lower()) or ModelKind(name)
    except ValueError:
        raise ValueError(f"unknown model kind {name!r}") from None


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    k: int = 3
    hidden_width: int = 500
    epochs: int = 100
    lr: float = 0.01
    weight_decay: float = 1e-4
    momentum: float = 0.9
    batch: int = 512
    seed: int = 0
    ridge: float = 1e-4
    var_floor: float = 1e-9
    alpha: float = 1.0
    plateau_factor: float = 0.1
    plateau_patience: int = 5

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError("k must be odd and >= 1")
        if self.epochs < 1 or self.hidden_width < 1 or self.batch < 1:
            raise ValueError("epochs, hidden_width and batch must be >= 1")

    def to_json(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ModelSpec":
        return cls(**obj)


@dataclass(eq=False)
class TrainedModel:
    spec: ModelSpec
    w: int
    params: dict[str, np.ndarray]
    history: list[EpochMetrics] = field(default_factory=list)
    scaler_id: str = ""
    best_epoch: int = 0

    def __post_init__(self):
        self.params = {k: np.ascontiguousarray(v, dtype=np.float32) for k, v in self.params.items()}
        self._cache: dict[str, np.ndarray] = {}

    @property
    def n_inputs(self) -> int:
        return self.w * N_FEATURES

    def p64(self, name: str) -> np.ndarray:
        """float64 copy of a parameter block, cached."""
        if name not in self._cache:
            self._cache[name] = self.params[name].astype(np.float64)
        return self._cache[name]


# ---------------------------------------------------------------------------
# scoring


def _flat(model: TrainedModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        if X.shape[1:] != (model.w, N_FEATURES):
            raise ShapeMismatch(f"windows of shape {X.shape[1:]} do not match model w={model.w}")
        X = X.reshape(len(X), -1)
    elif X.ndim != 2 or X.shape[1] != model.n_inputs:
        raise ShapeMismatch(f"expected (m, {model.w}, 75) windows, got {X.shape}")
    return X


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # scalar libm per element: identical results wherever the value sits in an array
    out = np.empty(len(z))
    for i, v in enumerate(z.tolist()):
        out[i] = 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))
    return out


def _check_params(model: TrainedModel, name: str, cols: int) -> None:
    got = model.params[name].shape[-1]
    if got != cols:
        raise ShapeMismatch(f"parameter {name} expects {got} inputs, windows give {cols}")


def _score_threshold(model, X):
    x = X.astype(np.float64) * model.p64("inv_scale") + model.p64("inv_offset")
    w = model.w
    x = x.reshape(len(X), w, N_FEATURES)
    mag = np.sqrt(x[..., AX_COLS] ** 2 + x[..., AY_COLS] ** 2 + x[..., AZ_COLS] ** 2)
    return mag.reshape(len(X), -1).max(axis=1)


def _score_linear(model, X):
    beta = model.p64("beta")
    _check_params(model, "beta", X.shape[1] + 1)
    return (X.astype(np.float64) * beta[:-1]).sum(axis=1) + beta[-1]


def _score_knn(model, X, block: int = 256):
    Xtr32 = model.params["X"]
    ytr = model.params["y"]
    _check_params(model, "X", X.shape[1])
    k = model.spec.k
    if len(Xtr32) < k:
        raise ShapeMismatch(f"KNN holds {len(Xtr32)} training windows, fewer than k={k}")
    Xtr = model.p64("X")
    if "sqnorm" not in model._cache:
        model._cache["sqnorm"] = (Xtr * Xtr).sum(axis=1)
    tt = model._cache["sqnorm"]
    tt_max = float(tt.max())
    # f32 dot products err by at most ~d * 2**-24 * (|q|^2 + |t|^2) / 2
    rel = 2.0 * X.shape[1] * 2.0 ** -24
    out = np.empty(len(X))
    for b0 in range(0, len(X), block):
        Q32 = X[b0:b0 + block]
        Q = Q32.astype(np.float64)
        qq = (Q * Q).sum(axis=1)
        approx = qq[:, None] - 2.0 * (Q32 @ Xtr32.T).astype(np.float64) + tt[None, :]
        kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        for i in range(len(Q)):
            # the shortlist is approximate; ranking uses exact row-wise distances
            tol = 2.0 * rel * (qq[i] + tt_max) + 1e-9
            cand = np.flatnonzero(approx[i] <= kth[i] + tol)
            d = ((Xtr[cand] - Q[i]) ** 2).sum(axis=1)
            order = np.lexsort((cand, d))[:k]
            out[b0 + i] = float(ytr[cand[order]].astype(np.float64).sum()) / k
    return out


def _gnb_loglik(model, X):
    x = X.astype(np.float64)
    ll = []
    for c in (0, 1):
        mu, var = model.p64(f"mean{c}"), model.p64(f"var{c}")
        const = model._cache.get(f"const{c}")
        if const is None:
            const = model._cache[f"const{c}"] = (-0.5 * np.log(2 * np.pi * var)).sum() + math.log(
                float(model.params["prior"][c]))
        ll.append(const - 0.5 * ((x - mu) ** 2 / var).sum(axis=1))
    return ll


def _bnb_loglik(model, X):
    b = X > 0
    ll = []
    for c in (0, 1):
        key = f"logs{c}"
        if key not in model._cache:
            p = model.p64(f"p{c}")
            model._cache[key] = (np.log(p), np.log1p(-p), math.log(float(model.params["prior"][c])))
        lp, lq, lprior = model._cache[key]
        ll.append(np.where(b, lp, lq).sum(axis=1) + lprior)
    return ll


def mlp_forward_exact(model, X, block: int = 8):
    W1, b1, W2, b2 = (model.p64(n) for n in ("W1", "b1", "W2", "b2"))
    _check_params(model, "W1", X.shape[1])
    z = np.empty(len(X))
    for b0 in range(0, len(X), block):
        Q = X[b0:b0 + block].astype(np.float64)
        h = np.maximum((Q[:, None, :] * W1[None, :, :]).sum(axis=2) + b1, 0.0)
        z[b0:b0 + block] = (h * W2[0]).sum(axis=1) + b2[0]
    return z


def score_windows(model: TrainedModel, X) -> np.ndarray:
    """Scores for a stack of windows ``(m, w, 75)``; float64, higher = more fall-like."""
    X = _flat(model, X)
    kind = model.spec.kind
    if kind == ModelKind.Threshold:
        return _score_threshold(model, X)
    if kind == ModelKind.LinearRegression:
        return _score_linear(model, X)
    if kind == ModelKind.KNN:
        return _score_knn(model, X)
    if kind in (ModelKind.GaussianNB, ModelKind.BernoulliNB):
        _check_params(model, "mean0" if kind == ModelKind.GaussianNB else "p0", X.shape[1])
        l0, l1 = (_gnb_loglik if kind == ModelKind.GaussianNB else _bnb_loglik)(model, X)
        return _sigmoid(l1 - l0)
    if kind == ModelKind.MLP:
        return _sigmoid(mlp_forward_exact(model, X))
    raise ValueError(f"unsupported model kind {kind}")


def score_sample(model: TrainedModel, window) -> float:
    window = np.asarray(window)
    if window.shape != (model.w, N_FEATURES) and window.shape != (model.n_inputs,):
        raise ShapeMismatch(f"window of shape {window.shape} does not match model w={model.w}")
    return float(score_windows(model, window.reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# MLP internals


def mlp_init(d: int, width: int, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {
        "W1": (rng.standard_normal((width, d)) * math.sqrt(2.0 / d)).astype(dtype),
        "b1": np.zeros(width, dtype=dtype),
        "W2": (rng.standard_normal((1, width)) * math.sqrt(2.0 / width)).astype(dtype),
        "b2": np.zeros(1, dtype=dtype),
    }


def _mlp_logits(params, X):
    z1 = X @ params["W1"].T + params["b1"]
    h = np.maximum(z1, 0)
    return z1, h, h @ params["W2"][0] + params["b2"][0]


def mlp_loss(params, X, y, weight_decay: float = 0.0):
    """Mean binary cross-entropy plus (weight_decay / 2) * (|W1|^2 + |W2|^2)."""
    # evaluated at least in float64; longdouble parameters keep their precision
    dt = np.result_type(params["W1"].dtype, np.float64)
    _, _, z = _mlp_logits({k: v.astype(dt) for k, v in params.items()}, np.asarray(X, dtype=dt))
    y = np.asarray(y, dtype=dt)
    bce = np.mean(np.logaddexp(dt.type(0), z) - y * z)
    reg = dt.type(0.5 * weight_decay) * (np.sum(params["W1"].astype(dt) ** 2) + np.sum(params["W2"].astype(dt) ** 2))
    return bce + reg


def mlp_gradient(params, X, y, weight_decay: float | None = None) -> dict[str, np.ndarray]:
    """Backprop gradients of :func:`mlp_loss` for every parameter block.

    ``params`` is a dict of blocks or a trained MLP; in the latter case the
    weight decay defaults to the model's own.
    """
    if len(X) == 0:
        raise ValueError("empty batch")
    if isinstance(params, TrainedModel):
        if weight_decay is None:
            weight_decay = params.spec.weight_decay
        params = {k: params.p64(k) for k in ("W1", "b1", "W2", "b2")}
    weight_decay = weight_decay or 0.0
    dt = params["W1"].dtype
    X = np.asarray(X, dtype=dt)
    y = np.asarray(y, dtype=dt)
    z1, h, z2 = _mlp_logits(params, X)
    p = 1.0 / (1.0 + np.exp(-z2))
    dz2 = (p - y) / len(X)
    gW2 = (dz2 @ h)[None, :] + weight_decay * params["W2"]
    gb2 = np.array([dz2.sum()], dtype=dt)
    dz1 = np.outer(dz2, params["W2"][0]) * (z1 > 0)
    gW1 = dz1.T @ X + weight_decay * params["W1"]
    gb1 = dz1.sum(axis=0)
    return {"W1": gW1.astype(dt), "b1": gb1.astype(dt), "W2": gW2.astype(dt), "b2": gb2.astype(dt)}


def _mlp_probs(params, X, block: int = 4096):
    out = np.empty(len(X))
    for i in range(0, len(X), block):
        _, _, z = _mlp_logits(params, X[i:i + block])
        out[i:i + block] = 1.0 / (1.0 + np.exp(-z.astype(np.float64)))
    return out


class _Plateau:
    """Reduce-on-plateau for a maximised metric (relative threshold 1e-4)."""

    def __init__(self, lr, factor, patience):
        self.lr, self.factor, self.patience = lr, factor, patience
        self.best = -math.inf
        self.bad = 0

    def step(self, metric: float) -> float:
        if metric > self.best * (1 + 1e-4) if self.best > 0 else metric > self.best:
            self.best = metric
            self.bad = 0
        else:
            self.bad += 1
            if self.bad > self.patience:
                self.lr *= self.factor
                self.bad = 0
        return self.lr


def _safe_auc(scores, y) -> float:
    if y.all() or not y.any():
        return float("nan")
    return roc_auc(scores, y).auc


def _train_mlp(spec: ModelSpec, X, y, Xv, yv, log=None):
    d = X.shape[1]
    params = mlp_init(d, spec.hidden_width, spec.seed)
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(spec.seed + 1)
    sched = _Plateau(spec.lr, spec.plateau_factor, spec.plateau_patience)
    lr = spec.lr
    yf = y.astype(np.float32)
    history, best_params = [], None
    for epoch in range(spec.epochs):
        perm = rng.permutation(len(X))
        for b0 in range(0, len(X), spec.batch):
            idx = perm[b0:b0 + spec.batch]
            g = mlp_gradient(params, X[idx], yf[idx], spec.weight_decay)
            for key in params:
                vel[key] = spec.momentum * vel[key] + g[key]
                params[key] = params[key] - np.float32(lr) * vel[key]
        p_tr = _mlp_probs(params, X)
        eps = 1e-12
        loss = float(-np.mean(y * np.log(p_tr + eps) + (1 - y) * np.log(1 - p_tr + eps)))
        if not np.isfinite(loss) or not all(np.isfinite(v).all() for v in params.values()):
            raise NonFiniteLoss(f"training diverged at epoch {epoch}")
        p_va = _mlp_probs(params, Xv) if len(Xv) else np.zeros(0)
        val_auc = _safe_auc(p_va, yv) if len(Xv) else float("nan")
        sens = spec_ = float("nan")
        if len(Xv) and yv.any() and not yv.all():
            c = confusion_at(p_va, yv, 0.5)
            sens, spec_ = c.sensitivity, c.specificity
        m = EpochMetrics(epoch, _safe_auc(p_tr, y), val_auc, sens, spec_, loss, lr)
        history.append(m)
        if log:
            log(m)
        if best_params is None or (np.isfinite(val_auc) and val_auc > max(
                (h.val_auc for h in history[:-1] if np.isfinite(h.val_auc)), default=-math.inf)):
            best_params = {k: v.copy() for k, v in params.items()}
        if np.isfinite(val_auc):
            lr = sched.step(val_auc)
    if not any(np.isfinite(h.val_auc) for h in history):
        # nothing to select on: keep the final weights
        return params, history, len(history) - 1
    return best_params, history, select_best_epoch(history)[0]


# ---------------------------------------------------------------------------
# training


def _as_xy(ws) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(ws, WindowSet):
        return ws.X.reshape(len(ws), -1).astype(np.float32), np.asarray(ws.y, dtype=np.int8)
    X, y = ws
    X = np.asarray(X, dtype=np.float32)
    return X.reshape(len(X), -1), np.asarray(y, dtype=np.int8)


def _single_entry(model: TrainedModel, Xv, yv, X, y) -> list[EpochMetrics]:
    tr = score_windows(model, X) if len(X) <= 50_000 and model.spec.kind != ModelKind.KNN else None
    va = score_windows(model, Xv) if len(Xv) else None
    sens = spec_ = float("nan")
    if va is not None and yv.any() and not yv.all():
        c = confusion_at(va, yv, youden_threshold(va, yv))
        sens, spec_ = c.sensitivity, c.specificity
    return [EpochMetrics(0, _safe_auc(tr, y) if tr is not None else float("nan"),
                         _safe_auc(va, yv) if va is not None else float("nan"), sens, spec_)]


def train_model(spec: ModelSpec, train, val=None, *, scaler: ScalerParams | None = None,
                w: int | None = None, log=None) -> TrainedModel:
    """Fit one model on training windows; ``val`` feeds the per-epoch history.

    ``train``/``val`` are :class:`WindowSet` objects or ``(X, y)`` pairs with
    ``X`` shaped ``(m, w, 75)``.  ``scaler`` lets the threshold detector undo
    the scaling to recover raw milli-g magnitudes.
    """
    if w is None:
        w = train.w if isinstance(train, WindowSet) else np.asarray(train[0]).shape[1]
    X, y = _as_xy(train)
    Xv, yv = _as_xy(val) if val is not None else (np.zeros((0, X.shape[1]), np.float32), np.zeros(0, np.int8))
    if len(X) == 0:
        raise SingleClassTraining("no training windows")
    if X.shape[1] != w * N_FEATURES:
        raise ShapeMismatch(f"training windows have {X.shape[1]} features, expected {w * N_FEATURES}")
    both = bool(y.any()) and not bool(y.all())
    kind = spec.kind
    if kind != ModelKind.KNN and not both:
        raise SingleClassTraining(f"{kind.value} needs both classes in the training set")
    sid = scaler.fitted_on if scaler is not None else ""

    if kind == ModelKind.Threshold:
        if scaler is None:
            scale, offset = np.ones(N_FEATURES), np.zeros(N_FEATURES)
        else:
            scale, offset = _inverse_affine(scaler)
        params = {"inv_scale": np.tile(scale, w), "inv_offset": np.tile(offset, w), "tau": np.zeros(1)}
        model = TrainedModel(spec, w, params, scaler_id=sid)
        s = _score_threshold(model, X)
        model.params["tau"] = np.array([youden_threshold(s, y)], dtype=np.float32)
    elif kind == ModelKind.LinearRegression:
        A = np.hstack([X.astype(np.float64), np.ones((len(X), 1))])
        reg = spec.ridge * np.eye(A.shape[1])
        reg[-1, -1] = 0.0
        beta = np.linalg.solve(A.T @ A + reg, A.T @ y.astype(np.float64))
        model = TrainedModel(spec, w, {"beta": beta}, scaler_id=sid)
    elif kind == ModelKind.KNN:
        if len(X) < spec.k:
            raise ValueError(f"KNN needs at least k={spec.k} training windows")
        model = TrainedModel(spec, w, {"X": X, "y": y.astype(np.float32)}, scaler_id=sid)
    elif kind == ModelKind.GaussianNB:
        params = {"prior": np.array([np.mean(y == 0), np.mean(y == 1)])}
        for c in (0, 1):
            Xc = X[y == c].astype(np.float64)
            params[f"mean{c}"] = Xc.mean(axis=0)
            params[f"var{c}"] = np.maximum(Xc.var(axis=0), spec.var_floor)
        model = TrainedModel(spec, w, params, scaler_id=sid)
    elif kind == ModelKind.BernoulliNB:
        params = {"prior": np.array([np.mean(y == 0), np.mean(y == 1)])}
        for c in (0, 1):
            Bc = X[y == c] > 0
            params[f"p{c}"] = (Bc.sum(axis=0) + spec.alpha) / (len(Bc) + 2 * spec.alpha)
        model = TrainedModel(spec, w, params, scaler_id=sid)
    elif kind == ModelKind.MLP:
        params, history, best = _train_mlp(spec, X, y, Xv, yv, log)
        return TrainedModel(spec, w, params, history, sid, best)
    else:
        raise ValueError(f"unsupported model kind {kind}")
    model.history = _single_entry(model, Xv, yv, X, y)
    return model


def _inverse_affine(scaler: ScalerParams):
    from .preprocess import ScalerMethod, DEGENERATE_EPS

    if scaler.method == ScalerMethod.Normalise:
        span = scaler.max - scaler.min
        return np.where(span >= DEGENERATE_EPS, span, 0.0), scaler.min.copy()
    scale = np.where(scaler.std >= DEGENERATE_EPS, scaler.std, 0.0)
    # only the accel columns matter to the threshold detector; log columns are left as-is
    return scale, scaler.mean.copy()


# ---------------------------------------------------------------------------
# persistence


def save_model(model: TrainedModel, path) -> None:
    header = {
        "format": MODEL_FORMAT, "version": 1, "spec": model.spec.to_json(), "w": model.w,
        "scaler_id": model.scaler_id, "best_epoch": model.best_epoch,
        "history": [h.to_json() for h in model.history],
        "blocks": [{"name": k, "shape": list(v.shape)} for k, v in model.params.items()],
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for k, v in model.params.items():
            fh.write(json.dumps({"name": k, "data": b64_encode_array(v.reshape(-1), np.float32)},
                                separators=(",", ":")) + "\n")


def load_model(path) -> TrainedModel:
    try:
        with open(path) as fh:
            lines = fh.read().split("\n")
        header = json.loads(lines[0])
        if header.get("format") != MODEL_FORMAT:
            raise MalformedModelFile("not a model file")
        params = {}
        for i, b in enumerate(header["blocks"]):
            obj = json.loads(lines[1 + i])
            if obj["name"] != b["name"]:
                raise MalformedModelFile(f"block {i} is {obj['name']!r}, expected {b['name']!r}")
            count = int(np.prod(b["shape"])) if b["shape"] else 1
            params[b["name"]] = b64_decode_array(obj["data"], np.float32, count).reshape(b["shape"])
        spec = ModelSpec.from_json(header["spec"])
        history = [EpochMetrics.from_json(h) for h in header.get("history", [])]
        return TrainedModel(spec, int(header["w"]), params, history,
                            header.get("scaler_id", ""), int(header.get("best_epoch", 0)))
    except MalformedModelFile:
        raise
    except (IndexError, KeyError, TypeError, ValueError) as exc:
        raise MalformedModelFile(f"{path}: {exc}") from None
