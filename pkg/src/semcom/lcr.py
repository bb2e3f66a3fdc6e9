"""Trainable linear surrogate of the converged-decoder computation (LCR).

The model is a two-layer fully connected linear network (no activations)
mapping a vectorized world to the vectorized converged decoder. Training
minimizes a weighted sum of three terms with closed-form gradients:

* misfit: squared error against the true converged decoder,
* effectiveness: expected single-symbol failure probability of the
  coder pair induced by the predicted decoder (the encoder is one
  reasoning step on the prediction),
* norm preservation: squared deviation of ||model(t)||^2 / ||t||^2 from
  one over the training vectors, a surrogate for the restricted-isometry
  behaviour that keeps the map invertible on sparse world vectors.

Weights follow loss = lambda_mis * misfit + lambda_eff * effectiveness
(+ lambda_rip * norm penalty), with lambda_mis + lambda_eff = 1.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from ._validation import as_rng
from .errors import ConfigError, DegenerateColumn, DimMismatch, NonFiniteLoss, ZeroVector
from .metrics import OpCount, phi_apply_cost
from .reasoning import CLAMP_FLOOR, rational_coders
from .world import WorldDims, WorldGenConfig, make_world, vectorize

MODEL_FORMAT_VERSION = 1
_BLOB_MAGIC = b"LCR1"


@dataclass(eq=False)
class LinearModel:
    """Either factored (w1, w2) or a direct matrix; collapse() gives the product."""

    dims: WorldDims
    w1: np.ndarray | None = None
    w2: np.ndarray | None = None
    phi: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n_out, n_in = self.dims.ctx_cells, self.dims.vec_len
        if self.phi is not None:
            if self.w1 is not None or self.w2 is not None:
                raise ConfigError("give either factors or a direct matrix, not both")
            self.phi = np.asarray(self.phi, dtype=float)
            if self.phi.shape != (n_out, n_in):
                raise DimMismatch(f"direct matrix has shape {self.phi.shape}, expected {(n_out, n_in)}")
        else:
            if self.w1 is None or self.w2 is None:
                raise ConfigError("need both factors when no direct matrix is given")
            self.w1 = np.asarray(self.w1, dtype=float)
            self.w2 = np.asarray(self.w2, dtype=float)
            if self.w1.shape[1] != n_in or self.w2.shape[0] != n_out:
                raise DimMismatch("factor shapes disagree with dims")
            if self.w1.shape[0] != self.w2.shape[1]:
                raise DimMismatch("hidden widths of the factors disagree")

    @property
    def n_in(self) -> int:
        return self.dims.vec_len

    @property
    def n_out(self) -> int:
        return self.dims.ctx_cells

    @property
    def hidden_width(self) -> int | None:
        return None if self.w1 is None else self.w1.shape[0]

    def collapse(self) -> np.ndarray:
        return self.phi if self.phi is not None else self.w2 @ self.w1


def _as_phi(model) -> tuple[np.ndarray, WorldDims | None]:
    if isinstance(model, LinearModel):
        return model.collapse(), model.dims
    return np.asarray(model, dtype=float), None


def lcr_apply(model, world_or_vec, dims: WorldDims | None = None, tally: OpCount | None = None) -> np.ndarray:
    """Predicted decoder matrix for one world, reshaped per the layout contract."""
    phi, model_dims = _as_phi(model)
    dims = dims or model_dims
    if dims is None:
        raise DimMismatch("dims required when applying a bare matrix")
    t = world_or_vec if isinstance(world_or_vec, np.ndarray) else vectorize(world_or_vec)
    if t.shape != (dims.vec_len,):
        raise DimMismatch(f"world vector has shape {t.shape}, expected ({dims.vec_len},)")
    if tally is not None:
        tally += phi_apply_cost(dims)
    flat = phi @ t
    return flat.reshape((dims.num_actions, dims.num_concepts)).T


def gen_training_set(
    cfg: WorldGenConfig,
    n: int,
    rng,
    theta_s: float = 1.1,
    theta_r: float = 1.1,
    tol: float = 1e-8,
    max_iters: int = 500,
):
    """N worlds with their converged decoders, both vectorized.

    Returns (t_mat, r_mat) with shapes (n, vec_len) and (n, ctx_cells).
    """
    if n < 1:
        raise ConfigError("dataset size must be >= 1")
    rng = as_rng(rng)
    t_mat = np.empty((n, cfg.dims.vec_len))
    r_mat = np.empty((n, cfg.dims.ctx_cells))
    for i in range(n):
        w = make_world(cfg, rng)
        res = rational_coders(w, theta_s=theta_s, theta_r=theta_r, tol=tol, max_iters=max_iters)
        t_mat[i] = vectorize(w)
        r_mat[i] = res.decoder.entries.flatten(order="F")
    return t_mat, r_mat


# ---------------------------------------------------------------------------
# Loss terms (batch means) and their gradients with respect to phi


def loss_misfit(phi, t_batch, r_batch, with_grad: bool = True):
    """Mean squared residual ||prediction - target||^2 over the batch."""
    phi = np.asarray(phi, dtype=float)
    t_batch = np.atleast_2d(np.asarray(t_batch, dtype=float))
    r_batch = np.atleast_2d(np.asarray(r_batch, dtype=float))
    if t_batch.shape[1] != phi.shape[1] or r_batch.shape[1] != phi.shape[0]:
        raise DimMismatch("batch shapes disagree with the model matrix")
    err = t_batch @ phi.T - r_batch
    loss = float(np.mean(np.sum(err**2, axis=1)))
    if not with_grad:
        return loss, None
    grad = (2.0 / len(t_batch)) * err.T @ t_batch
    return loss, grad


def _split_batch(t_batch, dims: WorldDims):
    cells = dims.ctx_cells
    y = t_batch[:, cells : cells + dims.num_actions]
    z = t_batch[:, cells + dims.num_actions :]
    return y, z


def loss_eff(phi, t_batch, dims: WorldDims, theta_s: float = 1.1, floor: float = CLAMP_FLOOR, with_grad: bool = True):
    """Mean expected failure probability of the induced coder pair.

    The predicted decoder is reshaped per sample, clamped at the floor,
    pushed through one encoder step, and scored as
    sum_a y_a (1 - sum_c s~_ca r~_ca) with the raw (unclamped) decoder in
    the product. The gradient flows through both the direct product term
    and the power-normalization, and is zero inside the clamp.
    """
    phi = np.asarray(phi, dtype=float)
    t_batch = np.atleast_2d(np.asarray(t_batch, dtype=float))
    if t_batch.shape[1] != dims.vec_len or phi.shape != (dims.ctx_cells, dims.vec_len):
        raise DimMismatch("batch or model shape disagrees with dims")
    b = len(t_batch)
    c_n, a_n = dims.num_concepts, dims.num_actions
    y, z = _split_batch(t_batch, dims)
    flat = t_batch @ phi.T  # (b, n_out), column-major decoder entries
    g = flat.reshape(b, a_n, c_n).transpose(0, 2, 1)  # (b, C, A) raw predictions
    g_cl = np.maximum(g, floor)
    w = (g_cl * z[:, :, None]) ** theta_s
    col = w.sum(axis=1, keepdims=True)  # (b, 1, A)
    if np.any(col == 0):
        raise DegenerateColumn("encoder normalizer vanished inside the effectiveness loss")
    s = w / col
    e = np.sum(s * g, axis=1)  # (b, A) coupling per action
    loss = float(np.mean(np.sum(y * (1.0 - e), axis=1)))
    if not with_grad:
        return loss, None
    active = (g > floor).astype(float)
    dg = -(y[:, None, :]) * (s + theta_s * w * active * (g - e[:, None, :]) / (col * g_cl))
    dflat = dg.transpose(0, 2, 1).reshape(b, dims.ctx_cells)
    grad = dflat.T @ t_batch / b
    return loss, grad


def loss_rip(phi, t_batch, with_grad: bool = True):
    """Mean squared deviation of the norm ratio ||phi t||^2/||t||^2 from one."""
    phi = np.asarray(phi, dtype=float)
    t_batch = np.atleast_2d(np.asarray(t_batch, dtype=float))
    if t_batch.shape[1] != phi.shape[1]:
        raise DimMismatch("batch shape disagrees with the model matrix")
    q = np.sum(t_batch**2, axis=1)
    if np.any(q == 0):
        raise ZeroVector("norm penalty needs nonzero world vectors")
    u = t_batch @ phi.T
    ratio = np.sum(u**2, axis=1) / q
    loss = float(np.mean((ratio - 1.0) ** 2))
    if not with_grad:
        return loss, None
    coef = (4.0 / len(t_batch)) * (ratio - 1.0) / q
    grad = (coef[:, None] * u).T @ t_batch
    return loss, grad


def quasi_rip_stats(model, probes):
    """Norm ratios over a probe set and the worst deviation from isometry."""
    phi, _ = _as_phi(model)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    q = np.sum(probes**2, axis=1)
    if np.any(q == 0):
        raise ZeroVector("probe vectors must be nonzero")
    ratios = np.sum((probes @ phi.T) ** 2, axis=1) / q
    delta_hat = float(np.max(np.abs(ratios - 1.0)))
    return RipStats(ratios=ratios, delta_hat=delta_hat, passes=delta_hat < 1.0 / 3.0)


@dataclass(frozen=True)
class RipStats:
    ratios: np.ndarray
    delta_hat: float
    passes: bool


# ---------------------------------------------------------------------------
# Training


def _validate_train_params(lambda_mis, lambda_eff, lambda_rip, epochs, batch_size, learning_rate):
    if lambda_mis < 0 or lambda_eff < 0 or abs(lambda_mis + lambda_eff - 1.0) > 1e-12:
        raise ConfigError("lambda_mis and lambda_eff must be nonnegative and sum to 1")
    if lambda_rip < 0:
        raise ConfigError("lambda_rip must be nonnegative")
    if epochs < 1 or batch_size < 1:
        raise ConfigError("epochs and batch_size must be >= 1")
    if learning_rate <= 0:
        raise ConfigError("learning_rate must be positive")


def train_lcr(
    t_data,
    r_data,
    dims: WorldDims,
    hidden_width: int | None = None,
    epochs: int = 200,
    batch_size: int = 32,
    learning_rate: float | None = None,
    lr_decay: float = 1.0,
    optimizer: str = "momentum_sgd",
    momentum: float = 0.9,
    lambda_mis: float = 0.8,
    lambda_eff: float = 0.2,
    lambda_rip: float = 0.1,
    theta_s: float = 1.1,
    clamp_floor: float = CLAMP_FLOOR,
    shuffle: bool = True,
    seed: int | None = 0,
):
    """Minibatch gradient descent on the combined loss.

    Gaussian initialization with per-layer fan-in scaling; deterministic
    for a fixed seed. learning_rate=None picks 0.4 / mean ||t||^2, which
    keeps momentum SGD inside the stability region of the quadratic
    misfit term across matrix sizes. lr_decay multiplies the step size
    once per epoch (1.0 keeps it constant). Returns (LinearModel, curve)
    where curve rows are per-epoch full-dataset (misfit, effectiveness,
    norm penalty, total).
    """
    t_data = np.atleast_2d(np.asarray(t_data, dtype=float))
    r_data = np.atleast_2d(np.asarray(r_data, dtype=float))
    if len(t_data) == 0:
        raise ConfigError("dataset is empty")
    if learning_rate is None:
        learning_rate = 0.4 / float(np.mean(np.sum(t_data**2, axis=1)))
    _validate_train_params(lambda_mis, lambda_eff, lambda_rip, epochs, batch_size, learning_rate)
    if optimizer not in ("sgd", "momentum_sgd"):
        raise ConfigError(f"unknown optimizer {optimizer!r}")
    if not 0.0 < lr_decay <= 1.0:
        raise ConfigError("lr_decay must be in (0, 1]")
    n_out, n_in = dims.ctx_cells, dims.vec_len
    if t_data.shape[1] != n_in or r_data.shape[1] != n_out:
        raise DimMismatch("dataset shapes disagree with dims")
    h = n_out if hidden_width is None else int(hidden_width)
    rng = as_rng(seed)
    w1 = rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(h, n_in))
    w2 = rng.normal(0.0, 1.0 / np.sqrt(h), size=(n_out, h))
    v1 = np.zeros_like(w1)
    v2 = np.zeros_like(w2)
    beta = momentum if optimizer == "momentum_sgd" else 0.0
    n = len(t_data)
    curve = np.zeros((epochs, 4))

    def _phi_grad(phi, tb, rb):
        _, g = loss_misfit(phi, tb, rb)
        total = lambda_mis * g
        if lambda_eff > 0:
            _, g = loss_eff(phi, tb, dims, theta_s=theta_s, floor=clamp_floor)
            total += lambda_eff * g
        if lambda_rip > 0:
            _, g = loss_rip(phi, tb)
            total += lambda_rip * g
        return total

    step = learning_rate
    for epoch in range(epochs):
        order = rng.permutation(n) if shuffle else np.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            phi = w2 @ w1
            g_phi = _phi_grad(phi, t_data[idx], r_data[idx])
            if not np.all(np.isfinite(g_phi)):
                raise NonFiniteLoss(f"non-finite gradient at epoch {epoch}, batch start {start}")
            g2 = g_phi @ w1.T
            g1 = w2.T @ g_phi
            v2 = beta * v2 - step * g2
            v1 = beta * v1 - step * g1
            w2 = w2 + v2
            w1 = w1 + v1
        step *= lr_decay
        phi = w2 @ w1
        l_mis, _ = loss_misfit(phi, t_data, r_data, with_grad=False)
        l_eff = 0.0
        if lambda_eff > 0:
            l_eff, _ = loss_eff(phi, t_data, dims, theta_s=theta_s, floor=clamp_floor, with_grad=False)
        l_rip = 0.0
        if lambda_rip > 0:
            l_rip, _ = loss_rip(phi, t_data, with_grad=False)
        total = lambda_mis * l_mis + lambda_eff * l_eff + lambda_rip * l_rip
        if not np.isfinite(total):
            raise NonFiniteLoss(f"non-finite loss {total!r} after epoch {epoch}")
        curve[epoch] = (l_mis, l_eff, l_rip, total)
    model = LinearModel(
        dims,
        w1=w1,
        w2=w2,
        meta={
            "hidden_width": h,
            "epochs": epochs,
            "batch_size": batch_size,
            "learning_rate": learning_rate,
            "lr_decay": lr_decay,
            "optimizer": optimizer,
            "momentum": momentum,
            "lambda_mis": lambda_mis,
            "lambda_eff": lambda_eff,
            "lambda_rip": lambda_rip,
            "theta_s": theta_s,
            "seed": seed,
        },
    )
    return model, curve


class LCRRegressor(BaseEstimator, RegressorMixin):
    """sklearn-style regressor from world vectors to decoder vectors.

    fit(X, y) takes X of shape (n, vec_len) and y of shape
    (n, ctx_cells); predict returns decoder vectors. The fitted linear
    map is available as model_ and the per-epoch loss curve as curve_.
    """

    def __init__(
        self,
        dims=None,
        hidden_width=None,
        epochs=200,
        batch_size=32,
        learning_rate=None,
        lr_decay=1.0,
        optimizer="momentum_sgd",
        momentum=0.9,
        lambda_mis=0.8,
        lambda_eff=0.2,
        lambda_rip=0.1,
        theta_s=1.1,
        clamp_floor=CLAMP_FLOOR,
        shuffle=True,
        random_state=0,
    ):
        self.dims = dims
        self.hidden_width = hidden_width
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.optimizer = optimizer
        self.momentum = momentum
        self.lambda_mis = lambda_mis
        self.lambda_eff = lambda_eff
        self.lambda_rip = lambda_rip
        self.theta_s = theta_s
        self.clamp_floor = clamp_floor
        self.shuffle = shuffle
        self.random_state = random_state

    def _dims(self) -> WorldDims:
        if self.dims is None:
            raise ConfigError("dims=(num_concepts, num_actions) is required")
        return self.dims if isinstance(self.dims, WorldDims) else WorldDims(*self.dims)

    def fit(self, X, y):
        model, curve = train_lcr(
            X,
            y,
            self._dims(),
            hidden_width=self.hidden_width,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            lr_decay=self.lr_decay,
            optimizer=self.optimizer,
            momentum=self.momentum,
            lambda_mis=self.lambda_mis,
            lambda_eff=self.lambda_eff,
            lambda_rip=self.lambda_rip,
            theta_s=self.theta_s,
            clamp_floor=self.clamp_floor,
            shuffle=self.shuffle,
            seed=self.random_state,
        )
        self.model_ = model
        self.curve_ = curve
        self.phi_ = model.collapse()
        return self

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.phi_.T


# ---------------------------------------------------------------------------
# Model files


def save_model(model: LinearModel, path, binary: bool = False) -> None:
    """JSON by default; with binary=True the weights go to a sidecar blob.

    Blob layout: 16-byte header (magic "LCR1", n_out, n_in, h as uint32
    little endian) followed by w1 then w2 as little-endian float64 in row
    major order.
    """
    if model.w1 is None:
        raise ConfigError("only factored models are saved; wrap a direct matrix first")
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "num_concepts": model.dims.num_concepts,
        "num_actions": model.dims.num_actions,
        "hidden_width": model.hidden_width,
        "meta": model.meta,
    }
    path = str(path)
    if binary:
        blob_path = path + ".blob"
        h = model.hidden_width
        with open(blob_path, "wb") as fh:
            fh.write(_BLOB_MAGIC)
            fh.write(struct.pack("<III", model.n_out, model.n_in, h))
            fh.write(model.w1.astype("<f8").tobytes())
            fh.write(model.w2.astype("<f8").tobytes())
        doc["blob"] = blob_path.rsplit("/", 1)[-1]
    else:
        doc["W1"] = [[float(v) for v in row] for row in model.w1]
        doc["W2"] = [[float(v) for v in row] for row in model.w2]
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> LinearModel:
    path = str(path)
    with open(path) as fh:
        doc = json.load(fh)
    dims = WorldDims(int(doc["num_concepts"]), int(doc["num_actions"]))
    h = int(doc["hidden_width"])
    if "blob" in doc:
        blob_path = path.rsplit("/", 1)[0] + "/" + doc["blob"] if "/" in path else doc["blob"]
        with open(blob_path, "rb") as fh:
            magic = fh.read(4)
            if magic != _BLOB_MAGIC:
                raise ConfigError(f"bad blob magic {magic!r}")
            n_out, n_in, h_blob = struct.unpack("<III", fh.read(12))
            if (n_out, n_in, h_blob) != (dims.ctx_cells, dims.vec_len, h):
                raise DimMismatch("blob header disagrees with the model document")
            data = np.frombuffer(fh.read(), dtype="<f8")
        w1 = data[: h * n_in].reshape(h, n_in)
        w2 = data[h * n_in :].reshape(n_out, h)
    else:
        w1 = np.array(doc["W1"], dtype=float)
        w2 = np.array(doc["W2"], dtype=float)
    return LinearModel(dims, w1=w1, w2=w2, meta=doc.get("meta", {}))
