"""Single-hidden-layer MLP surrogate mapping (P, F) to an optimal design.

Architecture: x -> ReLU(W1 x + b1) -> inverted dropout (training only) ->
W2 h + b2. Inputs are the 6N + 3 stretch/fixed features min-max scaled to
[0, 1]; outputs are the 4 design components (i, j, delta, beta_s), each
min-max scaled to [0, 1]. Training minimises the mean squared logarithmic
error with Adam and a step-decayed learning rate.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .ctm import FixedParams, StationDesign, StretchParams
from .dataset import DesignRecord, StretchRanges, raw_features
from .design_space import DesignBounds, project
from .errors import ConfigurationError, DomainError

log = logging.getLogger(__name__)

N_TARGETS = 4
LOSS_FLOOR = 0.0  # below this, log1p is continued linearly inside the training loss


# --------------------------------------------------------------------------
# scaling
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MinMaxScaler:
    """Per-dimension min-max scaling; dimensions with lo == hi map to 0."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float)
        hi = np.array(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DomainError("scaler bounds must be 1-D arrays of equal length")
        if np.any(hi < lo) or not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise DomainError("scaler bounds must be finite with lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def fit(cls, data: np.ndarray, what: str = "feature") -> "MinMaxScaler":
        data = np.asarray(data, dtype=float)
        scaler = cls(data.min(axis=0), data.max(axis=0))
        degenerate = np.flatnonzero(scaler.hi == scaler.lo)
        if degenerate.size:
            log.warning("%s dimensions %s are constant; pinned to 0", what,
                        degenerate.tolist())
        return scaler

    @property
    def width(self) -> np.ndarray:
        return np.where(self.hi > self.lo, self.hi - self.lo, 1.0)

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.lo.size:
            raise DomainError(f"expected {self.lo.size} dimensions, got {x.shape[-1]}")
        return np.where(self.hi > self.lo, (x - self.lo) / self.width, 0.0)

    def inverse(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.where(self.hi > self.lo, self.lo + z * self.width, self.lo)

    def to_json(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_json(cls, doc) -> "MinMaxScaler":
        return cls(np.array(doc["lo"]), np.array(doc["hi"]))

    def __eq__(self, other):
        return (isinstance(other, MinMaxScaler) and np.array_equal(self.lo, other.lo)
                and np.array_equal(self.hi, other.hi))


def feature_scaler_from_ranges(ranges: StretchRanges) -> MinMaxScaler:
    return MinMaxScaler(*ranges.feature_bounds())


# --------------------------------------------------------------------------
# model
# --------------------------------------------------------------------------

@dataclass(eq=False)
class MLPModel:
    n_cells: int
    w1: np.ndarray              # (hidden, input)
    b1: np.ndarray              # (hidden,)
    w2: np.ndarray              # (4, hidden)
    b2: np.ndarray              # (4,)
    feature_scaler: MinMaxScaler
    target_scaler: MinMaxScaler
    dropout_rate: float = 0.2

    def __post_init__(self):
        hidden, inputs = self.w1.shape
        if inputs != 6 * self.n_cells + 3:
            raise DomainError(f"input dim {inputs} != 6N + 3 for N={self.n_cells}")
        if self.b1.shape != (hidden,) or self.w2.shape != (N_TARGETS, hidden) \
                or self.b2.shape != (N_TARGETS,):
            raise DomainError("inconsistent layer shapes")
        if self.feature_scaler.lo.size != inputs or self.target_scaler.lo.size != N_TARGETS:
            raise DomainError("scaler dimensions do not match the network")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DomainError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        for name in ("w1", "b1", "w2", "b2"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise DomainError(f"{name} contains non-finite values")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def initialise(cls, n_cells: int, feature_scaler: MinMaxScaler,
                   target_scaler: MinMaxScaler, hidden_dim: int = 55, dropout_rate: float = 0.2,
                   rng=None) -> "MLPModel":
        """He-uniform hidden weights (limit sqrt(6 / fan_in)), Glorot-uniform output
        weights (limit sqrt(6 / (fan_in + fan_out))), zero biases."""
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        inputs = 6 * n_cells + 3
        lim1 = math.sqrt(6.0 / inputs)
        lim2 = math.sqrt(6.0 / (hidden_dim + N_TARGETS))
        return cls(n_cells, rng.uniform(-lim1, lim1, (hidden_dim, inputs)), np.zeros(hidden_dim),
                   rng.uniform(-lim2, lim2, (N_TARGETS, hidden_dim)), np.zeros(N_TARGETS),
                   feature_scaler, target_scaler, dropout_rate)

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def to_json(self) -> dict:
        return {"n_cells": self.n_cells, "input_dim": self.input_dim,
                "hidden_dim": self.hidden_dim, "dropout_rate": self.dropout_rate,
                "w1": self.w1.tolist(), "b1": self.b1.tolist(),
                "w2": self.w2.tolist(), "b2": self.b2.tolist(),
                "feature_scaler": self.feature_scaler.to_json(),
                "target_scaler": self.target_scaler.to_json()}

    @classmethod
    def from_json(cls, doc) -> "MLPModel":
        try:
            return cls(int(doc["n_cells"]), np.array(doc["w1"], dtype=float),
                       np.array(doc["b1"], dtype=float), np.array(doc["w2"], dtype=float),
                       np.array(doc["b2"], dtype=float),
                       MinMaxScaler.from_json(doc["feature_scaler"]),
                       MinMaxScaler.from_json(doc["target_scaler"]),
                       float(doc["dropout_rate"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed model file: {exc}") from None

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "MLPModel":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read model {path}: {exc}") from None
        return cls.from_json(doc)

    def __eq__(self, other):
        return (isinstance(other, MLPModel) and self.n_cells == other.n_cells
                and self.dropout_rate == other.dropout_rate
                and all(np.array_equal(a, b) for a, b in
                        zip(self.params().values(), other.params().values()))
                and self.feature_scaler == other.feature_scaler
                and self.target_scaler == other.target_scaler)


def featurize(stretch: StretchParams, fixed: FixedParams, scaler: MinMaxScaler) -> np.ndarray:
    """Scaled feature vector: per cell (L, vbar, w, qmax, rhomax, beta), then (p, rs_max, span)."""
    expected_cells = (scaler.lo.size - 3) / 6
    if expected_cells != stretch.n_cells:
        raise DomainError(f"model expects N={expected_cells:g} cells, stretch has "
                          f"{stretch.n_cells}")
    return scaler.transform(raw_features(stretch, fixed))


def _dropout_mask(rate: float, shape, rng: np.random.Generator) -> np.ndarray:
    if rate == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(model: MLPModel, features, training: bool = False, rng=None) -> np.ndarray:
    """Network output in normalised target space; accepts one vector or a batch."""
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != model.input_dim:
        raise DomainError(f"feature dim {x.shape[-1]} != input dim {model.input_dim}")
    h = np.maximum(x @ model.w1.T + model.b1, 0.0)
    if training:
        if rng is None:
            raise DomainError("training-mode forward needs an rng for dropout")
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        h = h * _dropout_mask(model.dropout_rate, h.shape, rng)
    return h @ model.w2.T + model.b2


def msle_loss(predicted, target) -> float:
    """mean((ln(1 + p) - ln(1 + t))^2); values <= -1 are outside the domain."""
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise DomainError(f"shape mismatch {p.shape} vs {t.shape}")
    if np.any(p <= -1.0) or np.any(t <= -1.0):
        raise DomainError("MSLE needs values > -1")
    return float(np.mean((np.log1p(p) - np.log1p(t)) ** 2))


def _log1p_extended(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """log1p continued by its tangent below LOSS_FLOOR, and the derivative.

    The continuation keeps the training loss defined (and its gradient
    pointing back into the domain) when the network outputs values <= -1.
    """
    inside = p >= LOSS_FLOOR
    base = math.log1p(LOSS_FLOOR)
    slope = 1.0 / (1.0 + LOSS_FLOOR)
    safe = np.where(inside, p, LOSS_FLOOR)
    value = np.where(inside, np.log1p(safe), base + (p - LOSS_FLOOR) * slope)
    deriv = np.where(inside, 1.0 / (1.0 + safe), slope)
    return value, deriv


def loss_and_gradients(model: MLPModel, x: np.ndarray, y: np.ndarray,
                       mask: np.ndarray | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Training loss (MSLE with log1p extended below LOSS_FLOOR) and its gradients.

    ``mask`` is a fixed dropout mask (already scaled); ``None`` means no dropout.
    """
    z1 = x @ model.w1.T + model.b1
    active = z1 > 0.0
    h = np.where(active, z1, 0.0)
    if mask is not None:
        h = h * mask
    out = h @ model.w2.T + model.b2
    log_out, deriv = _log1p_extended(out)
    diff = log_out - np.log1p(y)
    loss = float(np.mean(diff ** 2))
    d_out = (2.0 / diff.size) * diff * deriv
    grads = {"w2": d_out.T @ h, "b2": d_out.sum(axis=0)}
    d_h = d_out @ model.w2
    if mask is not None:
        d_h = d_h * mask
    d_z1 = d_h * active
    grads["w1"] = d_z1.T @ x
    grads["b1"] = d_z1.sum(axis=0)
    return loss, grads


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    epochs: int = 100
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    lr_decay_every: int = 40
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    validation_fraction: float = 0.2
    hidden_dim: int = 55
    dropout_rate: float = 0.2
    rng_seed: int = 0
    feature_ranges: StretchRanges | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must lie in (0, 1)")
        if self.learning_rate <= 0 or self.lr_decay_every < 1:
            raise ConfigurationError("learning_rate must be > 0 and lr_decay_every >= 1")

    def learning_rate_at(self, epoch: int) -> float:
        """Rate for 0-based ``epoch``: halved every ``lr_decay_every`` epochs by default."""
        return self.learning_rate * self.lr_decay ** (epoch // self.lr_decay_every)


@dataclass(frozen=True)
class LossCurves:
    train: tuple[float, ...]
    validation: tuple[float, ...]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("epoch", "train_msle", "validation_msle"))
            for k, (a, b) in enumerate(zip(self.train, self.validation), 1):
                writer.writerow((k, repr(a), repr(b)))


def _stack(records: Sequence[DesignRecord]) -> tuple[np.ndarray, np.ndarray, int]:
    if not records:
        raise ConfigurationError("empty corpus")
    n = records[0].stretch.n_cells
    if any(r.stretch.n_cells != n for r in records):
        raise ConfigurationError("corpus mixes stretches with different cell counts")
    x = np.array([r.features() for r in records])
    y = np.array([r.target_vector() for r in records])
    return x, y, n


def validation_loss(model: MLPModel, x_scaled: np.ndarray, y_scaled: np.ndarray) -> float:
    """Inference-mode MSLE (log1p extended below LOSS_FLOOR as in training)."""
    log_out, _ = _log1p_extended(forward(model, x_scaled))
    return float(np.mean((log_out - np.log1p(y_scaled)) ** 2))


def train(corpus: Sequence[DesignRecord], config: TrainConfig = TrainConfig()
          ) -> tuple[MLPModel, LossCurves]:
    """Mini-batch Adam on MSLE; returns the model and per-epoch loss curves.

    The corpus is shuffled once with the config seed and split into
    training/validation parts. Target scalers come from the training part;
    feature scalers too unless ``feature_ranges`` is given.
    """
    x, y, n_cells = _stack(corpus)
    rng = np.random.default_rng(config.rng_seed)
    order = rng.permutation(len(corpus))
    n_val = max(1, int(round(config.validation_fraction * len(corpus))))
    if len(corpus) - n_val <= config.batch_size:
        raise ConfigurationError(f"training split ({len(corpus) - n_val} records) must exceed "
                                 f"batch_size ({config.batch_size})")
    val_idx, train_idx = order[:n_val], order[n_val:]
    fscaler = (feature_scaler_from_ranges(config.feature_ranges)
               if config.feature_ranges is not None
               else MinMaxScaler.fit(x[train_idx], "feature"))
    tscaler = MinMaxScaler.fit(y[train_idx], "target")
    xs, ys = fscaler.transform(x), tscaler.transform(y)
    x_tr, y_tr, x_val, y_val = xs[train_idx], ys[train_idx], xs[val_idx], ys[val_idx]

    model = MLPModel.initialise(n_cells, fscaler, tscaler, config.hidden_dim,
                                config.dropout_rate, rng)
    m = {k: np.zeros_like(v) for k, v in model.params().items()}
    v = {k: np.zeros_like(p) for k, p in model.params().items()}
    t = 0
    train_curve, val_curve = [], []
    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        perm = rng.permutation(len(train_idx))
        batch_losses = []
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            mask = _dropout_mask(model.dropout_rate, (len(idx), model.hidden_dim), rng)
            loss, grads = loss_and_gradients(model, xb, yb, mask)
            batch_losses.append(loss)
            t += 1
            for name, param in model.params().items():
                g = grads[name]
                m[name] = config.beta1 * m[name] + (1 - config.beta1) * g
                v[name] = config.beta2 * v[name] + (1 - config.beta2) * g * g
                m_hat = m[name] / (1 - config.beta1 ** t)
                v_hat = v[name] / (1 - config.beta2 ** t)
                param -= lr * m_hat / (np.sqrt(v_hat) + config.epsilon)
        train_curve.append(float(np.mean(batch_losses)))
        val_curve.append(validation_loss(model, x_val, y_val))
    return model, LossCurves(tuple(train_curve), tuple(val_curve))


def predict_raw(model: MLPModel, stretch: StretchParams, fixed: FixedParams) -> np.ndarray:
    """De-normalised network output (i, j, delta_min, beta_s) before projection."""
    out = forward(model, featurize(stretch, fixed, model.feature_scaler))
    return model.target_scaler.inverse(out)


def predict(model: MLPModel, stretch: StretchParams, fixed: FixedParams,
            bounds: DesignBounds) -> StationDesign:
    """Predicted optimal design, projected onto the feasible set."""
    return project(predict_raw(model, stretch, fixed), bounds, stretch)
