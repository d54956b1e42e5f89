"""Per-client budget allocator: a 3-layer MLP over frozen query embeddings.

linear -> ReLU -> linear -> ReLU -> linear -> softmax, trained with plain
minibatch SGD on cross-entropy. Gradients are hand-derived for this fixed
architecture; the loss is computed from logits via log-sum-exp for
numerical stability.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .oracle import BudgetDataset, dequantize

DEFAULT_WIDTH = 300


@dataclass
class TrainConfig:
    epochs: int = 800
    learning_rate: float = 0.01
    batch_size: int = 8
    seed: int = 0
    validation_fraction: float = 0.0

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValidationError("epochs must be positive")
        if self.learning_rate < 0:
            raise ValidationError("learning rate must be nonnegative")
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValidationError("validation_fraction must be in [0, 1)")

    def to_dict(self):
        return {"epochs": self.epochs, "learning_rate": self.learning_rate,
                "batch_size": self.batch_size, "seed": self.seed,
                "validation_fraction": self.validation_fraction}


@dataclass
class AllocatorModel:
    client_id: int
    dim: int
    width: int
    num_classes: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    loss_history: list = field(default_factory=list)
    train_config: dict | None = None
    # Fixed multiplier applied to inputs before the first layer. Because the
    # first layer is linear this is a pure reparameterization of w1; it only
    # conditions training when embeddings have a tiny absolute magnitude.
    input_scale: float = 1.0

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def copy_params_from(self, other: "AllocatorModel"):
        for mine, theirs in zip(self.params(), other.params()):
            mine[...] = theirs

    def clone(self) -> "AllocatorModel":
        return AllocatorModel(self.client_id, self.dim, self.width,
                              self.num_classes,
                              *(p.copy() for p in self.params()),
                              loss_history=list(self.loss_history),
                              train_config=self.train_config,
                              input_scale=self.input_scale)


def init_model(dim, width, num_classes, seed, client_id=0,
               input_scale=1.0) -> AllocatorModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if dim < 1 or width < 1 or num_classes < 1:
        raise ValidationError("dim, width, and num_classes must be positive")
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return AllocatorModel(
        client_id=client_id, dim=dim, width=width, num_classes=num_classes,
        w1=layer(dim, width), b1=np.zeros(width),
        w2=layer(width, width), b2=np.zeros(width),
        w3=layer(width, num_classes), b3=np.zeros(num_classes),
        input_scale=float(input_scale))


def _logits(m: AllocatorModel, x: np.ndarray):
    """Forward pass on a batch; returns intermediates needed for backprop."""
    x = m.input_scale * x
    z1 = x @ m.w1 + m.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ m.w2 + m.b2
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ m.w3 + m.b3
    return z1, a1, z2, a2, z3


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    expz = np.exp(shifted)
    return expz / expz.sum(axis=-1, keepdims=True)


def forward(m: AllocatorModel, e) -> np.ndarray:
    """Class probability vector for one embedding."""
    x = np.asarray(e, dtype=np.float64)
    if x.shape != (m.dim,):
        raise ValidationError(f"input has shape {x.shape}, model dim is {m.dim}")
    *_, z3 = _logits(m, x[None, :])
    return _softmax(z3)[0]


def batch_loss_and_grads(m: AllocatorModel, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and gradients for every parameter.

    The loss uses log-sum-exp on logits directly rather than log of the
    softmax output.
    """
    n = x.shape[0]
    z1, a1, z2, a2, z3 = _logits(m, x)
    shifted = z3 - z3.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1)) + z3.max(axis=1)
    loss = float(np.mean(logsumexp - z3[np.arange(n), y]))

    probs = _softmax(z3)
    dz3 = probs
    dz3[np.arange(n), y] -= 1.0
    dz3 /= n
    gw3 = a2.T @ dz3
    gb3 = dz3.sum(axis=0)
    da2 = dz3 @ m.w3.T
    dz2 = da2 * (z2 > 0)
    gw2 = a1.T @ dz2
    gb2 = dz2.sum(axis=0)
    da1 = dz2 @ m.w2.T
    dz1 = da1 * (z1 > 0)
    gw1 = (m.input_scale * x).T @ dz1
    gb1 = dz1.sum(axis=0)
    return loss, [gw1, gb1, gw2, gb2, gw3, gb3]


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, epoch)))


def train(records: BudgetDataset, client: int, cfg: TrainConfig,
          width: int = DEFAULT_WIDTH, init_seed: int | None = None,
          input_scale: float = 1.0) -> AllocatorModel:
    """Minibatch SGD on the records of one client.

    Shuffling is reseeded per epoch from cfg.seed. With a nonzero
    validation_fraction the best-validation-loss parameters are returned,
    otherwise the final-epoch ones.
    """
    if len(records) == 0:
        raise ValidationError("cannot train on an empty budget dataset")
    x = records.embeddings().astype(np.float64)
    y = records.client_labels(client)
    num_classes = records.num_classes
    if np.any(y >= num_classes):
        raise ValidationError("class label out of range for num_classes")
    dim = x.shape[1]

    if cfg.validation_fraction > 0 and len(records) > 1:
        n_val = max(1, int(round(cfg.validation_fraction * len(records))))
        # epoch indices stay below 2**32, so this stream never collides
        split_rng = _epoch_rng(cfg.seed, 2**32)
        order = split_rng.permutation(len(records))
        val_idx, train_idx = order[:n_val], order[n_val:]
        if len(train_idx) == 0:
            train_idx, val_idx = val_idx, train_idx
    else:
        train_idx = np.arange(len(records))
        val_idx = np.array([], dtype=np.int64)

    model = init_model(dim, width, num_classes,
                       cfg.seed if init_seed is None else init_seed,
                       client_id=client, input_scale=input_scale)
    model.train_config = cfg.to_dict()
    x_train, y_train = x[train_idx], y[train_idx]
    best = None
    best_val = np.inf
    for epoch in range(cfg.epochs):
        order = _epoch_rng(cfg.seed, epoch).permutation(len(x_train))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            loss, grads = batch_loss_and_grads(model, x_train[batch], y_train[batch])
            if not np.isfinite(loss):
                raise ValidationError(
                    f"non-finite training loss at epoch {epoch}, "
                    f"batch starting {start} (lr={cfg.learning_rate})")
            for param, grad in zip(model.params(), grads):
                param -= cfg.learning_rate * grad
            epoch_loss += loss
            n_batches += 1
        model.loss_history.append(epoch_loss / max(n_batches, 1))
        if len(val_idx):
            val_loss, _ = batch_loss_and_grads(model, x[val_idx], y[val_idx])
            if val_loss < best_val:
                best_val = val_loss
                best = model.clone()
    if best is not None:
        best.loss_history = model.loss_history
        return best
    return model


def predict_budget(m: AllocatorModel, e_q, delta: int) -> int:
    """Dequantized argmax class; ties go to the lowest class index."""
    probs = forward(m, e_q)
    return dequantize(int(np.argmax(probs)), delta)


def save_model(m: AllocatorModel, json_path, blob_path):
    """JSON metadata plus a little-endian f64 blob in layer order
    w1, b1, w2, b2, w3, b3 (weights stored row-major)."""
    meta = {"client_id": m.client_id, "dim": m.dim, "width": m.width,
            "num_classes": m.num_classes, "train_config": m.train_config,
            "loss_history": m.loss_history, "input_scale": m.input_scale}
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    blob = np.concatenate([p.ravel() for p in m.params()]).astype("<f8")
    blob.tofile(blob_path)


def load_model(json_path, blob_path) -> AllocatorModel:
    with open(json_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    dim, width, classes = meta["dim"], meta["width"], meta["num_classes"]
    shapes = [(dim, width), (width,), (width, width), (width,),
              (width, classes), (classes,)]
    flat = np.fromfile(blob_path, dtype="<f8")
    expected = sum(int(np.prod(s)) for s in shapes)
    if flat.size != expected:
        raise ValidationError(
            f"parameter blob has {flat.size} values, expected {expected}")
    params = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        params.append(flat[offset:offset + size].reshape(shape).copy())
        offset += size
    return AllocatorModel(client_id=meta["client_id"], dim=dim, width=width,
                          num_classes=classes, w1=params[0], b1=params[1],
                          w2=params[2], b2=params[3], w3=params[4], b3=params[5],
                          loss_history=meta.get("loss_history", []),
                          train_config=meta.get("train_config"),
                          input_scale=meta.get("input_scale", 1.0))
