"""Two-layer classification + boundary-regression head, losses, gradients, SGD.

The same head serves both stages: binary actionness scoring (one action class
plus background) and multi-class detection.  The output is one
(confidence logit, start offset, end offset) triple per class including
background; offsets are in unit coordinates and refine an interval by plain
addition.  Training is single-threaded, and a pure function of the initial
weights, the data and the config seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from talkit.core import Annotation, DataError, Interval, NumericError, tiou

TLN_MAGIC = b"TLN1"
_TLN_HEADER = struct.Struct("<4sIII")

DEFAULT_HIDDEN = 1000


@dataclass(eq=False)
class TwoLayerNet:
    """Weights of the shared head: input -> hidden (ReLU) -> per-class triples."""

    w1: np.ndarray  # (n_f, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, out_dim)
    b2: np.ndarray  # (out_dim,)

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64)
        if self.w1.ndim != 2 or self.w2.ndim != 2:
            raise ValueError("weight matrices must be 2-d")
        if self.b1.shape != (self.w1.shape[1],) or self.b2.shape != (self.w2.shape[1],):
            raise ValueError("bias shapes do not match weight matrices")
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ValueError("hidden sizes of the two layers disagree")
        if self.out_dim % 3 != 0:
            raise ValueError(f"output dimension {self.out_dim} is not a multiple of 3")
        for t in self.tensors():
            if not np.all(np.isfinite(t)):
                raise ValueError("network weights must be finite")

    @property
    def n_f(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    @property
    def num_classes(self) -> int:
        """Number of action classes C (out_dim covers C+1 triples)."""
        return self.out_dim // 3 - 1

    def tensors(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)

    def copy(self) -> "TwoLayerNet":
        return TwoLayerNet(*(t.copy() for t in self.tensors()))


def init_net(n_f: int, class_count: int, hidden: int = DEFAULT_HIDDEN, seed: int = 0) -> TwoLayerNet:
    """Seeded uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] initialization."""
    rng = np.random.default_rng(seed)
    out_dim = (class_count + 1) * 3
    s1, s2 = 1.0 / np.sqrt(n_f), 1.0 / np.sqrt(hidden)
    return TwoLayerNet(
        w1=rng.uniform(-s1, s1, (n_f, hidden)),
        b1=rng.uniform(-s1, s1, hidden),
        w2=rng.uniform(-s2, s2, (hidden, out_dim)),
        b2=rng.uniform(-s2, s2, out_dim),
    )


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class HeadOutput:
    """Per-class confidences (softmax normalized) and boundary offsets."""

    probs: np.ndarray    # (C+1,)
    offsets: np.ndarray  # (C+1, 2): start offset, end offset in units

    @property
    def best_class(self) -> int:
        return int(np.argmax(self.probs))


def forward(net: TwoLayerNet, x: np.ndarray) -> HeadOutput:
    """Run one feature vector through the head."""
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if x.shape != (net.n_f,):
        raise DataError(f"feature length {x.shape} does not match net input {net.n_f}")
    h = np.maximum(x @ net.w1 + net.b1, 0.0)
    y = (h @ net.w2 + net.b2).reshape(-1, 3)
    return HeadOutput(probs=softmax(y[:, 0]), offsets=y[:, 1:].copy())


def _forward_batch(net: TwoLayerNet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = np.maximum(x @ net.w1 + net.b1, 0.0)
    return h, h @ net.w2 + net.b2


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _huber(x: np.ndarray, delta: float) -> np.ndarray:
    a = np.abs(x)
    return np.where(a < delta, 0.5 * x * x, delta * (a - 0.5 * delta))


def _huber_grad(x: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(x, -delta, delta)


def loss(
    net: TwoLayerNet,
    x: np.ndarray,
    classes: np.ndarray,
    offsets: np.ndarray,
    reg_weight: float = 1.0,
    huber_delta: float = 1.0,
    reduction: str = "mean",
) -> tuple[float, dict]:
    """Cross-entropy over class confidences plus weighted smooth-L1 on the
    labeled class's two offsets.  Background samples (class 0) contribute no
    regression term.

    Returns the reduced scalar and per-sample diagnostics
    ``{"ce": (N,), "reg": (N,)}``.
    """
    value, diag, _ = _loss_impl(net, x, classes, offsets, reg_weight, huber_delta, reduction)
    return value, diag


def backward(
    net: TwoLayerNet,
    x: np.ndarray,
    classes: np.ndarray,
    offsets: np.ndarray,
    reg_weight: float = 1.0,
    huber_delta: float = 1.0,
    reduction: str = "mean",
) -> tuple[float, tuple[np.ndarray, ...]]:
    """Analytic gradients of the loss w.r.t. (w1, b1, w2, b2)."""
    value, _, grads = _loss_impl(
        net, x, classes, offsets, reg_weight, huber_delta, reduction, want_grads=True
    )
    return value, grads


def _loss_impl(net, x, classes, offsets, reg_weight, huber_delta, reduction, want_grads=False):
    x = np.asarray(x, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.intp)
    offsets = np.asarray(offsets, dtype=np.float64)
    n = x.shape[0]
    num_out = net.out_dim // 3
    if classes.min(initial=0) < 0 or classes.max(initial=0) >= num_out:
        raise ValueError(f"label class outside 0..{num_out - 1}")

    h, y = _forward_batch(net, x)
    y3 = y.reshape(n, num_out, 3)
    logp = _log_softmax(y3[:, :, 0])
    rows = np.arange(n)
    ce = -logp[rows, classes]

    fg = classes > 0
    diff = np.zeros((n, 2))
    diff[fg] = y3[rows[fg], classes[fg], 1:] - offsets[fg]
    reg = _huber(diff, huber_delta).sum(axis=1) * fg

    scale = 1.0 / n if reduction == "mean" else 1.0
    total = float((ce + reg_weight * reg).sum() * scale)
    diag = {"ce": ce, "reg": reg}
    if not want_grads:
        return total, diag, None

    dy3 = np.zeros_like(y3)
    probs = np.exp(logp)
    dlogits = probs
    dlogits[rows, classes] -= 1.0
    dy3[:, :, 0] = dlogits * scale
    dreg = reg_weight * scale * _huber_grad(diff, huber_delta)
    dy3[rows[fg], classes[fg], 1:] = dreg[fg]

    dy = dy3.reshape(n, -1)
    gw2 = h.T @ dy
    gb2 = dy.sum(axis=0)
    dh = dy @ net.w2.T
    dh[h <= 0.0] = 0.0
    gw1 = x.T @ dh
    gb1 = dh.sum(axis=0)
    return total, diag, (gw1, gb1, gw2, gb2)


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters; defaults follow the standard recipe."""

    batch_size: int = 128
    learning_rate: float = 0.001
    iterations: int = 50000
    lr_decay_at: tuple[int, ...] = (30000,)
    lr_decay_factor: float = 0.1
    seed: int = 0
    reg_weight: float = 1.0
    huber_delta: float = 1.0
    momentum: float = 0.0
    log_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be positive and iterations non-negative")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")

    def lr_at(self, iteration: int) -> float:
        decays = sum(1 for t in self.lr_decay_at if iteration >= t)
        return self.learning_rate * self.lr_decay_factor ** decays


def train(
    net: TwoLayerNet,
    x: np.ndarray,
    classes: np.ndarray,
    offsets: np.ndarray,
    cfg: TrainConfig,
) -> tuple[TwoLayerNet, list[tuple[int, float]]]:
    """Mini-batch SGD over the sample arrays; deterministic given the seed.

    Returns the trained net (updated in place) and the loss curve sampled
    every ``log_every`` iterations.  A non-finite loss aborts immediately.
    """
    x = np.asarray(x, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.intp)
    offsets = np.asarray(offsets, dtype=np.float64)
    if x.shape[0] != classes.shape[0] or x.shape[0] != offsets.shape[0]:
        raise ValueError("sample arrays disagree on length")
    if x.shape[0] == 0:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    velocity = [np.zeros_like(t) for t in net.tensors()] if cfg.momentum else None
    curve: list[tuple[int, float]] = []
    for it in range(cfg.iterations):
        idx = rng.integers(0, x.shape[0], cfg.batch_size)
        value, grads = backward(
            net, x[idx], classes[idx], offsets[idx], cfg.reg_weight, cfg.huber_delta
        )
        if not np.isfinite(value):
            raise NumericError(f"loss became non-finite at iteration {it}: {value}")
        lr = cfg.lr_at(it)
        if velocity is None:
            for t, g in zip(net.tensors(), grads):
                t -= lr * g
        else:
            for t, g, v in zip(net.tensors(), grads, velocity):
                v *= cfg.momentum
                v += g
                t -= lr * v
        if it % cfg.log_every == 0:
            curve.append((it, value))
    return net, curve


def assign_label(
    interval: Interval,
    annotations: list[Annotation],
    pos_tiou: float = 0.5,
    bg_tiou: float = 0.3,
) -> tuple[int, tuple[float, float]] | None:
    """Training label for a candidate clip against one video's ground truth.

    The clip takes the class of the highest-tIoU annotation when that tIoU
    reaches ``pos_tiou``, with offsets pointing from the clip boundaries to
    the annotation's.  Below ``bg_tiou`` it is background; in between it is
    ambiguous and discarded (None).
    """
    best, best_iou = None, 0.0
    for a in annotations:
        v = tiou(interval, a.interval)
        if v > best_iou:
            best, best_iou = a, v
    if best is not None and best_iou >= pos_tiou:
        return best.class_id, (
            best.interval.start - interval.start,
            best.interval.end - interval.end,
        )
    if best_iou < bg_tiou:
        return 0, (0.0, 0.0)
    return None


# ---------------------------------------------------------------------------
# checkpoint and loss-curve files
# ---------------------------------------------------------------------------

def save_net(path, net: TwoLayerNet) -> None:
    """Write a weight checkpoint: magic, dims, then the four tensors as f32."""
    with open(path, "wb") as fh:
        fh.write(_TLN_HEADER.pack(TLN_MAGIC, net.n_f, net.hidden, net.out_dim))
        for t in net.tensors():
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_net(path) -> TwoLayerNet:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _TLN_HEADER.size:
        raise DataError(f"checkpoint too short for header: {path}")
    magic, n_f, hidden, out_dim = _TLN_HEADER.unpack_from(raw)
    if magic != TLN_MAGIC:
        raise DataError(f"bad magic {magic!r} in {path}")
    shapes = [(n_f, hidden), (hidden,), (hidden, out_dim), (out_dim,)]
    counts = [int(np.prod(s)) for s in shapes]
    if len(raw) != _TLN_HEADER.size + 4 * sum(counts):
        raise DataError(f"checkpoint payload size mismatch in {path}")
    tensors, offset = [], _TLN_HEADER.size
    for shape, count in zip(shapes, counts):
        t = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        tensors.append(t.astype(np.float64).reshape(shape))
        offset += 4 * count
    try:
        return TwoLayerNet(*tensors)
    except ValueError as exc:
        raise DataError(f"invalid checkpoint {path}: {exc}") from None


def save_loss_curve(path, curve) -> None:
    lines = ["iteration,loss"]
    lines += [f"{it},{value!r}" for it, value in curve]
    Path(path).write_text("".join(line + "\n" for line in lines))
