"""Single-class grid detector used as the attack target, and its trainer.

Four stride-2 3x3 convolutions with leaky ReLU, then a 1x1 head that emits
(tx, ty, tw, th, conf_logit) for every cell of an S x S grid, S = size / 16.
One box per cell, no anchors, no NMS.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import DimensionError, DomainError, ParseError, StateError
from .optim import AdamMoments, adam_update

STRIDE = 16
SLOPE = 0.1
DEFAULT_CHANNELS = (16, 32, 64, 128)
N_OUT = 5
MAGIC = b"LCD1"


@dataclass(frozen=True)
class Detection:
    box: tuple  # (cx, cy, w, h), normalised
    confidence: float


class DetectorModel:
    """Weights of the fixed architecture. Treat as immutable; training returns a new model."""

    _counter = 0

    def __init__(self, weights):
        weights = [w if isinstance(w, T.Tensor) else T.Tensor(w) for w in weights]
        if len(weights) != 10:
            raise DimensionError("expected 4 conv layers + head, each with weight and bias")
        c_in = 3
        for i in range(4):
            w, b = weights[2 * i], weights[2 * i + 1]
            if w.data.ndim != 4 or w.shape[1] != c_in or w.shape[2:] != (3, 3) or b.shape != (w.shape[0],):
                raise DimensionError(f"conv layer {i} has inconsistent shapes")
            c_in = w.shape[0]
        hw, hb = weights[8], weights[9]
        if hw.shape != (N_OUT, c_in, 1, 1) or hb.shape != (N_OUT,):
            raise DimensionError("head has inconsistent shapes")
        self.weights = tuple(weights)
        DetectorModel._counter += 1
        self.version = DetectorModel._counter

    @classmethod
    def init(cls, seed=0, channels=DEFAULT_CHANNELS):
        rng = np.random.Generator(np.random.Philox(seed))
        ws, c_in = [], 3
        for c in channels:
            ws.append(rng.normal(0.0, np.sqrt(2.0 / (9 * c_in)), size=(c, c_in, 3, 3)))
            ws.append(np.zeros(c))
            c_in = c
        ws.append(rng.normal(0.0, np.sqrt(1.0 / c_in), size=(N_OUT, c_in, 1, 1)))
        ws.append(np.zeros(N_OUT))
        return cls(ws)

    @classmethod
    def zeros(cls, channels=DEFAULT_CHANNELS):
        ws, c_in = [], 3
        for c in channels:
            ws += [np.zeros((c, c_in, 3, 3)), np.zeros(c)]
            c_in = c
        ws += [np.zeros((N_OUT, c_in, 1, 1)), np.zeros(N_OUT)]
        return cls(ws)

    def arrays(self):
        return [w.data for w in self.weights]

    def fingerprint(self) -> bytes:
        return b"".join(w.data.tobytes() for w in self.weights)


@dataclass
class DetectorPass:
    """Result of one forward pass; holds the tape when recorded."""

    model: DetectorModel
    version: int
    image: T.Tensor
    head: T.Tensor  # (N, 5, S, S) raw
    probs: T.Tensor  # sigmoid of head
    batched: bool
    tape: T.Tape | None = None

    @property
    def grid(self):
        return self.head.shape[-1]

    @property
    def confidences(self) -> np.ndarray:
        """(N, S, S) confidences (or (S, S) for a single image)."""
        c = self.probs.data[:, 4]
        return c if self.batched else c[0]

    @property
    def boxes(self) -> np.ndarray:
        """(N, S, S, 4) decoded boxes (cx, cy, w, h)."""
        p = self.probs.data
        s = self.grid
        cols = np.arange(s)[None, None, :]
        rows = np.arange(s)[None, :, None]
        cx = (cols + p[:, 0]) / s
        cy = (rows + p[:, 1]) / s
        out = np.stack([cx, cy, p[:, 2], p[:, 3]], axis=-1)
        return out if self.batched else out[0]

    def conf_index(self, n, flat_cells):
        """Flat indices into ``probs`` of the confidences of image ``n``."""
        s = self.grid
        return ((n * N_OUT + 4) * s * s) + np.asarray(flat_cells, dtype=np.int64)

    def detections(self, n=0) -> list:
        conf = self.probs.data[n, 4].ravel()
        boxes = (self.boxes if self.batched else self.boxes[None])[n].reshape(-1, 4)
        return [Detection(tuple(float(v) for v in b), float(c)) for b, c in zip(boxes, conf)]


def _as_chw(image) -> tuple[T.Tensor, bool]:
    if isinstance(image, T.Tensor):
        arr = image.data
        t = image
    else:
        arr = np.asarray(image, dtype=np.float64)
        t = None
    if arr.ndim == 3 and arr.shape[-1] == 3 and arr.shape[0] != 3:
        arr = arr.transpose(2, 0, 1)
        t = None
    if arr.ndim == 4 and arr.shape[-1] == 3 and arr.shape[1] != 3:
        arr = arr.transpose(0, 3, 1, 2)
        t = None
    if arr.ndim not in (3, 4) or arr.shape[-3] != 3:
        raise DimensionError("image must be RGB (3,H,W), (H,W,3) or a batch thereof")
    h, w = arr.shape[-2:]
    if h != w or h % STRIDE:
        raise DimensionError(f"image must be square with side divisible by {STRIDE}")
    return (t if t is not None else T.Tensor(arr)), arr.ndim == 4


def forward(model: DetectorModel, image, record=False, tape=None) -> DetectorPass:
    """Run the detector; ``record=True`` keeps a tape for ``backward_to_image``.

    Passing an existing ``tape`` records onto it, so losses built on the
    outputs share one backward pass.
    """
    x, batched = _as_chw(image)
    if tape is None and record:
        tape = T.Tape()
    record = tape is not None
    h = x if batched else T.Tensor(x.data[None])
    if not batched and record:
        # keep the caller's tensor as the leaf the gradient is reported for
        h = _expand(x, tape)
    ws = model.weights
    for i in range(4):
        h = T.conv2d(h, ws[2 * i], ws[2 * i + 1], stride=2, pad=1, tape=tape)
        h = T.leaky_relu(h, SLOPE, tape=tape)
    head = T.conv2d(h, ws[8], ws[9], stride=1, pad=0, tape=tape)
    probs = T.sigmoid(head, tape=tape)
    return DetectorPass(model, model.version, x, head, probs, batched, tape)


def _expand(x: T.Tensor, tape):
    out = T._wrap(x.data[None])
    tape.record(out, (x,), lambda g: (g[0],))
    return out


def backward_to_image(model: DetectorModel, dpass: DetectorPass, grad_on_confidences) -> np.ndarray:
    """Exact gradient of sum(grad * confidence) w.r.t. the input pixels (CHW layout)."""
    if dpass.tape is None:
        raise StateError("forward was run without recording a tape")
    if dpass.model is not model or dpass.version != model.version:
        raise StateError("tape is stale: model changed since the forward pass")
    g = np.asarray(grad_on_confidences, dtype=np.float64)
    want = dpass.probs.shape[:1] + dpass.probs.shape[2:] if dpass.batched else dpass.probs.shape[2:]
    if g.shape != want:
        raise DimensionError(f"confidence gradient must have shape {want}")
    seed = np.zeros(dpass.probs.shape)
    seed[:, 4] = g if dpass.batched else g[None]
    return dpass.tape.backward(dpass.probs, seed)[dpass.image]


def detect(model: DetectorModel, image, threshold: float) -> list:
    if not 0.0 < threshold < 1.0:
        raise DomainError("threshold must lie in (0, 1)")
    return [d for d in forward(model, image).detections() if d.confidence > threshold]


def max_confidences(model: DetectorModel, frames, batch=64) -> np.ndarray:
    """Highest cell confidence per frame; frames are (N, H, W, 3)."""
    frames = np.asarray(frames, dtype=np.float64)
    out = []
    for s in range(0, len(frames), batch):
        p = forward(model, frames[s:s + batch].transpose(0, 3, 1, 2))
        out.append(p.confidences.reshape(len(p.confidences), -1).max(axis=1))
    return np.concatenate(out) if out else np.zeros(0)


# ------------------------------------------------------------------ training


@dataclass
class TrainMetrics:
    recall: float
    false_positive_rate: float
    final_loss: float
    losses: list = field(default_factory=list)


def cell_targets(box, grid):
    """Grid cell holding the box centre and the (sx, sy, w, h) regression target."""
    cx, cy, w, h = box
    col = min(int(np.floor(cx * grid)), grid - 1)
    row = min(int(np.floor(cy * grid)), grid - 1)
    return row, col, np.array([cx * grid - col, cy * grid - row, w, h])


def detection_loss(dpass: DetectorPass, gt_boxes, tape, smoothing=0.0, pos_weight=1.0):
    """BCE on every confidence plus squared error on box params of positive cells, per-image mean.

    ``smoothing`` pulls the 0/1 confidence targets towards 1/2 so the trained
    confidences stay away from sigmoid saturation. ``pos_weight`` scales the
    BCE of the cells that hold a person, which are far outnumbered by empty cells.
    """
    n = dpass.head.shape[0]
    s = dpass.grid
    logit_idx = ((np.arange(n)[:, None] * N_OUT + 4) * s * s + np.arange(s * s)[None]).ravel()
    targets = np.zeros((n, s * s))
    box_idx, box_tgt, pos_idx = [], [], []
    for i, box in enumerate(gt_boxes):
        if box is None:
            continue
        r, c, tgt = cell_targets(box, s)
        targets[i, r * s + c] = 1.0
        pos_idx.append(i * s * s + r * s + c)
        for ch in range(4):
            box_idx.append(((i * N_OUT + ch) * s + r) * s + c)
        box_tgt.extend(tgt)
    targets = targets * (1.0 - smoothing) + 0.5 * smoothing
    logits = T.gather(dpass.head, logit_idx, tape=tape)
    loss = T.bce_with_logits(logits, targets.ravel(), tape=tape)
    if pos_idx and pos_weight != 1.0:
        extra = T.bce_with_logits(T.gather(logits, pos_idx, tape=tape), targets.ravel()[pos_idx], tape=tape)
        loss = T.add(loss, T.affine(extra, pos_weight - 1.0, 0.0, tape=tape), tape=tape)
    if box_idx:
        pred = T.gather(dpass.probs, box_idx, tape=tape)
        diff = T.sub(pred, T.Tensor(box_tgt), tape=tape)
        sq = T.reduce_sum(T.mul(diff, diff, tape=tape), tape=tape)
        loss = T.add(loss, sq, tape=tape)
    return T.affine(loss, 1.0 / n, 0.0, tape=tape)


def evaluate_detector(model, images, boxes, threshold=0.6):
    """Recall on positives and false-positive rate on negatives at ``threshold``."""
    best = max_confidences(model, images)
    pos = np.array([b is not None for b in boxes])
    hit = best > threshold
    recall = float(hit[pos].mean()) if pos.any() else float("nan")
    fpr = float(hit[~pos].mean()) if (~pos).any() else float("nan")
    return recall, fpr


def train_detector(model: DetectorModel, dataset, epochs: int, lr: float = 1e-3, seed: int = 0,
                   batch_size: int = 32, holdout=None, holdout_fraction=0.2,
                   threshold=0.6, flip=True, decay_at=0.75, smoothing=0.1, pos_weight=1.0, log=None):
    """Supervised training with Adam; returns (new model, TrainMetrics).

    ``dataset`` is a sequence of (image (H,W,3), box or None). If ``holdout``
    is not given, a seeded ``holdout_fraction`` of the dataset is held back.
    ``dataset`` may also be a callable ``epoch -> list`` that supplies fresh
    samples every epoch; a holdout is then required.
    Batches are mirrored left-right at random when ``flip`` is set, and the
    learning rate drops tenfold after ``decay_at`` of the epochs. Confidence
    targets are smoothed by ``smoothing`` (0.1 maps them to 0.05 and 0.95)
    and person cells weighted by ``pos_weight``.
    """
    stream = callable(dataset)
    if stream and holdout is None:
        raise DomainError("a streamed dataset needs an explicit holdout")
    if not stream and len(dataset) == 0:
        raise DomainError("empty dataset")
    rng = np.random.Generator(np.random.Philox(seed))
    if holdout is None:
        order = rng.permutation(len(dataset))
        n_hold = max(1, int(round(holdout_fraction * len(dataset)))) if len(dataset) > 1 else 0
        holdout = [dataset[i] for i in order[:n_hold]]
        dataset = [dataset[i] for i in order[n_hold:]]

    params = [w.data.copy() for w in model.weights]
    moments = [AdamMoments.like(p) for p in params]
    losses = []
    step = 0
    images = boxes = None
    for epoch in range(epochs):
        if images is None or stream:
            train = dataset(epoch) if stream else dataset
            if len(train) == 0:
                raise DomainError("empty dataset")
            images = np.stack([np.asarray(img, dtype=np.float64) for img, _ in train]).transpose(0, 3, 1, 2)
            boxes = [b for _, b in train]
        rate = lr if epoch < decay_at * epochs else lr * 0.1
        order = rng.permutation(len(images))
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            batch = images[idx]
            targets = [boxes[i] for i in idx]
            if flip:
                mirror = rng.uniform(size=len(idx)) < 0.5
                batch = np.where(mirror[:, None, None, None], batch[..., ::-1], batch)
                targets = [(1.0 - b[0], b[1], b[2], b[3]) if f and b is not None else b
                           for b, f in zip(targets, mirror)]
            current = DetectorModel(params)
            tape = T.Tape()
            dpass = forward(current, batch, tape=tape)
            loss = detection_loss(dpass, targets, tape, smoothing, pos_weight)
            grads = tape.backward(loss)
            step += 1
            for p, m, w in zip(params, moments, current.weights):
                adam_update(p, grads[w], m, step, rate)
            losses.append(loss.item())
    trained = DetectorModel(params) if epochs > 0 else model
    if holdout:
        recall, fpr = evaluate_detector(trained, np.stack([h[0] for h in holdout]),
                                        [h[1] for h in holdout], threshold)
    else:
        recall, fpr = float("nan"), float("nan")
    if log is not None:
        log(f"detector: recall={recall:.3f} fpr={fpr:.3f}")
    return trained, TrainMetrics(recall, fpr, losses[-1] if losses else float("nan"), losses)


# ------------------------------------------------------------- serialization


def weights_bytes(model: DetectorModel) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(model.weights))]
    for w in model.weights:
        parts.append(struct.pack("<I", w.data.ndim))
        parts.append(struct.pack(f"<{w.data.ndim}I", *w.shape))
        parts.append(np.ascontiguousarray(w.data, dtype="<f4").tobytes())
    return b"".join(parts)


def weights_from_bytes(buf: bytes) -> DetectorModel:
    if buf[:4] != MAGIC:
        raise ParseError("not a detector weights file (bad magic)")
    off = 4
    try:
        (count,) = struct.unpack_from("<I", buf, off)
        off += 4
        arrays = []
        for _ in range(count):
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(buf, dtype="<f4", count=n, offset=off)
            off += 4 * n
            arrays.append(data.astype(np.float64).reshape(dims))
    except (struct.error, ValueError) as exc:
        raise ParseError("truncated weights file") from exc
    if off != len(buf):
        raise ParseError("trailing bytes in weights file")
    return DetectorModel(arrays)


def save_weights(path, model: DetectorModel):
    Path(path).write_bytes(weights_bytes(model))


def load_weights(path) -> DetectorModel:
    return weights_from_bytes(Path(path).read_bytes())
