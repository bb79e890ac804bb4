"""Fully-supervised single-shot detection over the shared encoder.

The pooled six-conv backbone produces a 3x4 feature map; one 3x3 head conv
predicts, per cell and per anchor size, four box offsets and an objectness
logit. Ground truth is assigned to anchors by IoU with a forced best match
per object; training balances classification with 3:1 hard-negative mining.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxes import BoundingBox, Detection
from .engine.layers import Conv3x3, MaxPool2, ReLU
from .engine.losses import (bce_with_logits, bce_with_logits_grad, smooth_l1,
                            smooth_l1_grad)
from .engine.training import TrainConfig, TrainResult, train_loop
from .engine.weights import ModelWeights
from .errors import EmptyDatasetError, SupervisionError
from .evalkit import iou
from .imaging import FRAME_HEIGHT, FRAME_WIDTH, IRFrame, normalize

GRID_H = 3
GRID_W = 4
VARIANCE_CENTER = 0.1
VARIANCE_SIZE = 0.2
NMS_IOU = 0.45
NEG_POS_RATIO = 3
DEFAULT_ANCHOR_SIZES = (4.0, 8.0, 14.0)


@dataclass(frozen=True)
class AnchorGrid:
    """Center-form anchors: row-major cells, ascending size within a cell."""

    boxes: np.ndarray  # [A, 4] float64 (cx, cy, w, h)
    sizes: tuple[float, ...]

    def __len__(self):
        return self.boxes.shape[0]

    def box(self, index: int) -> BoundingBox:
        cx, cy, w, h = self.boxes[index]
        return BoundingBox(float(cx), float(cy), float(w), float(h))


def make_anchors(sizes=DEFAULT_ANCHOR_SIZES) -> AnchorGrid:
    sizes = tuple(float(s) for s in sizes)
    for s in sizes:
        if s <= 0 or s > max(FRAME_WIDTH, FRAME_HEIGHT):
            raise ValueError(f"anchor size {s} outside (0, {max(FRAME_WIDTH, FRAME_HEIGHT)}]")
    cell_w = FRAME_WIDTH / GRID_W
    cell_h = FRAME_HEIGHT / GRID_H
    rows = []
    for r in range(GRID_H):
        for c in range(GRID_W):
            for s in sizes:
                rows.append(((c + 0.5) * cell_w, (r + 0.5) * cell_h, s, s))
    return AnchorGrid(np.asarray(rows, dtype=np.float64), sizes)


def encode_box(box: BoundingBox, anchor: BoundingBox) -> np.ndarray:
    """SSD offsets (dx, dy, dw, dh) with variances 0.1 / 0.2."""
    return np.array([
        (box.cx - anchor.cx) / (anchor.w * VARIANCE_CENTER),
        (box.cy - anchor.cy) / (anchor.h * VARIANCE_CENTER),
        math.log(box.w / anchor.w) / VARIANCE_SIZE,
        math.log(box.h / anchor.h) / VARIANCE_SIZE,
    ], dtype=np.float64)


def decode_box(delta, anchor: BoundingBox) -> BoundingBox:
    dx, dy, dw, dh = (float(v) for v in delta)
    return BoundingBox(
        anchor.cx + dx * VARIANCE_CENTER * anchor.w,
        anchor.cy + dy * VARIANCE_CENTER * anchor.h,
        anchor.w * math.exp(dw * VARIANCE_SIZE),
        anchor.h * math.exp(dh * VARIANCE_SIZE),
    )


def match_anchors(anchors: AnchorGrid, gt_boxes, iou_threshold: float = 0.5
                  ) -> np.ndarray:
    """Anchor -> ground-truth assignment, -1 for negatives.

    Every anchor with IoU >= threshold joins its best-IoU object (ties to the
    lower object index); additionally each object, in index order, claims its
    best-IoU free anchor so no object is left without a positive.
    """
    gts = list(gt_boxes)
    num_anchors = len(anchors)
    assignment = np.full(num_anchors, -1, dtype=np.int32)
    if not gts:
        return assignment
    matrix = np.empty((num_anchors, len(gts)))
    for a in range(num_anchors):
        abox = anchors.box(a)
        for g, gt in enumerate(gts):
            matrix[a, g] = iou(abox, gt)
    best_gt = matrix.argmax(axis=1)
    best_iou = matrix[np.arange(num_anchors), best_gt]
    assignment[best_iou >= iou_threshold] = best_gt[best_iou >= iou_threshold]
    forced = set()
    for g in range(len(gts)):
        order = np.argsort(-matrix[:, g], kind="stable")
        for a in order:
            if int(a) not in forced:
                assignment[a] = g
                forced.add(int(a))
                break
    return assignment


def encode_targets(anchors: AnchorGrid, gt_boxes, assignment: np.ndarray
                   ) -> np.ndarray:
    """Per-anchor regression targets; zeros for negatives."""
    gts = list(gt_boxes)
    targets = np.zeros((len(anchors), 4), dtype=np.float32)
    for a in np.nonzero(assignment >= 0)[0]:
        targets[a] = encode_box(gts[assignment[a]], anchors.box(int(a)))
    return targets


def _frame_loss_and_grad(pred: np.ndarray, assignment: np.ndarray,
                         targets: np.ndarray):
    """Loss of one frame's [A, 5] prediction and its gradient."""
    pos = assignment >= 0
    npos = int(pos.sum())
    logits = pred[:, 4]
    grad = np.zeros_like(pred)
    denom = max(1, npos)
    loss = 0.0
    if npos:
        loss += smooth_l1(pred[pos, :4], targets[pos])
        grad[pos, :4] = smooth_l1_grad(pred[pos, :4], targets[pos]) / denom
        loss += float(bce_with_logits(logits[pos], 1.0).sum())
        grad[pos, 4] = bce_with_logits_grad(logits[pos], 1.0) / denom
    neg_idx = np.nonzero(~pos)[0]
    # 3:1 mining against positives; a frame with no objects still trains on
    # its hardest negatives as if one positive were present.
    keep = min(neg_idx.size, NEG_POS_RATIO * max(1, npos))
    if keep:
        neg_losses = bce_with_logits(logits[neg_idx], 0.0)
        chosen = neg_idx[np.argsort(-neg_losses, kind="stable")[:keep]]
        loss += float(bce_with_logits(logits[chosen], 0.0).sum())
        grad[chosen, 4] = bce_with_logits_grad(logits[chosen], 0.0) / denom
    return loss / denom, grad


def ssd_loss(head_output: np.ndarray, assignment: np.ndarray,
             gt_boxes, anchors: AnchorGrid | None = None) -> float:
    """Detector loss for one frame's raw [15, 3, 4] head output."""
    anchors = anchors if anchors is not None else make_anchors()
    pred = head_output_to_anchor_view(head_output[None, ...])[0]
    targets = encode_targets(anchors, gt_boxes, assignment)
    loss, _ = _frame_loss_and_grad(pred, assignment, targets.astype(pred.dtype))
    return loss


def head_output_to_anchor_view(out: np.ndarray) -> np.ndarray:
    """[N, 5*S, H, W] -> [N, A, 5] matching anchor order."""
    n, ch, h, w = out.shape
    s = ch // 5
    return np.ascontiguousarray(
        out.reshape(n, s, 5, h, w).transpose(0, 3, 4, 1, 2)).reshape(n, h * w * s, 5)


def anchor_view_to_head_grad(view: np.ndarray, h: int = GRID_H, w: int = GRID_W
                             ) -> np.ndarray:
    n, a, five = view.shape
    s = a // (h * w)
    return np.ascontiguousarray(
        view.reshape(n, h, w, s, five).transpose(0, 3, 4, 1, 2)).reshape(
            n, s * five, h, w)


def nms(detections, iou_threshold: float = NMS_IOU) -> list[Detection]:
    """Greedy descending-score suppression; earlier index wins ties."""
    dets = list(detections)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    kept: list[int] = []
    for i in order:
        if all(iou(dets[i].box, dets[j].box) <= iou_threshold for j in kept):
            kept.append(i)
    return [dets[i] for i in kept]


class SsdModel:
    """Backbone encoder plus detection head; trains on (frame, boxes) pairs."""

    def __init__(self, channels=(16, 16, 32, 32, 64, 64),
                 anchors: AnchorGrid | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.anchors = anchors if anchors is not None else make_anchors()
        self.channels = tuple(channels)
        widths = [1, *self.channels]
        self._chain = []
        convs = []
        for i in range(6):
            conv = Conv3x3(widths[i], widths[i + 1], rng, dtype)
            convs.append(conv)
            self._chain += [conv, ReLU()]
            if i % 2 == 1:
                self._chain.append(MaxPool2())
        n_sizes = len(self.anchors.sizes)
        self.head = Conv3x3(self.channels[5], 5 * n_sizes, rng, dtype)
        self._named = [(f"backbone{i}", c) for i, c in enumerate(convs)]
        self._named.append(("head", self.head))

    # -- training protocol ------------------------------------------------
    def parameters(self):
        return {f"{ln}.{pn}": p for ln, layer in self._named
                for pn, p in layer.params.items()}

    def gradients(self):
        return {f"{ln}.{pn}": g for ln, layer in self._named
                for pn, g in layer.grads.items()}

    def zero_grads(self):
        for _, layer in self._named:
            layer.zero_grads()

    def all_layers(self):
        return [*self._chain, self.head]

    def state_dict(self):
        return [(name, p.copy()) for name, p in self.parameters().items()]

    def load_state_dict(self, state):
        params = self.parameters()
        for name, value in state:
            np.copyto(params[name], value)

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        for layer in self._chain:
            h = layer.forward(h)
        return self.head.forward(h)

    def backward(self, d_out: np.ndarray):
        g = self.head.backward(d_out)
        for layer in reversed(self._chain):
            g = layer.backward(g)
        return g

    def _batch_loss(self, batch, with_grad: bool):
        xs = np.stack([item[0] for item in batch])
        out = self.forward(xs)
        view = head_output_to_anchor_view(out)
        total = 0.0
        grads = np.zeros_like(view)
        for i, (_, assignment, targets) in enumerate(batch):
            loss, grad = _frame_loss_and_grad(view[i], assignment,
                                              targets.astype(view.dtype))
            total += loss
            grads[i] = grad
        total /= len(batch)
        if with_grad:
            self.backward(anchor_view_to_head_grad(grads / len(batch)))
        return total

    def loss_value(self, batch) -> float:
        return self._batch_loss(batch, with_grad=False)

    def train_step(self, batch) -> float:
        return self._batch_loss(batch, with_grad=True)

    def val_loss(self, data) -> float:
        total = 0.0
        for start in range(0, len(data), 256):
            chunk = data[start:start + 256]
            total += self._batch_loss(chunk, with_grad=False) * len(chunk)
        return total / len(data)

    def to_weights(self) -> ModelWeights:
        tensors = self.state_dict()
        tensors.append(("meta.anchor_sizes",
                        np.asarray(self.anchors.sizes, dtype=np.float32)))
        return ModelWeights("ssd", tensors)

    @classmethod
    def from_weights(cls, weights: ModelWeights):
        if weights.model_tag != "ssd":
            raise ValueError(f"expected ssd weights, got {weights.model_tag!r}")
        tensors = weights.as_dict()
        channels = tuple(tensors[f"backbone{i}.weight"].shape[0] for i in range(6))
        sizes = tuple(float(s) for s in tensors["meta.anchor_sizes"])
        model = cls(channels, make_anchors(sizes), np.random.default_rng(0))
        model.load_state_dict([(n, t) for n, t in weights.tensors
                               if not n.startswith("meta.")])
        return model


def _supervised_dataset(frames, anchors: AnchorGrid):
    data = []
    for f in frames:
        if f.boxes is None:
            raise SupervisionError(
                f"frame {f.source_id}/{f.frame_index} has no box annotations; "
                "full supervision requires them")
        assignment = match_anchors(anchors, f.boxes)
        targets = encode_targets(anchors, f.boxes, assignment)
        data.append((normalize(f), assignment, targets))
    if not data:
        raise EmptyDatasetError("no fully annotated frames")
    return data


def train_ssd(train_frames, val_frames, config: TrainConfig, seed: int,
              anchor_sizes=DEFAULT_ANCHOR_SIZES,
              channels=(16, 16, 32, 32, 64, 64)) -> tuple[ModelWeights, TrainResult]:
    """Fit the detector on box-annotated frames."""
    anchors = make_anchors(anchor_sizes)
    train_data = _supervised_dataset(train_frames, anchors)
    val_data = _supervised_dataset(val_frames, anchors)
    model = SsdModel(channels, anchors, np.random.default_rng(seed))
    result = train_loop(model, train_data, val_data, config, seed)
    return model.to_weights(), result


class SsdDetector:
    """Inference wrapper: decode, clip, and suppress overlapping boxes."""

    def __init__(self, weights: ModelWeights, score_threshold: float = 0.5):
        self.model = SsdModel.from_weights(weights)
        self.score_threshold = float(score_threshold)

    def detect(self, frame: IRFrame, score_threshold: float | None = None
               ) -> list[Detection]:
        thr = self.score_threshold if score_threshold is None else score_threshold
        out = self.model.forward(normalize(frame)[None, ...])
        view = head_output_to_anchor_view(out)[0]
        logits = view[:, 4]
        with np.errstate(over="ignore"):
            scores = 1.0 / (1.0 + np.exp(-logits))
        candidates = []
        for a in np.nonzero(scores >= thr)[0]:
            box = decode_box(view[a, :4], self.model.anchors.box(int(a)))
            clipped = box.clipped(FRAME_WIDTH, FRAME_HEIGHT)
            if clipped is not None:
                candidates.append(Detection(clipped, float(scores[a])))
        return nms(candidates, NMS_IOU)


def detect_ssd(weights: ModelWeights, frame: IRFrame,
               score_threshold: float = 0.5) -> list[Detection]:
    return SsdDetector(weights, score_threshold).detect(frame)
