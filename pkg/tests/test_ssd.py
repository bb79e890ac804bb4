import math

import numpy as np
import pytest

from irdetect.boxes import BoundingBox, Detection
from irdetect.datakit import SceneConfig, generate_scene
from irdetect.engine import TrainConfig, grad_check
from irdetect.errors import SupervisionError
from irdetect.evalkit import iou
from irdetect.imaging import IRFrame
from irdetect.ssd import (AnchorGrid, SsdDetector, SsdModel, decode_box,
                          encode_box, encode_targets, make_anchors,
                          match_anchors, nms, ssd_loss, train_ssd)

# ---------------------------------------------------------------- oracles


def match_oracle(anchors, gt_boxes, iou_threshold=0.5):
    """Naive restatement of the assignment rule."""
    gts = list(gt_boxes)
    n = len(anchors)
    assignment = [-1] * n
    if not gts:
        return assignment
    for a in range(n):
        best_g, best_v = -1, 0.0
        for g, gt in enumerate(gts):
            v = iou(anchors.box(a), gt)
            if v > best_v:
                best_v, best_g = v, g
        if best_g >= 0 and best_v >= iou_threshold:
            assignment[a] = best_g
    forced = set()
    for g, gt in enumerate(gts):
        best_a, best_v = None, -1.0
        for a in range(n):
            if a in forced:
                continue
            v = iou(anchors.box(a), gt)
            if v > best_v:
                best_v, best_a = v, a
        assignment[best_a] = g
        forced.add(best_a)
    return assignment


def nms_oracle(detections, iou_threshold=0.45):
    """Repeatedly keep the best-scored remaining box, discard overlaps."""
    remaining = list(enumerate(detections))
    kept = []
    while remaining:
        best_pos = 0
        for pos in range(1, len(remaining)):
            if remaining[pos][1].score > remaining[best_pos][1].score:
                best_pos = pos
        idx, best = remaining.pop(best_pos)
        kept.append((idx, best))
        remaining = [(i, d) for i, d in remaining
                     if iou(best.box, d.box) <= iou_threshold]
    return [d for _, d in kept]


def _rand_box(rng, span=20.0):
    return BoundingBox(float(rng.uniform(3, span)), float(rng.uniform(3, span)),
                       float(rng.uniform(1.5, 6)), float(rng.uniform(1.5, 6)))


# ---------------------------------------------------------------- anchors


def test_anchor_count_and_first_cell():
    grid = make_anchors()
    assert len(grid) == 36
    first = grid.box(0)
    assert (first.cx, first.cy, first.w, first.h) == (4.0, 4.0, 4.0, 4.0)


def test_anchor_order_row_major_then_size():
    grid = make_anchors()
    assert grid.box(1).w == 8.0 and grid.box(2).w == 14.0
    # second cell (row 0, col 1) starts at index 3
    assert grid.box(3).cx == 12.0 and grid.box(3).cy == 4.0


def test_anchor_centers_inside_frame():
    grid = make_anchors()
    for a in range(len(grid)):
        box = grid.box(a)
        assert 0 < box.cx < 32 and 0 < box.cy < 24


def test_invalid_anchor_size_rejected():
    with pytest.raises(ValueError):
        make_anchors((0.0, 8.0))
    with pytest.raises(ValueError):
        make_anchors((40.0,))


# ----------------------------------------------------------- encode/decode


def test_encode_identity_gives_zero_delta():
    anchor = BoundingBox(8.0, 8.0, 4.0, 4.0)
    np.testing.assert_allclose(encode_box(anchor, anchor), 0.0)


def test_decode_zero_delta_gives_anchor_size():
    anchor = BoundingBox(8.0, 8.0, 4.0, 6.0)
    box = decode_box(np.zeros(4), anchor)
    assert (box.cx, box.cy, box.w, box.h) == (8.0, 8.0, 4.0, 6.0)


@pytest.mark.parametrize("seed", range(20))
def test_encode_decode_round_trip(seed):
    rng = np.random.default_rng(seed)
    box = _rand_box(rng)
    anchor = _rand_box(rng)
    recovered = decode_box(encode_box(box, anchor), anchor)
    for got, want in zip((recovered.cx, recovered.cy, recovered.w, recovered.h),
                         (box.cx, box.cy, box.w, box.h)):
        assert abs(got - want) < 1e-5


def test_decoded_sizes_always_positive():
    rng = np.random.default_rng(3)
    anchor = BoundingBox(8, 8, 4, 4)
    for _ in range(50):
        box = decode_box(rng.normal(0, 3, size=4), anchor)
        assert box.w > 0 and box.h > 0


# ----------------------------------------------------------------- matching


def test_match_anchor_equal_to_gt():
    grid = make_anchors()
    gt = grid.box(0)
    assignment = match_anchors(grid, [gt])
    assert assignment[0] == 0
    for a in range(1, len(grid)):
        if assignment[a] == 0:
            assert iou(grid.box(a), gt) >= 0.5


def test_low_iou_gt_still_gets_forced_anchor():
    grid = make_anchors()
    gt = BoundingBox(6.0, 6.0, 1.5, 1.5)  # IoU with every anchor < 0.5
    assert all(iou(grid.box(a), gt) < 0.5 for a in range(len(grid)))
    assignment = match_anchors(grid, [gt])
    assert (assignment == 0).sum() == 1


def test_every_gt_has_a_positive_anchor():
    rng = np.random.default_rng(4)
    grid = make_anchors()
    for _ in range(50):
        gts = [_rand_box(rng) for _ in range(int(rng.integers(1, 4)))]
        assignment = match_anchors(grid, gts)
        for g in range(len(gts)):
            assert (assignment == g).any()


@pytest.mark.parametrize("seed", range(40))
def test_match_equals_naive_oracle_on_small_grids(seed):
    rng = np.random.default_rng(seed)
    boxes = np.array([[rng.uniform(4, 20), rng.uniform(4, 20),
                       rng.uniform(2, 8), rng.uniform(2, 8)]
                      for _ in range(int(rng.integers(2, 6)))])
    grid = AnchorGrid(boxes, sizes=(1.0,))
    gts = [_rand_box(rng) for _ in range(int(rng.integers(0, 3)))]
    got = match_anchors(grid, gts)
    assert got.tolist() == match_oracle(grid, gts)


# --------------------------------------------------------------------- loss


def _frame_with_boxes(boxes, seed=0):
    rng = np.random.default_rng(seed)
    temps = (22.0 + rng.normal(0, 0.1, (24, 32))).astype(np.float32)
    return IRFrame(temps, weak_label=int(bool(boxes)), boxes=tuple(boxes))


def test_perfect_predictions_give_near_zero_loss():
    grid = make_anchors()
    gt = [grid.box(4)]
    assignment = match_anchors(grid, gt)
    targets = encode_targets(grid, gt, assignment)
    view = np.zeros((len(grid), 5), dtype=np.float32)
    view[:, :4] = targets
    view[:, 4] = np.where(assignment >= 0, 40.0, -40.0)
    out = view.reshape(3, 4, 3, 5).transpose(2, 3, 0, 1).reshape(15, 3, 4)
    assert ssd_loss(out, assignment, gt, grid) < 1e-6


def test_empty_frame_loss_is_pure_negative_classification():
    grid = make_anchors()
    assignment = match_anchors(grid, [])
    out = np.zeros((15, 3, 4), dtype=np.float32)
    loss = ssd_loss(out, assignment, [], grid)
    assert loss == pytest.approx(3 * math.log(2), rel=1e-5)


def test_hard_negative_mining_count():
    from irdetect.ssd import _frame_loss_and_grad

    rng = np.random.default_rng(0)
    grid = make_anchors()
    gt = [grid.box(10)]
    assignment = match_anchors(grid, gt)
    targets = encode_targets(grid, gt, assignment).astype(np.float32)
    pred = rng.normal(0, 1, size=(len(grid), 5)).astype(np.float32)
    _, grad = _frame_loss_and_grad(pred, assignment, targets)
    npos = int((assignment >= 0).sum())
    selected_neg = int((grad[assignment < 0, 4] != 0).sum())
    assert selected_neg == min(3 * npos, int((assignment < 0).sum()))


# --------------------------------------------------------------------- nms


def test_nms_identical_boxes_keep_best():
    box = BoundingBox(8, 8, 4, 4)
    kept = nms([Detection(box, 0.9), Detection(box, 0.8)])
    assert len(kept) == 1 and kept[0].score == 0.9


def test_nms_disjoint_boxes_all_kept():
    dets = [Detection(BoundingBox(4, 4, 2, 2), 0.5),
            Detection(BoundingBox(20, 12, 2, 2), 0.4)]
    assert len(nms(dets)) == 2


@pytest.mark.parametrize("seed", range(40))
def test_nms_matches_bruteforce_oracle(seed):
    rng = np.random.default_rng(seed)
    dets = [Detection(_rand_box(rng), float(rng.uniform(0.05, 1.0)))
            for _ in range(int(rng.integers(0, 11)))]
    got = nms(dets)
    want = nms_oracle(dets)
    assert [(d.box, d.score) for d in got] == [(d.box, d.score) for d in want]


def test_nms_output_properties():
    rng = np.random.default_rng(7)
    dets = [Detection(_rand_box(rng), float(rng.uniform(0, 1)))
            for _ in range(10)]
    kept = nms(dets)
    scores = [d.score for d in kept]
    assert scores == sorted(scores, reverse=True)
    for i in range(len(kept)):
        for j in range(i + 1, len(kept)):
            assert iou(kept[i].box, kept[j].box) <= 0.45


# ---------------------------------------------------------------- detector


def test_detect_respects_score_threshold_one():
    weights = SsdModel(channels=(2, 2, 4, 4, 8, 8),
                       rng=np.random.default_rng(0)).to_weights()
    frame = _frame_with_boxes([])
    assert SsdDetector(weights, score_threshold=1.0).detect(frame) == []


def test_detect_boxes_clipped_to_frame():
    rng = np.random.default_rng(1)
    weights = SsdModel(channels=(2, 2, 4, 4, 8, 8), rng=rng).to_weights()
    detector = SsdDetector(weights, score_threshold=0.0)
    dets = detector.detect(_frame_with_boxes([], seed=5))
    assert dets
    for d in dets:
        x0, y0, x1, y1 = d.box.corners()
        assert x0 >= 0 and y0 >= 0 and x1 <= 32 and y1 <= 24


def test_detect_deterministic():
    weights = SsdModel(channels=(2, 2, 4, 4, 8, 8),
                       rng=np.random.default_rng(2)).to_weights()
    detector = SsdDetector(weights, score_threshold=0.1)
    frame = _frame_with_boxes([BoundingBox(10, 10, 4, 4)], seed=3)
    assert detector.detect(frame) == detector.detect(frame)


def test_train_requires_boxes():
    frame = IRFrame(np.full((24, 32), 22.0, np.float32), weak_label=0)
    with pytest.raises(SupervisionError, match="box"):
        train_ssd([frame], [frame], TrainConfig(), seed=0)


def test_training_loss_trends_down():
    cfg = SceneConfig(seed=7, rooms=2, heldout_rooms=0, frames_per_room=40,
                      person_count_weights=(0.2, 0.6, 0.2, 0.0))
    bundle = generate_scene(cfg)
    frames = bundle.frames
    tc = TrainConfig(learning_rate=2e-3, batch_size=16, max_epochs=12,
                     early_stop_patience=12, plateau_patience=12)
    _, result = train_ssd(frames[:60], frames[60:], tc, seed=42,
                          channels=(4, 4, 8, 8, 16, 16))
    losses = [r.train_loss for r in result.history]
    assert min(losses[-3:]) < min(losses[:3])


def test_weights_round_trip_preserves_anchors(tmp_path):
    from irdetect.engine import load_weights, save_weights

    model = SsdModel(channels=(2, 2, 4, 4, 8, 8), anchors=make_anchors((3, 5, 9)),
                     rng=np.random.default_rng(0))
    path = tmp_path / "ssd.irdw"
    save_weights(path, model.to_weights())
    loaded = SsdModel.from_weights(load_weights(path))
    assert loaded.anchors.sizes == (3.0, 5.0, 9.0)
    for (na, a), (nb, b) in zip(model.state_dict(), loaded.state_dict()):
        assert na == nb and a.tobytes() == b.tobytes()


# --------------------------------------------------------------- gradients


def test_ssd_gradients_match_finite_differences():
    grid = make_anchors()
    model = SsdModel(channels=(2, 2, 2, 2, 2, 2), anchors=grid,
                     rng=np.random.default_rng(0))
    rng = np.random.default_rng(1)
    batch = []
    for i in range(2):
        gts = [BoundingBox(10.0 + 6 * i, 9.0, 4.5, 5.0)]
        assignment = match_anchors(grid, gts)
        targets = encode_targets(grid, gts, assignment).astype(np.float32)
        x = rng.uniform(0.3, 0.7, (1, 24, 32)).astype(np.float32)
        batch.append((x, assignment, targets))
    assert grad_check(model, batch, epsilon=1e-3) < 1e-3
