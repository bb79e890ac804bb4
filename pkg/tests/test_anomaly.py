import numpy as np
import pytest

from irdetect.anomaly import (AEArchitecture, AnomalyDetector,
                              AutoencoderModel, EmptyRoomSet,
                              calibrate_residual_tau, detect_anomaly,
                              reconstruct, residual_map, train_background)
from irdetect.boxes import BoundingBox
from irdetect.engine import TrainConfig, grad_check
from irdetect.engine.losses import kl_gauss, mse_loss
from irdetect.errors import EmptyDatasetError, SupervisionError
from irdetect.evalkit import iou
from irdetect.imaging import IRFrame

TINY = AEArchitecture(channels=(2, 2, 4, 4, 8, 8), latent_dim=16)


def flat_frame(value=22.0, **kw):
    kw.setdefault("weak_label", 0)
    return IRFrame(np.full((24, 32), value, dtype=np.float32), **kw)


def person_frame(cx=16.0, cy=12.0, sigma=1.8, amp=8.0, base=22.0):
    ys, xs = np.meshgrid(np.arange(24) + 0.5, np.arange(32) + 0.5, indexing="ij")
    temps = base + amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2)
                                / (2 * sigma * sigma))
    w = 2 * np.sqrt(2 * np.log(2)) * sigma
    box = BoundingBox(cx, cy, w, w)
    return IRFrame(temps.astype(np.float32), weak_label=1, boxes=(box,))


@pytest.fixture(scope="module")
def constant_weights():
    frames = [flat_frame(source_id="r", frame_index=i) for i in range(16)]
    cfg = TrainConfig(learning_rate=1e-2, batch_size=8, max_epochs=250)
    weights, result = train_background(TINY, frames, frames[:4], cfg, seed=0)
    return weights, result


# ------------------------------------------------------------- architecture


def test_default_architecture_shapes_round_trip():
    model = AutoencoderModel(AEArchitecture(), np.random.default_rng(0))
    x = np.random.default_rng(1).uniform(0, 1, size=(2, 1, 24, 32)).astype(np.float32)
    y = model.forward(x)
    assert y.shape == x.shape
    assert AEArchitecture().flat_dim == 64 * 3 * 4


def test_untrained_reconstruction_is_shape_and_range_valid():
    weights = AutoencoderModel(TINY, np.random.default_rng(5)).to_weights()
    recon = reconstruct(weights, flat_frame())
    assert recon.shape == (1, 24, 32)
    assert recon.min() >= 0.0 and recon.max() <= 50.0


# ----------------------------------------------------------------- training


def test_training_on_constant_frames_reaches_tiny_mse(constant_weights):
    weights, result = constant_weights
    assert result.best_val_loss < 1e-4
    model = AutoencoderModel.from_weights(weights)
    x = np.full((1, 1, 24, 32), 22.0 / 50.0, dtype=np.float32)
    assert mse_loss(model.forward(x), x) < 1e-4


def test_trained_reconstruction_within_half_degree(constant_weights):
    weights, _ = constant_weights
    recon = reconstruct(weights, flat_frame())
    assert np.abs(recon - 22.0).max() < 0.5


def test_training_is_seed_deterministic():
    frames = [flat_frame(source_id="r", frame_index=i) for i in range(8)]
    cfg = TrainConfig(learning_rate=1e-2, batch_size=4, max_epochs=5)
    runs = [train_background(TINY, frames, frames[:2], cfg, seed=3)[0]
            for _ in range(2)]
    for (na, ta), (nb, tb) in zip(runs[0].tensors, runs[1].tensors):
        assert na == nb and ta.tobytes() == tb.tobytes()


def test_dvae_trains_comparably_and_kl_is_finite_positive():
    frames = [flat_frame(source_id="r", frame_index=i) for i in range(16)]
    cfg = TrainConfig(learning_rate=1e-2, batch_size=8, max_epochs=150)
    w_dae, _ = train_background(TINY, frames, frames[:4], cfg, seed=0)
    w_vae, _ = train_background(TINY, frames, frames[:4], cfg, seed=0,
                                variational=True)
    x = np.full((1, 1, 24, 32), 22.0 / 50.0, dtype=np.float32)
    m_dae = AutoencoderModel.from_weights(w_dae)
    m_vae = AutoencoderModel.from_weights(w_vae)
    mse_d = mse_loss(m_dae.forward(x), x)
    mse_v = mse_loss(m_vae.forward(x), x)
    kl = kl_gauss(m_vae._mu, m_vae._logvar)
    assert np.isfinite(kl) and kl > 0.0
    assert mse_v <= 2.0 * max(mse_d, 1e-12)


def test_dvae_loss_reduces_to_mse_under_standard_normal_latents():
    model = AutoencoderModel(TINY, np.random.default_rng(4), variational=True)
    for layer in (model.fc_mu, model.fc_logvar):
        layer.params["weight"][...] = 0.0
        layer.params["bias"][...] = 0.0
    rng = np.random.default_rng(5)
    x = rng.uniform(0.3, 0.6, size=(2, 1, 24, 32)).astype(np.float32)
    model.fixed_noise = rng.standard_normal((2, TINY.latent_dim)).astype(np.float32)
    loss = model.loss_value(x)
    assert kl_gauss(model._mu, model._logvar) == 0.0
    recon = model.forward(x, train=True)
    assert loss == mse_loss(recon, x)


def test_dvae_inference_is_deterministic():
    weights = AutoencoderModel(TINY, np.random.default_rng(2),
                               variational=True).to_weights()
    frame = person_frame()
    a = reconstruct(weights, frame)
    b = reconstruct(weights, frame)
    assert a.tobytes() == b.tobytes()


def test_generalization_to_heldout_empties_within_three_x():
    rng = np.random.default_rng(0)
    make = lambda i: IRFrame(
        (22.0 + rng.normal(0, 0.08, size=(24, 32))).astype(np.float32),
        weak_label=0, source_id="r", frame_index=i)
    train = [make(i) for i in range(48)]
    val = [make(i) for i in range(12)]
    heldout = [make(i) for i in range(12)]
    cfg = TrainConfig(learning_rate=3e-3, batch_size=16, max_epochs=60)
    weights, _ = train_background(TINY, train, val, cfg, seed=1)
    model = AutoencoderModel.from_weights(weights)
    stack = lambda fs: np.stack(
        [f.temperatures / np.float32(50.0) for f in fs])[:, None]
    x_train, x_held = stack(train), stack(heldout)
    mse_train = mse_loss(model.forward(x_train), x_train)
    mse_held = mse_loss(model.forward(x_held), x_held)
    assert mse_held <= 3.0 * mse_train


# ------------------------------------------------------------- supervision


def test_empty_room_set_rejects_occupied_frames():
    with pytest.raises(SupervisionError, match="weak label"):
        EmptyRoomSet([flat_frame(), person_frame()])


def test_empty_room_set_rejects_exposed_boxes():
    frame = flat_frame(weak_label=0, boxes=())
    with pytest.raises(SupervisionError, match="box"):
        EmptyRoomSet([frame])


def test_empty_room_set_rejects_unlabeled_and_empty():
    with pytest.raises(SupervisionError):
        EmptyRoomSet([IRFrame(np.full((24, 32), 22.0, np.float32))])
    with pytest.raises(EmptyDatasetError):
        EmptyRoomSet([])


# ---------------------------------------------------------------- residual


def test_residual_zero_for_perfect_reconstruction():
    frame = flat_frame()
    recon = frame.temperatures[None, :, :].copy()
    np.testing.assert_array_equal(residual_map(frame, recon), 0.0)


def test_residual_positive_at_person_blob(constant_weights):
    weights, _ = constant_weights
    frame = person_frame(amp=8.0)
    res = residual_map(frame, reconstruct(weights, frame))
    assert abs(res[12, 16] - 8.0) < 1.5


def test_residual_negative_for_colder_scene():
    frame = flat_frame(20.0)
    recon = np.full((24, 32), 22.0, dtype=np.float32)
    assert (residual_map(frame, recon) < 0).all()


# --------------------------------------------------------------- detection


def test_detect_anomaly_empty_room_silent(constant_weights):
    weights, _ = constant_weights
    assert detect_anomaly(weights, flat_frame(), tau_residual=2.0) == []


def test_detect_anomaly_one_person_localizes(constant_weights):
    weights, _ = constant_weights
    frame = person_frame()
    dets = detect_anomaly(weights, frame, tau_residual=2.0)
    assert len(dets) == 1
    assert dets[0].score == 1.0
    assert iou(dets[0].box, frame.boxes[0]) >= 0.3


def test_detect_anomaly_infinite_tau_silent(constant_weights):
    weights, _ = constant_weights
    assert detect_anomaly(weights, person_frame(), float("inf")) == []


def test_detection_monotone_in_residual_tau(constant_weights):
    weights, _ = constant_weights
    detector = AnomalyDetector(weights)
    res = detector.residual(person_frame())
    covered = []
    for tau in (1.0, 3.0):
        from irdetect.imaging import binarize, connected_components
        labels = connected_components(binarize(res, tau))
        pixels = set(zip(*np.nonzero(labels > 0)))
        covered.append(pixels)
    assert covered[1] <= covered[0]


# -------------------------------------------------------------- calibration


def test_calibrate_residual_tau_singleton(constant_weights):
    weights, _ = constant_weights
    assert calibrate_residual_tau(weights, [person_frame()], [2.5]) == 2.5


def test_calibrate_residual_tau_tie_prefers_smaller(constant_weights):
    weights, _ = constant_weights
    # both taus slice the blob identically high up, giving equal oLRP
    tau = calibrate_residual_tau(weights, [person_frame(amp=8.0)], [2.0, 2.05])
    assert tau == 2.0


def test_calibrate_residual_tau_picks_argmin(constant_weights):
    from irdetect.evalkit import olrp
    from irdetect.imaging import detect_on_field

    weights, _ = constant_weights
    frames = [person_frame(cx=10, cy=8), person_frame(cx=20, cy=14, sigma=2.2)]
    grid = [1.0, 4.0, 7.5]
    chosen = calibrate_residual_tau(weights, frames, grid)
    detector = AnomalyDetector(weights)
    scores = {}
    for tau in grid:
        pairs = [(detect_on_field(detector.residual(f), tau, 2), list(f.boxes))
                 for f in frames]
        scores[tau] = olrp(pairs).olrp
    assert chosen == min(grid, key=lambda t: (scores[t], t))


# --------------------------------------------------------------- gradients


def test_composite_dae_gradients_match_finite_differences():
    model = AutoencoderModel(TINY, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    batch = rng.uniform(0.2, 0.8, size=(2, 1, 24, 32)).astype(np.float32)
    assert grad_check(model, batch, epsilon=1e-3) < 1e-3


def test_composite_dvae_gradients_with_frozen_noise():
    model = AutoencoderModel(TINY, np.random.default_rng(0), variational=True)
    rng = np.random.default_rng(1)
    batch = rng.uniform(0.2, 0.8, size=(2, 1, 24, 32)).astype(np.float32)
    model.fixed_noise = rng.standard_normal((2, TINY.latent_dim)).astype(np.float32)
    assert grad_check(model, batch, epsilon=1e-3) < 1e-3
