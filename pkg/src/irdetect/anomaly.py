"""Unsupervised person detection via background reconstruction.

An auto-encoder trained exclusively on empty-room frames learns the
background; occupied frames reconstruct poorly where people stand, so
thresholding the reconstruction residual localizes them. The variational
variant adds a KL penalty pulling the latent code toward a standard normal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Detection
from .engine.layers import Conv3x3, ConvTranspose2, Linear, MaxPool2, ReLU, Sigmoid
from .engine.losses import kl_gauss, kl_gauss_grads, mse_grad, mse_loss
from .engine.training import TrainConfig, TrainResult, train_loop
from .engine.weights import ModelWeights
from .errors import EmptyDatasetError, SupervisionError
from .imaging import (FRAME_HEIGHT, FRAME_WIDTH, NORMALIZATION_C, IRFrame,
                      detect_on_field, normalize)

LATENT_H = FRAME_HEIGHT // 8
LATENT_W = FRAME_WIDTH // 8


@dataclass(frozen=True)
class AEArchitecture:
    """Channel plan of the six-conv encoder and the mirrored decoder."""

    channels: tuple[int, int, int, int, int, int] = (16, 16, 32, 32, 64, 64)
    latent_dim: int = 256

    def __post_init__(self):
        if len(self.channels) != 6 or any(c < 1 for c in self.channels):
            raise ValueError("channels must be six positive integers")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")

    @property
    def flat_dim(self) -> int:
        return self.channels[5] * LATENT_H * LATENT_W


class EmptyRoomSet:
    """Frames verified person-free: weak label 0 and no exposed boxes.

    The anomaly path may only ever see such frames; anything else is a
    supervision violation.
    """

    def __init__(self, frames):
        checked = []
        for f in frames:
            if f.weak_label != 0:
                raise SupervisionError(
                    f"frame {f.source_id}/{f.frame_index} has weak label "
                    f"{f.weak_label!r}; empty-room training requires 0")
            if f.boxes is not None:
                raise SupervisionError(
                    f"frame {f.source_id}/{f.frame_index} exposes box annotations; "
                    "pass a weak view")
            checked.append(f)
        if not checked:
            raise EmptyDatasetError("no empty-room frames available")
        self.frames = checked

    def __len__(self):
        return len(self.frames)

    def as_tensor(self) -> np.ndarray:
        return np.stack([normalize(f) for f in self.frames]).astype(np.float32)


class AutoencoderModel:
    """Hourglass auto-encoder over [N, 1, 24, 32] normalized frames.

    Encoder: six 3x3 convs (ReLU) with 2x2 max-pooling after every second
    conv, then a linear bottleneck. Decoder mirrors it with stride-2
    transposed convolutions, ending in a sigmoid so reconstructions live in
    the normalized [0, 1] range.
    """

    def __init__(self, arch: AEArchitecture = AEArchitecture(),
                 rng: np.random.Generator | None = None,
                 variational: bool = False, kl_weight: float = 1.0,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.arch = arch
        self.variational = variational
        self.kl_weight = float(kl_weight)
        self.rng = rng
        c = arch.channels
        self._enc_chain = []
        enc_convs = []
        widths = [1, *c]
        for i in range(6):
            conv = Conv3x3(widths[i], widths[i + 1], rng, dtype)
            enc_convs.append(conv)
            self._enc_chain.append(conv)
            self._enc_chain.append(ReLU())
            if i % 2 == 1:
                self._enc_chain.append(MaxPool2())
        self.fc_mu = Linear(arch.flat_dim, arch.latent_dim, rng, dtype)
        self.fc_logvar = Linear(arch.flat_dim, arch.latent_dim, rng, dtype) \
            if variational else None
        self.fc_dec = Linear(arch.latent_dim, arch.flat_dim, rng, dtype)
        self._dec_relu = ReLU()
        dec_plan = [(c[5], c[5], c[3]), (c[3], c[3], c[1]), (c[1], c[1], c[1])]
        self._dec_chain = []
        dec_named = []
        for i, (cin, cmid, cout) in enumerate(dec_plan):
            up = ConvTranspose2(cin, cmid, rng, dtype)
            conv = Conv3x3(cmid, cout, rng, dtype)
            dec_named += [(f"dec_convt{i}", up), (f"dec_conv{i}", conv)]
            self._dec_chain += [up, conv, ReLU()]
        out_conv = Conv3x3(c[1], 1, rng, dtype)
        dec_named.append(("dec_conv_out", out_conv))
        self._dec_chain += [out_conv, Sigmoid()]
        self._named = [(f"enc_conv{i}", l) for i, l in enumerate(enc_convs)]
        self._named.append(("enc_fc_mu", self.fc_mu))
        if self.fc_logvar is not None:
            self._named.append(("enc_fc_logvar", self.fc_logvar))
        self._named.append(("dec_fc", self.fc_dec))
        self._named += dec_named
        self.fixed_noise: np.ndarray | None = None  # verification hook

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
        layers = [*self._enc_chain, self.fc_mu, self.fc_dec, self._dec_relu,
                  *self._dec_chain]
        if self.fc_logvar is not None:
            layers.append(self.fc_logvar)
        return layers

    def state_dict(self):
        return [(name, p.copy()) for name, p in self.parameters().items()]

    def load_state_dict(self, state):
        params = self.parameters()
        for name, value in state:
            np.copyto(params[name], value)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        h = x
        for layer in self._enc_chain:
            h = layer.forward(h)
        n = h.shape[0]
        self._enc_out_shape = h.shape
        flat = h.reshape(n, self.arch.flat_dim)
        self._mu = self.fc_mu.forward(flat)
        if self.variational:
            self._logvar = self.fc_logvar.forward(flat)
            if train:
                if self.fixed_noise is not None:
                    self._eps = self.fixed_noise
                else:
                    self._eps = self.rng.standard_normal(
                        self._mu.shape).astype(self._mu.dtype)
                self._std = np.exp(0.5 * self._logvar)
                z = self._mu + self._std * self._eps
            else:
                self._eps = None
                z = self._mu
        else:
            z = self._mu
        d = self.fc_dec.forward(z)
        d = self._dec_relu.forward(d)
        d = d.reshape(self._enc_out_shape)
        for layer in self._dec_chain:
            d = layer.forward(d)
        return d

    def _backward(self, d_recon: np.ndarray, d_mu_extra=None, d_logvar_extra=None):
        g = d_recon
        for layer in reversed(self._dec_chain):
            g = layer.backward(g)
        g = g.reshape(g.shape[0], self.arch.flat_dim)
        g = self._dec_relu.backward(g)
        dz = self.fc_dec.backward(g)
        if self.variational:
            d_mu = dz.copy()
            if self._eps is not None:
                d_logvar = dz * self._eps * 0.5 * self._std
            else:
                d_logvar = np.zeros_like(dz)
            if d_mu_extra is not None:
                d_mu += d_mu_extra
            if d_logvar_extra is not None:
                d_logvar += d_logvar_extra
            dflat = self.fc_mu.backward(d_mu) + self.fc_logvar.backward(d_logvar)
        else:
            dflat = self.fc_mu.backward(dz)
        g = dflat.reshape(self._enc_out_shape)
        for layer in reversed(self._enc_chain):
            g = layer.backward(g)
        return g

    def loss_on(self, x: np.ndarray, train: bool) -> float:
        y = self.forward(x, train=train)
        loss = mse_loss(y, x)
        if self.variational:
            loss += self.kl_weight * kl_gauss(self._mu, self._logvar)
        return float(loss)

    def loss_value(self, batch: np.ndarray) -> float:
        return self.loss_on(np.asarray(batch), train=True)

    def train_step(self, batch: np.ndarray) -> float:
        x = np.asarray(batch)
        y = self.forward(x, train=True)
        loss = mse_loss(y, x)
        d_recon = mse_grad(y, x)
        d_mu = d_logvar = None
        if self.variational:
            loss += self.kl_weight * kl_gauss(self._mu, self._logvar)
            d_mu, d_logvar = kl_gauss_grads(self._mu, self._logvar)
            d_mu = d_mu * self.kl_weight
            d_logvar = d_logvar * self.kl_weight
        self._backward(d_recon, d_mu, d_logvar)
        return float(loss)

    def val_loss(self, data) -> float:
        x = np.asarray(data)
        total = 0.0
        for start in range(0, len(x), 256):
            chunk = x[start:start + 256]
            total += self.loss_on(chunk, train=False) * len(chunk)
        return total / len(x)

    # -- persistence -------------------------------------------------------
    @property
    def model_tag(self) -> str:
        return "dvae" if self.variational else "dae"

    def to_weights(self) -> ModelWeights:
        return ModelWeights(self.model_tag, self.state_dict())

    @classmethod
    def from_weights(cls, weights: ModelWeights, kl_weight: float = 1.0):
        if weights.model_tag not in ("dae", "dvae"):
            raise ValueError(f"expected dae/dvae weights, got {weights.model_tag!r}")
        tensors = weights.as_dict()
        channels = tuple(tensors[f"enc_conv{i}.weight"].shape[0] for i in range(6))
        latent = tensors["enc_fc_mu.weight"].shape[0]
        model = cls(AEArchitecture(channels, latent),
                    np.random.default_rng(0),
                    variational=weights.model_tag == "dvae", kl_weight=kl_weight)
        model.load_state_dict(weights.tensors)
        return model


def train_background(arch: AEArchitecture, empty_rooms, val_empty,
                     config: TrainConfig, seed: int, variational: bool = False,
                     kl_weight: float = 1.0) -> tuple[ModelWeights, TrainResult]:
    """Fit the background reconstruction on empty rooms only."""
    train_set = empty_rooms if isinstance(empty_rooms, EmptyRoomSet) \
        else EmptyRoomSet(empty_rooms)
    val_set = val_empty if isinstance(val_empty, EmptyRoomSet) \
        else EmptyRoomSet(val_empty)
    model = AutoencoderModel(arch, np.random.default_rng(seed),
                             variational=variational, kl_weight=kl_weight)
    result = train_loop(model, train_set.as_tensor(), val_set.as_tensor(),
                        config, seed)
    return model.to_weights(), result


class AnomalyDetector:
    """Reconstruct-and-threshold detector around trained dAE/dVAE weights."""

    def __init__(self, weights: ModelWeights, tau_residual: float = 2.0,
                 min_blob_area: int = 2):
        self.model = AutoencoderModel.from_weights(weights)
        self.tau_residual = float(tau_residual)
        self.min_blob_area = int(min_blob_area)

    def reconstruct(self, frame: IRFrame) -> np.ndarray:
        """Reconstructed background, Celsius scale, shape [1, 24, 32]."""
        x = normalize(frame)[None, ...]
        y = self.model.forward(x, train=False)
        return y[0] * np.float32(NORMALIZATION_C)

    def residual(self, frame: IRFrame) -> np.ndarray:
        return residual_map(frame, self.reconstruct(frame))

    def detect(self, frame: IRFrame) -> list[Detection]:
        return detect_on_field(self.residual(frame), self.tau_residual,
                               self.min_blob_area)


def reconstruct(weights: ModelWeights, frame: IRFrame) -> np.ndarray:
    return AnomalyDetector(weights).reconstruct(frame)


def residual_map(frame: IRFrame, reconstruction: np.ndarray) -> np.ndarray:
    """Signed residual in Celsius: positive where hotter than the background."""
    recon = np.asarray(reconstruction)
    if recon.ndim == 3:
        recon = recon[0]
    if recon.shape != (FRAME_HEIGHT, FRAME_WIDTH):
        raise ValueError(f"reconstruction shape {recon.shape} does not match frame")
    return frame.temperatures - recon


def detect_anomaly(weights: ModelWeights, frame: IRFrame, tau_residual: float,
                   min_blob_area: int = 2) -> list[Detection]:
    return AnomalyDetector(weights, tau_residual, min_blob_area).detect(frame)


def calibrate_residual_tau(weights: ModelWeights, validation_frames, grid,
                           min_blob_area: int = 2) -> float:
    """Residual threshold minimizing oLRP on labeled validation frames."""
    from .evalkit import olrp

    frames = list(validation_frames)
    if not frames:
        raise EmptyDatasetError("validation set is empty")
    if all(f.boxes is None for f in frames):
        raise EmptyDatasetError("validation frames carry no box annotations")
    detector = AnomalyDetector(weights)
    residuals = [detector.residual(f) for f in frames]
    best_tau = None
    best = None
    for tau in sorted(grid):
        pairs = [(detect_on_field(res, float(tau), min_blob_area),
                  list(f.boxes or ()))
                 for res, f in zip(residuals, frames)]
        score = olrp(pairs).olrp
        if best is None or score < best:
            best = score
            best_tau = float(tau)
    return best_tau
