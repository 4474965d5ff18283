"""Conditional Adaptation Tailor: a residual latent adapter trained at test time.

``Z* = conv2(relu(conv1(Z))) + Z`` sits between feature extraction and the
channel transformation head. ``conv2`` starts at zero, so a fresh adapter
leaves the backbone output untouched bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import diffnn as dn
from .backbone import Backbone, he_init
from .core import Rng, as_chw
from .errors import ShapeError, ValidationError
from .resample import SensorDescriptor

log = logging.getLogger(__name__)

PRESETS: dict[str, tuple[float, float, float]] = {
    "real_world": (1.0, 1.0, 0.1),
    "simulated": (10.0, 100.0, 10000.0),
}


@dataclass(frozen=True)
class AdaptConfig:
    n_patches: int = 8
    patch_size: int = 64
    epochs: int = 10
    lr: float = 1e-4
    weight_decay: float = 1e-5
    preset: str = "real_world"
    eta: tuple[float, float, float] | None = None
    seed: int = 0
    eps_div: float = 1e-6

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValidationError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        eta = PRESETS[self.preset] if self.eta is None else tuple(float(e) for e in self.eta)
        if len(eta) != 3 or any(e < 0 for e in eta):
            raise ValidationError(f"eta must be three nonnegative weights, got {eta}")
        object.__setattr__(self, "eta", eta)
        if self.n_patches < 1:
            raise ValidationError("n_patches must be >= 1")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.patch_size < 1:
            raise ValidationError("patch_size must be positive")

    def check_ratio(self, r: int) -> None:
        if self.patch_size % r:
            raise ValidationError(f"patch size {self.patch_size} not divisible by ratio {r}")

    def with_preset(self, preset: str) -> "AdaptConfig":
        return replace(self, preset=preset, eta=None)


# ---------------------------------------------------------------- params


def init_cat(latent: int, seed: int = 0, kernel: int = 3) -> dict[str, dn.Param]:
    rng = Rng(seed).spawn("cat")
    shape = (latent, latent, kernel, kernel)
    return {
        "cat/conv1.weight": dn.Param("cat/conv1.weight", he_init(shape, rng)),
        "cat/conv1.bias": dn.Param("cat/conv1.bias", np.zeros(latent, np.float32)),
        "cat/conv2.weight": dn.Param("cat/conv2.weight", np.zeros(shape, np.float32)),
        "cat/conv2.bias": dn.Param("cat/conv2.bias", np.zeros(latent, np.float32)),
    }


def residual_branch(z, phi: dict[str, dn.Param]) -> dn.Var:
    h = dn.relu(dn.conv2d(z, phi["cat/conv1.weight"], phi["cat/conv1.bias"]))
    return dn.conv2d(h, phi["cat/conv2.weight"], phi["cat/conv2.bias"])


def cat_forward(z, phi: dict[str, dn.Param]) -> dn.Var:
    zv = z if isinstance(z, dn.Var) else dn.Var(as_chw(z))
    s = phi["cat/conv1.weight"].shape[1]
    if zv.shape[0] != s:
        raise ShapeError(f"latent has {zv.shape[0]} channels, adapter expects {s}")
    return dn.add(residual_branch(zv, phi), zv)


def adapted_forward(y, p, backbone: Backbone, phi: dict[str, dn.Param]) -> tuple[dn.Var, dn.Var]:
    """Return (X, X*). F1 runs once; both heads share its latent."""
    z = backbone.extract_features(y, p)
    return tailored_heads(z, y, backbone, phi)


def tailored_heads(z, y, backbone: Backbone, phi) -> tuple[dn.Var, dn.Var]:
    xhat = backbone.transform_channels(z, y)
    xstar = backbone.transform_channels(cat_forward(z, phi), y)
    return xhat, xstar


# ----------------------------------------------------------------- losses


def _check_ratio(shape: tuple[int, ...], r: int) -> None:
    if shape[-1] % r or shape[-2] % r:
        raise ShapeError(f"patch {shape[-2]}x{shape[-1]} not divisible by ratio {r}")


def loss_spe(xstar, y, sensor: SensorDescriptor) -> dn.Var:
    """Mean |decimate(blur(X*)) - Y| with the per-band MS kernels."""
    xs = xstar if isinstance(xstar, dn.Var) else dn.Var(as_chw(xstar))
    _check_ratio(xs.shape, sensor.ratio)
    low = dn.decimate(dn.blur(xs, sensor.ms_kernels()), sensor.ratio)
    return dn.l1_loss(low, as_chw(y))


def detail_ratio(p, bands: int, sensor: SensorDescriptor, eps_div: float = 1e-6) -> np.ndarray:
    """``P_hat / (blur(P_hat) + eps)`` with PAN replicated to every band."""
    phat = np.repeat(as_chw(p), bands, axis=0)
    pb = dn.blur(phat, sensor.pan_kernel()).value
    return phat / (pb + eps_div)


def loss_spa(xstar, p, sensor: SensorDescriptor, eps_div: float = 1e-6, ratio_map=None) -> dn.Var:
    """Mean |X* - blur(X*) * (P_hat / (blur(P_hat) + eps))|.

    ``ratio_map`` may carry a precomputed :func:`detail_ratio` for ``p``.
    """
    xs = xstar if isinstance(xstar, dn.Var) else dn.Var(as_chw(xstar))
    if ratio_map is None:
        ratio_map = detail_ratio(p, xs.shape[0], sensor, eps_div)
    if ratio_map.shape != xs.shape:
        raise ShapeError(f"PAN ratio map {ratio_map.shape} does not match X* {xs.shape}")
    target = dn.mul(dn.blur(xs, sensor.ms_kernels()), ratio_map)
    return dn.l1_loss(xs, target)


def loss_ori(xstar, xhat) -> dn.Var:
    xh = xhat.value if isinstance(xhat, dn.Var) else xhat
    return dn.l1_loss(xstar, xh)


def total_loss(spe, spa, ori, eta: Sequence[float]) -> dn.Var:
    if len(eta) != 3 or any(e < 0 for e in eta):
        raise ValidationError(f"loss weights must be three nonnegative values, got {tuple(eta)}")
    out = dn.add(dn.scale(spe, eta[0]), dn.scale(spa, eta[1]))
    return dn.add(out, dn.scale(ori, eta[2]))


@dataclass
class LossTerms:
    spe: float
    spa: float
    ori: float
    total: float


def patch_losses(xhat, xstar, y, p, sensor, cfg: AdaptConfig, ratio_map=None):
    spe = loss_spe(xstar, y, sensor)
    spa = loss_spa(xstar, p, sensor, cfg.eps_div, ratio_map)
    ori = loss_ori(xstar, xhat)
    return spe, spa, ori, total_loss(spe, spa, ori, cfg.eta)


# -------------------------------------------------------------- adaptation


@dataclass
class AdaptResult:
    phi: dict[str, dn.Param]
    trace: list[LossTerms] = field(default_factory=list)
    epochs: int = 0
    steps_per_epoch: int = 0

    def totals(self) -> list[float]:
        return [t.total for t in self.trace]

    def epoch_means(self) -> list[float]:
        k = self.steps_per_epoch
        tot = self.totals()
        return [float(np.mean(tot[i * k:(i + 1) * k])) for i in range(self.epochs)]


def adapt(
    patches: Sequence[tuple[np.ndarray, np.ndarray]],
    backbone: Backbone,
    cfg: AdaptConfig,
    sensor: SensorDescriptor,
    phi: dict[str, dn.Param] | None = None,
) -> AdaptResult:
    """Train the adapter on the selected (LRMS, PAN) patches, backbone frozen.

    Each epoch visits the patches in the given order with one Adam step per
    patch. F1 features and the untailored output are fixed, so they are
    computed once per patch.
    """
    if not patches:
        raise ValidationError("adaptation needs at least one selected patch")
    r = backbone.cfg.ratio
    if phi is None:
        phi = init_cat(backbone.cfg.latent, cfg.seed, backbone.cfg.kernel)
    prepared = []
    flags = {n: p.trainable for n, p in backbone.params.items()}
    backbone.set_trainable(False)
    try:
        for y, p in patches:
            y, p = as_chw(y), as_chw(p)
            _check_ratio(p.shape, r)
            with dn.Tape():
                z = backbone.extract_features(y, p)
                xhat = backbone.transform_channels(z, y)
            prepared.append((y, p, z, xhat.value, detail_ratio(p, y.shape[0], sensor, cfg.eps_div)))
        state = dn.AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay)
        result = AdaptResult(phi, epochs=cfg.epochs, steps_per_epoch=len(prepared))
        for epoch in range(cfg.epochs):
            for y, p, z, xhat, ratio_map in prepared:
                dn.zero_grads(phi)
                with dn.Tape() as tape:
                    xstar = backbone.transform_channels(cat_forward(z, phi), y)
                    spe, spa, ori, tot = patch_losses(xhat, xstar, y, p, sensor, cfg, ratio_map)
                tape.backward(tot)
                dn.adam_step(phi, state)
                result.trace.append(LossTerms(float(spe.value), float(spa.value), float(ori.value), float(tot.value)))
            log.debug("adapt epoch %d mean loss %.6g", epoch,
                      np.mean([t.total for t in result.trace[-len(prepared):]]))
    finally:
        for n, p in backbone.params.items():
            p.set_trainable(flags[n])
    return result
