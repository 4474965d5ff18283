"""The fusion backbone: feature extraction F1, channel transformation F2 and the
upsampled-LRMS residual, plus desk-scale supervised pretraining.

Parameter names::

    f1/stem.weight, f1/stem.bias                (C+1 -> S)
    f1/block{i}.conv_a.*, f1/block{i}.conv_b.*  (S -> S)
    f2/head.weight, f2/head.bias                (S -> C)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diffnn as dn
from .core import Rng, as_chw, read_named, write_named
from .errors import ShapeError, ValidationError
from .resample import SceneBundle

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BackboneConfig:
    bands: int = 4
    ratio: int = 4
    latent: int = 32
    blocks: int = 2
    kernel: int = 3

    def __post_init__(self):
        if self.latent < self.bands:
            raise ValidationError(f"latent channels {self.latent} < bands {self.bands}")
        if self.blocks < 0:
            raise ValidationError("blocks must be >= 0")
        if self.kernel % 2 == 0:
            raise ValidationError("kernel size must be odd")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        c, s, k = self.bands, self.latent, self.kernel
        out = {"f1/stem.weight": (s, c + 1, k, k), "f1/stem.bias": (s,)}
        for i in range(self.blocks):
            for conv in ("conv_a", "conv_b"):
                out[f"f1/block{i}.{conv}.weight"] = (s, s, k, k)
                out[f"f1/block{i}.{conv}.bias"] = (s,)
        out["f2/head.weight"] = (c, s, k, k)
        out["f2/head.bias"] = (c,)
        return out


def he_init(shape: tuple[int, ...], rng: Rng) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(shape, scale=np.sqrt(2.0 / fan_in)).astype(np.float32)


def _check_inputs(y: np.ndarray, p: np.ndarray, cfg: BackboneConfig) -> None:
    if y.shape[0] != cfg.bands:
        raise ShapeError(f"LRMS has {y.shape[0]} bands, model expects {cfg.bands}")
    if p.shape[0] != 1:
        raise ShapeError(f"PAN must have one channel, got {p.shape[0]}")
    if p.shape[1] != cfg.ratio * y.shape[1] or p.shape[2] != cfg.ratio * y.shape[2]:
        raise ShapeError(
            f"PAN {p.shape[1]}x{p.shape[2]} must be ratio {cfg.ratio} times LRMS {y.shape[1]}x{y.shape[2]}"
        )


class Backbone:
    """F = F2 . F1 with ``X = F2(Z) + upsample(Y)``."""

    def __init__(self, cfg: BackboneConfig, params: dict[str, dn.Param]):
        self.cfg = cfg
        self.params = params
        expected = cfg.shapes()
        if set(params) != set(expected):
            missing = sorted(set(expected) - set(params))
            extra = sorted(set(params) - set(expected))
            raise ShapeError(f"backbone params mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError(f"tensor {name} has shape {params[name].shape}, expected {shape}")

    @classmethod
    def init(cls, cfg: BackboneConfig, seed: int = 0) -> "Backbone":
        rng = Rng(seed).spawn("backbone")
        params = {}
        for name, shape in cfg.shapes().items():
            value = he_init(shape, rng) if name.endswith("weight") else np.zeros(shape, np.float32)
            params[name] = dn.Param(name, value)
        return cls(cfg, params)

    @classmethod
    def zeros(cls, cfg: BackboneConfig) -> "Backbone":
        return cls(cfg, {n: dn.Param(n, np.zeros(s, np.float32)) for n, s in cfg.shapes().items()})

    def theta1(self) -> dict[str, dn.Param]:
        return {n: p for n, p in self.params.items() if n.startswith("f1/")}

    def theta2(self) -> dict[str, dn.Param]:
        return {n: p for n, p in self.params.items() if n.startswith("f2/")}

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.set_trainable(flag)

    def copy(self) -> "Backbone":
        return Backbone(self.cfg, {n: dn.Param(n, p.value, p.trainable) for n, p in self.params.items()})

    def state(self) -> dict[str, np.ndarray]:
        return {n: np.array(p.value, copy=True) for n, p in self.params.items()}

    # -------------------------------------------------------------- forward

    def extract_features(self, y, p) -> dn.Var:
        """F1: stem over ``[upsample(Y); P]`` then residual blocks; S x H x W."""
        yv, pv = _as_input(y), _as_input(p)
        _check_inputs(yv.value, pv.value, self.cfg)
        up = dn.upsample(yv, self.cfg.ratio)
        x = _concat(up, pv)
        w = self.params
        z = dn.relu(dn.conv2d(x, w["f1/stem.weight"], w["f1/stem.bias"]))
        for i in range(self.cfg.blocks):
            pre = f"f1/block{i}."
            h = dn.relu(dn.conv2d(z, w[pre + "conv_a.weight"], w[pre + "conv_a.bias"]))
            h = dn.conv2d(h, w[pre + "conv_b.weight"], w[pre + "conv_b.bias"])
            z = dn.relu(dn.add(z, h))
        return z

    def transform_channels(self, z, y) -> dn.Var:
        """F2 plus residual: ``conv_{S->C}(Z) + upsample(Y)``."""
        zv = z if isinstance(z, dn.Var) else dn.Var(as_chw(z))
        if zv.shape[0] != self.cfg.latent:
            raise ShapeError(f"latent has {zv.shape[0]} channels, head expects {self.cfg.latent}")
        w = self.params
        head = dn.conv2d(zv, w["f2/head.weight"], w["f2/head.bias"])
        return dn.add(head, dn.upsample(_as_input(y), self.cfg.ratio))

    def forward(self, y, p) -> tuple[dn.Var, dn.Var]:
        z = self.extract_features(y, p)
        return z, self.transform_channels(z, y)

    def predict(self, y, p) -> np.ndarray:
        return self.forward(y, p)[1].value

    # ------------------------------------------------------------ storage

    def save(self, path) -> None:
        save_params(path, self.params)

    @classmethod
    def load(cls, path, cfg: BackboneConfig) -> "Backbone":
        tensors = read_named(path)
        return cls.from_tensors(tensors, cfg)

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], cfg: BackboneConfig) -> "Backbone":
        expected = cfg.shapes()
        picked = {}
        for name, arr in tensors.items():
            if name.startswith("cat/"):
                continue
            if name not in expected:
                raise ShapeError(f"unknown tensor {name!r} for this backbone config")
            if tuple(arr.shape) != expected[name]:
                raise ShapeError(f"tensor {name} has shape {tuple(arr.shape)}, config expects {expected[name]}")
            picked[name] = dn.Param(name, arr)
        return cls(cfg, picked)


def _as_input(x) -> dn.Var:
    return x if isinstance(x, dn.Var) else dn.Var(as_chw(x))


def _concat(a: dn.Var, b: dn.Var) -> dn.Var:
    if a.requires_grad or b.requires_grad:
        raise ValidationError("stem inputs are data, not differentiable tensors")
    return dn.Var(np.concatenate([a.value, b.value], axis=0))


def save_params(path, params) -> None:
    """Write a dict or sequence of Params; names must be unique."""
    plist = list(params.values()) if isinstance(params, dict) else list(params)
    names = [p.name for p in plist]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate parameter names")
    write_named(path, {p.name: p.value for p in plist})


def load_params(path) -> dict[str, dn.Param]:
    return {n: dn.Param(n, a) for n, a in read_named(path).items()}


# ------------------------------------------------------------ pretraining


@dataclass
class PretrainResult:
    backbone: Backbone
    loss_trace: list[float] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)


def pretrain(
    dataset: Sequence[SceneBundle],
    cfg: BackboneConfig,
    *,
    epochs: int = 200,
    lr: float = 5e-4,
    seed: int = 0,
    init: Backbone | None = None,
) -> PretrainResult:
    """Supervised L1 training on Wald-reduced bundles, one Adam step per scene.

    Scene order is reshuffled every epoch from the seeded generator.
    """
    if not dataset:
        raise ValidationError("pretraining dataset is empty")
    model = init.copy() if init is not None else Backbone.init(cfg, seed)
    model.set_trainable(True)
    data = [(b.lrms.as_f64(), b.pan.as_f64(), b.gt.as_f64()) for b in dataset]
    for y, p, gt in data:
        _check_inputs(y, p, cfg)
        if gt.shape != (cfg.bands,) + p.shape[1:]:
            raise ShapeError(f"ground truth {gt.shape} must be at PAN resolution")
    state = dn.AdamState(lr=lr)
    order_rng = Rng(seed).spawn("pretrain-order")
    result = PretrainResult(model)
    for epoch in range(epochs):
        order = order_rng.sample_without_replacement(len(data), len(data))
        losses = []
        for idx in order:
            y, p, gt = data[idx]
            dn.zero_grads(model.params)
            with dn.Tape() as tape:
                _, xhat = model.forward(y, p)
                loss = dn.l1_loss(xhat, gt)
            tape.backward(loss)
            dn.adam_step(model.params, state)
            losses.append(float(loss.value))
        result.loss_trace.extend(losses)
        result.epoch_loss.append(float(np.mean(losses)))
        if epoch % 20 == 0 or epoch == epochs - 1:
            log.info("pretrain epoch %d loss %.6f", epoch, result.epoch_loss[-1])
    return result
