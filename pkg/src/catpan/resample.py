"""Sensor physics: MTF-matched blur, decimation, bicubic upsampling, Wald
reduction and a procedural multi-band scene generator.

Conventions pinned here:

* All border handling is half-sample symmetric (``numpy.pad(mode="symmetric")``).
* Decimation keeps the top-left sample of every ``r x r`` cell.
* Upsampling places original sample ``i`` at output ``r * i``, so
  ``decimate(upsample(x, r), r) == x`` exactly.

Separable kernels (every kernel built by :func:`mtf_kernel`) are applied as
two sparse 1-D operators per band; the transpose of the same operators gives
the exact adjoint used by the autodiff layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.ndimage as ndi
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from .core import RasterTensor, Rng, as_chw
from .errors import ShapeError, ValidationError

BICUBIC_A = -0.5


@dataclass(frozen=True)
class SensorDescriptor:
    """Acquisition model of one (synthetic) sensor.

    ``pan_weights`` fixes the number of multispectral bands. ``mtf_gain``
    may be given as a single value and is broadcast to every band.
    """

    name: str = "sensor-a"
    ratio: int = 4
    mtf_gain: tuple[float, ...] = (0.30,)
    pan_mtf_gain: float = 0.17
    pan_weights: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    radiometric_gamma: float = 1.0
    kernel_size: int = 41

    def __post_init__(self):
        weights = tuple(float(w) for w in np.atleast_1d(self.pan_weights))
        gains = tuple(float(g) for g in np.atleast_1d(self.mtf_gain))
        if len(gains) == 1:
            gains = gains * len(weights)
        object.__setattr__(self, "pan_weights", weights)
        object.__setattr__(self, "mtf_gain", gains)
        if len(gains) != len(weights):
            raise ValidationError(f"{len(gains)} MTF gains for {len(weights)} bands")
        if int(self.ratio) != self.ratio or self.ratio < 2:
            raise ValidationError(f"ratio must be an integer >= 2, got {self.ratio}")
        for g in gains + (self.pan_mtf_gain,):
            if not 0.0 < g < 1.0:
                raise ValidationError(f"MTF gain must lie in (0, 1), got {g}")
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-6:
            raise ValidationError(f"pan_weights must be nonnegative and sum to 1, got {weights}")
        if self.radiometric_gamma <= 0:
            raise ValidationError("radiometric_gamma must be > 0")
        _check_kernel_size(self.kernel_size, self.ratio)

    @property
    def bands(self) -> int:
        return len(self.pan_weights)

    def ms_kernels(self) -> list[np.ndarray]:
        return [mtf_kernel(g, self.ratio, self.kernel_size) for g in self.mtf_gain]

    def pan_kernel(self) -> np.ndarray:
        return mtf_kernel(self.pan_mtf_gain, self.ratio, self.kernel_size)


@dataclass(frozen=True)
class SceneBundle:
    gt: RasterTensor
    lrms: RasterTensor
    pan: RasterTensor
    sensor: SensorDescriptor
    seed: int = 0
    meta: dict = field(default_factory=dict, compare=False)


# ----------------------------------------------------------------- kernels


def _check_kernel_size(size: int, r: int) -> None:
    if size % 2 == 0:
        raise ValidationError(f"kernel size must be odd, got {size}")
    if size < 4 * r + 1:
        raise ValidationError(f"kernel size {size} is below 4r+1 = {4 * r + 1}")


def mtf_sigma(gain: float, r: int) -> float:
    """Gaussian width whose frequency response equals ``gain`` at 1/(2r) cycles/pixel."""
    return (r / np.pi) * np.sqrt(-2.0 * np.log(gain))


@lru_cache(maxsize=64)
def _mtf_kernel_1d(gain: float, r: int, size: int) -> np.ndarray:
    sigma = mtf_sigma(gain, r)
    x = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    g.flags.writeable = False
    return g


def mtf_kernel(gain: float, r: int, size: int = 41) -> np.ndarray:
    """Isotropic sampled Gaussian matched to the Nyquist gain, summing to 1."""
    if not 0.0 < gain < 1.0:
        raise ValidationError(f"gain must lie in (0, 1), got {gain}")
    _check_kernel_size(size, r)
    g = _mtf_kernel_1d(float(gain), int(r), int(size))
    return np.outer(g, g)


def _symmetric_index(n: int, pad: int) -> np.ndarray:
    return np.pad(np.arange(n), pad, mode="symmetric")


@lru_cache(maxsize=256)
def _correlate_operator(n: int, kernel_bytes: bytes) -> sp.csr_matrix:
    k = np.frombuffer(kernel_bytes, dtype=np.float64)
    m = k.size // 2
    src = _symmetric_index(n, m)
    rows = np.repeat(np.arange(n), k.size)
    cols = src[np.arange(n)[:, None] + np.arange(k.size)[None, :]].ravel()
    vals = np.tile(k, n)
    # duplicates (folded border taps) are summed by the constructor
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _split_separable(kernel: np.ndarray):
    rows, cols = kernel.sum(axis=1), kernel.sum(axis=0)
    total = kernel.sum()
    if total == 0:
        return None
    recon = np.outer(rows, cols) / total
    if np.allclose(recon, kernel, rtol=1e-12, atol=1e-15):
        return rows / np.sqrt(total) * np.sign(total), cols / np.sqrt(abs(total))
    return None


def _normalise_kernels(kernels, channels: int) -> list[np.ndarray]:
    if isinstance(kernels, np.ndarray) and kernels.ndim == 2:
        ks = [kernels] * channels
    else:
        ks = [np.asarray(k, dtype=np.float64) for k in kernels]
    if len(ks) != channels:
        raise ShapeError(f"{len(ks)} kernels for {channels} bands")
    return [np.asarray(k, dtype=np.float64) for k in ks]


def _blur_band(band: np.ndarray, kernel: np.ndarray, adjoint: bool) -> np.ndarray:
    h, w = band.shape
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValidationError(f"kernel must have odd sides, got {kernel.shape}")
    if kh > 2 * h or kw > 2 * w:
        raise ValidationError(f"kernel {kernel.shape} larger than twice the image extent {band.shape}")
    split = _split_separable(kernel)
    if split is not None:
        kr, kc = split
        a_r = _correlate_operator(h, np.ascontiguousarray(kr).tobytes())
        a_c = _correlate_operator(w, np.ascontiguousarray(kc).tobytes())
        if adjoint:
            return (a_c.T @ (a_r.T @ band).T).T
        return (a_c @ (a_r @ band).T).T
    # general 2-D kernel: gather-pad, correlate, and the matching scatter
    mh, mw = kh // 2, kw // 2
    ri, ci = _symmetric_index(h, mh), _symmetric_index(w, mw)
    if adjoint:
        gp = np.zeros((h + 2 * mh, w + 2 * mw))
        for s in range(kh):
            for t in range(kw):
                gp[s:s + h, t:t + w] += kernel[s, t] * band
        out = np.zeros((h, w))
        np.add.at(out, (ri[:, None], ci[None, :]), gp)
        return out
    padded = band[ri][:, ci]
    return np.einsum("ijkl,kl->ij", sliding_window_view(padded, (kh, kw)), kernel)


def blur(img, kernels) -> np.ndarray:
    """Per-band correlation with symmetric padding; same shape as ``img``.

    ``kernels`` is a single 2-D kernel or one kernel per band.
    """
    x = as_chw(img)
    ks = _normalise_kernels(kernels, x.shape[0])
    return np.stack([_blur_band(x[c], ks[c], adjoint=False) for c in range(x.shape[0])])


def blur_adjoint(grad, kernels) -> np.ndarray:
    """Transpose of :func:`blur` as a linear map."""
    g = as_chw(grad)
    ks = _normalise_kernels(kernels, g.shape[0])
    return np.stack([_blur_band(g[c], ks[c], adjoint=True) for c in range(g.shape[0])])


# ------------------------------------------------------- sampling operators


def decimate(img, r: int) -> np.ndarray:
    x = as_chw(img)
    _, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"image {h}x{w} not divisible by ratio {r}; pad or crop upstream")
    return np.ascontiguousarray(x[:, ::r, ::r])


def decimate_adjoint(grad, r: int, shape: tuple[int, int, int]) -> np.ndarray:
    out = np.zeros(shape)
    out[:, ::r, ::r] = grad
    return out


def cubic_weight(x, a: float = BICUBIC_A):
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(
        x <= 1.0,
        (a + 2.0) * x**3 - (a + 3.0) * x**2 + 1.0,
        np.where(x < 2.0, a * x**3 - 5.0 * a * x**2 + 8.0 * a * x - 4.0 * a, 0.0),
    )


@lru_cache(maxsize=64)
def _upsample_operator(n: int, r: int) -> sp.csr_matrix:
    out = np.arange(n * r)
    base, phase = out // r, (out % r) / r
    offsets = np.arange(-1, 3)
    taps = base[:, None] + offsets[None, :]
    weights = cubic_weight(phase[:, None] - offsets[None, :])
    src = _symmetric_index(n, 2)[taps + 2]
    rows = np.repeat(out, offsets.size)
    return sp.csr_matrix((weights.ravel(), (rows, src.ravel())), shape=(n * r, n))


def upsample(img, r: int) -> np.ndarray:
    """Separable bicubic (a = -0.5) interpolation by an integer factor."""
    if r < 2:
        raise ValidationError(f"upsampling ratio must be >= 2, got {r}")
    x = as_chw(img)
    c, h, w = x.shape
    u_r, u_c = _upsample_operator(h, r), _upsample_operator(w, r)
    return np.stack([(u_c @ (u_r @ x[b]).T).T for b in range(c)])


def upsample_adjoint(grad, r: int) -> np.ndarray:
    g = as_chw(grad)
    c, hr, wr = g.shape
    u_r, u_c = _upsample_operator(hr // r, r), _upsample_operator(wr // r, r)
    return np.stack([(u_c.T @ (u_r.T @ g[b]).T).T for b in range(c)])


def degrade(img, kernels, r: int) -> np.ndarray:
    """MTF blur followed by decimation."""
    return decimate(blur(img, kernels), r)


# ------------------------------------------------------------------ scenes


def _smooth_noise(rng: Rng, h: int, w: int, sigma: float) -> np.ndarray:
    field_ = ndi.gaussian_filter(rng.normal((h, w)), sigma, mode="wrap")
    return field_ / (field_.std() + 1e-12)


def _scene_gt(rng: Rng, bands: int, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    # shared low-frequency illumination and terrain
    shared = (
        rng.uniform(-0.3, 0.3) * xx
        + rng.uniform(-0.3, 0.3) * yy
        + 0.12 * _smooth_noise(rng, h, w, max(h, w) / 12)
    )
    # land-cover rectangles, each with its own spectrum
    n_rect = max(6, int(24 * h * w / 256**2))
    cover = np.zeros((bands, h, w))
    for _ in range(n_rect):
        rh = int(rng.integers(max(2, h // 3))) + 2
        rw = int(rng.integers(max(2, w // 3))) + 2
        r0, c0 = int(rng.integers(h - 1)), int(rng.integers(w - 1))
        spectrum = rng.uniform(-0.25, 0.25, (bands,))
        cover[:, r0:r0 + rh, c0:c0 + rw] += spectrum[:, None, None]
    fine = _smooth_noise(rng, h, w, 0.8)
    medium = _smooth_noise(rng, h, w, 3.0)
    gt = np.empty((bands, h, w))
    for b in range(bands):
        own = _smooth_noise(rng, h, w, 2.0)
        mix = rng.uniform(0.6, 0.9)
        texture = mix * (0.05 * fine + 0.06 * medium) + (1 - mix) * 0.08 * own
        gt[b] = rng.uniform(0.35, 0.55) + shared + cover[b] + texture
    lo, hi = np.percentile(gt, [0.5, 99.5])
    gt = 0.05 + 0.9 * (gt - lo) / max(hi - lo, 1e-12)
    return np.clip(gt, 0.0, 1.0)


def synthesize_pan(gt, sensor: SensorDescriptor) -> np.ndarray:
    g = as_chw(gt)
    w = np.asarray(sensor.pan_weights, dtype=np.float64)
    pan = np.tensordot(w, g, axes=1)
    return np.maximum(pan, 0.0) ** sensor.radiometric_gamma


def synth_scene(seed: int, sensor: SensorDescriptor, height: int, width: int) -> SceneBundle:
    """Deterministic procedural scene with its LRMS and PAN observations."""
    r = sensor.ratio
    if height % r or width % r:
        raise ShapeError(f"scene size {height}x{width} not divisible by ratio {r}")
    rng = Rng(seed)
    gt = RasterTensor(_scene_gt(rng, sensor.bands, height, width))
    gt64 = gt.as_f64()
    lrms = RasterTensor(degrade(gt64, sensor.ms_kernels(), r))
    pan = RasterTensor(synthesize_pan(gt64, sensor))
    return SceneBundle(gt=gt, lrms=lrms, pan=pan, sensor=sensor, seed=int(seed))


def wald_reduce(bundle: SceneBundle) -> SceneBundle:
    """Move a bundle one resolution step down; the old LRMS becomes ground truth."""
    s = bundle.sensor
    r = s.ratio
    _, h, w = bundle.lrms.shape
    if h % r or w % r or h // r < 2 or w // r < 2:
        raise ShapeError(f"LRMS {h}x{w} too small to reduce by ratio {r}")
    lrms = RasterTensor(degrade(bundle.lrms.as_f64(), s.ms_kernels(), r))
    pan = RasterTensor(degrade(bundle.pan.as_f64(), s.pan_kernel(), r))
    return SceneBundle(gt=bundle.lrms, lrms=lrms, pan=pan, sensor=s, seed=bundle.seed,
                       meta={**bundle.meta, "reduced": bundle.meta.get("reduced", 0) + 1})


def crop_to_multiple(lrms, pan, multiple: int, r: int):
    """Crop an LRMS/PAN pair so the PAN sides are multiples of ``multiple``."""
    y, p = as_chw(lrms), as_chw(pan)
    h = (p.shape[1] // multiple) * multiple
    w = (p.shape[2] // multiple) * multiple
    if h == 0 or w == 0:
        raise ShapeError(f"PAN {p.shape[1:]} smaller than one {multiple}-pixel patch")
    return y[:, : h // r, : w // r], p[:, :h, :w]
