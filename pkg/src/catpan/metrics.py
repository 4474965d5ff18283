"""No-reference (D_lambda, D_s, HQNR) and reduced-resolution (SAM, ERGAS) indices.

D_lambda follows the Khan consistency protocol with the mean per-band Q
index in place of the hypercomplex Q2n, so values are labelled
``per-band Q variant`` and are not toolbox-identical. Q is evaluated on
non-overlapping blocks.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import as_chw
from .errors import DegenerateInputError, ShapeError, ValidationError
from .resample import SensorDescriptor, blur, decimate

log = logging.getLogger(__name__)

DENOM_FLOOR = 1e-12
D_LAMBDA_VARIANT = "per-band Q variant"


@dataclass
class QualityReport:
    d_lambda: float
    d_s: float
    hqnr: float
    sam: float | None = None
    ergas: float | None = None
    block_pan: int = 32
    block_ms: int = 8
    q_lambda: list[float] = field(default_factory=list)
    q_s_high: list[float] = field(default_factory=list)
    q_s_low: list[float] = field(default_factory=list)
    variant: str = D_LAMBDA_VARIANT
    blocks: str = "non-overlapping"
    clamped: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


def ms_block(r: int, block: int = 32) -> int:
    return max(block // r, 8)


def q_index(a, b, block: int = 32) -> float:
    """Universal image quality index averaged over non-overlapping blocks.

    Trailing partial blocks are dropped and blocks whose denominator falls
    below 1e-12 are skipped.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ShapeError(f"q_index needs two equal 2-D bands, got {x.shape} and {y.shape}")
    h, w = x.shape
    if h < block or w < block:
        raise ShapeError(f"band {h}x{w} smaller than block {block}")
    nh, nw = h // block, w // block

    def tiles(arr):
        t = arr[: nh * block, : nw * block].reshape(nh, block, nw, block)
        return t.transpose(0, 2, 1, 3).reshape(nh * nw, block * block)

    tx, ty = tiles(x), tiles(y)
    mx, my = tx.mean(axis=1), ty.mean(axis=1)
    dx, dy = tx - mx[:, None], ty - my[:, None]
    vx, vy = (dx * dx).mean(axis=1), (dy * dy).mean(axis=1)
    cxy = (dx * dy).mean(axis=1)
    denom = (vx + vy) * (mx * mx + my * my)
    keep = denom >= DENOM_FLOOR
    if not np.any(keep):
        raise DegenerateInputError("degenerate input: every Q block is flat or zero-mean")
    q = 4.0 * cxy[keep] * mx[keep] * my[keep] / denom[keep]
    return float(q.mean())


def _clamp(name: str, value: float, events: list[str] | None) -> float:
    if 0.0 <= value <= 1.0:
        return value
    clamped = min(max(value, 0.0), 1.0)
    log.warning("%s = %.6g outside [0, 1]; reporting %.6g", name, value, clamped)
    if events is not None:
        events.append(f"{name}={value!r}")
    return clamped


def d_lambda(fused, lrms, sensor: SensorDescriptor, block: int = 32, *, details: dict | None = None,
             clamp: bool = True) -> float:
    """``1 - mean_b Q(degrade(X)_b, Y_b)`` on the MS grid."""
    x, y = as_chw(fused), as_chw(lrms)
    r = sensor.ratio
    if x.shape[0] != y.shape[0] or x.shape[1] != r * y.shape[1] or x.shape[2] != r * y.shape[2]:
        raise ShapeError(f"fused {x.shape} is not ratio {r} times LRMS {y.shape}")
    low = decimate(blur(x, sensor.ms_kernels()), r)
    bs = ms_block(r, block)
    qs = [q_index(low[b], y[b], bs) for b in range(y.shape[0])]
    value = 1.0 - float(np.mean(qs))
    if details is not None:
        details["q_lambda"] = qs
        details["raw_d_lambda"] = value
    if clamp:
        value = _clamp("d_lambda", value, details.setdefault("clamped", []) if details is not None else None)
    return value


def d_s(fused, lrms, pan, sensor: SensorDescriptor, block: int = 32, *, details: dict | None = None,
        clamp: bool = True) -> float:
    """``mean_b |Q(X_b, P) - Q(Y_b, P_low)|`` with ``P_low`` the degraded PAN."""
    x, y, p = as_chw(fused), as_chw(lrms), as_chw(pan)
    r = sensor.ratio
    if p.shape[0] != 1 or p.shape[1:] != x.shape[1:]:
        raise ShapeError(f"PAN {p.shape} must be 1 x {x.shape[1]} x {x.shape[2]}")
    if x.shape[1] != r * y.shape[1] or x.shape[2] != r * y.shape[2]:
        raise ShapeError(f"fused {x.shape} is not ratio {r} times LRMS {y.shape}")
    if np.ptp(p) == 0:
        raise DegenerateInputError("degenerate input: PAN has no spatial structure")
    p_low = decimate(blur(p, sensor.pan_kernel()), r)
    bs = ms_block(r, block)
    high = [q_index(x[b], p[0], block) for b in range(x.shape[0])]
    low = [q_index(y[b], p_low[0], bs) for b in range(y.shape[0])]
    value = float(np.mean(np.abs(np.asarray(high) - np.asarray(low))))
    if details is not None:
        details["q_s_high"] = high
        details["q_s_low"] = low
        details["raw_d_s"] = value
    if clamp:
        value = _clamp("d_s", value, details.setdefault("clamped", []) if details is not None else None)
    return value


def hqnr(d_lam: float, ds: float) -> float:
    if not (0.0 <= d_lam <= 1.0 and 0.0 <= ds <= 1.0):
        raise ValidationError(f"distortions must lie in [0, 1], got D_lambda={d_lam}, D_s={ds}")
    return (1.0 - d_lam) * (1.0 - ds)


def sam(fused, gt) -> float:
    """Mean spectral angle in degrees, skipping pixels with a zero-norm spectrum."""
    x, g = as_chw(fused), as_chw(gt)
    if x.shape != g.shape:
        raise ShapeError(f"SAM shapes differ: {x.shape} vs {g.shape}")
    xf, gf = x.reshape(x.shape[0], -1), g.reshape(g.shape[0], -1)
    nx, ng = np.linalg.norm(xf, axis=0), np.linalg.norm(gf, axis=0)
    keep = (nx > 0) & (ng > 0)
    if not np.any(keep):
        raise DegenerateInputError("degenerate input: every pixel has a zero-norm spectrum")
    cos = (xf[:, keep] * gf[:, keep]).sum(axis=0) / (nx[keep] * ng[keep])
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))).mean())


def ergas(fused, gt, r: int) -> float:
    x, g = as_chw(fused), as_chw(gt)
    if x.shape != g.shape:
        raise ShapeError(f"ERGAS shapes differ: {x.shape} vs {g.shape}")
    mu = g.reshape(g.shape[0], -1).mean(axis=1)
    if np.any(np.abs(mu) < 1e-12):
        raise DegenerateInputError("degenerate input: a reference band has zero mean")
    mse = ((x - g) ** 2).reshape(x.shape[0], -1).mean(axis=1)
    return float(100.0 / r * np.sqrt(np.mean(mse / mu**2)))


def evaluate(fused, lrms, pan, sensor: SensorDescriptor, gt=None, block: int = 32) -> QualityReport:
    details: dict = {}
    dl = d_lambda(fused, lrms, sensor, block, details=details)
    ds = d_s(fused, lrms, pan, sensor, block, details=details)
    report = QualityReport(
        d_lambda=dl, d_s=ds, hqnr=hqnr(dl, ds), block_pan=block, block_ms=ms_block(sensor.ratio, block),
        q_lambda=details["q_lambda"], q_s_high=details["q_s_high"], q_s_low=details["q_s_low"],
        clamped=details.get("clamped", []),
    )
    if gt is not None:
        report.sam = sam(fused, gt)
        report.ergas = ergas(fused, gt, sensor.ratio)
    return report
