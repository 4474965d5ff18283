"""Patch partition, random subset selection, parallel inference and stitching.

Patch ids are 0-based and run row-major over the grid.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import diffnn as dn
from .backbone import Backbone, BackboneConfig
from .cat import AdaptConfig, AdaptResult, adapt, cat_forward
from .core import RasterTensor, Rng, as_chw
from .errors import CatpanError, ShapeError, ValidationError
from .resample import SensorDescriptor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatchGrid:
    patch_h: int
    patch_w: int
    ratio: int
    rows: int
    cols: int
    selected: tuple[int, ...] = ()

    @property
    def n_total(self) -> int:
        return self.rows * self.cols

    @property
    def pan_shape(self) -> tuple[int, int]:
        return self.rows * self.patch_h, self.cols * self.patch_w

    def coords(self, i: int) -> tuple[int, int]:
        """(row, col) grid position of patch ``i``."""
        if not 0 <= i < self.n_total:
            raise ValidationError(f"patch id {i} outside 0..{self.n_total - 1}")
        return divmod(i, self.cols)

    def pan_window(self, i: int) -> tuple[slice, slice]:
        gr, gc = self.coords(i)
        return (slice(gr * self.patch_h, (gr + 1) * self.patch_h),
                slice(gc * self.patch_w, (gc + 1) * self.patch_w))

    def lrms_window(self, i: int) -> tuple[slice, slice]:
        gr, gc = self.coords(i)
        h, w = self.patch_h // self.ratio, self.patch_w // self.ratio
        return slice(gr * h, (gr + 1) * h), slice(gc * w, (gc + 1) * w)


class PatchSet:
    """A partitioned LRMS/PAN pair; indexing returns copies of paired patches."""

    def __init__(self, grid: PatchGrid, lrms: np.ndarray, pan: np.ndarray):
        self.grid = grid
        self._lrms = lrms
        self._pan = pan

    def __len__(self) -> int:
        return self.grid.n_total

    def __getitem__(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lr, lc = self.grid.lrms_window(i)
        pr, pc = self.grid.pan_window(i)
        return self._lrms[:, lr, lc].copy(), self._pan[:, pr, pc].copy()

    def selected(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [self[i] for i in self.grid.selected]


def partition(lrms, pan, patch_size, ratio: int) -> PatchSet:
    """Split into non-overlapping PAN patches paired with their LRMS cells."""
    y, p = as_chw(lrms), as_chw(pan)
    ph, pw = (patch_size, patch_size) if np.isscalar(patch_size) else tuple(patch_size)
    if ph % ratio or pw % ratio:
        raise ValidationError(f"patch size {ph}x{pw} not divisible by ratio {ratio}")
    _, H, W = p.shape
    if y.shape[1] * ratio != H or y.shape[2] * ratio != W:
        raise ShapeError(f"PAN {H}x{W} must equal ratio {ratio} times LRMS {y.shape[1]}x{y.shape[2]}")
    if H % ph or W % pw:
        raise ShapeError(
            f"PAN {H}x{W} not divisible by patch {ph}x{pw}; pad or crop first (see --crop-to-multiple)"
        )
    grid = PatchGrid(ph, pw, ratio, H // ph, W // pw)
    return PatchSet(grid, y, p)


def select_random(grid: PatchGrid, n: int, seed: int) -> PatchGrid:
    """Pick ``n`` distinct patch ids uniformly without replacement."""
    if not 1 <= n <= grid.n_total:
        raise ValidationError(f"cannot select {n} patches from {grid.n_total}")
    ids = Rng(seed).spawn("patch-select").sample_without_replacement(grid.n_total, n)
    return replace(grid, selected=tuple(ids))


# --------------------------------------------------------------- inference


class PatchInferenceError(CatpanError):
    def __init__(self, failed: dict[int, BaseException]):
        self.failed = failed
        ids = ", ".join(str(i) for i in sorted(failed))
        first = next(iter(failed.values()))
        super().__init__(f"inference failed for patches [{ids}]: {first!r}")


_WORKER: dict = {}


def _tensors(backbone: Backbone, phi) -> dict[str, np.ndarray]:
    out = backbone.state()
    out.update({n: np.array(p.value, copy=True) for n, p in (phi or {}).items()})
    return out


def _build(cfg: BackboneConfig, tensors: dict[str, np.ndarray]):
    backbone = Backbone.from_tensors(tensors, cfg)
    backbone.set_trainable(False)
    phi = {n: dn.Param(n, a, trainable=False) for n, a in tensors.items() if n.startswith("cat/")}
    return backbone, phi or None


def _infer_one(backbone: Backbone, phi, y: np.ndarray, p: np.ndarray) -> np.ndarray:
    z = backbone.extract_features(y, p)
    if phi is not None:
        z = cat_forward(z, phi)
    return backbone.transform_channels(z, y).value.astype(np.float32)


def _worker_init(cfg: BackboneConfig, tensors: dict[str, np.ndarray]) -> None:
    threadpool_limits(1)
    _WORKER["model"] = _build(cfg, tensors)


def _worker_run(task: tuple[int, np.ndarray, np.ndarray]):
    i, y, p = task
    backbone, phi = _WORKER["model"]
    try:
        return i, _infer_one(backbone, phi, y, p), None
    except Exception as exc:  # reported per patch by the parent
        return i, None, exc


def infer_all(patches: PatchSet, backbone: Backbone, phi=None, workers: int = 1) -> list[np.ndarray]:
    """Tailored forward pass on every patch with frozen parameters.

    Results are ordered by patch id and do not depend on ``workers``: each
    patch is an independent pure computation pinned to one BLAS thread.
    """
    if workers < 1:
        raise ValidationError("workers must be >= 1")
    tensors = _tensors(backbone, phi)
    results: dict[int, np.ndarray] = {}
    failed: dict[int, BaseException] = {}
    if workers == 1:
        model = _build(backbone.cfg, tensors)
        with threadpool_limits(1):
            for i in range(len(patches)):
                try:
                    results[i] = _infer_one(*model, *patches[i])
                except Exception as exc:
                    failed[i] = exc
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        tasks = [(i, *patches[i]) for i in range(len(patches))]
        with ProcessPoolExecutor(workers, mp_context=ctx, initializer=_worker_init,
                                 initargs=(backbone.cfg, tensors)) as pool:
            for i, out, exc in pool.map(_worker_run, tasks, chunksize=max(1, len(tasks) // (4 * workers))):
                if exc is None:
                    results[i] = out
                else:
                    failed[i] = exc
    if failed:
        raise PatchInferenceError(failed)
    return [results[i] for i in range(len(patches))]


def stitch(outputs, grid: PatchGrid) -> RasterTensor:
    """Place every patch at its grid position; no blending."""
    outs = list(outputs) if not isinstance(outputs, dict) else [outputs.get(i) for i in range(grid.n_total)]
    if len(outs) != grid.n_total or any(o is None for o in outs):
        present = len([o for o in outs if o is not None])
        raise ValidationError(f"stitch needs {grid.n_total} patches, got {present}")
    c = np.asarray(outs[0]).shape[0]
    H, W = grid.pan_shape
    canvas = np.empty((c, H, W), dtype=np.float32)
    for i, patch in enumerate(outs):
        arr = np.asarray(patch)
        if arr.shape != (c, grid.patch_h, grid.patch_w):
            raise ShapeError(f"patch {i} has shape {arr.shape}, expected {(c, grid.patch_h, grid.patch_w)}")
        rs, cs = grid.pan_window(i)
        canvas[:, rs, cs] = arr
    return RasterTensor(canvas)


# ---------------------------------------------------------------- pipeline


@dataclass
class PipelineResult:
    fused: RasterTensor
    grid: PatchGrid
    timings: dict[str, float] = field(default_factory=dict)
    adaptation: AdaptResult | None = None


class StageError(CatpanError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.__cause__ = exc


def run_pipeline(lrms, pan, backbone: Backbone, cfg: AdaptConfig, sensor: SensorDescriptor,
                 workers: int = 1, use_cat: bool = True) -> PipelineResult:
    """partition -> select -> adapt -> infer_all -> stitch, with wall-clock timings.

    ``use_cat=False`` runs the backbone alone on the same patch grid.
    """
    t0 = time.perf_counter()

    def stage(name, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except CatpanError as exc:
            if isinstance(exc, StageError):
                raise
            raise StageError(name, exc) from exc

    patches = stage("partition", partition, lrms, pan, cfg.patch_size, backbone.cfg.ratio)
    adaptation = None
    phi = None
    t_adapt = time.perf_counter()
    if use_cat:
        cfg.check_ratio(backbone.cfg.ratio)
        grid = stage("select", select_random, patches.grid, cfg.n_patches, cfg.seed)
        patches.grid = grid
        adaptation = stage("adapt", adapt, patches.selected(), backbone, cfg, sensor)
        phi = adaptation.phi
    t_infer = time.perf_counter()
    outs = stage("infer", infer_all, patches, backbone, phi, workers)
    fused = stage("stitch", stitch, outs, patches.grid)
    t_end = time.perf_counter()
    timings = {
        "adapt_seconds": t_infer - t_adapt,
        "infer_seconds": t_end - t_infer,
        "total_seconds": t_end - t0,
    }
    return PipelineResult(fused, patches.grid, timings, adaptation)
