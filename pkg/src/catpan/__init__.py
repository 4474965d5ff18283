"""Test-time adapted pansharpening with a residual latent tailor."""

from .backbone import Backbone, BackboneConfig, pretrain
from .cat import AdaptConfig, adapt, adapted_forward, cat_forward, init_cat
from .core import RasterTensor, Rng, tensor_read, tensor_write
from .pipeline import infer_all, partition, run_pipeline, select_random, stitch
from .resample import SceneBundle, SensorDescriptor, synth_scene, wald_reduce

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig", "Backbone", "BackboneConfig", "RasterTensor", "Rng", "SceneBundle",
    "SensorDescriptor", "adapt", "adapted_forward", "cat_forward", "infer_all", "init_cat",
    "partition", "pretrain", "run_pipeline", "select_random", "stitch", "synth_scene",
    "tensor_read", "tensor_write", "wald_reduce",
]
