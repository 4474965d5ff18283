"""Rebuild the frozen fixtures from the loop oracles.

Run from the repository root: ``python3 tests/fixtures/regenerate.py``.
Inputs (parameters, scenes) come from the package's seeded generators;
expected outputs come from ``tests/oracles.py`` only.
"""

import json
import sys
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE.parent))

import oracles  # noqa: E402
from catpan.backbone import Backbone, BackboneConfig  # noqa: E402
from catpan.core import Rng  # noqa: E402


def main():
    rng_fixture = {
        "seed": 0,
        "u64": [str(v) for v in oracles.splitmix64(0, 16)],
        "spawn_patch_select_seed0": str(oracles.spawn_seed(0, "patch-select")),
    }
    (HERE / "rng_seed0.json").write_text(json.dumps(rng_fixture, indent=1) + "\n")

    child = oracles.spawn_seed(0, "patch-select")
    selection = {"n": 8, "total": 64, "seed": 0, "ids": oracles.fisher_yates(child, 64, 8)}
    (HERE / "select_seed0.json").write_text(json.dumps(selection, indent=1) + "\n")

    cfg = BackboneConfig(bands=4, ratio=4, latent=8, blocks=1)
    bb = Backbone.init(cfg, seed=3)
    src = Rng(11)
    y = src.random((4, 8, 8))
    p = src.random((1, 32, 32))
    params = {n: v.astype(np.float64) for n, v in bb.state().items()}
    z = oracles.features(y, p, params, cfg.blocks, cfg.ratio)
    np.savez(HERE / "golden_features.npz", y=y, p=p, z=z)


if __name__ == "__main__":
    main()
