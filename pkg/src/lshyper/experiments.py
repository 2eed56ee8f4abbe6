"""Preset data generators and data models for the bundled exemplars.

``relaxation``: linear one-state model ``dh/dt = W h + b`` against closed-form
relaxation data.  ``schlogl``: small tanh NODE against rescaled SSA copy
numbers.  ``regression``: static 1-8-8-1 network on replicated noisy data.
"""

from __future__ import annotations

import numpy as np

from .datagen import (
    OuDataConfig,
    RegressionConfig,
    SchloglConfig,
    TrajectoryEnsemble,
    generate_ou_dataset,
    generate_regression_dataset,
    generate_schlogl_dataset,
)
from .nets import MlpSpec
from .node import DataModel

EXEMPLARS = ("relaxation", "schlogl", "regression")

# copy numbers are divided by this before training
SCHLOGL_SCALE = 100.0

_DATA_CONFIGS = {"relaxation": OuDataConfig, "schlogl": SchloglConfig, "regression": RegressionConfig}

# Per-exemplar training presets layered under user overrides.  The Schlogl and
# regression presets use a short pseudo-time horizon: the path KL of a
# stationary drift grows linearly with the horizon, so a long horizon leaves
# the last-layer weights near the unit-variance prior.  The score network is
# widened because its output spans at most as many directions as its last
# hidden layer has units.
TRAIN_DEFAULTS = {
    "relaxation": {"lr": 1e-2, "lr_mle": 5e-2},
    "schlogl": {
        "epochs": 150,
        "lr": 1e-2,
        "mle_epochs": 1500,
        "lr_mle": 1e-2,
        "n_modes": 2,
        "aggregation": "mixture",
        "score_hidden": [32, 32],
        "sampler": {"dtau": 1e-4, "n_steps": 100, "gamma0": 2.0},
    },
    "regression": {
        "epochs": 150,
        "lr": 1e-2,
        "lr_mle": 1e-2,
        "score_hidden": [32, 32],
        "sampler": {"dtau": 1e-5, "n_steps": 100},
    },
}
DEFAULT_VARIANT = {"relaxation": "full", "schlogl": "bll-fixed", "regression": "bll-reopt"}


def _check(exemplar: str) -> None:
    if exemplar not in EXEMPLARS:
        raise ValueError(f"unknown exemplar {exemplar!r}; expected one of {EXEMPLARS}")


def data_config(exemplar: str, overrides: dict | None = None):
    _check(exemplar)
    return _DATA_CONFIGS[exemplar](**(overrides or {}))


def train_settings(exemplar: str, overrides: dict | None = None) -> dict:
    """Preset training settings with ``overrides`` applied; the nested
    ``sampler`` block merges key by key."""
    _check(exemplar)
    base = dict(TRAIN_DEFAULTS[exemplar])
    o = dict(overrides or {})
    sampler = {**base.get("sampler", {}), **o.pop("sampler", {})}
    base.update(o)
    if sampler:
        base["sampler"] = sampler
    return base


def generate(exemplar: str, overrides: dict | None, seed: int) -> TrajectoryEnsemble:
    """Raw dataset in physical units."""
    cfg = data_config(exemplar, overrides)
    if exemplar == "relaxation":
        return generate_ou_dataset(cfg, seed)
    if exemplar == "schlogl":
        return generate_schlogl_dataset(cfg, seed)
    return generate_regression_dataset(cfg, seed)


def training_view(exemplar: str, data: TrajectoryEnsemble) -> TrajectoryEnsemble:
    """Dataset in the units the model is trained in."""
    if exemplar == "schlogl" and "scale" not in data.metadata:
        return data.scaled(SCHLOGL_SCALE)
    return data


def build_model(exemplar: str, data: TrajectoryEnsemble, overrides: dict | None = None) -> DataModel:
    """Default model for an exemplar; ``overrides`` may give ``hidden`` sizes
    or a full ``DataModel.to_dict`` document under ``spec``."""
    _check(exemplar)
    o = dict(overrides or {})
    unknown = set(o) - {"spec", "hidden"}
    if unknown:
        raise ValueError(f"unknown model options {sorted(unknown)}")
    if "spec" in o:
        return DataModel.from_dict(o["spec"])
    if exemplar == "relaxation":
        return DataModel(MlpSpec((1, 1), ("linear",)), 1, h0=(float(np.mean(data.values[:, 0, 0])),))
    if exemplar == "schlogl":
        spec = MlpSpec.build(1, tuple(o.get("hidden", (16, 16))), 1, "tanh")
        return DataModel(spec, 1, h0=(float(np.mean(data.values[:, 0, 0])),))
    spec = MlpSpec.build(1, tuple(o.get("hidden", (8, 8))), 1, "tanh")
    return DataModel(None, 0, input_dim=1, obs_spec=spec)
