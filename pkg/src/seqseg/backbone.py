"""Minimal pluggable per-frame backbone: point-wise feature MLP + class head.

Deliberately contains no pooling or neighborhood logic -- all spatial and
temporal aggregation happens in the middle module, so this stand-in cleanly
isolates it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import PointFrame
from .nn import MlpSpec, ParamStore, mlp_forward


@dataclass(frozen=True)
class BackboneConfig:
    pre_spec: MlpSpec   # point-wise: (3 + C_in) -> C_mid
    head_spec: MlpSpec  # point-wise: C_fp -> K class logits

    @property
    def num_classes(self) -> int:
        return self.head_spec.out_width


def backbone_pre(frame: PointFrame, cfg: BackboneConfig, params: ParamStore,
                 prefix: str = "backbone") -> Tensor:
    """Point-wise MLP over concat(coords, input features)."""
    x = np.concatenate([frame.coords, frame.features], axis=1)
    if x.shape[1] != cfg.pre_spec.in_width:
        raise ad.ShapeError(f"backbone expects width {cfg.pre_spec.in_width}, "
                            f"got 3 coords + {frame.features.shape[1]} features")
    return mlp_forward(cfg.pre_spec, params, prefix, ad.constant(x))


def backbone_head(per_point_feats: Tensor, cfg: BackboneConfig, params: ParamStore,
                  prefix: str = "head") -> Tensor:
    """Point-wise MLP from propagated features to per-class logits."""
    return mlp_forward(cfg.head_spec, params, prefix, per_point_feats)
