"""Core layers: local structure aggregation, temporal fusion, propagation.

All layers are pure functions from (constant geometry, feature Tensors,
parameters) to feature Tensors, so one tape can record a whole multi-frame
forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .autodiff import Tensor
from .nn import MlpSpec, ParamStore, mlp_forward

FP_EPS = 1e-8  # inverse-distance weight regularizer


@dataclass
class CenterSet:
    """Sampled center coordinates (and, once computed, their features)."""

    coords: np.ndarray                 # m x 3
    features: Optional[Tensor] = None  # m x C'
    frame_index: int = 0
    level: int = 0

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 3 or self.coords.shape[0] < 1:
            raise ValueError(f"center coords must be m x 3, m >= 1, got {self.coords.shape}")

    @property
    def count(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class LevelConfig:
    """One aggregation+fusion level.

    ``eta_specs`` holds one MLP per radius (multi-scale grouping when there
    is more than one); their output widths add up to the level's aggregated
    width C'. ``te_kind`` picks how center features from consecutive frames
    fuse: "DTE" concatenates the raw pair into zeta, "ATE" blends the pair
    with softmax attention before zeta.
    """

    m: int
    radii: tuple[float, ...]
    eta_specs: tuple[MlpSpec, ...]
    te_kind: str
    zeta_spec: MlpSpec
    gamma_spec: Optional[MlpSpec] = None
    k_cap: int = 32

    def __post_init__(self):
        object.__setattr__(self, "radii", tuple(float(r) for r in self.radii))
        object.__setattr__(self, "eta_specs", tuple(self.eta_specs))
        if self.m < 1:
            raise ValueError("need m >= 1 centers")
        if not self.radii or len(self.radii) != len(self.eta_specs):
            raise ValueError(f"{len(self.radii)} radii vs {len(self.eta_specs)} eta specs")
        if any(r <= 0 for r in self.radii):
            raise ValueError(f"radii must be positive, got {self.radii}")
        if self.k_cap < 1:
            raise ValueError("k_cap must be >= 1")
        if self.te_kind not in ("DTE", "ATE"):
            raise ValueError(f"te_kind must be DTE or ATE, got {self.te_kind!r}")
        c = self.lsa_out_width
        if self.te_kind == "ATE":
            if self.gamma_spec is None:
                raise ValueError("ATE level needs gamma_spec")
            if self.gamma_spec.out_width != 2:
                raise ValueError(f"gamma output width must be 2, got "
                                 f"{self.gamma_spec.out_width}")
            if self.gamma_spec.in_width != 2 * c:
                raise ValueError(f"gamma input width {self.gamma_spec.in_width} != 2*{c}")
            if self.zeta_spec.in_width != c:
                raise ValueError(f"ATE zeta input width {self.zeta_spec.in_width} != {c}")
        else:
            if self.gamma_spec is not None:
                raise ValueError("gamma_spec only valid for ATE levels")
            if self.zeta_spec.in_width != 2 * c:
                raise ValueError(f"DTE zeta input width {self.zeta_spec.in_width} != 2*{c}")

    @property
    def lsa_out_width(self) -> int:
        return sum(s.out_width for s in self.eta_specs)

    @property
    def out_width(self) -> int:
        return self.zeta_spec.out_width


def lsa_forward(coords: np.ndarray, features: Tensor, centers: CenterSet,
                cfg: LevelConfig, params: ParamStore, prefix: str) -> Tensor:
    """Aggregate local structure around each center.

    Per radius r_s: gather in-radius neighbors, feed concat(neighbor feature,
    neighbor position - center position) through the shared MLP eta_s, then
    element-wise max over each neighborhood. Multi-radius outputs are
    concatenated per center; an empty neighborhood yields zeros at that scale.
    """
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    per_scale: list[Tensor] = []
    for s, (radius, eta) in enumerate(zip(cfg.radii, cfg.eta_specs)):
        if eta.in_width != features.data.shape[-1] + 3:
            raise ad.ShapeError(
                f"{prefix}.eta{s}: expects width {eta.in_width}, got "
                f"{features.data.shape[-1]} features + 3 offsets")
        nl = geo.radius_neighbors_batch(coords, centers.coords, radius, cfg.k_cap)
        flat = nl.flat()
        gathered = ad.gather_rows(features, flat)
        relpos = coords[flat] - np.repeat(centers.coords, nl.counts, axis=0)
        stacked = ad.concat_last(gathered, ad.constant(relpos))
        per_point = mlp_forward(eta, params, f"{prefix}.eta{s}", stacked)
        per_scale.append(ad.segment_max_rows(per_point, nl.counts))
    out = per_scale[0]
    for extra in per_scale[1:]:
        out = ad.concat_last(out, extra)
    return out


def fuse_direct(prev_feat: Tensor, cur_feat: Tensor, cfg: LevelConfig,
                params: ParamStore, prefix: str) -> Tensor:
    """Direct fusion: zeta over the concatenated correlated pair."""
    if prev_feat.data.shape != cur_feat.data.shape:
        raise ad.ShapeError(f"pair shapes differ: {prev_feat.data.shape} vs "
                            f"{cur_feat.data.shape}")
    return mlp_forward(cfg.zeta_spec, params, f"{prefix}.zeta",
                       ad.concat_last(prev_feat, cur_feat))


def fuse_attentive(prev_feat: Tensor, cur_feat: Tensor, cfg: LevelConfig,
                   params: ParamStore, prefix: str) -> tuple[Tensor, Tensor, Tensor]:
    """Attentive fusion.

    Per row: (a1, a2) = softmax(gamma(concat(prev, cur))); the blend
    a1*prev + a2*cur is evaluated as cur + a1*(prev - cur) -- identical
    because a1 + a2 = 1, and exactly the identity when prev == cur.
    Returns (zeta(blend), blend, attention) so callers can carry the
    pre-zeta blend as recurrent state and inspect attention weights.
    """
    if prev_feat.data.shape != cur_feat.data.shape:
        raise ad.ShapeError(f"pair shapes differ: {prev_feat.data.shape} vs "
                            f"{cur_feat.data.shape}")
    if cfg.gamma_spec is None or cfg.gamma_spec.out_width != 2:
        raise ValueError("ATE requires a gamma head with output width 2")
    pair = ad.concat_last(prev_feat, cur_feat)
    attn = ad.softmax_last(mlp_forward(cfg.gamma_spec, params, f"{prefix}.gamma", pair))
    a1 = ad.slice_last(attn, 0, 1)
    blend = ad.add(cur_feat, ad.scale_rows(ad.sub(prev_feat, cur_feat), a1))
    out = mlp_forward(cfg.zeta_spec, params, f"{prefix}.zeta", blend)
    return out, blend, attn


def feature_propagation(center_coords: np.ndarray, center_feats: Tensor,
                        target_coords: np.ndarray, skip_feats: Tensor,
                        fp_k: int, unit_spec: MlpSpec, params: ParamStore,
                        prefix: str) -> Tensor:
    """Inverse-distance interpolation from centers to targets + unit MLP.

    Weights w_i = (1/(d_i+eps)) / sum_j (1/(d_j+eps)) over the fp_k nearest
    centers; the interpolated feature is concatenated with the target's skip
    feature before the unit MLP.
    """
    center_coords = np.ascontiguousarray(center_coords, dtype=np.float64)
    if fp_k > center_coords.shape[0]:
        raise ValueError(f"fp_k={fp_k} exceeds center count {center_coords.shape[0]}")
    idx, dist = geo.knn_batch(center_coords, target_coords, fp_k)
    inv = 1.0 / (dist + FP_EPS)
    weights = inv / inv.sum(axis=1, keepdims=True)
    interp = ad.weighted_gather_sum(center_feats, idx, weights)
    return mlp_forward(unit_spec, params, prefix, ad.concat_last(interp, skip_feats))
