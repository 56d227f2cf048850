"""Model assembly: architecture config, center sampling policies, and the
recurrent multi-frame forward pass.

An architecture JSON looks like:

    {
      "levels": [
        {"m": 64, "radii": [0.5], "eta_widths": [[19, 32, 32]],
         "te": "ATE", "zeta_widths": [32, 32], "gamma_widths": [64, 16, 2],
         "k_cap": 32}
      ],
      "stc": "ConstantCenters",
      "T": 3,
      "fp_k": 3,
      "fp_unit_widths": [[48, 48, 32]],
      "backbone": {"pre_widths": [4, 16, 16], "head_widths": [32, 16, 3]}
    }

Width lists include the input width. ``eta_widths`` holds one list per
radius; ``fp_unit_widths`` one list per level (a plain list of ints is
treated as a single level). Final activations are fixed by role: eta,
backbone and propagation units end in ReLU; zeta, gamma and the head are
linear.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from .autodiff import Tensor
from .backbone import BackboneConfig, backbone_head, backbone_pre
from .geometry import PointFrame
from .layers import (CenterSet, LevelConfig, feature_propagation, fuse_attentive,
                     fuse_direct, lsa_forward)
from .nn import MlpSpec, ParamStore, init_mlp_params

STC_CONSTANT = "ConstantCenters"
STC_NEAREST = "NearestMatch"

_STC_ALIASES = {
    "constantcenters": STC_CONSTANT, "constant": STC_CONSTANT, "ii": STC_CONSTANT,
    "nearestmatch": STC_NEAREST, "nearest": STC_NEAREST, "i": STC_NEAREST,
}


@dataclass(frozen=True)
class ArchConfig:
    levels: tuple[LevelConfig, ...]
    stc: str
    T: int
    fp_k: int
    fp_unit_specs: tuple[MlpSpec, ...]  # one per level, applied top-down in reverse
    backbone: BackboneConfig

    def __post_init__(self):
        if not self.levels:
            raise ValueError("need at least one level")
        if self.stc not in (STC_CONSTANT, STC_NEAREST):
            raise ValueError(f"stc must be {STC_CONSTANT} or {STC_NEAREST}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if len(self.fp_unit_specs) != len(self.levels):
            raise ValueError(f"{len(self.fp_unit_specs)} propagation units for "
                             f"{len(self.levels)} levels")
        for a, b in zip(self.levels, self.levels[1:]):
            if b.m > a.m:
                raise ValueError(f"center counts must be non-increasing: {a.m} -> {b.m}")
        if self.fp_k > min(l.m for l in self.levels):
            raise ValueError(f"fp_k={self.fp_k} exceeds smallest center count")
        # width chain: backbone -> levels -> propagation -> head
        width = self.backbone.pre_spec.out_width
        skip_widths = []
        for i, lvl in enumerate(self.levels):
            skip_widths.append(width)
            for s, eta in enumerate(lvl.eta_specs):
                if eta.in_width != width + 3:
                    raise ValueError(f"level {i} eta{s} input width {eta.in_width} "
                                     f"!= {width} + 3")
            width = lvl.out_width
        for i in reversed(range(len(self.levels))):
            unit = self.fp_unit_specs[i]
            if unit.in_width != width + skip_widths[i]:
                raise ValueError(f"propagation unit {i} input width {unit.in_width} "
                                 f"!= {width} + {skip_widths[i]}")
            width = unit.out_width
        if self.backbone.head_spec.in_width != width:
            raise ValueError(f"head input width {self.backbone.head_spec.in_width} "
                             f"!= propagated width {width}")

    @property
    def num_classes(self) -> int:
        return self.backbone.num_classes

    @property
    def input_feature_width(self) -> int:
        return self.backbone.pre_spec.in_width - 3


def _mlp(widths: Sequence[int], final: str) -> MlpSpec:
    return MlpSpec(tuple(widths), final_activation=final)


def arch_from_dict(cfg: dict) -> ArchConfig:
    levels = []
    for i, lv in enumerate(cfg["levels"]):
        te = str(lv.get("te", "ATE")).upper()
        if te not in ("DTE", "ATE"):
            raise ValueError(f"level {i}: te must be DTE or ATE, got {lv.get('te')!r}")
        gamma = None
        if te == "ATE":
            if "gamma_widths" not in lv:
                raise ValueError(f"level {i}: ATE requires gamma_widths")
            gamma = _mlp(lv["gamma_widths"], "none")
        elif "gamma_widths" in lv:
            raise ValueError(f"level {i}: gamma_widths only valid with te=ATE")
        eta_lists = lv["eta_widths"]
        if eta_lists and isinstance(eta_lists[0], (int, float)):
            eta_lists = [eta_lists]
        levels.append(LevelConfig(
            m=int(lv["m"]),
            radii=tuple(float(r) for r in lv["radii"]),
            eta_specs=tuple(_mlp(w, "relu") for w in eta_lists),
            te_kind=te,
            zeta_spec=_mlp(lv["zeta_widths"], "none"),
            gamma_spec=gamma,
            k_cap=int(lv.get("k_cap", 32)),
        ))
    stc_raw = str(cfg.get("stc", STC_CONSTANT)).lower()
    if stc_raw not in _STC_ALIASES:
        raise ValueError(f"unknown stc {cfg.get('stc')!r}")
    fp_lists = cfg["fp_unit_widths"]
    if fp_lists and isinstance(fp_lists[0], (int, float)):
        fp_lists = [fp_lists]
    bb = cfg["backbone"]
    return ArchConfig(
        levels=tuple(levels),
        stc=_STC_ALIASES[stc_raw],
        T=int(cfg.get("T", 3)),
        fp_k=int(cfg.get("fp_k", 3)),
        fp_unit_specs=tuple(_mlp(w, "relu") for w in fp_lists),
        backbone=BackboneConfig(pre_spec=_mlp(bb["pre_widths"], "relu"),
                                head_spec=_mlp(bb["head_widths"], "none")),
    )


def load_arch(path) -> ArchConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return arch_from_dict(json.load(fh))


def init_params(arch: ArchConfig, seed: int, baseline: bool = False) -> ParamStore:
    """Seeded init of every MLP, in a fixed order.

    With ``baseline=True`` only the single-frame path is materialized:
    backbone, level-0 eta stack, a matched-width propagation unit, head.
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()
    init_mlp_params(arch.backbone.pre_spec, store, "backbone", rng)
    if baseline:
        for s, eta in enumerate(arch.levels[0].eta_specs):
            init_mlp_params(eta, store, f"level0.eta{s}", rng)
        init_mlp_params(baseline_fp_spec(arch), store, "fpbase", rng)
    else:
        for i, lvl in enumerate(arch.levels):
            for s, eta in enumerate(lvl.eta_specs):
                init_mlp_params(eta, store, f"level{i}.eta{s}", rng)
            if lvl.gamma_spec is not None:
                init_mlp_params(lvl.gamma_spec, store, f"level{i}.gamma", rng)
            init_mlp_params(lvl.zeta_spec, store, f"level{i}.zeta", rng)
        for i, unit in enumerate(arch.fp_unit_specs):
            init_mlp_params(unit, store, f"fp{i}", rng)
    init_mlp_params(arch.backbone.head_spec, store, "head", rng)
    return store


def module_param_count(arch: ArchConfig) -> int:
    """Scalar parameter count of the eta/gamma/zeta/propagation MLPs only."""

    def mlp_count(spec: MlpSpec) -> int:
        return sum(a * b + b for a, b in zip(spec.layer_widths, spec.layer_widths[1:]))

    total = 0
    for lvl in arch.levels:
        total += sum(mlp_count(e) for e in lvl.eta_specs)
        total += mlp_count(lvl.zeta_spec)
        if lvl.gamma_spec is not None:
            total += mlp_count(lvl.gamma_spec)
    total += sum(mlp_count(u) for u in arch.fp_unit_specs)
    return total


def canonical_seed_index(coords: np.ndarray) -> int:
    """Lexicographically smallest point: a permutation-invariant FPS seed."""
    return int(np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))[0])


def stc_constant_centers(coords: np.ndarray, m: int,
                         seed_index: Optional[int] = None) -> np.ndarray:
    """Sample centers once; callers reuse these coords for every frame."""
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    seed = canonical_seed_index(coords) if seed_index is None else seed_index
    return coords[geo.farthest_point_sample(coords, m, seed)].copy()


def stc_nearest_match(coords_list: Sequence[np.ndarray], m: int,
                      seed_index: Optional[int] = None
                      ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-frame sampling plus correlation to the previous frame's centers.

    correlation[t][j] is the previous-frame center paired with current
    center j; frame 0 pairs with itself (identity).
    """
    centers: list[np.ndarray] = []
    corr: list[np.ndarray] = []
    for t, coords in enumerate(coords_list):
        coords = np.ascontiguousarray(coords, dtype=np.float64)
        seed = canonical_seed_index(coords) if seed_index is None else seed_index
        cur = coords[geo.farthest_point_sample(coords, m, seed)].copy()
        centers.append(cur)
        if t == 0:
            corr.append(np.arange(m, dtype=np.int64))
        else:
            corr.append(geo.nearest_center_match(centers[t - 1], cur))
    return centers, corr


def plan_centers(coords_list: Sequence[np.ndarray], arch: ArchConfig
                 ) -> tuple[list[list[np.ndarray]], list[list[np.ndarray]]]:
    """Center coords and correlations for every (frame, level).

    Returns (centers[t][l], corr[t][l]). Under constant centers the same
    coordinate arrays are shared across frames and correlations are identity.
    """
    T = len(coords_list)
    if arch.stc == STC_CONSTANT:
        per_level = []
        base = coords_list[0]
        for lvl in arch.levels:
            c = stc_constant_centers(base, lvl.m)
            per_level.append(c)
            base = c
        centers = [[per_level[l] for l in range(len(arch.levels))] for _ in range(T)]
        corr = [[np.arange(lvl.m, dtype=np.int64) for lvl in arch.levels]
                for _ in range(T)]
        return centers, corr
    centers = [[None] * len(arch.levels) for _ in range(T)]
    corr = [[None] * len(arch.levels) for _ in range(T)]
    level_input = list(coords_list)
    for l, lvl in enumerate(arch.levels):
        cs, cr = stc_nearest_match(level_input, lvl.m)
        for t in range(T):
            centers[t][l] = cs[t]
            corr[t][l] = cr[t]
        level_input = cs
    return centers, corr


def sequence_forward(coords_list: Sequence[np.ndarray], feats_list: Sequence[Tensor],
                     arch: ArchConfig, params: ParamStore) -> list[Tensor]:
    """Recurrent forward over a whole window; per-frame per-point features.

    Per frame and level: aggregate local structure at the level's centers and
    fuse with the previous frame's recurrent feature for the correlated
    center (frame 0 pairs with itself). The fused feature feeds the next
    level; propagation then unwinds the hierarchy back to the frame's points
    with skip connections to each level's input.
    """
    if len(coords_list) != len(feats_list) or not coords_list:
        raise ValueError("need matching, non-empty coords and feature lists")
    centers, corr = plan_centers(coords_list, arch)
    num_levels = len(arch.levels)
    state: list[Optional[Tensor]] = [None] * num_levels
    outputs: list[Tensor] = []
    for t in range(len(coords_list)):
        in_coords = np.ascontiguousarray(coords_list[t], dtype=np.float64)
        in_feats = feats_list[t]
        skips: list[tuple[np.ndarray, Tensor]] = []
        for l, lvl in enumerate(arch.levels):
            skips.append((in_coords, in_feats))
            cset = CenterSet(centers[t][l], frame_index=t, level=l)
            cur = lsa_forward(in_coords, in_feats, cset, lvl, params, f"level{l}")
            if state[l] is None:
                prev = cur  # self-pairing on the first frame
            elif arch.stc == STC_CONSTANT:
                prev = state[l]  # identity correlation by construction
            else:
                prev = ad.gather_rows(state[l], corr[t][l])
            if lvl.te_kind == "ATE":
                fused, blend, _ = fuse_attentive(prev, cur, lvl, params, f"level{l}")
                state[l] = blend  # pre-zeta blend: carries fused history and
                # is exactly ``cur`` when past and present agree
            else:
                fused = fuse_direct(prev, cur, lvl, params, f"level{l}")
                state[l] = cur  # direct fusion pairs raw consecutive features
            in_coords = centers[t][l]
            in_feats = fused
        for l in reversed(range(num_levels)):
            tgt_coords, skip = skips[l]
            in_feats = feature_propagation(in_coords, in_feats, tgt_coords, skip,
                                           arch.fp_k, arch.fp_unit_specs[l],
                                           params, f"fp{l}")
            in_coords = tgt_coords
        outputs.append(in_feats)
    return outputs


def model_forward(frames: Sequence[PointFrame], arch: ArchConfig,
                  params: ParamStore) -> list[Tensor]:
    """Backbone -> recurrent module -> head; per-frame N x K logits."""
    check_frame_width(frames[0], arch)
    feats = [backbone_pre(f, arch.backbone, params) for f in frames]
    propagated = sequence_forward([f.coords for f in frames], feats, arch, params)
    return [backbone_head(h, arch.backbone, params) for h in propagated]


def baseline_fp_spec(arch: ArchConfig) -> MlpSpec:
    """Propagation unit for the single-frame path, width-matched to fp0."""
    lsa_out = arch.levels[0].lsa_out_width
    skip = arch.backbone.pre_spec.out_width
    return MlpSpec((lsa_out + skip,) + arch.fp_unit_specs[0].layer_widths[1:],
                   final_activation="relu")


def single_frame_forward(frame: PointFrame, arch: ArchConfig,
                         params: ParamStore) -> Tensor:
    """Control arm: backbone -> level-0 aggregation (no temporal fusion) ->
    propagation -> head, one frame at a time."""
    check_frame_width(frame, arch)
    lvl = arch.levels[0]
    f0 = backbone_pre(frame, arch.backbone, params)
    center_coords = stc_constant_centers(frame.coords, lvl.m)
    agg = lsa_forward(frame.coords, f0, CenterSet(center_coords), lvl, params, "level0")
    per_point = feature_propagation(center_coords, agg, frame.coords, f0,
                                    arch.fp_k, baseline_fp_spec(arch), params, "fpbase")
    return backbone_head(per_point, arch.backbone, params)


def check_frame_width(frame: PointFrame, arch: ArchConfig) -> None:
    if frame.features.shape[1] != arch.input_feature_width:
        raise ValueError(f"data has {frame.features.shape[1]} feature channels, "
                         f"architecture expects {arch.input_feature_width}")
    if frame.labels is not None and frame.labels.size \
            and frame.labels.max() >= arch.num_classes:
        raise ValueError(f"label {int(frame.labels.max())} out of range for "
                         f"{arch.num_classes} classes")
