"""Training, evaluation, strategy benchmarking, and gradient checking."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import geometry as geo
from . import network as net
from .data import SequenceRecord, load_sequence, windows
from .metrics import ConfusionMatrix, IouReport, compute_iou
from .network import ArchConfig
from .nn import Adam, ParamStore, cross_entropy, load_checkpoint, save_checkpoint


@dataclass
class RunConfig:
    arch: ArchConfig
    data_dir: Path
    out_dir: Path
    epochs: int = 20
    lr: float = 1e-3
    seed: int = 0
    val_fraction: float = 0.2
    T: Optional[int] = None          # window length; defaults to arch.T
    stride: Optional[int] = None     # window stride; defaults to T
    baseline: bool = False           # train the single-frame control arm

    @property
    def window_length(self) -> int:
        return self.T if self.T is not None else self.arch.T

    @property
    def window_stride(self) -> int:
        return self.stride if self.stride is not None else self.window_length


def load_dataset(data_dir: Path) -> list[SequenceRecord]:
    paths = sorted(Path(data_dir).glob("*.pcsq")) + sorted(Path(data_dir).glob("*.txt"))
    if not paths:
        raise ValueError(f"no sequence files (*.pcsq, *.txt) under {data_dir}")
    return [load_sequence(p) for p in paths]


def _window_logits(frames, arch: ArchConfig, params: ParamStore, baseline: bool):
    if baseline:
        return [net.single_frame_forward(f, arch, params) for f in frames]
    return net.model_forward(frames, arch, params)


def _window_loss(frames, arch, params, baseline):
    logits = _window_logits(frames, arch, params, baseline)
    stacked = ad.vstack(logits)
    labels = np.concatenate([f.labels for f in frames])
    return cross_entropy(stacked, labels)


def _predict_record(rec: SequenceRecord, arch: ArchConfig, params: ParamStore,
                    T: int, stride: int, baseline: bool) -> list[np.ndarray]:
    """Per-frame class predictions; overlapping windows resolve to the last
    window containing each frame."""
    preds: list[Optional[np.ndarray]] = [None] * rec.num_frames
    for start, frames in windows(rec, T, stride):
        logits = _window_logits(frames, arch, params, baseline)
        for off, lg in enumerate(logits):
            preds[start + off] = np.argmax(lg.data, axis=1)
    return preds


def _dataset_iou(records, arch, params, T, stride, baseline) -> IouReport:
    cm = ConfusionMatrix(arch.num_classes)
    for rec in records:
        preds = _predict_record(rec, arch, params, T, stride, baseline)
        for frame, p in zip(rec.frames, preds):
            cm.update(frame.labels, p)
    return compute_iou(cm)


@dataclass
class TrainResult:
    params: ParamStore
    history: list[tuple[int, float, float]]  # (epoch, train_loss, val_miou)
    best_miou: float
    best_ckpt: Path


def train(run: RunConfig, records: Optional[Sequence[SequenceRecord]] = None,
          quiet: bool = False) -> TrainResult:
    """Seeded epoch loop over sequence windows; keeps the best checkpoint.

    The loss covers every frame of every window, so the recurrence is
    supervised at each time step.
    """
    arch = run.arch
    if records is None:
        records = load_dataset(run.data_dir)
    for rec in records:
        net.check_frame_width(rec.frames[0], arch)  # fail before any training
        if rec.num_classes > arch.num_classes:
            raise ValueError(f"data has {rec.num_classes} classes, architecture "
                             f"emits {arch.num_classes}")

    T, stride = run.window_length, run.window_stride
    rng = np.random.default_rng(run.seed)
    order = rng.permutation(len(records))
    n_val = int(round(len(records) * run.val_fraction))
    val_records = [records[i] for i in order[:n_val]]
    train_records = [records[i] for i in order[n_val:]]
    if not train_records:
        raise ValueError("validation split consumed every sequence")
    if not val_records:
        val_records = train_records  # tiny datasets validate in-sample

    items = [(ri, start) for ri, rec in enumerate(train_records)
             for start, _ in windows(rec, T, stride)]
    params = net.init_params(arch, run.seed, baseline=run.baseline)
    opt = Adam(params, lr=run.lr)

    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best_ckpt = out_dir / "best.ckpt"
    history: list[tuple[int, float, float]] = []
    best = -1.0
    for epoch in range(run.epochs):
        perm = rng.permutation(len(items))
        losses = []
        for j in perm:
            ri, start = items[j]
            frames = train_records[ri].frames[start:start + T]
            opt.zero_grad()
            with ad.Tape() as tape:
                loss = _window_loss(frames, arch, params, run.baseline)
            ad.backward(loss, tape)
            opt.step()
            losses.append(float(loss.data))
        val = _dataset_iou(val_records, arch, params, T, stride, run.baseline)
        mean_loss = float(np.mean(losses))
        history.append((epoch, mean_loss, val.miou))
        if val.miou > best:
            best = val.miou
            save_checkpoint(params, best_ckpt)
        if not quiet:
            print(f"epoch {epoch:3d}  loss {mean_loss:.6f}  val_miou {val.miou:.6f}")

    save_checkpoint(params, out_dir / "last.ckpt")
    with open(out_dir / "metrics.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_miou\n")
        for epoch, loss_v, miou_v in history:
            fh.write(f"{epoch},{loss_v:.6f},{miou_v:.6f}\n")
    return TrainResult(params=params, history=history, best_miou=best,
                       best_ckpt=best_ckpt)


def evaluate(arch: ArchConfig, params: ParamStore, data_dir: Path,
             report_path: Optional[Path] = None, T: Optional[int] = None,
             stride: Optional[int] = None, baseline: bool = False,
             records: Optional[Sequence[SequenceRecord]] = None) -> IouReport:
    """Window the dataset, predict each scan once (last window wins), and
    accumulate a single confusion matrix."""
    if records is None:
        records = load_dataset(data_dir)
    if not records:
        raise ValueError("nothing to evaluate")
    for rec in records:
        net.check_frame_width(rec.frames[0], arch)
    T = T if T is not None else arch.T
    stride = stride if stride is not None else T
    report = _dataset_iou(records, arch, params, T, stride, baseline)
    if report_path is not None:
        lines = ["class,iou"]
        lines += [f"{c},{v:.6f}" for c, v in enumerate(report.per_class)]
        lines += [f"miou,{report.miou:.6f}", f"macc,{report.macc:.6f}"]
        Path(report_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report


@dataclass
class StcBenchEntry:
    fps_calls: int
    seconds_per_frame: float
    mean_occupancy: float


def bench_stc(arch: ArchConfig, records: Sequence[SequenceRecord]) -> dict[str, StcBenchEntry]:
    """Measure sampling/correlation work for both center strategies.

    Constant centers must do strictly fewer sampling passes than per-frame
    search whenever a sequence has more than one frame (1 vs T per level).
    """
    out: dict[str, StcBenchEntry] = {}
    for stc in (net.STC_CONSTANT, net.STC_NEAREST):
        variant = ArchConfig(levels=arch.levels, stc=stc, T=arch.T, fp_k=arch.fp_k,
                             fp_unit_specs=arch.fp_unit_specs, backbone=arch.backbone)
        geo.reset_fps_counter()
        t0 = time.perf_counter()
        frames_total = 0
        occ_sum, occ_n = 0.0, 0
        for rec in records:
            coords_list = [f.coords for f in rec.frames]
            centers, _ = net.plan_centers(coords_list, variant)
            frames_total += len(coords_list)
            lvl0 = variant.levels[0]
            for t, coords in enumerate(coords_list):
                nl = geo.radius_neighbors_batch(coords, centers[t][0],
                                                lvl0.radii[0], lvl0.k_cap)
                occ_sum += float(nl.counts.mean())
                occ_n += 1
        elapsed = time.perf_counter() - t0
        out[stc] = StcBenchEntry(fps_calls=geo.fps_call_count(),
                                 seconds_per_frame=elapsed / max(frames_total, 1),
                                 mean_occupancy=occ_sum / max(occ_n, 1))
    any_multi = any(rec.num_frames > 1 for rec in records)
    if any_multi and out[net.STC_CONSTANT].fps_calls >= out[net.STC_NEAREST].fps_calls:
        raise AssertionError("constant centers should sample strictly less")
    if not any_multi and out[net.STC_CONSTANT].fps_calls != out[net.STC_NEAREST].fps_calls:
        raise AssertionError("single-frame sequences should cost the same")
    return out


@dataclass
class GradCheckReport:
    checked: int
    max_rel_err: float
    threshold: float
    kink_coords: int = 0
    failures: list[tuple[str, int, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.threshold


def grad_check(arch: ArchConfig, seed: int, num_points: int = 64,
               num_frames: int = 3, num_coords: int = 200,
               threshold: float = 1e-4) -> GradCheckReport:
    """End-to-end finite-difference check on a small random instance.

    Central differences with step 1e-5 over >= ``num_coords`` randomly chosen
    parameter entries, retried at 1e-6 on failure. A coordinate can sit
    exactly on a kink (a relu-clamped pooling plateau makes the one-sided
    derivatives genuinely differ, and the central difference averages the two
    branches); such coordinates pass if the analytic value matches either
    one-sided slope -- the subgradient a reverse sweep is allowed to return.
    """
    from .geometry import PointFrame

    rng = np.random.default_rng(seed)
    fw = arch.input_feature_width
    frames = []
    base = rng.uniform(-1.0, 1.0, size=(num_points, 3))
    for t in range(num_frames):
        coords = base + rng.normal(0.0, 0.05, size=base.shape)
        frames.append(PointFrame(coords=coords,
                                 features=rng.standard_normal((num_points, fw)),
                                 labels=rng.integers(0, arch.num_classes,
                                                     size=num_points),
                                 frame_index=t))
    params = net.init_params(arch, seed)

    def loss_value() -> float:
        return float(_window_loss(frames, arch, params, baseline=False).data)

    params.zero_grad()
    with ad.Tape() as tape:
        loss = _window_loss(frames, arch, params, baseline=False)
    ad.backward(loss, tape)

    names = params.names()
    sizes = np.array([params[n].data.size for n in names])
    cum = np.cumsum(sizes)
    total = int(cum[-1])
    count = min(num_coords, total)
    picks = rng.choice(total, size=count, replace=False)

    def shifted(flat: np.ndarray, i: int, delta: float) -> float:
        orig = flat[i]
        flat[i] = orig + delta
        val = loss_value()
        flat[i] = orig
        return val

    def rel(a: float, b: float) -> float:
        return abs(a - b) / max(1.0, abs(a), abs(b))

    max_err = 0.0
    kinks = 0
    failures: list[tuple[str, int, float]] = []
    for pick in sorted(int(p) for p in picks):
        slot = int(np.searchsorted(cum, pick, side="right"))
        name = names[slot]
        local = pick - (cum[slot] - sizes[slot])
        tensor = params[name]
        flat = tensor.data.reshape(-1)
        analytic = 0.0 if tensor.grad is None else tensor.grad.reshape(-1)[local]

        err = None
        for step in (1e-5, 1e-6):
            fd = (shifted(flat, local, step) - shifted(flat, local, -step)) \
                / (2.0 * step)
            err = rel(analytic, fd)
            if err < threshold:
                break
        if err >= threshold:
            f0 = loss_value()
            for step in (1e-5, 1e-6):
                fwd = (shifted(flat, local, step) - f0) / step
                bwd = (f0 - shifted(flat, local, -step)) / step
                one_sided = min(rel(analytic, fwd), rel(analytic, bwd))
                if one_sided < err:
                    err = one_sided
                if err < threshold:
                    kinks += 1
                    break
        max_err = max(max_err, err)
        if err >= threshold:
            failures.append((name, int(local), float(err)))
    return GradCheckReport(checked=count, max_rel_err=max_err,
                           threshold=threshold, kink_coords=kinks,
                           failures=failures)
