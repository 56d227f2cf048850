"""MLP building blocks, parameter storage/checkpointing, loss, and Adam."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

CKPT_MAGIC = b"ASAPCKPT1"


@dataclass(frozen=True)
class MlpSpec:
    """Fully-connected stack: input width, hidden widths..., output width."""

    layer_widths: tuple[int, ...]
    final_activation: str = "none"  # "none" | "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if len(self.layer_widths) < 2 or any(w < 1 for w in self.layer_widths):
            raise ValueError(f"need >=1 layer with positive widths, got {self.layer_widths}")
        if self.final_activation not in ("none", "relu"):
            raise ValueError(f"unknown final_activation {self.final_activation!r}")

    @property
    def in_width(self) -> int:
        return self.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.layer_widths[-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_widths) - 1


class ParamStore:
    """Ordered map from hierarchical name to trainable Tensor."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        if not tensor.requires_grad:
            raise ValueError(f"parameter {name!r} must require gradients")
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"missing parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def total_values(self) -> int:
        return sum(t.data.size for t in self._params.values())


def save_checkpoint(store: ParamStore, path) -> None:
    """Write all parameters: magic, then per param name/rank/dims/f64 values."""
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        for name, tensor in store.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            shape = tensor.data.shape
            fh.write(struct.pack("<I", len(shape)))
            for d in shape:
                fh.write(struct.pack("<I", d))
            fh.write(tensor.data.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> ParamStore:
    store = ParamStore()
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")

        def read_exact(n: int) -> bytes:
            buf = fh.read(n)
            if len(buf) != n:
                raise ValueError("truncated checkpoint")
            return buf

        while True:
            head = fh.read(4)
            if head == b"":
                break
            if len(head) != 4:
                raise ValueError("truncated checkpoint")
            (name_len,) = struct.unpack("<I", head)
            name = read_exact(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", read_exact(4))
            shape = struct.unpack(f"<{rank}I", read_exact(4 * rank)) if rank else ()
            count = int(np.prod(shape, dtype=np.int64)) if rank else 1
            vals = np.frombuffer(read_exact(8 * count), dtype="<f8").reshape(shape)
            store.add(name, Tensor(vals.copy(), requires_grad=True))
    return store


def init_mlp_params(spec: MlpSpec, store: ParamStore, prefix: str,
                    rng: np.random.Generator) -> None:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    for i in range(spec.num_layers):
        fan_in, fan_out = spec.layer_widths[i], spec.layer_widths[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        store.add(f"{prefix}.layer{i}.weight", Tensor(w, requires_grad=True))
        store.add(f"{prefix}.layer{i}.bias", Tensor(np.zeros(fan_out), requires_grad=True))


def mlp_forward(spec: MlpSpec, params: ParamStore, prefix: str, x: Tensor) -> Tensor:
    """Alternating linear+ReLU; final layer linear unless spec says relu."""
    if x.data.shape[-1] != spec.in_width:
        raise ShapeError(f"{prefix}: input width {x.data.shape[-1]} != {spec.in_width}")
    lead = x.data.shape[:-1]
    h = x if x.data.ndim == 2 else ad.reshape(x, (-1, spec.in_width))
    for i in range(spec.num_layers):
        w = params[f"{prefix}.layer{i}.weight"]
        b = params[f"{prefix}.layer{i}.bias"]
        h = ad.add_rowvec(ad.matmul(h, w), b)
        last = i == spec.num_layers - 1
        if not last or spec.final_activation == "relu":
            h = ad.relu(h)
    if x.data.ndim != 2:
        h = ad.reshape(h, lead + (spec.out_width,))
    return h


def cross_entropy(logits: Tensor, labels: np.ndarray,
                  ignore_index: Optional[int] = None) -> Tensor:
    """Mean negative log-softmax of the true class over non-ignored rows.

    Recorded as a single fused op; an empty effective batch yields zero loss
    (and zero gradient).
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy expects N x K logits, got {logits.data.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    keep = np.ones(n, dtype=bool) if ignore_index is None else labels != ignore_index
    bad = labels[keep]
    if bad.size and (bad.min() < 0 or bad.max() >= k):
        raise ValueError(f"label out of range [0, {k})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    n_eff = int(keep.sum())
    if n_eff == 0:
        loss_val = 0.0
    else:
        nll = logz[keep] - shifted[keep, labels[keep]]
        loss_val = float(nll.mean())

    probs = np.exp(shifted - logz[:, None])

    def back(up, need):
        g = np.zeros((n, k), dtype=np.float64)
        if n_eff:
            g[keep] = probs[keep]
            g[keep, labels[keep]] -= 1.0
            g *= float(up) / n_eff
        return (g,)

    return ad._record("cross_entropy", (logits,), np.asarray(loss_val), back)


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam with bias correction over every parameter in the store."""

    def __init__(self, params: ParamStore, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.state = AdamState()

    def step(self) -> None:
        st = self.state
        st.step += 1
        bc1 = 1.0 - self.beta1 ** st.step
        bc2 = 1.0 - self.beta2 ** st.step
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient")
            g = p.grad
            m = st.m.get(name)
            v = st.v.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            st.m[name], st.v[name] = m, v
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        self.params.zero_grad()
