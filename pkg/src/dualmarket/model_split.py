"""Dense feed-forward network, splittable at layer boundaries.

The network is a plain MLP trained with mini-batch SGD. It can be cut at any
interior layer boundary into segments; each segment owns the parameters of a
contiguous layer range and exchanges only boundary activations (forward) and
boundary gradients (backward) with its neighbours. A monolithic run is the
degenerate single-segment case, so split and monolithic training share every
code path that touches a float.

All reductions go through :mod:`dualmarket._kernels`, which fixes the
accumulation order of every sum. Together with seeded initialization this
makes training bit-deterministic: two runs over the same data produce
byte-identical parameters, which is what lets redundancy groups be compared
by digest equality.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import canon
from ._kernels import (
    colsum,
    map_exp,
    map_tanh,
    matmul,
    matmul_a_bt,
    matmul_at_b,
    rowsum,
    sum_all,
)
from .errors import InvalidCutPoints, InvalidSpec, ShapeMismatch, StaleCache

ACTIVATIONS = ("tanh", "relu")
LOSSES = ("mse", "softmax_ce")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture plus everything needed to reproduce a training run."""

    layer_dims: tuple[int, ...]
    activation: str = "tanh"
    loss: str = "mse"
    init_seed: int = 0
    learning_rate: float = 0.01

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise InvalidSpec("need at least an input and an output layer")
        if any(d < 1 for d in dims):
            raise InvalidSpec("layer dims must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpec(f"unknown activation {self.activation!r}")
        if self.loss not in LOSSES:
            raise InvalidSpec(f"unknown loss {self.loss!r}")
        if not isinstance(self.init_seed, int) or self.init_seed < 0:
            raise InvalidSpec("init_seed must be a non-negative integer")
        lr = float(self.learning_rate)
        if not math.isfinite(lr) or lr <= 0:
            raise InvalidSpec("learning_rate must be finite and positive")

    @property
    def n_layers(self) -> int:
        """Number of weight layers."""
        return len(self.layer_dims) - 1


# A parameter set is a list of (W, b) per weight layer, W: (fan_in, fan_out).
Params = list[tuple[np.ndarray, np.ndarray]]


def init_model(spec: ModelSpec) -> Params:
    """Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)].

    Draw order is fixed: for each layer in ascending order, the weight
    matrix is drawn first (C order), then the bias vector.
    """
    rng = np.random.Generator(np.random.PCG64(spec.init_seed))
    params: Params = []
    for i in range(spec.n_layers):
        fan_in = spec.layer_dims[i]
        fan_out = spec.layer_dims[i + 1]
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=(fan_out,))
        params.append((w, b))
    return params


def clone_params(params: Params) -> Params:
    return [(w.copy(), b.copy()) for w, b in params]


def params_digest(params: Params) -> bytes:
    """SHA-256 over the canonical bytes of every layer, ascending.

    The stream is per weight layer, so any segmentation of the same
    parameters digests identically: concatenating segment digest inputs in
    segment order reproduces this exact byte stream.
    """
    h = hashlib.sha256()
    for chunk in params_canonical_chunks(params):
        h.update(chunk)
    return h.digest()


def params_canonical_chunks(params: Params) -> list[bytes]:
    """One canonical byte chunk per weight layer (weights then bias)."""
    return [canon.encode(w) + canon.encode(b) for w, b in params]


def params_from_canonical_chunks(
    spec: ModelSpec, lo: int, chunks: list[bytes]
) -> Params:
    """Inverse of `params_canonical_chunks` for layers lo..lo+len(chunks)."""
    out: Params = []
    for off, chunk in enumerate(chunks):
        li = lo + off
        fan_in = spec.layer_dims[li]
        fan_out = spec.layer_dims[li + 1]
        w, rest = canon.decode_f64_array(chunk)
        b, tail = canon.decode_f64_array(rest)
        if tail:
            raise ShapeMismatch("trailing bytes after layer parameters")
        if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise ShapeMismatch("layer parameter shape mismatch")
        out.append((w, b))
    return out


def validate_cut_points(spec: ModelSpec, cut_points: list[int]) -> list[int]:
    cuts = [int(c) for c in cut_points]
    n = spec.n_layers
    if any(c <= 0 or c >= n for c in cuts):
        raise InvalidCutPoints(f"cut points must lie strictly inside (0, {n})")
    if any(b <= a for a, b in zip(cuts, cuts[1:])):
        raise InvalidCutPoints("cut points must be strictly increasing")
    return cuts


@dataclass
class SegmentCache:
    """Forward intermediates needed by the matching backward call."""

    segment_index: int
    version: int
    # per layer in the segment: (input activation, pre-activation, output)
    layers: list[tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass
class Segment:
    """A contiguous layer range [lo, hi) with its own parameters."""

    spec: ModelSpec
    index: int
    lo: int
    hi: int
    layers: Params
    version: int = 0

    @property
    def in_width(self) -> int:
        return self.spec.layer_dims[self.lo]

    @property
    def out_width(self) -> int:
        return self.spec.layer_dims[self.hi]

    @property
    def n_layers(self) -> int:
        return self.hi - self.lo

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, SegmentCache]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_width:
            raise ShapeMismatch(
                f"segment {self.index} expects input width {self.in_width}, "
                f"got {x.shape}"
            )
        cache_layers = []
        a = x
        last = self.spec.n_layers - 1
        for off, (w, b) in enumerate(self.layers):
            li = self.lo + off
            z = matmul(a, w) + b
            # the output layer of the whole network stays linear
            out = z if li == last else _activate(self.spec.activation, z)
            cache_layers.append((a, z, out))
            a = out
        return a, SegmentCache(self.index, self.version, cache_layers)

    def backward(
        self, cache: SegmentCache, upstream: np.ndarray
    ) -> tuple[Params, np.ndarray | None]:
        """Returns (per-layer parameter grads ascending, boundary grad).

        The boundary grad is None for the first segment of the network,
        which has nothing below it.
        """
        if cache.segment_index != self.index:
            raise StaleCache("cache belongs to a different segment")
        if cache.version != self.version:
            raise StaleCache(
                f"segment {self.index} params at version {self.version}, "
                f"cache from version {cache.version}"
            )
        g = np.asarray(upstream, dtype=np.float64)
        if g.ndim != 2 or g.shape[1] != self.out_width:
            raise ShapeMismatch(
                f"segment {self.index} expects upstream width "
                f"{self.out_width}, got {g.shape}"
            )
        last = self.spec.n_layers - 1
        grads_rev: Params = []
        for off in range(self.n_layers - 1, -1, -1):
            li = self.lo + off
            w, _b = self.layers[off]
            a_in, z, a_out = cache.layers[off]
            if g.shape[0] != a_in.shape[0]:
                raise ShapeMismatch("upstream batch size differs from cache")
            dz = g if li == last else g * _activation_deriv(
                self.spec.activation, z, a_out
            )
            gw = matmul_at_b(a_in, dz)
            gb = colsum(dz)
            grads_rev.append((gw, gb))
            if off > 0 or self.lo > 0:
                g = matmul_a_bt(dz, w)
            else:
                g = None  # type: ignore[assignment]
        grads_rev.reverse()
        return grads_rev, g

    def apply_sgd(self, grads: Params, learning_rate: float | None = None) -> None:
        lr = self.spec.learning_rate if learning_rate is None else learning_rate
        if len(grads) != self.n_layers:
            raise ShapeMismatch("gradient count differs from layer count")
        for (w, b), (gw, gb) in zip(self.layers, grads):
            if gw.shape != w.shape or gb.shape != b.shape:
                raise ShapeMismatch("gradient shape differs from parameter")
            w -= lr * gw
            b -= lr * gb
        self.version += 1


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return map_tanh(z)
    return np.maximum(z, 0.0)


def _activation_deriv(kind: str, z: np.ndarray, a_out: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - a_out * a_out
    return (z > 0.0).astype(np.float64)


def split_model(spec: ModelSpec, params: Params, cut_points: list[int]) -> list[Segment]:
    """Partition `params` into segments at the given layer boundaries."""
    cuts = validate_cut_points(spec, cut_points)
    if len(params) != spec.n_layers:
        raise ShapeMismatch("parameter count differs from spec layer count")
    bounds = [0, *cuts, spec.n_layers]
    segments = []
    for idx in range(len(bounds) - 1):
        lo, hi = bounds[idx], bounds[idx + 1]
        segments.append(
            Segment(
                spec=spec,
                index=idx,
                lo=lo,
                hi=hi,
                layers=clone_params(params[lo:hi]),
            )
        )
    return segments


def reassemble(segments: list[Segment]) -> Params:
    """Concatenate segment parameters back into a monolithic set."""
    ordered = sorted(segments, key=lambda s: s.index)
    expect = 0
    params: Params = []
    for seg in ordered:
        if seg.lo != expect:
            raise InvalidCutPoints("segments do not tile the layer range")
        params.extend(clone_params(seg.layers))
        expect = seg.hi
    if not ordered or expect != ordered[0].spec.n_layers:
        raise InvalidCutPoints("segments do not cover the layer range")
    return params


def loss_and_grad(
    spec: ModelSpec, pred: np.ndarray, target: np.ndarray
) -> tuple[float, np.ndarray]:
    """Scalar loss and its gradient w.r.t. the network output."""
    if pred.shape != target.shape:
        raise ShapeMismatch(
            f"prediction shape {pred.shape} differs from target {target.shape}"
        )
    batch = pred.shape[0]
    if spec.loss == "mse":
        diff = pred - target
        n = batch * pred.shape[1]
        loss = sum_all(diff * diff) / n
        return loss, diff * (2.0 / n)
    # softmax cross-entropy; target rows are one-hot
    m = np.max(pred, axis=1, keepdims=True)
    e = map_exp(pred - m)
    s = rowsum(e)
    p = e / s[:, None]
    loss = -sum_all(target * np.log(p)) / batch
    return loss, (p - target) * (1.0 / batch)


def train_batch(
    spec: ModelSpec, segments: list[Segment], x: np.ndarray, y: np.ndarray
) -> float:
    """One synchronous SGD step across the segment chain. Returns the loss."""
    a = x
    caches = []
    for seg in segments:
        a, cache = seg.forward(a)
        caches.append(cache)
    loss, g = loss_and_grad(spec, a, y)
    for seg, cache in zip(reversed(segments), reversed(caches)):
        grads, g = seg.backward(cache, g)
        seg.apply_sgd(grads)
    return loss


def train_epochs(
    spec: ModelSpec,
    segments: list[Segment],
    shards: list[tuple[np.ndarray, np.ndarray]],
    epochs: int,
) -> list[float]:
    """Train in shard order for `epochs` passes; returns epoch-mean losses."""
    means = []
    for _ in range(epochs):
        total = 0.0
        for x, y in shards:
            total += train_batch(spec, segments, x, y)
        means.append(total / len(shards))
    return means


class Model:
    """Monolithic wrapper: the single-segment degenerate split."""

    def __init__(self, spec: ModelSpec, params: Params | None = None):
        self.spec = spec
        base = clone_params(params) if params is not None else init_model(spec)
        self._segment = Segment(spec, 0, 0, spec.n_layers, base)

    @property
    def params(self) -> Params:
        return self._segment.layers

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self._segment.forward(x)
        return out

    def train_batch(self, x: np.ndarray, y: np.ndarray) -> float:
        return train_batch(self.spec, [self._segment], x, y)

    def train_epochs(
        self, shards: list[tuple[np.ndarray, np.ndarray]], epochs: int
    ) -> list[float]:
        return train_epochs(self.spec, [self._segment], shards, epochs)

    def digest(self) -> bytes:
        return params_digest(self.params)


def make_shards(
    seed: int, n_shards: int, batch_size: int, d_in: int, d_out: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic synthetic dataset: inputs plus a smooth teacher signal.

    One shard is one mini-batch; the shard is the unit of exposure
    accounting upstream.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    teacher = rng.uniform(-1.0, 1.0, size=(d_in, d_out))
    shards = []
    for _ in range(n_shards):
        x = rng.uniform(-1.0, 1.0, size=(batch_size, d_in))
        y = map_tanh(matmul(x, teacher))
        shards.append((x, y))
    return shards


def one_hot_targets(y: np.ndarray) -> np.ndarray:
    """Convert teacher outputs to one-hot rows (argmax), for the CE loss."""
    idx = np.argmax(y, axis=1)
    out = np.zeros_like(y)
    out[np.arange(y.shape[0]), idx] = 1.0
    return out
