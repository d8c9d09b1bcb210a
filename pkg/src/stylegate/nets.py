"""The three fixed desk-scale network architectures and their persistence.

* ``classifier`` - Conv(C->16, 3x3, s1) + ReLU -> Conv(16->32, 3x3, s2) + ReLU
  -> Conv(32->64, 3x3, s2) + ReLU -> global average pool -> FC(64 -> K).
  Exposes the three post-ReLU conv maps as texture taps and the pooled
  64-vector as the penultimate feature.
* ``featurenet`` - identical trunk with independent weights; trained as a
  classifier, then used frozen as the perceptual-feature provider.
* ``generator`` - Conv(C->16, 3x3) + ReLU -> two residual blocks
  (Conv16->16 twice, skip connection) -> Conv(16->C, 3x3) -> sigmoid, so the
  output shape equals the input shape and values stay inside (0, 1).

All convolutions use padding 1.  Parameters live in float32 inside
checkpoints; forward math runs in float64 through the autodiff engine.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, as_tensor, conv2d, relu, sigmoid

CHECKPOINT_MAGIC = b"SGCK"
CHECKPOINT_VERSION = 1

KIND_TAGS = {"classifier": 1, "generator": 2, "featurenet": 3}
TAG_KINDS = {tag: kind for kind, tag in KIND_TAGS.items()}

CONV_CHANNELS = (16, 32, 64)
FEATURE_DIM = 64
GENERATOR_WIDTH = 16
TAP_COUNT = 3


class CheckpointError(ValueError):
    """Raised for malformed checkpoint files or architecture mismatches."""


@dataclass
class NetworkCheckpoint:
    """Immutable container of named float32 parameter tensors.

    ``seed`` records the seed the network was initialized or trained with and
    ``fingerprint`` the hex digest of the configuration that produced it; both
    ride along for provenance and survive save/load.
    """

    kind: str
    tensors: dict[str, np.ndarray]
    seed: int = 0
    fingerprint: str = ""
    version: int = CHECKPOINT_VERSION

    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def channels(self) -> int:
        first = next(iter(self.tensors.values()))
        return int(first.shape[1])

    def classes(self) -> int:
        if self.kind == "generator":
            raise CheckpointError("generator checkpoints have no class count")
        return int(self.tensors["fc.weight"].shape[0])


def _parameter_specs(kind: str, channels: int, classes: int) -> list[tuple[str, tuple[int, ...]]]:
    if kind in ("classifier", "featurenet"):
        return [
            ("conv1.weight", (CONV_CHANNELS[0], channels, 3, 3)),
            ("conv1.bias", (CONV_CHANNELS[0],)),
            ("conv2.weight", (CONV_CHANNELS[1], CONV_CHANNELS[0], 3, 3)),
            ("conv2.bias", (CONV_CHANNELS[1],)),
            ("conv3.weight", (CONV_CHANNELS[2], CONV_CHANNELS[1], 3, 3)),
            ("conv3.bias", (CONV_CHANNELS[2],)),
            ("fc.weight", (classes, FEATURE_DIM)),
            ("fc.bias", (classes,)),
        ]
    if kind == "generator":
        w = GENERATOR_WIDTH
        specs: list[tuple[str, tuple[int, ...]]] = [
            ("conv_in.weight", (w, channels, 3, 3)),
            ("conv_in.bias", (w,)),
        ]
        for block in ("res1", "res2"):
            specs.append((f"{block}.conv_a.weight", (w, w, 3, 3)))
            specs.append((f"{block}.conv_a.bias", (w,)))
            specs.append((f"{block}.conv_b.weight", (w, w, 3, 3)))
            specs.append((f"{block}.conv_b.bias", (w,)))
        specs.append(("conv_out.weight", (channels, w, 3, 3)))
        specs.append(("conv_out.bias", (channels,)))
        return specs
    raise CheckpointError(f"unknown network kind: {kind!r}")


def init_network(kind: str, shape: tuple[int, int, int], classes: int,
                 seed: int, fingerprint: str = "") -> NetworkCheckpoint:
    """Deterministically initialize a fresh network.

    Weights are drawn from a fan-in-scaled uniform distribution
    U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero.
    """
    if kind not in KIND_TAGS:
        raise CheckpointError(f"unknown network kind: {kind!r}")
    channels = int(shape[0])
    if channels < 1:
        raise CheckpointError(f"channel count must be positive, got {channels}")
    if kind != "generator" and classes < 2:
        raise CheckpointError(f"{kind} needs at least 2 classes, got {classes}")
    rng = np.random.default_rng(seed)
    tensors: dict[str, np.ndarray] = {}
    for name, tensor_shape in _parameter_specs(kind, channels, classes):
        if name.endswith(".bias"):
            tensors[name] = np.zeros(tensor_shape, dtype=np.float32)
        else:
            if len(tensor_shape) == 4:
                fan_in = tensor_shape[1] * tensor_shape[2] * tensor_shape[3]
            else:
                fan_in = tensor_shape[1]
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=tensor_shape).astype(np.float32)
    return NetworkCheckpoint(kind=kind, tensors=tensors, seed=int(seed),
                             fingerprint=fingerprint)


@dataclass
class Network:
    """A live network: checkpoint tensors lifted into autodiff leaves."""

    kind: str
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def from_checkpoint(cls, ckpt: NetworkCheckpoint, trainable: bool = False) -> "Network":
        params = {name: Tensor(data.astype(np.float64), requires_grad=trainable)
                  for name, data in ckpt.tensors.items()}
        return cls(kind=ckpt.kind, params=params)

    def to_checkpoint(self, seed: int = 0, fingerprint: str = "") -> NetworkCheckpoint:
        tensors = {name: p.data.astype(np.float32) for name, p in self.params.items()}
        return NetworkCheckpoint(kind=self.kind, tensors=tensors,
                                 seed=int(seed), fingerprint=fingerprint)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def channels(self) -> int:
        first = next(iter(self.params.values()))
        return int(first.data.shape[1])


def _coerce(net: NetworkCheckpoint | Network, kinds: tuple[str, ...]) -> Network:
    if isinstance(net, NetworkCheckpoint):
        net = Network.from_checkpoint(net, trainable=False)
    if net.kind not in kinds:
        raise CheckpointError(f"expected a network of kind {kinds}, got {net.kind!r}")
    return net


def _check_input(net: Network, x: Tensor) -> None:
    if x.ndim != 4:
        raise CheckpointError(f"expected a rank-4 image batch, got shape {x.shape}")
    expected = net.channels()
    if x.shape[1] != expected:
        raise CheckpointError(
            f"channel mismatch: network expects {expected}, input has {x.shape[1]}")


def classifier_forward(net: NetworkCheckpoint | Network, x) -> tuple[Tensor, Tensor, list[Tensor]]:
    """Forward a batch through the classifier trunk.

    Returns ``(logits, feature, taps)``: logits (B, K), the pooled penultimate
    feature (B, 64), and the three post-ReLU conv maps used for texture
    statistics.  Pass a trainable :class:`Network` to obtain parameter
    gradients through any scalar loss built from the outputs.
    """
    net = _coerce(net, ("classifier", "featurenet"))
    x = as_tensor(x)
    _check_input(net, x)
    p = net.params
    t1 = relu(conv2d(x, p["conv1.weight"], p["conv1.bias"], stride=1, padding=1))
    t2 = relu(conv2d(t1, p["conv2.weight"], p["conv2.bias"], stride=2, padding=1))
    t3 = relu(conv2d(t2, p["conv3.weight"], p["conv3.bias"], stride=2, padding=1))
    feature = t3.mean(axis=(2, 3))
    logits = feature @ p["fc.weight"].transpose(1, 0) + p["fc.bias"]
    return logits, feature, [t1, t2, t3]


def featurenet_forward(net: NetworkCheckpoint | Network, x) -> list[Tensor]:
    """Forward through the perceptual feature provider; returns the 3 taps."""
    net = _coerce(net, ("featurenet", "classifier"))
    _, _, taps = classifier_forward(net, x)
    return taps


def generator_forward(net: NetworkCheckpoint | Network, x) -> Tensor:
    """Apply the style generator; output shape equals input shape, values in (0, 1)."""
    net = _coerce(net, ("generator",))
    x = as_tensor(x)
    _check_input(net, x)
    p = net.params
    h = relu(conv2d(x, p["conv_in.weight"], p["conv_in.bias"], stride=1, padding=1))
    for block in ("res1", "res2"):
        inner = relu(conv2d(h, p[f"{block}.conv_a.weight"], p[f"{block}.conv_a.bias"],
                            stride=1, padding=1))
        inner = conv2d(inner, p[f"{block}.conv_b.weight"], p[f"{block}.conv_b.bias"],
                       stride=1, padding=1)
        h = h + inner
    out = conv2d(h, p["conv_out.weight"], p["conv_out.bias"], stride=1, padding=1)
    return sigmoid(out)


# ---------------------------------------------------------------------------
# persistence
#
# Layout (all integers little-endian): magic "SGCK", u32 version, u8 kind tag,
# u32 tensor count; per tensor u16 name length + UTF-8 name, u8 rank,
# u32 dims..., float32 data.  A trailing provenance block (u64 seed,
# u16 fingerprint length + UTF-8 fingerprint) follows the tensor payload.


def save_checkpoint(ckpt: NetworkCheckpoint, path) -> None:
    if ckpt.kind not in KIND_TAGS:
        raise CheckpointError(f"unknown network kind: {ckpt.kind!r}")
    parts = [CHECKPOINT_MAGIC,
             struct.pack("<I", ckpt.version),
             struct.pack("<B", KIND_TAGS[ckpt.kind]),
             struct.pack("<I", len(ckpt.tensors))]
    for name, tensor in ckpt.tensors.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", tensor.ndim))
        for dim in tensor.shape:
            parts.append(struct.pack("<I", dim))
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    fp = ckpt.fingerprint.encode("utf-8")
    parts.append(struct.pack("<Q", ckpt.seed & 0xFFFFFFFFFFFFFFFF))
    parts.append(struct.pack("<H", len(fp)))
    parts.append(fp)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def read(self, count: int, what: str) -> bytes:
        if self.pos + count > len(self.blob):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = self.blob[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt), what))[0]


def load_checkpoint(path) -> NetworkCheckpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    reader = _Reader(blob)
    if reader.read(4, "magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    version = reader.unpack("<I", "version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"version mismatch: got {version}, "
                              f"expected {CHECKPOINT_VERSION}")
    tag = reader.unpack("<B", "kind tag")
    if tag not in TAG_KINDS:
        raise CheckpointError(f"unknown network kind tag {tag}")
    count = reader.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for index in range(count):
        name_len = reader.unpack("<H", f"tensor {index} name length")
        name = reader.read(name_len, f"tensor {index} name").decode("utf-8")
        rank = reader.unpack("<B", f"tensor {name} rank")
        dims = tuple(reader.unpack("<I", f"tensor {name} dim") for _ in range(rank))
        size = int(np.prod(dims)) if dims else 1
        data = reader.read(size * 4, f"tensor {name} data")
        if name in tensors:
            raise CheckpointError(f"tensor-count mismatch: duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(dims).copy()
    seed = reader.unpack("<Q", "seed")
    fp_len = reader.unpack("<H", "fingerprint length")
    fingerprint = reader.read(fp_len, "fingerprint").decode("utf-8")
    if reader.pos != len(blob):
        raise CheckpointError("tensor-count mismatch: trailing bytes after checkpoint")
    return NetworkCheckpoint(kind=TAG_KINDS[tag], tensors=tensors, seed=seed,
                             fingerprint=fingerprint, version=version)


def checkpoints_equal(a: NetworkCheckpoint, b: NetworkCheckpoint) -> bool:
    """Bitwise equality of every field, tensors included."""
    if (a.kind, a.seed, a.fingerprint, a.version) != (b.kind, b.seed, b.fingerprint, b.version):
        return False
    if list(a.tensors) != list(b.tensors):
        return False
    return all(a.tensors[k].shape == b.tensors[k].shape
               and a.tensors[k].tobytes() == b.tensors[k].tobytes()
               for k in a.tensors)
