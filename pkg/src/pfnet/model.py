"""Front end + CNN/DNN head, mini-batch training and checkpoints.

Layer order per block is conv -> layer norm -> leaky ReLU -> max pool.  The
input frames go through a non-affine layer norm before the front end, and
the dense stack uses batch norm.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, DivergenceError, ShapeError
from .filters import FilterSpec
from .frontends import make_front_end
from .nn import (BatchNorm1d, Conv1d, Dense, Flatten, HeadConfig, LayerNorm, LeakyReLU, MaxPool1d,
                 OptimizerConfig, RMSprop, softmax, softmax_cross_entropy)

CKPT_MAGIC = b"PFNETCKPT\n"
CKPT_VERSION = 1


class Network:
    def __init__(self, front_end, head: HeadConfig, frame_len: int, seed: int = 0, dtype=np.float64):
        rng = np.random.default_rng([seed, 1])
        slope = head.lrelu_slope
        F = front_end.spec.num_filters
        layers = [LayerNorm(1, affine=False), front_end, LayerNorm(F), LeakyReLU(slope)]
        if head.pool_width > 1:
            layers.append(MaxPool1d(head.pool_width))
        channels = F
        for _ in range(head.conv_layers):
            layers += [Conv1d(channels, head.conv_channels, head.conv_kernel, rng, slope),
                       LayerNorm(head.conv_channels), LeakyReLU(slope)]
            if head.pool_width > 1:
                layers.append(MaxPool1d(head.pool_width))
            channels = head.conv_channels
        layers.append(Flatten())
        self.layers = layers
        self.head = head
        self.frame_len = frame_len
        width = self._flat_width(frame_len)
        for _ in range(head.dense_layers):
            layers += [Dense(width, head.dense_width, rng, slope), BatchNorm1d(head.dense_width), LeakyReLU(slope)]
            width = head.dense_width
        layers.append(Dense(width, head.num_classes, rng, slope))
        front_end.need_input_grad = False
        # front-end raws stay float64; only activations and head weights follow dtype
        self.dtype = np.dtype(dtype)
        for layer in layers:
            if layer is not front_end:
                layer.astype(self.dtype)

    @property
    def front_end(self):
        return self.layers[1]

    def _flat_width(self, T):
        L = self.front_end.spec.kernel_len
        T = T - L + 1
        if T < 1:
            raise ConfigError(f"frame length {self.frame_len} shorter than kernel length {L}")
        p = self.head.pool_width if self.head.pool_width > 1 else 1
        T //= p
        for _ in range(self.head.conv_layers):
            T = (T - self.head.conv_kernel + 1) // p
            if T < 1:
                raise ConfigError("frame too short for the configured conv/pool stack")
        ch = self.head.conv_channels if self.head.conv_layers else self.front_end.spec.num_filters
        return ch * T

    def forward(self, x, train=True):
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != self.frame_len:
            raise ShapeError(f"expected frames of shape (B, 1, {self.frame_len}), got {x.shape}")
        x = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dlogits, input_grad=False):
        """Backpropagate; stops at the front end unless ``input_grad`` is set."""
        self.front_end.need_input_grad = input_grad
        dy = dlogits.astype(self.dtype, copy=False)
        stop = 0 if input_grad else 1
        for layer in reversed(self.layers[stop:]):
            dy = layer.backward(dy)
        return dy

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                yield f"layer{i}.{name}", layer, name, p

    def num_trainable(self):
        return sum(p.size for _, layer, name, p in self.named_params() if name not in layer.frozen)

    def state_arrays(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                out[f"layer{i}.{name}"] = p
            for name, b in layer.buffers.items():
                out[f"layer{i}.buffer.{name}"] = b
        return out

    def load_state_arrays(self, arrays):
        own = self.state_arrays()
        missing = set(own) - set(arrays)
        if missing:
            raise ShapeError(f"checkpoint lacks {sorted(missing)[:3]}")
        for key, dst in own.items():
            src = arrays[key]
            if src.shape != dst.shape:
                raise ShapeError(f"{key}: checkpoint shape {src.shape} != model shape {dst.shape}")
            dst[...] = src.astype(dst.dtype)


def build_network(front_end: str, spec: FilterSpec, head: HeadConfig, frame_len: int, seed: int = 0,
                  dtype=np.float64):
    fe = make_front_end(front_end, spec, seed=seed, slope=head.lrelu_slope)
    return Network(fe, head, frame_len, seed, dtype)


def predict_proba(net: Network, frames, chunk=256):
    """Frame posteriors in float64, whatever the network's working dtype."""
    out = [softmax(net.forward(frames[i : i + chunk], train=False).astype(np.float64))
           for i in range(0, len(frames), chunk)]
    return np.concatenate(out) if out else np.zeros((0, net.head.num_classes))


def train_epoch(net: Network, opt: RMSprop, frames, labels, rng, batch_size=None):
    """One shuffled pass; returns the mean mini-batch loss."""
    bs = batch_size or opt.cfg.batch_size
    order = rng.permutation(len(frames))
    losses = []
    for b, start in enumerate(range(0, len(order), bs)):
        idx = order[start : start + bs]
        if idx.size < 2:  # batch norm needs two samples
            continue
        logits = net.forward(frames[idx], train=True)
        loss, grad, _ = softmax_cross_entropy(logits, labels[idx])
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at batch {b}", batch_index=b)
        net.backward(grad)
        try:
            opt.step(net.layers)
        except DivergenceError as e:
            raise DivergenceError(f"{e} at batch {b}", batch_index=b) from e
        losses.append(loss)
    return float(np.mean(losses)) if losses else float("nan")


# -- checkpoints -------------------------------------------------------------------


def save_checkpoint(path, net: Network, opt: RMSprop | None = None, meta: dict | None = None):
    """Binary dump: magic, 8-byte header length, JSON header, raw little-endian f8 arrays."""
    arrays = dict(net.state_arrays())
    if opt is not None:
        for (i, name), v in sorted(opt.state.items()):
            arrays[f"opt.layer{i}.{name}"] = v
    entries, blobs, offset = [], [], 0
    for key in arrays:
        a = np.ascontiguousarray(arrays[key], dtype="<f8")
        entries.append({"name": key, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"version": CKPT_VERSION, "meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    return Path(path)


def read_checkpoint(path):
    """Returns ``(arrays, meta)``."""
    with open(path, "rb") as fh:
        if fh.read(len(CKPT_MAGIC)) != CKPT_MAGIC:
            raise ConfigError(f"{path} is not a pfnet checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n))
        if header.get("version") != CKPT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {header.get('version')}")
        body = fh.read()
    arrays = {}
    for e in header["tensors"]:
        buf = body[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype="<f8").reshape(e["shape"]).copy()
    return arrays, header["meta"]


def load_into(net: Network, opt: RMSprop | None, arrays):
    net.load_state_arrays(arrays)
    if opt is not None:
        opt.state = {}
        for key, v in arrays.items():
            if key.startswith("opt.layer"):
                layer_part, name = key[len("opt.layer"):].split(".", 1)
                i = int(layer_part)
                # accumulators live in their parameter's dtype
                opt.state[(i, name)] = v.astype(net.layers[i].params[name].dtype)


__all__ = [
    "Network",
    "OptimizerConfig",
    "build_network",
    "load_into",
    "predict_proba",
    "read_checkpoint",
    "save_checkpoint",
    "train_epoch",
]
