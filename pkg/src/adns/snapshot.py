"""Binary checkpoint envelopes for the covariance/basis state and the
model, plus a small JSON sidecar holding run progress.

State file ("ADNS"): magic, version u32, layer count u32, then per layer
{d u32, k u32, covariance d*d f64, basis d*k f64}, all little-endian.

Model file ("ADNM"): magic, version u32, backbone count u32, head count
u32, activation u8, use_bias u8, then per backbone layer
{out u32, in u32, weight, bias?} and per head (ascending task id)
{task id u32, out u32, in u32, weight, bias}.
"""

import json
import struct

import numpy as np

from .errors import ParseError
from .net import LinearLayer, MlpModel
from .nullspace import CovarianceStore, LayerNullSpace

STATE_MAGIC = b"ADNS"
MODEL_MAGIC = b"ADNM"
VERSION = 1
_ACTIVATION_CODES = {"relu": 0, "identity": 1}
_ACTIVATION_NAMES = {code: name for name, code in _ACTIVATION_CODES.items()}


def _write_matrix(handle, arr):
    handle.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(handle, count, what):
    data = handle.read(count)
    if len(data) != count:
        raise ParseError(f"truncated file while reading {what}")
    return data


def _read_matrix(handle, rows, cols, what):
    data = _read_exact(handle, 8 * rows * cols, what)
    return np.frombuffer(data, dtype="<f8").reshape(rows, cols).copy()


def save_state(path, covariance, bases):
    with open(path, "wb") as handle:
        handle.write(STATE_MAGIC)
        handle.write(struct.pack("<II", VERSION, len(covariance.layer_dims)))
        for layer, dim in enumerate(covariance.layer_dims):
            basis = bases[layer].basis if bases is not None else np.zeros((dim, 0))
            handle.write(struct.pack("<II", dim, basis.shape[1]))
            _write_matrix(handle, covariance.matrix(layer))
            _write_matrix(handle, basis)


def load_state(path):
    with open(path, "rb") as handle:
        if _read_exact(handle, 4, "magic") != STATE_MAGIC:
            raise ParseError(f"{path} is not a state snapshot")
        version, layers = struct.unpack("<II", _read_exact(handle, 8, "header"))
        if version != VERSION:
            raise ParseError(f"unsupported state snapshot version {version}")
        dims, matrices, bases = [], [], []
        for layer in range(layers):
            dim, k = struct.unpack("<II", _read_exact(handle, 8, f"layer {layer}"))
            dims.append(dim)
            matrices.append(_read_matrix(handle, dim, dim, f"covariance {layer}"))
            bases.append(LayerNullSpace(_read_matrix(handle, dim, k, f"basis {layer}")))
    store = CovarianceStore(dims)
    store.matrices = matrices
    return store, bases


def save_model(path, model):
    heads = sorted(model.heads.items())
    with open(path, "wb") as handle:
        handle.write(MODEL_MAGIC)
        handle.write(struct.pack("<III", VERSION, len(model.backbone), len(heads)))
        handle.write(struct.pack("<BB", _ACTIVATION_CODES[model.activation],
                                 int(model.use_bias)))
        for layer in model.backbone:
            out, fan_in = layer.weight.shape
            handle.write(struct.pack("<II", out, fan_in))
            _write_matrix(handle, layer.weight)
            if model.use_bias:
                _write_matrix(handle, layer.bias.reshape(1, -1))
        for task_id, head in heads:
            out, fan_in = head.weight.shape
            handle.write(struct.pack("<III", task_id, out, fan_in))
            _write_matrix(handle, head.weight)
            _write_matrix(handle, head.bias.reshape(1, -1))


def load_model(path):
    with open(path, "rb") as handle:
        if _read_exact(handle, 4, "magic") != MODEL_MAGIC:
            raise ParseError(f"{path} is not a model snapshot")
        version, n_layers, n_heads = struct.unpack(
            "<III", _read_exact(handle, 12, "header"))
        if version != VERSION:
            raise ParseError(f"unsupported model snapshot version {version}")
        act_code, use_bias = struct.unpack("<BB", _read_exact(handle, 2, "flags"))
        if act_code not in _ACTIVATION_NAMES:
            raise ParseError(f"unknown activation code {act_code}")
        layers = []
        for idx in range(n_layers):
            out, fan_in = struct.unpack("<II", _read_exact(handle, 8, f"layer {idx}"))
            weight = _read_matrix(handle, out, fan_in, f"layer {idx} weight")
            bias = None
            if use_bias:
                bias = _read_matrix(handle, 1, out, f"layer {idx} bias").ravel()
            layers.append(LinearLayer(weight, bias))
        heads = {}
        for idx in range(n_heads):
            task_id, out, fan_in = struct.unpack(
                "<III", _read_exact(handle, 12, f"head {idx}"))
            weight = _read_matrix(handle, out, fan_in, f"head {idx} weight")
            bias = _read_matrix(handle, 1, out, f"head {idx} bias").ravel()
            heads[task_id] = LinearLayer(weight, bias)

    dims = [layers[0].weight.shape[1]] + [layer.weight.shape[0] for layer in layers]
    model = MlpModel(dims[0], dims[1:], np.random.default_rng(0),
                     activation=_ACTIVATION_NAMES[act_code], use_bias=bool(use_bias))
    model.backbone = layers
    model.heads = heads
    model.mark_mutated()
    return model


def save_progress(path, progress):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(progress, handle, indent=2)
        handle.write("\n")


def load_progress(path):
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)
