"""Dense networks on numpy: MLP forward/backward, Adam, Gaussian and
categorical heads, running statistics and a binary checkpoint container.

Weights live in one flat parameter vector; per-layer weight and bias arrays
are views into it, so optimisers and serialisation work on the flat vector.
"""

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from utils.errors import ContractViolation

logger = logging.getLogger(__name__)

ACTIVATION_CODES = {"linear": 0, "tanh": 1, "relu": 2}
_ACTIVATION_NAMES = {v: k for k, v in ACTIVATION_CODES.items()}
_LOG_2PI = math.log(2.0 * math.pi)


class Mlp:
    """Fully connected network with one hidden activation and a linear output."""

    def __init__(self, sizes, activation="tanh", dtype=np.float32, rng=None, output_gain=1.0):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ContractViolation(f"Invalid layer sizes {sizes}.")
        if activation not in ACTIVATION_CODES:
            raise ContractViolation(f"Unknown activation '{activation}'.")
        self.sizes = sizes
        self.activation = activation
        self.dtype = np.dtype(dtype)
        self.version = 0
        count = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
        self.params = np.zeros(count, dtype=self.dtype)
        self.weights = []
        self.biases = []
        offset = 0
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.weights.append(self.params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out))
            offset += fan_in * fan_out
            self.biases.append(self.params[offset:offset + fan_out])
            offset += fan_out
        if rng is not None:
            self.initialize(rng, output_gain)

    def initialize(self, rng, output_gain=1.0):
        gain = math.sqrt(2.0) if self.activation == "relu" else 1.0
        last = len(self.weights) - 1
        for i, w in enumerate(self.weights):
            scale = (output_gain if i == last else gain) / math.sqrt(w.shape[0])
            w[...] = rng.standard_normal(w.shape) * scale
            self.biases[i][...] = 0.0
        self.touch()

    @property
    def n_params(self):
        return self.params.size

    @property
    def in_dim(self):
        return self.sizes[0]

    @property
    def out_dim(self):
        return self.sizes[-1]

    def touch(self):
        """Marks parameters as changed; caches from earlier forwards become stale."""
        self.version += 1

    def set_params(self, flat):
        flat = np.asarray(flat)
        if flat.shape != self.params.shape:
            raise ContractViolation(f"Expected {self.params.size} parameters, got {flat.size}.")
        self.params[...] = flat
        self.touch()

    def copy(self):
        other = Mlp(self.sizes, self.activation, self.dtype)
        other.params[...] = self.params
        return other

    def astype(self, dtype):
        other = Mlp(self.sizes, self.activation, dtype)
        other.params[...] = self.params
        return other

    def __call__(self, x):
        return forward(self, x)[0]


@dataclass
class ForwardCache:
    version: int
    net_id: int
    inputs: list    # input to each layer
    outputs: list   # post-activation output of each hidden layer


def _activate(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0)
    return z


def forward(net, x):
    """Returns (output batch, cache for backward)."""
    x = np.asarray(x, dtype=net.dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != net.in_dim:
        raise ContractViolation(f"Network expects input dim {net.in_dim}, got {x.shape[-1]}.")
    inputs = []
    outputs = []
    h = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        if i < last:
            h = _activate(net.activation, z)
            outputs.append(h)
        else:
            h = z
    cache = ForwardCache(net.version, id(net), inputs, outputs)
    return (h[0] if squeeze else h), cache


def backward(net, cache, grad_out):
    """Exact gradients of sum(grad_out * output) w.r.t. parameters (flat) and input."""
    if cache.net_id != id(net) or cache.version != net.version:
        raise ContractViolation("Forward cache is stale: parameters changed since the forward pass.")
    g = np.asarray(grad_out, dtype=net.dtype)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], net.out_dim):
        raise ContractViolation(f"Output gradient shape {g.shape} does not match the forward batch.")
    grads = np.zeros_like(net.params)
    offset = net.params.size
    for i in range(len(net.weights) - 1, -1, -1):
        w = net.weights[i]
        n_w = w.size
        n_b = w.shape[1]
        offset -= n_b
        grads[offset:offset + n_b] = g.sum(axis=0)
        offset -= n_w
        grads[offset:offset + n_w] = (cache.inputs[i].T @ g).reshape(-1)
        g = g @ w.T
        if i > 0:
            h = cache.outputs[i - 1]
            if net.activation == "tanh":
                g = g * (1.0 - h * h)
            elif net.activation == "relu":
                g = g * (h > 0)
    return grads, g


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params, lr=1e-3):
        return cls(np.zeros_like(params), np.zeros_like(params), 0, lr)

    def copy(self):
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params, grads, state, lr=None):
    """In-place Adam update of `params`; returns params."""
    if grads.shape != params.shape or state.m.shape != params.shape:
        raise ContractViolation("Adam moments, gradients and parameters must share a shape.")
    lr = state.lr if lr is None else lr
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    params -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(params.dtype)
    return params


def adam_step_net(net, grads, state, lr=None):
    adam_step(net.params, grads, state, lr)
    net.touch()


def global_norm(*arrays):
    return float(math.sqrt(sum(float(np.sum(np.asarray(a, dtype=np.float64) ** 2)) for a in arrays)))


def clip_by_global_norm(arrays, max_norm):
    norm = global_norm(*arrays)
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        return [a * scale for a in arrays], norm
    return list(arrays), norm


# -- heads ---------------------------------------------------------------------

def gaussian_log_prob(mean, log_std, action):
    var = np.exp(2.0 * log_std)
    return -0.5 * np.sum((action - mean) ** 2 / var + 2.0 * log_std + _LOG_2PI, axis=-1)


def gaussian_log_prob_grads(mean, log_std, action):
    """d log p / d mean (B, D) and d log p / d log_std (B, D)."""
    var = np.exp(2.0 * log_std)
    diff = action - mean
    return diff / var, diff * diff / var - 1.0


def gaussian_entropy(log_std):
    """Entropy of a diagonal Gaussian; its gradient w.r.t. each log_std is 1."""
    return float(np.sum(log_std + 0.5 * (_LOG_2PI + 1.0)))


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits - np.max(logits, axis=-1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(z), axis=-1))
    n = logits.shape[0]
    loss = float(np.mean(log_norm - z[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


class RunningMeanStd:
    """Streaming mean/variance (parallel-merge form)."""

    def __init__(self, shape=(), epsilon=1e-4):
        self.mean = np.zeros(shape, dtype=np.float64)
        self.var = np.ones(shape, dtype=np.float64)
        self.count = epsilon

    def update(self, x):
        x = np.asarray(x, dtype=np.float64)
        batch_mean = x.mean(axis=0)
        batch_var = x.var(axis=0)
        n = x.shape[0]
        delta = batch_mean - self.mean
        total = self.count + n
        self.mean = self.mean + delta * n / total
        m2 = self.var * self.count + batch_var * n + delta ** 2 * self.count * n / total
        self.var = m2 / total
        self.count = total

    @property
    def std(self):
        return np.sqrt(self.var + 1e-8)


class RewardNormalizer:
    """Scales rewards by the running std of the discounted return.

    Each reward is scaled with statistics gathered before it was seen.
    """

    def __init__(self, n_envs, gamma):
        self.gamma = gamma
        self.returns = np.zeros(n_envs)
        self.stats = RunningMeanStd(())

    def __call__(self, rewards, dones):
        scaled = rewards / float(self.stats.std)
        self.returns = self.returns * self.gamma + rewards
        self.stats.update(self.returns)
        self.returns[dones] = 0.0
        return scaled


# -- checkpoint container --------------------------------------------------------
#
# header   <4sHI   magic b"TSNN", version, record count
# record   <H name_len, name utf-8, <B kind (1 = MLP, 2 = ARRAY)
# MLP      <B dtype code, <B activation code, <H n_sizes, n_sizes x <I, <Q n_params, data
# ARRAY    <B dtype code, <B ndim, ndim x <Q, data
# all data little-endian, C order

CKPT_MAGIC = b"TSNN"
CKPT_VERSION = 1
_KIND_MLP = 1
_KIND_ARRAY = 2
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_DTYPE_CODES = {v: k for k, v in _DTYPES.items()}


def _dtype_code(dtype):
    key = np.dtype(dtype).newbyteorder("<") if np.dtype(dtype).itemsize > 1 else np.dtype(dtype)
    if key not in _DTYPE_CODES:
        raise ContractViolation(f"Unsupported checkpoint dtype {dtype}.")
    return _DTYPE_CODES[key]


def save_checkpoint(path, records):
    """Writes an ordered mapping name -> Mlp | ndarray."""
    chunks = [struct.pack("<4sHI", CKPT_MAGIC, CKPT_VERSION, len(records))]
    for name, obj in records.items():
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw_name)) + raw_name)
        if isinstance(obj, Mlp):
            code = _dtype_code(obj.dtype)
            chunks.append(struct.pack("<BBBH", _KIND_MLP, code, ACTIVATION_CODES[obj.activation], len(obj.sizes)))
            chunks.append(struct.pack(f"<{len(obj.sizes)}I", *obj.sizes))
            chunks.append(struct.pack("<Q", obj.n_params))
            chunks.append(obj.params.astype(_DTYPES[code]).tobytes())
        else:
            arr = np.ascontiguousarray(obj)
            code = _dtype_code(arr.dtype)
            chunks.append(struct.pack("<BBB", _KIND_ARRAY, code, arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            chunks.append(arr.astype(_DTYPES[code]).tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path):
    data = Path(path).read_bytes()
    try:
        magic, version, count = struct.unpack_from("<4sHI", data, 0)
    except struct.error as exc:
        raise ContractViolation(f"Checkpoint {path} is truncated.") from exc
    if magic != CKPT_MAGIC or version != CKPT_VERSION:
        raise ContractViolation(f"{path} is not a version {CKPT_VERSION} checkpoint.")
    pos = struct.calcsize("<4sHI")
    records = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (kind,) = struct.unpack_from("<B", data, pos)
            if kind == _KIND_MLP:
                _, code, act, n_sizes = struct.unpack_from("<BBBH", data, pos)
                pos += struct.calcsize("<BBBH")
                sizes = struct.unpack_from(f"<{n_sizes}I", data, pos)
                pos += 4 * n_sizes
                (n_params,) = struct.unpack_from("<Q", data, pos)
                pos += 8
                dtype = _DTYPES[code]
                net = Mlp(sizes, _ACTIVATION_NAMES[act], dtype.newbyteorder("="))
                flat = np.frombuffer(data, dtype=dtype, count=n_params, offset=pos)
                pos += n_params * dtype.itemsize
                net.params[...] = flat
                records[name] = net
            elif kind == _KIND_ARRAY:
                _, code, ndim = struct.unpack_from("<BBB", data, pos)
                pos += 3
                shape = struct.unpack_from(f"<{ndim}Q", data, pos)
                pos += 8 * ndim
                dtype = _DTYPES[code]
                n = int(np.prod(shape)) if ndim else 1
                arr = np.frombuffer(data, dtype=dtype, count=n, offset=pos).reshape(shape)
                pos += n * dtype.itemsize
                records[name] = arr.astype(dtype.newbyteorder("="))
            else:
                raise ContractViolation(f"Unknown record kind {kind} in {path}.")
    except (struct.error, ValueError) as exc:
        raise ContractViolation(f"Checkpoint {path} is corrupt: {exc}") from exc
    return records


def json_record(obj):
    """Packs a JSON-serialisable object as a uint8 array record."""
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode("utf-8"), dtype=np.uint8).copy()


def read_json_record(arr):
    return json.loads(np.asarray(arr, dtype=np.uint8).tobytes().decode("utf-8"))
