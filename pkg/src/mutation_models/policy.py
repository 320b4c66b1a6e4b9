"""Convolutional mutation policy: observation cropping, network, training, sampling.

The network is a small numpy implementation so that training is exactly
reproducible on CPU and every gradient is inspectable:

    conv3x3(32) -> relu -> maxpool2 -> conv3x3(64) -> relu -> maxpool2
    -> conv3x3(128) -> relu -> flatten -> dense(256) -> relu -> dense(3) -> softmax

Activations are NHWC. Convolution kernels are stored as
``(3, 3, in_channels, out_channels)`` and dense matrices as ``(in, out)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .maze import Level, MutationAction

DEFAULT_CROP = 8
NUM_ACTIONS = len(MutationAction)
CONV_CHANNELS = (32, 64, 128)
HIDDEN_UNITS = 256

PARAM_ORDER = (
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv3.weight",
    "conv3.bias",
    "dense1.weight",
    "dense1.bias",
    "dense2.weight",
    "dense2.bias",
)


# --------------------------------------------------------------------------- observations


def crop_offset(crop_size: int) -> int:
    """Window index of the mutation location along each axis (3 for an 8x8 crop)."""
    return crop_size // 2 - 1


def encode_observation(level: Level, x: int, y: int, crop_size: int = DEFAULT_CROP) -> np.ndarray:
    """Crop a ``crop_size`` square around ``(x, y)``; solid (and off-grid) is 1.0.

    Window cell ``(i, j)`` holds the level tile at ``(x - off + j, y - off + i)``
    with ``off = crop_offset(crop_size)``.
    """
    if not level.in_bounds(x, y):
        raise ValueError(f"mutation location ({x}, {y}) outside {level.width}x{level.height} level")
    padded = pad_level(level.tiles, crop_size)
    return crop_padded(padded, x, y, crop_size).astype(np.float32)


def pad_level(tiles: np.ndarray, crop_size: int = DEFAULT_CROP) -> np.ndarray:
    """Surround ``tiles`` with a solid margin wide enough for any crop."""
    return np.pad(tiles, crop_size, mode="constant", constant_values=1)


def crop_padded(padded: np.ndarray, x: int, y: int, crop_size: int = DEFAULT_CROP) -> np.ndarray:
    top = y + crop_size - crop_offset(crop_size)
    left = x + crop_size - crop_offset(crop_size)
    return padded[top : top + crop_size, left : left + crop_size]


# --------------------------------------------------------------------------- weights


class PolicyWeights:
    """Named parameter tensors of the policy network, in ``PARAM_ORDER``."""

    def __init__(self, params: dict[str, np.ndarray]) -> None:
        missing = [name for name in PARAM_ORDER if name not in params]
        extra = [name for name in params if name not in PARAM_ORDER]
        if missing or extra:
            raise WeightsShapeError(f"parameter names mismatch: missing={missing} unexpected={extra}")
        self.params = {name: np.asarray(params[name]) for name in PARAM_ORDER}
        self.crop_size = _validate_shapes({k: v.shape for k, v in self.params.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def astype(self, dtype) -> "PolicyWeights":
        return PolicyWeights({k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "PolicyWeights":
        return PolicyWeights({k: v.copy() for k, v in self.params.items()})

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyWeights):
            return NotImplemented
        return all(
            self.params[k].dtype == other.params[k].dtype and np.array_equal(self.params[k], other.params[k])
            for k in PARAM_ORDER
        )

    def __repr__(self) -> str:
        return f"PolicyWeights(crop={self.crop_size}, params={parameter_count(self)})"


def expected_shapes(crop_size: int = DEFAULT_CROP) -> dict[str, tuple[int, ...]]:
    if crop_size <= 0 or crop_size % 4:
        raise ValueError(f"crop size must be a positive multiple of 4, got {crop_size}")
    c1, c2, c3 = CONV_CHANNELS
    flat = c3 * (crop_size // 4) ** 2
    return {
        "conv1.weight": (3, 3, 1, c1),
        "conv1.bias": (c1,),
        "conv2.weight": (3, 3, c1, c2),
        "conv2.bias": (c2,),
        "conv3.weight": (3, 3, c2, c3),
        "conv3.bias": (c3,),
        "dense1.weight": (flat, HIDDEN_UNITS),
        "dense1.bias": (HIDDEN_UNITS,),
        "dense2.weight": (HIDDEN_UNITS, NUM_ACTIONS),
        "dense2.bias": (NUM_ACTIONS,),
    }


def _validate_shapes(shapes: dict[str, tuple[int, ...]]) -> int:
    dense_in = shapes["dense1.weight"][0] if len(shapes["dense1.weight"]) == 2 else -1
    side = int(round((max(dense_in, 0) / CONV_CHANNELS[2]) ** 0.5)) * 4
    if side <= 0 or CONV_CHANNELS[2] * (side // 4) ** 2 != dense_in:
        raise WeightsShapeError(f"dense1 input size {dense_in} does not match any square crop")
    want = expected_shapes(side)
    for name in PARAM_ORDER:
        if tuple(shapes[name]) != want[name]:
            raise WeightsShapeError(f"{name}: expected shape {want[name]}, got {tuple(shapes[name])}")
    return side


def parameter_count(weights: PolicyWeights) -> int:
    return int(sum(weights[name].size for name in PARAM_ORDER))


def init_network(seed: int, crop_size: int = DEFAULT_CROP) -> PolicyWeights:
    """He-uniform kernels (limit ``sqrt(6 / fan_in)``), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in expected_shapes(crop_size).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[:-1]))
            limit = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape).astype(np.float32)
    return PolicyWeights(params)


# --------------------------------------------------------------------------- forward / backward


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N, H, W, C) -> (N*H*W, 9*C) patches for a 3x3 'same' convolution."""
    n, h, w, c = x.shape
    padded = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    padded[:, 1:-1, 1:-1, :] = x
    patches = np.empty((n, h, w, 3, 3, c), dtype=x.dtype)
    for dy in range(3):
        for dx in range(3):
            patches[:, :, :, dy, dx, :] = padded[:, dy : dy + h, dx : dx + w, :]
    return patches.reshape(n * h * w, 9 * c)


def _col2im(dcols: np.ndarray, shape: tuple[int, int, int, int]) -> np.ndarray:
    n, h, w, c = shape
    dcols = dcols.reshape(n, h, w, 3, 3, c)
    dpadded = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
    for dy in range(3):
        for dx in range(3):
            dpadded[:, dy : dy + h, dx : dx + w, :] += dcols[:, :, :, dy, dx, :]
    return dpadded[:, 1:-1, 1:-1, :]


def _conv(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray):
    n, h, w, _ = x.shape
    cols = _im2col(x)
    out = cols @ kernel.reshape(-1, kernel.shape[-1]) + bias
    return out.reshape(n, h, w, kernel.shape[-1]), cols


def _maxpool(x: np.ndarray, keep: bool = False):
    n, h, w, c = x.shape
    if not keep:
        return x.reshape(n, h // 2, 2, w // 2, 2, c).max(axis=(2, 4)), None
    windows = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool_backward(dout: np.ndarray, idx: np.ndarray, shape) -> np.ndarray:
    n, h, w, c = shape
    dwin = np.zeros(idx.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(obs: np.ndarray, crop_size: int, dtype) -> np.ndarray:
    obs = np.asarray(obs, dtype=dtype)
    if obs.shape == (crop_size, crop_size) or obs.shape == (crop_size, crop_size, 1):
        obs = obs.reshape(1, crop_size, crop_size)
    if obs.ndim == 4 and obs.shape[-1] == 1:
        obs = obs[..., 0]
    if obs.ndim != 3 or obs.shape[1:] != (crop_size, crop_size):
        raise ValueError(f"expected observations of shape (N, {crop_size}, {crop_size}), got {obs.shape}")
    return obs[..., None]


def _forward(weights: PolicyWeights, x: np.ndarray, keep: bool = False):
    p = weights.params
    cache = {}
    a1, cache["cols1"] = _conv(x, p["conv1.weight"], p["conv1.bias"])
    r1 = np.maximum(a1, 0)
    m1, cache["pool1"] = _maxpool(r1, keep)
    a2, cache["cols2"] = _conv(m1, p["conv2.weight"], p["conv2.bias"])
    r2 = np.maximum(a2, 0)
    m2, cache["pool2"] = _maxpool(r2, keep)
    a3, cache["cols3"] = _conv(m2, p["conv3.weight"], p["conv3.bias"])
    r3 = np.maximum(a3, 0)
    flat = r3.reshape(r3.shape[0], -1)
    h = flat @ p["dense1.weight"] + p["dense1.bias"]
    hr = np.maximum(h, 0)
    logits = hr @ p["dense2.weight"] + p["dense2.bias"]
    if keep:
        cache.update(x=x, a1=a1, m1=m1, a2=a2, m2=m2, a3=a3, flat=flat, h=h, hr=hr)
    return logits, cache


def forward_batch(weights: PolicyWeights, observations: np.ndarray) -> np.ndarray:
    """Action probabilities, shape (N, 3), for a stack of observations."""
    dtype = weights["dense2.weight"].dtype
    x = _as_batch(observations, weights.crop_size, dtype)
    logits, _ = _forward(weights, x)
    return softmax(logits)


# Single-observation path used by level generation. A fused compiled kernel
# avoids per-layer dispatch overhead and skips zero activations, which are
# common since inputs are binary and hidden layers are rectified.


@numba.njit(cache=True, fastmath=True)
def _conv_relu_single(x, w2, b):
    # x is (h, w, cin); w2 is the kernel flattened to (9 * cin, cout)
    h, wd, cin = x.shape
    cout = w2.shape[1]
    out = np.empty((h, wd, cout), dtype=np.float32)
    acc = np.empty(cout, dtype=np.float32)
    for i in range(h):
        for j in range(wd):
            for o in range(cout):
                acc[o] = b[o]
            for dy in range(3):
                ii = i + dy - 1
                if ii < 0 or ii >= h:
                    continue
                for dx in range(3):
                    jj = j + dx - 1
                    if jj < 0 or jj >= wd:
                        continue
                    base = (dy * 3 + dx) * cin
                    for c in range(cin):
                        v = x[ii, jj, c]
                        if v != 0.0:
                            for o in range(cout):
                                acc[o] += v * w2[base + c, o]
            for o in range(cout):
                out[i, j, o] = max(acc[o], np.float32(0.0))
    return out


@numba.njit(cache=True, fastmath=True)
def _maxpool_single(x):
    h, wd, c = x.shape
    out = np.empty((h // 2, wd // 2, c), dtype=np.float32)
    for i in range(h // 2):
        for j in range(wd // 2):
            for k in range(c):
                top = max(x[2 * i, 2 * j, k], x[2 * i, 2 * j + 1, k])
                bottom = max(x[2 * i + 1, 2 * j, k], x[2 * i + 1, 2 * j + 1, k])
                out[i, j, k] = max(top, bottom)
    return out


@numba.njit(cache=True, fastmath=True)
def _dense_single(x, w, b):
    out = b.copy()
    for k in range(x.shape[0]):
        v = x[k]
        if v != 0.0:
            for o in range(out.shape[0]):
                out[o] += v * w[k, o]
    return out


@numba.njit(cache=True, fastmath=True)
def _probabilities_single(obs, c1w, c1b, c2w, c2b, c3w, c3b, d1w, d1b, d2w, d2b):
    s = obs.shape[0]
    r = _maxpool_single(_conv_relu_single(obs.reshape(s, s, 1), c1w, c1b))
    r = _maxpool_single(_conv_relu_single(r, c2w, c2b))
    r = _conv_relu_single(r, c3w, c3b)
    hidden = np.maximum(_dense_single(r.reshape(-1), d1w, d1b), np.float32(0.0))
    z = _dense_single(hidden, d2w, d2b).astype(np.float64)
    z = np.exp(z - z.max())
    return z / z.sum()


def single_kernel_args(weights: PolicyWeights) -> tuple:
    """float32 parameters laid out for :func:`probabilities_single`; prepare once per model."""
    args = []
    for name in PARAM_ORDER:
        a = weights.params[name]
        if a.ndim == 4:
            a = a.reshape(-1, a.shape[-1])
        args.append(np.ascontiguousarray(a, dtype=np.float32))
    return tuple(args)


def probabilities_single(args: tuple, obs: np.ndarray) -> np.ndarray:
    """Action probabilities for one square observation, using prepared ``args``."""
    return _probabilities_single(np.ascontiguousarray(obs, dtype=np.float32), *args)


def forward(weights: PolicyWeights, obs: np.ndarray) -> np.ndarray:
    """Probabilities over (NoChange, ChangeToEmpty, ChangeToSolid) for one observation.

    float32 weights take the compiled path, which agrees with
    :func:`forward_batch` to about 1e-6; other dtypes use the batch code.
    """
    obs = np.asarray(obs)
    crop = weights.crop_size
    if obs.shape not in ((crop, crop), (crop, crop, 1)):
        raise ValueError(f"expected a {crop}x{crop} observation, got {obs.shape}")
    if weights.params["dense2.weight"].dtype != np.float32:
        return forward_batch(weights, obs)[0]
    return probabilities_single(single_kernel_args(weights), obs.reshape(crop, crop))


def loss_and_grads(weights: PolicyWeights, observations: np.ndarray, actions: np.ndarray):
    """Mean categorical cross-entropy over the batch and its gradient per parameter."""
    p = weights.params
    dtype = p["dense2.weight"].dtype
    x = _as_batch(observations, weights.crop_size, dtype)
    actions = np.asarray(actions, dtype=np.int64)
    n = x.shape[0]
    logits, c = _forward(weights, x, keep=True)

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-log_probs[np.arange(n), actions].mean())

    grads = {}
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), actions] -= 1.0
    dlogits /= n
    grads["dense2.weight"] = c["hr"].T @ dlogits
    grads["dense2.bias"] = dlogits.sum(axis=0)
    dh = (dlogits @ p["dense2.weight"].T) * (c["h"] > 0)
    grads["dense1.weight"] = c["flat"].T @ dh
    grads["dense1.bias"] = dh.sum(axis=0)
    dflat = dh @ p["dense1.weight"].T

    da3 = dflat.reshape(c["a3"].shape) * (c["a3"] > 0)
    dm2 = _conv_backward(da3, c["cols3"], p["conv3.weight"], c["m2"].shape, grads, "conv3")
    dr2 = _maxpool_backward(dm2, c["pool2"], c["a2"].shape)
    da2 = dr2 * (c["a2"] > 0)
    dm1 = _conv_backward(da2, c["cols2"], p["conv2.weight"], c["m1"].shape, grads, "conv2")
    dr1 = _maxpool_backward(dm1, c["pool1"], c["a1"].shape)
    da1 = dr1 * (c["a1"] > 0)
    _conv_backward(da1, c["cols1"], p["conv1.weight"], None, grads, "conv1")
    return loss, grads


def _conv_backward(dout, cols, kernel, in_shape, grads, name):
    out_ch = kernel.shape[-1]
    dflat = dout.reshape(-1, out_ch)
    grads[f"{name}.weight"] = (cols.T @ dflat).reshape(kernel.shape)
    grads[f"{name}.bias"] = dflat.sum(axis=0)
    if in_shape is None:
        return None
    return _col2im(dflat @ kernel.reshape(-1, out_ch).T, in_shape)


# --------------------------------------------------------------------------- sampling


def sample_action(dist: np.ndarray, rng: np.random.Generator) -> MutationAction:
    """Categorical draw from a probability vector over the three actions."""
    return MutationAction(int(sample_actions(np.asarray(dist)[None, :], rng)[0]))


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``probs``; consumes one uniform per row."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])[:, None]
    # u < cdf[k] selects the first k whose cumulative mass exceeds u, zero-mass classes are skipped
    choice = (u >= cdf).sum(axis=1)
    return np.minimum(choice, probs.shape[1] - 1)


# --------------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainHyperparams:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ValueError(f"invalid training hyperparameters: {self}")


class Adam:
    def __init__(self, weights: PolicyWeights, lr: float, beta1: float, beta2: float, eps: float) -> None:
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in weights.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.params.items()}
        self.t = 0

    def step(self, weights: PolicyWeights, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = float(self.lr * np.sqrt(1.0 - b2**self.t) / (1.0 - b1**self.t))
        for name in PARAM_ORDER:
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            weights.params[name] -= (scale * m / (np.sqrt(v) + self.eps)).astype(weights.params[name].dtype)


def train(dataset, hyper: TrainHyperparams, crop_size: int | None = None):
    """Fit a freshly initialised network to ``dataset``.

    ``dataset`` needs ``observations`` (N, S, S) and ``actions`` (N,) arrays.
    Returns the trained weights and the mean training loss of each epoch.
    """
    observations = np.asarray(dataset.observations, dtype=np.float32)
    actions = np.asarray(dataset.actions, dtype=np.int64)
    n = len(actions)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    crop = crop_size or observations.shape[-1]
    weights = init_network(hyper.seed, crop)
    optimizer = Adam(weights, hyper.learning_rate, hyper.beta1, hyper.beta2, hyper.epsilon)
    losses = []
    for epoch in range(hyper.epochs):
        order = np.random.default_rng([hyper.seed, epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            batch = order[start : start + hyper.batch_size]
            loss, grads = loss_and_grads(weights, observations[batch], actions[batch])
            optimizer.step(weights, grads)
            total += loss * len(batch)
        losses.append(total / n)
    return weights, losses


# --------------------------------------------------------------------------- persistence

MAGIC = b"MMPW"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHH")


class WeightsFormatError(ValueError):
    """Base class for weight file problems."""


class MalformedWeightsError(WeightsFormatError):
    pass


class WeightsVersionError(WeightsFormatError):
    pass


class WeightsShapeError(WeightsFormatError):
    pass


def save_weights(weights: PolicyWeights, path) -> None:
    """Magic, version, tensor count, shape table, then a little-endian float32 blob."""
    parts = [_HEADER.pack(MAGIC, FORMAT_VERSION, len(PARAM_ORDER))]
    for name in PARAM_ORDER:
        shape = weights[name].shape
        encoded = name.encode("ascii")
        parts.append(struct.pack("<B", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{len(shape)}I", len(shape), *shape))
    for name in PARAM_ORDER:
        parts.append(np.ascontiguousarray(weights[name], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path) -> PolicyWeights:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise MalformedWeightsError(f"{path}: file too short for header")
    magic, version, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise MalformedWeightsError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise WeightsVersionError(f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
    offset = _HEADER.size
    table = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<B", data, offset)
            offset += 1
            name = data[offset : offset + name_len].decode("ascii")
            if len(name) != name_len:
                raise MalformedWeightsError(f"{path}: truncated shape table")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            table.append((name, tuple(shape)))
    except (struct.error, UnicodeDecodeError) as exc:
        raise MalformedWeightsError(f"{path}: truncated or corrupt shape table") from exc

    names = [name for name, _ in table]
    if names != list(PARAM_ORDER):
        raise WeightsShapeError(f"{path}: unexpected tensor names {names}")
    _validate_shapes(dict(table))

    total = sum(int(np.prod(shape)) for _, shape in table)
    if len(data) - offset != 4 * total:
        raise MalformedWeightsError(f"{path}: expected {4 * total} parameter bytes, found {len(data) - offset}")
    blob = np.frombuffer(data, dtype="<f4", offset=offset).astype(np.float32)
    params = {}
    pos = 0
    for name, shape in table:
        size = int(np.prod(shape))
        params[name] = blob[pos : pos + size].reshape(shape).copy()
        pos += size
    return PolicyWeights(params)
