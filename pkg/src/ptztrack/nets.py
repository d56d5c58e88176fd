"""From-scratch neural networks on numpy: the image CNN trunk, the
box-input MLP trunk, categorical policy / value / regression heads, exact
reverse-mode gradients, Adam, and a self-describing binary model file.

Parameters live in one flat array with a recorded per-layer layout, so
optimizers, checkpoints, and gradient checks all see the same ordering.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .scene import make_stream

TRUNK_IMAGE = "image_cnn"
TRUNK_BBOX = "bbox_mlp"
HEADS_ACTOR_CRITIC = "actor_critic"
HEADS_REGRESSION3 = "regression3"
HEADS_REGRESSION4 = "regression4"

IMAGE_INPUT = 120
BBOX_INPUT = 4
FEATURE_DIM = 64

# chunk size for internal forward/backward batching (bounds buffer memory)
CHUNK = 32


def limit_blas_threads(n: int = 1) -> None:
    """Cap the BLAS pool. On small machines the BLAS workers' post-call
    spinning starves the interleaved numpy/numba work, so training paths
    run the matrix products single-threaded."""
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(limits=n, user_api="blas")
    except Exception:
        pass


class ModelFormatError(ValueError):
    """Unreadable or corrupt model file."""


class ArchitectureMismatchError(ValueError):
    """Model file holds a different network than the caller expects."""


@dataclass(frozen=True)
class NetworkSpec:
    trunk: str = TRUNK_IMAGE
    ci_injection: bool = False
    heads: str = HEADS_ACTOR_CRITIC

    def __post_init__(self):
        if self.trunk not in (TRUNK_IMAGE, TRUNK_BBOX):
            raise ValueError(f"unknown trunk {self.trunk}")
        if self.heads not in (HEADS_ACTOR_CRITIC, HEADS_REGRESSION3,
                              HEADS_REGRESSION4):
            raise ValueError(f"unknown heads {self.heads}")


# ---------------------------------------------------------------------------
# Layers

def _same_pad(n: int, k: int, s: int) -> tuple[int, int, int]:
    """TF-style SAME padding: output ceil(n/s), padding split low/high."""
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


class Dense:
    def __init__(self, name: str, nin: int, nout: int):
        self.name = name
        self.nin = nin
        self.nout = nout
        self.shapes = [(f"{name}.w", (nin, nout)), (f"{name}.b", (nout,))]

    def forward(self, x, w, b, cache):
        cache.append(x)
        y = x @ w
        y += b
        return y

    def backward(self, dy, w, b, cache, grads):
        x = cache.pop()
        grads[f"{self.name}.w"] += x.T @ dy
        grads[f"{self.name}.b"] += dy.sum(axis=0)
        return dy @ w.T


class ReLU:
    shapes = ()

    def forward(self, x, cache):
        # x is chain-owned (previous layer's fresh output): clamp in place
        y = np.maximum(x, 0, out=x)
        cache.append(y)
        return y

    def backward(self, dy, cache):
        from ._kernels import relu_backward_inplace
        y = cache.pop()
        if dy.flags.c_contiguous and y.flags.c_contiguous:
            # dy is chain-owned here, so in-place masking is safe
            relu_backward_inplace(dy.reshape(-1), y.reshape(-1))
            return dy
        return dy * (y > 0)


class Conv2D:
    """2-D convolution, SAME padding, via im2col + one matrix product.

    The large intermediates (patch matrix, output, input gradient) come
    from a caller-provided scratch pool keyed per layer, so repeated
    passes reuse pages instead of re-faulting fresh allocations.
    """

    def __init__(self, name: str, k: int, cin: int, cout: int, stride: int):
        self.name = name
        self.k = k
        self.cin = cin
        self.cout = cout
        self.stride = stride
        self.shapes = [(f"{name}.w", (k, k, cin, cout)), (f"{name}.b", (cout,))]

    @staticmethod
    def _buf(pool, key, shape, dtype):
        if pool is None:
            return np.empty(shape, dtype=dtype)
        full = (key, shape, np.dtype(dtype).str)
        arr = pool.get(full)
        if arr is None:
            arr = np.empty(shape, dtype=dtype)
            pool[full] = arr
        return arr

    def _cols(self, x, pool):
        from ._kernels import im2col
        b, hin, win, c = x.shape
        k, s = self.k, self.stride
        oh, pt, _ = _same_pad(hin, k, s)
        ow, pl, _ = _same_pad(win, k, s)
        x = np.ascontiguousarray(x)
        cols = self._buf(pool, f"{self.name}.cols",
                         (b * oh * ow, k * k * c), x.dtype)
        im2col(x, k, s, pt, pl, oh, ow, cols)
        return cols, (b, oh, ow, hin, win, pt, pl)

    def forward(self, x, w, bias, cache, pool=None):
        cols, geom = self._cols(x, pool)
        b, oh, ow = geom[0], geom[1], geom[2]
        y = self._buf(pool, f"{self.name}.y", (b * oh * ow, self.cout),
                      x.dtype)
        np.dot(cols, w.reshape(-1, self.cout), out=y)
        y += bias
        cache.append((cols, geom))
        return y.reshape(b, oh, ow, self.cout)

    def backward(self, dy, w, bias, cache, grads, pool=None):
        from ._kernels import col2im_add
        cols, geom = cache.pop()
        b, oh, ow, hin, win, pt, pl = geom
        k, s, c = self.k, self.stride, self.cin
        dyf = np.ascontiguousarray(dy.reshape(-1, self.cout))
        grads[f"{self.name}.w"] += (cols.T @ dyf).reshape(k, k, c, self.cout)
        grads[f"{self.name}.b"] += dyf.sum(axis=0)
        dcols = self._buf(pool, f"{self.name}.dcols", cols.shape, dy.dtype)
        np.dot(dyf, np.ascontiguousarray(w.reshape(-1, self.cout).T),
               out=dcols)
        dx = self._buf(pool, f"{self.name}.dx", (b, hin, win, c), dy.dtype)
        dx.fill(0)
        col2im_add(dcols, k, s, pt, pl, oh, ow, dx)
        return dx


class Flatten:
    shapes = ()

    def forward(self, x, cache):
        cache.append(x.shape)
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, cache):
        return dy.reshape(cache.pop())


# ---------------------------------------------------------------------------
# Network assembly

HEAD_DIMS = {HEADS_ACTOR_CRITIC: 9, HEADS_REGRESSION3: 3, HEADS_REGRESSION4: 4}


class Network:
    """A trunk (conv stack or MLP) feeding the configured heads. Parameters
    are one flat array; this class holds only the immutable layout."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        extra = 1 if spec.ci_injection else 0
        if spec.trunk == TRUNK_IMAGE:
            self.conv_layers = [
                Conv2D("conv1", 5, 1, 64, 2), ReLU(),
                Conv2D("conv2", 3, 64, 32, 2), ReLU(),
                Conv2D("conv3", 3, 32, 32, 2), ReLU(),
                Conv2D("conv4", 3, 32, 16, 2), ReLU(),
                Flatten(),
            ]
            flat = 8 * 8 * 16
            self.fc_layers = [
                Dense("fc1", flat + extra, FEATURE_DIM), ReLU(),
                Dense("fc2", FEATURE_DIM, FEATURE_DIM), ReLU(),
                Dense("fc3", FEATURE_DIM, FEATURE_DIM), ReLU(),
            ]
        else:
            self.conv_layers = []
            self.fc_layers = [
                Dense("fc1", BBOX_INPUT + extra, FEATURE_DIM), ReLU(),
                Dense("fc2", FEATURE_DIM, FEATURE_DIM), ReLU(),
            ]
        self.heads = {}
        if spec.heads == HEADS_ACTOR_CRITIC:
            self.heads["pi"] = Dense("pi", FEATURE_DIM, 9)
            self.heads["v"] = Dense("v", FEATURE_DIM, 1)
        else:
            self.heads["out"] = Dense("out", FEATURE_DIM,
                                      HEAD_DIMS[spec.heads])

        self.layout = []
        offset = 0
        for layer in self._param_layers():
            for name, shape in layer.shapes:
                size = int(np.prod(shape))
                self.layout.append((name, shape, offset, size))
                offset += size
        self.n_params = offset
        self._index = {name: (shape, off, size)
                       for name, shape, off, size in self.layout}
        # scratch buffers for the conv intermediates; one Network instance
        # therefore serves one thread, and a cached forward must be
        # consumed by backward before the next forward on this instance
        self._pool = {}

    def _param_layers(self):
        for layer in self.conv_layers + self.fc_layers:
            if layer.shapes:
                yield layer
        for head in self.heads.values():
            yield head

    # -- parameter handling --------------------------------------------

    def view(self, params: np.ndarray, name: str) -> np.ndarray:
        shape, off, size = self._index[name]
        return params[off:off + size].reshape(shape)

    def init_params(self, seed: int, dtype=np.float64) -> np.ndarray:
        """Fan-in-scaled uniform weights (sqrt(6/fan_in) limit, suited to
        the rectifier stack), zero biases. The policy and value heads start
        at zero so the initial policy is exactly uniform over actions.
        Values are drawn in float64 then snapped to float32 so checkpoints
        round-trip exactly."""
        rng = make_stream(seed, "init")
        params = np.zeros(self.n_params)
        for name, shape, off, size in self.layout:
            if name.endswith(".b") or name.startswith(("pi.", "v.")):
                continue
            fan_in = int(np.prod(shape[:-1]))
            limit = math.sqrt(6.0 / fan_in)
            params[off:off + size] = rng.uniform(-limit, limit, size=size)
        return params.astype(np.float32).astype(dtype)

    # -- forward / backward ---------------------------------------------

    def forward(self, params: np.ndarray, x: np.ndarray,
                ci: np.ndarray | None = None, cache: list | None = None):
        """One batched pass. x is (B, 120, 120) images in [0, 1] for the
        image trunk or (B, 4) boxes for the MLP trunk; ci is (B,) when the
        spec injects the contextual input. Returns a dict with 'logits'
        (B, 3, 3) and 'value' (B,), or 'out' (B, D) for regression heads.
        """
        spec = self.spec
        if spec.ci_injection == (ci is None):
            raise ValueError("ci must be provided iff the spec injects it")
        record = cache is not None
        c = cache if record else []
        h = np.asarray(x, dtype=params.dtype)
        if spec.trunk == TRUNK_IMAGE:
            if h.ndim != 3 or h.shape[1:] != (IMAGE_INPUT, IMAGE_INPUT):
                raise ValueError(f"image trunk expects (B, {IMAGE_INPUT}, "
                                 f"{IMAGE_INPUT}), got {h.shape}")
            h = h[:, :, :, None]
            for layer in self.conv_layers:
                h = self._fwd(layer, h, params, c)
        else:
            if h.ndim != 2 or h.shape[1] != BBOX_INPUT:
                raise ValueError(f"bbox trunk expects (B, {BBOX_INPUT}), "
                                 f"got {h.shape}")
        if spec.ci_injection:
            h = np.concatenate(
                [h, np.asarray(ci, dtype=params.dtype)[:, None]], axis=1)
        for layer in self.fc_layers:
            h = self._fwd(layer, h, params, c)
        out = {}
        if spec.heads == HEADS_ACTOR_CRITIC:
            pi = self._fwd(self.heads["pi"], h, params, c)
            v = self._fwd(self.heads["v"], h, params, c)
            out["logits"] = pi.reshape(-1, 3, 3)
            out["value"] = v[:, 0]
        else:
            out["out"] = self._fwd(self.heads["out"], h, params, c)
        if record:
            c.append(h.shape)  # feature shape, for the backward head merge
        return out

    def _fwd(self, layer, h, params, cache):
        if isinstance(layer, Conv2D):
            w = self.view(params, layer.shapes[0][0])
            b = self.view(params, layer.shapes[1][0])
            return layer.forward(h, w, b, cache, self._pool)
        if isinstance(layer, Dense):
            w = self.view(params, layer.shapes[0][0])
            b = self.view(params, layer.shapes[1][0])
            return layer.forward(h, w, b, cache)
        return layer.forward(h, cache)

    def backward(self, params: np.ndarray, cache: list,
                 dout: dict) -> np.ndarray:
        """Exact gradients for every parameter given output gradients
        ('logits'/'value' or 'out', matching forward's output)."""
        grads_flat = np.zeros_like(params)
        grads = {name: self.view(grads_flat, name) for name, *_ in self.layout}
        feat_shape = cache.pop()
        spec = self.spec
        if spec.heads == HEADS_ACTOR_CRITIC:
            dv = np.asarray(dout["value"], dtype=params.dtype)[:, None]
            dpi = np.asarray(dout["logits"], dtype=params.dtype).reshape(-1, 9)
            dh = self._bwd(self.heads["v"], dv, params, cache, grads)
            dh = dh + self._bwd(self.heads["pi"], dpi, params, cache, grads)
        else:
            do = np.asarray(dout["out"], dtype=params.dtype)
            dh = self._bwd(self.heads["out"], do, params, cache, grads)
        assert dh.shape == feat_shape
        for layer in reversed(self.fc_layers):
            dh = self._bwd(layer, dh, params, cache, grads)
        if spec.ci_injection:
            dh = dh[:, :-1]
        if spec.trunk == TRUNK_IMAGE:
            for layer in reversed(self.conv_layers):
                dh = self._bwd(layer, dh, params, cache, grads)
        return grads_flat

    def _bwd(self, layer, dy, params, cache, grads):
        if isinstance(layer, Conv2D):
            w = self.view(params, layer.shapes[0][0])
            b = self.view(params, layer.shapes[1][0])
            return layer.backward(dy, w, b, cache, grads, self._pool)
        if isinstance(layer, Dense):
            w = self.view(params, layer.shapes[0][0])
            b = self.view(params, layer.shapes[1][0])
            return layer.backward(dy, w, b, cache, grads)
        return layer.backward(dy, cache)


def param_count(spec: NetworkSpec) -> int:
    return Network(spec).n_params


# ---------------------------------------------------------------------------
# Softmax heads

def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def action_logprob_entropy(logits: np.ndarray, action_idx) -> tuple[float, float]:
    """Joint log-probability and entropy of one action triple under the
    three independent 3-way heads. logits is (3, 3); action_idx is the
    (pan, tilt, zoom) index triple."""
    lp, ent = batch_logprob_entropy(logits[None], np.asarray(action_idx)[None])
    return float(lp[0]), float(ent[0])


def batch_logprob_entropy(logits: np.ndarray, actions: np.ndarray):
    """(B, 3, 3) logits and (B, 3) action indices -> (logprob (B,), entropy (B,))."""
    logp = log_softmax(logits, axis=2)
    p = np.exp(logp)
    b = np.arange(logits.shape[0])[:, None]
    h = np.arange(3)[None, :]
    chosen = logp[b, h, actions]
    entropy = -(p * logp).sum(axis=2)
    return chosen.sum(axis=1), entropy.sum(axis=1)


def sample_actions(logits: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sample one index per head; (B, 3, 3) logits -> (B, 3) indices."""
    p = softmax(logits, axis=2)
    cdf = np.cumsum(p, axis=2)
    u = rng.random(logits.shape[:2])
    return (u[:, :, None] > cdf).sum(axis=2).astype(np.int64)


def greedy_actions(logits: np.ndarray) -> np.ndarray:
    return logits.argmax(axis=2)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params))


def adam_step(params: np.ndarray, grads: np.ndarray, opt: AdamState,
              lr: float) -> np.ndarray:
    """Bias-corrected Adam update, in place; returns params."""
    if params.shape != grads.shape:
        raise ValueError("params/grads length mismatch")
    opt.t += 1
    opt.m += (1.0 - opt.beta1) * (grads - opt.m)
    opt.v += (1.0 - opt.beta2) * (grads * grads - opt.v)
    mhat = opt.m / (1.0 - opt.beta1 ** opt.t)
    vhat = opt.v / (1.0 - opt.beta2 ** opt.t)
    params -= (lr * mhat / (np.sqrt(vhat) + opt.eps)).astype(params.dtype)
    return params


def clip_grad_norm(grads: np.ndarray, max_norm: float) -> float:
    """Scale grads in place to the given global L2 norm; returns the norm."""
    norm = float(np.sqrt(float(grads @ grads)))
    if norm > max_norm and norm > 0:
        grads *= max_norm / norm
    return norm


# ---------------------------------------------------------------------------
# Model file

MODEL_MAGIC = b"EAGL"
MODEL_VERSION = 1
_TRUNK_CODES = {TRUNK_IMAGE: 0, TRUNK_BBOX: 1}
_HEAD_CODES = {HEADS_ACTOR_CRITIC: 0, HEADS_REGRESSION3: 1, HEADS_REGRESSION4: 2}
_TRUNK_NAMES = {v: k for k, v in _TRUNK_CODES.items()}
_HEAD_NAMES = {v: k for k, v in _HEAD_CODES.items()}


def save_params(spec: NetworkSpec, params: np.ndarray, path: str) -> None:
    """Self-describing little-endian model file; weights as float32."""
    from .ioutil import atomic_write_bytes
    expected = param_count(spec)
    if params.size != expected:
        raise ValueError(f"expected {expected} parameters, got {params.size}")
    header = MODEL_MAGIC + struct.pack(
        "<HBBBQ", MODEL_VERSION, _TRUNK_CODES[spec.trunk],
        1 if spec.ci_injection else 0, _HEAD_CODES[spec.heads], params.size)
    atomic_write_bytes(path, header + params.astype("<f4").tobytes())


def load_params(path: str, expect_spec: NetworkSpec | None = None,
                dtype=np.float64) -> tuple[NetworkSpec, np.ndarray]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise ModelFormatError(f"cannot read model file: {e}") from e
    if len(data) < 17 or data[:4] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    version, trunk_code, ci_flag, head_code, count = struct.unpack(
        "<HBBBQ", data[4:17])
    if version != MODEL_VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")
    if trunk_code not in _TRUNK_NAMES or head_code not in _HEAD_NAMES:
        raise ModelFormatError(f"{path}: unknown architecture codes")
    spec = NetworkSpec(trunk=_TRUNK_NAMES[trunk_code],
                       ci_injection=bool(ci_flag),
                       heads=_HEAD_NAMES[head_code])
    body = data[17:]
    if len(body) != count * 4 or count != param_count(spec):
        raise ModelFormatError(f"{path}: truncated or corrupt model file")
    if expect_spec is not None and spec != expect_spec:
        raise ArchitectureMismatchError(
            f"{path}: holds {spec}, expected {expect_spec}")
    params = np.frombuffer(body, dtype="<f4").astype(dtype)
    return spec, params


def param_count_report(spec: NetworkSpec) -> str:
    """Per-layer parameter accounting plus the delta against the nominal
    79k budget usually quoted for this architecture."""
    net = Network(spec)
    lines = [f"{name}: {size} {shape}" for name, shape, _, size in net.layout]
    total = net.n_params
    lines.append(f"total: {total}")
    lines.append(f"nominal-79k-delta: {total - 79000:+d}")
    return "\n".join(lines)
